#include "masnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace masnet {

namespace {

struct Shape2d {
    bool disc = false;
    // rectangle: [x0,x1) x [y0,y1); disc: center (cx,cy), radius r
    long x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double cx = 0, cy = 0, r = 0;
    float color[3] = {0, 0, 0};

    bool covers(std::size_t x, std::size_t y) const {
        if (!disc) return long(x) >= x0 && long(x) < x1 && long(y) >= y0 && long(y) < y1;
        const double dx = double(x) + 0.5 - cx, dy = double(y) + 0.5 - cy;
        return dx * dx + dy * dy <= r * r;
    }
};

Shape2d random_shape(std::size_t canvas, Rng& rng, float bg_mean) {
    Shape2d s;
    s.disc = rng.coin();
    const double lo = double(canvas) * 0.15, hi = double(canvas) * 0.4;
    if (s.disc) {
        s.r = rng.uniform(lo, hi) * 0.5;
        s.cx = rng.uniform(0, double(canvas));
        s.cy = rng.uniform(0, double(canvas));
    } else {
        const long w = long(rng.uniform(lo, hi)), h = long(rng.uniform(lo, hi));
        s.x0 = long(rng.uniform(-0.2 * double(canvas), double(canvas) * 1.0));
        s.y0 = long(rng.uniform(-0.2 * double(canvas), double(canvas) * 1.0));
        s.x1 = s.x0 + w;
        s.y1 = s.y0 + h;
    }
    // high contrast against the background so change is in principle learnable
    const float base = bg_mean > 0.5f ? float(rng.uniform(0.0, 0.25)) : float(rng.uniform(0.75, 1.0));
    for (int c = 0; c < 3; ++c)
        s.color[c] = std::clamp(base + float(rng.uniform(-0.08, 0.08)), 0.0f, 1.0f);
    return s;
}

void paint(Tensor& img, const Shape2d& s, std::size_t size) {
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            if (s.covers(x, y))
                for (std::size_t c = 0; c < 3; ++c) img.data()[(c * size + y) * size + x] = s.color[c];
}

std::uint8_t quantize(float v) {
    return std::uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// netpbm header token, skipping whitespace and # comments
std::size_t read_token(std::istream& is, const std::string& what) {
    for (;;) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    long v = -1;
    is >> v;
    if (!is || v < 0) throw std::runtime_error("netpbm: malformed header (" + what + ")");
    return std::size_t(v);
}

}  // namespace

std::pair<ImagePair, ChangeMask> generate_pair(const SynthConfig& cfg, Rng& rng, const std::string& name) {
    cfg.validate();
    const std::size_t n = cfg.size;

    // background: base color plus a linear gradient
    float base[3], gx[3], gy[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = float(rng.uniform(0.35, 0.75));
        gx[c] = float(rng.uniform(-0.15, 0.15));
        gy[c] = float(rng.uniform(-0.15, 0.15));
    }
    Tensor a = Tensor::zeros({3, n, n});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x)
                a.data()[(c * n + y) * n + x] =
                    std::clamp(base[c] + gx[c] * float(x) / float(n) + gy[c] * float(y) / float(n), 0.0f, 1.0f);
    const float bg_mean = (base[0] + base[1] + base[2]) / 3.0f;

    for (std::size_t i = 0; i < cfg.persistent_shapes; ++i) paint(a, random_shape(n, rng, bg_mean), n);

    // image b: same scene under global photometric jitter plus pixel noise
    float gain[3], bias[3];
    for (int c = 0; c < 3; ++c) {
        gain[c] = 1.0f + float(rng.uniform(-cfg.jitter, cfg.jitter));
        bias[c] = float(rng.uniform(-cfg.jitter, cfg.jitter)) * 0.5f;
    }
    Tensor b = Tensor::zeros({3, n, n});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n * n; ++i) {
            float v = a.data()[c * n * n + i] * gain[c] + bias[c];
            v += float(rng.uniform(-cfg.noise, cfg.noise));
            b.data()[c * n * n + i] = std::clamp(v, 0.0f, 1.0f);
        }

    // change shapes land in exactly one image; the mask is their footprint
    ChangeMask mask{n, n, std::vector<std::uint8_t>(n * n, 0)};
    for (std::size_t i = 0; i < cfg.change_shapes; ++i) {
        Shape2d s = random_shape(n, rng, bg_mean);
        const bool added = rng.coin();  // added to b, or present only in a (removed)
        paint(added ? b : a, s, n);
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x)
                if (s.covers(x, y)) mask.v[y * n + x] = 1;
    }

    return {ImagePair{std::move(a), std::move(b), name}, std::move(mask)};
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.ndim() != 3 || image.shape()[0] != 3) throw std::invalid_argument("write_ppm: expects 3xHxW");
    const std::size_t h = image.shape()[1], w = image.shape()[2];
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_ppm: cannot open " + path.string());
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<std::uint8_t> row(w * 3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) row[x * 3 + c] = quantize(image.data()[(c * h + y) * w + x]);
        os.write(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
    }
    if (!os) throw std::runtime_error("write_ppm: write failed for " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_ppm: cannot open " + path.string());
    char m0 = 0, m1 = 0;
    is.get(m0).get(m1);
    if (m0 != 'P' || m1 != '6') throw std::runtime_error("read_ppm: not a P6 file: " + path.string());
    const std::size_t w = read_token(is, "width"), h = read_token(is, "height"), maxval = read_token(is, "maxval");
    if (maxval != 255) throw std::runtime_error("read_ppm: only maxval 255 supported");
    is.get();  // single whitespace after maxval
    std::vector<std::uint8_t> buf(w * h * 3);
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!is) throw std::runtime_error("read_ppm: truncated pixel data in " + path.string());
    Tensor t = Tensor::zeros({3, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                t.data()[(c * h + y) * w + x] = float(buf[(y * w + x) * 3 + c]) / 255.0f;
    return t;
}

void write_pgm_gray(const std::filesystem::path& path, std::size_t h, std::size_t w,
                    const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() != h * w) throw std::invalid_argument("write_pgm: extent mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + path.string());
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!os) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

void write_pgm(const std::filesystem::path& path, const ChangeMask& mask) {
    std::vector<std::uint8_t> bytes(mask.v.size());
    for (std::size_t i = 0; i < mask.v.size(); ++i) bytes[i] = mask.v[i] ? 255 : 0;
    write_pgm_gray(path, mask.h, mask.w, bytes);
}

ChangeMask read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_pgm: cannot open " + path.string());
    char m0 = 0, m1 = 0;
    is.get(m0).get(m1);
    if (m0 != 'P' || m1 != '5') throw std::runtime_error("read_pgm: not a P5 file: " + path.string());
    const std::size_t w = read_token(is, "width"), h = read_token(is, "height"), maxval = read_token(is, "maxval");
    if (maxval != 255) throw std::runtime_error("read_pgm: only maxval 255 supported");
    is.get();
    std::vector<std::uint8_t> buf(w * h);
    is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (!is) throw std::runtime_error("read_pgm: truncated pixel data in " + path.string());
    ChangeMask mask{h, w, std::vector<std::uint8_t>(w * h)};
    for (std::size_t i = 0; i < buf.size(); ++i) mask.v[i] = buf[i] > 127 ? 1 : 0;
    return mask;
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    const fs::path da = dir / "A", db = dir / "B", dl = dir / "label";
    for (const fs::path& p : {da, db, dl})
        if (!fs::is_directory(p)) throw std::runtime_error("load_dataset: missing directory " + p.string());
    std::map<std::string, fs::path> as;  // sorted by stem
    for (const auto& e : fs::directory_iterator(da))
        if (e.is_regular_file()) as[e.path().stem().string()] = e.path();
    std::vector<Sample> out;
    for (const auto& [stem, pa] : as) {
        const fs::path pb = db / pa.filename();
        const fs::path pl = dl / (stem + ".pgm");
        if (!fs::exists(pb)) throw std::runtime_error("load_dataset: missing counterpart " + pb.string());
        if (!fs::exists(pl)) throw std::runtime_error("load_dataset: missing label " + pl.string());
        Sample s;
        s.pair.image_a = read_ppm(pa);
        s.pair.image_b = read_ppm(pb);
        s.pair.name = stem;
        s.mask = read_pgm(pl);
        if (s.pair.image_a.shape() != s.pair.image_b.shape() ||
            s.mask.h != s.pair.image_a.shape()[1] || s.mask.w != s.pair.image_a.shape()[2])
            throw std::runtime_error("load_dataset: extent mismatch for " + stem);
        out.push_back(std::move(s));
    }
    return out;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "A");
    fs::create_directories(dir / "B");
    fs::create_directories(dir / "label");
    for (const Sample& s : samples) {
        write_ppm(dir / "A" / (s.pair.name + ".ppm"), s.pair.image_a);
        write_ppm(dir / "B" / (s.pair.name + ".ppm"), s.pair.image_b);
        write_pgm(dir / "label" / (s.pair.name + ".pgm"), s.mask);
    }
}

namespace {

// shared index transforms so images and mask always move together

Tensor scale_nearest(const Tensor& img, std::size_t nh, std::size_t nw) {
    const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
    Tensor out = Tensor::zeros({c, nh, nw});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < nh; ++y)
            for (std::size_t x = 0; x < nw; ++x) {
                std::size_t sy = std::min(h - 1, y * h / nh), sx = std::min(w - 1, x * w / nw);
                out.data()[(ci * nh + y) * nw + x] = img.data()[(ci * h + sy) * w + sx];
            }
    return out;
}

ChangeMask scale_nearest(const ChangeMask& m, std::size_t nh, std::size_t nw) {
    ChangeMask out{nh, nw, std::vector<std::uint8_t>(nh * nw)};
    for (std::size_t y = 0; y < nh; ++y)
        for (std::size_t x = 0; x < nw; ++x)
            out.v[y * nw + x] = m.v[std::min(m.h - 1, y * m.h / nh) * m.w + std::min(m.w - 1, x * m.w / nw)];
    return out;
}

// crop with zero padding when the window exceeds the source
template <typename Get, typename Set>
void crop_into(std::size_t sh, std::size_t sw, std::size_t ch, std::size_t cw, long oy, long ox,
               Get get, Set set) {
    for (std::size_t y = 0; y < ch; ++y)
        for (std::size_t x = 0; x < cw; ++x) {
            const long sy = oy + long(y), sx = ox + long(x);
            const bool in = sy >= 0 && sy < long(sh) && sx >= 0 && sx < long(sw);
            set(y, x, in ? get(std::size_t(sy), std::size_t(sx)) : 0.0f);
        }
}

Tensor flip_h(const Tensor& img) {
    const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
    Tensor out = Tensor::zeros({c, h, w});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out.data()[(ci * h + y) * w + x] = img.data()[(ci * h + y) * w + (w - 1 - x)];
    return out;
}

ChangeMask flip_h(const ChangeMask& m) {
    ChangeMask out{m.h, m.w, std::vector<std::uint8_t>(m.v.size())};
    for (std::size_t y = 0; y < m.h; ++y)
        for (std::size_t x = 0; x < m.w; ++x) out.v[y * m.w + x] = m.v[y * m.w + (m.w - 1 - x)];
    return out;
}

Tensor rot90(const Tensor& img) {  // counter-clockwise
    const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
    Tensor out = Tensor::zeros({c, w, h});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out.data()[(ci * w + (w - 1 - x)) * h + y] = img.data()[(ci * h + y) * w + x];
    return out;
}

ChangeMask rot90(const ChangeMask& m) {
    ChangeMask out{m.w, m.h, std::vector<std::uint8_t>(m.v.size())};
    for (std::size_t y = 0; y < m.h; ++y)
        for (std::size_t x = 0; x < m.w; ++x) out.v[(m.w - 1 - x) * m.h + y] = m.v[y * m.w + x];
    return out;
}

}  // namespace

Sample flip_horizontal(const Sample& s) {
    return {{flip_h(s.pair.image_a), flip_h(s.pair.image_b), s.pair.name}, flip_h(s.mask)};
}

Sample rotate90(const Sample& s) {
    return {{rot90(s.pair.image_a), rot90(s.pair.image_b), s.pair.name}, rot90(s.mask)};
}

Sample switch_pair(const Sample& s) {
    return {{s.pair.image_b, s.pair.image_a, s.pair.name}, s.mask};
}

Sample scale_sample(const Sample& s, std::size_t nh, std::size_t nw) {
    return {{scale_nearest(s.pair.image_a, nh, nw), scale_nearest(s.pair.image_b, nh, nw), s.pair.name},
            scale_nearest(s.mask, nh, nw)};
}

Sample crop_sample(const Sample& s, long oy, long ox, std::size_t ch, std::size_t cw) {
    const std::size_t sh = s.mask.h, sw = s.mask.w;
    Sample out;
    out.pair.name = s.pair.name;
    const Tensor* srcs[2] = {&s.pair.image_a, &s.pair.image_b};
    Tensor* dsts[2] = {&out.pair.image_a, &out.pair.image_b};
    for (int i = 0; i < 2; ++i) {
        Tensor dst = Tensor::zeros({3, ch, cw});
        for (std::size_t c = 0; c < 3; ++c)
            crop_into(sh, sw, ch, cw, oy, ox,
                      [&](std::size_t y, std::size_t x) { return srcs[i]->data()[(c * sh + y) * sw + x]; },
                      [&](std::size_t y, std::size_t x, float v) { dst.data()[(c * ch + y) * cw + x] = v; });
        *dsts[i] = dst;
    }
    out.mask = ChangeMask{ch, cw, std::vector<std::uint8_t>(ch * cw)};
    crop_into(sh, sw, ch, cw, oy, ox,
              [&](std::size_t y, std::size_t x) { return float(s.mask.v[y * sw + x]); },
              [&](std::size_t y, std::size_t x, float v) { out.mask.v[y * cw + x] = std::uint8_t(v); });
    return out;
}

Sample augment(const Sample& s, Rng& rng, const AugmentPolicy& policy) {
    Sample out = s;

    if (policy.random_scale) {
        // log-uniform in [0.5, 2.0]
        const double f = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
        const std::size_t nh = std::max<std::size_t>(1, std::size_t(std::lround(double(out.mask.h) * f)));
        const std::size_t nw = std::max<std::size_t>(1, std::size_t(std::lround(double(out.mask.w) * f)));
        out = scale_sample(out, nh, nw);
    }

    if (policy.random_crop) {
        const std::size_t ch = policy.crop_size, cw = policy.crop_size;
        const std::size_t sh = out.mask.h, sw = out.mask.w;
        const long oy = sh > ch ? long(rng.uniform_index(sh - ch + 1)) : -long((ch - sh) / 2);
        const long ox = sw > cw ? long(rng.uniform_index(sw - cw + 1)) : -long((cw - sw) / 2);
        out = crop_sample(out, oy, ox, ch, cw);
    }

    if (policy.flip && rng.coin()) out = flip_horizontal(out);

    if (policy.rotate) {
        const std::size_t k = rng.uniform_index(4);
        for (std::size_t i = 0; i < k; ++i) out = rotate90(out);
    }

    if (policy.switch_pair && rng.coin()) out = switch_pair(out);

    return out;
}

std::vector<std::vector<std::string>> kfold_split(std::vector<std::string> names, std::size_t k) {
    if (k < 2 || k > names.size()) throw std::invalid_argument("kfold: k out of range");
    std::sort(names.begin(), names.end());
    const std::size_t n = names.size(), q = n / k, r = n % k;
    std::vector<std::vector<std::string>> folds(k);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t len = q + (f < r ? 1 : 0);
        folds[f].assign(names.begin() + long(pos), names.begin() + long(pos + len));
        pos += len;
    }
    return folds;
}

}  // namespace masnet
