#include "masnet/eval.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace masnet {

double iou(const ConfusionCounts& c) {
    const std::uint64_t denom = c.tp + c.fn + c.fp;
    return denom == 0 ? 0.0 : double(c.tp) / double(denom);
}

double f1(const ConfusionCounts& c) {
    const std::uint64_t denom = 2 * c.tp + c.fn + c.fp;
    return denom == 0 ? 0.0 : double(2 * c.tp) / double(denom);
}

ConfusionCounts confusion(const ChangeMask& pred, const ChangeMask& truth) {
    if (pred.h != truth.h || pred.w != truth.w) throw std::invalid_argument("confusion: shape mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const bool p = pred.v[i] != 0, t = truth.v[i] != 0;
        if (p && t) ++c.tp;
        else if (p && !t) ++c.fp;
        else if (!p && t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

ChangeMask predict(Model& model, const ImagePair& pair) {
    NoGradT<float> off;
    auto res = model.forward(pair.image_a, pair.image_b);
    const std::size_t h = res.logits.shape()[1], w = res.logits.shape()[2];
    ChangeMask out{h, w, std::vector<std::uint8_t>(h * w)};
    const float* p = res.logits.data();
    for (std::size_t i = 0; i < h * w; ++i) out.v[i] = p[h * w + i] > p[i] ? 1 : 0;
    return out;
}

MetricReport evaluate(Model& model, const std::vector<Sample>& dataset) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    MetricReport rep;
    for (const Sample& s : dataset) rep.counts += confusion(predict(model, s.pair), s.mask);
    rep.iou = iou(rep.counts);
    rep.f1 = f1(rep.counts);
    return rep;
}

MetricReport evaluate(const std::filesystem::path& checkpoint, const std::vector<Sample>& dataset) {
    Model model = load_checkpoint(checkpoint);
    return evaluate(model, dataset);
}

void write_report(const std::filesystem::path& path, const MetricReport& r) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("report: cannot write " + path.string());
    os << std::setprecision(10);
    os << "iou = " << r.iou << "\n";
    os << "f1 = " << r.f1 << "\n";
    os << "tp = " << r.counts.tp << "\n";
    os << "fp = " << r.counts.fp << "\n";
    os << "fn = " << r.counts.fn << "\n";
    os << "tn = " << r.counts.tn << "\n";
}

CrossvalResult crossval(const ModelConfig& model_cfg, const std::vector<Sample>& dataset,
                        std::size_t k, const TrainConfig& train_cfg,
                        const std::filesystem::path& out_dir) {
    std::vector<std::string> names;
    for (const Sample& s : dataset) names.push_back(s.pair.name);
    const auto folds = kfold_split(names, k);

    CrossvalResult result;
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<Sample> train_set, test_set;
        for (const Sample& s : dataset) {
            const bool held_out =
                std::find(folds[f].begin(), folds[f].end(), s.pair.name) != folds[f].end();
            (held_out ? test_set : train_set).push_back(s);
        }
        const auto fold_dir = out_dir / ("fold" + std::to_string(f + 1));
        TrainResult tr = train(model_cfg, train_set, test_set, train_cfg, fold_dir);
        MetricReport rep = evaluate(tr.best_checkpoint, test_set);
        result.fold_iou.push_back(rep.iou);
        result.fold_f1.push_back(rep.f1);
    }
    for (double v : result.fold_iou) result.mean_iou += v;
    for (double v : result.fold_f1) result.mean_f1 += v;
    result.mean_iou /= double(k);
    result.mean_f1 /= double(k);
    return result;
}

namespace {

// min-max normalize to [0,255]; a constant map writes 0
std::vector<std::uint8_t> normalize_bytes(const std::vector<float>& v) {
    float lo = v[0], hi = v[0];
    for (float x : v) { lo = std::min(lo, x); hi = std::max(hi, x); }
    std::vector<std::uint8_t> out(v.size(), 0);
    if (hi > lo)
        for (std::size_t i = 0; i < v.size(); ++i)
            out[i] = std::uint8_t(std::lround((v[i] - lo) / (hi - lo) * 255.0f));
    return out;
}

// Attention mass received per value position: column means of the per-group
// softmax matrices, de-tokenized onto the spatial grid and averaged over
// channels.
std::vector<float> weight_mass_map(const std::vector<Tensor>& weights, const TokenLayout& lay,
                                   std::size_t h, std::size_t w) {
    const std::size_t channels = lay.map_shape[0];
    std::vector<float> chan(numel(lay.map_shape), 0.0f);
    for (std::size_t g = 0; g < weights.size(); ++g) {
        const Tensor& wm = weights[g];
        const std::size_t rows = wm.shape()[0], cols = wm.shape()[1];
        for (std::size_t j = 0; j < cols; ++j) {
            float s = 0.0f;
            for (std::size_t i = 0; i < rows; ++i) s += wm.data()[i * cols + j];
            s /= float(rows);
            // token j of group g occupies lay.width consecutive map slots
            for (std::size_t e = 0; e < lay.width; ++e) chan[(*lay.maps)[g][j * lay.width + e]] = s;
        }
    }
    std::vector<float> out(h * w, 0.0f);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < h * w; ++i) out[i] += chan[c * h * w + i] / float(channels);
    return out;
}

std::vector<float> channel_mean(const Tensor& map) {
    const std::size_t c = map.shape()[0], hw = map.shape()[1] * map.shape()[2];
    std::vector<float> out(hw, 0.0f);
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t i = 0; i < hw; ++i) out[i] += map.data()[ci * hw + i] / float(c);
    return out;
}

}  // namespace

std::vector<std::filesystem::path> export_attention_maps(const std::filesystem::path& checkpoint,
                                                         const ImagePair& pair,
                                                         const std::filesystem::path& out_dir) {
    Model model = load_checkpoint(checkpoint);
    if (model.config().variant != Variant::MASNet)
        throw std::runtime_error("attention maps: checkpoint is not a MASNet variant");
    std::filesystem::create_directories(out_dir);

    NoGradT<float> off;
    auto res = model.forward(pair.image_a, pair.image_b, /*keep_acts=*/true);

    std::vector<std::filesystem::path> files;
    for (std::size_t i = 0; i < res.acts.size(); ++i) {
        const auto& acts = res.acts[i];
        const std::size_t stage = res.act_stages[i];
        const std::size_t h = acts.value_term1.shape()[1], w = acts.value_term1.shape()[2];
        const std::vector<Tensor>* weights[2] = {&acts.weights1, &acts.weights2};
        const Tensor* values[2] = {&acts.value_term1, &acts.value_term2};
        for (int branch = 0; branch < 2; ++branch) {
            const std::string stem = "stage" + std::to_string(stage + 1) + "_branch" + std::to_string(branch + 1);
            auto wpath = out_dir / (stem + "_weights.pgm");
            write_pgm_gray(wpath, h, w, normalize_bytes(weight_mass_map(*weights[branch], acts.layout, h, w)));
            files.push_back(wpath);
            auto vpath = out_dir / (stem + "_value.pgm");
            write_pgm_gray(vpath, h, w, normalize_bytes(channel_mean(*values[branch])));
            files.push_back(vpath);
        }
    }
    return files;
}

CompareResult compare_variants(const std::vector<std::pair<std::string, ModelConfig>>& variants,
                               const std::vector<Sample>& train_set,
                               const std::vector<Sample>& test_set,
                               const TrainConfig& train_cfg, std::size_t n_seeds,
                               const std::filesystem::path& out_dir) {
    if (n_seeds == 0) throw std::invalid_argument("compare: need at least one seed");
    CompareResult result;
    for (const auto& [name, cfg] : variants) {
        VariantRow row;
        row.name = name;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            TrainConfig tc = train_cfg;
            tc.seed = train_cfg.seed + s;
            const auto run_dir = out_dir / (name + "_seed" + std::to_string(tc.seed));
            TrainResult tr = train(cfg, train_set, test_set, tc, run_dir);
            MetricReport rep = evaluate(tr.best_checkpoint, test_set);
            row.seed_iou.push_back(rep.iou);
        }
        double lo = row.seed_iou[0], hi = row.seed_iou[0];
        for (double v : row.seed_iou) {
            row.mean += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        row.mean /= double(row.seed_iou.size());
        row.spread = hi - lo;
        result.rows.push_back(std::move(row));
    }
    double vanilla = 0.0, masnet = 0.0;
    for (const auto& row : result.rows) {
        if (row.name == "vanilla") vanilla = row.mean;
        if (row.name == "masnet") masnet = row.mean;
    }
    result.masnet_minus_vanilla = masnet - vanilla;
    return result;
}

void write_compare_report(const std::filesystem::path& path, const CompareResult& r) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("compare: cannot write " + path.string());
    os << std::setprecision(6) << std::fixed;
    os << "# variant  mean_iou  spread  per-seed\n";
    for (const auto& row : r.rows) {
        os << row.name << "\t" << row.mean << "\t" << row.spread << "\t";
        for (std::size_t i = 0; i < row.seed_iou.size(); ++i) os << (i ? "," : "") << row.seed_iou[i];
        os << "\n";
    }
    os << "masnet_minus_vanilla = " << r.masnet_minus_vanilla << "\n";
}

}  // namespace masnet
