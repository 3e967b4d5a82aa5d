#pragma once

#include <filesystem>

#include "masnet/tensor.hpp"

namespace masnet {

// Co-registered RGB pair, values in [0,1], 3xHxW.
struct ImagePair {
    Tensor image_a, image_b;
    std::string name;
};

// Per-pixel binary change map; 0 = non-change, 1 = change.
struct ChangeMask {
    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> v;

    std::uint8_t at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
};

struct Sample {
    ImagePair pair;
    ChangeMask mask;
};

// Synthetic scene config: persistent shapes appear in both images; change
// shapes appear in exactly one; photometric jitter and pixel noise stand in
// for seasonal and illumination change (pseudo-change).
struct SynthConfig {
    std::size_t size = 64;
    std::size_t persistent_shapes = 6;
    std::size_t change_shapes = 3;
    float jitter = 0.12f;   // global gain/bias amplitude, [0,1)
    float noise = 0.02f;    // per-pixel amplitude, [0,1)
    std::uint64_t seed = 1;

    void validate() const {
        if (size < 8) throw std::invalid_argument("synth: size too small");
        if (jitter < 0 || jitter >= 1 || noise < 0 || noise >= 1)
            throw std::invalid_argument("synth: amplitudes must be in [0,1)");
    }
};

std::pair<ImagePair, ChangeMask> generate_pair(const SynthConfig& cfg, Rng& rng, const std::string& name);

// Binary netpbm codecs; 8-bit quantization round(v*255), masks stored {0,255}.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const ChangeMask& mask);
void write_pgm_gray(const std::filesystem::path& path, std::size_t h, std::size_t w,
                    const std::vector<std::uint8_t>& bytes);
ChangeMask read_pgm(const std::filesystem::path& path);

// Directory layout A/ B/ label/ with matching stems; pairs sorted by name,
// mask pixels > 127 read as change.
std::vector<Sample> load_dataset(const std::filesystem::path& dir);
void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples);

struct AugmentPolicy {
    bool random_scale = true;    // log-uniform in [0.5, 2.0], nearest-neighbor
    bool random_crop = true;
    bool flip = true;
    bool rotate = true;          // k * 90 degrees
    bool switch_pair = true;
    std::size_t crop_size = 64;
};

// One geometric pipeline applied identically to both images and the mask;
// the pair switch swaps the images and leaves the mask unchanged.
Sample augment(const Sample& s, Rng& rng, const AugmentPolicy& policy);

// Individual transforms used by augment.
Sample flip_horizontal(const Sample& s);
Sample rotate90(const Sample& s);
Sample switch_pair(const Sample& s);
Sample scale_sample(const Sample& s, std::size_t nh, std::size_t nw);
Sample crop_sample(const Sample& s, long oy, long ox, std::size_t ch, std::size_t cw);

// Contiguous blocks over the sorted names; sizes differ by at most one, with
// the first (n % k) folds one larger.
std::vector<std::vector<std::string>> kfold_split(std::vector<std::string> names, std::size_t k);

}  // namespace masnet
