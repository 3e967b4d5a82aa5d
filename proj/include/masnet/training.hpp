#pragma once

#include <filesystem>

#include "masnet/data.hpp"
#include "masnet/model.hpp"

namespace masnet {

struct TrainConfig {
    double base_lr = 6e-5;
    double weight_decay = 0.01;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    std::size_t warmup_iters = 150;
    std::size_t max_iters = 2000;
    double poly_power = 1.0;
    std::size_t batch_size = 4;
    std::size_t crop_size = 64;
    std::size_t checkpoint_every = 500;
    std::uint64_t seed = 1;

    void validate() const {
        if (warmup_iters >= max_iters) throw std::invalid_argument("train config: warmup must precede max_iters");
        if (base_lr <= 0 || batch_size == 0 || checkpoint_every == 0)
            throw std::invalid_argument("train config: rates and counts must be positive");
    }
};

// Linear warmup from 0, then poly decay to 0 at max_iters.
inline double lr_at(std::size_t iter, const TrainConfig& cfg) {
    cfg.validate();
    if (iter > cfg.max_iters) throw std::invalid_argument("lr_at: iteration beyond max_iters");
    if (iter < cfg.warmup_iters) return cfg.base_lr * double(iter) / double(cfg.warmup_iters);
    const double t = double(iter - cfg.warmup_iters) / double(cfg.max_iters - cfg.warmup_iters);
    return cfg.base_lr * std::pow(1.0 - t, cfg.poly_power);
}

// Mean over pixels of -log softmax(logits)[target]. Logits are 2xHxW; the
// backward is the usual (softmax - onehot) / n_pixels.
template <typename T>
TensorT<T> cross_entropy_loss(TensorT<T> logits, const ChangeMask& mask) {
    if (logits.ndim() != 3 || logits.shape()[0] != 2 || logits.shape()[1] != mask.h || logits.shape()[2] != mask.w)
        throw std::invalid_argument("cross_entropy: logits " + shape_str(logits.shape()) + " vs mask " +
                                    std::to_string(mask.h) + "x" + std::to_string(mask.w));
    const std::size_t n = mask.h * mask.w;
    const T* p = logits.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double l0 = double(p[i]), l1 = double(p[n + i]);
        const double mx = std::max(l0, l1);
        const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
        acc += lse - (mask.v[i] ? l1 : l0);
    }
    TensorT<T> out = TensorT<T>::scalar(T(acc / double(n)));
    if (TapeT<T>::active() && logits.requires_grad()) {
        out.set_requires_grad(true);
        TapeT<T>::active()->record([logits, out, mask, n]() mutable {
            const T g = out.grad()[0];
            T* gl = logits.grad().data();
            const T* p = logits.data();
            for (std::size_t i = 0; i < n; ++i) {
                const double l0 = double(p[i]), l1 = double(p[n + i]);
                const double mx = std::max(l0, l1);
                const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
                const double p1 = e1 / (e0 + e1);
                const double t1 = mask.v[i] ? 1.0 : 0.0;
                gl[i] += g * T(((1.0 - p1) - (1.0 - t1)) / double(n));
                gl[n + i] += g * T((p1 - t1) / double(n));
            }
        });
    }
    return out;
}

// Decoupled weight decay: theta -= lr * (mhat / (sqrt(vhat) + eps) + wd * theta).
template <typename T>
class AdamWT {
public:
    AdamWT(std::vector<TensorT<T>> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
        for (auto& p : params_) {
            m_.emplace_back(p.size(), T(0));
            v_.emplace_back(p.size(), T(0));
        }
    }

    std::size_t step_count() const { return t_; }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            TensorT<T>& p = params_[pi];
            const std::vector<T>& g = p.grad();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = double(g[i]);
                const double m = double(m_[pi][i]) * cfg_.beta1 + (1.0 - cfg_.beta1) * gi;
                const double v = double(v_[pi][i]) * cfg_.beta2 + (1.0 - cfg_.beta2) * gi * gi;
                m_[pi][i] = T(m);
                v_[pi][i] = T(v);
                const double mhat = m / bc1, vhat = v / bc2;
                const double upd = mhat / (std::sqrt(vhat) + cfg_.epsilon) + cfg_.weight_decay * double(p.data()[i]);
                p.data()[i] = T(double(p.data()[i]) - lr * upd);
            }
        }
    }

private:
    std::vector<TensorT<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    std::size_t t_ = 0;
    TrainConfig cfg_;
};

using AdamW = AdamWT<float>;

struct TrainResult {
    std::filesystem::path best_checkpoint;
    std::filesystem::path final_checkpoint;
    std::filesystem::path metrics_log;
    double best_val_iou = 0.0;
    double final_loss = 0.0;
};

// Deterministic single-threaded loop: seed-shuffled epochs without
// replacement, per-iteration "iter \t lr \t loss" log, checkpoints at the
// configured cadence plus final, best checkpoint by validation change IoU.
TrainResult train(const ModelConfig& model_cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir);

}  // namespace masnet
