#include "masnet/training.hpp"

#include <fstream>
#include <numeric>

#include "masnet/eval.hpp"

namespace masnet {

namespace {

// Fisher-Yates with the run rng; epoch order is part of the determinism contract.
void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    model_cfg.validate();
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");

    fs::create_directories(out_dir / "checkpoints");
    fs::create_directories(out_dir / "logs");

    Rng root(cfg.seed);
    Rng init_rng = root.split("init");
    Rng aug_rng = root.split("augment");
    Rng order_rng = root.split("order");

    Model model(model_cfg, init_rng);
    AdamW opt(model.parameters(), cfg);

    AugmentPolicy policy;
    policy.crop_size = cfg.crop_size;

    TrainResult result;
    result.metrics_log = out_dir / "logs" / "train.tsv";
    std::ofstream log(result.metrics_log);
    if (!log) throw std::runtime_error("train: cannot write " + result.metrics_log.string());

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    shuffle_indices(order, order_rng);
    std::size_t cursor = 0;
    auto next_sample = [&]() -> const Sample& {
        if (cursor == order.size()) {
            shuffle_indices(order, order_rng);
            cursor = 0;
        }
        return train_set[order[cursor++]];
    };

    const std::vector<Sample>& val = val_set.empty() ? train_set : val_set;
    result.best_val_iou = -1.0;

    auto validate_and_checkpoint = [&](std::size_t iter, bool final_ckpt) {
        const fs::path path = out_dir / "checkpoints" /
                              (final_ckpt ? std::string("final.masn") : "iter_" + std::to_string(iter) + ".masn");
        save_checkpoint(path, model);
        MetricReport rep = evaluate(model, val);
        if (rep.iou > result.best_val_iou) {
            result.best_val_iou = rep.iou;
            result.best_checkpoint = out_dir / "checkpoints" / "best.masn";
            fs::copy_file(path, result.best_checkpoint, fs::copy_options::overwrite_existing);
        }
        if (final_ckpt) result.final_checkpoint = path;
    };

    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        const double lr = lr_at(iter, cfg);
        model.zero_grad();
        double loss_value = 0.0;
        {
            Tape tape;
            Tensor batch_loss = Tensor::scalar(0.0f);
            for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                Sample s = augment(next_sample(), aug_rng, policy);
                auto res = model.forward(s.pair.image_a, s.pair.image_b);
                batch_loss = add(batch_loss, cross_entropy_loss(res.logits, s.mask));
            }
            batch_loss = scale(batch_loss, 1.0f / float(cfg.batch_size));
            loss_value = double(batch_loss.item());
            if (!std::isfinite(loss_value))
                throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(iter) +
                                         " (lr " + std::to_string(lr) + ")");
            tape.backward(batch_loss);
        }
        opt.step(lr);

        char line[96];
        std::snprintf(line, sizeof(line), "%zu\t%.10g\t%.8g\n", iter, lr, loss_value);
        log << line;
        result.final_loss = loss_value;

        if ((iter + 1) % cfg.checkpoint_every == 0 && iter + 1 != cfg.max_iters)
            validate_and_checkpoint(iter + 1, false);
    }
    validate_and_checkpoint(cfg.max_iters, true);
    return result;
}

}  // namespace masnet
