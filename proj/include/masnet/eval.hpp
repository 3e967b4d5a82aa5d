#pragma once

#include "masnet/training.hpp"

namespace masnet {

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp; fp += o.fp; fn += o.fn; tn += o.tn;
        return *this;
    }
};

// Change-class IoU: TP / (TP + FN + FP); 0 on empty denominator, so an
// all-negative prediction on an empty-change dataset scores 0, not 1.
double iou(const ConfusionCounts& c);

// Standard F1 = 2TP / (2TP + FN + FP); equals 2*IoU/(1+IoU). 0 on empty
// denominator.
double f1(const ConfusionCounts& c);

ConfusionCounts confusion(const ChangeMask& pred, const ChangeMask& truth);

struct MetricReport {
    double iou = 0.0, f1 = 0.0;
    ConfusionCounts counts;
};

// Argmax over the two logit channels.
ChangeMask predict(Model& model, const ImagePair& pair);

// Micro-aggregation: counts pooled over all pixels of all images.
MetricReport evaluate(Model& model, const std::vector<Sample>& dataset);
MetricReport evaluate(const std::filesystem::path& checkpoint, const std::vector<Sample>& dataset);

void write_report(const std::filesystem::path& path, const MetricReport& r);

struct CrossvalResult {
    std::vector<double> fold_iou;
    std::vector<double> fold_f1;
    double mean_iou = 0.0;
    double mean_f1 = 0.0;
};

// Train on k-1 folds, test on the held-out one, for every fold; folds come
// from kfold_split over the sorted sample names.
CrossvalResult crossval(const ModelConfig& model_cfg, const std::vector<Sample>& dataset,
                        std::size_t k, const TrainConfig& train_cfg,
                        const std::filesystem::path& out_dir);

// Attention-map export: per attention-enabled stage and branch, the
// channel-averaged post-softmax attention mass per position and the
// channel-averaged weighted-value term, min-max normalized to [0,255]
// (constant maps write 0). Requires a MASNet checkpoint.
std::vector<std::filesystem::path> export_attention_maps(const std::filesystem::path& checkpoint,
                                                         const ImagePair& pair,
                                                         const std::filesystem::path& out_dir);

struct VariantRow {
    std::string name;
    std::vector<double> seed_iou;
    double mean = 0.0;
    double spread = 0.0;  // max - min
};

struct CompareResult {
    std::vector<VariantRow> rows;
    double masnet_minus_vanilla = 0.0;
};

// Trains each variant once per seed and reports mean and spread of test IoU,
// plus the MASNet - vanilla delta of the means.
CompareResult compare_variants(const std::vector<std::pair<std::string, ModelConfig>>& variants,
                               const std::vector<Sample>& train_set,
                               const std::vector<Sample>& test_set,
                               const TrainConfig& train_cfg, std::size_t n_seeds,
                               const std::filesystem::path& out_dir);

void write_compare_report(const std::filesystem::path& path, const CompareResult& r);

}  // namespace masnet
