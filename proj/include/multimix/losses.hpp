#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "multimix/config.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

using Logits = Eigen::MatrixXd;

// Value plus gradient with respect to the differentiable input(s). The
// empty-batch flag marks the "defined as 0" convention.
struct CrossEntropyResult {
    double value = 0.0;
    Logits grad;
    bool empty_batch = false;
};

// Mean over rows of -log softmax(logits)[label].
CrossEntropyResult cross_entropy(const Logits& logits, std::span<const int> labels);

struct PseudoLabels {
    std::vector<int> labels;
    std::vector<bool> keep;
    double keep_fraction() const;
    std::size_t kept() const;
};

// label = argmax, keep = max probability >= t.
PseudoLabels pseudo_label_select(const Logits& probs_weak, double t);

// Row-wise softmax.
Logits softmax_rows(const Logits& logits);

struct ClassificationLossResult {
    double value = 0.0;        // L_c_sup + lambda * L_c_unsup
    double supervised = 0.0;   // L_c_sup
    double unsupervised = 0.0; // L_c_unsup (masked CE on strong views)
    double keep_fraction = 0.0;
    Logits grad_labeled;
    Logits grad_strong;
    bool empty_labeled = false;
};

ClassificationLossResult classification_loss(const Logits& logits_labeled, std::span<const int> labels,
                                             const Logits& logits_strong, const Logits& probs_weak,
                                             const LossConfig& cfg);

struct MapLossResult {
    double value = 0.0;
    Batch grad;  // same shapes as the differentiable input batch
    bool empty_batch = false;
};

// 1 - (2 sum(p y) + s) / (sum p + sum y + s), averaged over the batch.
MapLossResult dice_loss(const Batch& pred, const Batch& target, double smooth = 1.0);

// Per-pixel batch mean; the labeled side of the consistency term.
Tensor batch_mean_map(const Batch& maps);

// Mean over pixels of KL(Bern(P) || Bern(Q)) with P, Q the per-pixel batch
// means of the labeled and unlabeled predictions, both clamped to
// [eps, 1-eps]. The gradient flows to the unlabeled batch only.
MapLossResult kl_consistency(const Batch& labeled, const Batch& unlabeled, double eps = 1e-7);
// Same, with the labeled mean supplied directly.
MapLossResult kl_consistency_to_mean(const Tensor& labeled_mean, const Batch& unlabeled, double eps = 1e-7);

struct SegmentationLossResult {
    double value = 0.0;        // alpha * dice + beta * kl
    double supervised = 0.0;   // dice
    double unsupervised = 0.0; // kl
    Batch grad_labeled;
    Batch grad_unlabeled;
};

SegmentationLossResult segmentation_loss(const Batch& pred_labeled, const Batch& target, const Batch& pred_unlabeled,
                                         double alpha, const LossConfig& cfg);

struct LossBreakdown {
    double l_c_sup = 0.0;
    double l_c_unsup = 0.0;
    double l_s_sup = 0.0;
    double l_s_unsup = 0.0;
    double total = 0.0;
    double pseudo_label_keep_fraction = 0.0;

    std::string to_json() const;
};

// L_c + L_s; throws DivergenceError (carrying the breakdown) when non-finite.
double total_loss(double classification, double segmentation, const LossBreakdown& breakdown);

}  // namespace multimix
