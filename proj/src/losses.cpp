#include "multimix/losses.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "multimix/errors.hpp"

namespace multimix {

namespace {

double log_sum_exp(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    const double m = row.maxCoeff();
    return m + std::log((row.array() - m).exp().sum());
}

int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    Eigen::Index best = 0;
    row.maxCoeff(&best);
    return static_cast<int>(best);
}

void check_maps(const Batch& a, const Batch& b, const char* op) {
    if (a.size() != b.size()) throw InputError(std::string(op) + ": batch sizes differ");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!a[i].same_shape(b[i])) throw InputError(std::string(op) + ": shape mismatch at sample " + std::to_string(i));
}

}  // namespace

Logits softmax_rows(const Logits& logits) {
    Logits p(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double lse = log_sum_exp(logits.row(r));
        p.row(r) = (logits.row(r).array() - lse).exp();
    }
    return p;
}

CrossEntropyResult cross_entropy(const Logits& logits, std::span<const int> labels) {
    CrossEntropyResult r;
    r.grad = Logits::Zero(logits.rows(), logits.cols());
    if (static_cast<std::size_t>(logits.rows()) != labels.size())
        throw InputError("cross_entropy: logits rows and labels differ in length");
    if (logits.rows() == 0) {
        r.empty_batch = true;
        return r;
    }
    const double inv_n = 1.0 / static_cast<double>(logits.rows());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= logits.cols()) throw InputError("cross_entropy: label out of range");
        const double lse = log_sum_exp(logits.row(i));
        r.value += (lse - logits(i, y)) * inv_n;
        r.grad.row(i) = (logits.row(i).array() - lse).exp() * inv_n;
        r.grad(i, y) -= inv_n;
    }
    return r;
}

double PseudoLabels::keep_fraction() const {
    return keep.empty() ? 0.0 : static_cast<double>(kept()) / static_cast<double>(keep.size());
}

std::size_t PseudoLabels::kept() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true)); }

PseudoLabels pseudo_label_select(const Logits& probs_weak, double t) {
    PseudoLabels out;
    for (Eigen::Index i = 0; i < probs_weak.rows(); ++i) {
        const int k = argmax(probs_weak.row(i));
        out.labels.push_back(k);
        out.keep.push_back(probs_weak(i, k) >= t);
    }
    return out;
}

ClassificationLossResult classification_loss(const Logits& logits_labeled, std::span<const int> labels,
                                             const Logits& logits_strong, const Logits& probs_weak,
                                             const LossConfig& cfg) {
    if (logits_strong.rows() != probs_weak.rows())
        throw InputError("classification_loss: strong and weak batches are not index-aligned (" +
                         std::to_string(logits_strong.rows()) + " vs " + std::to_string(probs_weak.rows()) + ")");
    ClassificationLossResult r;
    auto sup = cross_entropy(logits_labeled, labels);
    r.supervised = sup.value;
    r.grad_labeled = std::move(sup.grad);
    r.empty_labeled = sup.empty_batch;

    const PseudoLabels pl = pseudo_label_select(probs_weak, cfg.t);
    r.keep_fraction = pl.keep_fraction();
    r.grad_strong = Logits::Zero(logits_strong.rows(), logits_strong.cols());
    const std::size_t kept = pl.kept();
    if (kept > 0) {
        const double denom = cfg.unsup_denominator == UnsupDenominator::kept ? static_cast<double>(kept)
                                                                             : static_cast<double>(logits_strong.rows());
        for (Eigen::Index i = 0; i < logits_strong.rows(); ++i) {
            if (!pl.keep[i]) continue;
            const int y = pl.labels[i];
            const double lse = log_sum_exp(logits_strong.row(i));
            r.unsupervised += (lse - logits_strong(i, y)) / denom;
            r.grad_strong.row(i) = (logits_strong.row(i).array() - lse).exp() / denom;
            r.grad_strong(i, y) -= 1.0 / denom;
        }
        r.grad_strong *= cfg.lambda_u;
    }
    r.value = r.supervised + cfg.lambda_u * r.unsupervised;
    return r;
}

MapLossResult dice_loss(const Batch& pred, const Batch& target, double smooth) {
    check_maps(pred, target, "dice_loss");
    MapLossResult r;
    if (pred.empty()) {
        r.empty_batch = true;
        return r;
    }
    const double inv_b = 1.0 / static_cast<double>(pred.size());
    for (std::size_t n = 0; n < pred.size(); ++n) {
        const auto& p = pred[n].data;
        const auto& y = target[n].data;
        double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            inter += p[i] * y[i];
            sum_p += p[i];
            sum_y += y[i];
        }
        const double num = 2.0 * inter + smooth;
        const double den = sum_p + sum_y + smooth;
        r.value += (1.0 - num / den) * inv_b;
        Tensor g(pred[n].channels, pred[n].height, pred[n].width);
        const double den2 = den * den;
        for (std::size_t i = 0; i < p.size(); ++i) g.data[i] = -(2.0 * y[i] * den - num) / den2 * inv_b;
        r.grad.push_back(std::move(g));
    }
    return r;
}

Tensor batch_mean_map(const Batch& maps) {
    if (maps.empty()) return {};
    Tensor mean(maps[0].channels, maps[0].height, maps[0].width);
    for (const auto& m : maps) {
        if (!m.same_shape(mean)) throw InputError("batch_mean_map: shape mismatch");
        for (std::size_t i = 0; i < m.data.size(); ++i) mean.data[i] += m.data[i];
    }
    const double inv = 1.0 / static_cast<double>(maps.size());
    for (double& v : mean.data) v *= inv;
    return mean;
}

MapLossResult kl_consistency_to_mean(const Tensor& labeled_mean, const Batch& unlabeled, double eps) {
    MapLossResult r;
    if (labeled_mean.empty() || unlabeled.empty()) {
        r.empty_batch = true;
        for (const auto& u : unlabeled) r.grad.emplace_back(u.channels, u.height, u.width);
        return r;
    }
    const Tensor q_raw = batch_mean_map(unlabeled);
    if (!q_raw.same_shape(labeled_mean)) throw InputError("kl_consistency: labeled and unlabeled map shapes differ");
    const std::size_t k = q_raw.size();
    const double inv_k = 1.0 / static_cast<double>(k);
    const double inv_b = 1.0 / static_cast<double>(unlabeled.size());
    Tensor dq(q_raw.channels, q_raw.height, q_raw.width);
    for (std::size_t i = 0; i < k; ++i) {
        const double p = std::clamp(labeled_mean.data[i], eps, 1.0 - eps);
        const double q = std::clamp(q_raw.data[i], eps, 1.0 - eps);
        r.value += (p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q))) * inv_k;
        const bool inside = q_raw.data[i] > eps && q_raw.data[i] < 1.0 - eps;
        dq.data[i] = inside ? (-p / q + (1.0 - p) / (1.0 - q)) * inv_k * inv_b : 0.0;
    }
    r.grad.assign(unlabeled.size(), dq);
    return r;
}

MapLossResult kl_consistency(const Batch& labeled, const Batch& unlabeled, double eps) {
    return kl_consistency_to_mean(batch_mean_map(labeled), unlabeled, eps);
}

SegmentationLossResult segmentation_loss(const Batch& pred_labeled, const Batch& target, const Batch& pred_unlabeled,
                                         double alpha, const LossConfig& cfg) {
    SegmentationLossResult r;
    auto dice = dice_loss(pred_labeled, target, cfg.dice_smooth);
    auto kl = kl_consistency(pred_labeled, pred_unlabeled, cfg.kl_epsilon);
    r.supervised = dice.value;
    r.unsupervised = kl.value;
    r.value = alpha * dice.value + cfg.beta * kl.value;
    r.grad_labeled = std::move(dice.grad);
    for (auto& g : r.grad_labeled)
        for (double& v : g.data) v *= alpha;
    r.grad_unlabeled = std::move(kl.grad);
    for (auto& g : r.grad_unlabeled)
        for (double& v : g.data) v *= cfg.beta;
    return r;
}

std::string LossBreakdown::to_json() const {
    nlohmann::json j{{"L_c_sup", l_c_sup},   {"L_c_unsup", l_c_unsup}, {"L_s_sup", l_s_sup},
                     {"L_s_unsup", l_s_unsup}, {"total", total},       {"keep_fraction", pseudo_label_keep_fraction}};
    return j.dump();
}

double total_loss(double classification, double segmentation, const LossBreakdown& breakdown) {
    if (!std::isfinite(classification) || !std::isfinite(segmentation))
        throw DivergenceError("non-finite loss", breakdown.to_json());
    return classification + segmentation;
}

}  // namespace multimix
