#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "multimix/tensor.hpp"

namespace multimix {

double accuracy(std::span<const int> pred, std::span<const int> truth);

struct F1Result {
    double score = 0.0;
    bool degenerate = false;  // precision + recall == 0
};

// Class-wise F1 treating `positive` as the positive class.
F1Result f1_class(std::span<const int> pred, std::span<const int> truth, int positive);

// Foreground is value >= 0.5, so probability maps are binarized at 0.5.
Tensor binarize(const Tensor& map, double threshold = 0.5);

// 2|A∩B| / (|A|+|B|); 1 when both are empty.
double dice_score(const Tensor& pred, const Tensor& truth);

// Mean of the two directed mean nearest-neighbour distances (pixels).
// Both empty -> 0; exactly one empty -> image diagonal.
double avg_hausdorff(const Tensor& pred, const Tensor& truth);

// Squared Euclidean distance from every pixel to the nearest foreground pixel
// (exact, separable lower-envelope algorithm). Infinity when no foreground.
Tensor squared_distance_transform(const Tensor& mask);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Mean SSIM over all fully-contained 11x11 Gaussian windows (sigma 1.5),
// C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L = 1.
double ssim(const Tensor& a, const Tensor& b);

// Normalized 1-D Gaussian taps for the SSIM window.
std::array<double, kSsimWindow> ssim_gaussian_taps();

struct MetricsReport {
    std::optional<double> acc;
    std::optional<double> f1_normal;
    std::optional<double> f1_pneumonia;
    std::optional<double> dice;
    std::optional<double> ahd;
    std::optional<double> ssim;
    std::size_t n_samples = 0;
    std::size_t n_classified = 0;
    std::size_t n_segmented = 0;
    std::string domain = "in";

    bool has_classification() const { return acc.has_value(); }
    bool has_segmentation() const { return dice.has_value(); }

    // Single-line key=value record; absent metrics are written as "---".
    std::string to_record() const;
    // Acc,F1-N,F1-P,DS,HD,SSIM with 3 decimals, "---" for absent fields.
    std::string to_csv_row() const;
    static std::string csv_header();
};

}  // namespace multimix
