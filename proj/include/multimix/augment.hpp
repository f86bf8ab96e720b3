#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>

#include "multimix/config.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

// Every augmented view is a pure function of (image, key).
struct AugKey {
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t index = 0;

    bool operator==(const AugKey&) const = default;
};

enum class Interp { bilinear, nearest };

struct GeometricDraw {
    bool flip = false;
    double rotation_deg = 0.0;
    double shift_x = 0.0;  // pixels
    double shift_y = 0.0;
};

GeometricDraw draw_geometric(std::mt19937_64& rng, const WeakAugConfig& cfg, int height, int width);

// Horizontal flip, rotation about the centre, translation; zero fill outside.
Tensor apply_geometric(const Tensor& image, const GeometricDraw& draw, Interp interp);

// x' = x + tan(shear) * (y - cy), about the centre; zero fill.
Tensor apply_shear(const Tensor& image, double shear_deg);
Tensor apply_gaussian_blur(const Tensor& image, double sigma);
Tensor apply_cutout(const Tensor& image, int y0, int x0, int h, int w);
void clamp01(Tensor& image);

Tensor weak_augment(const Tensor& image, const AugKey& key, const WeakAugConfig& cfg = {});
// Same geometric transform on image (bilinear) and mask (nearest).
std::pair<Tensor, Tensor> weak_augment_pair(const Tensor& image, const Tensor& mask, const AugKey& key,
                                            const WeakAugConfig& cfg = {});

// Weak geometric step, ops_per_image distinct ops from the pool, one cutout.
Tensor strong_augment(const Tensor& image, const AugKey& key, const AugPolicy& policy = {});

}  // namespace multimix
