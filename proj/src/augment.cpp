#include "multimix/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "multimix/errors.hpp"
#include "multimix/rng.hpp"

namespace multimix {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::mt19937_64 key_rng(const AugKey& key, RngStream stream) {
    return make_rng({key.seed, key.epoch, key.index, static_cast<std::uint64_t>(stream)});
}

double sample_bilinear(const Tensor& img, int c, double y, double x) {
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    auto px = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) return 0.0;
        return img.at(c, yy, xx);
    };
    if (fy == 0.0 && fx == 0.0) return px(y0, x0);
    return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
           fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

double sample_nearest(const Tensor& img, int c, double y, double x) {
    const int yy = static_cast<int>(std::lround(y)), xx = static_cast<int>(std::lround(x));
    if (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) return 0.0;
    return img.at(c, yy, xx);
}

// out(y, x) = in(source(y, x)) for an inverse map given as a callable.
template <class InverseMap>
Tensor warp(const Tensor& image, Interp interp, InverseMap&& inverse) {
    Tensor out(image.channels, image.height, image.width);
    for (int c = 0; c < image.channels; ++c)
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                const auto [sy, sx] = inverse(static_cast<double>(y), static_cast<double>(x));
                out.at(c, y, x) = interp == Interp::bilinear ? sample_bilinear(image, c, sy, sx)
                                                             : sample_nearest(image, c, sy, sx);
            }
    return out;
}

Tensor apply_rotation(const Tensor& image, double deg) {
    return apply_geometric(image, GeometricDraw{false, deg, 0.0, 0.0}, Interp::bilinear);
}

Tensor apply_noise(const Tensor& image, double sigma, std::mt19937_64& rng) {
    Tensor out = image;
    std::normal_distribution<double> n(0.0, sigma);
    for (double& v : out.data) v += n(rng);
    return out;
}

void apply_pool_op(Tensor& img, const AugOp& op, std::mt19937_64& rng) {
    const double v = uniform(rng, op.lo, op.hi);
    if (op.name == "rotate") {
        img = apply_rotation(img, v);
    } else if (op.name == "shear") {
        img = apply_shear(img, v);
    } else if (op.name == "brightness") {
        for (double& p : img.data) p += v;
    } else if (op.name == "contrast") {
        double mean = 0.0;
        for (double p : img.data) mean += p;
        mean /= static_cast<double>(img.size());
        for (double& p : img.data) p = (p - mean) * v + mean;
    } else if (op.name == "gamma") {
        for (double& p : img.data) p = std::pow(std::clamp(p, 0.0, 1.0), v);
    } else if (op.name == "noise") {
        img = apply_noise(img, v, rng);
    } else if (op.name == "blur") {
        img = apply_gaussian_blur(img, v);
    } else {
        throw ConfigError("unknown augmentation op '" + op.name + "'");
    }
    clamp01(img);
}

}  // namespace

void clamp01(Tensor& image) {
    for (double& v : image.data) v = std::clamp(v, 0.0, 1.0);
}

GeometricDraw draw_geometric(std::mt19937_64& rng, const WeakAugConfig& cfg, int height, int width) {
    GeometricDraw d;
    d.flip = uniform01(rng) < cfg.hflip_prob;
    d.rotation_deg = uniform(rng, -cfg.rotation_deg, cfg.rotation_deg);
    d.shift_x = uniform(rng, -cfg.shift_frac, cfg.shift_frac) * width;
    d.shift_y = uniform(rng, -cfg.shift_frac, cfg.shift_frac) * height;
    return d;
}

Tensor apply_geometric(const Tensor& image, const GeometricDraw& draw, Interp interp) {
    const double cy = (image.height - 1) / 2.0, cx = (image.width - 1) / 2.0;
    const double th = draw.rotation_deg * kDegToRad;
    const double cs = std::cos(th), sn = std::sin(th);
    const double wmax = image.width - 1;
    return warp(image, interp, [&](double y, double x) {
        // Undo translation, then rotation about the centre, then the flip.
        const double ry = y - draw.shift_y - cy, rx = x - draw.shift_x - cx;
        const double sy = cs * ry - sn * rx + cy;
        double sx = sn * ry + cs * rx + cx;
        if (draw.flip) sx = wmax - sx;
        return std::pair{sy, sx};
    });
}

Tensor apply_shear(const Tensor& image, double shear_deg) {
    const double k = std::tan(shear_deg * kDegToRad);
    const double cy = (image.height - 1) / 2.0;
    return warp(image, Interp::bilinear, [&](double y, double x) { return std::pair{y, x - k * (y - cy)}; });
}

Tensor apply_gaussian_blur(const Tensor& image, double sigma) {
    if (sigma < 1e-3) return image;
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) sum += (taps[i + r] = std::exp(-0.5 * i * i / (sigma * sigma)));
    for (double& t : taps) t /= sum;
    Tensor tmp(image.channels, image.height, image.width), out(image.channels, image.height, image.width);
    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) s += taps[i + r] * image.at(c, y, clampi(x + i, image.width));
                tmp.at(c, y, x) = s;
            }
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) s += taps[i + r] * tmp.at(c, clampi(y + i, image.height), x);
                out.at(c, y, x) = s;
            }
    }
    return out;
}

Tensor apply_cutout(const Tensor& image, int y0, int x0, int h, int w) {
    Tensor out = image;
    for (int c = 0; c < out.channels; ++c)
        for (int y = std::max(0, y0); y < std::min(out.height, y0 + h); ++y)
            for (int x = std::max(0, x0); x < std::min(out.width, x0 + w); ++x) out.at(c, y, x) = 0.0;
    return out;
}

Tensor weak_augment(const Tensor& image, const AugKey& key, const WeakAugConfig& cfg) {
    auto rng = key_rng(key, RngStream::weak);
    Tensor out = apply_geometric(image, draw_geometric(rng, cfg, image.height, image.width), Interp::bilinear);
    clamp01(out);
    return out;
}

std::pair<Tensor, Tensor> weak_augment_pair(const Tensor& image, const Tensor& mask, const AugKey& key,
                                            const WeakAugConfig& cfg) {
    if (image.height != mask.height || image.width != mask.width)
        throw InputError("weak_augment_pair: image and mask sizes differ");
    auto rng = key_rng(key, RngStream::weak);
    const GeometricDraw d = draw_geometric(rng, cfg, image.height, image.width);
    Tensor img = apply_geometric(image, d, Interp::bilinear);
    clamp01(img);
    return {std::move(img), apply_geometric(mask, d, Interp::nearest)};
}

Tensor strong_augment(const Tensor& image, const AugKey& key, const AugPolicy& policy) {
    auto rng = key_rng(key, RngStream::strong);
    Tensor img = apply_geometric(image, draw_geometric(rng, policy.weak, image.height, image.width), Interp::bilinear);
    clamp01(img);

    std::vector<std::size_t> order(policy.strong.pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t k = std::min<std::size_t>(policy.strong.ops_per_image, order.size());
    for (std::size_t i = 0; i < k; ++i) {
        // partial Fisher-Yates: distinct ops
        const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(order.size() - i));
        std::swap(order[i], order[std::min(j, order.size() - 1)]);
        apply_pool_op(img, policy.strong.pool[order[i]], rng);
    }

    if (policy.strong.cutout_max_area > 0.0) {
        const double frac = uniform(rng, 0.0, policy.strong.cutout_max_area);
        const double side = std::sqrt(frac);
        const int h = std::max(1, static_cast<int>(std::lround(side * img.height)));
        const int w = std::max(1, static_cast<int>(std::lround(side * img.width)));
        const int y0 = static_cast<int>(uniform01(rng) * (img.height - h + 1));
        const int x0 = static_cast<int>(uniform01(rng) * (img.width - w + 1));
        img = apply_cutout(img, y0, x0, h, w);
    }
    clamp01(img);
    return img;
}

}  // namespace multimix
