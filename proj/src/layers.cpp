#include "multimix/layers.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "multimix/errors.hpp"

namespace multimix::nn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;

// Rows are (channel, ky, kx); columns are output pixels.
RowMatrix im2col(const Tensor& x, int k) {
    const int pad = k / 2;
    const int h = x.height, w = x.width;
    RowMatrix col(static_cast<Eigen::Index>(x.channels) * k * k, static_cast<Eigen::Index>(h) * w);
    for (int c = 0; c < x.channels; ++c) {
        const double* src = x.data.data() + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* dst = col.row((c * k + ky) * k + kx).data();
                const int dy = ky - pad, dx = kx - pad;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    double* drow = dst + static_cast<std::size_t>(y) * w;
                    if (sy < 0 || sy >= h) {
                        std::fill(drow, drow + w, 0.0);
                        continue;
                    }
                    const double* srow = src + static_cast<std::size_t>(sy) * w;
                    const int x0 = std::min(w, std::max(0, -dx));
                    const int x1 = std::max(x0, std::min(w, w - dx));
                    std::fill(drow, drow + x0, 0.0);
                    std::copy(srow + x0 + dx, srow + x1 + dx, drow + x0);
                    std::fill(drow + x1, drow + w, 0.0);
                }
            }
        }
    }
    return col;
}

void col2im_add(const RowMatrix& col, int k, Tensor& dx) {
    const int pad = k / 2;
    const int h = dx.height, w = dx.width;
    for (int c = 0; c < dx.channels; ++c) {
        double* dst = dx.data.data() + static_cast<std::size_t>(c) * h * w;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* src = col.row((c * k + ky) * k + kx).data();
                const int dy = ky - pad, ddx = kx - pad;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const double* srow = src + static_cast<std::size_t>(y) * w;
                    double* drow = dst + static_cast<std::size_t>(sy) * w;
                    const int x0 = std::max(0, -ddx), x1 = std::min(w, w - ddx);
                    for (int xx = x0; xx < x1; ++xx) drow[xx + ddx] += srow[xx];
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, std::span<const double> weight, std::span<const double> bias, int out_channels,
              int kernel) {
    const Eigen::Index fan_in = static_cast<Eigen::Index>(x.channels) * kernel * kernel;
    if (weight.size() != static_cast<std::size_t>(out_channels * fan_in))
        throw InputError("conv2d weight size does not match input channels");
    Tensor y(out_channels, x.height, x.width);
    ConstRowMap wmat(weight.data(), out_channels, fan_in);
    auto ymat = y.matrix();
    if (kernel == 1) {
        ymat.noalias() = wmat * x.matrix();
    } else {
        const RowMatrix col = im2col(x, kernel);
        ymat.noalias() = wmat * col;
    }
    if (!bias.empty()) {
        for (int o = 0; o < out_channels; ++o) ymat.row(o).array() += bias[o];
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& dy, std::span<const double> weight, int kernel,
                     std::span<double> dweight, std::span<double> dbias, Tensor* dx) {
    const int out_channels = dy.channels;
    const Eigen::Index fan_in = static_cast<Eigen::Index>(x.channels) * kernel * kernel;
    const auto dymat = dy.matrix();
    if (!dbias.empty()) {
        for (int o = 0; o < out_channels; ++o) dbias[o] += dymat.row(o).sum();
    }
    ConstRowMap wmat(weight.data(), out_channels, fan_in);
    if (kernel == 1) {
        if (!dweight.empty()) {
            RowMap dw(dweight.data(), out_channels, fan_in);
            dw.noalias() += dymat * x.matrix().transpose();
        }
        if (dx) {
            *dx = Tensor(x.channels, x.height, x.width);
            dx->matrix().noalias() = wmat.transpose() * dymat;
        }
        return;
    }
    if (!dweight.empty()) {
        const RowMatrix col = im2col(x, kernel);
        RowMap dw(dweight.data(), out_channels, fan_in);
        dw.noalias() += dymat * col.transpose();
    }
    if (dx) {
        const RowMatrix dcol = wmat.transpose() * dymat;
        *dx = Tensor(x.channels, x.height, x.width);
        col2im_add(dcol, kernel, *dx);
    }
}

Tensor instance_norm(const Tensor& x, InstanceNormCache& cache, double eps) {
    const int n = x.plane();
    cache.normalized = Tensor(x.channels, x.height, x.width);
    cache.inv_std.assign(x.channels, 0.0);
    for (int c = 0; c < x.channels; ++c) {
        auto in = x.channel(c);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : in) var += (v - mean) * (v - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        cache.inv_std[c] = inv;
        auto out = cache.normalized.channel(c);
        for (int i = 0; i < n; ++i) out[i] = (in[i] - mean) * inv;
    }
    return cache.normalized;
}

Tensor instance_norm_backward(const Tensor& dy, const InstanceNormCache& cache) {
    const int n = dy.plane();
    Tensor dx(dy.channels, dy.height, dy.width);
    for (int c = 0; c < dy.channels; ++c) {
        auto g = dy.channel(c);
        auto y = cache.normalized.channel(c);
        double sum_g = 0.0, sum_gy = 0.0;
        for (int i = 0; i < n; ++i) {
            sum_g += g[i];
            sum_gy += g[i] * y[i];
        }
        const double mg = sum_g / n, mgy = sum_gy / n;
        const double inv = cache.inv_std[c];
        auto out = dx.channel(c);
        for (int i = 0; i < n; ++i) out[i] = inv * (g[i] - mg - y[i] * mgy);
    }
    return dx;
}

void leaky_relu_inplace(Tensor& x, double slope) {
    for (double& v : x.data)
        if (v < 0.0) v *= slope;
}

void leaky_relu_backward_inplace(Tensor& dy, const Tensor& x, double slope) {
    for (std::size_t i = 0; i < dy.data.size(); ++i)
        if (x.data[i] < 0.0) dy.data[i] *= slope;
}

std::vector<double> dropout_mask(std::size_t n, double rate, std::mt19937_64& rng) {
    std::vector<double> mask(n);
    const double keep_scale = 1.0 / (1.0 - rate);
    for (auto& m : mask) m = (static_cast<double>(rng() >> 11) * 0x1.0p-53 < rate) ? 0.0 : keep_scale;
    return mask;
}

void multiply_inplace(Tensor& x, const std::vector<double>& mask) {
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] *= mask[i];
}

Tensor max_pool2(const Tensor& x, std::vector<int>& argmax) {
    const int oh = x.height / 2, ow = x.width / 2;
    Tensor y(x.channels, oh, ow);
    argmax.assign(y.size(), 0);
    std::size_t o = 0;
    for (int c = 0; c < x.channels; ++c) {
        for (int yy = 0; yy < oh; ++yy) {
            for (int xx = 0; xx < ow; ++xx, ++o) {
                double best = -std::numeric_limits<double>::infinity();
                int best_idx = 0;
                for (int dy = 0; dy < 2; ++dy) {
                    for (int dx = 0; dx < 2; ++dx) {
                        const int idx = (c * x.height + 2 * yy + dy) * x.width + 2 * xx + dx;
                        if (x.data[idx] > best) {
                            best = x.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                y.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    return y;
}

Tensor max_pool2_backward(const Tensor& dy, const std::vector<int>& argmax, int in_h, int in_w) {
    Tensor dx(dy.channels, in_h, in_w);
    for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax[o]] += dy.data[o];
    return dx;
}

Tensor avg_pool(const Tensor& x, int factor) {
    if (x.height % factor != 0 || x.width % factor != 0) throw InputError("avg_pool: size not divisible by factor");
    const int oh = x.height / factor, ow = x.width / factor;
    Tensor y(x.channels, oh, ow);
    const double scale = 1.0 / (static_cast<double>(factor) * factor);
    for (int c = 0; c < x.channels; ++c)
        for (int yy = 0; yy < x.height; ++yy)
            for (int xx = 0; xx < x.width; ++xx) y.at(c, yy / factor, xx / factor) += x.at(c, yy, xx);
    for (double& v : y.data) v *= scale;
    return y;
}

Tensor avg_pool_backward(const Tensor& dy, int factor) {
    Tensor dx(dy.channels, dy.height * factor, dy.width * factor);
    const double scale = 1.0 / (static_cast<double>(factor) * factor);
    for (int c = 0; c < dx.channels; ++c)
        for (int yy = 0; yy < dx.height; ++yy)
            for (int xx = 0; xx < dx.width; ++xx) dx.at(c, yy, xx) = dy.at(c, yy / factor, xx / factor) * scale;
    return dx;
}

Tensor upsample_nearest2(const Tensor& x) {
    Tensor y(x.channels, x.height * 2, x.width * 2);
    for (int c = 0; c < y.channels; ++c)
        for (int yy = 0; yy < y.height; ++yy)
            for (int xx = 0; xx < y.width; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
    return y;
}

Tensor upsample_nearest2_backward(const Tensor& dy) {
    Tensor dx(dy.channels, dy.height / 2, dy.width / 2);
    for (int c = 0; c < dy.channels; ++c)
        for (int yy = 0; yy < dy.height; ++yy)
            for (int xx = 0; xx < dy.width; ++xx) dx.at(c, yy / 2, xx / 2) += dy.at(c, yy, xx);
    return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.height != b.height || a.width != b.width) throw InputError("concat_channels: spatial size mismatch");
    Tensor y(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
    return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, int first_channels) {
    Tensor a(first_channels, x.height, x.width);
    Tensor b(x.channels - first_channels, x.height, x.width);
    std::copy(x.data.begin(), x.data.begin() + static_cast<std::ptrdiff_t>(a.size()), a.data.begin());
    std::copy(x.data.begin() + static_cast<std::ptrdiff_t>(a.size()), x.data.end(), b.data.begin());
    return {std::move(a), std::move(b)};
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> p(logits.size());
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - m));
    for (double& v : p) v /= sum;
    return p;
}

}  // namespace multimix::nn
