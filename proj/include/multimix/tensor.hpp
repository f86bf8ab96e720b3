#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace multimix {

// Storage with a fixed alignment: vectorized reductions peel to the alignment
// boundary, so a fixed base alignment keeps their summation order, and hence
// every result, independent of where the heap placed the buffer.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense channel-major feature map (C x H x W) for a single sample. Every
// network op in this library works one sample at a time; a batch is a
// std::vector<Tensor>.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    AlignedVector data;

    Tensor() = default;
    Tensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t size() const { return data.size(); }
    int plane() const { return height * width; }
    bool empty() const { return data.empty(); }
    bool same_shape(const Tensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }

    std::span<double> channel(int c) {
        return {data.data() + static_cast<std::size_t>(c) * plane(), static_cast<std::size_t>(plane())};
    }
    std::span<const double> channel(int c) const {
        return {data.data() + static_cast<std::size_t>(c) * plane(), static_cast<std::size_t>(plane())};
    }

    // Row-major (channels x H*W) view used by the GEMM-backed convolutions.
    using MatrixMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using ConstMatrixMap =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    MatrixMap matrix() { return {data.data(), channels, plane()}; }
    ConstMatrixMap matrix() const { return {data.data(), channels, plane()}; }
};

using Batch = std::vector<Tensor>;

// Single-channel image or mask helper.
inline Tensor make_image(int h, int w, double fill = 0.0) { return Tensor(1, h, w, fill); }

bool all_finite(std::span<const double> values);
bool all_finite(const Tensor& t);

}  // namespace multimix
