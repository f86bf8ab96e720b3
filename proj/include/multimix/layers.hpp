#pragma once

#include <random>
#include <span>
#include <utility>
#include <vector>

#include "multimix/tensor.hpp"

// Single-sample network primitives with hand-written backward passes.
namespace multimix::nn {

// Zero-padded "same" convolution with stride 1 and odd kernel size.
// weight layout [out][in][k][k], bias [out].
Tensor conv2d(const Tensor& x, std::span<const double> weight, std::span<const double> bias, int out_channels,
              int kernel);

// Accumulates into dweight / dbias when they are non-empty; writes dx when it
// is non-null.
void conv2d_backward(const Tensor& x, const Tensor& dy, std::span<const double> weight, int kernel,
                     std::span<double> dweight, std::span<double> dbias, Tensor* dx);

inline constexpr double kInstanceNormEps = 1e-5;

struct InstanceNormCache {
    Tensor normalized;
    std::vector<double> inv_std;
};

// Per-channel normalization without affine parameters.
Tensor instance_norm(const Tensor& x, InstanceNormCache& cache, double eps = kInstanceNormEps);
Tensor instance_norm_backward(const Tensor& dy, const InstanceNormCache& cache);

void leaky_relu_inplace(Tensor& x, double slope);
// x is the pre-activation input.
void leaky_relu_backward_inplace(Tensor& dy, const Tensor& x, double slope);

// Inverted dropout multipliers: 0 with probability rate, else 1/(1-rate).
std::vector<double> dropout_mask(std::size_t n, double rate, std::mt19937_64& rng);
void multiply_inplace(Tensor& x, const std::vector<double>& mask);

Tensor max_pool2(const Tensor& x, std::vector<int>& argmax);
Tensor max_pool2_backward(const Tensor& dy, const std::vector<int>& argmax, int in_h, int in_w);

// Non-overlapping average pool; dims must be divisible by factor.
Tensor avg_pool(const Tensor& x, int factor);
Tensor avg_pool_backward(const Tensor& dy, int factor);

Tensor upsample_nearest2(const Tensor& x);
Tensor upsample_nearest2_backward(const Tensor& dy);

Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& x, int first_channels);

double sigmoid(double z);
std::vector<double> softmax(std::span<const double> logits);

}  // namespace multimix::nn
