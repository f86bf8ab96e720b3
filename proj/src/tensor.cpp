#include "multimix/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace multimix {

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

bool all_finite(const Tensor& t) { return all_finite(std::span<const double>(t.data)); }

}  // namespace multimix
