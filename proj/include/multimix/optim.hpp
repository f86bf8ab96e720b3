#pragma once

#include <cstdint>

#include "multimix/params.hpp"

namespace multimix {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    ParameterSet m;
    ParameterSet v;
    std::uint64_t t = 0;

    static AdamState like(const ParameterSet& params);
    bool operator==(const AdamState&) const = default;
};

// Bias-corrected Adam step. lr == 0 leaves params bitwise unchanged but still
// advances the moments.
void adam_update(ParameterSet& params, const ParameterSet& grads, AdamState& state, double lr, const AdamConfig& cfg);

}  // namespace multimix
