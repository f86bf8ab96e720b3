#include "multimix/optim.hpp"

#include <cmath>

namespace multimix {

AdamState AdamState::like(const ParameterSet& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_update(ParameterSet& params, const ParameterSet& grads, AdamState& state, double lr, const AdamConfig& cfg) {
    ++state.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    auto& pa = params.arrays();
    auto& ma = state.m.arrays();
    auto& va = state.v.arrays();
    const auto& ga = grads.arrays();
    for (std::size_t a = 0; a < pa.size(); ++a) {
        auto& p = pa[a].values;
        auto& m = ma[a].values;
        auto& v = va[a].values;
        const auto& g = ga[a].values;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            if (lr != 0.0) p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
        }
    }
}

}  // namespace multimix
