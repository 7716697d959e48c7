#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"

namespace cddvt {

/// First/second moment estimates, one pair per parameter tensor, plus the
/// number of updates applied so far.
struct AdamState {
    std::uint64_t t = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;

    bool operator==(const AdamState&) const = default;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update over parallel lists of parameters and gradients.
/// `lr_scale`, when non-empty, multiplies the step size per tensor.
inline void adam_step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads, AdamState& state,
                      const AdamConfig& cfg, const std::vector<double>& lr_scale = {}) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient list lengths differ");
    if (!lr_scale.empty() && lr_scale.size() != params.size())
        throw ShapeError("adam_step: lr_scale length differs from the parameter list");
    if (state.m.empty()) {
        for (const Matrix* p : params) {
            state.m.emplace_back(p->rows(), p->cols());
            state.v.emplace_back(p->rows(), p->cols());
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
    ++state.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = *params[i];
        const Matrix& g = *grads[i];
        require_same_shape(p, g, "adam_step");
        auto& m = state.m[i].data();
        auto& v = state.v[i].data();
        const double lr = cfg.lr * (lr_scale.empty() ? 1.0 : lr_scale[i]);
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g.data()[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            p.data()[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
        }
    }
}

}  // namespace cddvt
