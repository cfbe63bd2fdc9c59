#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "param.hpp"
#include "tensor.hpp"

namespace bnsearch {

// Nesterov SGD state. Momentum buffers are created lazily, one per parameter
// name, shaped like the parameter.
struct OptimState {
    float momentum_coeff = 0.9f;
    float weight_decay = 1e-4f;
    std::map<std::string, Tensor> momentum_buffers;
};

// v <- m*v + (g + wd*p); p <- p - lr*(g + wd*p + m*v). Frozen params and
// params without a gradient entry are left untouched.
inline void sgd_step(const std::vector<NamedParam>& params, const GradMap& grads,
                     OptimState& state, float lr) {
    for (const auto& np : params) {
        if (!np.param->trainable) continue;
        auto git = grads.find(np.name);
        if (git == grads.end()) continue;
        Tensor& p = np.param->value;
        const Tensor& g = git->second;
        if (!p.same_shape(g))
            throw ShapeError("sgd_step: gradient shape mismatch for " + np.name);
        auto [bit, inserted] = state.momentum_buffers.try_emplace(np.name, Tensor(p.shape));
        Tensor& buf = bit->second;
        if (!inserted && !buf.same_shape(p))
            throw ShapeError("sgd_step: momentum buffer shape mismatch for " + np.name);
        const float m = state.momentum_coeff, wd = state.weight_decay;
        for (int64_t i = 0; i < p.numel(); ++i) {
            const float gd = g[i] + wd * p[i];
            buf[i] = m * buf[i] + gd;
            p[i] -= lr * (gd + m * buf[i]);
        }
    }
}

// Linear warmup from lr_start to lr_peak, then cosine decay from lr_peak to
// zero over the remaining epochs. Continuous at the warmup boundary.
struct LrSchedule {
    int warmup_epochs = 5;
    double lr_start = 0.2;
    double lr_peak = 0.8;
    int total_epochs = 100;

    void validate() const {
        if (warmup_epochs < 0 || warmup_epochs >= total_epochs)
            throw ConfigError("lr schedule: need 0 <= warmup_epochs < total_epochs");
        if (lr_start > lr_peak) throw ConfigError("lr schedule: lr_start must be <= lr_peak");
    }
};

inline double lr_at(const LrSchedule& s, double epoch_fraction) {
    if (epoch_fraction < 0.0) epoch_fraction = 0.0;
    if (epoch_fraction > s.total_epochs) epoch_fraction = s.total_epochs;
    if (epoch_fraction < s.warmup_epochs)
        return s.lr_start + (s.lr_peak - s.lr_start) * (epoch_fraction / s.warmup_epochs);
    const double t = (epoch_fraction - s.warmup_epochs) /
                     static_cast<double>(s.total_epochs - s.warmup_epochs);
    return s.lr_peak * 0.5 * (1.0 + std::cos(M_PI * t));
}

}  // namespace bnsearch
