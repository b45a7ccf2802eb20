// SPDX-License-Identifier: Apache-2.0
#include "ft/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ft {

void ScheduleSpec::validate() const {
    if (!(peak_lr > 0.0)) throw std::invalid_argument("schedule: peak_lr must be positive");
    if (!(0 < warmup && warmup < total)) {
        throw std::invalid_argument("schedule: need 0 < warmup < total");
    }
}

double lr_at_step(const ScheduleSpec& sched, int t) {
    sched.validate();
    if (t < 0 || t > sched.total) {
        throw std::invalid_argument("lr_at_step: t out of [0, total]");
    }
    if (t < sched.warmup) {
        return sched.peak_lr * static_cast<double>(t) / static_cast<double>(sched.warmup);
    }
    const double progress = static_cast<double>(t - sched.warmup) /
                            static_cast<double>(sched.total - sched.warmup);
    return sched.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

ParamMap clip_global_norm(const ParamMap& grads, double max_norm) {
    for (const auto& [name, g] : grads) {
        if (!g.all_finite()) {
            throw std::runtime_error("clip_global_norm: non-finite gradient in '" + name + "'");
        }
    }
    const double norm = global_norm(grads);
    if (norm <= max_norm) return grads;
    ParamMap out = grads;
    for (auto& [name, g] : out) {
        // Multiply before dividing so e.g. (3,4) with max 1 lands exactly
        // on (0.6, 0.8).
        for (double& x : g.data) x = x * max_norm / norm;
    }
    return out;
}

void adamw_step(ParamMap& params, const ParamMap& grads, OptState& state, double lr) {
    if (state.m.empty()) {
        for (const auto& [name, g] : grads) {
            state.m.emplace(name, Tensor::zeros(g.shape));
            state.v.emplace(name, Tensor::zeros(g.shape));
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (const auto& [name, g] : grads) {
        auto pit = params.find(name);
        auto mit = state.m.find(name);
        auto vit = state.v.find(name);
        if (pit == params.end() || mit == state.m.end() || vit == state.v.end() ||
            pit->second.shape != g.shape) {
            throw std::invalid_argument("adamw_step: '" + name + "' missing or mismatched");
        }
        Tensor& p = pit->second;
        Tensor& m = mit->second;
        Tensor& v = vit->second;
        for (std::size_t i = 0; i < g.numel(); ++i) {
            const double gi = g.data[i];
            m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * gi;
            v.data[i] = state.beta2 * v.data[i] + (1.0 - state.beta2) * gi * gi;
            const double m_hat = m.data[i] / bc1;
            const double v_hat = v.data[i] / bc2;
            // Decoupled decay: applied directly to the parameter, not
            // through the moments.
            const double update = m_hat / (std::sqrt(v_hat) + state.eps) +
                                  state.weight_decay * p.data[i];
            p.data[i] -= lr * update;
            if (!std::isfinite(p.data[i])) {
                throw std::runtime_error("adamw_step: non-finite parameter in '" + name + "'");
            }
        }
    }
}

}  // namespace ft
