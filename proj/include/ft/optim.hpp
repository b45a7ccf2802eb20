// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "ft/params.hpp"

namespace ft {

// Linear warmup to the peak rate, then cosine decay to zero.
struct ScheduleSpec {
    double peak_lr = 3e-4;
    int warmup = 50;
    int total = 400;

    void validate() const;
};

double lr_at_step(const ScheduleSpec& sched, int t);

// Joint L2 norm over every tensor; gradients are rescaled only when the
// norm exceeds max_norm.
ParamMap clip_global_norm(const ParamMap& grads, double max_norm = 1.0);

// Decoupled-weight-decay Adam. Moments are keyed like the gradients, so
// parameters that never receive a gradient entry are never touched.
struct OptState {
    std::int64_t step = 0;
    ParamMap m;
    ParamMap v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

void adamw_step(ParamMap& params, const ParamMap& grads, OptState& state, double lr);

}  // namespace ft
