// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "ft/data.hpp"
#include "ft/params.hpp"

namespace ft::detail {

struct StepEval {
    double loss = 0.0;
    ParamMap grads;  // keyed by the trainable parameter names
};

struct TrainLoop {
    int steps = 0;
    int batch = 1;
    std::uint64_t seed = 0;
    double peak_lr = 3e-4;
    int warmup = 50;
    double clip_norm = 1.0;
    double weight_decay = 0.0;
    int plateau_window = 0;          // 0 disables the plateau stop
    std::vector<int> record_steps;   // sorted, unique, within [1, steps]
};

struct TrainOutcome {
    ParamMap trained;
    std::vector<std::pair<int, ParamMap>> checkpoints;  // merged views, step >= 1
    int steps_run = 0;
};

using EvalStepFn =
    std::function<StepEval(const ParamMap& trained, const Tensor& xb, const std::vector<int>& yb)>;
using MergeFn = std::function<ParamMap(const ParamMap& trained)>;

// AdamW + warmup/cosine schedule + global-norm clipping over shuffled
// fixed-size batches. Deterministic under cfg.seed. Aborts with the step
// number on any non-finite loss or update.
TrainOutcome run_training(ParamMap trained, const DomainDataset& data, const TrainLoop& cfg,
                          const EvalStepFn& eval_step, const MergeFn& merge);

}  // namespace ft::detail
