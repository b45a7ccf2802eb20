// SPDX-License-Identifier: Apache-2.0
#include "train_loop.hpp"

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

#include "ft/optim.hpp"
#include "ft/rng.hpp"

namespace ft::detail {

namespace {

constexpr std::uint64_t kShuffleStream = 0x20;
constexpr double kPlateauTol = 1e-4;

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& perm, std::size_t first,
                   std::size_t count) {
    const std::size_t cols = x.shape[1];
    Tensor out({count, cols});
    for (std::size_t i = 0; i < count; ++i) {
        const double* src = x.data.data() + perm[first + i] * cols;
        std::copy(src, src + cols, out.data.begin() + static_cast<std::ptrdiff_t>(i * cols));
    }
    return out;
}

void shuffle(std::vector<std::size_t>& perm, SplitMix64& rng) {
    for (std::size_t i = perm.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
        std::swap(perm[i - 1], perm[j]);
    }
}

}  // namespace

TrainOutcome run_training(ParamMap trained, const DomainDataset& data, const TrainLoop& cfg,
                          const EvalStepFn& eval_step, const MergeFn& merge) {
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    TrainOutcome out;
    if (cfg.steps == 0) {
        out.trained = std::move(trained);
        return out;
    }

    const ScheduleSpec sched{cfg.peak_lr, cfg.warmup, cfg.steps};
    sched.validate();

    const std::size_t n = data.size();
    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), n);
    const std::size_t batches_per_epoch = n / batch;

    SplitMix64 shuffle_rng(derive_seed(cfg.seed, kShuffleStream));
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;

    const std::set<int> record(cfg.record_steps.begin(), cfg.record_steps.end());

    OptState opt;
    opt.weight_decay = cfg.weight_decay;

    double window_sum = 0.0;
    int window_count = 0;
    double prev_window_avg = 0.0;
    bool have_prev_window = false;

    for (int t = 1; t <= cfg.steps; ++t) {
        const std::size_t slot = static_cast<std::size_t>(t - 1) % batches_per_epoch;
        if (slot == 0) shuffle(perm, shuffle_rng);

        Tensor xb = gather_rows(data.x, perm, slot * batch, batch);
        std::vector<int> yb(batch);
        for (std::size_t i = 0; i < batch; ++i) yb[i] = data.y[perm[slot * batch + i]];

        StepEval ev;
        try {
            ev = eval_step(trained, xb, yb);
        } catch (const std::exception& e) {
            throw std::runtime_error("training aborted at step " + std::to_string(t) + ": " +
                                     e.what());
        }
        if (!std::isfinite(ev.loss)) {
            throw std::runtime_error("training aborted at step " + std::to_string(t) +
                                     ": non-finite loss");
        }

        const ParamMap grads = clip_global_norm(ev.grads, cfg.clip_norm);
        adamw_step(trained, grads, opt, lr_at_step(sched, t));
        out.steps_run = t;

        if (record.count(t)) out.checkpoints.emplace_back(t, merge(trained));

        if (cfg.plateau_window > 0) {
            window_sum += ev.loss;
            if (++window_count == cfg.plateau_window) {
                const double avg = window_sum / cfg.plateau_window;
                window_sum = 0.0;
                window_count = 0;
                if (have_prev_window &&
                    prev_window_avg - avg < kPlateauTol * std::max(1.0, std::fabs(prev_window_avg))) {
                    break;
                }
                prev_window_avg = avg;
                have_prev_window = true;
            }
        }
    }

    // An early stop may land between recorded steps; keep the final state.
    if (!record.empty() &&
        (out.checkpoints.empty() || out.checkpoints.back().first != out.steps_run)) {
        out.checkpoints.emplace_back(out.steps_run, merge(trained));
    }

    out.trained = std::move(trained);
    return out;
}

}  // namespace ft::detail
