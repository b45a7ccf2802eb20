// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "ft/bench.hpp"
#include "ft/data.hpp"
#include "ft/model.hpp"

namespace ft {

enum class MethodKind { Vanilla, L1, L2, KD, LoRA, WiSEFT };
enum class KDMatch { Logits, Features };

const char* method_name(MethodKind kind);

struct MethodConfig {
    MethodKind kind = MethodKind::Vanilla;
    double lambda = 0.0;               // L1 / L2 / KD strength
    KDMatch match = KDMatch::Logits;   // KD output choice
    int rank = 4;                      // LoRA
    double lora_scale = 1.0;           // LoRA merge scale
    bool freeze_head = false;          // LoRA: keep the head at theta0
    std::vector<double> alpha_grid;    // WiSE-FT interpolation points
    bool exempt_head = false;          // anchor penalties skip head.* entries
    TrainConfig train;

    void validate() const;
};

// Checkpoint sequence of one fine-tuning run. The step-0 entry is always
// exactly theta0 (the merged view of a fresh LoRA adapter equals it).
struct TrajectoryPoint {
    int step = 0;
    ParamMap params;
};

struct Trajectory {
    std::vector<TrajectoryPoint> points;
};

struct PenaltyTerm {
    double value = 0.0;
    ParamMap grads;
};

// lambda * sum |theta - theta0|, subgradient lambda * sign with sign(0) = 0.
PenaltyTerm l1_penalty(const ParamMap& theta, const ParamMap& theta0, double lambda,
                       bool exempt_head = false);

// lambda * sum (theta - theta0)^2, gradient 2 lambda (theta - theta0).
PenaltyTerm l2_penalty(const ParamMap& theta, const ParamMap& theta0, double lambda,
                       bool exempt_head = false);

// lambda * mean over the batch of ||out_theta(x) - out_theta0(x)||^2 where
// out is logits or features; the teacher is a constant.
double kd_penalty(const ModelSpec& spec, const ParamMap& theta, const ParamMap& theta0,
                  const Tensor& x, double lambda, KDMatch match);

// Gradient of kd_penalty with respect to theta.
ParamMap kd_penalty_grad(const ModelSpec& spec, const ParamMap& theta, const ParamMap& theta0,
                         const Tensor& x, double lambda, KDMatch match);

// (1 - alpha) * theta0 + alpha * theta; endpoints reproduce the inputs
// bit-exactly.
ParamMap wise_ft_interpolate(const ParamMap& theta0, const ParamMap& theta, double alpha);

struct FinetuneResult {
    Trajectory trajectory;
    // WiSE-FT only: (alpha, interpolated parameters) per grid point.
    std::vector<std::pair<double, ParamMap>> interpolated;
};

// Minimizes cross-entropy on the source domain plus the configured
// penalty. theta0 is read-only. Deterministic under config.train.seed.
FinetuneResult finetune(const ModelSpec& spec, const ParamMap& theta0,
                        const DomainDataset& source, const MethodConfig& config);

}  // namespace ft
