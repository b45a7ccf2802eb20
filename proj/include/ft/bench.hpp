// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ft/data.hpp"
#include "ft/model.hpp"
#include "ft/optim.hpp"

namespace ft {

// Synthetic multi-style benchmark: class prototypes live in a core space
// of dimension core_dim; each style embeds that space into input_dim via
// its own scaled orthogonal map plus offset. Pretraining mixes several
// styles, fine-tuning sees one, evaluation covers held-out styles.
struct BenchSpec {
    int classes = 10;
    int core_dim = 16;
    int input_dim = 32;
    int styles = 8;
    std::vector<int> pretrain_styles = {0, 1, 2, 3, 4, 5};
    int source_style = 0;
    std::vector<int> target_styles = {1, 2, 3, 4, 5, 6, 7};
    int train_per = 100;  // samples per (class, style) in training splits
    int test_per = 50;    // samples per (class, style) in evaluation splits
    double sigma_core = 0.3;
    double sigma_noise = 0.1;
    double kappa = 3.0;  // singular values of style maps drawn from [1/kappa, kappa]

    void validate() const;
};

struct BenchData {
    DomainDataset pretrain;
    DomainDataset source;
    DomainDataset id_test;
    std::vector<DomainDataset> targets;
};

// Fully deterministic under seed. Draws are keyed by (split, style,
// class), so every style's data is independent of which other styles are
// requested and no sample is shared between splits.
BenchData generate_domains(const BenchSpec& spec, std::uint64_t seed);

// Loop knobs shared by pretraining and fine-tuning runs.
struct TrainConfig {
    int steps = 400;
    int batch = 64;
    std::uint64_t seed = 42;
    int checkpoints = 10;  // evenly spaced, plus step 0 and final
    double peak_lr = 3e-4;
    int warmup = 50;
    double clip_norm = 1.0;
    double weight_decay = 0.0;
    int plateau_window = 0;  // >0: stop once the windowed train loss plateaus
};

// Trains a fresh model on the pretraining mixture. steps == 0 returns the
// initialization untouched.
ParamMap pretrain(const ModelSpec& spec, const DomainDataset& data, const TrainConfig& cfg);

// Fraction of examples whose argmax logit equals the label; ties break
// toward the lowest class index.
double evaluate_accuracy(const ModelSpec& spec, const ParamMap& params,
                         const DomainDataset& data);

// Unweighted mean of per-target accuracies (full precision; rounding is
// for reports only).
double aggregate_ood(std::span<const double> per_target);

double round2(double x);

// One file per domain: header label,x0,...,x{d-1}, then one row per
// example with 17-significant-digit floats.
void export_domain_csv(const DomainDataset& data, const std::string& path);

}  // namespace ft
