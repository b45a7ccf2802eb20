// SPDX-License-Identifier: Apache-2.0
#include "ft/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "ft/rng.hpp"
#include "train_loop.hpp"

namespace ft {

namespace {

// Stream tags for keyed draws; see derive_seed.
constexpr std::uint64_t kProtoStream = 0x30;
constexpr std::uint64_t kStyleStream = 0x31;
constexpr std::uint64_t kTrainSplit = 0x32;
constexpr std::uint64_t kSourceSplit = 0x33;
constexpr std::uint64_t kTestSplit = 0x34;

struct StyleTransform {
    Tensor q;       // input_dim x core_dim, orthonormal columns
    Tensor sv;      // core_dim singular values in [1/kappa, kappa]
    Tensor offset;  // input_dim
};

// Gram-Schmidt with one re-orthogonalization pass; enough at these sizes.
Tensor orthonormal_columns(std::size_t rows, std::size_t cols, SplitMix64& rng) {
    Tensor q = Tensor::randn({rows, cols}, rng);
    for (std::size_t j = 0; j < cols; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t p = 0; p < j; ++p) {
                double dot = 0.0;
                for (std::size_t r = 0; r < rows; ++r) dot += q.at(r, j) * q.at(r, p);
                for (std::size_t r = 0; r < rows; ++r) q.at(r, j) -= dot * q.at(r, p);
            }
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < rows; ++r) norm += q.at(r, j) * q.at(r, j);
        norm = std::sqrt(norm);
        if (norm < 1e-10) throw std::runtime_error("style transform: degenerate basis draw");
        for (std::size_t r = 0; r < rows; ++r) q.at(r, j) /= norm;
    }
    return q;
}

StyleTransform style_transform(const BenchSpec& spec, std::uint64_t seed, int style) {
    SplitMix64 rng(derive_seed(seed, kStyleStream, static_cast<std::uint64_t>(style)));
    StyleTransform t;
    t.q = orthonormal_columns(static_cast<std::size_t>(spec.input_dim),
                              static_cast<std::size_t>(spec.core_dim), rng);
    t.sv = Tensor({static_cast<std::size_t>(spec.core_dim)});
    const double lo = 1.0 / spec.kappa;
    for (double& s : t.sv.data) s = lo + (spec.kappa - lo) * rng.next_double();
    t.offset = Tensor::randn({static_cast<std::size_t>(spec.input_dim)}, rng);
    return t;
}

std::vector<Tensor> class_prototypes(const BenchSpec& spec, std::uint64_t seed) {
    SplitMix64 rng(derive_seed(seed, kProtoStream));
    std::vector<Tensor> protos;
    protos.reserve(static_cast<std::size_t>(spec.classes));
    for (int c = 0; c < spec.classes; ++c) {
        protos.push_back(Tensor::randn({static_cast<std::size_t>(spec.core_dim)}, rng));
    }
    return protos;
}

// Samples `count` examples of one (class, style) cell into rows of x
// starting at `row`. x = Q (sv o (mu + sigma_core eps)) + offset +
// sigma_noise eta.
void sample_cell(const BenchSpec& spec, const StyleTransform& t, const Tensor& proto,
                 std::uint64_t seed, std::uint64_t split, int style, int cls, int count,
                 Tensor& x, std::vector<int>& y, std::size_t& row) {
    SplitMix64 rng(derive_seed(seed, split,
                               static_cast<std::uint64_t>(style),
                               static_cast<std::uint64_t>(cls)));
    const auto k = static_cast<std::size_t>(spec.core_dim);
    const auto d = static_cast<std::size_t>(spec.input_dim);
    std::vector<double> core(k);
    for (int i = 0; i < count; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            core[j] = t.sv.data[j] * (proto.data[j] + spec.sigma_core * rng.next_normal());
        }
        double* out = x.data.data() + row * d;
        for (std::size_t r = 0; r < d; ++r) {
            double v = t.offset.data[r] + spec.sigma_noise * rng.next_normal();
            for (std::size_t j = 0; j < k; ++j) v += t.q.at(r, j) * core[j];
            out[r] = v;
        }
        y[row] = cls;
        ++row;
    }
}

DomainDataset make_split(const BenchSpec& spec, std::uint64_t seed, std::uint64_t split,
                         const std::vector<int>& styles, int per_cell, std::string name,
                         int style_id, const std::vector<Tensor>& protos,
                         const std::vector<StyleTransform>& transforms) {
    DomainDataset ds;
    ds.name = std::move(name);
    ds.style = style_id;
    const std::size_t n = styles.size() * static_cast<std::size_t>(spec.classes) *
                          static_cast<std::size_t>(per_cell);
    ds.x = Tensor({n, static_cast<std::size_t>(spec.input_dim)});
    ds.y.resize(n);
    std::size_t row = 0;
    for (int s : styles) {
        for (int c = 0; c < spec.classes; ++c) {
            sample_cell(spec, transforms[static_cast<std::size_t>(s)],
                        protos[static_cast<std::size_t>(c)], seed, split, s, c, per_cell, ds.x,
                        ds.y, row);
        }
    }
    return ds;
}

}  // namespace

void BenchSpec::validate() const {
    if (classes < 2 || core_dim < 1 || input_dim < 1 || styles < 1 || train_per < 1 ||
        test_per < 1) {
        throw std::invalid_argument("bench: counts must be positive (and classes >= 2)");
    }
    if (core_dim > input_dim) throw std::invalid_argument("bench: core_dim must be <= input_dim");
    if (kappa < 1.0) throw std::invalid_argument("bench: kappa must be >= 1");
    if (sigma_core < 0.0 || sigma_noise < 0.0) {
        throw std::invalid_argument("bench: noise scales must be >= 0");
    }
    auto in_range = [&](int s) { return 0 <= s && s < styles; };
    if (!in_range(source_style)) throw std::invalid_argument("bench: source style out of range");
    bool source_pretrained = false;
    for (int s : pretrain_styles) {
        if (!in_range(s)) throw std::invalid_argument("bench: pretrain style out of range");
        source_pretrained |= s == source_style;
    }
    if (!source_pretrained) {
        throw std::invalid_argument("bench: source style must be a pretraining style");
    }
    if (target_styles.empty()) throw std::invalid_argument("bench: no target styles");
    for (int s : target_styles) {
        if (!in_range(s)) throw std::invalid_argument("bench: target style out of range");
        if (s == source_style) {
            throw std::invalid_argument("bench: targets must exclude the source style");
        }
    }
}

BenchData generate_domains(const BenchSpec& spec, std::uint64_t seed) {
    spec.validate();
    const std::vector<Tensor> protos = class_prototypes(spec, seed);
    std::vector<StyleTransform> transforms;
    transforms.reserve(static_cast<std::size_t>(spec.styles));
    for (int s = 0; s < spec.styles; ++s) transforms.push_back(style_transform(spec, seed, s));

    std::vector<int> pretrain_sorted = spec.pretrain_styles;
    std::sort(pretrain_sorted.begin(), pretrain_sorted.end());

    BenchData data;
    data.pretrain = make_split(spec, seed, kTrainSplit, pretrain_sorted, spec.train_per,
                               "pretrain", -1, protos, transforms);
    data.source = make_split(spec, seed, kSourceSplit, {spec.source_style}, spec.train_per,
                             "source", spec.source_style, protos, transforms);
    data.id_test = make_split(spec, seed, kTestSplit, {spec.source_style}, spec.test_per,
                              "id_test", spec.source_style, protos, transforms);
    for (int s : spec.target_styles) {
        data.targets.push_back(make_split(spec, seed, kTestSplit, {s}, spec.test_per,
                                          "target_" + std::to_string(s), s, protos, transforms));
    }
    return data;
}

ParamMap pretrain(const ModelSpec& spec, const DomainDataset& data, const TrainConfig& cfg) {
    spec.validate();
    if (data.size() == 0) throw std::invalid_argument("pretrain: empty dataset");
    ParamMap params = init_params(spec, cfg.seed);
    if (cfg.steps == 0) return params;

    const std::size_t batch =
        std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), data.size());
    ModelGraph mg = build_forward(spec, batch);
    const int loss = mg.graph.cross_entropy(mg.logits, "y");
    std::set<std::string> trainable;
    for (const auto& [name, t] : params) trainable.insert(name);

    detail::TrainLoop loop;
    loop.steps = cfg.steps;
    loop.batch = cfg.batch;
    loop.seed = cfg.seed;
    loop.peak_lr = cfg.peak_lr;
    loop.warmup = cfg.warmup;
    loop.clip_norm = cfg.clip_norm;
    loop.weight_decay = cfg.weight_decay;
    loop.plateau_window = cfg.plateau_window;

    auto eval_step = [&](const ParamMap& trained, const Tensor& xb,
                         const std::vector<int>& yb) -> detail::StepEval {
        Bindings b = bind_forward(spec, trained, xb);
        b.labels["y"] = yb;
        BackwardResult back = value_and_gradient(mg.graph, loss, b, trainable);
        return {back.value, ParamMap(back.grads.begin(), back.grads.end())};
    };
    auto merge = [](const ParamMap& trained) { return trained; };

    return run_training(std::move(params), data, loop, eval_step, merge).trained;
}

double evaluate_accuracy(const ModelSpec& spec, const ParamMap& params,
                         const DomainDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    const Tensor logits = forward(spec, params, data.x).logits;
    const std::size_t classes = logits.shape[1];
    std::size_t hits = 0;
    for (std::size_t r = 0; r < data.size(); ++r) {
        const double* row = logits.data.data() + r * classes;
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
            if (row[c] > row[best]) best = c;  // ties keep the lowest index
        }
        if (static_cast<int>(best) == data.y[r]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

double aggregate_ood(std::span<const double> per_target) {
    if (per_target.empty()) throw std::invalid_argument("aggregate_ood: empty list");
    double sum = 0.0;
    for (double a : per_target) sum += a;
    return sum / static_cast<double>(per_target.size());
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

void export_domain_csv(const DomainDataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("export: cannot open " + path);
    const std::size_t d = data.x.shape[1];
    out << "label";
    for (std::size_t j = 0; j < d; ++j) out << ",x" << j;
    out << "\n";
    char buf[64];
    for (std::size_t r = 0; r < data.size(); ++r) {
        out << data.y[r];
        for (std::size_t j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", data.x.at(r, j));
            out << ',' << buf;
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("export: write failed for " + path);
}

}  // namespace ft
