// SPDX-License-Identifier: Apache-2.0
#include "ft/methods.hpp"

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

#include "train_loop.hpp"

namespace ft {

const char* method_name(MethodKind kind) {
    switch (kind) {
        case MethodKind::Vanilla: return "vanilla";
        case MethodKind::L1: return "l1";
        case MethodKind::L2: return "l2";
        case MethodKind::KD: return "kd";
        case MethodKind::LoRA: return "lora";
        case MethodKind::WiSEFT: return "wiseft";
    }
    return "?";
}

void MethodConfig::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("method: lambda must be >= 0");
    if (kind == MethodKind::LoRA && rank < 1) {
        throw std::invalid_argument("method: LoRA rank must be >= 1");
    }
    if (kind == MethodKind::WiSEFT) {
        if (alpha_grid.empty()) throw std::invalid_argument("method: empty WiSE-FT alpha grid");
        for (double a : alpha_grid) {
            if (!(0.0 <= a && a <= 1.0)) {
                throw std::invalid_argument("method: WiSE-FT alpha outside [0, 1]");
            }
        }
    }
    if (train.steps < 0 || train.batch < 1 || train.checkpoints < 1) {
        throw std::invalid_argument("method: bad training fields");
    }
}

namespace {

bool head_entry(const std::string& name) { return name.rfind("head.", 0) == 0; }

PenaltyTerm anchor_penalty(const ParamMap& theta, const ParamMap& theta0, double lambda,
                           bool exempt_head, bool l1) {
    if (lambda < 0.0) throw std::invalid_argument("penalty: lambda must be >= 0");
    require_compatible(theta, theta0, l1 ? "l1_penalty" : "l2_penalty");
    PenaltyTerm term;
    for (const auto& [name, t] : theta) {
        Tensor g(t.shape);
        if (!(exempt_head && head_entry(name))) {
            const Tensor& t0 = theta0.at(name);
            for (std::size_t i = 0; i < t.numel(); ++i) {
                const double d = t.data[i] - t0.data[i];
                if (l1) {
                    term.value += lambda * std::fabs(d);
                    g.data[i] = d > 0.0 ? lambda : (d < 0.0 ? -lambda : 0.0);
                } else {
                    term.value += lambda * d * d;
                    g.data[i] = 2.0 * lambda * d;
                }
            }
        }
        term.grads.emplace(name, std::move(g));
    }
    return term;
}

}  // namespace

PenaltyTerm l1_penalty(const ParamMap& theta, const ParamMap& theta0, double lambda,
                       bool exempt_head) {
    return anchor_penalty(theta, theta0, lambda, exempt_head, true);
}

PenaltyTerm l2_penalty(const ParamMap& theta, const ParamMap& theta0, double lambda,
                       bool exempt_head) {
    return anchor_penalty(theta, theta0, lambda, exempt_head, false);
}

namespace {

// Loss graph for the KD objective alone: scale * total squared error
// between the student output and a constant teacher output.
struct KDGraph {
    ModelGraph mg;
    int loss = -1;
    int out = -1;  // student output node (logits or features)
};

KDGraph build_kd_graph(const ModelSpec& spec, std::size_t batch, double lambda, KDMatch match) {
    KDGraph kd;
    kd.mg = build_forward(spec, batch);
    kd.out = match == KDMatch::Logits ? kd.mg.logits : kd.mg.features;
    Graph& g = kd.mg.graph;
    const int teacher = g.input("teacher_out", g.node(kd.out).shape);
    kd.loss = g.scale(g.squared_error(kd.out, teacher),
                      lambda / static_cast<double>(batch));
    return kd;
}

Tensor teacher_output(const ModelSpec& spec, const ParamMap& theta0, const Tensor& x,
                      KDMatch match) {
    ForwardOut out = forward(spec, theta0, x);
    return match == KDMatch::Logits ? std::move(out.logits) : std::move(out.features);
}

std::set<std::string> param_names(const ParamMap& p) {
    std::set<std::string> names;
    for (const auto& [name, t] : p) names.insert(name);
    return names;
}

}  // namespace

double kd_penalty(const ModelSpec& spec, const ParamMap& theta, const ParamMap& theta0,
                  const Tensor& x, double lambda, KDMatch match) {
    if (lambda < 0.0) throw std::invalid_argument("kd_penalty: lambda must be >= 0");
    require_compatible(theta, theta0, "kd_penalty");
    KDGraph kd = build_kd_graph(spec, x.shape[0], lambda, match);
    Bindings b = bind_forward(spec, theta, x);
    b.tensors["teacher_out"] = teacher_output(spec, theta0, x, match);
    return evaluate(kd.mg.graph, kd.loss, b).data[0];
}

ParamMap kd_penalty_grad(const ModelSpec& spec, const ParamMap& theta, const ParamMap& theta0,
                         const Tensor& x, double lambda, KDMatch match) {
    if (lambda < 0.0) throw std::invalid_argument("kd_penalty: lambda must be >= 0");
    require_compatible(theta, theta0, "kd_penalty");
    KDGraph kd = build_kd_graph(spec, x.shape[0], lambda, match);
    Bindings b = bind_forward(spec, theta, x);
    b.tensors["teacher_out"] = teacher_output(spec, theta0, x, match);
    auto grads = gradient(kd.mg.graph, kd.loss, b, param_names(theta));
    return ParamMap(grads.begin(), grads.end());
}

ParamMap wise_ft_interpolate(const ParamMap& theta0, const ParamMap& theta, double alpha) {
    require_compatible(theta0, theta, "wise_ft_interpolate");
    if (!(0.0 <= alpha && alpha <= 1.0)) {
        throw std::invalid_argument("wise_ft_interpolate: alpha outside [0, 1]");
    }
    if (alpha == 0.0) return theta0;
    if (alpha == 1.0) return theta;
    ParamMap out = theta0;
    for (auto& [name, t] : out) {
        const Tensor& ft_t = theta.at(name);
        for (std::size_t i = 0; i < t.numel(); ++i) {
            t.data[i] = (1.0 - alpha) * t.data[i] + alpha * ft_t.data[i];
        }
    }
    return out;
}

namespace {

std::vector<int> checkpoint_steps(int steps, int count) {
    std::set<int> marks;
    for (int i = 1; i <= count; ++i) {
        const int s = static_cast<int>(std::lround(static_cast<double>(i) * steps / count));
        if (s >= 1) marks.insert(s);
    }
    marks.insert(steps);
    return {marks.begin(), marks.end()};
}

detail::TrainLoop loop_config(const TrainConfig& t, bool with_checkpoints) {
    detail::TrainLoop cfg;
    cfg.steps = t.steps;
    cfg.batch = t.batch;
    cfg.seed = t.seed;
    cfg.peak_lr = t.peak_lr;
    cfg.warmup = t.warmup;
    cfg.clip_norm = t.clip_norm;
    cfg.weight_decay = t.weight_decay;
    cfg.plateau_window = t.plateau_window;
    if (with_checkpoints && t.steps > 0) {
        cfg.record_steps = checkpoint_steps(t.steps, t.checkpoints);
    }
    return cfg;
}

FinetuneResult finetune_full(const ModelSpec& spec, const ParamMap& theta0,
                             const DomainDataset& source, const MethodConfig& config) {
    const std::size_t batch =
        std::min<std::size_t>(static_cast<std::size_t>(config.train.batch), source.size());
    ModelGraph mg = build_forward(spec, batch);
    int loss = mg.graph.cross_entropy(mg.logits, "y");
    if (config.kind == MethodKind::KD) {
        const int kd_out = config.match == KDMatch::Logits ? mg.logits : mg.features;
        const int teacher = mg.graph.input("teacher_out", mg.graph.node(kd_out).shape);
        const int kd_term = mg.graph.scale(mg.graph.squared_error(kd_out, teacher),
                                           config.lambda / static_cast<double>(batch));
        loss = mg.graph.add(loss, kd_term);
    }
    const std::set<std::string> trainable = param_names(theta0);

    auto eval_step = [&](const ParamMap& trained, const Tensor& xb,
                         const std::vector<int>& yb) -> detail::StepEval {
        Bindings b = bind_forward(spec, trained, xb);
        b.labels["y"] = yb;
        if (config.kind == MethodKind::KD) {
            b.tensors["teacher_out"] = teacher_output(spec, theta0, xb, config.match);
        }
        BackwardResult back = value_and_gradient(mg.graph, loss, b, trainable);
        detail::StepEval ev;
        ev.loss = back.value;
        ev.grads = ParamMap(back.grads.begin(), back.grads.end());
        if (config.kind == MethodKind::L1 || config.kind == MethodKind::L2) {
            const PenaltyTerm term = config.kind == MethodKind::L1
                                         ? l1_penalty(trained, theta0, config.lambda,
                                                      config.exempt_head)
                                         : l2_penalty(trained, theta0, config.lambda,
                                                      config.exempt_head);
            ev.loss += term.value;
            axpy_into(ev.grads, term.grads, 1.0);
        }
        return ev;
    };
    auto merge = [](const ParamMap& trained) { return trained; };

    detail::TrainOutcome out =
        run_training(theta0, source, loop_config(config.train, true), eval_step, merge);

    FinetuneResult result;
    result.trajectory.points.push_back({0, theta0});
    for (auto& [step, params] : out.checkpoints) {
        result.trajectory.points.push_back({step, std::move(params)});
    }
    return result;
}

FinetuneResult finetune_lora(const ModelSpec& spec, const ParamMap& theta0,
                             const DomainDataset& source, const MethodConfig& config) {
    std::vector<LoraAdapter> adapters = init_lora(spec, config.rank, config.train.seed);
    const std::size_t batch =
        std::min<std::size_t>(static_cast<std::size_t>(config.train.batch), source.size());
    ModelGraph mg = build_forward_lora(spec, batch, adapters, config.lora_scale);
    const int loss = mg.graph.cross_entropy(mg.logits, "y");

    // Trainable: adapter factors, plus the head unless frozen.
    ParamMap trained;
    std::set<std::string> trainable;
    for (const LoraAdapter& ad : adapters) {
        trained.emplace(lora_param_a(ad.target), ad.a);
        trained.emplace(lora_param_b(ad.target), ad.b);
        trainable.insert(lora_param_a(ad.target));
        trainable.insert(lora_param_b(ad.target));
    }
    if (!config.freeze_head) {
        trained.emplace("head.W", theta0.at("head.W"));
        trained.emplace("head.b", theta0.at("head.b"));
        trainable.insert("head.W");
        trainable.insert("head.b");
    }

    const std::set<std::string> targets = {"phi.wq.W", "phi.wv.W"};

    auto bind_step = [&](const ParamMap& cur, const Tensor& xb) {
        Bindings b;
        for (const auto& [name, t] : theta0) {
            if (targets.count(name)) {
                b.tensors["base::" + name] = t;
            } else {
                b.tensors[name] = t;
            }
        }
        for (const auto& [name, t] : cur) b.tensors[name] = t;  // head overrides theta0's
        b.tensors["x"] = xb.reshaped({xb.shape[0], static_cast<std::size_t>(spec.tokens),
                                      static_cast<std::size_t>(spec.token_dim())});
        return b;
    };

    auto merge = [&](const ParamMap& cur) {
        std::vector<LoraAdapter> merged_adapters = adapters;
        for (LoraAdapter& ad : merged_adapters) {
            ad.a = cur.at(lora_param_a(ad.target));
            ad.b = cur.at(lora_param_b(ad.target));
        }
        ParamMap full = theta0;
        if (!config.freeze_head) {
            full["head.W"] = cur.at("head.W");
            full["head.b"] = cur.at("head.b");
        }
        return apply_lora(full, merged_adapters, config.lora_scale);
    };

    auto eval_step = [&](const ParamMap& cur, const Tensor& xb,
                         const std::vector<int>& yb) -> detail::StepEval {
        Bindings b = bind_step(cur, xb);
        b.labels["y"] = yb;
        BackwardResult back = value_and_gradient(mg.graph, loss, b, trainable);
        detail::StepEval ev;
        ev.loss = back.value;
        ev.grads = ParamMap(back.grads.begin(), back.grads.end());
        return ev;
    };

    detail::TrainOutcome out =
        run_training(std::move(trained), source, loop_config(config.train, true), eval_step, merge);

    FinetuneResult result;
    result.trajectory.points.push_back({0, theta0});
    for (auto& [step, params] : out.checkpoints) {
        result.trajectory.points.push_back({step, std::move(params)});
    }
    return result;
}

}  // namespace

FinetuneResult finetune(const ModelSpec& spec, const ParamMap& theta0,
                        const DomainDataset& source, const MethodConfig& config) {
    spec.validate();
    config.validate();
    if (source.size() == 0) throw std::invalid_argument("finetune: empty source dataset");

    switch (config.kind) {
        case MethodKind::LoRA:
            return finetune_lora(spec, theta0, source, config);
        case MethodKind::WiSEFT: {
            MethodConfig vanilla = config;
            vanilla.kind = MethodKind::Vanilla;
            FinetuneResult result = finetune_full(spec, theta0, source, vanilla);
            const ParamMap& final_params = result.trajectory.points.back().params;
            for (double alpha : config.alpha_grid) {
                result.interpolated.emplace_back(alpha,
                                                 wise_ft_interpolate(theta0, final_params, alpha));
            }
            return result;
        }
        default:
            return finetune_full(spec, theta0, source, config);
    }
}

}  // namespace ft
