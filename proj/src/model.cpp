// SPDX-License-Identifier: Apache-2.0
#include "ft/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ft/kernels.hpp"
#include "ft/rng.hpp"

namespace ft {

namespace {
constexpr std::uint64_t kInitStream = 0x10;
constexpr std::uint64_t kLoraStream = 0x11;
}  // namespace

void ModelSpec::validate() const {
    if (input_dim <= 0 || hidden_dim <= 0 || classes <= 0) {
        throw std::invalid_argument("ModelSpec: dimensions must be positive");
    }
    if (arch == Arch::Attn) {
        if (tokens <= 0 || input_dim % tokens != 0) {
            throw std::invalid_argument("ModelSpec: input_dim must be divisible by tokens");
        }
    }
}

ParamMap init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    SplitMix64 rng(derive_seed(seed, kInitStream));
    ParamMap p;
    auto he_weight = [&](const std::string& name, std::size_t out, std::size_t in) {
        p.emplace(name, Tensor::randn({out, in}, rng, std::sqrt(2.0 / static_cast<double>(in))));
    };
    auto zero_bias = [&](const std::string& name, std::size_t n) {
        p.emplace(name, Tensor::zeros({n}));
    };
    const auto d = static_cast<std::size_t>(spec.input_dim);
    const auto h = static_cast<std::size_t>(spec.hidden_dim);
    const auto c = static_cast<std::size_t>(spec.classes);
    if (spec.arch == Arch::Mlp) {
        he_weight("phi.0.W", h, d);
        zero_bias("phi.0.b", h);
        he_weight("phi.1.W", h, h);
        zero_bias("phi.1.b", h);
    } else {
        const auto dt = static_cast<std::size_t>(spec.token_dim());
        he_weight("phi.wq.W", dt, dt);
        he_weight("phi.wk.W", dt, dt);
        he_weight("phi.wv.W", dt, dt);
        he_weight("phi.ffn.W", h, dt);
        zero_bias("phi.ffn.b", h);
    }
    he_weight("head.W", c, h);
    zero_bias("head.b", c);
    return p;
}

std::string lora_param_a(const std::string& target) { return "lora::" + target + "::A"; }
std::string lora_param_b(const std::string& target) { return "lora::" + target + "::B"; }

std::vector<LoraAdapter> init_lora(const ModelSpec& spec, int rank, std::uint64_t seed) {
    spec.validate();
    if (spec.arch != Arch::Attn) {
        throw std::invalid_argument("LoRA targets attention projections; model is not attn");
    }
    const int dt = spec.token_dim();
    if (rank < 1 || rank >= dt) {
        throw std::invalid_argument("LoRA rank must satisfy 1 <= r < " + std::to_string(dt));
    }
    SplitMix64 rng(derive_seed(seed, kLoraStream));
    std::vector<LoraAdapter> adapters;
    for (const char* target : {"phi.wq.W", "phi.wv.W"}) {
        LoraAdapter ad;
        ad.target = target;
        ad.rank = rank;
        ad.a = Tensor::randn({static_cast<std::size_t>(rank), static_cast<std::size_t>(dt)},
                             rng, 1.0 / std::sqrt(static_cast<double>(dt)));
        ad.b = Tensor::zeros({static_cast<std::size_t>(dt), static_cast<std::size_t>(rank)});
        adapters.push_back(std::move(ad));
    }
    return adapters;
}

ParamMap apply_lora(const ParamMap& base, const std::vector<LoraAdapter>& adapters,
                    double scale) {
    ParamMap out = base;
    for (const LoraAdapter& ad : adapters) {
        auto it = out.find(ad.target);
        if (it == out.end()) {
            throw std::invalid_argument("apply_lora: no tensor named '" + ad.target + "'");
        }
        Tensor& w = it->second;
        const std::size_t d = ad.b.shape[0];
        const std::size_t r = ad.b.shape[1];
        const std::size_t k = ad.a.shape[1];
        if (ad.a.shape[0] != r || w.shape != Shape{d, k}) {
            throw std::invalid_argument("apply_lora: B*A does not match '" + ad.target + "'");
        }
        Tensor delta({d, k});
        kernels::matmul(ad.b.data.data(), ad.a.data.data(), delta.data.data(), d, r, k, false,
                        false);
        for (std::size_t i = 0; i < w.numel(); ++i) w.data[i] += scale * delta.data[i];
    }
    return out;
}

namespace {

struct WeightSource {
    // Returns the node for a projection weight, either the plain parameter
    // or the base-plus-adapter expression.
    virtual int weight(Graph& g, const std::string& name, Shape shape) = 0;
    virtual ~WeightSource() = default;
};

struct PlainWeights final : WeightSource {
    int weight(Graph& g, const std::string& name, Shape shape) override {
        return g.param(name, std::move(shape));
    }
};

struct LoraWeights final : WeightSource {
    const std::vector<LoraAdapter>* adapters;
    double scale;

    int weight(Graph& g, const std::string& name, Shape shape) override {
        for (const LoraAdapter& ad : *adapters) {
            if (ad.target != name) continue;
            const int base = g.input("base::" + name, shape);
            const int a = g.param(lora_param_a(name), ad.a.shape);
            const int b = g.param(lora_param_b(name), ad.b.shape);
            return g.add(base, g.scale(g.matmul(b, a), scale));
        }
        return g.param(name, std::move(shape));
    }
};

ModelGraph build_graph(const ModelSpec& spec, std::size_t batch, WeightSource& src) {
    spec.validate();
    if (batch == 0) throw std::invalid_argument("build_forward: empty batch");
    ModelGraph mg;
    Graph& g = mg.graph;
    const auto d = static_cast<std::size_t>(spec.input_dim);
    const auto h = static_cast<std::size_t>(spec.hidden_dim);
    const auto c = static_cast<std::size_t>(spec.classes);

    if (spec.arch == Arch::Mlp) {
        mg.x = g.input("x", {batch, d});
        const int w0 = src.weight(g, "phi.0.W", {h, d});
        const int b0 = g.param("phi.0.b", {h});
        const int a0 = g.relu(g.add(g.matmul(mg.x, w0, true), b0));
        const int w1 = src.weight(g, "phi.1.W", {h, h});
        const int b1 = g.param("phi.1.b", {h});
        mg.features = g.relu(g.add(g.matmul(a0, w1, true), b1));
    } else {
        const auto t = static_cast<std::size_t>(spec.tokens);
        const auto dt = static_cast<std::size_t>(spec.token_dim());
        mg.x = g.input("x", {batch, t, dt});
        const int wq = src.weight(g, "phi.wq.W", {dt, dt});
        const int wk = src.weight(g, "phi.wk.W", {dt, dt});
        const int wv = src.weight(g, "phi.wv.W", {dt, dt});
        const int q = g.matmul(mg.x, wq, true);
        const int k = g.matmul(mg.x, wk, true);
        const int v = g.matmul(mg.x, wv, true);
        const int scores = g.scale(g.matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(dt)));
        const int attention = g.softmax(scores);
        const int context = g.matmul(attention, v);
        const int wf = src.weight(g, "phi.ffn.W", {h, dt});
        const int bf = g.param("phi.ffn.b", {h});
        const int ffn = g.relu(g.add(g.matmul(context, wf, true), bf));
        mg.features = g.mean_axis(ffn, 1);
    }
    const int hw = src.weight(g, "head.W", {c, h});
    const int hb = g.param("head.b", {c});
    mg.logits = g.add(g.matmul(mg.features, hw, true), hb);
    return mg;
}

}  // namespace

ModelGraph build_forward(const ModelSpec& spec, std::size_t batch) {
    PlainWeights src;
    return build_graph(spec, batch, src);
}

ModelGraph build_forward_lora(const ModelSpec& spec, std::size_t batch,
                              const std::vector<LoraAdapter>& adapters, double scale) {
    if (spec.arch != Arch::Attn) {
        throw std::invalid_argument("LoRA targets attention projections; model is not attn");
    }
    LoraWeights src;
    src.adapters = &adapters;
    src.scale = scale;
    return build_graph(spec, batch, src);
}

Bindings bind_forward(const ModelSpec& spec, const ParamMap& params, const Tensor& x) {
    spec.validate();
    if (x.rank() != 2 || x.shape[1] != static_cast<std::size_t>(spec.input_dim)) {
        throw std::invalid_argument("forward: input must be [batch x " +
                                    std::to_string(spec.input_dim) + "], got " +
                                    shape_str(x.shape));
    }
    Bindings b;
    b.tensors = params;
    if (spec.arch == Arch::Attn) {
        b.tensors["x"] = x.reshaped({x.shape[0], static_cast<std::size_t>(spec.tokens),
                                     static_cast<std::size_t>(spec.token_dim())});
    } else {
        b.tensors["x"] = x;
    }
    return b;
}

ForwardOut forward(const ModelSpec& spec, const ParamMap& params, const Tensor& x) {
    ModelGraph mg = build_forward(spec, x.shape.empty() ? 1 : x.shape[0]);
    Bindings b = bind_forward(spec, params, x);
    const int roots[] = {mg.features, mg.logits};
    Evaluation ev = evaluate_nodes(mg.graph, roots, b);
    return {ev.value(mg.features), ev.value(mg.logits)};
}

}  // namespace ft
