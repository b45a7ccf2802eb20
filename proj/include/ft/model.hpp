// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ft/graph.hpp"
#include "ft/params.hpp"

namespace ft {

enum class Arch { Mlp, Attn };

// Classifier factored into a feature extractor (phi.*) and a linear head
// (head.*). The attn variant views each input row as `tokens` tokens of
// width input_dim / tokens and runs one self-attention block.
struct ModelSpec {
    Arch arch = Arch::Mlp;
    int input_dim = 0;
    int hidden_dim = 0;
    int classes = 0;
    int tokens = 1;  // attn only; input_dim must be divisible by it

    int token_dim() const { return input_dim / tokens; }
    void validate() const;
};

// Fresh parameters: weights ~ N(0, 2/fan_in), biases zero.
ParamMap init_params(const ModelSpec& spec, std::uint64_t seed);

// Low-rank update for one attention projection: effective W = W0 + scale*B*A.
// B starts at zero so the initial adapter is an exact identity.
struct LoraAdapter {
    std::string target;  // "phi.wq.W" or "phi.wv.W"
    Tensor a;            // r x k, Gaussian init
    Tensor b;            // d x r, zero init
    int rank = 0;
};

// Adapters for both attention projections (W_q and W_v).
std::vector<LoraAdapter> init_lora(const ModelSpec& spec, int rank, std::uint64_t seed);

// Merged view: W0 + scale * (B*A) on targets, all other entries copied
// through. The base map is never mutated.
ParamMap apply_lora(const ParamMap& base, const std::vector<LoraAdapter>& adapters,
                    double scale);

// Forward graph over a fixed batch size. Parameter nodes carry the
// canonical names, input is "x", labels bind as "y".
struct ModelGraph {
    Graph graph;
    int x = -1;
    int features = -1;
    int logits = -1;
};

ModelGraph build_forward(const ModelSpec& spec, std::size_t batch);

// Same network with LoRA targets expressed as base-weight constants plus
// trainable adapter factors. Base weights bind as "base::<name>"; adapter
// factors are parameters "lora::<target>::A" / "lora::<target>::B".
ModelGraph build_forward_lora(const ModelSpec& spec, std::size_t batch,
                              const std::vector<LoraAdapter>& adapters, double scale);

std::string lora_param_a(const std::string& target);
std::string lora_param_b(const std::string& target);

// Binds x (reshaping to tokens for attn) plus every parameter.
Bindings bind_forward(const ModelSpec& spec, const ParamMap& params, const Tensor& x);

struct ForwardOut {
    Tensor features;  // batch x hidden_dim
    Tensor logits;    // batch x classes
};

ForwardOut forward(const ModelSpec& spec, const ParamMap& params, const Tensor& x);

}  // namespace ft
