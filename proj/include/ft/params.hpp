// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "ft/tensor.hpp"

namespace ft {

// Named parameter vector theta. std::map iterates lexicographically by
// name, which fixes the canonical ordering used by checkpoints, clipping
// and interpolation.
using ParamMap = std::map<std::string, Tensor>;

// Two maps are compatible iff names and shapes match exactly.
bool compatible(const ParamMap& a, const ParamMap& b);
void require_compatible(const ParamMap& a, const ParamMap& b, const std::string& what);

bool bitwise_equal(const ParamMap& a, const ParamMap& b);

// Elementwise theta - theta0.
ParamMap param_delta(const ParamMap& theta, const ParamMap& theta0);

// dst += factor * src over matching entries of dst (src may cover a subset).
void axpy_into(ParamMap& dst, const ParamMap& src, double factor);

// sqrt(sum of squares over every entry of every tensor).
double global_norm(const ParamMap& m);

ParamMap scaled(const ParamMap& m, double factor);

}  // namespace ft
