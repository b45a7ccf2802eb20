// SPDX-License-Identifier: Apache-2.0
#include "ft/params.hpp"

#include <cmath>
#include <stdexcept>

namespace ft {

bool compatible(const ParamMap& a, const ParamMap& b) {
    if (a.size() != b.size()) return false;
    auto ia = a.begin();
    auto ib = b.begin();
    for (; ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first || ia->second.shape != ib->second.shape) return false;
    }
    return true;
}

void require_compatible(const ParamMap& a, const ParamMap& b, const std::string& what) {
    if (!compatible(a, b)) {
        throw std::invalid_argument(what + ": parameter maps are not compatible");
    }
}

bool bitwise_equal(const ParamMap& a, const ParamMap& b) {
    if (!compatible(a, b)) return false;
    auto ia = a.begin();
    auto ib = b.begin();
    for (; ia != a.end(); ++ia, ++ib) {
        if (!bitwise_equal(ia->second, ib->second)) return false;
    }
    return true;
}

ParamMap param_delta(const ParamMap& theta, const ParamMap& theta0) {
    require_compatible(theta, theta0, "param_delta");
    ParamMap out;
    for (const auto& [name, t] : theta) {
        Tensor d(t.shape);
        const Tensor& t0 = theta0.at(name);
        for (std::size_t i = 0; i < t.numel(); ++i) d.data[i] = t.data[i] - t0.data[i];
        out.emplace(name, std::move(d));
    }
    return out;
}

void axpy_into(ParamMap& dst, const ParamMap& src, double factor) {
    for (const auto& [name, s] : src) {
        auto it = dst.find(name);
        if (it == dst.end() || it->second.shape != s.shape) {
            throw std::invalid_argument("axpy_into: entry '" + name + "' missing or mismatched");
        }
        for (std::size_t i = 0; i < s.numel(); ++i) it->second.data[i] += factor * s.data[i];
    }
}

double global_norm(const ParamMap& m) {
    double sq = 0.0;
    for (const auto& [name, t] : m) {
        for (double v : t.data) sq += v * v;
    }
    return std::sqrt(sq);
}

ParamMap scaled(const ParamMap& m, double factor) {
    ParamMap out = m;
    for (auto& [name, t] : out) {
        for (double& v : t.data) v *= factor;
    }
    return out;
}

}  // namespace ft
