// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "ft/tensor.hpp"

namespace ft {

// Labeled examples from one domain. `style` is the generating style id,
// -1 for mixtures like the pretraining set.
struct DomainDataset {
    std::string name;
    int style = -1;
    Tensor x;            // n x input_dim
    std::vector<int> y;  // n labels

    std::size_t size() const { return y.size(); }
};

}  // namespace ft
