#pragma once

#include <map>
#include <string>

#include "tensor.hpp"

namespace bnsearch {

// A learnable tensor. Frozen params keep their bytes through any number of
// optimizer steps.
struct Param {
    Tensor value;
    bool trainable = true;

    Param() = default;
    explicit Param(Tensor t) : value(std::move(t)) {}
};

struct NamedParam {
    std::string name;
    Param* param = nullptr;
};

// Gradients keyed by parameter name; std::map keeps iteration deterministic.
using GradMap = std::map<std::string, Tensor>;

inline void grad_accumulate(GradMap& into, const std::string& name, const Tensor& g) {
    auto it = into.find(name);
    if (it == into.end()) {
        into.emplace(name, g);
        return;
    }
    if (!it->second.same_shape(g))
        throw ShapeError("gradient shape mismatch for " + name);
    for (int64_t i = 0; i < g.numel(); ++i) it->second[i] += g[i];
}

inline void grad_merge(GradMap& into, const GradMap& from) {
    for (const auto& [name, g] : from) grad_accumulate(into, name, g);
}

}  // namespace bnsearch
