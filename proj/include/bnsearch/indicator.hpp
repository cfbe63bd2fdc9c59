#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "supernet.hpp"
#include "trainer.hpp"

namespace bnsearch {

struct OpScore {
    int layer = 0;
    int candidate = 0;
    double value = 0.0;
};

struct SubnetScore {
    Architecture arch;
    double value = 0.0;
};

// Mean |gamma| over the op's last BN (the project BN). Reads nothing else:
// not beta, not running statistics, not conv weights.
inline OpScore op_score(const Network& supernet, int layer, int candidate) {
    if (layer < 0 || layer >= supernet.num_layers())
        throw ShapeError("op_score: layer " + std::to_string(layer) + " out of range");
    const auto& ops = supernet.layers[static_cast<size_t>(layer)].ops;
    if (candidate < 0 || candidate >= static_cast<int>(ops.size()))
        throw ShapeError("op_score: candidate " + std::to_string(candidate) + " out of range");
    const Tensor& gamma = ops[static_cast<size_t>(candidate)].project.bn.gamma.value;
    double sum = 0.0;
    for (int64_t i = 0; i < gamma.numel(); ++i) sum += std::abs(static_cast<double>(gamma[i]));
    return {layer, candidate, sum / static_cast<double>(gamma.numel())};
}

inline double mean_abs(const std::vector<float>& v) {
    double sum = 0.0;
    for (float x : v) sum += std::abs(static_cast<double>(x));
    return sum / static_cast<double>(v.size());
}

// Memoized op scores; once built, scoring a subnet is L table lookups and
// never touches the tensor engine.
struct ScoreTable {
    int num_layers = 0;
    int num_candidates = 0;
    std::vector<double> values;  // row-major [L][N]

    double at(int layer, int candidate) const {
        return values[static_cast<size_t>(layer) * num_candidates + candidate];
    }
    double& at(int layer, int candidate) {
        return values[static_cast<size_t>(layer) * num_candidates + candidate];
    }
};

inline ScoreTable score_table(const Network& supernet) {
    ScoreTable t;
    t.num_layers = supernet.num_layers();
    t.num_candidates = supernet.ops_per_layer();
    t.values.resize(static_cast<size_t>(t.num_layers) * t.num_candidates);
    for (int l = 0; l < t.num_layers; ++l)
        for (int n = 0; n < t.num_candidates; ++n)
            t.at(l, n) = op_score(supernet, l, n).value;
    return t;
}

inline SubnetScore subnet_score(const ScoreTable& table, const Architecture& arch) {
    if (static_cast<int>(arch.ops.size()) != table.num_layers)
        throw ShapeError("subnet_score: architecture length != table layers");
    SubnetScore s;
    s.arch = arch;
    for (int l = 0; l < table.num_layers; ++l) {
        const int n = arch.ops[static_cast<size_t>(l)];
        if (n < 0 || n >= table.num_candidates)
            throw ShapeError("subnet_score: candidate index out of range");
        s.value += table.at(l, n);
    }
    return s;
}

// Baseline indicator: validation accuracy of the path with inherited
// supernet weights. Default is no BN recalibration; with recalibrate=true an
// extracted copy refreshes its running statistics on the split first, so the
// supernet itself is never mutated.
inline double acc_indicator(Network& supernet, const Architecture& arch, const Dataset& val_split,
                            int batch_size = 64, bool recalibrate = false) {
    if (!recalibrate) return evaluate(supernet, arch, val_split, batch_size);
    Network sub = extract_subnet(supernet, arch);
    const Architecture path = trivial_arch(sub);
    std::vector<int> idx;
    for (int start = 0; start < val_split.size(); start += batch_size) {
        const int end = std::min(val_split.size(), start + batch_size);
        idx.clear();
        for (int i = start; i < end; ++i) idx.push_back(i);
        forward_path(sub, path, make_batch(val_split, idx), true);  // stats only, no step
    }
    return evaluate(sub, path, val_split, batch_size);
}

inline std::string score_table_csv(const SpaceConfig& space, const ScoreTable& table) {
    std::string out = "layer,candidate,kernel,expansion,score\n";
    char buf[128];
    for (int l = 0; l < table.num_layers; ++l)
        for (int n = 0; n < table.num_candidates; ++n) {
            const CandidateSpec& c = candidate_menu()[static_cast<size_t>(n)];
            std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%.17g\n", l, n, c.kernel_size,
                          c.expansion_ratio, table.at(l, n));
            out += buf;
        }
    (void)space;
    return out;
}

}  // namespace bnsearch
