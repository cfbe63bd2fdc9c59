#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace bnsearch {

// One searchable choice inside a layer: kernel size of the depthwise conv
// and expansion ratio of the inverted bottleneck.
struct CandidateSpec {
    int kernel_size = 3;     // one of {3,5,7}
    int expansion_ratio = 3; // one of {3,6}

    bool operator==(const CandidateSpec&) const = default;
};

// Fixed candidate menu: kernel {3,5,7} x expansion {3,6}, kernel-major order.
inline const std::array<CandidateSpec, 6>& candidate_menu() {
    static const std::array<CandidateSpec, 6> menu = {{
        {3, 3}, {3, 6}, {5, 3}, {5, 6}, {7, 3}, {7, 6},
    }};
    return menu;
}

struct LayerPlan {
    int out_channels = 0;
    int stride = 1;
};

struct LayerSpec {
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    std::vector<CandidateSpec> candidates;

    bool has_residual() const { return stride == 1 && in_channels == out_channels; }
};

// The whole single-path space: a fixed stem and head around L searchable
// layers with 6 inverted-bottleneck candidates each.
struct SpaceConfig {
    int input_channels = 3;
    int image_size = 32;
    int stem_channels = 16;
    int stem_stride = 2;
    std::vector<LayerPlan> layers;
    int head_channels = 128;
    int num_classes = 10;
    float bn_epsilon = 1e-5f;
    float bn_momentum = 0.1f;

    int num_layers() const { return static_cast<int>(layers.size()); }
    static constexpr int num_candidates = 6;

    // Desk-scale default: preserves the stride/residual structure of a
    // mobile search space at sizes a CPU can train.
    static SpaceConfig desk_default() {
        SpaceConfig c;
        c.layers = {{24, 2}, {24, 1}, {32, 2}, {32, 1},
                    {64, 2}, {64, 1}, {96, 1}, {96, 1}};
        return c;
    }

    // Tiny 3-layer space for tests and analyses; 6^3 = 216 architectures.
    static SpaceConfig toy() {
        SpaceConfig c;
        c.image_size = 16;
        c.stem_channels = 8;
        c.stem_stride = 2;
        c.layers = {{8, 1}, {16, 2}, {16, 1}};
        c.head_channels = 24;
        c.num_classes = 4;
        return c;
    }

    std::vector<LayerSpec> layer_specs() const {
        std::vector<LayerSpec> specs;
        int in = stem_channels;
        for (const auto& lp : layers) {
            LayerSpec s;
            s.in_channels = in;
            s.out_channels = lp.out_channels;
            s.stride = lp.stride;
            s.candidates.assign(candidate_menu().begin(), candidate_menu().end());
            specs.push_back(std::move(s));
            in = lp.out_channels;
        }
        return specs;
    }

    void validate() const {
        if (layers.empty()) throw ConfigError("space: at least one searchable layer required");
        if (input_channels < 1 || stem_channels < 1 || head_channels < 1)
            throw ConfigError("space: channel counts must be positive");
        if (num_classes < 2) throw ConfigError("space: need at least two classes");
        if (image_size < 4) throw ConfigError("space: image_size must be at least 4");
        if (stem_stride != 1 && stem_stride != 2)
            throw ConfigError("space: stem stride must be 1 or 2");
        int size = image_size;
        size = (size + 2 - 3) / stem_stride + 1;  // stem is a 3x3, pad 1
        for (const auto& lp : layers) {
            if (lp.out_channels < 1) throw ConfigError("space: layer out_channels must be positive");
            if (lp.stride != 1 && lp.stride != 2)
                throw ConfigError("space: layer stride must be 1 or 2");
            size = (size + lp.stride - 1) / lp.stride;
            if (size < 1) throw ConfigError("space: spatial size collapses below 1x1");
        }
        if (bn_epsilon <= 0.0f) throw ConfigError("space: bn_epsilon must be positive");
    }

    // Spatial side length entering each searchable layer; index L holds the
    // final (head) resolution.
    std::vector<int> spatial_plan() const {
        std::vector<int> sizes;
        int size = (image_size + 2 - 3) / stem_stride + 1;
        sizes.push_back(size);
        for (const auto& lp : layers) {
            size = (size + lp.stride - 1) / lp.stride;
            sizes.push_back(size);
        }
        return sizes;
    }
};

// A single path through the space: one candidate index per layer.
struct Architecture {
    std::vector<int> ops;

    bool operator==(const Architecture&) const = default;
    auto operator<=>(const Architecture&) const = default;

    std::string str() const {
        std::string s;
        for (size_t i = 0; i < ops.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(ops[i]);
        }
        return s;
    }
};

inline void validate_arch(const SpaceConfig& space, const Architecture& arch) {
    if (static_cast<int>(arch.ops.size()) != space.num_layers())
        throw ShapeError("architecture has " + std::to_string(arch.ops.size()) +
                         " genes, space has " + std::to_string(space.num_layers()) + " layers");
    for (int a : arch.ops)
        if (a < 0 || a >= SpaceConfig::num_candidates)
            throw ShapeError("architecture index " + std::to_string(a) + " out of range");
}

inline Architecture sample_uniform(const SpaceConfig& space, Rng& rng) {
    Architecture a;
    a.ops.reserve(static_cast<size_t>(space.num_layers()));
    for (int l = 0; l < space.num_layers(); ++l)
        a.ops.push_back(rng.next_int(SpaceConfig::num_candidates));
    return a;
}

// One fair round: N architectures whose indices at every layer form a
// permutation of {0..N-1}, so each candidate op trains exactly once.
inline std::vector<Architecture> sample_fair_round(const SpaceConfig& space, Rng& rng) {
    const int L = space.num_layers(), N = SpaceConfig::num_candidates;
    std::vector<std::vector<int>> perms;
    perms.reserve(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) perms.push_back(rng.permutation(N));
    std::vector<Architecture> round(static_cast<size_t>(N));
    for (int j = 0; j < N; ++j) {
        round[static_cast<size_t>(j)].ops.resize(static_cast<size_t>(L));
        for (int l = 0; l < L; ++l)
            round[static_cast<size_t>(j)].ops[static_cast<size_t>(l)] =
                perms[static_cast<size_t>(l)][static_cast<size_t>(j)];
    }
    return round;
}

// ---------------------------------------------------------------------------
// FLOPs accounting (multiply-accumulate counts; BN/ReLU/pool excluded)

inline int64_t conv_macs(int out_h, int out_w, int out_channels, int in_channels,
                         int kernel, int groups) {
    return static_cast<int64_t>(out_h) * out_w * out_channels *
           (static_cast<int64_t>(kernel) * kernel * in_channels / groups);
}

struct FlopsReport {
    int64_t total = 0;
    int64_t stem = 0;
    int64_t head = 0;
    std::vector<int64_t> per_layer;
};

inline int64_t candidate_macs(const SpaceConfig& space, int layer, const CandidateSpec& cand) {
    const auto specs = space.layer_specs();
    const auto sizes = space.spatial_plan();
    const LayerSpec& ls = specs[static_cast<size_t>(layer)];
    const int in_size = sizes[static_cast<size_t>(layer)];
    const int out_size = sizes[static_cast<size_t>(layer) + 1];
    const int mid = ls.in_channels * cand.expansion_ratio;
    int64_t macs = 0;
    macs += conv_macs(in_size, in_size, mid, ls.in_channels, 1, 1);           // expand 1x1
    macs += conv_macs(out_size, out_size, mid, mid, cand.kernel_size, mid);   // depthwise kxk
    macs += conv_macs(out_size, out_size, ls.out_channels, mid, 1, 1);        // project 1x1
    return macs;
}

// Per-(layer, candidate) MAC table plus fixed stem/head cost; lets the
// searcher evaluate the constraint in O(L) per architecture.
struct FlopsTable {
    int64_t stem = 0;
    int64_t head = 0;
    std::vector<std::vector<int64_t>> per_op;  // [L][N]

    int64_t arch_total(const Architecture& arch) const {
        int64_t t = stem + head;
        for (size_t l = 0; l < arch.ops.size(); ++l)
            t += per_op[l][static_cast<size_t>(arch.ops[l])];
        return t;
    }

    int64_t min_total() const {
        int64_t t = stem + head;
        for (const auto& row : per_op) {
            int64_t mn = row[0];
            for (int64_t v : row) mn = std::min(mn, v);
            t += mn;
        }
        return t;
    }
};

inline FlopsTable flops_table(const SpaceConfig& space) {
    FlopsTable t;
    const auto sizes = space.spatial_plan();
    const int stem_out = sizes[0];
    t.stem = conv_macs(stem_out, stem_out, space.stem_channels, space.input_channels, 3, 1);
    const int final_size = sizes.back();
    const int last_channels = space.layers.back().out_channels;
    t.head = conv_macs(final_size, final_size, space.head_channels, last_channels, 1, 1) +
             static_cast<int64_t>(space.head_channels) * space.num_classes;  // linear classifier
    t.per_op.resize(static_cast<size_t>(space.num_layers()));
    for (int l = 0; l < space.num_layers(); ++l) {
        auto& row = t.per_op[static_cast<size_t>(l)];
        row.reserve(SpaceConfig::num_candidates);
        for (const auto& cand : candidate_menu())
            row.push_back(candidate_macs(space, l, cand));
    }
    return t;
}

inline FlopsReport flops(const SpaceConfig& space, const Architecture& arch) {
    validate_arch(space, arch);
    const FlopsTable t = flops_table(space);
    FlopsReport r;
    r.stem = t.stem;
    r.head = t.head;
    r.per_layer.reserve(arch.ops.size());
    for (size_t l = 0; l < arch.ops.size(); ++l)
        r.per_layer.push_back(t.per_op[l][static_cast<size_t>(arch.ops[l])]);
    r.total = r.stem + r.head;
    for (int64_t v : r.per_layer) r.total += v;
    return r;
}

// FNV-1a over the structural fields; identifies a space plan in checkpoints
// and reports.
inline uint64_t space_digest(const SpaceConfig& space) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](int64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= static_cast<uint64_t>(v >> (8 * i)) & 0xffULL;
            h *= 0x100000001b3ULL;
        }
    };
    mix(space.input_channels);
    mix(space.image_size);
    mix(space.stem_channels);
    mix(space.stem_stride);
    mix(space.num_layers());
    for (const auto& lp : space.layers) {
        mix(lp.out_channels);
        mix(lp.stride);
    }
    mix(space.head_channels);
    mix(space.num_classes);
    return h;
}

}  // namespace bnsearch
