#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ops.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "space.hpp"

namespace bnsearch {

struct ConvBnBlock {
    Param weight;  // OIkk
    BnParams bn;
    int stride = 1;
    int padding = 0;
    int groups = 1;
    bool relu_after = true;
};

// Inverted bottleneck: expand 1x1 -> BN -> ReLU -> depthwise kxk -> BN ->
// ReLU -> project 1x1 -> BN. project.bn is the op's last BN and the one the
// indicator reads.
struct CandidateOp {
    CandidateSpec spec;
    ConvBnBlock expand;
    ConvBnBlock depthwise;
    ConvBnBlock project;
};

struct SearchLayer {
    LayerSpec spec;
    std::vector<CandidateOp> ops;
};

// Weight container for both the full supernet (6 ops per layer) and
// extracted/retrained single-path models (1 op per layer).
struct Network {
    SpaceConfig space;
    ConvBnBlock stem;
    std::vector<SearchLayer> layers;
    ConvBnBlock head_conv;
    Param fc_weight;  // [num_classes, head_channels]
    Param fc_bias;    // [num_classes]

    int num_layers() const { return static_cast<int>(layers.size()); }
    int ops_per_layer() const {
        return layers.empty() ? 0 : static_cast<int>(layers[0].ops.size());
    }
};

// Deterministic walk over every learnable tensor; defines the canonical
// parameter order used by the optimizer and the checkpoint format.
template <typename F>
void for_each_param(Network& net, F&& fn) {
    auto block = [&fn](const std::string& prefix, ConvBnBlock& b) {
        fn(prefix + ".conv.weight", b.weight);
        fn(prefix + ".bn.gamma", b.bn.gamma);
        fn(prefix + ".bn.beta", b.bn.beta);
    };
    block("stem", net.stem);
    for (size_t l = 0; l < net.layers.size(); ++l) {
        for (size_t n = 0; n < net.layers[l].ops.size(); ++n) {
            const std::string p =
                "layer" + std::to_string(l) + ".op" + std::to_string(n);
            block(p + ".expand", net.layers[l].ops[n].expand);
            block(p + ".depthwise", net.layers[l].ops[n].depthwise);
            block(p + ".project", net.layers[l].ops[n].project);
        }
    }
    block("head", net.head_conv);
    fn("fc.weight", net.fc_weight);
    fn("fc.bias", net.fc_bias);
}

// Non-learnable state (BN running statistics), same naming scheme.
template <typename F>
void for_each_buffer(Network& net, F&& fn) {
    auto block = [&fn](const std::string& prefix, ConvBnBlock& b) {
        fn(prefix + ".bn.running_mean", b.bn.running_mean);
        fn(prefix + ".bn.running_var", b.bn.running_var);
    };
    block("stem", net.stem);
    for (size_t l = 0; l < net.layers.size(); ++l) {
        for (size_t n = 0; n < net.layers[l].ops.size(); ++n) {
            const std::string p =
                "layer" + std::to_string(l) + ".op" + std::to_string(n);
            block(p + ".expand", net.layers[l].ops[n].expand);
            block(p + ".depthwise", net.layers[l].ops[n].depthwise);
            block(p + ".project", net.layers[l].ops[n].project);
        }
    }
    block("head", net.head_conv);
}

inline std::vector<NamedParam> collect_params(Network& net) {
    std::vector<NamedParam> out;
    for_each_param(net, [&out](const std::string& name, Param& p) {
        out.push_back({name, &p});
    });
    return out;
}

namespace detail {

inline Tensor kaiming_uniform(const std::vector<int>& shape, int fan_in, Rng& rng) {
    Tensor t(shape);
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_f(-bound, bound);
    return t;
}

inline ConvBnBlock make_conv_bn(int in_ch, int out_ch, int kernel, int stride, int groups,
                                bool relu_after, const SpaceConfig& space, Rng& rng) {
    ConvBnBlock b;
    const int in_per_g = in_ch / groups;
    b.weight = Param(kaiming_uniform({out_ch, in_per_g, kernel, kernel},
                                     in_per_g * kernel * kernel, rng));
    b.bn = BnParams::make(out_ch, space.bn_epsilon, space.bn_momentum);
    b.stride = stride;
    b.padding = kernel / 2;
    b.groups = groups;
    b.relu_after = relu_after;
    return b;
}

inline CandidateOp make_candidate_op(const LayerSpec& ls, const CandidateSpec& cand,
                                     const SpaceConfig& space, Rng& rng) {
    CandidateOp op;
    op.spec = cand;
    const int mid = ls.in_channels * cand.expansion_ratio;
    op.expand = make_conv_bn(ls.in_channels, mid, 1, 1, 1, true, space, rng);
    op.depthwise = make_conv_bn(mid, mid, cand.kernel_size, ls.stride, mid, true, space, rng);
    op.project = make_conv_bn(mid, ls.out_channels, 1, 1, 1, false, space, rng);
    return op;
}

inline Network build_network(const SpaceConfig& space, uint64_t seed, bool all_candidates,
                             const Architecture* chosen) {
    space.validate();
    Rng rng(seed);
    Network net;
    net.space = space;
    net.stem = make_conv_bn(space.input_channels, space.stem_channels, 3, space.stem_stride,
                            1, true, space, rng);
    const auto specs = space.layer_specs();
    for (int l = 0; l < space.num_layers(); ++l) {
        SearchLayer layer;
        layer.spec = specs[static_cast<size_t>(l)];
        if (all_candidates) {
            for (const auto& cand : layer.spec.candidates)
                layer.ops.push_back(make_candidate_op(layer.spec, cand, space, rng));
        } else {
            const auto& cand =
                layer.spec.candidates[static_cast<size_t>(chosen->ops[static_cast<size_t>(l)])];
            layer.ops.push_back(make_candidate_op(layer.spec, cand, space, rng));
        }
        net.layers.push_back(std::move(layer));
    }
    const int last_channels = space.layers.back().out_channels;
    net.head_conv = make_conv_bn(last_channels, space.head_channels, 1, 1, 1, true, space, rng);
    net.fc_weight = Param(kaiming_uniform({space.num_classes, space.head_channels},
                                          space.head_channels, rng));
    net.fc_bias = Param(Tensor({space.num_classes}, 0.0f));
    return net;
}

}  // namespace detail

inline Network build_supernet(const SpaceConfig& space, uint64_t seed) {
    return detail::build_network(space, seed, true, nullptr);
}

// Fresh single-path model over the chosen candidates (for retraining from
// scratch). Drive it through forward_path with the all-zero architecture.
inline Network build_subnet_model(const SpaceConfig& space, const Architecture& arch,
                                  uint64_t seed) {
    validate_arch(space, arch);
    return detail::build_network(space, seed, false, &arch);
}

inline Architecture trivial_arch(const Network& net) {
    Architecture a;
    a.ops.assign(static_cast<size_t>(net.num_layers()), 0);
    return a;
}

// Single-path copy that inherits the supernet's weights and BN state; used
// to check that scoring a path in-place and evaluating an extracted model
// agree.
inline Network extract_subnet(const Network& supernet, const Architecture& arch,
                              uint64_t seed = 0) {
    validate_arch(supernet.space, arch);
    Network sub = build_subnet_model(supernet.space, arch, seed);
    auto copy_block = [](const ConvBnBlock& from, ConvBnBlock& to) {
        to.weight.value = from.weight.value;
        to.bn.gamma.value = from.bn.gamma.value;
        to.bn.beta.value = from.bn.beta.value;
        to.bn.running_mean = from.bn.running_mean;
        to.bn.running_var = from.bn.running_var;
    };
    copy_block(supernet.stem, sub.stem);
    for (int l = 0; l < supernet.num_layers(); ++l) {
        const CandidateOp& from =
            supernet.layers[static_cast<size_t>(l)].ops[static_cast<size_t>(arch.ops[static_cast<size_t>(l)])];
        CandidateOp& to = sub.layers[static_cast<size_t>(l)].ops[0];
        copy_block(from.expand, to.expand);
        copy_block(from.depthwise, to.depthwise);
        copy_block(from.project, to.project);
    }
    copy_block(supernet.head_conv, sub.head_conv);
    sub.fc_weight.value = supernet.fc_weight.value;
    sub.fc_bias.value = supernet.fc_bias.value;
    return sub;
}

// ---------------------------------------------------------------------------
// Single-path forward / backward

enum class TrainableFilter { BnOnly, AllParams };

struct ConvBnCache {
    Tensor conv_in;
    BnCache bn;
    Tensor bn_out;  // pre-ReLU activation
};

struct OpCache {
    ConvBnCache expand;
    ConvBnCache depthwise;
    ConvBnCache project;
    bool residual = false;
};

struct PathCache {
    bool train = false;
    Architecture arch;
    ConvBnCache stem;
    std::vector<OpCache> blocks;
    ConvBnCache head;
    Tensor pooled;  // fc input
    int pool_h = 0;
    int pool_w = 0;
};

namespace detail {

inline Tensor conv_bn_forward(ConvBnBlock& b, const Tensor& x, bool train, ConvBnCache* cache) {
    Tensor conv_out = conv2d_forward(x, b.weight.value, b.stride, b.padding, b.groups);
    Tensor bn_out = bn_forward(conv_out, b.bn, train, cache ? &cache->bn : nullptr);
    Tensor out = b.relu_after ? relu(bn_out) : bn_out;
    if (cache) {
        cache->conv_in = x;
        cache->bn_out = std::move(bn_out);
    }
    return out;
}

inline Tensor conv_bn_backward(ConvBnBlock& b, const ConvBnCache& cache, const Tensor& grad_out,
                               TrainableFilter filter, const std::string& prefix, GradMap& grads,
                               bool need_input_grad) {
    Tensor g = b.relu_after ? relu_backward(grad_out, cache.bn_out) : grad_out;
    BnGrads bn_grads = bn_backward(g, cache.bn);
    grads.emplace(prefix + ".bn.gamma", std::move(bn_grads.grad_gamma));
    grads.emplace(prefix + ".bn.beta", std::move(bn_grads.grad_beta));
    if (filter == TrainableFilter::AllParams)
        grads.emplace(prefix + ".conv.weight",
                      conv2d_backward_weight(bn_grads.grad_in, cache.conv_in,
                                             b.weight.value.shape, b.stride, b.padding, b.groups));
    if (!need_input_grad) return Tensor();
    return conv2d_backward_input(bn_grads.grad_in, b.weight.value, cache.conv_in.shape,
                                 b.stride, b.padding, b.groups);
}

}  // namespace detail

// Runs the stem, one selected candidate per layer, and the head. In train
// mode the touched BN layers update their running statistics.
inline Tensor forward_path(Network& net, const Architecture& arch, const Tensor& batch,
                           bool train, PathCache* cache = nullptr) {
    counters::path_forward_calls.fetch_add(1, std::memory_order_relaxed);
    if (static_cast<int>(arch.ops.size()) != net.num_layers())
        throw ShapeError("forward_path: architecture length " + std::to_string(arch.ops.size()) +
                         " != layer count " + std::to_string(net.num_layers()));
    require_ndim(batch, 4, "forward_path batch");
    if (batch.shape[1] != net.space.input_channels)
        throw ShapeError("forward_path: batch has " + std::to_string(batch.shape[1]) +
                         " channels, space expects " + std::to_string(net.space.input_channels));
    if (cache) {
        cache->train = train;
        cache->arch = arch;
        cache->blocks.assign(static_cast<size_t>(net.num_layers()), OpCache{});
    }
    Tensor x = detail::conv_bn_forward(net.stem, batch, train, cache ? &cache->stem : nullptr);
    for (int l = 0; l < net.num_layers(); ++l) {
        SearchLayer& layer = net.layers[static_cast<size_t>(l)];
        const int choice = arch.ops[static_cast<size_t>(l)];
        if (choice < 0 || choice >= static_cast<int>(layer.ops.size()))
            throw ShapeError("forward_path: op index " + std::to_string(choice) +
                             " out of range at layer " + std::to_string(l));
        CandidateOp& op = layer.ops[static_cast<size_t>(choice)];
        OpCache* oc = cache ? &cache->blocks[static_cast<size_t>(l)] : nullptr;
        const bool residual = layer.spec.has_residual();
        Tensor h = detail::conv_bn_forward(op.expand, x, train, oc ? &oc->expand : nullptr);
        h = detail::conv_bn_forward(op.depthwise, h, train, oc ? &oc->depthwise : nullptr);
        h = detail::conv_bn_forward(op.project, h, train, oc ? &oc->project : nullptr);
        if (residual)
            for (int64_t i = 0; i < h.numel(); ++i) h[i] += x[i];
        if (oc) oc->residual = residual;
        x = std::move(h);
    }
    Tensor head_out = detail::conv_bn_forward(net.head_conv, x, train, cache ? &cache->head : nullptr);
    Tensor pooled = global_avg_pool(head_out);
    if (cache) {
        cache->pool_h = head_out.shape[2];
        cache->pool_w = head_out.shape[3];
        cache->pooled = pooled;
    }
    return linear_forward(pooled, net.fc_weight.value, net.fc_bias.value);
}

// Gradients for the active path only. BnOnly yields gamma/beta for every BN
// on the path; AllParams additionally yields conv and classifier weights.
inline GradMap backward_path(Network& net, const PathCache& cache, const Tensor& grad_logits,
                             TrainableFilter filter) {
    if (!cache.train)
        throw Error("backward_path: cache must come from a train-mode forward_path");
    GradMap grads;
    const bool all = filter == TrainableFilter::AllParams;
    LinearGrads fc = linear_backward(grad_logits, cache.pooled, net.fc_weight.value, all);
    if (all) {
        grads.emplace("fc.weight", std::move(fc.grad_weight));
        grads.emplace("fc.bias", std::move(fc.grad_bias));
    }
    Tensor g = global_avg_pool_backward(fc.grad_in, cache.pool_h, cache.pool_w);
    g = detail::conv_bn_backward(net.head_conv, cache.head, g, filter, "head", grads, true);
    for (int l = net.num_layers() - 1; l >= 0; --l) {
        const OpCache& oc = cache.blocks[static_cast<size_t>(l)];
        CandidateOp& op =
            net.layers[static_cast<size_t>(l)].ops[static_cast<size_t>(cache.arch.ops[static_cast<size_t>(l)])];
        const std::string prefix = "layer" + std::to_string(l) + ".op" +
                                   std::to_string(cache.arch.ops[static_cast<size_t>(l)]);
        Tensor skip;
        if (oc.residual) skip = g;  // identity branch passes the gradient through
        g = detail::conv_bn_backward(op.project, oc.project, g, filter, prefix + ".project",
                                     grads, true);
        g = detail::conv_bn_backward(op.depthwise, oc.depthwise, g, filter, prefix + ".depthwise",
                                     grads, true);
        g = detail::conv_bn_backward(op.expand, oc.expand, g, filter, prefix + ".expand",
                                     grads, true);
        if (oc.residual)
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += skip[i];
    }
    detail::conv_bn_backward(net.stem, cache.stem, g, filter, "stem", grads, false);
    return grads;
}

// Sets the trainable flags for a supernet training mode. BN-only freezes
// every conv and the classifier; stem/head BN stay trainable unless the
// caller opts out.
inline void apply_train_mode(Network& net, TrainableFilter filter, bool train_stem_head_bn = true) {
    const bool all = filter == TrainableFilter::AllParams;
    for_each_param(net, [&](const std::string& name, Param& p) {
        const bool is_bn = name.find(".bn.") != std::string::npos;
        if (all) {
            p.trainable = true;
        } else if (!is_bn) {
            p.trainable = false;
        } else if (name.rfind("stem.", 0) == 0 || name.rfind("head.", 0) == 0) {
            p.trainable = train_stem_head_bn;
        } else {
            p.trainable = true;
        }
    });
}

}  // namespace bnsearch
