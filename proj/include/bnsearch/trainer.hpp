#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dataset.hpp"
#include "optim.hpp"
#include "supernet.hpp"

namespace bnsearch {

enum class SamplePolicy { Uniform, Fair };

struct TrainConfig {
    int epochs = 10;
    SamplePolicy policy = SamplePolicy::Uniform;
    TrainableFilter mode = TrainableFilter::BnOnly;
    int batch_size = 64;
    LrSchedule schedule{5, 0.2, 0.8, 10};
    float smooth = 0.1f;
    float weight_decay = 1e-4f;
    float momentum = 0.9f;
    int snapshot_every = 1;
    bool train_stem_head_bn = true;

    void validate() const {
        if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
        if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
        if (snapshot_every < 1) throw ConfigError("train: snapshot_every must be >= 1");
        schedule.validate();
    }
};

// |gamma| of every candidate op's last BN at one epoch boundary.
struct BnSnapshot {
    int epoch = 0;
    std::vector<std::vector<std::vector<float>>> gammas;  // [layer][candidate] -> |gamma|
};

inline BnSnapshot take_bn_snapshot(const Network& net, int epoch) {
    BnSnapshot s;
    s.epoch = epoch;
    s.gammas.resize(static_cast<size_t>(net.num_layers()));
    for (int l = 0; l < net.num_layers(); ++l) {
        const auto& ops = net.layers[static_cast<size_t>(l)].ops;
        auto& row = s.gammas[static_cast<size_t>(l)];
        row.resize(ops.size());
        for (size_t n = 0; n < ops.size(); ++n) {
            const Tensor& g = ops[n].project.bn.gamma.value;
            row[n].resize(static_cast<size_t>(g.numel()));
            for (int64_t i = 0; i < g.numel(); ++i)
                row[n][static_cast<size_t>(i)] = std::abs(g[i]);
        }
    }
    return s;
}

struct TrainResult {
    std::vector<BnSnapshot> snapshots;        // snapshot 0 is the initial state
    std::vector<double> epoch_loss;           // mean loss per epoch
    std::vector<std::vector<int64_t>> op_usage;  // [layer][candidate] forward counts
    int64_t sgd_steps = 0;
};

namespace detail {

inline Architecture sample_training_arch(const Network& net, Rng& rng) {
    if (net.ops_per_layer() == 1) return trivial_arch(net);
    return sample_uniform(net.space, rng);
}

inline std::vector<Architecture> sample_training_round(const Network& net, Rng& rng) {
    if (net.ops_per_layer() == 1) return {trivial_arch(net)};
    return sample_fair_round(net.space, rng);
}

}  // namespace detail

// Stage-1 training loop. Uniform policy: one sampled path per optimizer
// step. Fair policy: N permuted paths per step, gradients summed, one step.
// Aborts with a TrainError diagnostic on a non-finite loss.
inline TrainResult train_supernet(Network& net, const Dataset& data, const TrainConfig& cfg,
                                  Rng& rng) {
    cfg.validate();
    if (data.empty()) throw ConfigError("train_supernet: dataset is empty");
    apply_train_mode(net, cfg.mode, cfg.train_stem_head_bn);
    auto params = collect_params(net);
    OptimState opt;
    opt.momentum_coeff = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;

    TrainResult result;
    result.op_usage.assign(static_cast<size_t>(net.num_layers()),
                           std::vector<int64_t>(static_cast<size_t>(net.ops_per_layer()), 0));
    result.snapshots.push_back(take_bn_snapshot(net, 0));

    const int n = data.size();
    const int bs = std::min(cfg.batch_size, n);
    const int iters = n / bs;
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::vector<int> batch_idx(static_cast<size_t>(bs));
    std::vector<int> labels;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (int it = 0; it < iters; ++it) {
            for (int i = 0; i < bs; ++i)
                batch_idx[static_cast<size_t>(i)] = order[static_cast<size_t>(it * bs + i)];
            const Tensor batch = make_batch(data, batch_idx, &labels);
            const double lr = lr_at(cfg.schedule, epoch + static_cast<double>(it) / iters);

            GradMap step_grads;
            double iter_loss = 0.0;
            const auto round = cfg.policy == SamplePolicy::Fair
                                   ? detail::sample_training_round(net, rng)
                                   : std::vector<Architecture>{detail::sample_training_arch(net, rng)};
            for (const Architecture& arch : round) {
                PathCache cache;
                const Tensor logits = forward_path(net, arch, batch, true, &cache);
                const LossResult loss = softmax_ce_label_smoothing(logits, labels, cfg.smooth);
                if (!std::isfinite(loss.loss))
                    throw TrainError("train_supernet: non-finite loss", epoch, it, lr);
                iter_loss += loss.loss;
                GradMap grads = backward_path(net, cache, loss.grad_logits, cfg.mode);
                grad_merge(step_grads, grads);
                for (int l = 0; l < net.num_layers(); ++l)
                    ++result.op_usage[static_cast<size_t>(l)]
                                     [static_cast<size_t>(arch.ops[static_cast<size_t>(l)])];
            }
            sgd_step(params, step_grads, opt, static_cast<float>(lr));
            ++result.sgd_steps;
            loss_sum += iter_loss / static_cast<double>(round.size());
        }
        result.epoch_loss.push_back(iters > 0 ? loss_sum / iters : 0.0);
        if ((epoch + 1) % cfg.snapshot_every == 0)
            result.snapshots.push_back(take_bn_snapshot(net, epoch + 1));
    }
    return result;
}

// Top-1 accuracy over the whole dataset, eval-mode BN. Ties in the argmax
// resolve to the lowest class index.
inline double evaluate(Network& net, const Architecture& arch, const Dataset& data,
                       int batch_size = 64) {
    if (data.empty()) throw ConfigError("evaluate: dataset is empty");
    const int n = data.size();
    int correct = 0;
    std::vector<int> idx;
    std::vector<int> labels;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        idx.clear();
        for (int i = start; i < end; ++i) idx.push_back(i);
        const Tensor batch = make_batch(data, idx, &labels);
        const Tensor logits = forward_path(net, arch, batch, false, nullptr);
        const int K = logits.shape[1];
        for (int i = 0; i < end - start; ++i) {
            int best = 0;
            for (int k = 1; k < K; ++k)
                if (logits.at2(i, k) > logits.at2(i, best)) best = k;
            if (best == labels[static_cast<size_t>(i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / n;
}

struct RetrainResult {
    Network model;
    double val_accuracy = 0.0;
    TrainResult train;
};

// Stage-3: train the chosen architecture from scratch (fresh init, every
// parameter trainable) and report held-out accuracy.
inline RetrainResult retrain_subnet(const SpaceConfig& space, const Architecture& arch,
                                    const Dataset& train_data, const Dataset& val_data,
                                    const TrainConfig& cfg, uint64_t seed) {
    RetrainResult r;
    r.model = build_subnet_model(space, arch, seed);
    TrainConfig rcfg = cfg;
    rcfg.mode = TrainableFilter::AllParams;
    rcfg.policy = SamplePolicy::Uniform;
    Rng rng(seed ^ 0x5e7a11dull);
    r.train = train_supernet(r.model, train_data, rcfg, rng);
    r.val_accuracy = evaluate(r.model, trivial_arch(r.model), val_data, rcfg.batch_size);
    return r;
}

}  // namespace bnsearch
