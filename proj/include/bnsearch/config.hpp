#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "searcher.hpp"
#include "space.hpp"
#include "trainer.hpp"

namespace bnsearch {

enum class DataSource { Synthetic, Cifar10 };

struct DataConfig {
    DataSource source = DataSource::Synthetic;
    SyntheticSpec synthetic;
    std::string cifar_path;
    Cifar10Normalization cifar_norm;
    double val_fraction = 0.2;
};

struct AnalysisConfig {
    int window = 3;
    double threshold = 0.9;
    bool correlation = false;
    int correlation_samples = 30;
    TrainConfig correlation_retrain;
};

// Everything a run needs lives here; there are no environment variables and
// no ambient randomness, so (config, seed) pins the outputs.
struct RunConfig {
    uint64_t seed = 0;
    std::string out_dir = "run_out";
    std::vector<std::string> stages{"train", "search", "retrain", "analyze"};
    SpaceConfig space = SpaceConfig::desk_default();
    DataConfig data;
    TrainConfig train;
    std::string indicator = "bn";  // "bn" or "acc"
    bool acc_recalibrate = false;
    EaConfig search;
    TrainConfig retrain;
    int retrain_topk = 1;
    AnalysisConfig analysis;
};

namespace detail {

inline void parse_lr(const nlohmann::json& j, TrainConfig& cfg) {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.schedule.total_epochs = j.value("schedule_epochs", cfg.epochs);
    cfg.schedule.warmup_epochs = j.value("warmup_epochs",
                                         std::min(cfg.schedule.warmup_epochs,
                                                  std::max(0, cfg.schedule.total_epochs - 1)));
    cfg.schedule.lr_start = j.value("lr_start", cfg.schedule.lr_start);
    cfg.schedule.lr_peak = j.value("lr_peak", cfg.schedule.lr_peak);
}

inline TrainConfig parse_train(const nlohmann::json& j, TrainConfig base) {
    TrainConfig cfg = base;
    if (j.contains("policy")) {
        const std::string p = j["policy"];
        if (p == "uniform")
            cfg.policy = SamplePolicy::Uniform;
        else if (p == "fair")
            cfg.policy = SamplePolicy::Fair;
        else
            throw ConfigError("train.policy must be \"uniform\" or \"fair\", got \"" + p + "\"");
    }
    if (j.contains("mode")) {
        const std::string m = j["mode"];
        if (m == "bn_only")
            cfg.mode = TrainableFilter::BnOnly;
        else if (m == "all_params")
            cfg.mode = TrainableFilter::AllParams;
        else
            throw ConfigError("train.mode must be \"bn_only\" or \"all_params\", got \"" + m + "\"");
    }
    parse_lr(j, cfg);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.smooth = j.value("smooth", cfg.smooth);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    cfg.momentum = j.value("momentum", cfg.momentum);
    cfg.snapshot_every = j.value("snapshot_every", cfg.snapshot_every);
    cfg.train_stem_head_bn = j.value("train_stem_head_bn", cfg.train_stem_head_bn);
    return cfg;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j, const std::string& config_dir = ".") {
    RunConfig cfg;
    if (!j.contains("seed"))
        throw ConfigError("config: a \"seed\" field is required; runs must not depend on "
                          "ambient randomness");
    cfg.seed = j["seed"].get<uint64_t>();
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    if (j.contains("stages")) cfg.stages = j["stages"].get<std::vector<std::string>>();
    for (const auto& s : cfg.stages)
        if (s != "train" && s != "search" && s != "retrain" && s != "analyze")
            throw ConfigError("config: unknown stage \"" + s + "\"");

    if (j.contains("space")) {
        const auto& js = j["space"];
        if (js.contains("preset")) {
            const std::string p = js["preset"];
            if (p == "desk")
                cfg.space = SpaceConfig::desk_default();
            else if (p == "toy")
                cfg.space = SpaceConfig::toy();
            else
                throw ConfigError("space.preset must be \"desk\" or \"toy\"");
        }
        cfg.space.input_channels = js.value("input_channels", cfg.space.input_channels);
        cfg.space.image_size = js.value("image_size", cfg.space.image_size);
        cfg.space.stem_channels = js.value("stem_channels", cfg.space.stem_channels);
        cfg.space.stem_stride = js.value("stem_stride", cfg.space.stem_stride);
        cfg.space.head_channels = js.value("head_channels", cfg.space.head_channels);
        cfg.space.num_classes = js.value("num_classes", cfg.space.num_classes);
        cfg.space.bn_epsilon = js.value("bn_epsilon", cfg.space.bn_epsilon);
        cfg.space.bn_momentum = js.value("bn_momentum", cfg.space.bn_momentum);
        if (js.contains("layers")) {
            cfg.space.layers.clear();
            for (const auto& jl : js["layers"])
                cfg.space.layers.push_back({jl.at("out").get<int>(), jl.value("stride", 1)});
        }
        cfg.space.validate();
    }

    if (j.contains("dataset")) {
        const auto& jd = j["dataset"];
        const std::string type = jd.value("type", "synthetic");
        if (type == "synthetic") {
            cfg.data.source = DataSource::Synthetic;
            cfg.data.synthetic.classes = jd.value("classes", cfg.space.num_classes);
            cfg.data.synthetic.samples_per_class =
                jd.value("samples_per_class", cfg.data.synthetic.samples_per_class);
            cfg.data.synthetic.image_size = jd.value("image_size", cfg.space.image_size);
            cfg.data.synthetic.channels = jd.value("channels", cfg.space.input_channels);
            cfg.data.synthetic.separability =
                jd.value("separability", cfg.data.synthetic.separability);
            cfg.data.synthetic.noise = jd.value("noise", cfg.data.synthetic.noise);
        } else if (type == "cifar10") {
            cfg.data.source = DataSource::Cifar10;
            cfg.data.cifar_path = jd.at("path").get<std::string>();
            std::filesystem::path p(cfg.data.cifar_path);
            if (p.is_relative()) p = std::filesystem::path(config_dir) / p;
            cfg.data.cifar_path = p.string();
            if (!std::filesystem::exists(p))
                throw ConfigError("config: cifar10 path does not exist: " + cfg.data.cifar_path);
            if (jd.contains("mean"))
                for (int c = 0; c < 3; ++c)
                    cfg.data.cifar_norm.mean[static_cast<size_t>(c)] = jd["mean"].at(c).get<float>();
            if (jd.contains("std"))
                for (int c = 0; c < 3; ++c)
                    cfg.data.cifar_norm.stddev[static_cast<size_t>(c)] = jd["std"].at(c).get<float>();
        } else {
            throw ConfigError("dataset.type must be \"synthetic\" or \"cifar10\"");
        }
        cfg.data.val_fraction = jd.value("val_fraction", cfg.data.val_fraction);
        if (cfg.data.val_fraction < 0.0 || cfg.data.val_fraction >= 1.0)
            throw ConfigError("dataset.val_fraction must be in [0,1)");
    } else {
        cfg.data.synthetic.classes = cfg.space.num_classes;
        cfg.data.synthetic.image_size = cfg.space.image_size;
    }

    if (j.contains("train")) {
        // unspecified epoch budgets keep the reference 10:1 ratio between
        // all-params (100) and bn-only (10) supernet training
        TrainConfig base = cfg.train;
        if (!j["train"].contains("epochs")) {
            const bool bn_only = j["train"].value("mode", "bn_only") == "bn_only";
            base.epochs = bn_only ? 10 : 100;
            base.schedule.total_epochs = base.epochs;
        }
        cfg.train = detail::parse_train(j["train"], base);
    }
    cfg.train.validate();

    cfg.indicator = j.value("indicator", cfg.indicator);
    if (cfg.indicator != "bn" && cfg.indicator != "acc")
        throw ConfigError("indicator must be \"bn\" or \"acc\"");
    cfg.acc_recalibrate = j.value("acc_recalibrate", cfg.acc_recalibrate);
    if (j.contains("search")) {
        const auto& js = j["search"];
        cfg.search.population = js.value("population", cfg.search.population);
        cfg.search.iterations = js.value("iterations", cfg.search.iterations);
        cfg.search.total_samples = js.value("total_samples", cfg.search.total_samples);
        cfg.search.mutation_prob = js.value("mutation_prob", cfg.search.mutation_prob);
        cfg.search.crossover_fraction =
            js.value("crossover_fraction", cfg.search.crossover_fraction);
        cfg.search.topk_parents = js.value("topk_parents", cfg.search.topk_parents);
        cfg.search.flops_constraint =
            js.value("flops_constraint", cfg.search.flops_constraint);
    }
    cfg.search.seed = cfg.seed ^ 0x5ea5c4ULL;
    cfg.search.validate();

    TrainConfig retrain_base;
    retrain_base.mode = TrainableFilter::AllParams;
    retrain_base.epochs = 20;
    retrain_base.schedule.total_epochs = 20;
    retrain_base.schedule.warmup_epochs = 2;
    retrain_base.schedule.lr_start = 0.05;
    retrain_base.schedule.lr_peak = 0.2;
    cfg.retrain = retrain_base;
    if (j.contains("retrain")) {
        cfg.retrain = detail::parse_train(j["retrain"], retrain_base);
        cfg.retrain_topk = j["retrain"].value("topk", cfg.retrain_topk);
    }
    cfg.retrain.mode = TrainableFilter::AllParams;
    cfg.retrain.validate();
    if (cfg.retrain_topk < 1) throw ConfigError("retrain.topk must be >= 1");

    if (j.contains("analysis")) {
        const auto& ja = j["analysis"];
        cfg.analysis.window = ja.value("window", cfg.analysis.window);
        cfg.analysis.threshold = ja.value("threshold", cfg.analysis.threshold);
        if (ja.contains("correlation")) {
            const auto& jc = ja["correlation"];
            cfg.analysis.correlation = jc.value("enabled", false);
            cfg.analysis.correlation_samples =
                jc.value("samples", cfg.analysis.correlation_samples);
            cfg.analysis.correlation_retrain = detail::parse_train(jc, cfg.retrain);
            cfg.analysis.correlation_retrain.mode = TrainableFilter::AllParams;
        }
        if (cfg.analysis.window < 1) throw ConfigError("analysis.window must be >= 1");
    }
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path + ": " + e.what());
    }
    return parse_run_config(j, std::filesystem::path(path).parent_path().string());
}

// Canonical serialization of the effective config; its digest identifies a
// run in the manifest and ties artifacts to the exact settings. Stage
// selection and out_dir are deliberately excluded: re-running a single stage
// must reproduce artifacts from the full run.
inline std::string canonical_config_text(const RunConfig& cfg) {
    nlohmann::json j;
    j["seed"] = cfg.seed;
    nlohmann::json js;
    js["input_channels"] = cfg.space.input_channels;
    js["image_size"] = cfg.space.image_size;
    js["stem_channels"] = cfg.space.stem_channels;
    js["stem_stride"] = cfg.space.stem_stride;
    js["head_channels"] = cfg.space.head_channels;
    js["num_classes"] = cfg.space.num_classes;
    js["bn_epsilon"] = cfg.space.bn_epsilon;
    js["bn_momentum"] = cfg.space.bn_momentum;
    js["layers"] = nlohmann::json::array();
    for (const auto& lp : cfg.space.layers)
        js["layers"].push_back({{"out", lp.out_channels}, {"stride", lp.stride}});
    j["space"] = js;
    nlohmann::json jd;
    jd["type"] = cfg.data.source == DataSource::Synthetic ? "synthetic" : "cifar10";
    if (cfg.data.source == DataSource::Synthetic) {
        jd["classes"] = cfg.data.synthetic.classes;
        jd["samples_per_class"] = cfg.data.synthetic.samples_per_class;
        jd["image_size"] = cfg.data.synthetic.image_size;
        jd["channels"] = cfg.data.synthetic.channels;
        jd["separability"] = cfg.data.synthetic.separability;
        jd["noise"] = cfg.data.synthetic.noise;
    } else {
        jd["path"] = cfg.data.cifar_path;
        jd["mean"] = cfg.data.cifar_norm.mean;
        jd["std"] = cfg.data.cifar_norm.stddev;
    }
    jd["val_fraction"] = cfg.data.val_fraction;
    j["dataset"] = jd;
    auto train_json = [](const TrainConfig& t) {
        nlohmann::json jt;
        jt["epochs"] = t.epochs;
        jt["policy"] = t.policy == SamplePolicy::Uniform ? "uniform" : "fair";
        jt["mode"] = t.mode == TrainableFilter::BnOnly ? "bn_only" : "all_params";
        jt["batch_size"] = t.batch_size;
        jt["warmup_epochs"] = t.schedule.warmup_epochs;
        jt["lr_start"] = t.schedule.lr_start;
        jt["lr_peak"] = t.schedule.lr_peak;
        jt["schedule_epochs"] = t.schedule.total_epochs;
        jt["smooth"] = t.smooth;
        jt["weight_decay"] = t.weight_decay;
        jt["momentum"] = t.momentum;
        jt["snapshot_every"] = t.snapshot_every;
        jt["train_stem_head_bn"] = t.train_stem_head_bn;
        return jt;
    };
    j["train"] = train_json(cfg.train);
    j["indicator"] = cfg.indicator;
    j["acc_recalibrate"] = cfg.acc_recalibrate;
    nlohmann::json jse;
    jse["population"] = cfg.search.population;
    jse["iterations"] = cfg.search.iterations;
    jse["total_samples"] = cfg.search.total_samples;
    jse["mutation_prob"] = cfg.search.mutation_prob;
    jse["crossover_fraction"] = cfg.search.crossover_fraction;
    jse["topk_parents"] = cfg.search.topk_parents;
    jse["flops_constraint"] = cfg.search.flops_constraint;
    j["search"] = jse;
    j["retrain"] = train_json(cfg.retrain);
    j["retrain"]["topk"] = cfg.retrain_topk;
    nlohmann::json ja;
    ja["window"] = cfg.analysis.window;
    ja["threshold"] = cfg.analysis.threshold;
    ja["correlation_enabled"] = cfg.analysis.correlation;
    if (cfg.analysis.correlation) {
        ja["correlation_samples"] = cfg.analysis.correlation_samples;
        ja["correlation_retrain"] = train_json(cfg.analysis.correlation_retrain);
    }
    j["analysis"] = ja;
    return j.dump(2);
}

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t config_digest(const RunConfig& cfg) { return fnv1a(canonical_config_text(cfg)); }

}  // namespace bnsearch
