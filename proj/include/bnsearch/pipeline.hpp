#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "analysis.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "searcher.hpp"
#include "trainer.hpp"

namespace bnsearch {

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

struct PipelineResult {
    std::vector<std::string> stages_run;
    std::string out_dir;
    std::string manifest;
    std::vector<StageTiming> timings;
    SearchReport search;       // filled when the search stage ran
    double retrain_accuracy = -1.0;
};

namespace detail {

inline std::string fmt_hex64(uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct StageClock {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double stop() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

[[noreturn]] inline void stage_fail(const std::string& stage, const std::string& what) {
    throw Error("stage " + stage + ": " + what);
}

inline void require_artifact(const std::string& stage, const std::string& path,
                             const std::string& producer) {
    if (!std::filesystem::exists(path))
        stage_fail(stage, "missing artifact " + path + " — run the " + producer + " stage first");
}

}  // namespace detail

inline Dataset build_dataset(const RunConfig& cfg) {
    if (cfg.data.source == DataSource::Synthetic)
        return gen_synthetic(cfg.data.synthetic, cfg.seed ^ 0xda7a5e7ULL);
    return load_cifar10_binary(cfg.data.cifar_path, cfg.data.cifar_norm);
}

// Runs the selected stages in pipeline order. Every stage persists its
// outputs under out_dir and reads its inputs from there, so stages can be
// re-run independently. All emitted artifacts are deterministic functions of
// (config, seed); wall-clock timings go to a separate timings.txt.
inline PipelineResult run_pipeline(const RunConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const auto out = [&cfg](const std::string& name) {
        return (fs::path(cfg.out_dir) / name).string();
    };
    const uint64_t cfg_digest = config_digest(cfg);
    const uint64_t sp_digest = space_digest(cfg.space);
    write_file(out("config.canonical.json"), canonical_config_text(cfg));

    auto selected = [&cfg](const char* s) {
        for (const auto& st : cfg.stages)
            if (st == s) return true;
        return false;
    };

    PipelineResult result;
    result.out_dir = cfg.out_dir;
    Dataset dataset = build_dataset(cfg);
    if (dataset.empty()) throw ConfigError("pipeline: dataset is empty");
    const SplitView split = split_train_val(dataset, cfg.data.val_fraction);
    const Dataset train_data = subset(dataset, split.train);
    const Dataset val_data = split.val.empty() ? train_data : subset(dataset, split.val);

    std::string manifest = "bnsearch run manifest v1\n";
    manifest += "config_digest: " + detail::fmt_hex64(cfg_digest) + "\n";
    manifest += "space_digest: " + detail::fmt_hex64(sp_digest) + "\n";
    manifest += "seed: " + std::to_string(cfg.seed) + "\n";
    manifest += "dataset: " +
                std::string(cfg.data.source == DataSource::Synthetic ? "synthetic" : "cifar10") +
                " total=" + std::to_string(dataset.size()) +
                " train=" + std::to_string(train_data.size()) +
                " val=" + std::to_string(val_data.size()) + "\n";

    if (selected("train")) {
        detail::StageClock clock;
        try {
            Network net = build_supernet(cfg.space, cfg.seed);
            Rng rng(cfg.seed ^ 0x7121a11ULL);
            TrainResult tr = train_supernet(net, train_data, cfg.train, rng);
            save_checkpoint(net, static_cast<uint32_t>(cfg.train.epochs), out("checkpoint.bin"));
            write_file(out("snapshots.bin"), encode_snapshots(sp_digest, tr.snapshots));
            write_file(out("score_table.csv"), score_table_csv(cfg.space, score_table(net)));
            manifest += "[train]\n";
            manifest += "epochs: " + std::to_string(cfg.train.epochs) + "\n";
            manifest += std::string("policy: ") +
                        (cfg.train.policy == SamplePolicy::Uniform ? "uniform" : "fair") + "\n";
            manifest += std::string("mode: ") +
                        (cfg.train.mode == TrainableFilter::BnOnly ? "bn_only" : "all_params") + "\n";
            manifest += "sgd_steps: " + std::to_string(tr.sgd_steps) + "\n";
            if (!tr.epoch_loss.empty()) {
                manifest += "first_epoch_loss: " + detail::fmt_g17(tr.epoch_loss.front()) + "\n";
                manifest += "final_epoch_loss: " + detail::fmt_g17(tr.epoch_loss.back()) + "\n";
            }
            manifest += "snapshots: " + std::to_string(tr.snapshots.size()) + "\n";
            manifest += "checkpoint: checkpoint.bin\n";
        } catch (const std::exception& e) {
            detail::stage_fail("train", e.what());
        }
        result.timings.push_back({"train", clock.stop()});
        result.stages_run.push_back("train");
    }

    if (selected("search")) {
        detail::StageClock clock;
        try {
            detail::require_artifact("search", out("checkpoint.bin"), "train");
            Network net = build_supernet(cfg.space, cfg.seed);
            apply_checkpoint(net, load_checkpoint(out("checkpoint.bin")));
            SearchReport report;
            if (cfg.indicator == "bn") {
                const ScoreTable table = score_table(net);
                report = evolutionary_search(cfg.space, make_bn_scorer(table), cfg.search);
            } else {
                report = evolutionary_search(
                    cfg.space, make_acc_scorer(net, val_data, 64, cfg.acc_recalibrate), cfg.search);
            }
            result.search = report;
            write_file(out("search_report.txt"),
                       "config_digest: " + detail::fmt_hex64(cfg_digest) + "\n" +
                           search_report_text(report));
            manifest += "[search]\n";
            manifest += "indicator: " + cfg.indicator + "\n";
            manifest += "evaluated: " + std::to_string(report.evaluated_count) + "\n";
            manifest += "tensor_engine_calls: " + std::to_string(report.tensor_engine_calls) + "\n";
            manifest += "best_arch: " + report.best.str() + "\n";
            manifest += "best_score: " + detail::fmt_g17(report.best_score) + "\n";
            manifest += "best_flops: " + std::to_string(report.best_flops) + "\n";
            manifest += "constraint: " +
                        (report.constraint > 0 ? std::to_string(report.constraint)
                                               : std::string("none")) + "\n";
            manifest += "report: search_report.txt\n";
        } catch (const std::exception& e) {
            detail::stage_fail("search", e.what());
        }
        result.timings.push_back({"search", clock.stop()});
        result.stages_run.push_back("search");
    }

    if (selected("retrain")) {
        detail::StageClock clock;
        try {
            detail::require_artifact("retrain", out("search_report.txt"), "search");
            SearchReport report = parse_search_report(read_file(out("search_report.txt")));
            if (report.space_digest != sp_digest)
                throw IoError("search report was produced for a different space plan");
            std::vector<Architecture> finalists;
            finalists.push_back(report.best);
            for (const auto& s : report.topk) {
                if (static_cast<int>(finalists.size()) >= cfg.retrain_topk) break;
                if (std::find(finalists.begin(), finalists.end(), s.arch) == finalists.end())
                    finalists.push_back(s.arch);
            }
            std::string text = "config_digest: " + detail::fmt_hex64(cfg_digest) + "\n";
            double best_acc = -1.0;
            Architecture best_arch;
            for (size_t i = 0; i < finalists.size(); ++i) {
                const RetrainResult rr =
                    retrain_subnet(cfg.space, finalists[i], train_data, val_data, cfg.retrain,
                                   cfg.seed ^ (0x8e74a1ULL + i));
                text += "arch: " + finalists[i].str() +
                        " val_accuracy: " + detail::fmt_g17(rr.val_accuracy) + "\n";
                if (rr.val_accuracy > best_acc) {
                    best_acc = rr.val_accuracy;
                    best_arch = finalists[i];
                    Network model = rr.model;
                    save_checkpoint(model, static_cast<uint32_t>(cfg.retrain.epochs),
                                    out("retrained.bin"));
                }
            }
            text += "best_arch: " + best_arch.str() + "\n";
            text += "best_val_accuracy: " + detail::fmt_g17(best_acc) + "\n";
            write_file(out("retrain.txt"), text);
            result.retrain_accuracy = best_acc;
            manifest += "[retrain]\n";
            manifest += "finalists: " + std::to_string(finalists.size()) + "\n";
            manifest += "epochs: " + std::to_string(cfg.retrain.epochs) + "\n";
            manifest += "best_arch: " + best_arch.str() + "\n";
            manifest += "val_accuracy: " + detail::fmt_g17(best_acc) + "\n";
            manifest += "model: retrained.bin\n";
        } catch (const std::exception& e) {
            detail::stage_fail("retrain", e.what());
        }
        result.timings.push_back({"retrain", clock.stop()});
        result.stages_run.push_back("retrain");
    }

    if (selected("analyze")) {
        detail::StageClock clock;
        try {
            detail::require_artifact("analyze", out("snapshots.bin"), "train");
            auto [snap_digest, snaps] = decode_snapshots(read_file(out("snapshots.bin")),
                                                         out("snapshots.bin"));
            if (snap_digest != sp_digest)
                throw IoError("snapshots were produced for a different space plan");
            std::string text = "config_digest: " + detail::fmt_hex64(cfg_digest) + "\n";
            manifest += "[analyze]\n";
            manifest += "snapshots: " + std::to_string(snaps.size()) + "\n";
            if (snaps.size() >= 2) {
                const SimilarityMatrix m = similarity_matrix(snaps);
                write_file(out("similarity.csv"), similarity_csv(m));
                write_file(out("similarity.pgm"), similarity_pgm(m));
                const auto conv = convergence_epoch(m, cfg.analysis.window, cfg.analysis.threshold);
                text += "convergence_window: " + std::to_string(cfg.analysis.window) + "\n";
                text += "convergence_threshold: " + detail::fmt_g17(cfg.analysis.threshold) + "\n";
                text += "convergence_epoch: " +
                        (conv ? std::to_string(*conv) : std::string("none")) + "\n";
                manifest += "convergence_epoch: " +
                            (conv ? std::to_string(*conv) : std::string("none")) + "\n";
            } else {
                text += "convergence_epoch: insufficient snapshots\n";
                manifest += "convergence_epoch: insufficient snapshots\n";
            }
            if (cfg.analysis.correlation) {
                detail::require_artifact("analyze", out("checkpoint.bin"), "train");
                Network net = build_supernet(cfg.space, cfg.seed);
                apply_checkpoint(net, load_checkpoint(out("checkpoint.bin")));
                const CorrelationResult corr = correlation_study(
                    cfg.space, net, train_data, val_data, cfg.analysis.correlation_samples,
                    cfg.analysis.correlation_retrain, cfg.seed ^ 0xc0441ULL);
                write_file(out("scatter.csv"), scatter_csv(corr));
                text += "correlation_samples: " + std::to_string(corr.points.size()) + "\n";
                text += "kendall_tau: " +
                        (corr.tau ? detail::fmt_g17(*corr.tau) : std::string("undefined")) + "\n";
                manifest += "kendall_tau: " +
                            (corr.tau ? detail::fmt_g17(*corr.tau) : std::string("undefined")) + "\n";
            }
            write_file(out("analysis.txt"), text);
        } catch (const std::exception& e) {
            detail::stage_fail("analyze", e.what());
        }
        result.timings.push_back({"analyze", clock.stop()});
        result.stages_run.push_back("analyze");
    }

    std::string stages_line = "stages:";
    for (const auto& s : result.stages_run) stages_line += " " + s;
    manifest += stages_line + "\n";
    write_file(out("manifest.txt"), manifest);
    result.manifest = manifest;

    std::string timings = "stage seconds\n";
    char buf[96];
    for (const auto& t : result.timings) {
        std::snprintf(buf, sizeof(buf), "%s %.3f\n", t.stage.c_str(), t.seconds);
        timings += buf;
    }
    write_file(out("timings.txt"), timings);
    return result;
}

}  // namespace bnsearch
