// bnsearch command-line tool: train a supernet's BN parameters, search
// architectures with the BN indicator, retrain the winner, and export the
// analysis artifacts. Everything is driven by one JSON config file.

#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include <bnsearch/checkpoint.hpp>
#include <bnsearch/indicator.hpp>
#include <bnsearch/pipeline.hpp>

namespace fs = std::filesystem;
using namespace bnsearch;

namespace {

struct CommonOpts {
    std::string config_path;
    uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", opts.seed, "override the config seed")
        ->each([&opts](const std::string&) { opts.seed_set = true; });
    cmd->add_option("--out", opts.out_dir, "override the output directory");
}

RunConfig load_with_overrides(const CommonOpts& opts) {
    RunConfig cfg = load_run_config(opts.config_path);
    if (opts.seed_set) {
        cfg.seed = opts.seed;
        cfg.search.seed = cfg.seed ^ 0x5ea5c4ULL;
    }
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    return cfg;
}

int run_stages(const CommonOpts& opts, std::vector<std::string> stages) {
    RunConfig cfg = load_with_overrides(opts);
    if (!stages.empty()) cfg.stages = std::move(stages);
    const PipelineResult result = run_pipeline(cfg);
    std::printf("%s", result.manifest.c_str());
    std::printf("artifacts: %s\n", result.out_dir.c_str());
    for (const auto& t : result.timings) std::printf("%-8s %.3fs\n", t.stage.c_str(), t.seconds);
    return 0;
}

Architecture parse_arch_option(const std::string& text, int expected_layers) {
    Architecture a;
    size_t pos = 0;
    while (pos <= text.size() && !text.empty()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        a.ops.push_back(std::stoi(text.substr(pos, comma - pos)));
        pos = comma + 1;
        if (comma == text.size()) break;
    }
    if (static_cast<int>(a.ops.size()) != expected_layers)
        throw ConfigError("--arch needs " + std::to_string(expected_layers) +
                          " comma-separated indices, got " + std::to_string(a.ops.size()));
    return a;
}

int cmd_score(const CommonOpts& opts, const std::string& arch_text,
              const std::string& checkpoint_override) {
    const RunConfig cfg = load_with_overrides(opts);
    const Architecture arch = parse_arch_option(arch_text, cfg.space.num_layers());
    validate_arch(cfg.space, arch);

    Network net = build_supernet(cfg.space, cfg.seed);
    const std::string ckpt_path = checkpoint_override.empty()
                                      ? (fs::path(cfg.out_dir) / "checkpoint.bin").string()
                                      : checkpoint_override;
    if (fs::exists(ckpt_path)) {
        apply_checkpoint(net, load_checkpoint(ckpt_path));
        std::printf("checkpoint: %s\n", ckpt_path.c_str());
    } else {
        std::printf("checkpoint: none (scoring the freshly initialized supernet)\n");
    }
    const ScoreTable table = score_table(net);
    const SubnetScore score = subnet_score(table, arch);
    const FlopsReport fl = flops(cfg.space, arch);
    std::printf("arch: %s\n", arch.str().c_str());
    for (size_t l = 0; l < arch.ops.size(); ++l) {
        const CandidateSpec& c = candidate_menu()[static_cast<size_t>(arch.ops[l])];
        std::printf("  layer %zu: candidate %d (kernel %d, expansion %d)  op_score %.6f  macs %lld\n",
                    l, arch.ops[l], c.kernel_size, c.expansion_ratio,
                    table.at(static_cast<int>(l), arch.ops[l]),
                    static_cast<long long>(fl.per_layer[l]));
    }
    std::printf("bn_score: %.17g\n", score.value);
    std::printf("flops_total: %lld (stem %lld, head %lld)\n", static_cast<long long>(fl.total),
                static_cast<long long>(fl.stem), static_cast<long long>(fl.head));
    return 0;
}

int cmd_report(const std::string& out_dir) {
    const fs::path dir(out_dir);
    const fs::path manifest = dir / "manifest.txt";
    if (!fs::exists(manifest))
        throw IoError("no manifest.txt under " + out_dir + " — has a run finished there?");
    std::printf("%s", read_file(manifest.string()).c_str());
    const fs::path timings = dir / "timings.txt";
    if (fs::exists(timings)) std::printf("\n%s", read_file(timings.string()).c_str());
    for (const char* name : {"search_report.txt", "retrain.txt", "analysis.txt"}) {
        const fs::path p = dir / name;
        if (fs::exists(p)) std::printf("\n--- %s ---\n%s", name, read_file(p.string()).c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BN-indicator one-shot architecture search"};
    app.require_subcommand(1);

    CommonOpts run_opts, train_opts, search_opts, retrain_opts, analyze_opts, score_opts;
    std::string arch_text, checkpoint_override, report_dir;
    CommonOpts report_opts;

    CLI::App* run = app.add_subcommand("run", "run the stages selected in the config");
    add_common(run, run_opts);
    CLI::App* train = app.add_subcommand("train", "train the supernet and snapshot BN state");
    add_common(train, train_opts);
    CLI::App* search = app.add_subcommand("search", "search subnets from a trained checkpoint");
    add_common(search, search_opts);
    CLI::App* retrain = app.add_subcommand("retrain", "retrain the searched architecture from scratch");
    add_common(retrain, retrain_opts);
    CLI::App* analyze = app.add_subcommand("analyze", "rank-stability and correlation analysis");
    add_common(analyze, analyze_opts);

    CLI::App* score = app.add_subcommand("score", "score one architecture from a checkpoint");
    add_common(score, score_opts);
    score->add_option("--arch", arch_text, "comma-separated candidate indices, one per layer")
        ->required();
    score->add_option("--checkpoint", checkpoint_override, "explicit checkpoint path");

    CLI::App* report = app.add_subcommand("report", "print the manifest and reports of a run");
    report->add_option("--out", report_dir, "run output directory");
    report->add_option("--config", report_opts.config_path, "config to locate the run directory")
        ->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return run_stages(run_opts, {});
        if (train->parsed()) return run_stages(train_opts, {"train"});
        if (search->parsed()) return run_stages(search_opts, {"search"});
        if (retrain->parsed()) return run_stages(retrain_opts, {"retrain"});
        if (analyze->parsed()) return run_stages(analyze_opts, {"analyze"});
        if (score->parsed()) return cmd_score(score_opts, arch_text, checkpoint_override);
        if (report->parsed()) {
            std::string dir = report_dir;
            if (dir.empty() && !report_opts.config_path.empty())
                dir = load_run_config(report_opts.config_path).out_dir;
            if (dir.empty()) throw ConfigError("report: give --out or --config");
            return cmd_report(dir);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
