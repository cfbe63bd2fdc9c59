#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "indicator.hpp"
#include "space.hpp"

namespace bnsearch {

struct EaConfig {
    int population = 50;
    int iterations = 20;
    int total_samples = 1000;
    double mutation_prob = 0.1;
    double crossover_fraction = 0.5;
    int topk_parents = 10;
    int64_t flops_constraint = 0;  // 0 means unconstrained
    uint64_t seed = 0;

    void validate() const {
        if (population < 1 || iterations < 1 || total_samples < 1)
            throw ConfigError("search: population, iterations, total_samples must be >= 1");
        if (static_cast<int64_t>(population) * iterations < total_samples)
            throw ConfigError("search: population * iterations must cover total_samples");
        if (mutation_prob < 0.0 || mutation_prob > 1.0 || crossover_fraction < 0.0 ||
            crossover_fraction > 1.0)
            throw ConfigError("search: probabilities must be in [0,1]");
        if (topk_parents < 1) throw ConfigError("search: topk_parents must be >= 1");
        if (flops_constraint < 0) throw ConfigError("search: flops_constraint must be >= 0");
    }
};

struct ScoredArch {
    Architecture arch;
    double score = 0.0;
    int64_t flops = 0;
};

struct SearchReport {
    Architecture best;
    double best_score = 0.0;
    int64_t best_flops = 0;
    std::vector<ScoredArch> topk;
    int evaluated_count = 0;
    int64_t constraint = 0;
    uint64_t space_digest = 0;
    uint64_t tensor_engine_calls = 0;   // engine activity while scoring
    double scoring_wall_seconds = 0.0;  // time spent inside the scorer
    double total_wall_seconds = 0.0;
};

using Scorer = std::function<double(const Architecture&)>;

inline Scorer make_bn_scorer(const ScoreTable& table) {
    return [&table](const Architecture& a) { return subnet_score(table, a).value; };
}

inline Scorer make_acc_scorer(Network& supernet, const Dataset& val_split, int batch_size = 64,
                              bool recalibrate = false) {
    return [&supernet, &val_split, batch_size, recalibrate](const Architecture& a) {
        return acc_indicator(supernet, a, val_split, batch_size, recalibrate);
    };
}

namespace detail {

// Higher score wins; exact ties go to the lexicographically smaller
// architecture so runs are reproducible.
inline bool better(double score_a, const Architecture& a, double score_b, const Architecture& b) {
    if (score_a != score_b) return score_a > score_b;
    return a.ops < b.ops;
}

class TopList {
public:
    explicit TopList(size_t cap) : cap_(cap) {}

    void offer(const ScoredArch& s) {
        for (const auto& e : entries_)
            if (e.arch == s.arch) return;
        size_t pos = entries_.size();
        while (pos > 0 && better(s.score, s.arch, entries_[pos - 1].score, entries_[pos - 1].arch))
            --pos;
        entries_.insert(entries_.begin() + static_cast<std::ptrdiff_t>(pos), s);
        if (entries_.size() > cap_) entries_.pop_back();
    }

    const std::vector<ScoredArch>& entries() const { return entries_; }
    bool empty() const { return entries_.empty(); }

private:
    size_t cap_;
    std::vector<ScoredArch> entries_;
};

}  // namespace detail

// Algorithm: seed a population with feasible uniform samples, then evolve by
// crossover of top-k parents and per-gene mutation, rejecting architectures
// over the FLOPs bound, until the sampling budget is spent. Returns the best
// architecture ever scored.
inline SearchReport evolutionary_search(const SpaceConfig& space, const Scorer& scorer,
                                        const EaConfig& cfg) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const uint64_t engine_calls_before = counters::tensor_engine_calls();
    const FlopsTable ftable = flops_table(space);
    const int64_t constraint = cfg.flops_constraint;
    if (constraint > 0 && ftable.min_total() >= constraint)
        throw SearchError("search: constraint " + std::to_string(constraint) +
                          " is infeasible; the smallest architecture needs " +
                          std::to_string(ftable.min_total()) + " MACs");

    Rng rng(cfg.seed);
    const int L = space.num_layers(), N = SpaceConfig::num_candidates;
    std::map<Architecture, double> memo;
    detail::TopList top(static_cast<size_t>(std::max(cfg.topk_parents, 10)));
    int evaluated = 0;
    double scoring_seconds = 0.0;

    auto feasible = [&](const Architecture& a) {
        return constraint == 0 || ftable.arch_total(a) < constraint;
    };
    auto score_arch = [&](const Architecture& a) {
        ++evaluated;  // duplicates count against the sampling budget
        auto it = memo.find(a);
        if (it == memo.end()) {
            const auto t0 = std::chrono::steady_clock::now();
            const double s = scorer(a);
            scoring_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            it = memo.emplace(a, s).first;
        }
        top.offer({a, it->second, ftable.arch_total(a)});
    };

    const int64_t stall_limit = 10LL * cfg.population;
    auto next_feasible = [&](auto&& generate) -> Architecture {
        int64_t rejections = 0;
        for (;;) {
            Architecture a = generate();
            if (feasible(a)) return a;
            if (++rejections > stall_limit)
                throw SearchError("search: rejection sampling stalled after " +
                                  std::to_string(rejections) +
                                  " attempts; try a looser FLOPs constraint");
        }
    };

    std::vector<Architecture> population;
    population.reserve(static_cast<size_t>(cfg.population));
    for (int i = 0; i < cfg.population && evaluated < cfg.total_samples; ++i) {
        Architecture a = next_feasible([&] { return sample_uniform(space, rng); });
        score_arch(a);
        population.push_back(std::move(a));
    }

    for (int gen = 1; gen < cfg.iterations && evaluated < cfg.total_samples; ++gen) {
        const auto& parents = top.entries();
        const int parent_count = std::min<int>(cfg.topk_parents, static_cast<int>(parents.size()));
        if (parent_count == 0) break;
        const int target = std::min(cfg.population, cfg.total_samples - evaluated);
        const int n_cross = static_cast<int>(target * cfg.crossover_fraction);
        std::vector<Architecture> next_pop;
        next_pop.reserve(static_cast<size_t>(target));
        for (int i = 0; i < target; ++i) {
            Architecture child = next_feasible([&] {
                if (i < n_cross) {
                    const Architecture& p1 = parents[static_cast<size_t>(rng.next_int(parent_count))].arch;
                    const Architecture& p2 = parents[static_cast<size_t>(rng.next_int(parent_count))].arch;
                    Architecture c;
                    c.ops.resize(static_cast<size_t>(L));
                    for (int l = 0; l < L; ++l)
                        c.ops[static_cast<size_t>(l)] =
                            rng.next_int(2) ? p1.ops[static_cast<size_t>(l)] : p2.ops[static_cast<size_t>(l)];
                    return c;
                }
                Architecture c = parents[static_cast<size_t>(rng.next_int(parent_count))].arch;
                for (int l = 0; l < L; ++l)
                    if (rng.uniform() < cfg.mutation_prob)
                        c.ops[static_cast<size_t>(l)] = rng.next_int(N);
                return c;
            });
            score_arch(child);
            next_pop.push_back(std::move(child));
        }
        population = std::move(next_pop);
    }

    if (top.empty()) throw SearchError("search: no architecture was evaluated");
    SearchReport report;
    report.best = top.entries().front().arch;
    report.best_score = top.entries().front().score;
    report.best_flops = top.entries().front().flops;
    report.topk.assign(top.entries().begin(),
                       top.entries().begin() +
                           static_cast<std::ptrdiff_t>(std::min<size_t>(10, top.entries().size())));
    report.evaluated_count = evaluated;
    report.constraint = constraint;
    report.space_digest = space_digest(space);
    report.tensor_engine_calls = counters::tensor_engine_calls() - engine_calls_before;
    report.scoring_wall_seconds = scoring_seconds;
    report.total_wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// Ground-truth argmax over the full space; tractable only while N^L stays
// under the cap.
inline SearchReport exhaustive_search(const SpaceConfig& space, const Scorer& scorer,
                                      int64_t constraint, int64_t cap = 1000000) {
    const auto t_start = std::chrono::steady_clock::now();
    const uint64_t engine_calls_before = counters::tensor_engine_calls();
    const int L = space.num_layers(), N = SpaceConfig::num_candidates;
    int64_t total = 1;
    for (int l = 0; l < L; ++l) {
        total *= N;
        if (total > cap)
            throw SearchError("exhaustive_search: space has more than " + std::to_string(cap) +
                              " architectures");
    }
    const FlopsTable ftable = flops_table(space);
    detail::TopList top(10);
    int evaluated = 0;
    double scoring_seconds = 0.0;
    Architecture a;
    a.ops.assign(static_cast<size_t>(L), 0);
    for (int64_t i = 0; i < total; ++i) {
        if (constraint == 0 || ftable.arch_total(a) < constraint) {
            const auto t0 = std::chrono::steady_clock::now();
            const double s = scorer(a);
            scoring_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            ++evaluated;
            top.offer({a, s, ftable.arch_total(a)});
        }
        for (int l = L - 1; l >= 0; --l) {  // odometer increment, lexicographic order
            if (++a.ops[static_cast<size_t>(l)] < N) break;
            a.ops[static_cast<size_t>(l)] = 0;
        }
    }
    if (top.empty())
        throw SearchError("exhaustive_search: no architecture satisfies the constraint");
    SearchReport report;
    report.best = top.entries().front().arch;
    report.best_score = top.entries().front().score;
    report.best_flops = top.entries().front().flops;
    report.topk = top.entries();
    report.evaluated_count = evaluated;
    report.constraint = constraint;
    report.space_digest = space_digest(space);
    report.tensor_engine_calls = counters::tensor_engine_calls() - engine_calls_before;
    report.scoring_wall_seconds = scoring_seconds;
    report.total_wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// Ablation baseline: sample five subnets, keep the one with the best
// inherited-weight accuracy. The evaluator hook exists so tests can study
// the sampling behaviour with a synthetic oracle.
inline Architecture random5_baseline(const SpaceConfig& space, const Scorer& evaluate_arch,
                                     Rng& rng, int64_t constraint = 0) {
    const FlopsTable ftable = flops_table(space);
    if (constraint > 0 && ftable.min_total() >= constraint)
        throw SearchError("random5: constraint is infeasible");
    Architecture best;
    double best_score = 0.0;
    bool have = false;
    for (int i = 0; i < 5; ++i) {
        Architecture a;
        int64_t rejections = 0;
        for (;;) {
            a = sample_uniform(space, rng);
            if (constraint == 0 || ftable.arch_total(a) < constraint) break;
            if (++rejections > 500)
                throw SearchError("random5: rejection sampling stalled; loosen the constraint");
        }
        const double s = evaluate_arch(a);
        if (!have || detail::better(s, a, best_score, best)) {
            best = a;
            best_score = s;
            have = true;
        }
    }
    return best;
}

inline Architecture random5_baseline(const SpaceConfig& space, Network& supernet,
                                     const Dataset& val_split, Rng& rng, int64_t constraint = 0,
                                     int batch_size = 64) {
    return random5_baseline(
        space,
        [&](const Architecture& a) { return acc_indicator(supernet, a, val_split, batch_size); },
        rng, constraint);
}

// ---------------------------------------------------------------------------
// Report file format (deterministic; wall times deliberately live elsewhere)

inline std::string search_report_text(const SearchReport& r) {
    char buf[256];
    std::string out = "bnsearch search report v1\n";
    std::snprintf(buf, sizeof(buf), "space_digest: %016llx\n",
                  static_cast<unsigned long long>(r.space_digest));
    out += buf;
    out += "constraint: " + (r.constraint > 0 ? std::to_string(r.constraint) : std::string("none")) + "\n";
    out += "evaluated: " + std::to_string(r.evaluated_count) + "\n";
    out += "tensor_engine_calls: " + std::to_string(r.tensor_engine_calls) + "\n";
    out += "best_arch: " + r.best.str() + "\n";
    std::string kernels, expansions;
    for (size_t l = 0; l < r.best.ops.size(); ++l) {
        const CandidateSpec& c = candidate_menu()[static_cast<size_t>(r.best.ops[l])];
        if (l) {
            kernels += ",";
            expansions += ",";
        }
        kernels += std::to_string(c.kernel_size);
        expansions += std::to_string(c.expansion_ratio);
    }
    out += "best_kernels: " + kernels + "\n";
    out += "best_expansions: " + expansions + "\n";
    std::snprintf(buf, sizeof(buf), "best_score: %.17g\n", r.best_score);
    out += buf;
    out += "best_flops: " + std::to_string(r.best_flops) + "\n";
    out += "topk:\n";
    for (size_t i = 0; i < r.topk.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu: arch=%s;score=%.17g;flops=%lld\n", i + 1,
                      r.topk[i].arch.str().c_str(), r.topk[i].score,
                      static_cast<long long>(r.topk[i].flops));
        out += buf;
    }
    return out;
}

// Pulls the fields later stages need back out of a report file.
inline SearchReport parse_search_report(const std::string& text) {
    SearchReport r;
    size_t pos = 0;
    bool saw_header = false;
    while (pos < text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line == "bnsearch search report v1") {
            saw_header = true;
            continue;
        }
        const size_t colon = line.find(": ");
        if (colon == std::string::npos) continue;
        const std::string key = line.substr(0, colon);
        const std::string value = line.substr(colon + 2);
        if (key == "best_arch") {
            r.best.ops.clear();
            size_t p = 0;
            while (p <= value.size() && !value.empty()) {
                size_t comma = value.find(',', p);
                if (comma == std::string::npos) comma = value.size();
                r.best.ops.push_back(std::stoi(value.substr(p, comma - p)));
                p = comma + 1;
                if (comma == value.size()) break;
            }
        } else if (key == "best_score") {
            r.best_score = std::stod(value);
        } else if (key == "best_flops") {
            r.best_flops = std::stoll(value);
        } else if (key == "evaluated") {
            r.evaluated_count = std::stoi(value);
        } else if (key == "tensor_engine_calls") {
            r.tensor_engine_calls = static_cast<uint64_t>(std::stoull(value));
        } else if (key == "space_digest") {
            r.space_digest = std::stoull(value, nullptr, 16);
        } else if (key == "constraint") {
            r.constraint = value == "none" ? 0 : std::stoll(value);
        }
    }
    if (!saw_header) throw IoError("not a bnsearch search report");
    return r;
}

}  // namespace bnsearch
