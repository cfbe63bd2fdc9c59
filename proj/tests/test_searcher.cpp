#include <doctest.h>

#include <algorithm>
#include <set>

#include <bnsearch/searcher.hpp>

#include "oracles.hpp"

using namespace bnsearch;

namespace {

ScoreTable random_table(const SpaceConfig& space, uint64_t seed) {
    Network net = build_supernet(space, seed);
    Rng rng(seed ^ 0xabcdULL);
    oracles::randomize_gammas(net, rng);
    return score_table(net);
}

EaConfig toy_ea(uint64_t seed, int64_t constraint = 0) {
    EaConfig cfg;
    cfg.population = 20;
    cfg.iterations = 10;
    cfg.total_samples = 200;
    cfg.topk_parents = 5;
    cfg.flops_constraint = constraint;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("searcher");

TEST_CASE("EaConfig validation") {
    EaConfig bad;
    bad.population = 10;
    bad.iterations = 10;
    bad.total_samples = 1000;  // 10*10 < 1000
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = EaConfig{};
    bad.mutation_prob = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_NOTHROW(EaConfig{}.validate());  // defaults: 50 x 20 = 1000
}

TEST_CASE("evolutionary search finds the exhaustive optimum on the toy space") {
    const SpaceConfig space = SpaceConfig::toy();
    int matches = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        const ScoreTable table = random_table(space, 100 + seed);
        const Scorer scorer = make_bn_scorer(table);
        const SearchReport ea = evolutionary_search(space, scorer, toy_ea(seed));
        const SearchReport ex = exhaustive_search(space, scorer, 0);
        if (ea.best == ex.best) ++matches;
        CHECK(ea.best_score <= ex.best_score + 1e-12);
    }
    CHECK(matches >= 9);
}

TEST_CASE("unconstrained optimum equals the per-layer argmax composition") {
    const SpaceConfig space = SpaceConfig::toy();
    const ScoreTable table = random_table(space, 7);
    Architecture per_layer;
    for (int l = 0; l < 3; ++l) {
        int best = 0;
        for (int n = 1; n < 6; ++n)
            if (table.at(l, n) > table.at(l, best)) best = n;
        per_layer.ops.push_back(best);
    }
    const SearchReport ex = exhaustive_search(space, make_bn_scorer(table), 0);
    CHECK(ex.best == per_layer);
    const SearchReport ea = evolutionary_search(space, make_bn_scorer(table), toy_ea(3));
    CHECK(ea.best == per_layer);
}

TEST_CASE("constrained search never returns a violator") {
    const SpaceConfig space = SpaceConfig::toy();
    const FlopsTable ftable = flops_table(space);
    // median-ish binding constraint
    std::vector<int64_t> totals;
    Architecture a{{0, 0, 0}};
    for (a.ops[0] = 0; a.ops[0] < 6; ++a.ops[0])
        for (a.ops[1] = 0; a.ops[1] < 6; ++a.ops[1])
            for (a.ops[2] = 0; a.ops[2] < 6; ++a.ops[2]) totals.push_back(ftable.arch_total(a));
    std::sort(totals.begin(), totals.end());
    const int64_t constraint = totals[totals.size() / 2];

    for (uint64_t seed = 0; seed < 5; ++seed) {
        const ScoreTable table = random_table(space, 500 + seed);
        const SearchReport ea =
            evolutionary_search(space, make_bn_scorer(table), toy_ea(seed, constraint));
        CHECK(ea.best_flops < constraint);
        for (const auto& s : ea.topk) CHECK(s.flops < constraint);
        const SearchReport ex = exhaustive_search(space, make_bn_scorer(table), constraint);
        CHECK(ex.best_flops < constraint);
        CHECK(ea.best_score <= ex.best_score + 1e-12);
    }
}

TEST_CASE("infeasible constraint raises immediately") {
    const SpaceConfig space = SpaceConfig::toy();
    const ScoreTable table = random_table(space, 1);
    const int64_t min_total = flops_table(space).min_total();
    CHECK_THROWS_AS(evolutionary_search(space, make_bn_scorer(table), toy_ea(0, min_total)),
                    SearchError);
    CHECK_THROWS_AS(exhaustive_search(space, make_bn_scorer(table), min_total), SearchError);
}

TEST_CASE("rejection sampling stall suggests loosening the constraint") {
    // big space, constraint admits essentially only the minimal architecture
    const SpaceConfig space = SpaceConfig::desk_default();
    const ScoreTable table = random_table(space, 2);
    EaConfig cfg = toy_ea(4, flops_table(space).min_total() + 1);
    try {
        evolutionary_search(space, make_bn_scorer(table), cfg);
        FAIL("expected a stall error");
    } catch (const SearchError& e) {
        CHECK(std::string(e.what()).find("looser") != std::string::npos);
    }
}

TEST_CASE("exhaustive search details") {
    SUBCASE("L=1 is an argmax over 6 table entries") {
        SpaceConfig space = SpaceConfig::toy();
        space.layers = {{8, 1}};
        const ScoreTable table = random_table(space, 77);
        const SearchReport r = exhaustive_search(space, make_bn_scorer(table), 0);
        int best = 0;
        for (int n = 1; n < 6; ++n)
            if (table.at(0, n) > table.at(0, best)) best = n;
        CHECK(r.best.ops == std::vector<int>{best});
        CHECK(r.evaluated_count == 6);
    }
    SUBCASE("full tie breaks to the lexicographically smallest architecture") {
        const SpaceConfig space = SpaceConfig::toy();
        Network net = build_supernet(space, 5);  // fresh: every score is 1.0
        const ScoreTable table = score_table(net);
        const SearchReport r = exhaustive_search(space, make_bn_scorer(table), 0);
        CHECK(r.best.ops == std::vector<int>{0, 0, 0});
    }
    SUBCASE("space size cap") {
        const SpaceConfig space = SpaceConfig::desk_default();  // 6^8 > 1e6
        const ScoreTable table = random_table(space, 9);
        CHECK_THROWS_AS(exhaustive_search(space, make_bn_scorer(table), 0, 1000000), SearchError);
    }
}

TEST_CASE("search reports are deterministic under a fixed seed") {
    const SpaceConfig space = SpaceConfig::toy();
    const ScoreTable table = random_table(space, 31);
    const SearchReport r1 = evolutionary_search(space, make_bn_scorer(table), toy_ea(9));
    const SearchReport r2 = evolutionary_search(space, make_bn_scorer(table), toy_ea(9));
    CHECK(search_report_text(r1) == search_report_text(r2));
    CHECK(r1.evaluated_count == 200);  // budget fully spent: 20 x 10
}

TEST_CASE("BN-indicator search touches the tensor engine zero times") {
    const SpaceConfig space = SpaceConfig::toy();
    const ScoreTable table = random_table(space, 13);
    counters::reset();
    const SearchReport r = evolutionary_search(space, make_bn_scorer(table), toy_ea(5));
    CHECK(r.tensor_engine_calls == 0);
    CHECK(counters::tensor_engine_calls() == 0);
}

TEST_CASE("search report round-trips through its text form") {
    const SpaceConfig space = SpaceConfig::toy();
    const ScoreTable table = random_table(space, 15);
    const SearchReport r = evolutionary_search(space, make_bn_scorer(table), toy_ea(2, 0));
    const std::string text = search_report_text(r);
    const SearchReport parsed = parse_search_report(text);
    CHECK(parsed.best == r.best);
    CHECK(parsed.best_score == r.best_score);
    CHECK(parsed.best_flops == r.best_flops);
    CHECK(parsed.evaluated_count == r.evaluated_count);
    CHECK(parsed.space_digest == r.space_digest);
    CHECK(parsed.constraint == r.constraint);
    CHECK_THROWS_AS(parse_search_report("not a report\n"), IoError);
}

TEST_CASE("random5 baseline") {
    SpaceConfig space = SpaceConfig::toy();
    space.layers = {{8, 1}};  // |A| = 6

    SUBCASE("returns the best of exactly five samples, reproducibly") {
        std::vector<Architecture> sampled;
        const Scorer recorder = [&sampled](const Architecture& a) {
            sampled.push_back(a);
            return 0.1 * a.ops[0];
        };
        Rng rng(21);
        const Architecture best = random5_baseline(space, recorder, rng);
        CHECK(sampled.size() == 5);
        CHECK(std::find(sampled.begin(), sampled.end(), best) != sampled.end());
        int max_idx = 0;
        for (const auto& a : sampled) max_idx = std::max(max_idx, a.ops[0]);
        CHECK(best.ops[0] == max_idx);

        Rng rng2(21);
        std::vector<Architecture> sampled2;
        const Scorer recorder2 = [&sampled2](const Architecture& a) {
            sampled2.push_back(a);
            return 0.1 * a.ops[0];
        };
        CHECK(random5_baseline(space, recorder2, rng2) == best);
    }

    SUBCASE("dominant-arch selection frequency matches the inclusion probability") {
        const Architecture dominant{{3}};
        const Scorer oracle = [&dominant](const Architecture& a) {
            return a == dominant ? 1.0 : 0.05 * a.ops[0];
        };
        Rng rng(99);
        const int trials = 20000;
        int hits = 0;
        for (int t = 0; t < trials; ++t)
            if (random5_baseline(space, oracle, rng) == dominant) ++hits;
        const double freq = static_cast<double>(hits) / trials;
        const double expect = 1.0 - std::pow(5.0 / 6.0, 5.0);  // inclusion probability
        const double sigma = std::sqrt(expect * (1.0 - expect) / trials);
        CHECK(std::abs(freq - expect) <= 4.0 * sigma);
    }

    SUBCASE("acc-indicator flavour runs end to end") {
        Network net = build_supernet(space, 3);
        SyntheticSpec dspec;
        dspec.classes = 4;
        dspec.samples_per_class = 4;
        dspec.image_size = 16;
        const Dataset ds = gen_synthetic(dspec, 5);
        Rng rng(6);
        const Architecture a = random5_baseline(space, net, ds, rng);
        CHECK(a.ops.size() == 1);
        CHECK(a.ops[0] >= 0);
        CHECK(a.ops[0] < 6);
    }
}

TEST_SUITE_END();
