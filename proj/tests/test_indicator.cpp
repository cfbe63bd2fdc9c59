#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <map>

#include <bnsearch/checkpoint.hpp>
#include <bnsearch/indicator.hpp>
#include <bnsearch/supernet.hpp>

#include "oracles.hpp"

using namespace bnsearch;

namespace {

// Minimal standalone checkpoint parser. Reads the parameter section straight
// from the bytes, independent of the library's decoder, and returns the
// requested tensor's payload.
std::vector<float> read_param_from_bytes(const std::string& bytes, const std::string& wanted) {
    size_t pos = 0;
    auto u8 = [&]() { return static_cast<unsigned char>(bytes.at(pos++)); };
    auto u16 = [&]() {
        unsigned v = u8();
        return v | (static_cast<unsigned>(u8()) << 8);
    };
    auto u32 = [&]() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(u8()) << (8 * i);
        return v;
    };
    REQUIRE(bytes.substr(0, 8) == "BNSCKPT1");
    pos = 8;
    u32();     // version
    pos += 8;  // space digest
    u32();     // epoch
    const uint32_t count = u32();
    for (uint32_t i = 0; i < count; ++i) {
        const unsigned name_len = u16();
        const std::string name = bytes.substr(pos, name_len);
        pos += name_len;
        const unsigned ndim = u8();
        int64_t numel = 1;
        for (unsigned d = 0; d < ndim; ++d) numel *= u32();
        if (name == wanted) {
            std::vector<float> out(static_cast<size_t>(numel));
            for (auto& v : out) {
                uint32_t raw = u32();
                std::memcpy(&v, &raw, 4);
            }
            return out;
        }
        pos += static_cast<size_t>(numel) * 4;
    }
    FAIL("parameter ", wanted, " not found in checkpoint bytes");
    return {};
}

}  // namespace

TEST_SUITE_BEGIN("indicator");

TEST_CASE("op_score is the mean absolute gamma of the last BN") {
    const SpaceConfig space = SpaceConfig::toy();
    Network net = build_supernet(space, 1);

    SUBCASE("fresh supernet scores 1.0 everywhere") {
        for (int l = 0; l < net.num_layers(); ++l)
            for (int n = 0; n < 6; ++n) CHECK(op_score(net, l, n).value == 1.0);
    }
    SUBCASE("hand-set gamma vector") {
        Tensor& g = net.layers[1].ops[2].project.bn.gamma.value;
        REQUIRE(g.numel() >= 4);
        g.fill(0.5f);  // fill the tail so the expected mean stays exact
        g[0] = -0.5f;
        g[1] = 0.5f;
        g[2] = 1.0f;
        g[3] = 0.0f;
        const double expect =
            (0.5 + 0.5 + 1.0 + 0.0 + 0.5 * static_cast<double>(g.numel() - 4)) /
            static_cast<double>(g.numel());
        CHECK(op_score(net, 1, 2).value == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("direct mean of absolutes on a length-4 BN") {
        SpaceConfig small = SpaceConfig::toy();
        small.layers = {{4, 1}};
        small.stem_channels = 4;
        Network tiny = build_supernet(small, 1);
        Tensor& g = tiny.layers[0].ops[0].project.bn.gamma.value;
        REQUIRE(g.numel() == 4);
        g[0] = -0.5f;
        g[1] = 0.5f;
        g[2] = 1.0f;
        g[3] = 0.0f;
        CHECK(op_score(tiny, 0, 0).value == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("reads only gamma: beta, running stats, conv weights are irrelevant") {
        Rng rng(9);
        oracles::randomize_gammas(net, rng);
        const double before = op_score(net, 0, 3).value;
        CandidateOp& op = net.layers[0].ops[3];
        op.project.bn.beta.value.fill(7.0f);
        op.project.bn.running_mean.fill(3.0f);
        op.project.bn.running_var.fill(9.0f);
        op.project.weight.value.fill(2.0f);
        op.expand.bn.gamma.value.fill(5.0f);  // a different BN of the same op
        CHECK(op_score(net, 0, 3).value == before);
    }
    SUBCASE("index range errors") {
        CHECK_THROWS_AS(op_score(net, 3, 0), ShapeError);
        CHECK_THROWS_AS(op_score(net, 0, 6), ShapeError);
    }
}

TEST_CASE("op_score agrees with an independent read of the checkpoint bytes") {
    const SpaceConfig space = SpaceConfig::toy();
    Network net = build_supernet(space, 21);
    Rng rng(22);
    oracles::randomize_gammas(net, rng);

    const std::string path =
        (std::filesystem::temp_directory_path() / "bnsearch_score_oracle.bin").string();
    save_checkpoint(net, 5, path);
    const std::string bytes = read_file(path);

    for (int l = 0; l < net.num_layers(); ++l)
        for (int n = 0; n < 6; ++n) {
            const std::string name =
                "layer" + std::to_string(l) + ".op" + std::to_string(n) + ".project.bn.gamma";
            const std::vector<float> raw = read_param_from_bytes(bytes, name);
            double sum = 0.0;
            for (float v : raw) sum += std::abs(static_cast<double>(v));
            const double expect = sum / static_cast<double>(raw.size());
            CHECK(op_score(net, l, n).value == expect);
        }
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".idx.txt");
}

TEST_CASE("score_table memoizes op scores") {
    const SpaceConfig space = SpaceConfig::toy();
    Network net = build_supernet(space, 2);
    SUBCASE("fresh table is all ones with shape (L, N)") {
        const ScoreTable t = score_table(net);
        CHECK(t.num_layers == 3);
        CHECK(t.num_candidates == 6);
        for (double v : t.values) CHECK(v == 1.0);
    }
    SUBCASE("random spot checks equal op_score") {
        Rng rng(33);
        oracles::randomize_gammas(net, rng);
        const ScoreTable t = score_table(net);
        for (int i = 0; i < 10; ++i) {
            const int l = rng.next_int(3), n = rng.next_int(6);
            CHECK(t.at(l, n) == op_score(net, l, n).value);
        }
    }
}

TEST_CASE("subnet_score sums the table rows") {
    const SpaceConfig space = SpaceConfig::toy();
    Network net = build_supernet(space, 3);

    SUBCASE("fresh supernet scores L for any architecture") {
        const ScoreTable t = score_table(net);
        CHECK(subnet_score(t, {{0, 0, 0}}).value == doctest::Approx(3.0));
        CHECK(subnet_score(t, {{5, 4, 3}}).value == doctest::Approx(3.0));
    }

    Rng rng(44);
    oracles::randomize_gammas(net, rng);
    const ScoreTable t = score_table(net);

    SUBCASE("per-layer argmax composition attains the max achievable score") {
        Architecture best;
        double expect = 0.0;
        for (int l = 0; l < 3; ++l) {
            int arg = 0;
            for (int n = 1; n < 6; ++n)
                if (t.at(l, n) > t.at(l, arg)) arg = n;
            best.ops.push_back(arg);
            expect += t.at(l, arg);
        }
        CHECK(subnet_score(t, best).value == doctest::Approx(expect).epsilon(1e-15));
        Architecture probe{{0, 0, 0}};
        for (probe.ops[0] = 0; probe.ops[0] < 6; ++probe.ops[0])
            for (probe.ops[1] = 0; probe.ops[1] < 6; ++probe.ops[1])
                for (probe.ops[2] = 0; probe.ops[2] < 6; ++probe.ops[2])
                    CHECK(subnet_score(t, probe).value <= subnet_score(t, best).value + 1e-12);
    }

    SUBCASE("all 216 architectures match brute-force recomputation from raw gamma") {
        Architecture a{{0, 0, 0}};
        for (a.ops[0] = 0; a.ops[0] < 6; ++a.ops[0])
            for (a.ops[1] = 0; a.ops[1] < 6; ++a.ops[1])
                for (a.ops[2] = 0; a.ops[2] < 6; ++a.ops[2]) {
                    double expect = 0.0;
                    for (int l = 0; l < 3; ++l) {
                        const Tensor& g =
                            net.layers[static_cast<size_t>(l)]
                                .ops[static_cast<size_t>(a.ops[static_cast<size_t>(l)])]
                                .project.bn.gamma.value;
                        double sum = 0.0;
                        for (int64_t i = 0; i < g.numel(); ++i)
                            sum += std::abs(static_cast<double>(g[i]));
                        expect += sum / static_cast<double>(g.numel());
                    }
                    CHECK(std::abs(subnet_score(t, a).value - expect) <= 1e-7);
                }
    }

    SUBCASE("additivity: architectures differing at one layer differ by the table delta") {
        Rng r2(55);
        for (int trial = 0; trial < 25; ++trial) {
            Architecture a = sample_uniform(space, r2);
            Architecture b = a;
            const int l = r2.next_int(3);
            b.ops[static_cast<size_t>(l)] = r2.next_int(6);
            const double lhs = subnet_score(t, a).value - subnet_score(t, b).value;
            const double rhs =
                t.at(l, a.ops[static_cast<size_t>(l)]) - t.at(l, b.ops[static_cast<size_t>(l)]);
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
        }
    }

    SUBCASE("argmax is invariant to shifting a whole table row") {
        ScoreTable shifted = t;
        for (int n = 0; n < 6; ++n) shifted.at(1, n) += 17.5;
        Architecture best_t, best_s;
        double sc_t = -1e300, sc_s = -1e300;
        Architecture probe{{0, 0, 0}};
        for (probe.ops[0] = 0; probe.ops[0] < 6; ++probe.ops[0])
            for (probe.ops[1] = 0; probe.ops[1] < 6; ++probe.ops[1])
                for (probe.ops[2] = 0; probe.ops[2] < 6; ++probe.ops[2]) {
                    const double v = subnet_score(t, probe).value;
                    const double w = subnet_score(shifted, probe).value;
                    if (v > sc_t) {
                        sc_t = v;
                        best_t = probe;
                    }
                    if (w > sc_s) {
                        sc_s = w;
                        best_s = probe;
                    }
                }
        CHECK(best_t.ops == best_s.ops);
    }
}

TEST_CASE("acc_indicator") {
    const SpaceConfig space = SpaceConfig::toy();
    Network net = build_supernet(space, 7);
    SyntheticSpec dspec;
    dspec.classes = 4;
    dspec.samples_per_class = 8;
    dspec.image_size = 16;
    const Dataset ds = gen_synthetic(dspec, 123);

    SUBCASE("constant predictor on a balanced split scores 1/K") {
        net.fc_weight.value.fill(0.0f);
        net.fc_bias.value.fill(0.0f);
        net.fc_bias.value[2] = 5.0f;  // always predicts class 2
        CHECK(acc_indicator(net, {{0, 0, 0}}, ds) == doctest::Approx(0.25));
    }
    SUBCASE("deterministic across repeated calls and matches extraction") {
        Rng rng(71);
        oracles::randomize_gammas(net, rng, 0.3f, 1.2f);
        const Architecture arch{{4, 1, 5}};
        const double a1 = acc_indicator(net, arch, ds);
        const double a2 = acc_indicator(net, arch, ds);
        CHECK(a1 == a2);
        Network sub = extract_subnet(net, arch);
        const double a3 = evaluate(sub, trivial_arch(sub), ds);
        CHECK(a1 == a3);
    }
    SUBCASE("recalibration refreshes stats on a copy, not the supernet") {
        const Architecture arch{{0, 2, 1}};
        const Tensor stats_before = net.stem.bn.running_mean;
        const double plain = acc_indicator(net, arch, ds);
        const double recal = acc_indicator(net, arch, ds, 64, true);
        CHECK(recal >= 0.0);
        CHECK(recal <= 1.0);
        (void)plain;
        for (int64_t i = 0; i < stats_before.numel(); ++i)
            CHECK(net.stem.bn.running_mean[i] == stats_before[i]);
    }
}

TEST_CASE("score table CSV export") {
    const SpaceConfig space = SpaceConfig::toy();
    Network net = build_supernet(space, 4);
    const std::string csv = score_table_csv(space, score_table(net));
    CHECK(csv.rfind("layer,candidate,kernel,expansion,score\n", 0) == 0);
    // 18 rows + header
    int lines = 0;
    for (char c : csv)
        if (c == '\n') ++lines;
    CHECK(lines == 19);
    CHECK(csv.find("0,0,3,3,1\n") != std::string::npos);
    CHECK(csv.find("2,5,7,6,1\n") != std::string::npos);
}

TEST_SUITE_END();
