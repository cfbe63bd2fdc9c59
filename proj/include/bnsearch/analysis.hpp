#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "indicator.hpp"
#include "trainer.hpp"

namespace bnsearch {

// Concatenated per-layer rankings of the candidates by BN score; rank 1 is
// the best op in its layer. Ties break toward the lower candidate index.
struct RankVector {
    int epoch = 0;
    std::vector<int> ranks;  // length N*L, block l covers layer l
};

inline RankVector rank_vector(const BnSnapshot& snapshot) {
    if (snapshot.gammas.empty()) throw ShapeError("rank_vector: empty snapshot");
    RankVector rv;
    rv.epoch = snapshot.epoch;
    for (const auto& layer : snapshot.gammas) {
        const int n = static_cast<int>(layer.size());
        if (n == 0) throw ShapeError("rank_vector: snapshot layer with no candidates");
        std::vector<double> scores(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) scores[static_cast<size_t>(i)] = mean_abs(layer[static_cast<size_t>(i)]);
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&scores](int a, int b) {
            if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
                return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
            return a < b;
        });
        std::vector<int> ranks(static_cast<size_t>(n));
        for (int pos = 0; pos < n; ++pos) ranks[static_cast<size_t>(order[static_cast<size_t>(pos)])] = pos + 1;
        rv.ranks.insert(rv.ranks.end(), ranks.begin(), ranks.end());
    }
    return rv;
}

struct SimilarityMatrix {
    std::vector<int> epochs;
    std::vector<double> values;  // row-major E x E

    int size() const { return static_cast<int>(epochs.size()); }
    double at(int i, int j) const {
        return values[static_cast<size_t>(i) * epochs.size() + static_cast<size_t>(j)];
    }
    double& at(int i, int j) {
        return values[static_cast<size_t>(i) * epochs.size() + static_cast<size_t>(j)];
    }
};

// Pairwise L2 distances between rank vectors, inverted and normalized by the
// largest distance in the matrix so values land in [0,1] with 1 on the
// diagonal. All-equal snapshots give an all-ones matrix.
inline SimilarityMatrix similarity_matrix(const std::vector<BnSnapshot>& snapshots) {
    if (snapshots.size() < 2)
        throw ConfigError("similarity_matrix: need at least 2 snapshots");
    const int e = static_cast<int>(snapshots.size());
    std::vector<RankVector> rvs;
    rvs.reserve(snapshots.size());
    for (const auto& s : snapshots) rvs.push_back(rank_vector(s));
    for (const auto& rv : rvs)
        if (rv.ranks.size() != rvs[0].ranks.size())
            throw ShapeError("similarity_matrix: snapshots cover different op sets");
    SimilarityMatrix m;
    m.epochs.reserve(snapshots.size());
    for (const auto& s : snapshots) m.epochs.push_back(s.epoch);
    m.values.assign(static_cast<size_t>(e) * e, 0.0);
    double max_dist = 0.0;
    for (int i = 0; i < e; ++i)
        for (int j = 0; j < e; ++j) {
            double sq = 0.0;
            for (size_t k = 0; k < rvs[0].ranks.size(); ++k) {
                const double d = rvs[static_cast<size_t>(i)].ranks[k] - rvs[static_cast<size_t>(j)].ranks[k];
                sq += d * d;
            }
            const double dist = std::sqrt(sq);
            m.at(i, j) = dist;
            max_dist = std::max(max_dist, dist);
        }
    for (int i = 0; i < e; ++i)
        for (int j = 0; j < e; ++j)
            m.at(i, j) = max_dist == 0.0 ? 1.0 : 1.0 - m.at(i, j) / max_dist;
    return m;
}

// First epoch whose rank vector already looks like the end of training:
// similarity >= threshold against every epoch in the trailing window.
// nullopt when the run never stabilizes.
inline std::optional<int> convergence_epoch(const SimilarityMatrix& m, int window,
                                            double threshold) {
    if (window < 1) throw ConfigError("convergence_epoch: window must be >= 1");
    const int e = m.size();
    const int w = std::min(window, e);
    for (int row = 0; row < e; ++row) {
        bool stable = true;
        for (int col = e - w; col < e; ++col)
            if (m.at(row, col) < threshold) {
                stable = false;
                break;
            }
        if (stable) return m.epochs[static_cast<size_t>(row)];
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Kendall tau-b, O(n log n) via sort + merge inversion counting. Returns
// nullopt when either sequence is fully tied (tau undefined).

namespace detail {

inline int64_t merge_count_inversions(std::vector<double>& v, std::vector<double>& tmp,
                                      size_t lo, size_t hi) {
    if (hi - lo < 2) return 0;
    const size_t mid = lo + (hi - lo) / 2;
    int64_t count = merge_count_inversions(v, tmp, lo, mid) + merge_count_inversions(v, tmp, mid, hi);
    size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[i] <= v[j]) {
            tmp[k++] = v[i++];
        } else {
            count += static_cast<int64_t>(mid - i);
            tmp[k++] = v[j++];
        }
    }
    while (i < mid) tmp[k++] = v[i++];
    while (j < hi) tmp[k++] = v[j++];
    std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo), tmp.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return count;
}

inline int64_t tied_pairs(const std::vector<double>& sorted_keys) {
    int64_t pairs = 0;
    size_t i = 0;
    while (i < sorted_keys.size()) {
        size_t j = i;
        while (j < sorted_keys.size() && sorted_keys[j] == sorted_keys[i]) ++j;
        const int64_t t = static_cast<int64_t>(j - i);
        pairs += t * (t - 1) / 2;
        i = j;
    }
    return pairs;
}

}  // namespace detail

inline std::optional<double> kendall_tau(const std::vector<double>& xs,
                                         const std::vector<double>& ys) {
    if (xs.size() != ys.size())
        throw ShapeError("kendall_tau: input lengths differ (" + std::to_string(xs.size()) +
                         " vs " + std::to_string(ys.size()) + ")");
    const int64_t n = static_cast<int64_t>(xs.size());
    if (n < 2) throw ShapeError("kendall_tau: need at least 2 observations");
    std::vector<int> order(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (xs[static_cast<size_t>(a)] != xs[static_cast<size_t>(b)])
            return xs[static_cast<size_t>(a)] < xs[static_cast<size_t>(b)];
        return ys[static_cast<size_t>(a)] < ys[static_cast<size_t>(b)];
    });

    const int64_t n0 = n * (n - 1) / 2;
    int64_t n1 = 0, n3 = 0;
    {
        size_t i = 0;
        while (i < order.size()) {
            size_t j = i;
            while (j < order.size() &&
                   xs[static_cast<size_t>(order[j])] == xs[static_cast<size_t>(order[i])])
                ++j;
            const int64_t t = static_cast<int64_t>(j - i);
            n1 += t * (t - 1) / 2;
            size_t a = i;
            while (a < j) {
                size_t b = a;
                while (b < j &&
                       ys[static_cast<size_t>(order[b])] == ys[static_cast<size_t>(order[a])])
                    ++b;
                const int64_t u = static_cast<int64_t>(b - a);
                n3 += u * (u - 1) / 2;
                a = b;
            }
            i = j;
        }
    }

    std::vector<double> y_seq(ys.size());
    for (size_t i = 0; i < order.size(); ++i) y_seq[i] = ys[static_cast<size_t>(order[i])];
    std::vector<double> tmp(y_seq.size());
    const int64_t swaps = detail::merge_count_inversions(y_seq, tmp, 0, y_seq.size());
    const int64_t n2 = detail::tied_pairs(y_seq);  // y_seq is sorted now

    if (n0 == n1 || n0 == n2) return std::nullopt;  // one side fully tied
    const int64_t concordant_minus_discordant = n0 - n1 - n2 + n3 - 2 * swaps;
    return static_cast<double>(concordant_minus_discordant) /
           std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

// ---------------------------------------------------------------------------
// BN score vs retrain accuracy

struct CorrelationPoint {
    Architecture arch;
    double score = 0.0;
    double accuracy = 0.0;
    bool failed = false;
    std::string error;
};

struct CorrelationResult {
    std::vector<CorrelationPoint> points;
    std::optional<double> tau;
};

// Samples architectures, scores them from the supernet's BN table, retrains
// each from scratch, and correlates the two rankings. Training failures are
// recorded per-arch and excluded from tau.
inline CorrelationResult correlation_study(const SpaceConfig& space, const Network& supernet,
                                           const Dataset& train_data, const Dataset& val_data,
                                           int sample_count, const TrainConfig& retrain_cfg,
                                           uint64_t seed) {
    if (sample_count < 2) throw ConfigError("correlation_study: sample_count must be >= 2");
    const ScoreTable table = score_table(supernet);
    Rng rng(seed);
    std::vector<Architecture> archs;
    int attempts = 0;
    while (static_cast<int>(archs.size()) < sample_count && attempts < sample_count * 200) {
        ++attempts;
        Architecture a = sample_uniform(space, rng);
        if (std::find(archs.begin(), archs.end(), a) == archs.end()) archs.push_back(std::move(a));
    }
    while (static_cast<int>(archs.size()) < sample_count)
        archs.push_back(sample_uniform(space, rng));  // tiny space: accept duplicates

    CorrelationResult result;
    result.points.resize(archs.size());
    for (size_t i = 0; i < archs.size(); ++i) {
        CorrelationPoint& pt = result.points[i];
        pt.arch = archs[i];
        pt.score = subnet_score(table, archs[i]).value;
        try {
            const RetrainResult rr = retrain_subnet(space, archs[i], train_data, val_data,
                                                    retrain_cfg, rng.fork(i).next_u64());
            pt.accuracy = rr.val_accuracy;
        } catch (const Error& e) {
            pt.failed = true;
            pt.error = e.what();
        }
    }
    std::vector<double> scores, accs;
    for (const auto& pt : result.points)
        if (!pt.failed) {
            scores.push_back(pt.score);
            accs.push_back(pt.accuracy);
        }
    if (scores.size() >= 2) result.tau = kendall_tau(scores, accs);
    return result;
}

// ---------------------------------------------------------------------------
// Exports

inline std::string similarity_csv(const SimilarityMatrix& m) {
    std::string out = "epoch";
    for (int e : m.epochs) out += "," + std::to_string(e);
    out += "\n";
    char buf[64];
    for (int i = 0; i < m.size(); ++i) {
        out += std::to_string(m.epochs[static_cast<size_t>(i)]);
        for (int j = 0; j < m.size(); ++j) {
            std::snprintf(buf, sizeof(buf), ",%.17g", m.at(i, j));
            out += buf;
        }
        out += "\n";
    }
    return out;
}

// 8-bit binary PGM; darker pixels mean more similar epochs.
inline std::string similarity_pgm(const SimilarityMatrix& m) {
    const int e = m.size();
    std::string out = "P5\n" + std::to_string(e) + " " + std::to_string(e) + "\n255\n";
    for (int i = 0; i < e; ++i)
        for (int j = 0; j < e; ++j) {
            const double v = 1.0 - m.at(i, j);
            const int pixel = std::min(255, std::max(0, static_cast<int>(std::lround(v * 255.0))));
            out.push_back(static_cast<char>(static_cast<unsigned char>(pixel)));
        }
    return out;
}

inline std::string scatter_csv(const CorrelationResult& r) {
    std::string out = "arch,score,retrain_accuracy,status\n";
    char buf[128];
    for (const auto& pt : r.points) {
        if (pt.failed) {
            out += "\"" + pt.arch.str() + "\",,," + "failed\n";
        } else {
            std::snprintf(buf, sizeof(buf), "\"%s\",%.17g,%.17g,ok\n", pt.arch.str().c_str(),
                          pt.score, pt.accuracy);
            out += buf;
        }
    }
    return out;
}

}  // namespace bnsearch
