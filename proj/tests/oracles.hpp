// Independent reference implementations used as test oracles. These must
// stay decoupled from the library's computation paths: different loop
// orders, double accumulation, brute-force enumeration.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include <bnsearch/ops.hpp>
#include <bnsearch/rng.hpp>
#include <bnsearch/supernet.hpp>
#include <bnsearch/tensor.hpp>

namespace oracles {

using bnsearch::Rng;
using bnsearch::Tensor;

// Norm-relative distance between two tensors.
inline double rel_err(const Tensor& a, const Tensor& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        diff += d * d;
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
    return std::sqrt(diff) / scale;
}

// Naive direct convolution, loop order and accumulator type deliberately
// different from the library (double accumulation, kernel-major loops).
inline Tensor naive_conv2d(const Tensor& input, const Tensor& weight, int stride, int padding,
                           int groups) {
    const int N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int O = weight.shape[0], k = weight.shape[2];
    const int in_per_g = C / groups, out_per_g = O / groups;
    const int OH = (H + 2 * padding - k) / stride + 1;
    const int OW = (W + 2 * padding - k) / stride + 1;
    std::vector<double> acc(static_cast<size_t>(N) * O * OH * OW, 0.0);
    for (int n = 0; n < N; ++n)
        for (int oc = 0; oc < O; ++oc)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                    for (int ic = 0; ic < in_per_g; ++ic)
                        for (int oy = 0; oy < OH; ++oy)
                            for (int ox = 0; ox < OW; ++ox) {
                                const int iy = oy * stride - padding + ky;
                                const int ix = ox * stride - padding + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                const int g = oc / out_per_g;
                                const double xv =
                                    input.at4(n, g * in_per_g + ic, iy, ix);
                                const double wv =
                                    weight.data[static_cast<size_t>(((oc * in_per_g + ic) * k + ky) * k + kx)];
                                acc[static_cast<size_t>(((n * O + oc) * OH + oy) * OW + ox)] += xv * wv;
                            }
    Tensor out({N, O, OH, OW});
    for (size_t i = 0; i < acc.size(); ++i) out[static_cast<int64_t>(i)] = static_cast<float>(acc[i]);
    return out;
}

inline std::vector<double> random_weights(int64_t n, Rng& rng) {
    std::vector<double> w(static_cast<size_t>(n));
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    return w;
}

inline double weighted_sum(const Tensor& t, const std::vector<double>& w) {
    double s = 0.0;
    for (int64_t i = 0; i < t.numel(); ++i) s += static_cast<double>(t[i]) * w[static_cast<size_t>(i)];
    return s;
}

// Central finite differences of an arbitrary scalar objective with respect
// to every entry of x; the objective re-reads x on each call.
template <typename Objective>
Tensor fd_gradient(Tensor& x, Objective&& objective, float step_scale = 1e-2f) {
    Tensor g(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float orig = x[i];
        const float h = step_scale * std::max(std::abs(orig), 0.25f);
        x[i] = orig + h;
        const double fp = objective();
        x[i] = orig - h;
        const double fm = objective();
        x[i] = orig;
        g[i] = static_cast<float>((fp - fm) / (2.0 * static_cast<double>(h)));
    }
    return g;
}

// O(n^2) pair classification; final expression mirrors the tau-b formula so
// exact agreement with the fast path is meaningful.
inline std::optional<double> brute_kendall_tau(const std::vector<double>& xs,
                                               const std::vector<double>& ys) {
    const int64_t n = static_cast<int64_t>(xs.size());
    const int64_t n0 = n * (n - 1) / 2;
    int64_t concordant = 0, discordant = 0, tied_x = 0, tied_y = 0, tied_both = 0;
    for (size_t i = 0; i < xs.size(); ++i)
        for (size_t j = i + 1; j < xs.size(); ++j) {
            const double dx = xs[i] - xs[j];
            const double dy = ys[i] - ys[j];
            if (dx == 0.0 && dy == 0.0)
                ++tied_both;
            else if (dx == 0.0)
                ++tied_x;
            else if (dy == 0.0)
                ++tied_y;
            else if ((dx > 0.0) == (dy > 0.0))
                ++concordant;
            else
                ++discordant;
        }
    const int64_t n1 = tied_x + tied_both;
    const int64_t n2 = tied_y + tied_both;
    if (n0 == n1 || n0 == n2) return std::nullopt;
    return static_cast<double>(concordant - discordant) /
           std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

// Fills every BN gamma in the supernet with values drawn from [lo, hi),
// signs flipped at random; handy for indicator and search tests.
inline void randomize_gammas(bnsearch::Network& net, Rng& rng, float lo = 0.05f, float hi = 2.0f) {
    bnsearch::for_each_param(net, [&](const std::string& name, bnsearch::Param& p) {
        if (name.find(".bn.gamma") == std::string::npos) return;
        for (int64_t i = 0; i < p.value.numel(); ++i) {
            const float mag = rng.uniform_f(lo, hi);
            p.value[i] = rng.next_int(2) ? mag : -mag;
        }
    });
}

inline Tensor random_tensor(const std::vector<int>& shape, Rng& rng, float lo = -1.0f,
                            float hi = 1.0f) {
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_f(lo, hi);
    return t;
}

}  // namespace oracles
