#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <vector>

#include "param.hpp"
#include "tensor.hpp"

namespace bnsearch {

// Lightweight instrumentation. Search with the BN indicator must not touch
// the tensor engine at all; these counters make that an assertable fact.
namespace counters {
inline std::atomic<uint64_t> conv_forward_calls{0};
inline std::atomic<uint64_t> path_forward_calls{0};

inline void reset() {
    conv_forward_calls.store(0);
    path_forward_calls.store(0);
}
inline uint64_t tensor_engine_calls() {
    return conv_forward_calls.load() + path_forward_calls.load();
}
}  // namespace counters

inline int conv_out_size(int in, int k, int stride, int padding) {
    return (in + 2 * padding - k) / stride + 1;
}

enum class ConvAlgo { Auto, Direct, Im2col };

namespace detail {

inline void check_conv_args(const Tensor& input, const Tensor& weight, int stride,
                            int padding, int groups) {
    require_ndim(input, 4, "conv2d input");
    require_ndim(weight, 4, "conv2d weight");
    const int C = input.shape[1];
    if (groups < 1 || C % groups != 0)
        throw ShapeError("conv2d: input channels " + std::to_string(C) +
                         " not divisible by groups " + std::to_string(groups));
    if (weight.shape[0] % groups != 0)
        throw ShapeError("conv2d: output channels " + std::to_string(weight.shape[0]) +
                         " not divisible by groups " + std::to_string(groups));
    if (weight.shape[1] != C / groups)
        throw ShapeError("conv2d: weight in-channels " + std::to_string(weight.shape[1]) +
                         " != input channels/groups " + std::to_string(C / groups));
    if (weight.shape[2] != weight.shape[3])
        throw ShapeError("conv2d: only square kernels supported, got " + shape_str(weight.shape));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
    const int k = weight.shape[2];
    if (conv_out_size(input.shape[2], k, stride, padding) < 1 ||
        conv_out_size(input.shape[3], k, stride, padding) < 1)
        throw ShapeError("conv2d: kernel " + std::to_string(k) + " does not fit input " +
                         shape_str(input.shape) + " with stride " + std::to_string(stride) +
                         ", padding " + std::to_string(padding));
}

inline Tensor conv2d_direct(const Tensor& input, const Tensor& weight, int stride,
                            int padding, int groups) {
    const int N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int O = weight.shape[0], k = weight.shape[2];
    const int in_per_g = C / groups, out_per_g = O / groups;
    const int OH = conv_out_size(H, k, stride, padding);
    const int OW = conv_out_size(W, k, stride, padding);
    Tensor out({N, O, OH, OW});
    for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < O; ++oc) {
            const int g = oc / out_per_g;
            const float* wbase = weight.ptr() + static_cast<int64_t>(oc) * in_per_g * k * k;
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox) {
                    float acc = 0.0f;
                    for (int ic = 0; ic < in_per_g; ++ic) {
                        const float* in_c = input.ptr() +
                            ((static_cast<int64_t>(n) * C + g * in_per_g + ic) * H) * W;
                        const float* w_c = wbase + static_cast<int64_t>(ic) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= W) continue;
                                acc += in_c[static_cast<int64_t>(iy) * W + ix] * w_c[ky * k + kx];
                            }
                        }
                    }
                    out.at4(n, oc, oy, ox) = acc;
                }
            }
        }
    }
    return out;
}

// Column buffer layout is (ic, ky, kx) x (oy, ox); the matmul below then
// accumulates in the same term order as conv2d_direct, so both paths agree.
inline Tensor conv2d_im2col(const Tensor& input, const Tensor& weight, int stride,
                            int padding, int groups) {
    const int N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int O = weight.shape[0], k = weight.shape[2];
    const int in_per_g = C / groups, out_per_g = O / groups;
    const int OH = conv_out_size(H, k, stride, padding);
    const int OW = conv_out_size(W, k, stride, padding);
    const int pixels = OH * OW;
    const int rows = in_per_g * k * k;
    Tensor out({N, O, OH, OW});
    std::vector<float> cols(static_cast<size_t>(rows) * pixels);
    for (int n = 0; n < N; ++n) {
        for (int g = 0; g < groups; ++g) {
            float* col = cols.data();
            for (int ic = 0; ic < in_per_g; ++ic) {
                const float* in_c = input.ptr() +
                    ((static_cast<int64_t>(n) * C + g * in_per_g + ic) * H) * W;
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        for (int oy = 0; oy < OH; ++oy) {
                            const int iy = oy * stride - padding + ky;
                            for (int ox = 0; ox < OW; ++ox) {
                                const int ix = ox * stride - padding + kx;
                                *col++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                             ? in_c[static_cast<int64_t>(iy) * W + ix]
                                             : 0.0f;
                            }
                        }
                    }
                }
            }
            for (int oc_local = 0; oc_local < out_per_g; ++oc_local) {
                const int oc = g * out_per_g + oc_local;
                const float* wrow = weight.ptr() + static_cast<int64_t>(oc) * rows;
                float* orow = out.ptr() + ((static_cast<int64_t>(n) * O + oc) * OH) * OW;
                for (int p = 0; p < pixels; ++p) orow[p] = 0.0f;
                for (int r = 0; r < rows; ++r) {
                    const float wv = wrow[r];
                    const float* crow = cols.data() + static_cast<int64_t>(r) * pixels;
                    for (int p = 0; p < pixels; ++p) orow[p] += wv * crow[p];
                }
            }
        }
    }
    return out;
}

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& input, const Tensor& weight, int stride,
                             int padding, int groups = 1, ConvAlgo algo = ConvAlgo::Auto) {
    detail::check_conv_args(input, weight, stride, padding, groups);
    counters::conv_forward_calls.fetch_add(1, std::memory_order_relaxed);
    if (algo == ConvAlgo::Direct) return detail::conv2d_direct(input, weight, stride, padding, groups);
    if (algo == ConvAlgo::Im2col) return detail::conv2d_im2col(input, weight, stride, padding, groups);
    // 1x1 kernels gain nothing from the column buffer.
    if (weight.shape[2] == 1)
        return detail::conv2d_direct(input, weight, stride, padding, groups);
    return detail::conv2d_im2col(input, weight, stride, padding, groups);
}

inline Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight,
                                    const std::vector<int>& input_shape, int stride,
                                    int padding, int groups = 1) {
    if (input_shape.size() != 4)
        throw ShapeError("conv2d_backward_input: input shape must be 4-d");
    const int N = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
    const int O = weight.shape[0], k = weight.shape[2];
    const int in_per_g = C / groups, out_per_g = O / groups;
    require_shape(grad_out,
                  {N, O, conv_out_size(H, k, stride, padding), conv_out_size(W, k, stride, padding)},
                  "conv2d_backward_input grad_out");
    const int OH = grad_out.shape[2], OW = grad_out.shape[3];
    Tensor grad_in(input_shape);
    for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < O; ++oc) {
            const int g = oc / out_per_g;
            const float* wbase = weight.ptr() + static_cast<int64_t>(oc) * in_per_g * k * k;
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox) {
                    const float go = grad_out.at4(n, oc, oy, ox);
                    if (go == 0.0f) continue;
                    for (int ic = 0; ic < in_per_g; ++ic) {
                        float* gin_c = grad_in.ptr() +
                            ((static_cast<int64_t>(n) * C + g * in_per_g + ic) * H) * W;
                        const float* w_c = wbase + static_cast<int64_t>(ic) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= W) continue;
                                gin_c[static_cast<int64_t>(iy) * W + ix] += go * w_c[ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    return grad_in;
}

// Needed for all-params supernet training and for retraining subnets from
// scratch; BN-only training never requests it.
inline Tensor conv2d_backward_weight(const Tensor& grad_out, const Tensor& input,
                                     const std::vector<int>& weight_shape, int stride,
                                     int padding, int groups = 1) {
    const int N = input.shape[0], C = input.shape[1], H = input.shape[2], W = input.shape[3];
    const int O = weight_shape[0], k = weight_shape[2];
    const int in_per_g = C / groups, out_per_g = O / groups;
    require_shape(grad_out,
                  {N, O, conv_out_size(H, k, stride, padding), conv_out_size(W, k, stride, padding)},
                  "conv2d_backward_weight grad_out");
    const int OH = grad_out.shape[2], OW = grad_out.shape[3];
    Tensor grad_w(weight_shape);
    for (int n = 0; n < N; ++n) {
        for (int oc = 0; oc < O; ++oc) {
            const int g = oc / out_per_g;
            float* gw_base = grad_w.ptr() + static_cast<int64_t>(oc) * in_per_g * k * k;
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox) {
                    const float go = grad_out.at4(n, oc, oy, ox);
                    if (go == 0.0f) continue;
                    for (int ic = 0; ic < in_per_g; ++ic) {
                        const float* in_c = input.ptr() +
                            ((static_cast<int64_t>(n) * C + g * in_per_g + ic) * H) * W;
                        float* gw_c = gw_base + static_cast<int64_t>(ic) * k * k;
                        for (int ky = 0; ky < k; ++ky) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                const int ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= W) continue;
                                gw_c[ky * k + kx] += go * in_c[static_cast<int64_t>(iy) * W + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    return grad_w;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BnParams {
    Param gamma;          // per-channel scale, init 1
    Param beta;           // per-channel bias, init 0
    Tensor running_mean;  // eval-mode statistics
    Tensor running_var;
    float momentum = 0.1f;
    float epsilon = 1e-5f;

    static BnParams make(int channels, float eps = 1e-5f, float mom = 0.1f) {
        BnParams p;
        p.gamma = Param(Tensor({channels}, 1.0f));
        p.beta = Param(Tensor({channels}, 0.0f));
        p.running_mean = Tensor({channels}, 0.0f);
        p.running_var = Tensor({channels}, 1.0f);
        p.epsilon = eps;
        p.momentum = mom;
        return p;
    }

    int channels() const { return gamma.value.shape.empty() ? 0 : gamma.value.shape[0]; }

    void validate() const {
        const int c = channels();
        if (beta.value.numel() != c || running_mean.numel() != c || running_var.numel() != c)
            throw ShapeError("BnParams: gamma/beta/running stats lengths differ");
        if (epsilon <= 0.0f) throw ShapeError("BnParams: epsilon must be positive");
        if (momentum <= 0.0f || momentum >= 1.0f)
            throw ShapeError("BnParams: momentum must be in (0,1)");
        for (int64_t i = 0; i < running_var.numel(); ++i)
            if (running_var[i] < 0.0f) throw ShapeError("BnParams: negative running variance");
    }
};

struct BnCache {
    Tensor z;                   // normalized input
    std::vector<float> inv_std; // per channel, 1/sqrt(var + eps)
    std::vector<float> gamma;   // gamma snapshot at forward time
    bool train = false;
};

inline Tensor bn_forward(const Tensor& x, BnParams& p, bool train, BnCache* cache = nullptr) {
    require_ndim(x, 4, "bn_forward input");
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    if (C != p.channels())
        throw ShapeError("bn_forward: input has " + std::to_string(C) + " channels, params have " +
                         std::to_string(p.channels()));
    const int64_t M = static_cast<int64_t>(N) * H * W;
    const int64_t plane = static_cast<int64_t>(H) * W;
    Tensor out(x.shape);
    Tensor z(x.shape);
    std::vector<float> inv_std(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
        float mean, istd;
        if (train) {
            double sum = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* px = x.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) sum += px[i];
            }
            const double mu = sum / static_cast<double>(M);
            double sq = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* px = x.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) {
                    const double d = px[i] - mu;
                    sq += d * d;
                }
            }
            const double var = sq / static_cast<double>(M);  // biased, used for normalization
            mean = static_cast<float>(mu);
            istd = static_cast<float>(1.0 / std::sqrt(var + static_cast<double>(p.epsilon)));
            const double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
            p.running_mean[c] = (1.0f - p.momentum) * p.running_mean[c] + p.momentum * mean;
            p.running_var[c] = (1.0f - p.momentum) * p.running_var[c] +
                               p.momentum * static_cast<float>(unbiased);
        } else {
            mean = p.running_mean[c];
            istd = 1.0f / std::sqrt(p.running_var[c] + p.epsilon);
        }
        inv_std[static_cast<size_t>(c)] = istd;
        const float g = p.gamma.value[c], b = p.beta.value[c];
        for (int n = 0; n < N; ++n) {
            const float* px = x.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
            float* pz = z.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
            float* po = out.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
                const float zi = (px[i] - mean) * istd;
                pz[i] = zi;
                po[i] = g * zi + b;
            }
        }
    }
    if (cache) {
        cache->z = std::move(z);
        cache->inv_std = std::move(inv_std);
        cache->gamma.assign(p.gamma.value.data.begin(), p.gamma.value.data.end());
        cache->train = train;
    }
    return out;
}

struct BnGrads {
    Tensor grad_in;
    Tensor grad_gamma;
    Tensor grad_beta;
};

inline BnGrads bn_backward(const Tensor& grad_out, const BnCache& cache) {
    if (!cache.train)
        throw ShapeError("bn_backward: cache must come from a train-mode forward");
    if (!grad_out.same_shape(cache.z))
        throw ShapeError("bn_backward: grad shape " + shape_str(grad_out.shape) +
                         " != cached shape " + shape_str(cache.z.shape));
    const int N = grad_out.shape[0], C = grad_out.shape[1];
    const int64_t plane = static_cast<int64_t>(grad_out.shape[2]) * grad_out.shape[3];
    const int64_t M = static_cast<int64_t>(N) * plane;
    BnGrads grads;
    grads.grad_in = Tensor(grad_out.shape);
    grads.grad_gamma = Tensor({C});
    grads.grad_beta = Tensor({C});
    for (int c = 0; c < C; ++c) {
        double sum_g = 0.0, sum_gz = 0.0;
        for (int n = 0; n < N; ++n) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
            const float* pg = grad_out.ptr() + base;
            const float* pz = cache.z.ptr() + base;
            for (int64_t i = 0; i < plane; ++i) {
                sum_g += pg[i];
                sum_gz += pg[i] * pz[i];
            }
        }
        grads.grad_beta[c] = static_cast<float>(sum_g);
        grads.grad_gamma[c] = static_cast<float>(sum_gz);
        const float mean_g = static_cast<float>(sum_g / static_cast<double>(M));
        const float mean_gz = static_cast<float>(sum_gz / static_cast<double>(M));
        const float scale = cache.gamma[static_cast<size_t>(c)] * cache.inv_std[static_cast<size_t>(c)];
        for (int n = 0; n < N; ++n) {
            const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
            const float* pg = grad_out.ptr() + base;
            const float* pz = cache.z.ptr() + base;
            float* pi = grads.grad_in.ptr() + base;
            for (int64_t i = 0; i < plane; ++i)
                pi[i] = scale * (pg[i] - mean_g - pz[i] * mean_gz);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// ReLU, pooling, linear head, loss

inline Tensor relu(const Tensor& x) {
    Tensor out(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
    return out;
}

// pre_activation is the tensor that went into relu; gradient is blocked
// where it was <= 0.
inline Tensor relu_backward(const Tensor& grad_out, const Tensor& pre_activation) {
    if (!grad_out.same_shape(pre_activation))
        throw ShapeError("relu_backward: shape mismatch");
    Tensor g(grad_out.shape);
    for (int64_t i = 0; i < grad_out.numel(); ++i)
        g[i] = pre_activation[i] > 0.0f ? grad_out[i] : 0.0f;
    return g;
}

inline Tensor global_avg_pool(const Tensor& x) {
    require_ndim(x, 4, "global_avg_pool input");
    const int N = x.shape[0], C = x.shape[1];
    const int64_t plane = static_cast<int64_t>(x.shape[2]) * x.shape[3];
    Tensor out({N, C});
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const float* px = x.ptr() + (static_cast<int64_t>(n) * C + c) * plane;
            double sum = 0.0;
            for (int64_t i = 0; i < plane; ++i) sum += px[i];
            out.at2(n, c) = static_cast<float>(sum / static_cast<double>(plane));
        }
    }
    return out;
}

inline Tensor global_avg_pool_backward(const Tensor& grad_out, int h, int w) {
    require_ndim(grad_out, 2, "global_avg_pool_backward grad");
    const int N = grad_out.shape[0], C = grad_out.shape[1];
    const float inv = 1.0f / static_cast<float>(h * w);
    Tensor g({N, C, h, w});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const float v = grad_out.at2(n, c) * inv;
            float* pg = g.ptr() + ((static_cast<int64_t>(n) * C + c) * h) * w;
            for (int i = 0; i < h * w; ++i) pg[i] = v;
        }
    return g;
}

inline Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_ndim(x, 2, "linear input");
    require_ndim(weight, 2, "linear weight");
    const int N = x.shape[0], C = x.shape[1], K = weight.shape[0];
    if (weight.shape[1] != C)
        throw ShapeError("linear: weight expects " + std::to_string(weight.shape[1]) +
                         " features, input has " + std::to_string(C));
    if (bias.numel() != K) throw ShapeError("linear: bias length != out features");
    Tensor out({N, K});
    for (int n = 0; n < N; ++n) {
        const float* px = x.ptr() + static_cast<int64_t>(n) * C;
        for (int kk = 0; kk < K; ++kk) {
            const float* pw = weight.ptr() + static_cast<int64_t>(kk) * C;
            float acc = bias[kk];
            for (int c = 0; c < C; ++c) acc += px[c] * pw[c];
            out.at2(n, kk) = acc;
        }
    }
    return out;
}

struct LinearGrads {
    Tensor grad_in;
    Tensor grad_weight;  // empty unless weight grads requested
    Tensor grad_bias;
    bool has_weight_grads = false;
};

inline LinearGrads linear_backward(const Tensor& grad_out, const Tensor& x,
                                   const Tensor& weight, bool weight_grads) {
    const int N = x.shape[0], C = x.shape[1], K = weight.shape[0];
    require_shape(grad_out, {N, K}, "linear_backward grad_out");
    LinearGrads g;
    g.grad_in = Tensor({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            float acc = 0.0f;
            for (int kk = 0; kk < K; ++kk) acc += grad_out.at2(n, kk) * weight.at2(kk, c);
            g.grad_in.at2(n, c) = acc;
        }
    if (weight_grads) {
        g.grad_weight = Tensor({K, C});
        g.grad_bias = Tensor({K});
        for (int kk = 0; kk < K; ++kk) {
            for (int c = 0; c < C; ++c) {
                float acc = 0.0f;
                for (int n = 0; n < N; ++n) acc += grad_out.at2(n, kk) * x.at2(n, c);
                g.grad_weight.at2(kk, c) = acc;
            }
            float acc = 0.0f;
            for (int n = 0; n < N; ++n) acc += grad_out.at2(n, kk);
            g.grad_bias[kk] = acc;
        }
        g.has_weight_grads = true;
    }
    return g;
}

struct LossResult {
    double loss = 0.0;
    Tensor grad_logits;
};

// Cross-entropy against (1-smooth)*onehot + smooth/K, averaged over the
// batch; gradient is softmax minus the smoothed target, also batch-averaged.
inline LossResult softmax_ce_label_smoothing(const Tensor& logits,
                                             const std::vector<int>& targets, float smooth) {
    require_ndim(logits, 2, "loss logits");
    const int N = logits.shape[0], K = logits.shape[1];
    if (static_cast<int>(targets.size()) != N)
        throw ShapeError("loss: " + std::to_string(targets.size()) + " targets for batch of " +
                         std::to_string(N));
    if (smooth < 0.0f || smooth >= 1.0f)
        throw ShapeError("loss: smooth ratio must be in [0,1)");
    for (int t : targets)
        if (t < 0 || t >= K)
            throw ShapeError("loss: target " + std::to_string(t) + " out of range [0," +
                             std::to_string(K) + ")");
    LossResult res;
    res.grad_logits = Tensor({N, K});
    const double uniform_q = static_cast<double>(smooth) / K;
    const double onehot_q = 1.0 - static_cast<double>(smooth);
    double total = 0.0;
    std::vector<double> logp(static_cast<size_t>(K));
    for (int n = 0; n < N; ++n) {
        const float* row = logits.ptr() + static_cast<int64_t>(n) * K;
        double mx = row[0];
        for (int kk = 1; kk < K; ++kk) mx = std::max(mx, static_cast<double>(row[kk]));
        double denom = 0.0;
        for (int kk = 0; kk < K; ++kk) denom += std::exp(row[kk] - mx);
        const double log_denom = std::log(denom);
        for (int kk = 0; kk < K; ++kk) logp[static_cast<size_t>(kk)] = row[kk] - mx - log_denom;
        for (int kk = 0; kk < K; ++kk) {
            const double q = uniform_q + (kk == targets[static_cast<size_t>(n)] ? onehot_q : 0.0);
            total -= q * logp[static_cast<size_t>(kk)];
            const double p = std::exp(logp[static_cast<size_t>(kk)]);
            res.grad_logits.at2(n, kk) = static_cast<float>((p - q) / N);
        }
    }
    res.loss = total / N;
    return res;
}

}  // namespace bnsearch
