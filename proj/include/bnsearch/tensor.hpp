#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace bnsearch {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct SearchError : Error {
    using Error::Error;
};

// Raised when training hits a non-finite loss; carries where it happened.
struct TrainError : Error {
    int epoch = -1;
    int iteration = -1;
    double lr = 0.0;
    TrainError(const std::string& msg, int epoch_, int iter_, double lr_)
        : Error(msg + " (epoch " + std::to_string(epoch_) + ", iteration " +
                std::to_string(iter_) + ", lr " + std::to_string(lr_) + ")"),
          epoch(epoch_), iteration(iter_), lr(lr_) {}
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major float32 tensor. The single numeric carrier for the whole
// library; higher layers interpret the shape (NCHW for feature maps, OIkk
// for conv weights, flat for per-channel vectors).
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(count(shape)), 0.0f);
    }
    Tensor(std::vector<int> s, float fill_value) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(count(shape)), fill_value);
    }
    Tensor(std::vector<int> s, std::vector<float> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != count(shape))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    void zero() { std::fill(data.begin(), data.end(), 0.0f); }
    void fill(float v) { std::fill(data.begin(), data.end(), v); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    float& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // NCHW accessors; callers guarantee 4-d shape.
    float& at4(int n, int c, int h, int w) {
        return data[static_cast<size_t>(((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    float at4(int n, int c, int h, int w) const {
        return data[static_cast<size_t>(((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    float& at2(int r, int c) {
        return data[static_cast<size_t>(static_cast<int64_t>(r) * shape[1] + c)];
    }
    float at2(int r, int c) const {
        return data[static_cast<size_t>(static_cast<int64_t>(r) * shape[1] + c)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_shape(const Tensor& t, const std::vector<int>& expect,
                          const char* what) {
    if (t.shape != expect)
        throw ShapeError(std::string(what) + ": expected shape " + shape_str(expect) +
                         ", got " + shape_str(t.shape));
}

inline void require_ndim(const Tensor& t, int nd, const char* what) {
    if (t.ndim() != nd)
        throw ShapeError(std::string(what) + ": expected " + std::to_string(nd) +
                         "-d tensor, got " + shape_str(t.shape));
}

}  // namespace bnsearch
