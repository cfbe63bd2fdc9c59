#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace bnsearch {

// In-memory labelled image set, CHW float per sample.
struct Dataset {
    int channels = 0;
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<float> images;  // size() * channels*height*width
    std::vector<int> labels;

    int64_t sample_floats() const { return static_cast<int64_t>(channels) * height * width; }
    int size() const { return static_cast<int>(labels.size()); }
    bool empty() const { return labels.empty(); }

    const float* sample(int i) const { return images.data() + static_cast<int64_t>(i) * sample_floats(); }
};

// Gathers the given samples into an NCHW batch.
inline Tensor make_batch(const Dataset& ds, const std::vector<int>& indices,
                         std::vector<int>* labels_out = nullptr) {
    Tensor batch({static_cast<int>(indices.size()), ds.channels, ds.height, ds.width});
    if (labels_out) labels_out->clear();
    for (size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        std::copy(ds.sample(idx), ds.sample(idx) + ds.sample_floats(),
                  batch.ptr() + static_cast<int64_t>(i) * ds.sample_floats());
        if (labels_out) labels_out->push_back(ds.labels[static_cast<size_t>(idx)]);
    }
    return batch;
}

// Deterministic head/tail split; the tail fraction becomes validation.
struct SplitView {
    std::vector<int> train;
    std::vector<int> val;
};

inline SplitView split_train_val(const Dataset& ds, double val_fraction) {
    SplitView v;
    const int n = ds.size();
    int n_val = static_cast<int>(n * val_fraction);
    if (val_fraction > 0.0 && n_val == 0 && n > 1) n_val = 1;
    for (int i = 0; i < n - n_val; ++i) v.train.push_back(i);
    for (int i = n - n_val; i < n; ++i) v.val.push_back(i);
    return v;
}

inline Dataset subset(const Dataset& ds, const std::vector<int>& indices) {
    Dataset out;
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.num_classes = ds.num_classes;
    out.images.reserve(indices.size() * static_cast<size_t>(ds.sample_floats()));
    for (int i : indices) {
        out.images.insert(out.images.end(), ds.sample(i), ds.sample(i) + ds.sample_floats());
        out.labels.push_back(ds.labels[static_cast<size_t>(i)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary format: records of 3073 bytes, one label byte then
// 3 x 32 x 32 pixel bytes, channel-major R,G,B.

struct Cifar10Normalization {
    std::array<float, 3> mean = {0.4914f, 0.4822f, 0.4465f};
    std::array<float, 3> stddev = {0.2470f, 0.2435f, 0.2616f};
};

inline Dataset load_cifar10_binary(const std::string& path,
                                   const Cifar10Normalization& norm = {}) {
    constexpr int kRecord = 3073;
    constexpr int kPixels = 3072;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open cifar10 file: " + path);
    in.seekg(0, std::ios::end);
    const int64_t len = in.tellg();
    in.seekg(0, std::ios::beg);
    Dataset ds;
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    ds.num_classes = 10;
    if (len == 0) {
        std::fprintf(stderr, "warning: cifar10 file %s is empty\n", path.c_str());
        return ds;
    }
    if (len % kRecord != 0)
        throw IoError("cifar10 file " + path + " is truncated: " + std::to_string(len) +
                      " bytes is not a multiple of 3073");
    const int n = static_cast<int>(len / kRecord);
    ds.images.resize(static_cast<size_t>(n) * kPixels);
    ds.labels.resize(static_cast<size_t>(n));
    std::vector<unsigned char> record(kRecord);
    for (int i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(record.data()), kRecord);
        if (!in) throw IoError("cifar10 read failed at record " + std::to_string(i));
        const int label = record[0];
        if (label >= 10)
            throw IoError("cifar10 record " + std::to_string(i) + " has label " +
                          std::to_string(label) + " >= 10");
        ds.labels[static_cast<size_t>(i)] = label;
        float* out = ds.images.data() + static_cast<int64_t>(i) * kPixels;
        for (int c = 0; c < 3; ++c) {
            const float m = norm.mean[static_cast<size_t>(c)];
            const float s = norm.stddev[static_cast<size_t>(c)];
            for (int p = 0; p < 1024; ++p)
                out[c * 1024 + p] =
                    (static_cast<float>(record[1 + c * 1024 + p]) / 255.0f - m) / s;
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic class-conditional Gaussian-blob images. Each class owns a fixed
// pattern of smooth spatial bumps (random centers, widths, signs, channels);
// samples add unit pixel noise on top. Blobs are low-frequency, so the class
// signal survives strided convolutions and global pooling, and separability
// against unit noise is a direct learnability knob.

struct SyntheticSpec {
    int classes = 4;
    int samples_per_class = 64;
    int image_size = 16;
    int channels = 3;
    float separability = 2.0f;
    float noise = 1.0f;
    int bumps_per_channel = 2;
};

inline Dataset gen_synthetic(const SyntheticSpec& spec, uint64_t seed) {
    if (spec.classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
    Rng rng(seed);
    Dataset ds;
    ds.channels = spec.channels;
    ds.height = spec.image_size;
    ds.width = spec.image_size;
    ds.num_classes = spec.classes;
    const int64_t floats = ds.sample_floats();
    const double size = spec.image_size;

    std::vector<std::vector<float>> patterns(static_cast<size_t>(spec.classes));
    for (auto& pattern : patterns) {
        pattern.assign(static_cast<size_t>(floats), 0.0f);
        for (int c = 0; c < spec.channels; ++c) {
            float* plane = pattern.data() + static_cast<int64_t>(c) * spec.image_size * spec.image_size;
            for (int b = 0; b < spec.bumps_per_channel; ++b) {
                const double cy = rng.uniform(0.15, 0.85) * size;
                const double cx = rng.uniform(0.15, 0.85) * size;
                const double sigma = rng.uniform(size / 6.0, size / 3.0);
                const double amp = (rng.next_int(2) ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
                for (int y = 0; y < spec.image_size; ++y)
                    for (int x = 0; x < spec.image_size; ++x) {
                        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                        plane[y * spec.image_size + x] +=
                            static_cast<float>(amp * std::exp(-d2 / (2.0 * sigma * sigma)));
                    }
            }
        }
        // unit RMS so separability measures per-pixel signal-to-noise
        double sq = 0.0;
        for (float v : pattern) sq += static_cast<double>(v) * v;
        const float scale = static_cast<float>(1.0 / std::sqrt(std::max(sq / floats, 1e-12)));
        for (auto& v : pattern) v *= scale;
    }

    const int n = spec.classes * spec.samples_per_class;
    ds.images.resize(static_cast<size_t>(n) * floats);
    ds.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int k = i % spec.classes;  // interleaved, exactly balanced
        ds.labels[static_cast<size_t>(i)] = k;
        float* out = ds.images.data() + static_cast<int64_t>(i) * floats;
        const float* pat = patterns[static_cast<size_t>(k)].data();
        for (int64_t j = 0; j < floats; ++j)
            out[j] = spec.separability * pat[j] +
                     spec.noise * static_cast<float>(rng.gaussian());
    }
    return ds;
}

}  // namespace bnsearch
