#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "optim.hpp"
#include "supernet.hpp"
#include "trainer.hpp"

namespace bnsearch {

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }

class ByteReader {
public:
    ByteReader(const std::string& data, const std::string& what) : data_(data), what_(what) {}

    uint16_t u16() { return static_cast<uint16_t>(byte() | (byte() << 8)); }
    uint32_t u32() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(byte()) << (8 * i);
        return v;
    }
    uint64_t u64() {
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(byte()) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes(size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    uint32_t byte() {
        need(1);
        return static_cast<unsigned char>(data_[pos_++]);
    }
    void need(size_t n) {
        if (pos_ + n > data_.size())
            throw IoError(what_ + ": file truncated at offset " + std::to_string(pos_));
    }
    const std::string& data_;
    std::string what_;
    size_t pos_ = 0;
};

}  // namespace detail

inline void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// On-disk training state: every parameter tensor, the BN running stats, and
// the optimizer momentum buffers, all float32 little-endian. Entry order is
// the canonical parameter-visit order, which makes save/load/save byte-stable.
struct Checkpoint {
    static constexpr char kMagic[9] = "BNSCKPT1";
    static constexpr uint32_t kVersion = 1;

    uint32_t version = kVersion;
    uint64_t space_digest = 0;
    uint32_t epoch = 0;
    std::vector<NamedTensor> params;
    std::vector<NamedTensor> buffers;
    std::vector<NamedTensor> optim;
};

namespace detail {

inline void encode_section(std::string& out, const std::vector<NamedTensor>& sec) {
    put_u32(out, static_cast<uint32_t>(sec.size()));
    for (const auto& nt : sec) {
        put_u16(out, static_cast<uint16_t>(nt.name.size()));
        out += nt.name;
        out.push_back(static_cast<char>(nt.tensor.ndim()));
        for (int d : nt.tensor.shape) put_u32(out, static_cast<uint32_t>(d));
        for (float v : nt.tensor.data) put_f32(out, v);
    }
}

inline std::vector<NamedTensor> decode_section(ByteReader& r) {
    std::vector<NamedTensor> sec;
    const uint32_t count = r.u32();
    sec.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensor nt;
        const uint16_t name_len = r.u16();
        nt.name = r.bytes(name_len);
        const uint32_t ndim = static_cast<unsigned char>(r.bytes(1)[0]);
        std::vector<int> shape;
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            shape.push_back(static_cast<int>(r.u32()));
            numel *= shape.back();
        }
        Tensor t(shape);
        for (int64_t k = 0; k < numel; ++k) t[k] = r.f32();
        nt.tensor = std::move(t);
        sec.push_back(std::move(nt));
    }
    return sec;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out;
    out.append(Checkpoint::kMagic, 8);
    detail::put_u32(out, ckpt.version);
    detail::put_u64(out, ckpt.space_digest);
    detail::put_u32(out, ckpt.epoch);
    detail::encode_section(out, ckpt.params);
    detail::encode_section(out, ckpt.buffers);
    detail::encode_section(out, ckpt.optim);
    return out;
}

inline Checkpoint decode_checkpoint(const std::string& data, const std::string& what) {
    detail::ByteReader r(data, what);
    Checkpoint ckpt;
    if (r.bytes(8) != std::string(Checkpoint::kMagic, 8))
        throw IoError(what + ": bad magic, not a checkpoint file");
    ckpt.version = r.u32();
    if (ckpt.version != Checkpoint::kVersion)
        throw IoError(what + ": unsupported checkpoint version " + std::to_string(ckpt.version));
    ckpt.space_digest = r.u64();
    ckpt.epoch = r.u32();
    ckpt.params = detail::decode_section(r);
    ckpt.buffers = detail::decode_section(r);
    ckpt.optim = detail::decode_section(r);
    if (!r.done()) throw IoError(what + ": trailing bytes after checkpoint payload");
    return ckpt;
}

inline Checkpoint make_checkpoint(Network& net, uint32_t epoch, const OptimState* opt = nullptr) {
    Checkpoint ckpt;
    ckpt.space_digest = space_digest(net.space);
    ckpt.epoch = epoch;
    for_each_param(net, [&ckpt](const std::string& name, Param& p) {
        ckpt.params.push_back({name, p.value});
    });
    for_each_buffer(net, [&ckpt](const std::string& name, Tensor& t) {
        ckpt.buffers.push_back({name, t});
    });
    if (opt)
        for (const auto& [name, buf] : opt->momentum_buffers)
            ckpt.optim.push_back({name, buf});
    return ckpt;
}

// Plain-text sidecar so a checkpoint can be inspected without tooling.
inline std::string checkpoint_index_text(const Checkpoint& ckpt) {
    std::string out = "bnsearch checkpoint index v1\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "space_digest: %016llx\n",
                  static_cast<unsigned long long>(ckpt.space_digest));
    out += buf;
    out += "epoch: " + std::to_string(ckpt.epoch) + "\n";
    auto section = [&out](const char* title, const std::vector<NamedTensor>& sec) {
        out += std::string("[") + title + "] " + std::to_string(sec.size()) + " tensors\n";
        for (const auto& nt : sec)
            out += nt.name + " " + shape_str(nt.tensor.shape) + " " +
                   std::to_string(nt.tensor.numel()) + " floats\n";
    };
    section("params", ckpt.params);
    section("buffers", ckpt.buffers);
    section("optim", ckpt.optim);
    return out;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    write_file(path, encode_checkpoint(ckpt));
    write_file(path + ".idx.txt", checkpoint_index_text(ckpt));
}

inline void save_checkpoint(Network& net, uint32_t epoch, const std::string& path,
                            const OptimState* opt = nullptr) {
    save_checkpoint(make_checkpoint(net, epoch, opt), path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    return decode_checkpoint(read_file(path), path);
}

// Copies the checkpoint tensors into a freshly built network. The space-plan
// digest and every name/shape must line up.
inline void apply_checkpoint(Network& net, const Checkpoint& ckpt, OptimState* opt = nullptr) {
    if (ckpt.space_digest != space_digest(net.space))
        throw IoError("checkpoint digest mismatch: checkpoint has " +
                      std::to_string(ckpt.space_digest) + ", network plan has " +
                      std::to_string(space_digest(net.space)));
    std::map<std::string, const Tensor*> by_name;
    for (const auto& nt : ckpt.params) by_name[nt.name] = &nt.tensor;
    size_t used = 0;
    for_each_param(net, [&](const std::string& name, Param& p) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint missing parameter " + name);
        if (it->second->shape != p.value.shape)
            throw IoError("checkpoint parameter " + name + " has shape " +
                          shape_str(it->second->shape) + ", expected " + shape_str(p.value.shape));
        p.value = *it->second;
        ++used;
    });
    if (used != ckpt.params.size())
        throw IoError("checkpoint carries " + std::to_string(ckpt.params.size()) +
                      " parameters, network expects " + std::to_string(used));
    std::map<std::string, const Tensor*> buf_by_name;
    for (const auto& nt : ckpt.buffers) buf_by_name[nt.name] = &nt.tensor;
    size_t used_buf = 0;
    for_each_buffer(net, [&](const std::string& name, Tensor& t) {
        auto it = buf_by_name.find(name);
        if (it == buf_by_name.end()) throw IoError("checkpoint missing buffer " + name);
        if (it->second->shape != t.shape)
            throw IoError("checkpoint buffer " + name + " shape mismatch");
        t = *it->second;
        ++used_buf;
    });
    if (used_buf != ckpt.buffers.size())
        throw IoError("checkpoint carries unexpected extra buffers");
    if (opt) {
        opt->momentum_buffers.clear();
        for (const auto& nt : ckpt.optim) opt->momentum_buffers[nt.name] = nt.tensor;
    }
}

// ---------------------------------------------------------------------------
// BN snapshot history, same encoding discipline as checkpoints.

inline std::string encode_snapshots(uint64_t digest, const std::vector<BnSnapshot>& snaps) {
    std::string out = "BNSSNAP1";
    detail::put_u32(out, 1);
    detail::put_u64(out, digest);
    detail::put_u32(out, static_cast<uint32_t>(snaps.size()));
    for (const auto& s : snaps) {
        detail::put_u32(out, static_cast<uint32_t>(s.epoch));
        detail::put_u16(out, static_cast<uint16_t>(s.gammas.size()));
        detail::put_u16(out,
                        static_cast<uint16_t>(s.gammas.empty() ? 0 : s.gammas[0].size()));
        for (const auto& layer : s.gammas)
            for (const auto& vec : layer) {
                detail::put_u32(out, static_cast<uint32_t>(vec.size()));
                for (float v : vec) detail::put_f32(out, v);
            }
    }
    return out;
}

inline std::pair<uint64_t, std::vector<BnSnapshot>> decode_snapshots(const std::string& data,
                                                                     const std::string& what) {
    detail::ByteReader r(data, what);
    if (r.bytes(8) != "BNSSNAP1") throw IoError(what + ": not a snapshot file");
    const uint32_t version = r.u32();
    if (version != 1) throw IoError(what + ": unsupported snapshot version");
    const uint64_t digest = r.u64();
    const uint32_t count = r.u32();
    std::vector<BnSnapshot> snaps(count);
    for (uint32_t i = 0; i < count; ++i) {
        BnSnapshot& s = snaps[i];
        s.epoch = static_cast<int>(r.u32());
        const uint16_t L = r.u16();
        const uint16_t N = r.u16();
        s.gammas.resize(L);
        for (uint16_t l = 0; l < L; ++l) {
            s.gammas[l].resize(N);
            for (uint16_t n = 0; n < N; ++n) {
                const uint32_t c = r.u32();
                s.gammas[l][n].resize(c);
                for (uint32_t k = 0; k < c; ++k) s.gammas[l][n][k] = r.f32();
            }
        }
    }
    if (!r.done()) throw IoError(what + ": trailing bytes after snapshots");
    return {digest, std::move(snaps)};
}

}  // namespace bnsearch
