#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mambaloc/losses.hpp"
#include "mambaloc/rng.hpp"
#include "mambaloc/tensor.hpp"

namespace mambaloc {

/// Checkpoint file layout (all integers and floats little-endian):
///   magic "MPLC", u32 version,
///   u32 config length, canonical config text,
///   u32 parameter count, records(name, dtype, rank, extents, values),
///   u32 optimizer tensor count, records in the same form,
///   u64 optimizer step count, 4 x u64 generator state, u32 epoch.
inline constexpr char kCheckpointMagic[4] = {'M', 'P', 'L', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_bytes_le(std::string& out, std::uint64_t v, int n_bytes) {
    for (int i = 0; i < n_bytes; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

template <typename T>
void write_value_le(std::string& out, T v) {
    if constexpr (sizeof(T) == 4) {
        write_bytes_le(out, std::bit_cast<std::uint32_t>(v), 4);
    } else {
        write_bytes_le(out, std::bit_cast<std::uint64_t>(v), 8);
    }
}

class ByteReader {
public:
    ByteReader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    std::uint64_t read_uint(int n_bytes) {
        require(n_bytes);
        std::uint64_t v = 0;
        for (int i = 0; i < n_bytes; ++i) {
            v |= std::uint64_t(static_cast<unsigned char>(buf_[pos_ + std::size_t(i)]))
                 << (8 * i);
        }
        pos_ += std::size_t(n_bytes);
        return v;
    }

    std::string read_string(std::size_t len) {
        require(static_cast<int>(len));
        std::string s = buf_.substr(pos_, len);
        pos_ += len;
        return s;
    }

    template <typename T>
    T read_value() {
        if constexpr (sizeof(T) == 4) {
            return std::bit_cast<T>(static_cast<std::uint32_t>(read_uint(4)));
        } else {
            return std::bit_cast<T>(read_uint(8));
        }
    }

    bool exhausted() const { return pos_ == buf_.size(); }

private:
    void require(int n) {
        if (pos_ + std::size_t(n) > buf_.size()) {
            throw IoError("checkpoint truncated: " + path_);
        }
    }

    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

} // namespace detail

struct TensorRecord {
    std::string name;
    std::uint8_t dtype = 0; // 0 = f32, 1 = f64
    std::vector<std::uint64_t> extents;
    std::vector<float> f32;
    std::vector<double> f64;

    std::size_t count() const { return dtype == 0 ? f32.size() : f64.size(); }
};

struct Checkpoint {
    std::string config_text;
    std::vector<TensorRecord> params;
    std::vector<TensorRecord> optimizer;
    std::uint64_t adam_step = 0;
    std::array<std::uint64_t, 4> rng_state{};
    std::uint32_t epoch = 0;
};

namespace detail {

inline void write_record(std::string& out, const TensorRecord& rec) {
    write_bytes_le(out, rec.name.size(), 4);
    out.append(rec.name);
    out.push_back(char(rec.dtype));
    write_bytes_le(out, rec.extents.size(), 4);
    for (auto e : rec.extents) write_bytes_le(out, e, 8);
    if (rec.dtype == 0) {
        for (float v : rec.f32) write_value_le(out, v);
    } else {
        for (double v : rec.f64) write_value_le(out, v);
    }
}

inline TensorRecord read_record(ByteReader& r) {
    TensorRecord rec;
    rec.name = r.read_string(r.read_uint(4));
    rec.dtype = static_cast<std::uint8_t>(r.read_uint(1));
    if (rec.dtype > 1) throw IoError("checkpoint: unknown dtype tag");
    const std::size_t rank = r.read_uint(4);
    rec.extents.resize(rank);
    std::size_t n = 1;
    for (auto& e : rec.extents) {
        e = r.read_uint(8);
        n *= static_cast<std::size_t>(e);
    }
    if (rec.dtype == 0) {
        rec.f32.resize(n);
        for (auto& v : rec.f32) v = r.read_value<float>();
    } else {
        rec.f64.resize(n);
        for (auto& v : rec.f64) v = r.read_value<double>();
    }
    return rec;
}

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::write_bytes_le(out, kCheckpointVersion, 4);
    detail::write_bytes_le(out, ck.config_text.size(), 4);
    out.append(ck.config_text);
    detail::write_bytes_le(out, ck.params.size(), 4);
    for (const auto& rec : ck.params) detail::write_record(out, rec);
    detail::write_bytes_le(out, ck.optimizer.size(), 4);
    for (const auto& rec : ck.optimizer) detail::write_record(out, rec);
    detail::write_bytes_le(out, ck.adam_step, 8);
    for (auto w : ck.rng_state) detail::write_bytes_le(out, w, 8);
    detail::write_bytes_le(out, ck.epoch, 4);
    return out;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    const std::string bytes = serialize_checkpoint(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("missing checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    detail::ByteReader r(buf, path);
    if (r.read_string(4) != std::string(kCheckpointMagic, 4)) {
        throw IoError("not a checkpoint file: " + path);
    }
    if (r.read_uint(4) != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version: " + path);
    }
    Checkpoint ck;
    ck.config_text = r.read_string(r.read_uint(4));
    const std::size_t n_params = r.read_uint(4);
    ck.params.reserve(n_params);
    for (std::size_t i = 0; i < n_params; ++i) ck.params.push_back(detail::read_record(r));
    const std::size_t n_opt = r.read_uint(4);
    ck.optimizer.reserve(n_opt);
    for (std::size_t i = 0; i < n_opt; ++i) ck.optimizer.push_back(detail::read_record(r));
    ck.adam_step = r.read_uint(8);
    for (auto& w : ck.rng_state) w = r.read_uint(8);
    ck.epoch = static_cast<std::uint32_t>(r.read_uint(4));
    if (!r.exhausted()) throw IoError("trailing bytes in checkpoint: " + path);
    return ck;
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint bridging (single precision training state)
// ---------------------------------------------------------------------------

inline TensorRecord record_from_values(const std::string& name,
                                       const std::vector<std::size_t>& shape,
                                       const std::vector<float>& values) {
    TensorRecord rec;
    rec.name = name;
    rec.dtype = 0;
    rec.extents.assign(shape.begin(), shape.end());
    rec.f32 = values;
    return rec;
}

inline Checkpoint make_checkpoint(const std::string& config_text,
                                  ParamRegistry<float>& params, Adam<float>& adam,
                                  const Rng& rng, std::uint32_t epoch) {
    Checkpoint ck;
    ck.config_text = config_text;
    for (auto& p : params) {
        ck.params.push_back(record_from_values(p.name, p.value.shape(), p.value.data()));
    }
    for (auto& p : params) {
        auto& slot = adam.slot(p.name);
        if (slot.m.empty()) {
            slot.m.assign(p.value.numel(), 0.0f);
            slot.v.assign(p.value.numel(), 0.0f);
        }
        ck.optimizer.push_back(record_from_values("adam.m." + p.name, p.value.shape(), slot.m));
        ck.optimizer.push_back(record_from_values("adam.v." + p.name, p.value.shape(), slot.v));
    }
    ck.adam_step = adam.step_count();
    ck.rng_state = rng.state();
    ck.epoch = epoch;
    return ck;
}

inline void restore_params(const Checkpoint& ck, ParamRegistry<float>& params) {
    if (ck.params.size() != params.size()) {
        throw DependencyError("checkpoint parameter count mismatch: file has " +
                              std::to_string(ck.params.size()) + ", model has " +
                              std::to_string(params.size()));
    }
    std::size_t i = 0;
    for (auto& p : params) {
        const TensorRecord& rec = ck.params[i++];
        if (rec.name != p.name || rec.count() != p.value.numel() || rec.dtype != 0) {
            throw DependencyError("checkpoint record '" + rec.name +
                                  "' does not match model parameter '" + p.name + "'");
        }
        p.value.data() = rec.f32;
    }
}

inline void restore_optimizer(const Checkpoint& ck, ParamRegistry<float>& params,
                              Adam<float>& adam) {
    adam.set_step_count(ck.adam_step);
    std::size_t i = 0;
    for (auto& p : params) {
        if (i + 1 >= ck.optimizer.size() + 1) {
            throw DependencyError("checkpoint optimizer state incomplete");
        }
        const TensorRecord& m = ck.optimizer[i++];
        const TensorRecord& v = ck.optimizer[i++];
        if (m.name != "adam.m." + p.name || v.name != "adam.v." + p.name) {
            throw DependencyError("checkpoint optimizer record order mismatch at " + m.name);
        }
        auto& slot = adam.slot(p.name);
        slot.m = m.f32;
        slot.v = v.f32;
    }
}

} // namespace mambaloc
