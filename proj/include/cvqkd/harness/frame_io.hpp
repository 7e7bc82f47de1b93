#pragma once

// Binary persistence of waveforms and measured frames.
//
// Layout, all fields little-endian regardless of host:
//   0   "CVQF"                      magic
//   4   u32 0x01020304              byte-order mark (reads 0x04030201 on a byte-swapped file)
//   8   u16 version, u16 kind
//   12  u32 reserved
//   16  u64 n                       complex samples
//   24  kind-specific header
//       waveform: f64 sample_rate, u32 origin, u32 reserved
//       measured: f64 snu_scale, f64 frequency_estimate, i64 lag, u32 flags, u32 reserved
//   ..  payload
//       waveform: n x (f64 re, f64 im)
//       measured: n x (f64 re, f64 im), n x i32 index, n x f64 phase
//   ..  32-byte SHA-256 of everything above
//
// Waveforms also get a JSON sidecar (path + ".json") with sample rate, length, origin, seed and
// config hash.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <openssl/evp.h>

#include "json.hpp"

#include "cvqkd/common.hpp"
#include "cvqkd/types.hpp"

namespace cvqkd::harness {

inline constexpr char kFrameMagic[4] = {'C', 'V', 'Q', 'F'};
inline constexpr std::uint32_t kByteOrderMark = 0x01020304u;
inline constexpr std::uint16_t kFrameVersion = 1;

enum class FrameKind : std::uint16_t { waveform = 1, measured = 2 };

namespace bytes {

inline void put_u(std::string& out, std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u16(std::string& out, std::uint16_t v) { put_u(out, v, 2); }
inline void put_u32(std::string& out, std::uint32_t v) { put_u(out, v, 4); }
inline void put_u64(std::string& out, std::uint64_t v) { put_u(out, v, 8); }
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
    explicit Reader(const std::string& data) : data_(data) {}

    std::uint64_t u(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(width);
        return v;
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(u(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
    std::uint64_t u64() { return u(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw Error(Stage::io, "frame file truncated: length mismatch");
    }
    const std::string& data_;
    std::size_t pos_ = 0;
};

inline std::array<unsigned char, 32> sha256(const char* data, std::size_t n) {
    std::array<unsigned char, 32> md{};
    unsigned int len = 0;
    if (EVP_Digest(data, n, md.data(), &len, EVP_sha256(), nullptr) != 1 || len != 32)
        throw Error(Stage::io, "sha256 failed");
    return md;
}

}  // namespace bytes

namespace detail {

inline std::string frame_prefix(FrameKind kind, std::uint64_t n) {
    std::string out(kFrameMagic, 4);
    bytes::put_u32(out, kByteOrderMark);
    bytes::put_u16(out, kFrameVersion);
    bytes::put_u16(out, static_cast<std::uint16_t>(kind));
    bytes::put_u32(out, 0);
    bytes::put_u64(out, n);
    return out;
}

inline void seal(std::string& out) {
    const auto md = bytes::sha256(out.data(), out.size());
    out.append(reinterpret_cast<const char*>(md.data()), md.size());
}

/// Validates magic, byte order, version, kind, total length and checksum before any payload is
/// decoded; returns the sample count.
inline std::uint64_t open_frame(const std::string& data, FrameKind kind, std::size_t header_bytes,
                                std::size_t bytes_per_sample, bytes::Reader& rd) {
    if (data.size() < 24 || std::memcmp(data.data(), kFrameMagic, 4) != 0)
        throw Error(Stage::io, "not a frame file (bad magic)");
    rd.skip(4);
    const std::uint32_t mark = rd.u32();
    if (mark != kByteOrderMark) throw Error(Stage::io, "frame file byte order does not match (cross-endian file)");
    const std::uint16_t version = rd.u16();
    if (version != kFrameVersion) throw Error(Stage::io, "unsupported frame file version " + std::to_string(version));
    const std::uint16_t k = rd.u16();
    if (k != static_cast<std::uint16_t>(kind)) throw Error(Stage::io, "frame file holds a different object kind");
    rd.skip(4);
    const std::uint64_t n = rd.u64();
    const std::uint64_t expected = 24 + header_bytes + n * bytes_per_sample + 32;
    if (n > data.size() || data.size() != expected) throw Error(Stage::io, "frame file length mismatch");
    const auto md = bytes::sha256(data.data(), data.size() - 32);
    if (std::memcmp(md.data(), data.data() + data.size() - 32, 32) != 0) throw Error(Stage::io, "frame file checksum mismatch");
    return n;
}

}  // namespace detail

inline std::string encode_waveform(const Waveform& w) {
    w.validate(Stage::io);
    std::string out = detail::frame_prefix(FrameKind::waveform, w.samples.size());
    bytes::put_f64(out, w.sample_rate);
    bytes::put_u32(out, static_cast<std::uint32_t>(w.origin));
    bytes::put_u32(out, 0);
    for (const auto& v : w.samples) {
        bytes::put_f64(out, v.real());
        bytes::put_f64(out, v.imag());
    }
    detail::seal(out);
    return out;
}

inline Waveform decode_waveform(const std::string& data) {
    bytes::Reader rd(data);
    const std::uint64_t n = detail::open_frame(data, FrameKind::waveform, 16, 16, rd);
    Waveform w;
    w.sample_rate = rd.f64();
    const std::uint32_t origin = rd.u32();
    if (origin > static_cast<std::uint32_t>(Origin::electrical)) throw Error(Stage::io, "unknown waveform origin tag");
    w.origin = static_cast<Origin>(origin);
    rd.skip(4);
    w.samples.resize(n);
    for (auto& v : w.samples) {
        const double re = rd.f64();
        v = {re, rd.f64()};
    }
    return w;
}

inline std::string encode_measured(const MeasuredFrame& m) {
    if (m.indices.size() != m.samples.size() || m.phase_trace.size() != m.samples.size())
        throw Error(Stage::io, "measured frame arrays differ in length");
    std::string out = detail::frame_prefix(FrameKind::measured, m.samples.size());
    bytes::put_f64(out, m.snu_scale);
    bytes::put_f64(out, m.frequency_estimate);
    bytes::put_u64(out, static_cast<std::uint64_t>(m.lag));
    bytes::put_u32(out, m.phase_ambiguity_flagged ? 1u : 0u);
    bytes::put_u32(out, 0);
    for (const auto& v : m.samples) {
        bytes::put_f64(out, v.real());
        bytes::put_f64(out, v.imag());
    }
    for (int k : m.indices) bytes::put_u32(out, static_cast<std::uint32_t>(k));
    for (double p : m.phase_trace) bytes::put_f64(out, p);
    detail::seal(out);
    return out;
}

inline MeasuredFrame decode_measured(const std::string& data) {
    bytes::Reader rd(data);
    const std::uint64_t n = detail::open_frame(data, FrameKind::measured, 32, 28, rd);
    MeasuredFrame m;
    m.snu_scale = rd.f64();
    m.frequency_estimate = rd.f64();
    m.lag = static_cast<long>(static_cast<std::int64_t>(rd.u64()));
    m.phase_ambiguity_flagged = (rd.u32() & 1u) != 0;
    rd.skip(4);
    m.samples.resize(n);
    for (auto& v : m.samples) {
        const double re = rd.f64();
        v = {re, rd.f64()};
    }
    m.indices.resize(n);
    for (auto& k : m.indices) k = static_cast<int>(static_cast<std::int32_t>(rd.u32()));
    m.phase_trace.resize(n);
    for (auto& p : m.phase_trace) p = rd.f64();
    return m;
}

struct WaveformMeta {
    std::uint64_t seed = 0;
    std::string config_hash;
};

/// Writes to a temporary sibling and renames it over the target.
inline void write_atomic(const std::filesystem::path& path, const std::string& data) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Stage::io, "cannot open " + tmp.string() + " for writing");
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw Error(Stage::io, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void write_waveform(const std::filesystem::path& path, const Waveform& w, const WaveformMeta& meta = {}) {
    write_atomic(path, encode_waveform(w));
    const nlohmann::json side = {{"sample_rate_hz", w.sample_rate},
                                 {"length", w.samples.size()},
                                 {"origin", to_string(w.origin)},
                                 {"seed", meta.seed},
                                 {"config_hash", meta.config_hash}};
    write_atomic(path.string() + ".json", side.dump(2) + "\n");
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Stage::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Reads a waveform and, when the sidecar exists, checks that it describes the same data.
inline Waveform read_waveform(const std::filesystem::path& path) {
    Waveform w = decode_waveform(read_file(path));
    const std::filesystem::path side = path.string() + ".json";
    if (std::filesystem::exists(side)) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(side));
        } catch (const nlohmann::json::exception&) {
            throw Error(Stage::io, "unreadable waveform sidecar " + side.string());
        }
        if (j.value("length", std::uint64_t{0}) != w.samples.size() || j.value("sample_rate_hz", 0.0) != w.sample_rate)
            throw Error(Stage::io, "waveform sidecar disagrees with the binary header");
    }
    return w;
}

inline void write_measured(const std::filesystem::path& path, const MeasuredFrame& m) {
    write_atomic(path, encode_measured(m));
}

inline MeasuredFrame read_measured(const std::filesystem::path& path) { return decode_measured(read_file(path)); }

/// CSV export (k, x_B, p_B).
inline std::string measured_csv(const MeasuredFrame& m) {
    std::ostringstream os;
    os.precision(17);
    os << "k,x_B,p_B\n";
    for (std::size_t i = 0; i < m.samples.size(); ++i)
        os << m.indices[i] << ',' << m.samples[i].real() << ',' << m.samples[i].imag() << "\n";
    return os.str();
}

}  // namespace cvqkd::harness
