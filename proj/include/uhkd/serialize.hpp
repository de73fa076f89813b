#pragma once

// Bit-exact binary formats and the metrics CSV.
//
// Checkpoint ("UHKDCKPT"): u32 version, u32 entry count, then per entry
// (u16 path length, UTF-8 path, u32 rank, u64 extents..., f64 data...),
// little-endian, followed by CRC32 of the payload (everything after the
// magic, before the CRC).
//
// Spectrum dump ("UHKDSPEC"): u32 version, u32 rank, u64 extents[rank],
// real plane then imag plane as f64.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "uhkd/models.hpp"
#include "uhkd/spectral.hpp"

namespace uhkd {

namespace ser {

inline std::uint32_t crc32(const unsigned char* data, std::size_t n,
                           std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return ~crc;
}

// little-endian append helpers (host is assumed little-endian; asserted)
static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

template <class T>
inline void put(std::vector<unsigned char>& out, T v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
inline T take(const unsigned char*& p, const unsigned char* end) {
    if (p + sizeof(T) > end) throw std::runtime_error("checkpoint: truncated data");
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
}

} // namespace ser

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kSpecDumpVersion = 1;

inline void save_checkpoint(const ParameterRegistry& reg, const std::string& path) {
    std::vector<unsigned char> payload;
    ser::put<std::uint32_t>(payload, kCheckpointVersion);
    ser::put<std::uint32_t>(payload, std::uint32_t(reg.count()));
    for (const auto& name : reg.paths()) {
        const Tensor& t = reg.get(name);
        ser::put<std::uint16_t>(payload, std::uint16_t(name.size()));
        payload.insert(payload.end(), name.begin(), name.end());
        ser::put<std::uint32_t>(payload, std::uint32_t(t.rank()));
        for (auto e : t.shape()) ser::put<std::uint64_t>(payload, std::uint64_t(e));
        for (double v : t.data()) ser::put<double>(payload, v);
    }
    const std::uint32_t crc = ser::crc32(payload.data(), payload.size());

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write("UHKDCKPT", 8);
    f.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size()));
    f.write(reinterpret_cast<const char*>(&crc), 4);
}

// Loads into an existing registry; every stored path must exist with the
// same shape.
inline void load_checkpoint(ParameterRegistry& reg, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "UHKDCKPT", 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);

    const unsigned char* payload = bytes.data() + 8;
    const std::size_t payload_len = bytes.size() - 12;
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    if (ser::crc32(payload, payload_len) != stored_crc)
        throw std::runtime_error("load_checkpoint: CRC mismatch in " + path);

    const unsigned char* p = payload;
    const unsigned char* end = payload + payload_len;
    const auto version = ser::take<std::uint32_t>(p, end);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(version));
    const auto count = ser::take<std::uint32_t>(p, end);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto plen = ser::take<std::uint16_t>(p, end);
        if (p + plen > end) throw std::runtime_error("checkpoint: truncated path");
        std::string name(reinterpret_cast<const char*>(p), plen);
        p += plen;
        const auto rank = ser::take<std::uint32_t>(p, end);
        Shape shape(rank);
        for (auto& e : shape) e = std::size_t(ser::take<std::uint64_t>(p, end));
        Tensor& dst = reg.get(name);
        if (dst.shape() != shape)
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        for (auto& v : dst.data()) v = ser::take<double>(p, end);
    }
}

inline void dump_spectrum(const Spectrum& s, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("dump_spectrum: cannot open " + path);
    f.write("UHKDSPEC", 8);
    const std::uint32_t version = kSpecDumpVersion;
    const std::uint32_t rank = std::uint32_t(s.real.rank());
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&rank), 4);
    for (auto e : s.real.shape()) {
        const std::uint64_t e64 = e;
        f.write(reinterpret_cast<const char*>(&e64), 8);
    }
    f.write(reinterpret_cast<const char*>(s.real.data().data()),
            std::streamsize(s.real.size() * sizeof(double)));
    f.write(reinterpret_cast<const char*>(s.imag.data().data()),
            std::streamsize(s.imag.size() * sizeof(double)));
}

inline Spectrum read_spectrum(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_spectrum: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (f.gcount() != 8 || std::memcmp(magic, "UHKDSPEC", 8) != 0)
        throw std::runtime_error("read_spectrum: bad magic in " + path);
    std::uint32_t version, rank;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&rank), 4);
    Shape shape(rank);
    for (auto& e : shape) {
        std::uint64_t e64;
        f.read(reinterpret_cast<char*>(&e64), 8);
        e = std::size_t(e64);
    }
    Spectrum s;
    s.real = Tensor(shape);
    s.imag = Tensor(shape);
    f.read(reinterpret_cast<char*>(s.real.data().data()),
           std::streamsize(s.real.size() * sizeof(double)));
    f.read(reinterpret_cast<char*>(s.imag.data().data()),
           std::streamsize(s.imag.size() * sizeof(double)));
    if (!f) throw std::runtime_error("read_spectrum: truncated file " + path);
    s.layout = (rank == 4) ? Layout::GRID : Layout::SEQ;
    return s;
}

} // namespace uhkd
