#pragma once

// Named-tensor container. Layout, all integers little-endian u32:
//   "ENTOTEN1" | count | { name_len | name | n c h w | f32 values }* | crc32
// The CRC-32 (IEEE, reflected 0xEDB88320) covers every byte between the
// magic and the checksum. Entries are stored sorted by name.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ento/error.hpp"
#include "ento/tensor.hpp"

namespace ento {

using TensorMap = std::map<std::string, Tensor<float>>;

inline constexpr char kContainerMagic[8] = {'E', 'N', 'T', 'O', 'T', 'E', 'N', '1'};

namespace detail {

constexpr std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

inline constexpr auto kCrcTable = make_crc_table();

} // namespace detail

inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
    std::uint32_t c = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) c = detail::kCrcTable[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class ByteReader {
public:
    ByteReader(const unsigned char* data, std::size_t size) : data_(data), size_(size) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == size_; }
    std::size_t remaining() const { return size_ - pos_; }

private:
    void need(std::size_t n) const {
        if (size_ - pos_ < n) throw ContainerError("tensor container truncated");
    }
    const unsigned char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return buf;
}

} // namespace detail

/// Writes `bytes` to a sibling temporary and renames it over `path`, so a
/// failed write never leaves a partial file behind.
inline void write_file_atomic(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw IoError("write failed: " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot rename into " + path.string() + ": " + ec.message());
    }
}

inline std::vector<unsigned char> encode_container(const TensorMap& tensors) {
    std::vector<unsigned char> out(kContainerMagic, kContainerMagic + 8);
    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        const Shape s = t.shape();
        for (std::size_t d : {s.n, s.c, s.h, s.w}) {
            if (d > 0xFFFFFFFFu) throw ContainerError("dimension too large for container: " + name);
            detail::put_u32(out, static_cast<std::uint32_t>(d));
        }
        for (float v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    detail::put_u32(out, crc32(out.data() + 8, out.size() - 8));
    return out;
}

/// Validates magic and checksum before decoding any entry.
inline TensorMap decode_container(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0) {
        throw ContainerError("not a tensor container (bad magic)");
    }
    const std::size_t payload = bytes.size() - 12;
    detail::ByteReader tail(bytes.data() + bytes.size() - 4, 4);
    if (crc32(bytes.data() + 8, payload) != tail.u32()) throw ChecksumError("tensor container checksum mismatch");

    detail::ByteReader r(bytes.data() + 8, payload);
    const std::uint32_t count = r.u32();
    TensorMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u32());
        Shape s;
        s.n = r.u32();
        s.c = r.u32();
        s.h = r.u32();
        s.w = r.u32();
        if (s.numel() > r.remaining() / 4) throw ContainerError("tensor container truncated: " + name);
        std::vector<float> values(s.numel());
        for (float& v : values) v = std::bit_cast<float>(r.u32());
        if (!out.emplace(name, Tensor<float>(s, std::move(values))).second) {
            throw ContainerError("duplicate entry in tensor container: " + name);
        }
    }
    if (!r.done()) throw ContainerError("trailing bytes in tensor container");
    return out;
}

inline void save_container(const std::filesystem::path& path, const TensorMap& tensors) {
    write_file_atomic(path, encode_container(tensors));
}

inline TensorMap load_container(const std::filesystem::path& path) { return decode_container(detail::read_file(path)); }

} // namespace ento
