#pragma once

// Little-endian primitives shared by the dictionary and tensor file formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <boost/crc.hpp>

#include "emct2/error.hpp"

namespace emct2::binary {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

class Writer {
public:
    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u32(uint32_t v) { v = to_little(v); bytes(&v, 4); }
    void u64(uint64_t v) { v = to_little(v); bytes(&v, 8); }
    void f32(float v) {
        const uint32_t bits = to_little(std::bit_cast<uint32_t>(v));
        bytes(&bits, 4);
    }
    void text(const std::string& s) { bytes(s.data(), s.size()); }
    const std::vector<unsigned char>& buffer() const { return buf_; }

private:
    std::vector<unsigned char> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const unsigned char> data) : data_(data) {}

    void need(size_t n, const char* what) const {
        if (pos_ + n > data_.size()) throw IoError(std::string("truncated file while reading ") + what);
    }
    std::span<const unsigned char> take(size_t n, const char* what) {
        need(n, what);
        auto s = data_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    uint32_t u32(const char* what) {
        uint32_t v;
        std::memcpy(&v, take(4, what).data(), 4);
        return to_little(v);
    }
    uint64_t u64(const char* what) {
        uint64_t v;
        std::memcpy(&v, take(8, what).data(), 8);
        return to_little(v);
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string text(size_t n, const char* what) {
        auto s = take(n, what);
        return {reinterpret_cast<const char*>(s.data()), s.size()};
    }
    size_t position() const { return pos_; }
    size_t remaining() const { return data_.size() - pos_; }

private:
    std::span<const unsigned char> data_;
    size_t pos_ = 0;
};

inline uint32_t crc32(std::span<const unsigned char> data) {
    boost::crc_32_type crc;
    crc.process_bytes(data.data(), data.size());
    return crc.checksum();
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
    return data;
}

/// Writes through a sibling temporary file and renames, so readers never see partial output.
inline void write_file(const std::filesystem::path& path, std::span<const unsigned char> data) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
        if (!out) throw IoError("failed writing '" + path.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move output into place at '" + path.string() + "': " + ec.message());
}

} // namespace emct2::binary
