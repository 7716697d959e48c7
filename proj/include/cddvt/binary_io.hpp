#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "numerics.hpp"

namespace cddvt {

using Bytes = std::vector<std::uint8_t>;

/// Little-endian byte sink.
class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void tag(std::string_view four) { buf_.insert(buf_.end(), four.begin(), four.end()); }
    void bytes(const Bytes& b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

    /// rows u32, cols u32, then rows*cols f64.
    void matrix(const Matrix& m) {
        u32(static_cast<std::uint32_t>(m.rows()));
        u32(static_cast<std::uint32_t>(m.cols()));
        for (double v : m.data()) f64(v);
    }

    const Bytes& buffer() const noexcept { return buf_; }
    Bytes take() { return std::move(buf_); }

private:
    Bytes buf_;
};

/// Little-endian byte source; every failure reports the absolute byte offset.
class ByteReader {
public:
    explicit ByteReader(const Bytes& buf, std::size_t base_offset = 0) : buf_(buf), base_(base_offset) {}

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string tag() {
        need(4, "tag");
        std::string t(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + 4));
        pos_ += 4;
        return t;
    }
    Bytes bytes(std::size_t n) {
        need(n, "block");
        Bytes b(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return b;
    }

    Matrix matrix() {
        const std::size_t at = offset();
        const std::uint32_t r = u32();
        const std::uint32_t c = u32();
        const std::uint64_t n = static_cast<std::uint64_t>(r) * c;
        if (n * 8 > remaining()) throw ParseError("matrix payload truncated", at);
        std::vector<double> data(n);
        for (auto& v : data) v = f64();
        try {
            return Matrix(r, c, std::move(data));
        } catch (const NumericalError&) {
            throw ParseError("matrix contains non-finite values", at);
        }
    }

    std::size_t offset() const noexcept { return base_ + pos_; }
    std::size_t remaining() const noexcept { return buf_.size() - pos_; }
    bool done() const noexcept { return pos_ == buf_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (remaining() < n) throw ParseError(std::string("truncated data reading ") + what, offset());
    }

    const Bytes& buf_;
    std::size_t base_;
    std::size_t pos_ = 0;
};

inline Bytes read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return b;
}

/// Creates the directory that will hold `path`, if any.
inline void ensure_parent_directory(const std::string& path) {
    const std::filesystem::path parent = std::filesystem::path(path).parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
    if (ec) throw IoError("cannot create directory '" + parent.string() + "': " + ec.message());
}

inline void write_file(const std::string& path, const Bytes& bytes) {
    ensure_parent_directory(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace cddvt
