#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bidrl/error.hpp"

namespace bidrl {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Appends little-endian scalars to a byte buffer.
class BinaryWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { raw(&v, sizeof v); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void i64(std::int64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void bytes(std::string_view s) { buf_.append(s); }
    /// u32 length prefix then bytes.
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }
    void vec(const Eigen::VectorXd& v) {
        u64(static_cast<std::uint64_t>(v.size()));
        raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
    }
    void f64s(std::span<const double> v) {
        u64(v.size());
        raw(v.data(), sizeof(double) * v.size());
    }

    const std::string& buffer() const { return buf_; }
    std::string& buffer() { return buf_; }

private:
    void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    std::string buf_;
};

/// Reads little-endian scalars; failures raise LoadError tagged with the current field.
class BinaryReader {
public:
    explicit BinaryReader(std::string_view data) : data_(data) {}

    void field(std::string name) { field_ = std::move(name); }
    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    std::uint8_t u8() { return scalar<std::uint8_t>(); }
    std::uint16_t u16() { return scalar<std::uint16_t>(); }
    std::uint32_t u32() { return scalar<std::uint32_t>(); }
    std::uint64_t u64() { return scalar<std::uint64_t>(); }
    std::int64_t i64() { return scalar<std::int64_t>(); }
    double f64() { return scalar<double>(); }
    std::string_view bytes(std::size_t n) {
        need(n);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::string str() { return std::string(bytes(u32())); }
    Eigen::VectorXd vec() {
        const auto n = u64();
        if (n > remaining() / sizeof(double)) throw LoadError(field_, "vector length exceeds file size");
        Eigen::VectorXd v(static_cast<Eigen::Index>(n));
        std::memcpy(v.data(), bytes(n * sizeof(double)).data(), n * sizeof(double));
        return v;
    }
    std::vector<double> f64s() {
        const auto n = u64();
        if (n > remaining() / sizeof(double)) throw LoadError(field_, "vector length exceeds file size");
        std::vector<double> v(n);
        std::memcpy(v.data(), bytes(n * sizeof(double)).data(), n * sizeof(double));
        return v;
    }

private:
    template <class T>
    T scalar() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void need(std::size_t n) const {
        if (remaining() < n) throw LoadError(field_, "unexpected end of data");
    }

    std::string_view data_;
    std::size_t pos_ = 0;
    std::string field_ = "header";
};

std::uint32_t crc32_of(std::string_view bytes);
/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);
/// First 8 bytes of the SHA-256, as an integer.
std::uint64_t hash64(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and renames, so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace bidrl
