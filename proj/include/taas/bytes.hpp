#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace taas {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

class DecodeError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Canonical big-endian writer. Strings and byte blobs are u32 length-prefixed.
class ByteWriter {
  public:
    ByteWriter() = default;

    void u8(std::uint8_t v) { buf().push_back(v); }
    void u16(std::uint16_t v) { put_be(v, 2); }
    void u32(std::uint32_t v) { put_be(v, 4); }
    void u64(std::uint64_t v) { put_be(v, 8); }
    void boolean(bool v) { u8(v ? 1 : 0); }

    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf().insert(buf().end(), s.begin(), s.end());
    }
    void blob(ByteView b) {
        u32(static_cast<std::uint32_t>(b.size()));
        buf().insert(buf().end(), b.begin(), b.end());
    }
    void raw(ByteView b) { buf().insert(buf().end(), b.begin(), b.end()); }

    const Bytes& bytes() const { return out_; }
    Bytes take() { return std::move(out_); }

  private:
    Bytes& buf() { return out_; }
    void put_be(std::uint64_t v, int width) {
        for (int i = width - 1; i >= 0; --i) {
            buf().push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
        }
    }

    Bytes out_;
};

class ByteReader {
  public:
    explicit ByteReader(ByteView in) : in_(in) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_be(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_be(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_be(4)); }
    std::uint64_t u64() { return get_be(8); }
    bool boolean() {
        auto v = u8();
        if (v > 1) throw DecodeError("invalid boolean byte");
        return v == 1;
    }

    std::string str() {
        auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    Bytes blob() {
        auto n = u32();
        need(n);
        Bytes b(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return b;
    }
    // Guards list lengths against garbage input before reserving.
    std::uint32_t count(std::size_t min_elem_size = 1) {
        auto n = u32();
        if (min_elem_size > 0 && n > remaining() / min_elem_size) {
            throw DecodeError("list length exceeds input");
        }
        return n;
    }

    std::size_t remaining() const { return in_.size() - pos_; }
    bool done() const { return pos_ == in_.size(); }
    void expect_done() const {
        if (!done()) throw DecodeError("trailing bytes after message");
    }

  private:
    void need(std::size_t n) const {
        if (remaining() < n) throw DecodeError("truncated input");
    }
    std::uint64_t get_be(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v = (v << 8) | in_[pos_ + static_cast<std::size_t>(i)];
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    ByteView in_;
    std::size_t pos_ = 0;
};

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

}  // namespace taas
