#pragma once

// Little-endian packing helpers shared by the binary formats.

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ttyrl/errors.hpp"

namespace ttyrl::detail {

class ByteWriter {
 public:
  template <typename T>
    requires std::is_integral_v<T> || std::is_floating_point_v<T>
  void put(T value) {
    using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>,
                                                      std::conditional_t<sizeof(T) == 8, std::int64_t, std::int32_t>, T>>;
    U bits;
    std::memcpy(&bits, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::byte>((bits >> (8 * i)) & 0xFF));
  }

  void put_bytes(std::span<const std::byte> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void put_raw(std::string_view s) {
    for (char c : s) buf_.push_back(static_cast<std::byte>(c));
  }
  void put_string16(std::string_view s) {
    put(static_cast<std::uint16_t>(s.size()));
    put_raw(s);
  }

  const std::vector<std::byte>& bytes() const noexcept { return buf_; }
  std::vector<std::byte>& bytes() noexcept { return buf_; }
  std::size_t size() const noexcept { return buf_.size(); }

 private:
  std::vector<std::byte> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::byte> data, ErrorKind on_underflow)
      : data_(data), on_underflow_(on_underflow) {}

  template <typename T>
    requires std::is_integral_v<T> || std::is_floating_point_v<T>
  T get() {
    using U = std::make_unsigned_t<std::conditional_t<std::is_floating_point_v<T>,
                                                      std::conditional_t<sizeof(T) == 8, std::int64_t, std::int32_t>, T>>;
    need(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(std::to_integer<unsigned>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
  }

  std::string get_raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string get_string16() { return get_raw(get<std::uint16_t>()); }

  std::span<const std::byte> get_bytes(std::size_t n) {
    need(n);
    auto out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error(on_underflow_, "unexpected end of data");
  }

  std::span<const std::byte> data_;
  std::size_t pos_ = 0;
  ErrorKind on_underflow_;
};

std::uint32_t crc32_of(std::span<const std::byte> bytes, std::uint32_t seed = 0);

}  // namespace ttyrl::detail
