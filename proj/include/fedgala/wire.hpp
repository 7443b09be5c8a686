#pragma once

// Little-endian byte packing shared by the transport shim, checkpoints and
// the graph directory format.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedgala/core.hpp"

namespace fedgala {

using Bytes = std::vector<std::byte>;

class ByteWriter {
 public:
  void put_u32(std::uint32_t v) { put_le(v); }
  void put_u64(std::uint64_t v) { put_le(v); }
  void put_f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void put_f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

  /// Row-major float32 payload, no header.
  void put_matrix_f32(const Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) put_f32(static_cast<float>(m.data()[i]));
  }

  const Bytes& bytes() const noexcept { return buf_; }
  Bytes take() noexcept { return std::move(buf_); }
  std::size_t size() const noexcept { return buf_.size(); }

 private:
  template <class U>
  void put_le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
  }

  Bytes buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> data) : data_(data) {}

  std::uint32_t get_u32() { return get_le<std::uint32_t>(); }
  std::uint64_t get_u64() { return get_le<std::uint64_t>(); }
  float get_f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  double get_f64() { return std::bit_cast<double>(get_le<std::uint64_t>()); }

  void get_matrix_f32(Matrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(get_f32());
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  template <class U>
  U get_le() {
    require(pos_ + sizeof(U) <= data_.size(), "wire", "read past end of payload");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(std::to_integer<U>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::byte> data_;
  std::size_t pos_ = 0;
};

}  // namespace fedgala
