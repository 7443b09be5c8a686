#pragma once

// In-process transport. Every payload crossing the client/server boundary is
// serialized to bytes and decoded on the other side, so byte counts in the
// reports are real payload sizes. Shapes are agreed out of band (config), so
// payloads carry no headers.

#include <atomic>
#include <cstdint>
#include <vector>

#include "fedgala/encoders.hpp"
#include "fedgala/wire.hpp"

namespace fedgala {

/// Counts every byte that crosses the shim, per direction.
class TrafficCounter {
 public:
  void add_up(std::size_t n) noexcept { up_.fetch_add(n, std::memory_order_relaxed); }
  void add_down(std::size_t n) noexcept { down_.fetch_add(n, std::memory_order_relaxed); }
  std::uint64_t up() const noexcept { return up_.load(); }
  std::uint64_t down() const noexcept { return down_.load(); }

 private:
  std::atomic<std::uint64_t> up_{0};
  std::atomic<std::uint64_t> down_{0};
};

struct Transport {
  TrafficCounter* counter = nullptr;

  /// Client -> server. Returns the bytes as received by the server.
  Bytes upload(Bytes payload) const {
    if (counter) counter->add_up(payload.size());
    return payload;
  }
  /// Server -> one client.
  Bytes download(Bytes payload) const {
    if (counter) counter->add_down(payload.size());
    return payload;
  }
};

// -- Phase I ----------------------------------------------------------------

struct StructuralUpload {
  StructuralBlock block;
  double avg_degree = 0.0;
};

/// 4 * |theta_str| + 8 bytes.
inline Bytes encode(const StructuralUpload& u) {
  ByteWriter w;
  w.put_matrix_f32(u.block.w1);
  w.put_matrix_f32(u.block.w2);
  w.put_f64(u.avg_degree);
  return w.take();
}

inline StructuralUpload decode_structural_upload(const Bytes& b, const EncoderDims& dims) {
  ByteReader r(b);
  StructuralUpload u;
  u.block.w1.resize(static_cast<Eigen::Index>(dims.d_pe), static_cast<Eigen::Index>(dims.d));
  u.block.w2.resize(static_cast<Eigen::Index>(dims.d), static_cast<Eigen::Index>(dims.d));
  r.get_matrix_f32(u.block.w1);
  r.get_matrix_f32(u.block.w2);
  u.avg_degree = r.get_f64();
  require(r.remaining() == 0, "transport", "trailing bytes in structural upload");
  return u;
}

/// Global block followed by the history pool entries, oldest first.
inline Bytes encode_broadcast(const StructuralBlock& global, const std::vector<StructuralBlock>& pool) {
  ByteWriter w;
  w.put_matrix_f32(global.w1);
  w.put_matrix_f32(global.w2);
  for (const auto& b : pool) {
    w.put_matrix_f32(b.w1);
    w.put_matrix_f32(b.w2);
  }
  return w.take();
}

struct StructuralBroadcast {
  StructuralBlock global;
  std::vector<StructuralBlock> pool;
};

inline StructuralBroadcast decode_broadcast(const Bytes& b, const EncoderDims& dims) {
  const std::size_t block_bytes = 4 * (dims.d_pe * dims.d + dims.d * dims.d);
  require(b.size() % block_bytes == 0 && !b.empty(), "transport", "broadcast size is not a whole number of blocks");
  ByteReader r(b);
  auto read_block = [&] {
    StructuralBlock blk;
    blk.w1.resize(static_cast<Eigen::Index>(dims.d_pe), static_cast<Eigen::Index>(dims.d));
    blk.w2.resize(static_cast<Eigen::Index>(dims.d), static_cast<Eigen::Index>(dims.d));
    r.get_matrix_f32(blk.w1);
    r.get_matrix_f32(blk.w2);
    return blk;
  };
  StructuralBroadcast out;
  out.global = read_block();
  while (r.remaining() > 0) out.pool.push_back(read_block());
  return out;
}

}  // namespace fedgala
