#pragma once

// Shared vocabulary: matrix aliases, module-tagged errors, seeded RNG
// derivation and content checksums.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedgala {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

using NodeId = std::uint32_t;
using ClientId = std::uint32_t;
using ClassId = std::uint32_t;
using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

/// Error raised by any module; carries the module name so the experiment
/// driver can report where a run aborted.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

inline void require(bool cond, const char* module, const std::string& what) {
  if (!cond) throw Error(module, what);
}

// splitmix64 finalizer; used to derive independent stream seeds from a tuple
// of integers (base seed, client, round, epoch, purpose tag, ...).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

using Rng = std::mt19937_64;

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * dist(rng);
  return m;
}

/// Round every entry to the nearest float32 value.
inline void round_to_f32(Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

/// FNV-1a over raw bytes.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t checksum(const Matrix& m, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const Eigen::Index dims[2] = {m.rows(), m.cols()};
  h = fnv1a(dims, sizeof(dims), h);
  return fnv1a(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline double cosine(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

inline constexpr double kZeroNorm = 1e-12;

/// Row-wise L2 normalization; rows with norm <= 1e-12 become exact zeros.
inline Matrix normalize_rows(const Matrix& u, Vector* norms = nullptr) {
  Matrix z(u.rows(), u.cols());
  Vector n(u.rows());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    n[i] = u.row(i).norm();
    if (n[i] > kZeroNorm)
      z.row(i) = u.row(i) / n[i];
    else
      z.row(i).setZero();
  }
  if (norms) *norms = std::move(n);
  return z;
}

/// Numerically stable softmax.
inline Vector softmax(const Vector& x) {
  Vector e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace fedgala
