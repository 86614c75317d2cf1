#include "taq/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "taq/error.hpp"

namespace taq {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::string label)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0), label_(std::move(label)) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data,
               std::string label)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()), label_(std::move(label)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::kInvalidShape,
                "tensor data length " + std::to_string(data_.size()) +
                    " does not match " + std::to_string(rows_) + "x" +
                    std::to_string(cols_));
  }
}

Tensor Tensor::from_rows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw Error(ErrorCode::kInvalidShape, "ragged row list");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double Tensor::frobenius_norm() const noexcept {
  double sum = 0.0;
  for (double v : data_) sum += v * v;
  return std::sqrt(sum);
}

std::uint64_t SeededRng::next_u64() noexcept {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SeededRng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_int(std::uint64_t n) noexcept {
  // Rejects the short tail so every residue is equally likely.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x >= threshold) return x % n;
  }
}

double SeededRng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) noexcept {
  // FNV-1a over the tag, folded into one splitmix step of the base seed.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  SeededRng mix(base ^ h);
  return mix.next_u64();
}

std::vector<double> rng_normal(SeededRng& rng, std::size_t n) {
  std::vector<double> out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

Tensor gram_matrix(const Tensor& z) {
  if (z.rows() == 0 || z.cols() == 0) {
    throw Error(ErrorCode::kInvalidShape, "gram_matrix of an empty matrix");
  }
  const std::size_t r = z.rows();
  const double inv = 1.0 / static_cast<double>(r);
  Tensor k(r, r);
  for (std::size_t i = 0; i < r; ++i) {
    const auto zi = z.row(i);
    for (std::size_t j = i; j < r; ++j) {
      const auto zj = z.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < z.cols(); ++c) dot += zi[c] * zj[c];
      k(i, j) = dot * inv;
      k(j, i) = k(i, j);
    }
  }
  return k;
}

Tensor dual_gram_matrix(const Tensor& z) {
  if (z.rows() == 0 || z.cols() == 0) {
    throw Error(ErrorCode::kInvalidShape, "dual_gram_matrix of an empty matrix");
  }
  const std::size_t d = z.cols();
  const double inv = 1.0 / static_cast<double>(z.rows());
  Tensor k(d, d);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const auto zr = z.row(r);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) k(i, j) += zr[i] * zr[j];
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      k(i, j) *= inv;
      k(j, i) = k(i, j);
    }
  }
  return k;
}

Tensor center_rows(const Tensor& x) {
  if (x.rows() == 0) {
    throw Error(ErrorCode::kInvalidShape, "center_rows of a matrix with no rows");
  }
  std::vector<double> mean(x.cols(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) mean[c] += row[c];
  }
  for (double& m : mean) m /= static_cast<double>(x.rows());
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) row[c] -= mean[c];
  }
  return out;
}

namespace {

double off_diagonal_norm(const Tensor& a) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (i != j) sum += a(i, j) * a(i, j);
    }
  }
  return std::sqrt(sum);
}

// Applies the rotation zeroing a(p, q) to rows and columns p and q.
void jacobi_rotate(Tensor& a, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;
  const std::size_t n = a.rows();
  for (std::size_t k = 0; k < n; ++k) {
    if (k == p || k == q) continue;
    const double akp = a(k, p);
    const double akq = a(k, q);
    const double np = c * akp - s * akq;
    const double nq = s * akp + c * akq;
    a(k, p) = np;
    a(p, k) = np;
    a(k, q) = nq;
    a(q, k) = nq;
  }
  a(p, p) -= t * apq;
  a(q, q) += t * apq;
  a(p, q) = 0.0;
  a(q, p) = 0.0;
}

}  // namespace

std::vector<double> sym_eigvals(const Tensor& k,
                                const EigenSolverOptions& options) {
  if (k.rows() != k.cols()) {
    throw Error(ErrorCode::kInvalidShape,
                "sym_eigvals needs a square matrix, got " +
                    std::to_string(k.rows()) + "x" + std::to_string(k.cols()));
  }
  const std::size_t n = k.rows();
  Tensor a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (k(i, j) + k(j, i));
  }
  const double target = options.relative_tolerance * a.frobenius_norm();

  bool converged = false;
  double off = off_diagonal_norm(a);
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    if (off <= target) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) jacobi_rotate(a, p, q);
    }
    off = off_diagonal_norm(a);
  }
  if (!converged && off > target) {
    throw ConvergenceError("Jacobi did not converge in " +
                               std::to_string(options.max_sweeps) +
                               " sweeps, off-diagonal norm " +
                               std::to_string(off),
                           off);
  }

  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = a(i, i);
    values[i] = (v < 0.0 && v >= -1e-9) ? 0.0 : v;
  }
  std::sort(values.begin(), values.end(), std::greater<>());
  return values;
}

}  // namespace taq
