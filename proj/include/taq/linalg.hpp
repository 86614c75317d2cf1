#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace taq {

// Cache-line aligned storage. Eigen kernels peel and vectorize reductions
// according to the start address, so an address-independent alignment keeps
// results bitwise reproducible within and across runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

// Dense row-major matrix of doubles. Used for weights, captured activations
// and logits alike; `label` names the role when it matters (checkpoint
// entries, diagnostics).
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, std::string label = {});
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data,
         std::string label = {});

  static Tensor from_rows(
      std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  const std::string& label() const noexcept { return label_; }
  void set_label(std::string label) { label_ = std::move(label); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  bool all_finite() const noexcept;
  double frobenius_norm() const noexcept;

  // Value equality (shape and bit-identical data); labels are ignored.
  bool operator==(const Tensor& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double, AlignedAllocator<double>> data_;
  std::string label_;
};

// splitmix64 stream. Identical seeds give identical streams on every
// platform; normals come from Box-Muller with the second variate cached.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  // Uniform integer in [0, n), unbiased. n must be positive.
  std::uint64_t uniform_int(std::uint64_t n) noexcept;
  double normal() noexcept;

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent seed for a named sub-stream.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) noexcept;

std::vector<double> rng_normal(SeededRng& rng, std::size_t n);

// K = (1/r) Z Z^T for Z of shape r x d.
Tensor gram_matrix(const Tensor& z);

// (1/r) Z^T Z, d x d. Same nonzero eigenvalues as gram_matrix(z).
Tensor dual_gram_matrix(const Tensor& z);

// Subtracts the column means.
Tensor center_rows(const Tensor& x);

struct EigenSolverOptions {
  double relative_tolerance = 1e-12;
  int max_sweeps = 100;
};

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
// descending. The input is symmetrized as (K + K^T)/2 first. Values in
// [-1e-9, 0) are rounding noise on PSD inputs and are returned as 0.
std::vector<double> sym_eigvals(const Tensor& k,
                                const EigenSolverOptions& options = {});

}  // namespace taq
