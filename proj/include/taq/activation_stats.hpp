#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "taq/linalg.hpp"

namespace taq {

inline constexpr std::size_t kDefaultReservoirCapacity = 256;

// Fixed-size uniform sample over a stream of activation vectors
// (Algorithm R).
class Reservoir {
 public:
  Reservoir(std::size_t capacity, std::size_t width, std::uint64_t seed);

  void offer(std::span<const double> v);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t rows() const noexcept { return rows_; }
  std::uint64_t seen() const noexcept { return seen_; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * width_, width_};
  }
  Tensor to_tensor() const;

 private:
  std::size_t capacity_;
  std::size_t width_;
  std::size_t rows_ = 0;
  std::uint64_t seen_ = 0;
  std::vector<double> data_;
  SeededRng rng_;
};

// Running first and second power sums over every activation element of a
// layer. Sums are compensated (Neumaier) so the one-pass variance matches a
// two-pass evaluation closely.
class StreamingMoments {
 public:
  void update(std::span<const double> values) noexcept;

  double s1() const noexcept { return s1_ + c1_; }
  double s2() const noexcept { return s2_ + c2_; }
  std::uint64_t n() const noexcept { return n_; }

 private:
  double s1_ = 0.0, c1_ = 0.0;
  double s2_ = 0.0, c2_ = 0.0;
  std::uint64_t n_ = 0;
};

struct EntropyResult {
  double nats = 0.0;
  std::size_t kept_eigenvalues = 0;
  bool degenerate = false;
};

// Shannon entropy of the normalized eigenvalue spectrum of the centered
// token Gram matrix of `rows` (one activation vector per row).
EntropyResult spectral_entropy(const Tensor& rows);
EntropyResult spectral_entropy(const Reservoir& reservoir);

struct VarianceStability {
  double variance = 0.0;
  double stability = 0.0;
};

// Var = s2/n - (s1/n)^2 clamped at 0; stability is its negation.
VarianceStability variance_and_stability(const StreamingMoments& m);

struct ZScores {
  std::vector<double> values;
  bool degenerate = false;
};

// Population z-scores. Spread below 1e-12 yields all zeros, flagged.
ZScores zscore(std::span<const double> values);

// R = alpha * zH + beta * zS with alpha, beta >= 0 summing to one.
std::vector<double> relevance(std::span<const double> z_entropy,
                              std::span<const double> z_stability,
                              double alpha, double beta);

struct LayerStats {
  std::size_t layer = 0;
  double entropy = 0.0;
  double variance = 0.0;
  double stability = 0.0;
  double z_entropy = 0.0;
  double z_stability = 0.0;
  double relevance = 0.0;
  std::size_t reservoir_rows = 0;
  std::uint64_t element_count = 0;
  bool entropy_degenerate = false;
};

struct LayerProfile {
  std::vector<LayerStats> layers;
  bool z_entropy_degenerate = false;
  bool z_stability_degenerate = false;

  std::vector<double> relevance() const;
};

// Accumulates per-layer reservoirs and moments from block outputs. Each row
// of an observed block output is one token activation, offered to the
// layer's reservoir in row order.
class LayerScorer {
 public:
  LayerScorer(std::size_t n_layers, std::size_t width,
              std::size_t reservoir_capacity, std::uint64_t seed);

  void observe(std::size_t layer, const Tensor& block_output);

  const Reservoir& reservoir(std::size_t layer) const {
    return reservoirs_.at(layer);
  }
  const StreamingMoments& moments(std::size_t layer) const {
    return moments_.at(layer);
  }
  std::size_t layer_count() const noexcept { return reservoirs_.size(); }

  // Entropy, stability, z-scores and relevance for every layer. Throws
  // InsufficientData when a layer has seen no activations.
  LayerProfile finalize(double alpha, double beta) const;

 private:
  std::vector<Reservoir> reservoirs_;
  std::vector<StreamingMoments> moments_;
};

struct TaskDirection {
  std::size_t layer = 0;
  std::string task;
  std::string contrast_policy;
  std::vector<double> vector;
};

// Mean over prompt pairs of (task activation - contrast activation); each
// row of the inputs is one prompt's mean-pooled activation at `layer`.
TaskDirection task_direction(std::size_t layer, const Tensor& task_acts,
                             const Tensor& contrast_acts, std::string task = {},
                             std::string contrast_policy = {});

struct Alignment {
  double cosine = 0.0;
  bool degenerate = false;
};

Alignment cosine_alignment(const TaskDirection& a, const TaskDirection& b);

// Mean over rows, for pooling a prompt's token activations.
std::vector<double> mean_pool(const Tensor& token_acts);

}  // namespace taq
