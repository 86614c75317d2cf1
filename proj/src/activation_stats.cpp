#include "taq/activation_stats.hpp"

#include <algorithm>
#include <cmath>

#include "taq/error.hpp"

namespace taq {

namespace {

void neumaier_add(double& sum, double& comp, double x) noexcept {
  const double t = sum + x;
  if (std::abs(sum) >= std::abs(x)) {
    comp += (sum - t) + x;
  } else {
    comp += (x - t) + sum;
  }
  sum = t;
}

}  // namespace

Reservoir::Reservoir(std::size_t capacity, std::size_t width,
                     std::uint64_t seed)
    : capacity_(capacity), width_(width), rng_(seed) {
  if (capacity_ == 0) {
    throw Error(ErrorCode::kInvalidConfig, "reservoir capacity must be positive");
  }
  data_.reserve(capacity_ * width_);
}

void Reservoir::offer(std::span<const double> v) {
  if (v.size() != width_) {
    throw Error(ErrorCode::kInvalidShape,
                "reservoir width " + std::to_string(width_) +
                    ", offered vector of width " + std::to_string(v.size()));
  }
  ++seen_;
  if (rows_ < capacity_) {
    data_.insert(data_.end(), v.begin(), v.end());
    ++rows_;
    return;
  }
  const std::uint64_t j = rng_.uniform_int(seen_);
  if (j < capacity_) {
    std::copy(v.begin(), v.end(), data_.begin() + j * width_);
  }
}

Tensor Reservoir::to_tensor() const {
  return Tensor(rows_, width_, data_);
}

void StreamingMoments::update(std::span<const double> values) noexcept {
  for (double x : values) {
    neumaier_add(s1_, c1_, x);
    neumaier_add(s2_, c2_, x * x);
  }
  n_ += values.size();
}

EntropyResult spectral_entropy(const Tensor& rows) {
  if (rows.rows() == 0) {
    throw Error(ErrorCode::kInsufficientData, "entropy of an empty reservoir");
  }
  // The spectrum is taken on the smaller of the two Gram forms; their
  // nonzero eigenvalues coincide, so the entropy does not change.
  const Tensor z = center_rows(rows);
  const std::vector<double> eig =
      sym_eigvals(z.cols() < z.rows() ? dual_gram_matrix(z) : gram_matrix(z));
  EntropyResult result;
  const double lambda_max = eig.front();
  if (!(lambda_max > 0.0)) {
    result.degenerate = true;
    return result;
  }
  const double floor = 1e-12 * lambda_max;
  double total = 0.0;
  for (double v : eig) {
    if (v >= floor) total += v;
  }
  for (double v : eig) {
    if (v < floor) continue;
    const double p = v / total;
    result.nats -= p * std::log(p);
    ++result.kept_eigenvalues;
  }
  result.nats = std::max(result.nats, 0.0);
  return result;
}

EntropyResult spectral_entropy(const Reservoir& reservoir) {
  return spectral_entropy(reservoir.to_tensor());
}

VarianceStability variance_and_stability(const StreamingMoments& m) {
  if (m.n() == 0) {
    throw Error(ErrorCode::kInsufficientData,
                "variance of a layer with no activations");
  }
  const double n = static_cast<double>(m.n());
  const double mean = m.s1() / n;
  VarianceStability out;
  out.variance = std::max(m.s2() / n - mean * mean, 0.0);
  out.stability = -out.variance;
  return out;
}

ZScores zscore(std::span<const double> values) {
  ZScores out;
  out.values.assign(values.size(), 0.0);
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (sd < 1e-12) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.values[i] = (values[i] - mean) / sd;
  }
  return out;
}

std::vector<double> relevance(std::span<const double> z_entropy,
                              std::span<const double> z_stability,
                              double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0 || std::abs(alpha + beta - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidConfig,
                "relevance weights must be non-negative and sum to 1");
  }
  if (z_entropy.size() != z_stability.size()) {
    throw Error(ErrorCode::kInvalidShape, "score vectors differ in length");
  }
  std::vector<double> r(z_entropy.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = alpha * z_entropy[i] + beta * z_stability[i];
  }
  return r;
}

std::vector<double> LayerProfile::relevance() const {
  std::vector<double> r;
  r.reserve(layers.size());
  for (const auto& l : layers) r.push_back(l.relevance);
  return r;
}

LayerScorer::LayerScorer(std::size_t n_layers, std::size_t width,
                         std::size_t reservoir_capacity, std::uint64_t seed)
    : moments_(n_layers) {
  reservoirs_.reserve(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    reservoirs_.emplace_back(reservoir_capacity, width,
                             derive_seed(seed, "reservoir/" + std::to_string(l)));
  }
}

void LayerScorer::observe(std::size_t layer, const Tensor& block_output) {
  Reservoir& res = reservoirs_.at(layer);
  for (std::size_t r = 0; r < block_output.rows(); ++r) {
    res.offer(block_output.row(r));
  }
  moments_.at(layer).update(block_output.data());
}

LayerProfile LayerScorer::finalize(double alpha, double beta) const {
  const std::size_t n = reservoirs_.size();
  LayerProfile profile;
  profile.layers.resize(n);
  std::vector<double> h(n), s(n);
  for (std::size_t l = 0; l < n; ++l) {
    LayerStats& st = profile.layers[l];
    st.layer = l;
    if (reservoirs_[l].rows() == 0) {
      throw Error(ErrorCode::kInsufficientData,
                  "layer " + std::to_string(l) + " saw no activations");
    }
    const EntropyResult e = spectral_entropy(reservoirs_[l]);
    const VarianceStability vs = variance_and_stability(moments_[l]);
    st.entropy = e.nats;
    st.entropy_degenerate = e.degenerate;
    st.variance = vs.variance;
    st.stability = vs.stability;
    st.reservoir_rows = reservoirs_[l].rows();
    st.element_count = moments_[l].n();
    h[l] = st.entropy;
    s[l] = st.stability;
  }
  const ZScores zh = zscore(h);
  const ZScores zs = zscore(s);
  const std::vector<double> r = taq::relevance(zh.values, zs.values, alpha, beta);
  profile.z_entropy_degenerate = zh.degenerate;
  profile.z_stability_degenerate = zs.degenerate;
  for (std::size_t l = 0; l < n; ++l) {
    profile.layers[l].z_entropy = zh.values[l];
    profile.layers[l].z_stability = zs.values[l];
    profile.layers[l].relevance = r[l];
  }
  return profile;
}

TaskDirection task_direction(std::size_t layer, const Tensor& task_acts,
                             const Tensor& contrast_acts, std::string task,
                             std::string contrast_policy) {
  if (task_acts.rows() != contrast_acts.rows() || task_acts.rows() == 0) {
    throw Error(ErrorCode::kInvalidInput,
                "task and contrast prompt counts must match and be non-zero");
  }
  if (task_acts.cols() != contrast_acts.cols()) {
    throw Error(ErrorCode::kInvalidShape, "activation widths differ");
  }
  TaskDirection d;
  d.layer = layer;
  d.task = std::move(task);
  d.contrast_policy = std::move(contrast_policy);
  d.vector.assign(task_acts.cols(), 0.0);
  for (std::size_t j = 0; j < task_acts.rows(); ++j) {
    for (std::size_t c = 0; c < task_acts.cols(); ++c) {
      d.vector[c] += task_acts(j, c) - contrast_acts(j, c);
    }
  }
  for (double& v : d.vector) v /= static_cast<double>(task_acts.rows());
  return d;
}

Alignment cosine_alignment(const TaskDirection& a, const TaskDirection& b) {
  if (a.vector.size() != b.vector.size()) {
    throw Error(ErrorCode::kInvalidShape, "direction widths differ");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.vector.size(); ++i) {
    dot += a.vector[i] * b.vector[i];
    na += a.vector[i] * a.vector[i];
    nb += b.vector[i] * b.vector[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  Alignment out;
  if (na < 1e-12 || nb < 1e-12) {
    out.degenerate = true;
    return out;
  }
  out.cosine = std::clamp(dot / (na * nb), -1.0, 1.0);
  return out;
}

std::vector<double> mean_pool(const Tensor& token_acts) {
  if (token_acts.rows() == 0) {
    throw Error(ErrorCode::kInvalidInput, "mean_pool of zero tokens");
  }
  std::vector<double> out(token_acts.cols(), 0.0);
  for (std::size_t r = 0; r < token_acts.rows(); ++r) {
    for (std::size_t c = 0; c < token_acts.cols(); ++c) out[c] += token_acts(r, c);
  }
  for (double& v : out) v /= static_cast<double>(token_acts.rows());
  return out;
}

}  // namespace taq
