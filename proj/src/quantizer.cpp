#include "taq/quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "taq/error.hpp"

namespace taq {

bool is_admissible_bits(int bits) noexcept {
  return bits == 4 || bits == 8 || bits == 16;
}

std::uint32_t max_code(int bits) {
  if (!is_admissible_bits(bits)) {
    throw Error(ErrorCode::kInvalidInput,
                "bitwidth " + std::to_string(bits) + " not in {4, 8, 16}");
  }
  return (1u << bits) - 1u;
}

QuantParams fit_minmax(std::span<const double> group, int bits) {
  return fit_scaled(group, bits, 1.0);
}

QuantParams fit_scaled(std::span<const double> group, int bits,
                       double multiplier) {
  if (group.empty()) {
    throw Error(ErrorCode::kInvalidInput, "cannot fit an empty group");
  }
  if (!(multiplier > 0.0)) {
    throw Error(ErrorCode::kInvalidInput, "scale multiplier must be positive");
  }
  const auto [lo, hi] = std::minmax_element(group.begin(), group.end());
  const double levels = static_cast<double>(max_code(bits));
  QuantParams p;
  p.bits = bits;
  p.zero_point = *lo;
  p.scale = std::max(multiplier * (*hi - *lo) / levels, kMinScale);
  return p;
}

std::uint16_t quantize_value(double x, const QuantParams& p) noexcept {
  const double top = static_cast<double>((1u << p.bits) - 1u);
  const double q = std::round((x - p.zero_point) / p.scale);
  return static_cast<std::uint16_t>(std::clamp(q, 0.0, top));
}

std::vector<std::uint16_t> quantize_group(std::span<const double> group,
                                          const QuantParams& p) {
  max_code(p.bits);
  std::vector<std::uint16_t> codes(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    codes[i] = quantize_value(group[i], p);
  }
  return codes;
}

std::vector<double> dequantize_group(std::span<const std::uint16_t> codes,
                                     const QuantParams& p) {
  const std::uint32_t top = max_code(p.bits);
  std::vector<double> out(codes.size());
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] > top) {
      throw Error(ErrorCode::kCorruptCodes,
                  "code " + std::to_string(codes[i]) + " exceeds " +
                      std::to_string(top) + " at " + std::to_string(p.bits) +
                      " bits");
    }
    out[i] = codes[i] * p.scale + p.zero_point;
  }
  return out;
}

QTensor::QTensor(std::size_t rows, std::size_t cols, std::size_t group_size,
                 std::vector<std::uint16_t> codes,
                 std::vector<QuantParams> params, bool cache)
    : rows_(rows),
      cols_(cols),
      group_size_(group_size),
      codes_(std::move(codes)),
      params_(std::move(params)) {
  if (group_size_ == 0) {
    throw Error(ErrorCode::kInvalidInput, "group size must be at least 1");
  }
  if (codes_.size() != rows_ * cols_) {
    throw Error(ErrorCode::kInvalidShape, "code count does not match shape");
  }
  const std::size_t groups = (codes_.size() + group_size_ - 1) / group_size_;
  if (params_.size() != groups) {
    throw Error(ErrorCode::kInvalidShape,
                "expected " + std::to_string(groups) + " groups, got " +
                    std::to_string(params_.size()));
  }
  for (std::size_t g = 0; g < params_.size(); ++g) {
    const std::uint32_t top = max_code(params_[g].bits);
    if (!(params_[g].scale > 0.0)) {
      throw Error(ErrorCode::kInvalidInput, "non-positive group scale");
    }
    for (std::uint16_t c : group_codes(g)) {
      if (c > top) {
        throw Error(ErrorCode::kCorruptCodes,
                    "code out of range in group " + std::to_string(g));
      }
    }
  }
  if (cache) enable_cache();
}

std::size_t QTensor::group_length(std::size_t g) const noexcept {
  const std::size_t begin = group_begin(g);
  return std::min(group_size_, codes_.size() - begin);
}

void QTensor::set_group(std::size_t g, const QuantParams& p,
                        std::span<const std::uint16_t> codes) {
  if (codes.size() != group_length(g)) {
    throw Error(ErrorCode::kInvalidShape, "group code count mismatch");
  }
  const std::uint32_t top = max_code(p.bits);
  if (std::any_of(codes.begin(), codes.end(),
                  [top](std::uint16_t c) { return c > top; })) {
    throw Error(ErrorCode::kCorruptCodes, "code out of range");
  }
  params_.at(g) = p;
  std::copy(codes.begin(), codes.end(), codes_.begin() + group_begin(g));
  if (cache_) refresh_cache_group(g);
}

Tensor QTensor::dequantize() const {
  Tensor out(rows_, cols_);
  auto data = out.data();
  for (std::size_t g = 0; g < params_.size(); ++g) {
    const auto values = dequantize_group(group_codes(g), params_[g]);
    std::copy(values.begin(), values.end(), data.begin() + group_begin(g));
  }
  return out;
}

void QTensor::enable_cache() { cache_ = dequantize(); }

void QTensor::refresh_cache_group(std::size_t g) {
  const QuantParams& p = params_[g];
  auto data = cache_->data();
  const std::size_t begin = group_begin(g);
  for (std::size_t i = begin; i < begin + group_length(g); ++i) {
    data[i] = codes_[i] * p.scale + p.zero_point;
  }
}

QTensor quantize_tensor(const Tensor& w, int bits, std::size_t group_size,
                        bool cache) {
  if (group_size == 0) {
    throw Error(ErrorCode::kInvalidInput, "group size must be at least 1");
  }
  const auto data = w.data();
  const std::size_t groups = (data.size() + group_size - 1) / group_size;
  std::vector<std::uint16_t> codes(data.size());
  std::vector<QuantParams> params(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t begin = g * group_size;
    const auto group =
        data.subspan(begin, std::min(group_size, data.size() - begin));
    params[g] = fit_minmax(group, bits);
    for (std::size_t i = 0; i < group.size(); ++i) {
      codes[begin + i] = quantize_value(group[i], params[g]);
    }
  }
  return QTensor(w.rows(), w.cols(), group_size, std::move(codes),
                 std::move(params), cache);
}

QuantError quant_error(const Tensor& w, const QTensor& q) {
  if (w.rows() != q.rows() || w.cols() != q.cols()) {
    throw Error(ErrorCode::kInvalidShape, "quant_error shape mismatch");
  }
  const Tensor restored = q.cached() ? *q.cached() : q.dequantize();
  QuantError e;
  double diff_sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = w.data()[i] - restored.data()[i];
    e.max_abs = std::max(e.max_abs, std::abs(d));
    diff_sq += d * d;
  }
  const double norm = w.frobenius_norm();
  e.frobenius_rel = norm > 0.0 ? std::sqrt(diff_sq) / norm : std::sqrt(diff_sq);
  return e;
}

std::size_t packed_size(std::size_t count, int bits) noexcept {
  return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

std::vector<std::uint8_t> pack_codes(std::span<const std::uint16_t> codes,
                                     int bits) {
  const std::uint32_t top = max_code(bits);
  std::vector<std::uint8_t> out(packed_size(codes.size(), bits), 0);
  std::size_t bit = 0;
  for (std::uint16_t c : codes) {
    if (c > top) throw Error(ErrorCode::kCorruptCodes, "code exceeds bitwidth");
    for (int b = 0; b < bits; ++b, ++bit) {
      if ((c >> b) & 1u) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }
  return out;
}

std::vector<std::uint16_t> unpack_codes(std::span<const std::uint8_t> bytes,
                                        int bits, std::size_t count) {
  max_code(bits);
  if (bytes.size() < packed_size(count, bits)) {
    throw Error(ErrorCode::kCorruptCodes, "packed code block is truncated");
  }
  std::vector<std::uint16_t> out(count, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t c = 0;
    for (int b = 0; b < bits; ++b, ++bit) {
      if ((bytes[bit / 8] >> (bit % 8)) & 1u) c |= 1u << b;
    }
    out[i] = static_cast<std::uint16_t>(c);
  }
  return out;
}

}  // namespace taq
