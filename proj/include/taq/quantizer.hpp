#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "taq/linalg.hpp"

namespace taq {

inline constexpr std::size_t kDefaultGroupSize = 128;
inline constexpr double kMinScale = 1e-12;

// Admissible code widths. Full precision is not a code width: unquantized
// layers simply keep their float weights.
bool is_admissible_bits(int bits) noexcept;
std::uint32_t max_code(int bits);

struct QuantParams {
  double scale = 1.0;       // weight units per code step
  double zero_point = 0.0;  // weight value of code 0
  int bits = 8;

  bool operator==(const QuantParams&) const = default;
};

// s = max((max - min) / (2^bits - 1), 1e-12), z = min.
QuantParams fit_minmax(std::span<const double> group, int bits);

// Min-max fit with the scale multiplied by `multiplier`; the zero point
// stays at the group minimum so the smallest weight remains representable.
QuantParams fit_scaled(std::span<const double> group, int bits,
                       double multiplier);

// code = clamp(round((x - z) / s), 0, 2^bits - 1), rounding half away from
// zero.
std::uint16_t quantize_value(double x, const QuantParams& p) noexcept;
std::vector<std::uint16_t> quantize_group(std::span<const double> group,
                                          const QuantParams& p);
std::vector<double> dequantize_group(std::span<const std::uint16_t> codes,
                                     const QuantParams& p);

// Group-wise quantized weight matrix. Groups partition the row-major
// flattening of the matrix into consecutive runs of `group_size` weights;
// the last group may be short.
class QTensor {
 public:
  QTensor(std::size_t rows, std::size_t cols, std::size_t group_size,
          std::vector<std::uint16_t> codes, std::vector<QuantParams> params,
          bool cache);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return codes_.size(); }
  std::size_t group_size() const noexcept { return group_size_; }
  std::size_t group_count() const noexcept { return params_.size(); }
  int bits() const noexcept { return params_.empty() ? 0 : params_.front().bits; }

  std::size_t group_begin(std::size_t g) const noexcept { return g * group_size_; }
  std::size_t group_length(std::size_t g) const noexcept;

  const QuantParams& params(std::size_t g) const { return params_.at(g); }
  std::span<const QuantParams> all_params() const noexcept { return params_; }
  std::span<const std::uint16_t> codes() const noexcept { return codes_; }
  std::span<const std::uint16_t> group_codes(std::size_t g) const {
    return {codes_.data() + group_begin(g), group_length(g)};
  }

  // Replaces one group's parameters and codes, keeping the cache coherent.
  void set_group(std::size_t g, const QuantParams& p,
                 std::span<const std::uint16_t> codes);

  Tensor dequantize() const;
  const Tensor* cached() const noexcept {
    return cache_ ? &*cache_ : nullptr;
  }
  void enable_cache();

 private:
  void refresh_cache_group(std::size_t g);

  std::size_t rows_;
  std::size_t cols_;
  std::size_t group_size_;
  std::vector<std::uint16_t> codes_;
  std::vector<QuantParams> params_;
  std::optional<Tensor> cache_;
};

QTensor quantize_tensor(const Tensor& w, int bits,
                        std::size_t group_size = kDefaultGroupSize,
                        bool cache = true);

struct QuantError {
  double max_abs = 0.0;
  double frobenius_rel = 0.0;
};

QuantError quant_error(const Tensor& w, const QTensor& q);

// Little-endian bit packing of `bits`-wide codes, padded to a whole byte.
std::vector<std::uint8_t> pack_codes(std::span<const std::uint16_t> codes,
                                     int bits);
std::vector<std::uint16_t> unpack_codes(std::span<const std::uint8_t> bytes,
                                        int bits, std::size_t count);
std::size_t packed_size(std::size_t count, int bits) noexcept;

}  // namespace taq
