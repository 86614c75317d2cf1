#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "taq/linalg.hpp"
#include "taq/quantizer.hpp"

namespace taq {

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t vocab = 64;
  std::size_t max_seq = 32;
  std::size_t d_ff = 128;
  std::uint64_t seed = 0;

  // Throws InvalidConfig.
  void validate() const;
  std::uint64_t weights_per_layer() const noexcept;

  bool operator==(const ModelConfig&) const = default;
};

enum class MatrixKind : std::size_t { kQuery, kKey, kValue, kOutput, kUp, kDown };
inline constexpr std::size_t kMatricesPerBlock = 6;
std::string_view matrix_name(MatrixKind kind) noexcept;

// A block weight matrix, stored [in x out] so that y = x W. When quantized,
// the forward pass multiplies by the cached dequantization and `weight`
// keeps the original full-precision values untouched.
struct Linear {
  Tensor weight;
  std::optional<QTensor> quant;

  const Tensor& effective() const noexcept {
    return quant && quant->cached() ? *quant->cached() : weight;
  }
};

struct Block {
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;
  std::array<Linear, kMatricesPerBlock> linear;

  Linear& matrix(MatrixKind k) { return linear[static_cast<std::size_t>(k)]; }
  const Linear& matrix(MatrixKind k) const {
    return linear[static_cast<std::size_t>(k)];
  }
};

// Pre-norm decoder-only transformer: token + position embeddings, N blocks of
// causal multi-head attention and a GELU MLP (each with a residual), final
// layer norm and an untied unembedding.
struct Model {
  ModelConfig config;
  Tensor tok_emb;  // vocab x d
  Tensor pos_emb;  // max_seq x d
  std::vector<Block> blocks;
  Tensor lnf_gain, lnf_bias;
  Tensor unembed;  // d x vocab

  // Every full-precision parameter tensor with its checkpoint name, in a
  // fixed order.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;

  // Bits of the layer's matrices, or 32 if none is quantized.
  int layer_bits(std::size_t layer) const;
  void quantize_layer(std::size_t layer, int bits, std::size_t group_size);
  void clear_quantization();
};

// All parameters zero, layer-norm gains one.
Model zero_model(const ModelConfig& cfg);
// Matrices and embeddings from N(0, 0.02^2) seeded by cfg.seed; layer norms
// at identity.
Model init_model(const ModelConfig& cfg);

// Concatenation of token sequences. Sequence i occupies rows
// [offsets[i], offsets[i+1]) of every activation matrix.
class SequenceBatch {
 public:
  SequenceBatch() : offsets_{0} {}
  void add(std::span<const int> tokens);

  std::size_t size() const noexcept { return offsets_.size() - 1; }
  std::size_t total_tokens() const noexcept { return tokens_.size(); }
  std::span<const int> tokens() const noexcept { return tokens_; }
  std::span<const std::size_t> offsets() const noexcept { return offsets_; }
  std::span<const int> sequence(std::size_t i) const {
    return {tokens_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

 private:
  std::vector<int> tokens_;
  std::vector<std::size_t> offsets_;
};

// Receives each block's post-residual output (rows = batch tokens).
using CaptureSink = std::function<void(std::size_t layer, const Tensor& output)>;

// Logits for every position of every sequence. Throws InvalidInput on
// out-of-vocabulary tokens or sequences longer than max_seq.
Tensor forward(const Model& model, const SequenceBatch& batch,
               const CaptureSink& sink = {});
Tensor forward(const Model& model, std::span<const int> tokens,
               const CaptureSink& sink = {});

// The pieces of forward(), for callers that resume from a cached hidden
// state: embed -> run_blocks(0, N) -> head.
Tensor embed(const Model& model, const SequenceBatch& batch);
void run_blocks(const Model& model, const SequenceBatch& batch, Tensor& hidden,
                std::size_t first, std::size_t last,
                const CaptureSink& sink = {});
Tensor head(const Model& model, const Tensor& hidden);

}  // namespace taq
