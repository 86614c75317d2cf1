#pragma once

// Eigen-backed forward/backward kernels shared by inference and training.

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "taq/model.hpp"

namespace taq::kernels {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ConstMap = Eigen::Map<const Mat>;
using MutMap = Eigen::Map<Mat>;

inline constexpr double kLayerNormEps = 1e-5;

inline ConstMap as_mat(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}
inline MutMap as_mat(Tensor& t) {
  return MutMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}
inline Eigen::Map<const Vec> as_vec(const Tensor& t) {
  return Eigen::Map<const Vec>(t.data().data(), static_cast<Eigen::Index>(t.size()));
}
inline Eigen::Map<Vec> as_vec(Tensor& t) {
  return Eigen::Map<Vec>(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

void layer_norm(const Mat& x, const Tensor& gain, const Tensor& bias, Mat& y,
                LayerNormCache* cache);

// dx from dy through a layer norm; accumulates gain/bias gradients.
void layer_norm_backward(const Mat& dy, const Tensor& gain,
                         const LayerNormCache& cache, Mat& dx, Tensor& dgain,
                         Tensor& dbias);

struct BlockCache {
  LayerNormCache ln1;
  Mat xn1, q, k, v;
  std::vector<Mat> probs;  // [sequence * heads + head]
  Mat attn;                // concatenated head outputs
  LayerNormCache ln2;
  Mat xn2, up, act;
};

// x <- x + attn(ln1(x)); x <- x + mlp(ln2(x)).
void block_forward(const Block& block, const ModelConfig& cfg,
                   std::span<const std::size_t> offsets, Mat& x,
                   BlockCache* cache);

// Block activations kept so the block can be re-run cheaply after a change
// to one weight matrix.
struct BlockState {
  BlockCache cache;  // xn1, q, k, v, attn, xn2, up, act
  Mat input;         // entering the block
  Mat mid;           // after the attention residual
  Mat output;        // leaving the block; equals block_forward's result
};

void block_state(const Block& block, const ModelConfig& cfg,
                 std::span<const std::size_t> offsets, const Mat& x,
                 BlockState& s);

// Block output when rows [row, row + delta.rows()) of matrix `kind` change
// by `delta`, reusing every activation upstream of that matrix. Agrees with
// block_forward on the changed weights up to rounding.
void block_forward_delta(const Block& block, const ModelConfig& cfg,
                         std::span<const std::size_t> offsets,
                         const BlockState& s, MatrixKind kind, Eigen::Index row,
                         const Mat& delta, Mat& out);

// Given dL/d(block output) in dx, overwrites dx with dL/d(block input) and
// accumulates parameter gradients into `grad`.
void block_backward(const Block& block, const ModelConfig& cfg,
                    std::span<const std::size_t> offsets,
                    const BlockCache& cache, Mat& dx, Block& grad);

void embed_into(const Model& model, const SequenceBatch& batch, Mat& x);

// Tanh-approximated GELU, evaluated as u * sigmoid(2z) with
// z = sqrt(2/pi) (u + 0.044715 u^3) so the exponential vectorizes.
void gelu(const Mat& u, Mat& out);
// d gelu / du, elementwise.
void gelu_grad(const Mat& u, Mat& out);

}  // namespace taq::kernels
