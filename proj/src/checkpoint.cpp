#include "taq/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "taq/allocator.hpp"
#include "taq/error.hpp"

namespace taq {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::span<const std::uint8_t> b) {
    out_.insert(out_.end(), b.begin(), b.end());
  }
  void str(const std::string& s) {
    if (s.size() > 0xFFFF) throw Error(ErrorCode::kInvalidInput, "name too long");
    u16(static_cast<std::uint16_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() {
    const std::size_t n = u16();
    auto b = bytes(n);
    return std::string(b.begin(), b.end());
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) {
    if (in_.size() - pos_ < n) {
      throw Error(ErrorCode::kIo, "checkpoint is truncated");
    }
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

// Quantized matrices, keyed by parameter name.
std::map<std::string, const QTensor*> quantized_by_name(const Model& model) {
  std::map<std::string, const QTensor*> out;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    for (std::size_t k = 0; k < kMatricesPerBlock; ++k) {
      const Linear& lin = model.blocks[l].linear[k];
      if (lin.quant) {
        out["blocks." + std::to_string(l) + "." +
            std::string(matrix_name(static_cast<MatrixKind>(k)))] = &*lin.quant;
      }
    }
  }
  return out;
}

Linear* find_linear(Model& model, const std::string& name) {
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    for (std::size_t k = 0; k < kMatricesPerBlock; ++k) {
      if (name == "blocks." + std::to_string(l) + "." +
                      std::string(matrix_name(static_cast<MatrixKind>(k)))) {
        return &model.blocks[l].linear[k];
      }
    }
  }
  return nullptr;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(
    const Model& model, const std::optional<std::vector<int>>& plan_bits) {
  Writer w;
  for (char c : kCheckpointMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kCheckpointVersion);
  const ModelConfig& c = model.config;
  for (std::size_t v : {c.n_layers, c.d_model, c.n_heads, c.vocab, c.max_seq, c.d_ff}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u64(c.seed);
  if (plan_bits) {
    if (plan_bits->size() != c.n_layers) {
      throw Error(ErrorCode::kInvalidPlan, "plan size does not match the model");
    }
    w.u8(1);
    for (int b : *plan_bits) w.u8(static_cast<std::uint8_t>(b));
  } else {
    w.u8(0);
  }

  const auto quantized = quantized_by_name(model);
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    auto q = quantized.find(name);
    w.u8(q == quantized.end() ? 0 : 1);
    w.u32(static_cast<std::uint32_t>(t->rows()));
    w.u32(static_cast<std::uint32_t>(t->cols()));
    if (q == quantized.end()) {
      for (double v : t->data()) w.f64(v);
      continue;
    }
    const QTensor& qt = *q->second;
    w.u32(static_cast<std::uint32_t>(qt.group_size()));
    w.u32(static_cast<std::uint32_t>(qt.group_count()));
    for (std::size_t g = 0; g < qt.group_count(); ++g) {
      const QuantParams& p = qt.params(g);
      w.u8(static_cast<std::uint8_t>(p.bits));
      w.f64(p.scale);
      w.f64(p.zero_point);
      w.bytes(pack_codes(qt.group_codes(g), p.bits));
    }
  }
  return w.take();
}

LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  for (char c : kCheckpointMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) {
      throw Error(ErrorCode::kIo, "not a TAQM checkpoint");
    }
  }
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kIo,
                "unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.n_layers = r.u32();
  cfg.d_model = r.u32();
  cfg.n_heads = r.u32();
  cfg.vocab = r.u32();
  cfg.max_seq = r.u32();
  cfg.d_ff = r.u32();
  cfg.seed = r.u64();
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kIo, std::string("bad model config: ") + e.what());
  }

  LoadedCheckpoint out;
  if (r.u8() != 0) {
    std::vector<int> bits(cfg.n_layers);
    for (int& b : bits) {
      b = r.u8();
      if (b != kFullPrecisionBits && !is_admissible_bits(b)) {
        throw Error(ErrorCode::kIo, "bad plan bitwidth " + std::to_string(b));
      }
    }
    out.plan_bits = std::move(bits);
  }
  out.model = zero_model(cfg);
  Model& model = out.model;
  auto params = model.parameters();
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw Error(ErrorCode::kIo, "checkpoint holds " + std::to_string(count) +
                                    " tensors, model expects " +
                                    std::to_string(params.size()));
  }
  for (auto& [expected, t] : params) {
    const std::string name = r.str();
    if (name != expected) {
      throw Error(ErrorCode::kIo, "expected tensor '" + expected + "', found '" +
                                      name + "'");
    }
    const std::uint8_t mode = r.u8();
    const std::size_t rows = r.u32();
    const std::size_t cols = r.u32();
    if (rows != t->rows() || cols != t->cols()) {
      throw Error(ErrorCode::kIo, "shape mismatch for '" + name + "'");
    }
    if (mode == 0) {
      for (double& v : t->data()) v = r.f64();
      continue;
    }
    Linear* lin = mode == 1 ? find_linear(model, name) : nullptr;
    if (!lin) {
      throw Error(ErrorCode::kIo, "bad storage mode for '" + name + "'");
    }
    const std::size_t group_size = r.u32();
    const std::size_t groups = r.u32();
    if (group_size == 0 || groups != (rows * cols + group_size - 1) / group_size) {
      throw Error(ErrorCode::kIo, "bad group layout for '" + name + "'");
    }
    std::vector<std::uint16_t> codes;
    codes.reserve(rows * cols);
    std::vector<QuantParams> qp(groups);
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t len = std::min(group_size, rows * cols - g * group_size);
      qp[g].bits = r.u8();
      qp[g].scale = r.f64();
      qp[g].zero_point = r.f64();
      if (!is_admissible_bits(qp[g].bits)) {
        throw Error(ErrorCode::kIo, "bad bitwidth in '" + name + "'");
      }
      if (!std::isfinite(qp[g].scale) || qp[g].scale <= 0.0 ||
          !std::isfinite(qp[g].zero_point)) {
        throw Error(ErrorCode::kIo, "bad quantization parameters in '" + name + "'");
      }
      const auto packed = r.bytes(packed_size(len, qp[g].bits));
      const auto unpacked = unpack_codes(packed, qp[g].bits, len);
      codes.insert(codes.end(), unpacked.begin(), unpacked.end());
    }
    lin->quant.emplace(rows, cols, group_size, std::move(codes), std::move(qp), true);
    lin->weight = *lin->quant->cached();
    lin->weight.set_label(name);
  }
  if (!r.done()) throw Error(ErrorCode::kIo, "trailing bytes after checkpoint");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::optional<std::vector<int>>& plan_bits) {
  const auto bytes = serialize_checkpoint(model, plan_bits);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace taq
