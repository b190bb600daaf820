#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gist/random.hpp"
#include "gist/tensor.hpp"

namespace gist {

enum class Arch : std::uint8_t { gcn = 0, sage_mean = 1 };

inline const char* to_string(Arch a) { return a == Arch::gcn ? "gcn" : "sage"; }

inline Arch parse_arch(const std::string& s) {
  if (s == "gcn") return Arch::gcn;
  if (s == "sage" || s == "sage_mean") return Arch::sage_mean;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Rows of layer l's weight: d_l for gcn, 2 d_l for sage (self | neighbour mean).
inline std::size_t weight_rows(Arch arch, std::size_t d_in) {
  return arch == Arch::sage_mean ? 2 * d_in : d_in;
}

// Bias-free GCN / GraphSAGE-mean parameter set. weights[l] maps layer l's
// input features to layer l+1's features.
template <typename T>
struct GcnModel {
  Arch arch = Arch::gcn;
  std::vector<std::size_t> dims;
  std::vector<DenseMatrix<T>> weights;

  std::size_t num_layers() const noexcept { return weights.size(); }

  std::size_t parameter_count() const noexcept {
    std::size_t total = 0;
    for (const auto& w : weights) total += w.size();
    return total;
  }

  void validate() const {
    if (dims.size() < 2) throw ModelError("model needs at least two dims");
    if (weights.size() != dims.size() - 1) throw ModelError("weight count must equal dims.size() - 1");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != weight_rows(arch, dims[l]) || weights[l].cols() != dims[l + 1])
        throw ModelError("weight " + std::to_string(l) + " has shape " + std::to_string(weights[l].rows()) + "x" +
                         std::to_string(weights[l].cols()) + ", expected " +
                         std::to_string(weight_rows(arch, dims[l])) + "x" + std::to_string(dims[l + 1]));
    }
  }

  template <typename U>
  GcnModel<U> cast() const {
    GcnModel<U> out{arch, dims, {}};
    for (const auto& w : weights) out.weights.push_back(w.template cast<U>());
    return out;
  }

  friend bool operator==(const GcnModel&, const GcnModel&) = default;
};

inline void check_dims(std::span<const std::size_t> dims) {
  if (dims.size() < 2) throw ModelError("dims must have at least two entries");
  for (auto d : dims)
    if (d == 0) throw ModelError("dims must be positive");
}

// Θ_l ~ U(-s, s), s = sqrt(6 / (fan_in + fan_out)).
template <typename T>
GcnModel<T> init_glorot(std::span<const std::size_t> dims, Arch arch, Rng& rng) {
  check_dims(dims);
  GcnModel<T> model{arch, {dims.begin(), dims.end()}, {}};
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t rows = weight_rows(arch, dims[l]);
    const double s = std::sqrt(6.0 / static_cast<double>(rows + dims[l + 1]));
    std::uniform_real_distribution<double> dist(-s, s);
    DenseMatrix<T> w(rows, dims[l + 1]);
    for (auto& v : w.values()) v = static_cast<T>(dist(rng));
    model.weights.push_back(std::move(w));
  }
  return model;
}

template <typename T>
GcnModel<T> init_glorot(std::initializer_list<std::size_t> dims, Arch arch, Rng& rng) {
  return init_glorot<T>(std::span<const std::size_t>(dims.begin(), dims.size()), arch, rng);
}

// Inverted dropout applied to every layer input.
struct DropoutSpec {
  double rate = 0.0;
  Rng* rng = nullptr;
  bool active() const noexcept { return rate > 0.0 && rng != nullptr; }
};

template <typename T>
struct ForwardTape {
  std::vector<DenseMatrix<T>> inputs;           // H_l as fed to layer l (after dropout)
  std::vector<DenseMatrix<T>> aggregated;       // [H_l | N H_l] for sage, unused for gcn
  std::vector<DenseMatrix<T>> pre_activations;  // Z_l
  std::vector<DenseMatrix<T>> dropout_masks;    // scale factors, empty when dropout is off
};

template <typename T>
struct ForwardResult {
  DenseMatrix<T> logits;
  ForwardTape<T> tape;
};

// `op` is Ā for gcn and the neighbour-mean operator for sage.
// Hidden layers use ReLU, the last layer is linear.
template <typename T>
ForwardResult<T> forward(const GcnModel<T>& model, const SparseMatrix<T>& op, const DenseMatrix<T>& x,
                         DropoutSpec dropout = {}) {
  model.validate();
  if (x.cols() != model.dims.front())
    throw DimensionError("forward: input has " + std::to_string(x.cols()) + " features, model expects " +
                         std::to_string(model.dims.front()));
  if (op.rows() != x.rows() || op.cols() != x.rows())
    throw DimensionError("forward: operator must be " + std::to_string(x.rows()) + "x" + std::to_string(x.rows()));

  ForwardTape<T> tape;
  DenseMatrix<T> h = x;
  const std::size_t L = model.num_layers();
  for (std::size_t l = 0; l < L; ++l) {
    if (dropout.active()) {
      std::bernoulli_distribution keep(1.0 - dropout.rate);
      const T scale = static_cast<T>(1.0 / (1.0 - dropout.rate));
      DenseMatrix<T> mask(h.rows(), h.cols());
      for (auto& m : mask.values()) m = keep(*dropout.rng) ? scale : T{};
      h = hadamard(h, mask);
      tape.dropout_masks.push_back(std::move(mask));
    }
    const auto& w = model.weights[l];
    DenseMatrix<T> z;
    if (model.arch == Arch::gcn) {
      z = model.dims[l + 1] <= model.dims[l] ? spmm(op, matmul(h, w)) : matmul(spmm(op, h), w);
      tape.aggregated.emplace_back();
    } else {
      auto p = hconcat(h, spmm(op, h));
      z = matmul(p, w);
      tape.aggregated.push_back(std::move(p));
    }
    tape.inputs.push_back(std::move(h));
    if (l + 1 < L) h = relu(z);
    tape.pre_activations.push_back(std::move(z));
  }
  DenseMatrix<T> logits = tape.pre_activations.back();
  return {std::move(logits), std::move(tape)};
}

// Gradients of the loss w.r.t. every weight given dL/dlogits.
template <typename T>
std::vector<DenseMatrix<T>> backward(const GcnModel<T>& model, const SparseMatrix<T>& op, const ForwardTape<T>& tape,
                                     const DenseMatrix<T>& dlogits) {
  const std::size_t L = model.num_layers();
  if (tape.pre_activations.size() != L || tape.inputs.size() != L)
    throw ModelError("backward: tape does not match model depth");
  const auto& out = tape.pre_activations.back();
  if (dlogits.rows() != out.rows() || dlogits.cols() != out.cols())
    throw DimensionError("backward: dlogits shape does not match logits");

  const auto op_t = transpose(op);
  std::vector<DenseMatrix<T>> grads(L);
  DenseMatrix<T> g = dlogits;  // dL/dZ_l
  for (std::size_t l = L; l-- > 0;) {
    const auto& h = tape.inputs[l];
    const auto& w = model.weights[l];
    if (h.rows() != g.rows() || w.cols() != g.cols()) throw ModelError("backward: tape does not match model shapes");
    DenseMatrix<T> dh;
    if (model.arch == Arch::gcn) {
      const auto s = spmm(op_t, g);  // Āᵀ G
      grads[l] = matmul_tn(h, s);
      if (l > 0) dh = matmul_nt(s, w);
    } else {
      grads[l] = matmul_tn(tape.aggregated[l], g);
      if (l > 0) {
        const auto dp = matmul_nt(g, w);
        const std::size_t d = h.cols();
        dh = DenseMatrix<T>(h.rows(), d);
        DenseMatrix<T> dn(h.rows(), d);
        for (std::size_t r = 0; r < h.rows(); ++r) {
          const auto src = dp.row(r);
          std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(d), dh.row(r).begin());
          std::copy(src.begin() + static_cast<std::ptrdiff_t>(d), src.end(), dn.row(r).begin());
        }
        add_inplace(dh, spmm(op_t, dn));
      }
    }
    if (l == 0) break;
    if (!tape.dropout_masks.empty()) dh = hadamard(dh, tape.dropout_masks[l]);
    g = hadamard(dh, relu_mask(tape.pre_activations[l - 1]));
  }
  return grads;
}

template <typename T>
struct CeResult {
  double loss = 0.0;
  DenseMatrix<T> dlogits;
};

// Mean softmax cross-entropy over rows where mask != 0.
template <typename T>
CeResult<T> loss_ce(const DenseMatrix<T>& logits, std::span<const int> labels, std::span<const std::uint8_t> mask) {
  if (labels.size() != logits.rows() || mask.size() != logits.rows())
    throw DimensionError("loss_ce: labels/mask length must equal logits rows");
  const auto count = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  if (count == 0) throw std::invalid_argument("loss_ce: empty mask");
  CeResult<T> res{0.0, DenseMatrix<T>(logits.rows(), logits.cols())};
  const double inv = 1.0 / static_cast<double>(count);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!mask[r]) continue;
    const auto row = logits.row(r);
    const auto y = static_cast<std::size_t>(labels[r]);
    if (labels[r] < 0 || y >= row.size()) throw std::invalid_argument("loss_ce: label out of range");
    double mx = row[0];
    for (auto v : row) mx = std::max(mx, static_cast<double>(v));
    double sum = 0.0;
    for (auto v : row) sum += std::exp(static_cast<double>(v) - mx);
    const double lse = mx + std::log(sum);
    res.loss += (lse - static_cast<double>(row[y])) * inv;
    auto d = res.dlogits.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double p = std::exp(static_cast<double>(row[c]) - lse);
      d[c] = static_cast<T>((p - (c == y ? 1.0 : 0.0)) * inv);
    }
  }
  return res;
}

struct SqResult {
  double loss = 0.0;
  std::vector<double> grad;  // dL/dyhat
};

// ‖y − ŷ‖² without the ½ factor; grad = −2 (y − ŷ).
inline SqResult loss_sq(std::span<const double> yhat, std::span<const double> y) {
  if (yhat.size() != y.size()) throw DimensionError("loss_sq: length mismatch");
  SqResult res{0.0, std::vector<double>(y.size())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - yhat[i];
    res.loss += r * r;
    res.grad[i] = -2.0 * r;
  }
  return res;
}

template <typename T>
void check_grad_shapes(const GcnModel<T>& model, const std::vector<DenseMatrix<T>>& grads) {
  if (grads.size() != model.weights.size()) throw DimensionError("optimizer: gradient count mismatch");
  for (std::size_t l = 0; l < grads.size(); ++l)
    if (grads[l].rows() != model.weights[l].rows() || grads[l].cols() != model.weights[l].cols())
      throw DimensionError("optimizer: gradient " + std::to_string(l) + " shape mismatch");
}

template <typename T>
void sgd_step(GcnModel<T>& model, const std::vector<DenseMatrix<T>>& grads, double lr) {
  check_grad_shapes(model, grads);
  for (std::size_t l = 0; l < grads.size(); ++l) add_inplace(model.weights[l], grads[l], static_cast<T>(-lr));
}

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<DenseMatrix<T>> first;
  std::vector<DenseMatrix<T>> second;
  std::uint64_t step = 0;

  static AdamState zeros_like(const GcnModel<T>& model) {
    AdamState s;
    for (const auto& w : model.weights) {
      s.first.emplace_back(w.rows(), w.cols());
      s.second.emplace_back(w.rows(), w.cols());
    }
    return s;
  }
};

// Adam with bias correction.
template <typename T>
void adam_step(GcnModel<T>& model, const std::vector<DenseMatrix<T>>& grads, AdamState<T>& state, double lr,
               AdamParams p = {}) {
  check_grad_shapes(model, grads);
  if (state.first.size() != grads.size() || state.second.size() != grads.size())
    throw DimensionError("adam_step: state does not match model");
  ++state.step;
  const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < grads.size(); ++l) {
    auto w = model.weights[l].values();
    auto m = state.first[l].values();
    auto v = state.second[l].values();
    const auto g = grads[l].values();
    if (m.size() != w.size() || v.size() != w.size()) throw DimensionError("adam_step: moment shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = p.beta1 * m[i] + (1.0 - p.beta1) * gi;
      const double vi = p.beta2 * v[i] + (1.0 - p.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(w[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + p.eps));
    }
  }
}

// L2 penalty folded into the gradient.
template <typename T>
void add_weight_decay(std::vector<DenseMatrix<T>>& grads, const GcnModel<T>& model, double wd) {
  if (wd == 0.0) return;
  for (std::size_t l = 0; l < grads.size(); ++l) add_inplace(grads[l], model.weights[l], static_cast<T>(wd));
}

// 10x decay at 50% and 75% of training.
inline double lr_schedule(double base_lr, std::size_t epoch, std::size_t total_epochs) {
  if (2 * epoch < total_epochs) return base_lr;
  if (4 * epoch < 3 * total_epochs) return base_lr / 10.0;
  return base_lr / 100.0;
}

// Checkpoint: "GIST", u32 version, u8 arch, u32 L, (L+1) x u32 dims,
// then every weight row-major as f32. All little-endian.
namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff), char((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

}  // namespace detail

constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const GcnModel<T>& model, std::ostream& os) {
  model.validate();
  os.write("GIST", 4);
  detail::put_u32(os, kCheckpointVersion);
  os.put(static_cast<char>(model.arch));
  detail::put_u32(os, static_cast<std::uint32_t>(model.num_layers()));
  for (auto d : model.dims) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (const auto& w : model.weights)
    for (T v : w.values()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::put_u32(os, bits);
    }
}

inline GcnModel<float> load_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "GIST") throw std::runtime_error("checkpoint: bad magic");
  if (detail::get_u32(is) != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
  const int arch = is.get();
  if (arch != 0 && arch != 1) throw std::runtime_error("checkpoint: bad arch tag");
  GcnModel<float> model;
  model.arch = static_cast<Arch>(arch);
  const auto L = detail::get_u32(is);
  for (std::uint32_t i = 0; i <= L; ++i) model.dims.push_back(detail::get_u32(is));
  check_dims(model.dims);
  for (std::uint32_t l = 0; l < L; ++l) {
    DenseMatrix<float> w(weight_rows(model.arch, model.dims[l]), model.dims[l + 1]);
    for (auto& v : w.values()) {
      const auto bits = detail::get_u32(is);
      std::memcpy(&v, &bits, 4);
    }
    model.weights.push_back(std::move(w));
  }
  return model;
}

}  // namespace gist
