#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "enmcs/graph.hpp"

namespace enmcs::nn {

/// A trainable matrix plus its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)); deterministic in `seed`.
inline Matrix glorot_init(Eigen::Index fan_in, Eigen::Index fan_out, std::uint64_t seed) {
  if (fan_in <= 0 || fan_out <= 0) throw DimensionError("glorot_init: dimensions must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

// ---------------------------------------------------------------------------
// Reverse-mode tape

struct Var {
  int id = -1;
};

class Tape {
 public:
  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  Var parameter(Parameter& p) {
    Var v = push(p.value, true, {});
    leaves_.push_back({v.id, &p});
    return v;
  }

  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  double scalar(Var v) const {
    const auto& m = value(v);
    if (m.size() != 1) throw ContractError("scalar(): node is not 1x1");
    return m(0, 0);
  }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient accumulated at `v` by the last backward(); zero matrix if none reached it.
  Matrix grad(Var v) const {
    const auto& n = node(v);
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Propagates d(root)/d(.) through the recorded graph and adds the result
  /// into each parameter's `grad`.
  void backward(Var root) {
    if (value(root).size() != 1) throw ContractError("backward(): loss root must be a 1x1 scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    mut(root).grad = Matrix::Ones(1, 1);
    for (int id = root.id; id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
    for (const auto& [id, p] : leaves_) {
      const auto& g = nodes_[static_cast<std::size_t>(id)].grad;
      if (g.size() == 0) continue;
      if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) p->zero_grad();
      p->grad += g;
    }
  }

  std::size_t size() const { return nodes_.size(); }

  // Used by operator implementations.
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Var push(Matrix value, bool requires_grad, Backward backward) {
    if (!value.allFinite()) throw NumericError("non-finite value produced on tape");
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad ? std::move(backward) : Backward{},
                          requires_grad});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    auto& n = mut(v);
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad;
  };

  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
  Node& mut(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> leaves_;
};

namespace detail {
inline void same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
}
}  // namespace detail

inline Var matmul(Tape& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.cols() != B.rows()) throw DimensionError("matmul: inner dimensions differ");
  Matrix out = A * B;
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

inline Var add(Tape& t, Var a, Var b) {
  detail::same_shape(t.value(a), t.value(b), "add");
  Matrix out = t.value(a) + t.value(b);
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  detail::same_shape(t.value(a), t.value(b), "sub");
  Matrix out = t.value(a) - t.value(b);
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

/// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  detail::same_shape(t.value(a), t.value(b), "mul");
  Matrix out = t.value(a).cwiseProduct(t.value(b));
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

inline Var scale(Tape& t, Var a, double s) {
  Matrix out = s * t.value(a);
  return t.push(std::move(out), t.requires_grad(a), [a, s](Tape& t, const Matrix& g) { t.accumulate(a, s * g); });
}

/// x + 1*b for a 1 x c row vector b.
inline Var add_bias(Tape& t, Var x, Var b) {
  const auto& X = t.value(x);
  const auto& B = t.value(b);
  if (B.rows() != 1 || B.cols() != X.cols()) throw DimensionError("add_bias: bias must be 1 x cols");
  Matrix out = X.rowwise() + B.row(0);
  return t.push(std::move(out), t.requires_grad(x) || t.requires_grad(b), [x, b](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (t.requires_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

/// x + s for a 1 x 1 node s.
inline Var add_scalar(Tape& t, Var x, Var s) {
  if (t.value(s).size() != 1) throw DimensionError("add_scalar: expected a 1x1 operand");
  Matrix out = t.value(x).array() + t.value(s)(0, 0);
  return t.push(std::move(out), t.requires_grad(x) || t.requires_grad(s), [x, s](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (t.requires_grad(s)) t.accumulate(s, Matrix::Constant(1, 1, g.sum()));
  });
}

inline Var add_constant(Tape& t, Var x, double c) {
  Matrix out = t.value(x).array() + c;
  return t.push(std::move(out), t.requires_grad(x), [x](Tape& t, const Matrix& g) { t.accumulate(x, g); });
}

inline Var relu(Tape& t, Var x) {
  Matrix out = t.value(x).cwiseMax(0.0);
  return t.push(std::move(out), t.requires_grad(x), [x](Tape& t, const Matrix& g) {
    t.accumulate(x, (t.value(x).array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

inline Var sigmoid(Tape& t, Var x) {
  Matrix out = t.value(x).unaryExpr([](double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  });
  Matrix s = out;
  return t.push(std::move(out), t.requires_grad(x), [x, s = std::move(s)](Tape& t, const Matrix& g) {
    t.accumulate(x, g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

inline Var abs(Tape& t, Var x) {
  Matrix out = t.value(x).cwiseAbs();
  return t.push(std::move(out), t.requires_grad(x), [x](Tape& t, const Matrix& g) {
    t.accumulate(x, g.cwiseProduct(t.value(x).unaryExpr([](double v) { return double((v > 0) - (v < 0)); })));
  });
}

/// Elementwise sqrt; the derivative at 0 is taken as 0.
inline Var sqrt(Tape& t, Var x) {
  if ((t.value(x).array() < 0.0).any()) throw NumericError("sqrt of negative value");
  Matrix out = t.value(x).cwiseSqrt();
  Matrix root = out;
  return t.push(std::move(out), t.requires_grad(x), [x, root = std::move(root)](Tape& t, const Matrix& g) {
    Matrix d = (root.array() > 0.0).select(0.5 * g.array() / root.array(), 0.0).matrix();
    t.accumulate(x, d);
  });
}

/// Elementwise a / b, with 0 (and zero gradient) wherever b == 0.
inline Var safe_div(Tape& t, Var a, Var b) {
  detail::same_shape(t.value(a), t.value(b), "safe_div");
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  Matrix out = (B.array() != 0.0).select(A.array() / B.array(), 0.0).matrix();
  return t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& t, const Matrix& g) {
    const auto& A = t.value(a);
    const auto& B = t.value(b);
    const auto nz = B.array() != 0.0;
    if (t.requires_grad(a)) t.accumulate(a, nz.select(g.array() / B.array(), 0.0).matrix());
    if (t.requires_grad(b))
      t.accumulate(b, nz.select(-g.array() * A.array() / B.array().square(), 0.0).matrix());
  });
}

inline Var sum(Tape& t, Var x) {
  Matrix out = Matrix::Constant(1, 1, t.value(x).sum());
  return t.push(std::move(out), t.requires_grad(x), [x](Tape& t, const Matrix& g) {
    const auto& X = t.value(x);
    t.accumulate(x, Matrix::Constant(X.rows(), X.cols(), g(0, 0)));
  });
}

inline Var mean(Tape& t, Var x) {
  const double count = static_cast<double>(t.value(x).size());
  return scale(t, sum(t, x), 1.0 / count);
}

/// n x c -> n x 1
inline Var row_sum(Tape& t, Var x) {
  Matrix out = t.value(x).rowwise().sum();
  return t.push(std::move(out), t.requires_grad(x), [x](Tape& t, const Matrix& g) {
    const auto cols = t.value(x).cols();
    t.accumulate(x, g.col(0).replicate(1, cols));
  });
}

/// n x c -> 1 x c
inline Var col_mean(Tape& t, Var x) {
  const double rows = static_cast<double>(t.value(x).rows());
  Matrix out = t.value(x).colwise().sum() / rows;
  return t.push(std::move(out), t.requires_grad(x), [x, rows](Tape& t, const Matrix& g) {
    const auto n = t.value(x).rows();
    t.accumulate(x, (g.row(0) / rows).replicate(n, 1));
  });
}

/// x (n x c) scaled row-wise by w (n x 1).
inline Var mul_rows(Tape& t, Var x, Var w) {
  const auto& X = t.value(x);
  const auto& W = t.value(w);
  if (W.cols() != 1 || W.rows() != X.rows()) throw DimensionError("mul_rows: weight must be n x 1");
  Matrix out = X.array().colwise() * W.col(0).array();
  return t.push(std::move(out), t.requires_grad(x) || t.requires_grad(w), [x, w](Tape& t, const Matrix& g) {
    if (t.requires_grad(x)) t.accumulate(x, (g.array().colwise() * t.value(w).col(0).array()).matrix());
    if (t.requires_grad(w)) t.accumulate(w, g.cwiseProduct(t.value(x)).rowwise().sum());
  });
}

inline Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const auto rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += t.value(p).cols();
    rg = rg || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [ids = std::move(ids)](Tape& t, const Matrix& g) {
    Eigen::Index at = 0;
    for (Var p : ids) {
      const auto c = t.value(p).cols();
      if (t.requires_grad(p)) t.accumulate(p, g.middleCols(at, c));
      at += c;
    }
  });
}

/// Softmax along each row, max-subtracted.
inline Var row_softmax(Tape& t, Var x) {
  const auto& X = t.value(x);
  Matrix out = (X.colwise() - X.rowwise().maxCoeff()).array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  Matrix soft = out;
  return t.push(std::move(out), t.requires_grad(x), [x, soft = std::move(soft)](Tape& t, const Matrix& g) {
    const Vector inner = g.cwiseProduct(soft).rowwise().sum();
    t.accumulate(x, soft.cwiseProduct((g.colwise() - inner)));
  });
}

/// out[k] = x[index[k]]
inline Var gather_rows(Tape& t, Var x, std::vector<NodeId> index) {
  const auto& X = t.value(x);
  Matrix out(static_cast<Eigen::Index>(index.size()), X.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] < 0 || index[k] >= X.rows()) throw RangeError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(k)) = X.row(index[k]);
  }
  return t.push(std::move(out), t.requires_grad(x), [x, index = std::move(index)](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(t.value(x).rows(), t.value(x).cols());
    for (std::size_t k = 0; k < index.size(); ++k) d.row(index[k]) += g.row(static_cast<Eigen::Index>(k));
    t.accumulate(x, d);
  });
}

// ---------------------------------------------------------------------------
// Feedforward networks

/// Linear layers applied row-wise, x W + b; ReLU between layers, identity after the last.
struct FFN {
  std::vector<Parameter> weights;  // in x out
  std::vector<Parameter> biases;   // 1 x out

  std::size_t depth() const { return weights.size(); }
  Eigen::Index input_dim() const { return weights.front().value.rows(); }
  Eigen::Index output_dim() const { return weights.back().value.cols(); }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      out.push_back(&weights[i]);
      out.push_back(&biases[i]);
    }
    return out;
  }
};

/// dims = {in, hidden..., out}; glorot weights, zero biases.
inline FFN make_ffn(const std::string& name, const std::vector<Eigen::Index>& dims, std::uint64_t seed) {
  if (dims.size() < 2) throw DimensionError("make_ffn: need at least input and output dims");
  FFN f;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const auto tag = name + ".l" + std::to_string(i);
    f.weights.push_back({tag + ".w", glorot_init(dims[i], dims[i + 1], seed * 1000003ULL + i), {}});
    f.biases.push_back({tag + ".b", Matrix::Zero(1, dims[i + 1]), {}});
  }
  return f;
}

inline Matrix ffn_forward(const FFN& f, const Matrix& x) {
  if (f.weights.empty()) throw DimensionError("ffn_forward: empty network");
  if (x.cols() != f.input_dim())
    throw DimensionError("ffn_forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(f.input_dim()));
  Matrix h = x;
  for (std::size_t i = 0; i < f.depth(); ++i) {
    Matrix next = h * f.weights[i].value;
    next.rowwise() += f.biases[i].value.row(0);
    if (i + 1 < f.depth()) next = next.cwiseMax(0.0);
    h.swap(next);
  }
  return h;
}

inline Var ffn_forward(Tape& t, FFN& f, Var x) {
  if (t.value(x).cols() != f.input_dim())
    throw DimensionError("ffn_forward: input has " + std::to_string(t.value(x).cols()) +
                         " columns, expected " + std::to_string(f.input_dim()));
  Var h = x;
  for (std::size_t i = 0; i < f.depth(); ++i) {
    h = add_bias(t, matmul(t, h, t.parameter(f.weights[i])), t.parameter(f.biases[i]));
    if (i + 1 < f.depth()) h = relu(t, h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // coupled: added to the gradient
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

/// One Adam update with bias correction over `params`, reading each `grad`.
inline void adam_step(std::span<Parameter* const> params, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam_step: state does not match parameters");
  for (auto* p : params) {
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols())
      throw DimensionError("adam_step: gradient shape mismatch for " + p->name);
    if (!p->grad.allFinite()) throw NumericError("adam_step: non-finite gradient in " + p->name);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    Matrix g = p.grad + cfg.weight_decay * p.value;
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    p.value.array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + cfg.eps);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: "enmcs-checkpoint 1", a count, then per matrix a
// "name rows cols" line followed by one line of row-major values.

inline void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << "enmcs-checkpoint 1\n" << params.size() << '\n';
  out.precision(17);
  for (const auto* p : params) {
    out << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    for (Eigen::Index i = 0; i < p->value.size(); ++i) out << (i ? " " : "") << p->value.data()[i];
    out << '\n';
  }
}

/// Fills `params` in order; names and shapes must match the file exactly.
inline void load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  in >> magic >> version >> count;
  if (!in || magic != "enmcs-checkpoint" || version != 1)
    throw ParseError(path.string(), 1, "not an enmcs checkpoint (version 1)");
  if (count != params.size())
    throw DimensionError("checkpoint holds " + std::to_string(count) + " matrices, model expects " +
                         std::to_string(params.size()));
  for (auto* p : params) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    in >> name >> rows >> cols;
    if (!in) throw ParseError(path.string(), 0, "truncated checkpoint");
    if (name != p->name || rows != p->value.rows() || cols != p->value.cols())
      throw DimensionError("checkpoint entry " + name + " (" + std::to_string(rows) + "x" +
                           std::to_string(cols) + ") does not match " + p->name + " (" +
                           std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()) + ")");
    for (Eigen::Index i = 0; i < p->value.size(); ++i) in >> p->value.data()[i];
    if (!in) throw ParseError(path.string(), 0, "truncated values for " + name);
  }
}

}  // namespace enmcs::nn
