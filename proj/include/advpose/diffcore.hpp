#ifndef ADVPOSE_DIFFCORE_HPP
#define ADVPOSE_DIFFCORE_HPP

// Minimal dense reverse-mode differentiation.
//
// A Tape records primitive applications in evaluation order; Var is a cheap
// handle to one recorded value. Leaves created with Tape::leaf() reference the
// caller's Tensor storage, which must outlive the tape. Every forward
// primitive checks its output for NaN/Inf.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "advpose/errors.hpp"
#include "advpose/quat_geom.hpp"

namespace advpose::diff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major array of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape shape_, std::vector<double> values_, bool requires_grad_ = false)
      : shape(std::move(shape_)), values(std::move(values_)), requires_grad(requires_grad_) {
    if (shape_size(shape) != values.size()) {
      throw ShapeMismatch("tensor shape " + shape_string(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
    }
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v), requires_grad);
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  std::size_t size() const { return values.size(); }
  bool operator==(const Tensor& o) const { return shape == o.shape && values == o.values; }
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  std::size_t size() const;
  std::span<const double> value() const;
  double item() const;
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a reference to `t`; gradients flow into it when
  /// `requires_grad` (defaulting to the tensor's own flag) is set.
  Var leaf(const Tensor& t, std::optional<bool> requires_grad = std::nullopt) {
    Node n;
    n.op = Op::Leaf;
    n.shape = t.shape;
    n.external = t.values.data();
    n.size = t.values.size();
    n.requires_grad = requires_grad.value_or(t.requires_grad);
    return push(std::move(n));
  }

  /// Records a value owned by the tape.
  Var input(std::vector<double> values, bool requires_grad = false) {
    Node n;
    n.op = Op::Leaf;
    n.shape = {values.size()};
    n.size = values.size();
    n.owned = std::move(values);
    n.requires_grad = requires_grad;
    check_finite(n, "input");
    return push(std::move(n));
  }

  Var constant(std::vector<double> values) { return input(std::move(values), false); }

  std::span<const double> value(Var v) const {
    const Node& n = node(v);
    return {n.data(), n.size};
  }

  /// Gradient of the last backward() loss with respect to `v`; zeros when
  /// `v` does not influence the loss.
  std::span<const double> grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) {
      zeros_.assign(std::max(zeros_.size(), n.size), 0.0);
      return {zeros_.data(), n.size};
    }
    return {n.grad.data(), n.size};
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  /// Runs reverse accumulation from the scalar `loss`. Allowed once per tape.
  void backward(Var loss);

  // Primitives (see the free functions below for documentation).
  Var affine(Var x, Var W, std::optional<Var> b);
  Var elu(Var x);
  Var sigmoid(Var x);
  Var bce(Var p, double target);
  Var l1_distance(Var a, Var b);
  Var concat(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var exp(Var x);
  Var sum(Var x);
  Var scale(Var x, double k);
  Var normalize(Var x);
  Var tile(Var x, std::size_t n);

 private:
  enum class Op { Leaf, Affine, Elu, Sigmoid, Bce, L1, Concat, Add, Mul, Exp, Sum, Scale, Normalize, Tile };

  struct Node {
    Op op = Op::Leaf;
    Shape shape;
    std::vector<double> owned;
    const double* external = nullptr;
    std::size_t size = 0;
    std::size_t in[3] = {0, 0, 0};
    int n_in = 0;
    double k = 0.0;
    bool requires_grad = false;
    std::vector<double> grad;

    const double* data() const { return external ? external : owned.data(); }
  };

  const Node& node(Var v) const {
    if (v.tape_ != this) throw DetachedLoss("variable belongs to a different tape");
    return nodes_[v.id_];
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Node make(Op op, std::initializer_list<Var> inputs, std::size_t size) {
    Node n;
    n.op = op;
    n.shape = {size};
    n.size = size;
    n.owned.assign(size, 0.0);
    for (Var v : inputs) {
      node(v);
      n.in[n.n_in++] = v.id_;
      n.requires_grad = n.requires_grad || nodes_[v.id_].requires_grad;
    }
    return n;
  }

  static void check_finite(const Node& n, const char* what) {
    const double* d = n.data();
    for (std::size_t i = 0; i < n.size; ++i) {
      if (!std::isfinite(d[i])) throw NonFiniteValue(std::string("non-finite value produced by ") + what);
    }
  }

  Var finish(Node n, const char* what) {
    check_finite(n, what);
    return push(std::move(n));
  }

  std::vector<double>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.size, 0.0);
    return n.grad;
  }

  void backward_node(std::size_t id);

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  mutable std::vector<double> zeros_;
};

inline std::size_t Var::size() const { return tape_->value(*this).size(); }
inline std::span<const double> Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }
inline double Var::item() const {
  auto v = value();
  if (v.size() != 1) throw ShapeMismatch("item() on a value of size " + std::to_string(v.size()));
  return v[0];
}

inline Var Tape::affine(Var x, Var W, std::optional<Var> b) {
  const Node& wn = node(W);
  const Node& xn = node(x);
  if (wn.shape.size() != 2 || wn.shape[1] != xn.size) {
    throw ShapeMismatch("affine: weight " + shape_string(wn.shape) + " vs input of size " +
                        std::to_string(xn.size));
  }
  const std::size_t rows = wn.shape[0], cols = wn.shape[1];
  if (b && node(*b).size != rows) {
    throw ShapeMismatch("affine: bias of size " + std::to_string(node(*b).size) + " for " +
                        std::to_string(rows) + " outputs");
  }
  Node n = b ? make(Op::Affine, {x, W, *b}, rows) : make(Op::Affine, {x, W}, rows);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Wm(wn.data(), rows,
                                                                                               cols);
  Eigen::Map<const Eigen::VectorXd> xv(xn.data(), cols);
  Eigen::Map<Eigen::VectorXd> y(n.owned.data(), rows);
  y.noalias() = Wm * xv;
  if (b) y += Eigen::Map<const Eigen::VectorXd>(node(*b).data(), rows);
  return finish(std::move(n), "affine");
}

inline Var Tape::elu(Var x) {
  const Node& xn = node(x);
  Node n = make(Op::Elu, {x}, xn.size);
  const double* xd = xn.data();
  for (std::size_t i = 0; i < n.size; ++i) n.owned[i] = xd[i] > 0.0 ? xd[i] : std::expm1(xd[i]);
  return finish(std::move(n), "elu");
}

inline Var Tape::sigmoid(Var x) {
  const Node& xn = node(x);
  Node n = make(Op::Sigmoid, {x}, xn.size);
  // Clamped to the representable open interval (0, 1).
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  const double* xd = xn.data();
  for (std::size_t i = 0; i < n.size; ++i) {
    const double v = xd[i];
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    n.owned[i] = std::clamp(s, lo, hi);
  }
  return finish(std::move(n), "sigmoid");
}

inline constexpr double kBceClamp = 1e-7;

inline Var Tape::bce(Var p, double target) {
  const Node& pn = node(p);
  if (pn.size != 1) throw ShapeMismatch("bce expects a scalar probability");
  Node n = make(Op::Bce, {p}, 1);
  n.k = target;
  const double q = std::clamp(pn.data()[0], kBceClamp, 1.0 - kBceClamp);
  n.owned[0] = -(target * std::log(q) + (1.0 - target) * std::log1p(-q));
  return finish(std::move(n), "bce");
}

inline Var Tape::l1_distance(Var a, Var b) {
  const Node& an = node(a);
  const Node& bn = node(b);
  if (an.size != bn.size) {
    throw ShapeMismatch("l1_distance: sizes " + std::to_string(an.size) + " and " + std::to_string(bn.size));
  }
  Node n = make(Op::L1, {a, b}, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < an.size; ++i) s += std::abs(an.data()[i] - bn.data()[i]);
  n.owned[0] = s;
  return finish(std::move(n), "l1_distance");
}

inline Var Tape::concat(Var a, Var b) {
  const Node& an = node(a);
  const Node& bn = node(b);
  Node n = make(Op::Concat, {a, b}, an.size + bn.size);
  std::copy_n(an.data(), an.size, n.owned.begin());
  std::copy_n(bn.data(), bn.size, n.owned.begin() + static_cast<std::ptrdiff_t>(an.size));
  return finish(std::move(n), "concat");
}

inline Var Tape::add(Var a, Var b) {
  const Node& an = node(a);
  const Node& bn = node(b);
  if (an.size != bn.size && an.size != 1 && bn.size != 1) {
    throw ShapeMismatch("add: sizes " + std::to_string(an.size) + " and " + std::to_string(bn.size));
  }
  const std::size_t size = std::max(an.size, bn.size);
  Node n = make(Op::Add, {a, b}, size);
  for (std::size_t i = 0; i < size; ++i) {
    n.owned[i] = an.data()[an.size == 1 ? 0 : i] + bn.data()[bn.size == 1 ? 0 : i];
  }
  return finish(std::move(n), "add");
}

inline Var Tape::mul(Var a, Var b) {
  const Node& an = node(a);
  const Node& bn = node(b);
  if (an.size != bn.size && an.size != 1 && bn.size != 1) {
    throw ShapeMismatch("mul: sizes " + std::to_string(an.size) + " and " + std::to_string(bn.size));
  }
  const std::size_t size = std::max(an.size, bn.size);
  Node n = make(Op::Mul, {a, b}, size);
  for (std::size_t i = 0; i < size; ++i) {
    n.owned[i] = an.data()[an.size == 1 ? 0 : i] * bn.data()[bn.size == 1 ? 0 : i];
  }
  return finish(std::move(n), "mul");
}

inline Var Tape::exp(Var x) {
  const Node& xn = node(x);
  Node n = make(Op::Exp, {x}, xn.size);
  for (std::size_t i = 0; i < n.size; ++i) n.owned[i] = std::exp(xn.data()[i]);
  return finish(std::move(n), "exp");
}

inline Var Tape::sum(Var x) {
  const Node& xn = node(x);
  Node n = make(Op::Sum, {x}, 1);
  n.owned[0] = std::accumulate(xn.data(), xn.data() + xn.size, 0.0);
  return finish(std::move(n), "sum");
}

inline Var Tape::scale(Var x, double k) {
  const Node& xn = node(x);
  Node n = make(Op::Scale, {x}, xn.size);
  n.k = k;
  for (std::size_t i = 0; i < n.size; ++i) n.owned[i] = k * xn.data()[i];
  return finish(std::move(n), "scale");
}

inline Var Tape::normalize(Var x) {
  const Node& xn = node(x);
  Node n = make(Op::Normalize, {x}, xn.size);
  double sq = 0.0;
  for (std::size_t i = 0; i < xn.size; ++i) sq += xn.data()[i] * xn.data()[i];
  const double norm = std::sqrt(sq);
  if (!(norm > 1e-12)) throw NearZeroQuaternion(norm);
  n.k = norm;
  for (std::size_t i = 0; i < n.size; ++i) n.owned[i] = xn.data()[i] / norm;
  return finish(std::move(n), "normalize");
}

inline Var Tape::tile(Var x, std::size_t size) {
  const Node& xn = node(x);
  if (xn.size == 0) throw ShapeMismatch("tile: empty input");
  Node n = make(Op::Tile, {x}, size);
  for (std::size_t i = 0; i < size; ++i) n.owned[i] = xn.data()[i % xn.size];
  return finish(std::move(n), "tile");
}

inline void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw DetachedLoss("loss was recorded on a different tape");
  if (backward_done_) throw DoubleBackward();
  const Node& ln = nodes_[loss.id_];
  if (ln.size != 1) throw ShapeMismatch("backward() needs a scalar loss, got size " + std::to_string(ln.size));
  if (!ln.requires_grad) throw DetachedLoss("loss does not depend on any differentiable value");
  backward_done_ = true;
  grad_buffer(loss.id_)[0] = 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    if (nodes_[id].requires_grad && !nodes_[id].grad.empty() && nodes_[id].op != Op::Leaf) backward_node(id);
  }
}

inline void Tape::backward_node(std::size_t id) {
  // Inputs always precede their consumers, so growing their grad buffers is
  // safe while nodes_[id] is referenced.
  const Node& n = nodes_[id];
  const std::vector<double>& g = n.grad;
  auto wants = [&](int slot) { return slot < n.n_in && nodes_[n.in[slot]].requires_grad; };
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Affine: {
      const Node& xn = nodes_[n.in[0]];
      const Node& wn = nodes_[n.in[1]];
      const std::size_t rows = wn.shape[0], cols = wn.shape[1];
      Eigen::Map<const Eigen::VectorXd> gv(g.data(), rows);
      if (wants(0)) {
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Wm(wn.data(),
                                                                                                     rows, cols);
        Eigen::Map<Eigen::VectorXd>(grad_buffer(n.in[0]).data(), cols).noalias() += Wm.transpose() * gv;
      }
      if (wants(1)) {
        Eigen::Map<const Eigen::VectorXd> xv(xn.data(), cols);
        Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            grad_buffer(n.in[1]).data(), rows, cols)
            .noalias() += gv * xv.transpose();
      }
      if (wants(2)) {
        auto& gb = grad_buffer(n.in[2]);
        for (std::size_t i = 0; i < rows; ++i) gb[i] += g[i];
      }
      break;
    }
    case Op::Elu: {
      if (!wants(0)) break;
      auto& gx = grad_buffer(n.in[0]);
      const double* x = nodes_[n.in[0]].data();
      for (std::size_t i = 0; i < n.size; ++i) gx[i] += g[i] * (x[i] > 0.0 ? 1.0 : n.owned[i] + 1.0);
      break;
    }
    case Op::Sigmoid: {
      if (!wants(0)) break;
      auto& gx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < n.size; ++i) gx[i] += g[i] * n.owned[i] * (1.0 - n.owned[i]);
      break;
    }
    case Op::Bce: {
      if (!wants(0)) break;
      // Exact derivative of the clamped loss: flat outside the clamp range.
      const double q = nodes_[n.in[0]].data()[0];
      if (q < kBceClamp || q > 1.0 - kBceClamp) break;
      grad_buffer(n.in[0])[0] += g[0] * (-n.k / q + (1.0 - n.k) / (1.0 - q));
      break;
    }
    case Op::L1: {
      const Node& an = nodes_[n.in[0]];
      const Node& bn = nodes_[n.in[1]];
      for (int slot = 0; slot < 2; ++slot) {
        if (!wants(slot)) continue;
        auto& gx = grad_buffer(n.in[slot]);
        const double sign = slot == 0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < an.size; ++i) {
          const double d = an.data()[i] - bn.data()[i];
          gx[i] += g[0] * sign * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        }
      }
      break;
    }
    case Op::Concat: {
      const std::size_t na = nodes_[n.in[0]].size;
      if (wants(0)) {
        auto& ga = grad_buffer(n.in[0]);
        for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(n.in[1]);
        for (std::size_t i = 0; i + na < n.size; ++i) gb[i] += g[na + i];
      }
      break;
    }
    case Op::Add: {
      for (int slot = 0; slot < 2; ++slot) {
        if (!wants(slot)) continue;
        auto& gx = grad_buffer(n.in[slot]);
        const bool broadcast = gx.size() == 1 && n.size != 1;
        for (std::size_t i = 0; i < n.size; ++i) gx[broadcast ? 0 : i] += g[i];
      }
      break;
    }
    case Op::Mul: {
      for (int slot = 0; slot < 2; ++slot) {
        if (!wants(slot)) continue;
        const Node& other = nodes_[n.in[1 - slot]];
        auto& gx = grad_buffer(n.in[slot]);
        const bool broadcast = gx.size() == 1 && n.size != 1;
        for (std::size_t i = 0; i < n.size; ++i) {
          gx[broadcast ? 0 : i] += g[i] * other.data()[other.size == 1 ? 0 : i];
        }
      }
      break;
    }
    case Op::Exp: {
      if (!wants(0)) break;
      auto& gx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < n.size; ++i) gx[i] += g[i] * n.owned[i];
      break;
    }
    case Op::Sum: {
      if (!wants(0)) break;
      auto& gx = grad_buffer(n.in[0]);
      for (double& v : gx) v += g[0];
      break;
    }
    case Op::Scale: {
      if (!wants(0)) break;
      auto& gx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < n.size; ++i) gx[i] += n.k * g[i];
      break;
    }
    case Op::Normalize: {
      if (!wants(0)) break;
      auto& gx = grad_buffer(n.in[0]);
      double yg = 0.0;
      for (std::size_t i = 0; i < n.size; ++i) yg += n.owned[i] * g[i];
      for (std::size_t i = 0; i < n.size; ++i) gx[i] += (g[i] - n.owned[i] * yg) / n.k;
      break;
    }
    case Op::Tile: {
      if (!wants(0)) break;
      auto& gx = grad_buffer(n.in[0]);
      for (std::size_t i = 0; i < n.size; ++i) gx[i % gx.size()] += g[i];
      break;
    }
  }
}

// Free-function spellings of the primitives.

/// y = W x (+ b).
inline Var affine(Var x, Var W, std::optional<Var> b = std::nullopt) {
  return x.tape()->affine(x, W, b);
}
/// Elementwise x if x > 0 else exp(x) - 1.
inline Var elu(Var x) { return x.tape()->elu(x); }
/// Elementwise logistic function; outputs stay inside (0, 1).
inline Var sigmoid(Var x) { return x.tape()->sigmoid(x); }
/// -[c ln p + (1 - c) ln(1 - p)] with p clamped to [1e-7, 1 - 1e-7].
inline Var bce(Var p, double target) { return p.tape()->bce(p, target); }
/// Sum of absolute differences; subgradient 0 at equality.
inline Var l1_distance(Var a, Var b) { return a.tape()->l1_distance(a, b); }
inline Var concat(Var a, Var b) { return a.tape()->concat(a, b); }
inline Var add(Var a, Var b) { return a.tape()->add(a, b); }
inline Var mul(Var a, Var b) { return a.tape()->mul(a, b); }
inline Var exp(Var x) { return x.tape()->exp(x); }
inline Var sum(Var x) { return x.tape()->sum(x); }
inline Var scale(Var x, double k) { return x.tape()->scale(x, k); }
inline Var normalize(Var x) { return x.tape()->normalize(x); }
/// Repeats x cyclically to length n (truncating the last copy).
inline Var tile(Var x, std::size_t n) { return x.tape()->tile(x, n); }

inline std::uint32_t crc32_bytes(std::uint32_t crc, const void* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(crc, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

/// Named parameters with deterministic (sorted) iteration order.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  void add(const std::string& name, Tensor t) {
    if (!map_.emplace(name, std::move(t)).second) throw Error("duplicate parameter '" + name + "'");
  }
  bool contains(const std::string& name) const { return map_.count(name) != 0; }
  const Tensor& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) { return const_cast<Tensor&>(std::as_const(*this).at(name)); }

  Map::const_iterator begin() const { return map_.begin(); }
  Map::const_iterator end() const { return map_.end(); }
  Map::iterator begin() { return map_.begin(); }
  Map::iterator end() { return map_.end(); }
  std::size_t size() const { return map_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : map_) n += t.size();
    return n;
  }

  /// CRC-32 over names, shapes, and value bits.
  std::uint32_t checksum() const {
    std::uint32_t crc = 0;
    for (const auto& [name, t] : map_) {
      crc = crc32_bytes(crc, name.data(), name.size());
      crc = crc32_bytes(crc, t.shape.data(), t.shape.size() * sizeof(std::size_t));
      crc = crc32_bytes(crc, t.values.data(), t.values.size() * sizeof(double));
    }
    return crc;
  }

  bool operator==(const ParamStore& o) const { return map_ == o.map_; }

 private:
  Map map_;
};

using GradMap = std::map<std::string, std::vector<double>>;

/// Tape handles for every parameter of a store.
struct Binding {
  std::map<std::string, Var> vars;
  Var operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw Error("parameter '" + name + "' is not bound");
    return it->second;
  }
};

inline Binding bind(Tape& tape, const ParamStore& params, bool trainable) {
  Binding b;
  for (const auto& [name, t] : params) b.vars.emplace(name, tape.leaf(t, trainable));
  return b;
}

/// Adds the gradients of every bound parameter into `into`, scaled by `weight`.
inline void accumulate_gradients(const Tape& tape, const Binding& binding, GradMap& into, double weight = 1.0) {
  for (const auto& [name, var] : binding.vars) {
    if (!tape.requires_grad(var)) continue;
    auto g = tape.grad(var);
    auto& dst = into[name];
    if (dst.empty()) dst.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += weight * g[i];
  }
}

inline GradMap gradients(const Tape& tape, const Binding& binding) {
  GradMap out;
  accumulate_gradients(tape, binding, out);
  return out;
}

/// Adaptive-moment optimizer state.
struct OptimizerState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;

  bool operator==(const OptimizerState&) const = default;
};

/// One bias-corrected adaptive-moment update. Parameters without an entry in
/// `grads` are left untouched.
inline void optimizer_step(ParamStore& params, const GradMap& grads, OptimizerState& state) {
  for (const auto& [name, g] : grads) {
    if (params.at(name).size() != g.size()) {
      throw ShapeMismatch("gradient for '" + name + "' has size " + std::to_string(g.size()) + ", parameter has " +
                          std::to_string(params.at(name).size()));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    auto& theta = params.at(name).values;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

/// Weights uniform in +-sqrt(6 / (n_in + n_out)).
inline Tensor glorot_uniform(std::size_t n_out, std::size_t n_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(n_in + n_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(n_out * n_in);
  for (double& x : w) x = dist(rng);
  return Tensor({n_out, n_in}, std::move(w), true);
}

}  // namespace advpose::diff

#endif
