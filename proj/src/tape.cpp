#include "entitynlm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "entitynlm/error.hpp"
#include "entitynlm/kernels.hpp"

namespace enlm {
namespace {

std::string mismatch(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b);
}

bool is_vector(const Shape& s) { return s.size() == 1; }
bool is_matrix(const Shape& s) { return s.size() == 2; }

}  // namespace

std::size_t Tape::check(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractError("tape: invalid node id " + std::to_string(v.id));
  }
  return static_cast<std::size_t>(v.id);
}

const double* Tape::data(std::int32_t id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external ? n.external : n.value.data();
}

std::span<const double> Tape::value(Var v) const {
  const Node& n = nodes_[check(v)];
  return {n.external ? n.external : n.value.data(), shape_size(n.shape)};
}

double Tape::scalar_value(Var v) const {
  const auto s = value(v);
  if (s.size() != 1) throw DimensionError("tape: node is not a scalar " + shape_string(shape(v)));
  return s[0];
}

Tensor Tape::tensor(Var v) const {
  const auto s = value(v);
  return Tensor(shape(v), std::vector<double>(s.begin(), s.end()));
}

Tape::Node Tape::make(Op op, std::initializer_list<Var> inputs, Shape shape) {
  Node n;
  n.op = op;
  n.shape = std::move(shape);
  n.inputs.reserve(inputs.size());
  for (Var in : inputs) {
    if (!in.valid()) continue;
    check(in);
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in.id)].requires_grad;
  }
  n.value.assign(shape_size(n.shape), 0.0);
  return n;
}

Var Tape::push(Node node, const char* op_name) {
  if (!node.external) {
    for (double x : node.value) {
      if (!std::isfinite(x)) {
        throw NumericalError(std::string("non-finite value produced by ") + op_name);
      }
    }
  }
  if (!track_) node.requires_grad = false;
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConstant;
  n.shape = value.shape();
  n.value.assign(value.data().begin(), value.data().end());
  return push(std::move(n), "constant");
}

Var Tape::constant(std::span<const double> values) {
  Node n;
  n.op = Op::kConstant;
  n.shape = {values.size()};
  n.value.assign(values.begin(), values.end());
  return push(std::move(n), "constant");
}

Var Tape::param(const Tensor& storage) {
  Node n;
  n.op = Op::kParam;
  n.shape = storage.shape();
  n.external = storage.data().data();
  n.requires_grad = true;
  return push(std::move(n), "param");
}

Var Tape::add(Var a, Var b) {
  if (shape(a) != shape(b)) throw DimensionError(mismatch("add", shape(a), shape(b)));
  Node n = make(Op::kAdd, {a, b}, shape(a));
  const double* x = data(a.id);
  const double* y = data(b.id);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = x[i] + y[i];
  return push(std::move(n), "add");
}

Var Tape::sub(Var a, Var b) {
  if (shape(a) != shape(b)) throw DimensionError(mismatch("sub", shape(a), shape(b)));
  Node n = make(Op::kSub, {a, b}, shape(a));
  const double* x = data(a.id);
  const double* y = data(b.id);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = x[i] - y[i];
  return push(std::move(n), "sub");
}

Var Tape::mul(Var a, Var b) {
  if (shape(a) != shape(b)) throw DimensionError(mismatch("mul", shape(a), shape(b)));
  Node n = make(Op::kMul, {a, b}, shape(a));
  const double* x = data(a.id);
  const double* y = data(b.id);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = x[i] * y[i];
  return push(std::move(n), "mul");
}

Var Tape::scale(Var x, Var s) {
  if (value(s).size() != 1) throw DimensionError("scale: factor must be scalar, got " + shape_string(shape(s)));
  Node n = make(Op::kScale, {x, s}, shape(x));
  const double f = data(s.id)[0];
  const double* v = data(x.id);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = f * v[i];
  return push(std::move(n), "scale");
}

Var Tape::affine(Var x, double a, double b) {
  Node n = make(Op::kAffine, {x}, shape(x));
  n.c0 = a;
  n.c1 = b;
  const double* v = data(x.id);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = a * v[i] + b;
  return push(std::move(n), "affine");
}

Var Tape::mask(Var x, std::vector<double> m) {
  if (m.size() != value(x).size()) {
    throw DimensionError("mask: mask length " + std::to_string(m.size()) + " vs " +
                         shape_string(shape(x)));
  }
  Node n = make(Op::kMask, {x}, shape(x));
  const double* v = data(x.id);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = v[i] * m[i];
  n.aux = std::move(m);
  return push(std::move(n), "mask");
}

Var Tape::tanh(Var x) {
  Node n = make(Op::kTanh, {x}, shape(x));
  const double* v = data(x.id);
  for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = std::tanh(v[i]);
  return push(std::move(n), "tanh");
}

Var Tape::sigmoid(Var x) {
  Node n = make(Op::kSigmoid, {x}, shape(x));
  const double* v = data(x.id);
  for (std::size_t i = 0; i < n.value.size(); ++i) {
    // Split by sign so exp never overflows.
    n.value[i] = v[i] >= 0 ? 1.0 / (1.0 + std::exp(-v[i])) : std::exp(v[i]) / (1.0 + std::exp(v[i]));
  }
  return push(std::move(n), "sigmoid");
}

Var Tape::dot(Var a, Var b) {
  if (value(a).size() != value(b).size() || !is_vector(shape(a)) || !is_vector(shape(b))) {
    throw DimensionError(mismatch("dot", shape(a), shape(b)));
  }
  Node n = make(Op::kDot, {a, b}, {});
  n.value[0] = kernels::active().dot(data(a.id), data(b.id), value(a).size());
  return push(std::move(n), "dot");
}

Var Tape::sum(Var x) {
  Node n = make(Op::kSum, {x}, {});
  const auto v = value(x);
  double s = 0.0;
  for (double e : v) s += e;
  n.value[0] = s;
  return push(std::move(n), "sum");
}

Var Tape::sum(std::span<const Var> scalars) {
  Node n = make(Op::kSumList, {}, {});
  double s = 0.0;
  for (Var v : scalars) {
    if (value(v).size() != 1) throw DimensionError("sum: expected scalars, got " + shape_string(shape(v)));
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    s += data(v.id)[0];
  }
  n.value[0] = s;
  return push(std::move(n), "sum");
}

Var Tape::matmul(Var a, Var b) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  if (!is_matrix(sa) || !is_matrix(sb) || sa[1] != sb[0]) {
    throw DimensionError(mismatch("matmul", sa, sb));
  }
  const std::size_t m = sa[0], k = sa[1], p = sb[1];
  Node n = make(Op::kMatmul, {a, b}, {m, p});
  const double* A = data(a.id);
  const double* B = data(b.id);
  const auto& kt = kernels::active();
  // Row r of C is sum_j A[r,j] * B[j,:].
  for (std::size_t r = 0; r < m; ++r) kt.gemv_t(B, k, p, A + r * k, n.value.data() + r * p);
  return push(std::move(n), "matmul");
}

Var Tape::matvec(Var w, Var x) {
  const Shape& sw = shape(w);
  const Shape& sx = shape(x);
  if (!is_matrix(sw) || !is_vector(sx) || sw[1] != sx[0]) throw DimensionError(mismatch("matvec", sw, sx));
  Node n = make(Op::kMatvec, {w, x}, {sw[0]});
  kernels::active().gemv(data(w.id), sw[0], sw[1], data(x.id), n.value.data());
  return push(std::move(n), "matvec");
}

Var Tape::matvec_t(Var w, Var x) {
  const Shape& sw = shape(w);
  const Shape& sx = shape(x);
  if (!is_matrix(sw) || !is_vector(sx) || sw[0] != sx[0]) throw DimensionError(mismatch("matvec_t", sw, sx));
  Node n = make(Op::kMatvecT, {w, x}, {sw[1]});
  kernels::active().gemv_t(data(w.id), sw[0], sw[1], data(x.id), n.value.data());
  return push(std::move(n), "matvec_t");
}

Var Tape::linear(Var w, Var b, Var x, std::size_t row_begin, std::size_t row_end) {
  const Shape& sw = shape(w);
  const Shape& sx = shape(x);
  if (!is_matrix(sw) || !is_vector(sx) || sw[1] != sx[0]) throw DimensionError(mismatch("linear", sw, sx));
  if (row_begin >= row_end || row_end > sw[0]) {
    throw DimensionError("linear: row range [" + std::to_string(row_begin) + "," +
                         std::to_string(row_end) + ") outside " + shape_string(sw));
  }
  if (b.valid() && (!is_vector(shape(b)) || shape(b)[0] != sw[0])) {
    throw DimensionError(mismatch("linear bias", shape(b), sw));
  }
  const std::size_t rows = row_end - row_begin;
  Node n = make(Op::kLinear, {w, x, b}, {rows});
  n.i0 = row_begin;
  n.i1 = row_end;
  if (b.valid()) {
    const double* bias = data(b.id) + row_begin;
    std::copy(bias, bias + rows, n.value.begin());
  }
  kernels::active().gemv(data(w.id) + row_begin * sw[1], rows, sw[1], data(x.id), n.value.data());
  return push(std::move(n), "linear");
}

Var Tape::bilinear(Var h, Var w, Var v) {
  const Shape& sh = shape(h);
  const Shape& sw = shape(w);
  const Shape& sv = shape(v);
  if (!is_vector(sh) || !is_matrix(sw) || !is_vector(sv) || sh[0] != sw[0] || sw[1] != sv[0]) {
    throw DimensionError("bilinear: shape mismatch " + shape_string(sh) + " x " + shape_string(sw) +
                         " x " + shape_string(sv));
  }
  Node n = make(Op::kBilinear, {h, w, v}, {});
  n.aux.assign(sw[0], 0.0);
  const auto& kt = kernels::active();
  kt.gemv(data(w.id), sw[0], sw[1], data(v.id), n.aux.data());
  n.value[0] = kt.dot(data(h.id), n.aux.data(), sw[0]);
  return push(std::move(n), "bilinear");
}

Var Tape::log_softmax(Var x) {
  const auto v = value(x);
  if (v.empty()) throw DimensionError("log_softmax: empty input");
  Node n = make(Op::kLogSoftmax, {x}, shape(x));
  const double mx = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double e : v) z += std::exp(e - mx);
  const double lse = mx + std::log(z);
  for (std::size_t i = 0; i < v.size(); ++i) n.value[i] = v[i] - lse;
  return push(std::move(n), "log_softmax");
}

Var Tape::pick(Var x, std::size_t index) {
  const auto v = value(x);
  if (index >= v.size()) {
    throw DimensionError("pick: index " + std::to_string(index) + " outside " + shape_string(shape(x)));
  }
  Node n = make(Op::kPick, {x}, {});
  n.i0 = index;
  n.value[0] = v[index];
  return push(std::move(n), "pick");
}

Var Tape::stack(std::span<const Var> scalars) {
  if (scalars.empty()) throw DimensionError("stack: no inputs");
  Node n = make(Op::kStack, {}, {scalars.size()});
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    const Var s = scalars[i];
    if (value(s).size() != 1) throw DimensionError("stack: expected scalars, got " + shape_string(shape(s)));
    n.inputs.push_back(s.id);
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(s.id)].requires_grad;
    n.value[i] = data(s.id)[0];
  }
  return push(std::move(n), "stack");
}

Var Tape::concat(Var a, Var b) {
  if (!is_vector(shape(a)) || !is_vector(shape(b))) throw DimensionError(mismatch("concat", shape(a), shape(b)));
  const std::size_t na = shape(a)[0], nb = shape(b)[0];
  Node n = make(Op::kConcat, {a, b}, {na + nb});
  std::copy(data(a.id), data(a.id) + na, n.value.begin());
  std::copy(data(b.id), data(b.id) + nb, n.value.begin() + static_cast<std::ptrdiff_t>(na));
  return push(std::move(n), "concat");
}

Var Tape::lookup(Var table, std::size_t row) {
  const Shape& st = shape(table);
  if (!is_matrix(st) || row >= st[0]) {
    throw DimensionError("lookup: row " + std::to_string(row) + " outside " + shape_string(st));
  }
  Node n = make(Op::kLookup, {table}, {st[1]});
  n.i0 = row;
  const double* src = data(table.id) + row * st[1];
  std::copy(src, src + st[1], n.value.begin());
  return push(std::move(n), "lookup");
}

Var Tape::l2_normalize(Var x) {
  const auto v = value(x);
  const double norm = std::sqrt(kernels::active().dot(v.data(), v.data(), v.size()));
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw DegenerateInputError("l2_normalize: input has zero or non-finite norm");
  }
  Node n = make(Op::kL2Normalize, {x}, shape(x));
  n.c0 = norm;
  for (std::size_t i = 0; i < v.size(); ++i) n.value[i] = v[i] / norm;
  return push(std::move(n), "l2_normalize");
}

void Tape::truncate(std::size_t mark) {
  if (mark < nodes_.size()) nodes_.resize(mark);
}

std::vector<double>& Tape::grad_buffer(std::int32_t id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(shape_size(n.shape), 0.0);
  return n.grad;
}

std::span<const double> Tape::grad(Var v) const { return nodes_[check(v)].grad; }

void Tape::backward(Var loss) {
  const std::size_t root = check(loss);
  if (!track_) throw ContractError("backward: tape was created without gradient tracking");
  if (shape_size(nodes_[root].shape) != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_string(nodes_[root].shape));
  }
  for (Node& n : nodes_) n.grad.clear();
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t id = root + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || n.inputs.empty()) continue;
    backprop(id);
  }
}

void Tape::backprop(std::size_t id) {
  const auto& kt = kernels::active();
  // nodes_ is never resized during the sweep, so these references stay valid.
  const std::vector<double>& g = nodes_[id].grad;
  const Node& n = nodes_[id];
  auto wants = [&](std::size_t k) { return nodes_[static_cast<std::size_t>(n.inputs[k])].requires_grad; };
  auto in = [&](std::size_t k) { return n.inputs[k]; };
  const std::size_t len = g.size();

  switch (n.op) {
    case Op::kConstant:
    case Op::kParam:
      break;
    case Op::kAdd:
      for (std::size_t k = 0; k < 2; ++k) {
        if (wants(k)) kt.axpy(1.0, g.data(), grad_buffer(in(k)).data(), len);
      }
      break;
    case Op::kSub:
      if (wants(0)) kt.axpy(1.0, g.data(), grad_buffer(in(0)).data(), len);
      if (wants(1)) kt.axpy(-1.0, g.data(), grad_buffer(in(1)).data(), len);
      break;
    case Op::kMul: {
      const double* a = data(in(0));
      const double* b = data(in(1));
      if (wants(0)) {
        auto& ga = grad_buffer(in(0));
        for (std::size_t i = 0; i < len; ++i) ga[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto& gb = grad_buffer(in(1));
        for (std::size_t i = 0; i < len; ++i) gb[i] += g[i] * a[i];
      }
      break;
    }
    case Op::kScale: {
      const double* x = data(in(0));
      const double s = data(in(1))[0];
      if (wants(0)) kt.axpy(s, g.data(), grad_buffer(in(0)).data(), len);
      if (wants(1)) grad_buffer(in(1))[0] += kt.dot(g.data(), x, len);
      break;
    }
    case Op::kAffine:
      kt.axpy(n.c0, g.data(), grad_buffer(in(0)).data(), len);
      break;
    case Op::kMask: {
      auto& gx = grad_buffer(in(0));
      for (std::size_t i = 0; i < len; ++i) gx[i] += g[i] * n.aux[i];
      break;
    }
    case Op::kTanh: {
      auto& gx = grad_buffer(in(0));
      for (std::size_t i = 0; i < len; ++i) gx[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      break;
    }
    case Op::kSigmoid: {
      auto& gx = grad_buffer(in(0));
      for (std::size_t i = 0; i < len; ++i) gx[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      break;
    }
    case Op::kDot: {
      const std::size_t m = shape_size(nodes_[static_cast<std::size_t>(in(0))].shape);
      if (wants(0)) kt.axpy(g[0], data(in(1)), grad_buffer(in(0)).data(), m);
      if (wants(1)) kt.axpy(g[0], data(in(0)), grad_buffer(in(1)).data(), m);
      break;
    }
    case Op::kSum: {
      auto& gx = grad_buffer(in(0));
      for (double& e : gx) e += g[0];
      break;
    }
    case Op::kSumList:
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (wants(k)) grad_buffer(in(k))[0] += g[0];
      }
      break;
    case Op::kMatmul: {
      const Shape& sa = nodes_[static_cast<std::size_t>(in(0))].shape;
      const Shape& sb = nodes_[static_cast<std::size_t>(in(1))].shape;
      const std::size_t m = sa[0], k = sa[1], p = sb[1];
      const double* A = data(in(0));
      const double* B = data(in(1));
      if (wants(0)) {
        // dA[r,:] = G[r,:] * B^T
        auto& ga = grad_buffer(in(0));
        for (std::size_t r = 0; r < m; ++r) kt.gemv(B, k, p, g.data() + r * p, ga.data() + r * k);
      }
      if (wants(1)) {
        // dB += A^T G, accumulated as outer products of rows.
        auto& gb = grad_buffer(in(1));
        for (std::size_t r = 0; r < m; ++r) kt.ger(1.0, A + r * k, k, g.data() + r * p, p, gb.data());
      }
      break;
    }
    case Op::kMatvec: {
      const Shape& sw = nodes_[static_cast<std::size_t>(in(0))].shape;
      if (wants(0)) kt.ger(1.0, g.data(), sw[0], data(in(1)), sw[1], grad_buffer(in(0)).data());
      if (wants(1)) kt.gemv_t(data(in(0)), sw[0], sw[1], g.data(), grad_buffer(in(1)).data());
      break;
    }
    case Op::kMatvecT: {
      const Shape& sw = nodes_[static_cast<std::size_t>(in(0))].shape;
      if (wants(0)) kt.ger(1.0, data(in(1)), sw[0], g.data(), sw[1], grad_buffer(in(0)).data());
      if (wants(1)) kt.gemv(data(in(0)), sw[0], sw[1], g.data(), grad_buffer(in(1)).data());
      break;
    }
    case Op::kLinear: {
      const Shape& sw = nodes_[static_cast<std::size_t>(in(0))].shape;
      const std::size_t rows = n.i1 - n.i0;
      const std::size_t cols = sw[1];
      if (wants(0)) {
        kt.ger(1.0, g.data(), rows, data(in(1)), cols, grad_buffer(in(0)).data() + n.i0 * cols);
      }
      if (wants(1)) kt.gemv_t(data(in(0)) + n.i0 * cols, rows, cols, g.data(), grad_buffer(in(1)).data());
      if (n.inputs.size() > 2 && wants(2)) kt.axpy(1.0, g.data(), grad_buffer(in(2)).data() + n.i0, rows);
      break;
    }
    case Op::kBilinear: {
      const Shape& sw = nodes_[static_cast<std::size_t>(in(1))].shape;
      const double* h = data(in(0));
      const double* v = data(in(2));
      if (wants(0)) kt.axpy(g[0], n.aux.data(), grad_buffer(in(0)).data(), sw[0]);
      if (wants(1)) kt.ger(g[0], h, sw[0], v, sw[1], grad_buffer(in(1)).data());
      if (wants(2)) {
        auto& gv = grad_buffer(in(2));
        std::vector<double> hs(h, h + sw[0]);
        for (double& e : hs) e *= g[0];
        kt.gemv_t(data(in(1)), sw[0], sw[1], hs.data(), gv.data());
      }
      break;
    }
    case Op::kLogSoftmax: {
      double total = 0.0;
      for (double e : g) total += e;
      auto& gx = grad_buffer(in(0));
      for (std::size_t i = 0; i < len; ++i) gx[i] += g[i] - std::exp(n.value[i]) * total;
      break;
    }
    case Op::kPick:
      grad_buffer(in(0))[n.i0] += g[0];
      break;
    case Op::kStack:
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        if (wants(k)) grad_buffer(in(k))[0] += g[k];
      }
      break;
    case Op::kConcat: {
      const std::size_t na = shape_size(nodes_[static_cast<std::size_t>(in(0))].shape);
      if (wants(0)) kt.axpy(1.0, g.data(), grad_buffer(in(0)).data(), na);
      if (wants(1)) kt.axpy(1.0, g.data() + na, grad_buffer(in(1)).data(), len - na);
      break;
    }
    case Op::kLookup: {
      auto& gt = grad_buffer(in(0));
      kt.axpy(1.0, g.data(), gt.data() + n.i0 * len, len);
      break;
    }
    case Op::kL2Normalize: {
      const double yg = kt.dot(n.value.data(), g.data(), len);
      auto& gx = grad_buffer(in(0));
      for (std::size_t i = 0; i < len; ++i) gx[i] += (g[i] - n.value[i] * yg) / n.c0;
      break;
    }
  }
}

}  // namespace enlm
