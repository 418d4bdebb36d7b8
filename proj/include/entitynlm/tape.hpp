#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "entitynlm/tensor.hpp"

namespace enlm {

// Handle to a node on a Tape. Only meaningful for the tape that created it.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
  friend bool operator==(Var a, Var b) { return a.id == b.id; }
};

// Append-only reverse-mode autodiff graph. Nodes only reference earlier nodes,
// so a reverse sweep over ids is a valid topological order. Parameter nodes
// read their value directly from caller-owned tensors, which must outlive the
// tape (or the next truncate() below them).
//
// A tape is confined to one thread.
class Tape {
 public:
  explicit Tape(bool track_gradients = true) : track_(track_gradients) {}

  Var constant(Tensor value);
  Var constant(std::span<const double> values);
  Var scalar(double v) { return constant(Tensor::scalar(v)); }
  Var param(const Tensor& storage);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  // s is a scalar node; y = s * x.
  Var scale(Var x, Var s);
  // y = a * x + b, constants a and b.
  Var affine(Var x, double a, double b);
  // y = x * m elementwise with a constant mask (dropout).
  Var mask(Var x, std::vector<double> m);
  Var tanh(Var x);
  Var sigmoid(Var x);

  Var dot(Var a, Var b);
  Var sum(Var x);
  Var sum(std::span<const Var> scalars);

  Var matmul(Var a, Var b);
  // W[m x n] * x[n]
  Var matvec(Var w, Var x);
  // W[m x n]^T * x[m]
  Var matvec_t(Var w, Var x);
  // W[r0:r1] * x + b[r0:r1]. b may be an invalid Var (no bias).
  Var linear(Var w, Var b, Var x, std::size_t row_begin, std::size_t row_end);
  // h^T W v
  Var bilinear(Var h, Var w, Var v);

  Var log_softmax(Var x);
  Var pick(Var x, std::size_t index);
  Var stack(std::span<const Var> scalars);
  Var concat(Var a, Var b);
  // Row select from a matrix; the gradient touches only that row.
  Var lookup(Var table, std::size_t row);
  Var l2_normalize(Var x);

  std::span<const double> value(Var v) const;
  const Shape& shape(Var v) const { return nodes_[check(v)].shape; }
  double scalar_value(Var v) const;
  Tensor tensor(Var v) const;

  // Reverse sweep from a scalar loss. Gradients of earlier runs are discarded.
  void backward(Var loss);
  // Empty span for nodes that received no gradient.
  std::span<const double> grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  bool tracking() const { return track_; }
  // Drop every node with id >= mark.
  void truncate(std::size_t mark);
  void clear() { truncate(0); }

 private:
  enum class Op : std::uint8_t {
    kConstant, kParam, kAdd, kSub, kMul, kScale, kAffine, kMask, kTanh, kSigmoid,
    kDot, kSum, kSumList, kMatmul, kMatvec, kMatvecT, kLinear, kBilinear,
    kLogSoftmax, kPick, kStack, kConcat, kLookup, kL2Normalize,
  };

  struct Node {
    Op op = Op::kConstant;
    bool requires_grad = false;
    Shape shape;
    std::vector<std::int32_t> inputs;
    std::vector<double> value;
    const double* external = nullptr;
    std::vector<double> grad;
    std::vector<double> aux;
    std::size_t i0 = 0;
    std::size_t i1 = 0;
    double c0 = 0.0;
    double c1 = 0.0;
  };

  std::size_t check(Var v) const;
  Var push(Node node, const char* op_name);
  Node make(Op op, std::initializer_list<Var> inputs, Shape shape);
  const double* data(std::int32_t id) const;
  std::vector<double>& grad_buffer(std::int32_t id);
  void backprop(std::size_t id);

  bool track_;
  std::vector<Node> nodes_;
};

}  // namespace enlm
