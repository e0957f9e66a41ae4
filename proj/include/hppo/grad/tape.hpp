#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hppo/grad/tensor.hpp"

namespace hppo::grad {

/// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Append-only reverse-mode autodiff tape.
///
/// Nodes are recorded in execution order, so every input id precedes its
/// consumer. Parameter leaves reference caller-owned tensors; backward()
/// accumulates into their grad() buffers. A tape is single-writer: build
/// one per forward pass and discard it after backward.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor t);
  /// Leaf whose gradient lives on the tape (read it back with grad()).
  Var leaf(Tensor t);
  /// Leaf bound to an external parameter; `p` must outlive the tape.
  Var param(Tensor& p);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() loss w.r.t. `v`; zeros when unreachable.
  std::vector<double> grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  /// Hash of every branch taken by relu, clamp and minimum so far. Two
  /// evaluations with equal signatures lie in the same smooth piece.
  std::uint64_t branch_signature() const { return branches_; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(Var loss);

  // Linear algebra and elementwise ops.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_row(Var a, Var row);  ///< [m x n] + broadcast [n]
  Var mul_row(Var a, Var row);  ///< [m x n] * broadcast [n]
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var neg(Var a) { return scale(a, -1.0); }
  Var relu(Var a);
  Var tanh(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  Var clamp(Var a, double lo, double hi);
  Var minimum(Var a, Var b);

  // Reductions.
  Var sum(Var a);
  Var mean(Var a);
  /// Mean over the valid rows of each consecutive block of `rows_per_group`
  /// rows: [(g*t) x n] -> [g x n]. Groups with no valid row yield zeros.
  Var group_mean_rows(Var a, int rows_per_group, std::span<const std::uint8_t> row_mask = {});

  // Normalization.
  Var softmax(Var a, int axis);
  Var log_softmax(Var a, int axis);
  Var layer_norm_rows(Var a, double eps = 1e-5);

  // Shape manipulation.
  Var transpose(Var a);
  Var reshape(Var a, Shape shape);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  Var slice_cols(Var a, int begin, int end);
  Var gather_cols(Var a, std::span<const int> index);  ///< [m x n] -> [m x 1]

  // Convolution: input [c x h x w], kernels [o x c x kh x kw].
  Var conv2d(Var input, Var kernels, int stride, int padding);
  Var add_channel_bias(Var a, Var bias);  ///< [o x h x w] + [o]

  /// Multi-head scaled dot-product attention over `groups` independent
  /// sequences stacked row-wise. q: [(g*tq) x (h*dk)], k: [(g*tk) x (h*dk)],
  /// v: [(g*tk) x (h*dv)]. Keys with key_mask == 0 receive zero weight; a
  /// query whose keys are all masked returns a zero row.
  Var attention(Var q, Var k, Var v, int heads, int groups = 1,
                std::span<const std::uint8_t> key_mask = {});

 private:
  using BackwardFn = std::function<void(Tape&, int)>;

  struct Node {
    Tensor value;
    Tensor* external = nullptr;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  const Node& node(Var v) const;
  const std::vector<double>& out_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  /// Gradient accumulator for `id`, or nullptr when the node needs none.
  double* gbuf(int id);

  void note_branch(bool taken) { branches_ = (branches_ ^ (taken ? 0x9eu : 0x3du)) * 0x100000001b3ULL; }

  std::vector<Node> nodes_;
  std::uint64_t branches_ = 0xcbf29ce484222325ULL;
};

}  // namespace hppo::grad
