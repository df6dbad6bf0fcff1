#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mfcl/tensor.hpp"

namespace mfcl::ad {

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

template <typename T>
class Tape;

/// Called once during the reverse sweep with the node's own id; reads the
/// node's output gradient and accumulates into its inputs' gradients.
template <typename T>
using BackwardFn = std::function<void(Tape<T>&, std::size_t)>;

/// Records a forward computation for one reverse-mode sweep. Nodes are
/// appended in execution order, so recording order is a topological order
/// and the graph is acyclic by construction.
template <typename T>
class Tape {
 public:
  /// Input that needs no gradient.
  Var constant(Tensor<T> value);
  /// Binds a parameter; binding the same parameter twice yields the same node,
  /// so shared modules accumulate a single gradient.
  Var parameter(Parameter<T>& p);

  /// Appends an op result. Throws NumericError naming `op` if `value`
  /// contains a NaN or infinity.
  Var record(const char* op, Tensor<T> value, std::vector<Var> inputs, BackwardFn<T> backward);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const char* op_name(Var v) const { return nodes_.at(v.id).op; }
  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_.at(id).inputs; }

  /// Gradient of node `id`, allocated as zeros on first access.
  Tensor<T>& grad(std::size_t id);
  const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Reverse sweep from a scalar `loss`. Parameter gradients are written into
  /// Parameter::grad. Throws if called twice on a tape, or if a bound parameter
  /// still holds gradients from an earlier sweep and `accumulate` is false.
  void backward(Var loss, bool accumulate = false);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "";
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<std::size_t> inputs;
    BackwardFn<T> backward;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  bool swept_ = false;
};

// kSame pads with zeros; kSameReplicate repeats the edge values.
enum class Padding { kValid, kSame, kSameReplicate };

// Ops. Shapes use N for batch, C for channels.

/// x[N,Cin,L] * w[Cout,Cin,K] + b[Cout] -> [N,Cout,floor((L-K)/stride)+1]; valid cross-correlation.
template <typename T>
Var conv1d(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride);

/// x[N,Cin,H,W], w[Cout,Cin,Kh,Kw]. Same padding requires odd square kernels and stride 1.
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride, Padding padding = Padding::kValid);

/// Per-sample, per-group standardization over channels-in-group x spatial, then gamma/beta per channel.
template <typename T>
Var group_norm(Tape<T>& tape, Var x, std::size_t groups, Var gamma, Var beta, double eps = 1e-5);

template <typename T>
Var relu(Tape<T>& tape, Var x);

template <typename T>
Var sigmoid(Tape<T>& tape, Var x);

/// x[N,Din] w[Dout,Din] b[Dout] -> [N,Dout].
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b);

/// Arithmetic mean over the listed axes (which are removed from the shape).
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x, std::vector<std::size_t> axes);

/// 2x2 average pooling with stride 2 over the last two axes of [N,C,H,W]; odd tails are dropped.
template <typename T>
Var avg_pool2x2(Tape<T>& tape, Var x);

/// Row-wise log-softmax of [N,C].
template <typename T>
Var log_softmax(Tape<T>& tape, Var x);

/// Stacks [Na,D] and [Nb,D] into [Na+Nb,D].
template <typename T>
Var concat_rows(Tape<T>& tape, Var a, Var b);

/// Concatenates [N,Da] and [N,Db] into [N,Da+Db].
template <typename T>
Var concat_cols(Tape<T>& tape, Var a, Var b);

/// Sum of x * weights (weights fixed); scalar.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights);

/// Sum of squares; scalar.
template <typename T>
Var sum_squares(Tape<T>& tape, Var x);

/// Mean binary cross-entropy of logits[N,C] against 0/1 targets[N,C].
template <typename T>
Var bce_with_logits(Tape<T>& tape, Var logits, const Tensor<T>& targets);

/// Mean negative log-likelihood of integer class targets under row-wise softmax.
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, const std::vector<std::size_t>& targets);

/// NT-Xent over latents[2N,D] where rows k and k+N are a positive pair.
/// Each anchor's denominator spans the other 2N-1 rows (positive included);
/// the result is the mean over all 2N anchors. Rows are L2-normalized inside.
template <typename T>
Var nt_xent(Tape<T>& tape, Var latents, double temperature);

}  // namespace mfcl::ad
