#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "emc/tensor.hpp"

namespace emc::ad {

class Tape;

// Handle to a node on a tape. Only meaningful together with the tape that
// produced it.
struct Var {
  int id = -1;
  bool ok() const { return id >= 0; }
};

enum class Reduce { sum, mean, max };

// Reverse-mode tape. Nodes are recorded in execution order; backward() walks
// them in exact reverse order, accumulating gradients additively so a tensor
// used k times receives the sum of its k contributions.
//
// A tape and its nodes are a single-threaded unit of work. Independent tapes
// may live on different threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. input() is a constant; param() is trainable and shows up in the
  // gradient map after backward().
  Var input(Tensor value);
  Var param(Tensor value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  // [m x n] + [1 x n], bias broadcast over rows
  Var add_row(Var a, Var row);
  Var mul(Var a, Var b);
  // scale * a + shift, elementwise
  Var affine(Var a, double scale, double shift);
  // a + c for a constant tensor c (no gradient into c)
  Var add_const(Var a, const Tensor& c);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var log(Var a);
  Var softmax_rows(Var a);
  // -log(probs[target] + eps); probs is a probability row vector
  Var cross_entropy(Var probs, int target_index);
  Var sum(Var a);
  // column-wise reduction over rows: [N x c] -> [1 x c]
  Var reduce_rows(Var a, Reduce kind);
  Var concat_cols(Var a, Var b);
  Var concat_rows(const std::vector<Var>& parts);
  Var gather_rows(Var table, std::vector<int> indices);
  Var reshape(Var a, Shape s);

  // Extension point: other modules install ops (e.g. the communication
  // channel's straight-through rule) by pushing a value plus a backward
  // closure that routes grad(out) into grads of its inputs.
  using BackwardFn = std::function<void(Tape&)>;
  Var make_node(Tensor value, BackwardFn fn);

  const Tensor& value(Var v) const { return node(v).value; }
  Tensor& grad(Var v) { return node(v).grad; }
  const Tensor& grad(Var v) const { return node(v).grad; }
  bool trainable(Var v) const { return node(v).trainable; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds grad(loss) = 1 and replays the tape backward from loss. loss must
  // be scalar. Trainable leaves not reachable from loss keep zero gradients.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn back;
    bool trainable = false;
  };

  Var push(Tensor value, BackwardFn fn, bool trainable = false);
  Node& node(Var v);
  const Node& node(Var v) const;

  // deque keeps value()/grad() references stable while new nodes are pushed
  std::deque<Node> nodes_;
};

const double kLogEps = 1e-12;

}  // namespace emc::ad
