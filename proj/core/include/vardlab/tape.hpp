#pragma once

#include <cstddef>
#include <vector>

#include "vardlab/tensor.hpp"

namespace vardlab {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Reverse-mode tape over Tensors. Nodes are appended during the forward
// pass; backward() visits them in strict reverse append order, so gradient
// accumulation order is deterministic.
class Tape {
 public:
  Var leaf(Tensor value);

  Var matmul(Var a, Var b);               // (m,k) x (k,n) -> (m,n)
  Var add(Var a, Var b);                  // elementwise, same shape
  Var add_rowvec(Var a, Var b);           // (m,n) + (n,) broadcast over rows
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);                  // elementwise
  Var scale(Var a, double c);
  Var tanh_op(Var a);
  Var relu_op(Var a);
  Var sum(Var a);                         // -> scalar (1,)
  Var mean(Var a);                        // -> scalar (1,)
  Var concat_cols(const std::vector<Var>& parts);  // row-wise concat
  Var gather_rows(Var matrix, std::vector<std::size_t> indices);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

  // loss must be scalar (numel == 1); populates grad buffers for every node.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  enum class Op {
    Leaf,
    MatMul,
    Add,
    AddRowVec,
    Sub,
    Mul,
    Scale,
    Tanh,
    Relu,
    Sum,
    Mean,
    ConcatCols,
    GatherRows,
  };

  struct Node {
    Op op;
    std::size_t in0 = 0, in1 = 0;
    double c = 0.0;
    std::vector<std::size_t> aux;  // concat inputs or gather indices
    Tensor value;
    Tensor grad;
  };

  Var push(Node n);
  std::vector<Node> nodes_;
};

}  // namespace vardlab
