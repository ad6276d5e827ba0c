#include "vardlab/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace vardlab {

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
    throw std::invalid_argument("matmul: incompatible shapes");
  const std::size_t m = A.shape[0], k = A.shape[1], p = B.shape[1];
  Tensor C = Tensor::zeros({m, p});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double av = A.data[i * k + l];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < p; ++j)
        C.data[i * p + j] += av * B.data[l * p + j];
    }
  Node n;
  n.op = Op::MatMul;
  n.in0 = a.id;
  n.in1 = b.id;
  n.value = std::move(C);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw std::invalid_argument("add: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
  Node n;
  n.op = Op::Add;
  n.in0 = a.id;
  n.in1 = b.id;
  n.value = std::move(C);
  return push(std::move(n));
}

Var Tape::add_rowvec(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (A.shape.size() != 2 || B.size() != A.shape[1])
    throw std::invalid_argument("add_rowvec: shape mismatch");
  Tensor C = A;
  const std::size_t m = A.shape[0], p = A.shape[1];
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) C.data[i * p + j] += B.data[j];
  Node n;
  n.op = Op::AddRowVec;
  n.in0 = a.id;
  n.in1 = b.id;
  n.value = std::move(C);
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw std::invalid_argument("sub: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] -= B.data[i];
  Node n;
  n.op = Op::Sub;
  n.in0 = a.id;
  n.in1 = b.id;
  n.value = std::move(C);
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& A = value(a);
  const Tensor& B = value(b);
  if (!A.same_shape(B)) throw std::invalid_argument("mul: shape mismatch");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] *= B.data[i];
  Node n;
  n.op = Op::Mul;
  n.in0 = a.id;
  n.in1 = b.id;
  n.value = std::move(C);
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
  Tensor C = value(a);
  for (auto& v : C.data) v *= c;
  Node n;
  n.op = Op::Scale;
  n.in0 = a.id;
  n.c = c;
  n.value = std::move(C);
  return push(std::move(n));
}

Var Tape::tanh_op(Var a) {
  Tensor C = value(a);
  for (auto& v : C.data) v = std::tanh(v);
  Node n;
  n.op = Op::Tanh;
  n.in0 = a.id;
  n.value = std::move(C);
  return push(std::move(n));
}

Var Tape::relu_op(Var a) {
  Tensor C = value(a);
  for (auto& v : C.data) v = v > 0.0 ? v : 0.0;
  Node n;
  n.op = Op::Relu;
  n.in0 = a.id;
  n.value = std::move(C);
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).data) s += v;
  Node n;
  n.op = Op::Sum;
  n.in0 = a.id;
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Var Tape::mean(Var a) {
  const Tensor& A = value(a);
  double s = 0.0;
  for (double v : A.data) s += v;
  Node n;
  n.op = Op::Mean;
  n.in0 = a.id;
  n.value = Tensor::scalar(s / static_cast<double>(A.size()));
  return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const std::size_t m = value(parts[0]).shape.at(0);
  std::size_t total = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    if (t.shape.size() != 2 || t.shape[0] != m)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += t.shape[1];
  }
  Tensor C = Tensor::zeros({m, total});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& t = value(p);
    const std::size_t w = t.shape[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j)
        C.data[i * total + off + j] = t.data[i * w + j];
    off += w;
  }
  Node n;
  n.op = Op::ConcatCols;
  for (Var p : parts) n.aux.push_back(p.id);
  n.value = std::move(C);
  return push(std::move(n));
}

Var Tape::gather_rows(Var matrix, std::vector<std::size_t> indices) {
  const Tensor& M = value(matrix);
  if (M.shape.size() != 2) throw std::invalid_argument("gather_rows: need 2-D");
  const std::size_t w = M.shape[1];
  Tensor C = Tensor::zeros({indices.size(), w});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= M.shape[0])
      throw std::invalid_argument("gather_rows: index out of range");
    for (std::size_t j = 0; j < w; ++j)
      C.data[i * w + j] = M.data[indices[i] * w + j];
  }
  Node n;
  n.op = Op::GatherRows;
  n.in0 = matrix.id;
  n.aux = std::move(indices);
  n.value = std::move(C);
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  if (value(loss).size() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  for (auto& n : nodes_) n.grad = Tensor::zeros(n.value.shape);
  nodes_[loss.id].grad.data[0] = 1.0;

  for (std::size_t idx = nodes_.size(); idx-- > 0;) {
    Node& n = nodes_[idx];
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        const Tensor& A = nodes_[n.in0].value;
        const Tensor& B = nodes_[n.in1].value;
        Tensor& gA = nodes_[n.in0].grad;
        Tensor& gB = nodes_[n.in1].grad;
        const std::size_t m = A.shape[0], k = A.shape[1], p = B.shape[1];
        // gA += g * B^T ; gB += A^T * g
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            double s = 0.0;
            for (std::size_t j = 0; j < p; ++j)
              s += g.data[i * p + j] * B.data[l * p + j];
            gA.data[i * k + l] += s;
          }
        for (std::size_t l = 0; l < k; ++l)
          for (std::size_t j = 0; j < p; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i)
              s += A.data[i * k + l] * g.data[i * p + j];
            gB.data[l * p + j] += s;
          }
        break;
      }
      case Op::Add: {
        Tensor& gA = nodes_[n.in0].grad;
        Tensor& gB = nodes_[n.in1].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
          gA.data[i] += g.data[i];
          gB.data[i] += g.data[i];
        }
        break;
      }
      case Op::AddRowVec: {
        Tensor& gA = nodes_[n.in0].grad;
        Tensor& gB = nodes_[n.in1].grad;
        const std::size_t m = n.value.shape[0], p = n.value.shape[1];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < p; ++j) {
            gA.data[i * p + j] += g.data[i * p + j];
            gB.data[j] += g.data[i * p + j];
          }
        break;
      }
      case Op::Sub: {
        Tensor& gA = nodes_[n.in0].grad;
        Tensor& gB = nodes_[n.in1].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
          gA.data[i] += g.data[i];
          gB.data[i] -= g.data[i];
        }
        break;
      }
      case Op::Mul: {
        const Tensor& A = nodes_[n.in0].value;
        const Tensor& B = nodes_[n.in1].value;
        Tensor& gA = nodes_[n.in0].grad;
        Tensor& gB = nodes_[n.in1].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
          gA.data[i] += g.data[i] * B.data[i];
          gB.data[i] += g.data[i] * A.data[i];
        }
        break;
      }
      case Op::Scale: {
        Tensor& gA = nodes_[n.in0].grad;
        for (std::size_t i = 0; i < g.size(); ++i)
          gA.data[i] += g.data[i] * n.c;
        break;
      }
      case Op::Tanh: {
        Tensor& gA = nodes_[n.in0].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value.data[i];
          gA.data[i] += g.data[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::Relu: {
        const Tensor& A = nodes_[n.in0].value;
        Tensor& gA = nodes_[n.in0].grad;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (A.data[i] > 0.0) gA.data[i] += g.data[i];
        break;
      }
      case Op::Sum: {
        Tensor& gA = nodes_[n.in0].grad;
        for (auto& v : gA.data) v += g.data[0];
        break;
      }
      case Op::Mean: {
        Tensor& gA = nodes_[n.in0].grad;
        const double inv = 1.0 / static_cast<double>(gA.size());
        for (auto& v : gA.data) v += g.data[0] * inv;
        break;
      }
      case Op::ConcatCols: {
        const std::size_t m = n.value.shape[0], total = n.value.shape[1];
        std::size_t off = 0;
        for (std::size_t pid : n.aux) {
          Tensor& gP = nodes_[pid].grad;
          const std::size_t w = nodes_[pid].value.shape[1];
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
              gP.data[i * w + j] += g.data[i * total + off + j];
          off += w;
        }
        break;
      }
      case Op::GatherRows: {
        Tensor& gM = nodes_[n.in0].grad;
        const std::size_t w = n.value.shape[1];
        for (std::size_t i = 0; i < n.aux.size(); ++i)
          for (std::size_t j = 0; j < w; ++j)
            gM.data[n.aux[i] * w + j] += g.data[i * w + j];
        break;
      }
    }
  }
}

}  // namespace vardlab
