#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mpgcn/errors.hpp"
#include "mpgcn/sparse.hpp"
#include "mpgcn/tensor.hpp"

namespace mpgcn {

// --- dense matmul kernels (row-major) ---------------------------------------

inline Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bp + p * n;
      double* crow = cp + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw ShapeError("matmul_nt " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c({m, n});
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* ar = ap + i * k;
      const double* br = bp + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      cp[i * n + j] = acc;
    }
  }
  return c;
}

// a^T * b
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
    throw ShapeError("matmul_tn " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({k, n});
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bp + i * n;
      double* crow = cp + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// --- computation tape --------------------------------------------------------

// Reverse-mode tape. Forward values are computed eagerly as nodes are
// recorded; backward() runs reverse accumulation from a scalar loss.
// A tape is confined to a single thread for its lifetime.
class Tape {
 public:
  using NodeId = std::size_t;

  enum class Op {
    Const,
    Param,
    MatMul,
    SpMM,
    Add,
    Sub,
    Mul,
    Scale,      // x * scalar
    AddScalar,  // x + scalar
    BiasAdd,    // broadcast bias over leading axes
    Relu,
    Sigmoid,
    SoftmaxRows,  // softmax over the trailing axis
    Log,
    Square,
    Sum,
    Mean,
    SliceLead,
    ConcatLead,
    ConvTime,  // valid 1-D convolution along the leading (time) axis
    Reshape,
  };

  NodeId constant(Tensor v) { return push(Op::Const, std::move(v), {}, false); }

  NodeId parameter(Tensor v) {
    NodeId id = push(Op::Param, std::move(v), {}, true);
    params_.push_back(id);
    return id;
  }

  NodeId matmul(NodeId a, NodeId b) {
    return push(Op::MatMul, matmul_nn(value(a), value(b)), {a, b});
  }

  // The sparse operand is data, not a trainable quantity; the caller keeps it
  // alive for the lifetime of the tape.
  NodeId spmm(const SparseMatrix& s, NodeId d) {
    NodeId id = push(Op::SpMM, mpgcn::spmm(s, value(d)), {d});
    nodes_[id].sparse = &s;
    return id;
  }

  NodeId add(NodeId a, NodeId b) {
    check_same_shape("add", a, b);
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return push(Op::Add, std::move(out), {a, b});
  }

  NodeId sub(NodeId a, NodeId b) {
    check_same_shape("sub", a, b);
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    return push(Op::Sub, std::move(out), {a, b});
  }

  NodeId mul(NodeId a, NodeId b) {
    check_same_shape("mul", a, b);
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    return push(Op::Mul, std::move(out), {a, b});
  }

  NodeId scale(NodeId a, double c) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
    NodeId id = push(Op::Scale, std::move(out), {a});
    nodes_[id].scalar = c;
    return id;
  }

  NodeId add_scalar(NodeId a, double c) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += c;
    NodeId id = push(Op::AddScalar, std::move(out), {a});
    nodes_[id].scalar = c;
    return id;
  }

  // x + b where b's shape equals a suffix of x's shape; b is broadcast over
  // the remaining leading axes.
  NodeId bias_add(NodeId x, NodeId b) {
    const Tensor& vx = value(x);
    const Tensor& vb = value(b);
    if (vb.rank() >= vx.rank())
      throw ShapeError("bias_add: bias rank must be below input rank");
    for (std::size_t i = 0; i < vb.rank(); ++i)
      if (vb.shape()[i] != vx.shape()[vx.rank() - vb.rank() + i])
        throw ShapeError("bias_add: bias " + shape_str(vb.shape()) + " is not a suffix of " +
                         shape_str(vx.shape()));
    Tensor out = vx;
    const std::size_t w = vb.numel();
    for (std::size_t off = 0; off < out.numel(); off += w)
      for (std::size_t j = 0; j < w; ++j) out[off + j] += vb[j];
    return push(Op::BiasAdd, std::move(out), {x, b});
  }

  NodeId relu(NodeId a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    return push(Op::Relu, std::move(out), {a});
  }

  NodeId sigmoid(NodeId a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(out[i]);
    return push(Op::Sigmoid, std::move(out), {a});
  }

  NodeId softmax_rows(NodeId a) {
    const Tensor& v = value(a);
    if (v.rank() < 1) throw ShapeError("softmax_rows on scalar-rank tensor");
    const std::size_t c = v.shape().back();
    const std::size_t r = v.numel() / c;
    Tensor out = v;
    for (std::size_t i = 0; i < r; ++i) {
      double* row = out.data() + i * c;
      double mx = row[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        row[j] = std::exp(row[j] - mx);
        s += row[j];
      }
      for (std::size_t j = 0; j < c; ++j) row[j] /= s;
    }
    return push(Op::SoftmaxRows, std::move(out), {a});
  }

  NodeId log(NodeId a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
    return push(Op::Log, std::move(out), {a});
  }

  NodeId square(NodeId a) {
    Tensor out = value(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
    return push(Op::Square, std::move(out), {a});
  }

  NodeId sum(NodeId a) { return push(Op::Sum, Tensor::scalar(value(a).sum()), {a}); }

  NodeId mean(NodeId a) {
    const Tensor& v = value(a);
    if (v.numel() == 0) throw ContractError("mean of empty tensor");
    return push(Op::Mean, Tensor::scalar(v.sum() / static_cast<double>(v.numel())), {a});
  }

  // Rows [begin, end) along the leading axis.
  NodeId slice_lead(NodeId a, std::size_t begin, std::size_t end) {
    const Tensor& v = value(a);
    if (v.rank() < 1 || begin > end || end > v.extent(0))
      throw ShapeError("slice_lead [" + std::to_string(begin) + "," + std::to_string(end) +
                       ") of " + shape_str(v.shape()));
    Shape s = v.shape();
    s[0] = end - begin;
    const std::size_t w = v.numel() / v.extent(0);
    Tensor out(s);
    std::copy(v.data() + begin * w, v.data() + end * w, out.data());
    NodeId id = push(Op::SliceLead, std::move(out), {a});
    nodes_[id].a0 = begin;
    nodes_[id].a1 = end;
    return id;
  }

  NodeId concat_lead(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ContractError("concat_lead of zero tensors");
    Shape s = value(parts[0]).shape();
    std::size_t total = 0;
    for (NodeId p : parts) {
      const Tensor& v = value(p);
      if (v.rank() != s.size()) throw ShapeError("concat_lead: rank mismatch");
      for (std::size_t i = 1; i < s.size(); ++i)
        if (v.shape()[i] != s[i]) throw ShapeError("concat_lead: trailing shape mismatch");
      total += v.extent(0);
    }
    s[0] = total;
    Tensor out(s);
    double* dst = out.data();
    for (NodeId p : parts) {
      const Tensor& v = value(p);
      std::copy(v.data(), v.data() + v.numel(), dst);
      dst += v.numel();
    }
    return push(Op::ConcatLead, std::move(out), parts);
  }

  // x: [t, S, C_in], kernel: [k, C_in, C_out] -> [t-k+1, S, C_out].
  NodeId conv_time(NodeId x, NodeId kernel) {
    const Tensor& v = value(x);
    const Tensor& w = value(kernel);
    if (v.rank() != 3 || w.rank() != 3)
      throw ShapeError("conv_time expects rank-3 input and kernel");
    const std::size_t t = v.extent(0), s = v.extent(1), ci = v.extent(2);
    const std::size_t k = w.extent(0), co = w.extent(2);
    if (w.extent(1) != ci)
      throw ShapeError("conv_time: kernel channels " + std::to_string(w.extent(1)) +
                       " vs input channels " + std::to_string(ci));
    if (t < k)
      throw ShapeError("conv_time: time extent " + std::to_string(t) + " below kernel size " +
                       std::to_string(k));
    const std::size_t to = t - k + 1;
    Tensor out({to, s, co});
    const double* xp = v.data();
    const double* wp = w.data();
    double* op = out.data();
    for (std::size_t tau = 0; tau < to; ++tau)
      for (std::size_t kk = 0; kk < k; ++kk)
        for (std::size_t ss = 0; ss < s; ++ss) {
          const double* xrow = xp + ((tau + kk) * s + ss) * ci;
          double* orow = op + (tau * s + ss) * co;
          for (std::size_t i = 0; i < ci; ++i) {
            const double xv = xrow[i];
            if (xv == 0.0) continue;
            const double* wrow = wp + (kk * ci + i) * co;
            for (std::size_t o = 0; o < co; ++o) orow[o] += xv * wrow[o];
          }
        }
    return push(Op::ConvTime, std::move(out), {x, kernel});
  }

  NodeId reshape(NodeId a, Shape s) {
    return push(Op::Reshape, value(a).reshaped(std::move(s)), {a});
  }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }

  const Tensor& grad(NodeId id) const {
    if (nodes_[id].grad.numel() == 0)
      throw ContractError("gradient not populated; run backward() first");
    return nodes_[id].grad;
  }

  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse accumulation from a scalar loss node. Every parameter node ends
  // up with a gradient of its own shape (zero if unreachable).
  void backward(NodeId loss) {
    if (value(loss).numel() != 1)
      throw ContractError("backward requires a scalar loss, got " +
                          shape_str(value(loss).shape()));
    for (auto& n : nodes_)
      if (n.requires_grad) n.grad = Tensor(n.value.shape());
    if (!nodes_[loss].requires_grad) return;  // loss independent of parameters
    nodes_[loss].grad[0] = 1.0;
    for (std::size_t idx = loss + 1; idx-- > 0;) {
      Node& n = nodes_[idx];
      if (!n.requires_grad || n.grad.numel() == 0) continue;
      accumulate_inputs(n);
    }
  }

 private:
  struct Node {
    Op op;
    Tensor value;
    Tensor grad;
    std::vector<NodeId> inputs;
    bool requires_grad = false;
    double scalar = 0.0;
    std::size_t a0 = 0, a1 = 0;
    const SparseMatrix* sparse = nullptr;
  };

  static double stable_sigmoid(double x) {
    if (x >= 0.0) {
      const double e = std::exp(-x);
      return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

  void check_same_shape(const char* what, NodeId a, NodeId b) const {
    if (!value(a).same_shape(value(b)))
      throw ShapeError(std::string(what) + " " + shape_str(value(a).shape()) + " vs " +
                       shape_str(value(b).shape()));
  }

  NodeId push(Op op, Tensor v, std::vector<NodeId> inputs, bool rg = false) {
    Node n;
    n.op = op;
    n.value = std::move(v);
    n.inputs = std::move(inputs);
    n.requires_grad = rg;
    for (NodeId i : n.inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  Tensor& grad_buf(NodeId id) { return nodes_[id].grad; }

  void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
  }

  void accumulate_inputs(Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Const:
      case Op::Param:
        break;
      case Op::MatMul: {
        NodeId a = n.inputs[0], b = n.inputs[1];
        if (nodes_[a].requires_grad) add_into(grad_buf(a), matmul_nt(g, nodes_[b].value));
        if (nodes_[b].requires_grad) add_into(grad_buf(b), matmul_tn(nodes_[a].value, g));
        break;
      }
      case Op::SpMM: {
        NodeId d = n.inputs[0];
        if (nodes_[d].requires_grad) add_into(grad_buf(d), spmm_transpose(*n.sparse, g));
        break;
      }
      case Op::Add: {
        for (int side = 0; side < 2; ++side) {
          NodeId a = n.inputs[side];
          if (nodes_[a].requires_grad) add_into(grad_buf(a), g);
        }
        break;
      }
      case Op::Sub: {
        NodeId a = n.inputs[0], b = n.inputs[1];
        if (nodes_[a].requires_grad) add_into(grad_buf(a), g);
        if (nodes_[b].requires_grad) {
          Tensor& gb = grad_buf(b);
          for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= g[i];
        }
        break;
      }
      case Op::Mul: {
        NodeId a = n.inputs[0], b = n.inputs[1];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          const Tensor& vb = nodes_[b].value;
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * vb[i];
        }
        if (nodes_[b].requires_grad) {
          Tensor& gb = grad_buf(b);
          const Tensor& va = nodes_[a].value;
          for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += g[i] * va[i];
        }
        break;
      }
      case Op::Scale: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * n.scalar;
        }
        break;
      }
      case Op::AddScalar: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) add_into(grad_buf(a), g);
        break;
      }
      case Op::BiasAdd: {
        NodeId x = n.inputs[0], b = n.inputs[1];
        if (nodes_[x].requires_grad) add_into(grad_buf(x), g);
        if (nodes_[b].requires_grad) {
          Tensor& gb = grad_buf(b);
          const std::size_t w = gb.numel();
          for (std::size_t off = 0; off < g.numel(); off += w)
            for (std::size_t j = 0; j < w; ++j) gb[j] += g[off + j];
        }
        break;
      }
      case Op::Relu: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          const Tensor& vx = nodes_[a].value;
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += vx[i] > 0.0 ? g[i] : 0.0;
        }
        break;
      }
      case Op::Sigmoid: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          const Tensor& s = n.value;
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
        }
        break;
      }
      case Op::SoftmaxRows: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          const Tensor& s = n.value;
          const std::size_t c = s.shape().back();
          const std::size_t r = s.numel() / c;
          for (std::size_t i = 0; i < r; ++i) {
            const double* srow = s.data() + i * c;
            const double* grow = g.data() + i * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += srow[j] * grow[j];
            double* garow = ga.data() + i * c;
            for (std::size_t j = 0; j < c; ++j) garow[j] += (grow[j] - dot) * srow[j];
          }
        }
        break;
      }
      case Op::Log: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          const Tensor& vx = nodes_[a].value;
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i] / vx[i];
        }
        break;
      }
      case Op::Square: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          const Tensor& vx = nodes_[a].value;
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += 2.0 * vx[i] * g[i];
        }
        break;
      }
      case Op::Sum: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          const double gv = g[0];
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
        }
        break;
      }
      case Op::Mean: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          const double gv = g[0] / static_cast<double>(ga.numel());
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += gv;
        }
        break;
      }
      case Op::SliceLead: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          const std::size_t w = ga.numel() / ga.extent(0);
          double* dst = ga.data() + n.a0 * w;
          for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
        }
        break;
      }
      case Op::ConcatLead: {
        std::size_t off = 0;
        for (NodeId p : n.inputs) {
          const std::size_t len = nodes_[p].value.numel();
          if (nodes_[p].requires_grad) {
            Tensor& gp = grad_buf(p);
            for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
          }
          off += len;
        }
        break;
      }
      case Op::ConvTime: {
        NodeId x = n.inputs[0], kernel = n.inputs[1];
        const Tensor& vx = nodes_[x].value;
        const Tensor& vw = nodes_[kernel].value;
        const std::size_t s = vx.extent(1), ci = vx.extent(2);
        const std::size_t k = vw.extent(0), co = vw.extent(2);
        const std::size_t to = n.value.extent(0);
        if (nodes_[x].requires_grad) {
          Tensor& gx = grad_buf(x);
          for (std::size_t tau = 0; tau < to; ++tau)
            for (std::size_t kk = 0; kk < k; ++kk)
              for (std::size_t ss = 0; ss < s; ++ss) {
                double* xrow = gx.data() + ((tau + kk) * s + ss) * ci;
                const double* grow = g.data() + (tau * s + ss) * co;
                for (std::size_t i = 0; i < ci; ++i) {
                  const double* wrow = vw.data() + (kk * ci + i) * co;
                  double acc = 0.0;
                  for (std::size_t o = 0; o < co; ++o) acc += grow[o] * wrow[o];
                  xrow[i] += acc;
                }
              }
        }
        if (nodes_[kernel].requires_grad) {
          Tensor& gw = grad_buf(kernel);
          for (std::size_t tau = 0; tau < to; ++tau)
            for (std::size_t kk = 0; kk < k; ++kk)
              for (std::size_t ss = 0; ss < s; ++ss) {
                const double* xrow = vx.data() + ((tau + kk) * s + ss) * ci;
                const double* grow = g.data() + (tau * s + ss) * co;
                for (std::size_t i = 0; i < ci; ++i) {
                  const double xv = xrow[i];
                  if (xv == 0.0) continue;
                  double* wrow = gw.data() + (kk * ci + i) * co;
                  for (std::size_t o = 0; o < co; ++o) wrow[o] += xv * grow[o];
                }
              }
        }
        break;
      }
      case Op::Reshape: {
        NodeId a = n.inputs[0];
        if (nodes_[a].requires_grad) {
          Tensor& ga = grad_buf(a);
          for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[i];
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
};

// max(x, floor) composed from the primitive set; gradient is zero in the
// clamped region.
inline Tape::NodeId clamp_min(Tape& t, Tape::NodeId x, double floor) {
  return t.add_scalar(t.relu(t.add_scalar(x, -floor)), floor);
}

}  // namespace mpgcn
