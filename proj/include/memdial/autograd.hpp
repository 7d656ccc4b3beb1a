#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "memdial/tensor.hpp"

namespace memdial {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  const double* __restrict__ ap = a.data.data();
  const double* __restrict__ bp = b.data.data();
  double* __restrict__ cp = c.data.data();
  for (int i = 0; i < m; ++i) {
    const double* arow = ap + static_cast<std::size_t>(i) * k;
    double* crow = cp + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = bp + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  for (int i = 0; i < m; ++i) {
    const double* arow = a.data.data() + static_cast<std::size_t>(i) * k;
    double* crow = c.data.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b.data.data() + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      crow[j] += s;
    }
  }
}

// C[p,q] += X[m,p]^T * Y[m,q]
inline void gemm_tn_acc(const Tensor& x, const Tensor& y, Tensor& c) {
  const int m = x.rows(), p = x.cols(), q = y.cols();
  for (int i = 0; i < m; ++i) {
    const double* xrow = x.data.data() + static_cast<std::size_t>(i) * p;
    const double* yrow = y.data.data() + static_cast<std::size_t>(i) * q;
    for (int a = 0; a < p; ++a) {
      const double xv = xrow[a];
      if (xv == 0.0) continue;
      double* crow = c.data.data() + static_cast<std::size_t>(a) * q;
      for (int b = 0; b < q; ++b) crow[b] += xv * yrow[b];
    }
  }
}

inline double gelu_fwd(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

inline double gelu_bwd(double x) {
  const double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779;  // pdf
  const double Phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  return Phi + x * phi;
}

}  // namespace detail

/// Reverse-mode tape. Records one node per primitive operation; backward()
/// replays the tape in reverse, accumulating exactly one gradient
/// contribution per use of a node. Unused nodes report zero gradients.
/// A tape instance is single-threaded.
class Tape {
 public:
  using NodeId = int;

  NodeId leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }

  /// Gradient of the last backward() root w.r.t. node `id`.
  Tensor grad(NodeId id) const {
    check(id);
    if (static_cast<std::size_t>(id) < grads_.size() && !grads_[id].data.empty()) {
      return grads_[id];
    }
    return Tensor::zeros(nodes_[id].value.shape);
  }

  /// Borrowed view of a node's gradient, or nullptr if it never received one.
  const Tensor* grad_ptr(NodeId id) const {
    check(id);
    if (static_cast<std::size_t>(id) < grads_.size() && !grads_[id].data.empty()) {
      return &grads_[id];
    }
    return nullptr;
  }

  NodeId add(NodeId a, NodeId b) {
    require_same_shape(a, b, "add");
    Tensor out = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += vb.data[i];
    return push(std::move(out), {a, b}, [](Tape& t, const Node& n, const Tensor& g) {
      t.accumulate(n.parents[0], g);
      t.accumulate(n.parents[1], g);
    });
  }

  /// ca*a + cb*b, elementwise on same-shape tensors.
  NodeId axpby(double ca, NodeId a, double cb, NodeId b) {
    require_same_shape(a, b, "axpby");
    Tensor out(nodes_[a].value.shape);
    const Tensor& va = nodes_[a].value;
    const Tensor& vb = nodes_[b].value;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      out.data[i] = ca * va.data[i] + cb * vb.data[i];
    }
    return push(std::move(out), {a, b}, [ca, cb](Tape& t, const Node& n, const Tensor& g) {
      t.accumulate_scaled(n.parents[0], g, ca);
      t.accumulate_scaled(n.parents[1], g, cb);
    });
  }

  NodeId scale(NodeId a, double s) {
    Tensor out = nodes_[check(a)].value;
    for (double& v : out.data) v *= s;
    return push(std::move(out), {a}, [s](Tape& t, const Node& n, const Tensor& g) {
      t.accumulate_scaled(n.parents[0], g, s);
    });
  }

  /// A[m,n] + bias[n], broadcast over rows.
  NodeId add_bias(NodeId a, NodeId bias) {
    const Tensor& va = nodes_[check(a)].value;
    const Tensor& vb = nodes_[check(bias)].value;
    if (vb.numel() != va.cols()) throw std::invalid_argument("add_bias: width mismatch");
    Tensor out = va;
    const int m = va.rows(), n = va.cols();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) out.at(i, j) += vb.data[j];
    }
    return push(std::move(out), {a, bias}, [](Tape& t, const Node& n, const Tensor& g) {
      t.accumulate(n.parents[0], g);
      Tensor& db = t.ensure_grad(n.parents[1]);
      const int m = g.rows(), w = g.cols();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < w; ++j) db.data[j] += g.at(i, j);
      }
    });
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& va = nodes_[check(a)].value;
    const Tensor& vb = nodes_[check(b)].value;
    if (va.cols() != vb.rows()) throw std::invalid_argument("matmul: inner dim mismatch");
    Tensor out({va.rows(), vb.cols()});
    detail::gemm_nn_acc(va, vb, out);
    return push(std::move(out), {a, b}, [](Tape& t, const Node& n, const Tensor& g) {
      const Tensor& va = t.nodes_[n.parents[0]].value;
      const Tensor& vb = t.nodes_[n.parents[1]].value;
      detail::gemm_nt_acc(g, vb, t.ensure_grad(n.parents[0]));
      detail::gemm_tn_acc(va, g, t.ensure_grad(n.parents[1]));
    });
  }

  /// A[m,k] * B[n,k]^T -> [m,n]
  NodeId matmul_nt(NodeId a, NodeId b) {
    const Tensor& va = nodes_[check(a)].value;
    const Tensor& vb = nodes_[check(b)].value;
    if (va.cols() != vb.cols()) throw std::invalid_argument("matmul_nt: inner dim mismatch");
    Tensor out({va.rows(), vb.rows()});
    detail::gemm_nt_acc(va, vb, out);
    return push(std::move(out), {a, b}, [](Tape& t, const Node& n, const Tensor& g) {
      const Tensor& va = t.nodes_[n.parents[0]].value;
      const Tensor& vb = t.nodes_[n.parents[1]].value;
      detail::gemm_nn_acc(g, vb, t.ensure_grad(n.parents[0]));
      detail::gemm_tn_acc(g, va, t.ensure_grad(n.parents[1]));
    });
  }

  NodeId gelu(NodeId a) {
    Tensor out = nodes_[check(a)].value;
    for (double& v : out.data) v = detail::gelu_fwd(v);
    return push(std::move(out), {a}, [](Tape& t, const Node& n, const Tensor& g) {
      const Tensor& x = t.nodes_[n.parents[0]].value;
      Tensor& dx = t.ensure_grad(n.parents[0]);
      for (std::size_t i = 0; i < g.data.size(); ++i) {
        dx.data[i] += g.data[i] * detail::gelu_bwd(x.data[i]);
      }
    });
  }

  /// Row-wise layer norm with learned gamma/beta.
  NodeId layernorm(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-5) {
    const Tensor& vx = nodes_[check(x)].value;
    const Tensor& vg = nodes_[check(gamma)].value;
    const Tensor& vb = nodes_[check(beta)].value;
    const int m = vx.rows(), n = vx.cols();
    if (vg.numel() != n || vb.numel() != n) throw std::invalid_argument("layernorm: width mismatch");
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
      auto xr = vx.row(i);
      double mu = 0.0;
      for (double v : xr) mu += v;
      mu /= n;
      double var = 0.0;
      for (double v : xr) var += (v - mu) * (v - mu);
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);
      for (int j = 0; j < n; ++j) {
        out.at(i, j) = (xr[j] - mu) * inv * vg.data[j] + vb.data[j];
      }
    }
    return push(std::move(out), {x, gamma, beta},
                [eps](Tape& t, const Node& nd, const Tensor& g) {
      const Tensor& vx = t.nodes_[nd.parents[0]].value;
      const Tensor& vg = t.nodes_[nd.parents[1]].value;
      Tensor& dx = t.ensure_grad(nd.parents[0]);
      Tensor& dgamma = t.ensure_grad(nd.parents[1]);
      Tensor& dbeta = t.ensure_grad(nd.parents[2]);
      const int m = vx.rows(), n = vx.cols();
      std::vector<double> xhat(static_cast<std::size_t>(n));
      for (int i = 0; i < m; ++i) {
        auto xr = vx.row(i);
        double mu = 0.0;
        for (double v : xr) mu += v;
        mu /= n;
        double var = 0.0;
        for (double v : xr) var += (v - mu) * (v - mu);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < n; ++j) {
          xhat[j] = (xr[j] - mu) * inv;
          const double go = g.at(i, j);
          dgamma.data[j] += go * xhat[j];
          dbeta.data[j] += go;
          const double dxh = go * vg.data[j];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat[j];
        }
        for (int j = 0; j < n; ++j) {
          const double dxh = g.at(i, j) * vg.data[j];
          dx.at(i, j) += inv * (dxh - sum_dxhat / n - xhat[j] * sum_dxhat_xhat / n);
        }
      }
    });
  }

  /// Rows of `table` selected by ids -> [len(ids), width].
  NodeId embedding(NodeId table, std::vector<int> ids) {
    const Tensor& vt = nodes_[check(table)].value;
    const int n = vt.cols();
    Tensor out({static_cast<int>(ids.size()), n});
    for (std::size_t t = 0; t < ids.size(); ++t) {
      if (ids[t] < 0 || ids[t] >= vt.rows()) throw std::invalid_argument("embedding: id out of range");
      auto src = vt.row(ids[t]);
      std::copy(src.begin(), src.end(), out.row(static_cast<int>(t)).begin());
    }
    return push(std::move(out), {table},
                [ids = std::move(ids)](Tape& t, const Node& nd, const Tensor& g) {
      Tensor& dt = t.ensure_grad(nd.parents[0]);
      const int n = g.cols();
      for (std::size_t r = 0; r < ids.size(); ++r) {
        double* dst = dt.data.data() + static_cast<std::size_t>(ids[r]) * n;
        const double* src = g.data.data() + r * n;
        for (int j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }

  NodeId slice_cols(NodeId a, int c0, int c1) {
    const Tensor& va = nodes_[check(a)].value;
    if (c0 < 0 || c1 > va.cols() || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    const int m = va.rows(), w = c1 - c0;
    Tensor out({m, w});
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < w; ++j) out.at(i, j) = va.at(i, c0 + j);
    }
    return push(std::move(out), {a}, [c0, w](Tape& t, const Node& nd, const Tensor& g) {
      Tensor& da = t.ensure_grad(nd.parents[0]);
      const int m = g.rows();
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < w; ++j) da.at(i, c0 + j) += g.at(i, j);
      }
    });
  }

  NodeId concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    int m = nodes_[check(parts[0])].value.rows();
    int total = 0;
    for (NodeId p : parts) {
      if (nodes_[check(p)].value.rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
      total += nodes_[p].value.cols();
    }
    Tensor out({m, total});
    int off = 0;
    std::vector<int> widths;
    for (NodeId p : parts) {
      const Tensor& vp = nodes_[p].value;
      const int w = vp.cols();
      widths.push_back(w);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < w; ++j) out.at(i, off + j) = vp.at(i, j);
      }
      off += w;
    }
    return push(std::move(out), parts,
                [widths = std::move(widths)](Tape& t, const Node& nd, const Tensor& g) {
      const int m = g.rows();
      int off = 0;
      for (std::size_t k = 0; k < nd.parents.size(); ++k) {
        Tensor& dp = t.ensure_grad(nd.parents[k]);
        const int w = widths[k];
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < w; ++j) dp.at(i, j) += g.at(i, off + j);
        }
        off += w;
      }
    });
  }

  /// Row-wise softmax over scores[T,T] with a causal mask: row t attends to
  /// columns 0..t; masked entries are exactly 0 in the output.
  NodeId causal_softmax(NodeId scores) {
    const Tensor& vs = nodes_[check(scores)].value;
    if (vs.rows() != vs.cols()) throw std::invalid_argument("causal_softmax: square input required");
    const int T = vs.rows();
    Tensor out({T, T});
    for (int t = 0; t < T; ++t) {
      double m = -std::numeric_limits<double>::infinity();
      for (int j = 0; j <= t; ++j) m = std::max(m, vs.at(t, j));
      double sum = 0.0;
      for (int j = 0; j <= t; ++j) {
        const double e = std::exp(vs.at(t, j) - m);
        out.at(t, j) = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (int j = 0; j <= t; ++j) out.at(t, j) *= inv;
    }
    return push(std::move(out), {scores}, [](Tape& t, const Node& nd, const Tensor& g) {
      const Tensor& p = nd.value;
      Tensor& ds = t.ensure_grad(nd.parents[0]);
      const int T = p.rows();
      for (int r = 0; r < T; ++r) {
        double dot = 0.0;
        for (int j = 0; j <= r; ++j) dot += g.at(r, j) * p.at(r, j);
        for (int j = 0; j <= r; ++j) ds.at(r, j) += p.at(r, j) * (g.at(r, j) - dot);
      }
    });
  }

  /// Row-wise softmax(z/tau).
  NodeId softmax_temp_rows(NodeId logits, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("softmax_temp_rows: tau must be > 0");
    const Tensor& vz = nodes_[check(logits)].value;
    const int R = vz.rows(), C = vz.cols();
    Tensor out({R, C});
    for (int r = 0; r < R; ++r) {
      double m = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < C; ++j) m = std::max(m, vz.at(r, j) / tau);
      double sum = 0.0;
      for (int j = 0; j < C; ++j) {
        out.at(r, j) = std::exp(vz.at(r, j) / tau - m);
        sum += out.at(r, j);
      }
      const double inv = 1.0 / sum;
      for (int j = 0; j < C; ++j) out.at(r, j) *= inv;
    }
    return push(std::move(out), {logits}, [tau](Tape& t, const Node& nd, const Tensor& g) {
      const Tensor& p = nd.value;
      Tensor& dz = t.ensure_grad(nd.parents[0]);
      const int R = p.rows(), C = p.cols();
      for (int r = 0; r < R; ++r) {
        double dot = 0.0;
        for (int j = 0; j < C; ++j) dot += g.at(r, j) * p.at(r, j);
        for (int j = 0; j < C; ++j) dz.at(r, j) += p.at(r, j) * (g.at(r, j) - dot) / tau;
      }
    });
  }

  /// Row-wise log softmax(z/tau) in logsumexp form.
  NodeId log_softmax_temp_rows(NodeId logits, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("log_softmax_temp_rows: tau must be > 0");
    const Tensor& vz = nodes_[check(logits)].value;
    const int R = vz.rows(), C = vz.cols();
    Tensor out({R, C});
    for (int r = 0; r < R; ++r) {
      double m = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < C; ++j) m = std::max(m, vz.at(r, j) / tau);
      double sum = 0.0;
      for (int j = 0; j < C; ++j) sum += std::exp(vz.at(r, j) / tau - m);
      const double lse = m + std::log(sum);
      for (int j = 0; j < C; ++j) out.at(r, j) = vz.at(r, j) / tau - lse;
    }
    return push(std::move(out), {logits}, [tau](Tape& t, const Node& nd, const Tensor& g) {
      const Tensor& lp = nd.value;
      Tensor& dz = t.ensure_grad(nd.parents[0]);
      const int R = lp.rows(), C = lp.cols();
      for (int r = 0; r < R; ++r) {
        double gsum = 0.0;
        for (int j = 0; j < C; ++j) gsum += g.at(r, j);
        for (int j = 0; j < C; ++j) {
          dz.at(r, j) += (g.at(r, j) - std::exp(lp.at(r, j)) * gsum) / tau;
        }
      }
    });
  }

  /// out[t] = src[t, targets[t]]
  NodeId gather_targets(NodeId src, std::vector<int> targets) {
    const Tensor& vs = nodes_[check(src)].value;
    if (static_cast<int>(targets.size()) != vs.rows()) {
      throw std::invalid_argument("gather_targets: length mismatch");
    }
    Tensor out({static_cast<int>(targets.size())});
    for (std::size_t t = 0; t < targets.size(); ++t) {
      if (targets[t] < 0 || targets[t] >= vs.cols()) {
        throw std::invalid_argument("gather_targets: target id out of range");
      }
      out.data[t] = vs.at(static_cast<int>(t), targets[t]);
    }
    return push(std::move(out), {src},
                [targets = std::move(targets)](Tape& t, const Node& nd, const Tensor& g) {
      Tensor& ds = t.ensure_grad(nd.parents[0]);
      for (std::size_t r = 0; r < targets.size(); ++r) {
        ds.at(static_cast<int>(r), targets[r]) += g.data[r];
      }
    });
  }

  NodeId sum(NodeId a) {
    const Tensor& va = nodes_[check(a)].value;
    double s = 0.0;
    for (double v : va.data) s += v;
    return push(Tensor::scalar(s), {a}, [](Tape& t, const Node& nd, const Tensor& g) {
      Tensor& da = t.ensure_grad(nd.parents[0]);
      for (double& v : da.data) v += g.data[0];
    });
  }

  NodeId mean(NodeId a) {
    const Tensor& va = nodes_[check(a)].value;
    const double n = static_cast<double>(va.numel());
    double s = 0.0;
    for (double v : va.data) s += v;
    return push(Tensor::scalar(s / n), {a}, [n](Tape& t, const Node& nd, const Tensor& g) {
      Tensor& da = t.ensure_grad(nd.parents[0]);
      const double gi = g.data[0] / n;
      for (double& v : da.data) v += gi;
    });
  }

  /// Reverse pass from a scalar root with seed gradient 1.
  void backward(NodeId root) {
    if (nodes_[check(root)].value.numel() != 1) {
      throw std::invalid_argument("backward: root must be scalar");
    }
    backward_from(root, Tensor::scalar(1.0));
  }

  /// Reverse pass seeded with an arbitrary cotangent at `root`.
  void backward_from(NodeId root, const Tensor& seed) {
    check(root);
    if (seed.shape != nodes_[root].value.shape) {
      throw std::invalid_argument("backward_from: seed shape mismatch");
    }
    grads_.assign(nodes_.size(), Tensor{});
    grads_[root] = seed;
    for (int i = root; i >= 0; --i) {
      if (grads_[i].data.empty()) continue;
      if (nodes_[i].backward) nodes_[i].backward(*this, nodes_[i], grads_[i]);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node;
  using BackwardFn = std::function<void(Tape&, const Node&, const Tensor&)>;

  struct Node {
    Tensor value;
    std::vector<NodeId> parents;
    BackwardFn backward;
  };

  NodeId push(Tensor value, std::vector<NodeId> parents, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), std::move(parents), std::move(fn)});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
      throw std::invalid_argument("Tape: bad node id");
    }
    return id;
  }

  void require_same_shape(NodeId a, NodeId b, const char* op) {
    if (!nodes_[check(a)].value.same_shape(nodes_[check(b)].value)) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
  }

  Tensor& ensure_grad(NodeId id) {
    if (grads_[id].data.empty()) grads_[id] = Tensor::zeros(nodes_[id].value.shape);
    return grads_[id];
  }

  void accumulate(NodeId id, const Tensor& g) {
    Tensor& d = ensure_grad(id);
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += g.data[i];
  }

  void accumulate_scaled(NodeId id, const Tensor& g, double s) {
    Tensor& d = ensure_grad(id);
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += s * g.data[i];
  }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

}  // namespace memdial
