#include "damo/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace damo {

namespace {

// C[n×m] += A[n×k] · B[k×m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c + i * m;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[n×m] += A[n×k] · B[m×k]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C[k×m] += A[n×k]ᵀ · B[n×m]
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c + p * m;
      for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
    }
  }
}

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw ContractViolation("variable is not attached to a graph");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) throw ContractViolation("operands belong to different graphs");
  return *a.graph;
}

void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::size_t row_width(const Tensor& t) { return t.size() / t.dim(0); }

// Shape of `t` with the leading extent replaced.
Shape with_rows(const Tensor& t, std::size_t rows) {
  Shape s = t.shape();
  s[0] = rows;
  return s;
}

}  // namespace

const Tensor& Var::value() const { return graph->value(id); }
bool Var::requires_grad() const { return graph->requires_grad(id); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, {}, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, {}, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Graph::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  nodes_.push_back(Node{p.value, {}, p.trainable, {}, {}, &p});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, Backward backward) {
  bool rg = false;
  for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
  if (!rg) backward = nullptr;
  nodes_.push_back(Node{std::move(value), {}, rg, std::move(inputs), std::move(backward), nullptr});
  return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractViolation("loss belongs to a different graph");
  if (nodes_[loss.id].value.size() != 1) throw ContractViolation("backward requires a scalar loss");
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id).fill(1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) n.param->grad.add_(n.grad);
  }
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 2, "matmul");
  require_rank(B, 2, "matmul");
  const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
  if (B.dim(0) != k) throw DimensionError("matmul: " + shape_str(A.shape()) + " · " + shape_str(B.shape()));
  Tensor out({n, m});
  gemm_nn(A.ptr(), B.ptr(), out.ptr(), n, k, m);
  const std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib}, [ia, ib, n, k, m](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (g.requires_grad(ia)) gemm_nt(go.ptr(), g.value(ib).ptr(), g.grad_buffer(ia).ptr(), n, m, k);
    if (g.requires_grad(ib)) gemm_tn(g.value(ia).ptr(), go.ptr(), g.grad_buffer(ib).ptr(), n, k, m);
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 2, "matmul_nt");
  require_rank(B, 2, "matmul_nt");
  const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(0);
  if (B.dim(1) != k) throw DimensionError("matmul_nt: " + shape_str(A.shape()) + " · " + shape_str(B.shape()) + "ᵀ");
  Tensor out({n, m});
  gemm_nt(A.ptr(), B.ptr(), out.ptr(), n, k, m);
  const std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib}, [ia, ib, n, k, m](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (g.requires_grad(ia)) gemm_nn(go.ptr(), g.value(ib).ptr(), g.grad_buffer(ia).ptr(), n, m, k);
    if (g.requires_grad(ib)) gemm_tn(go.ptr(), g.value(ia).ptr(), g.grad_buffer(ib).ptr(), n, m, k);
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  require_rank(A, 2, "transpose");
  const std::size_t n = A.dim(0), m = A.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = A.at(i, j);
  const std::size_t ia = a.id;
  return g.record(std::move(out), {ia}, [ia, n, m](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga.at(i, j) += go.at(j, i);
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.add_(b.value());
  const std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (g.requires_grad(ia)) g.grad_buffer(ia).add_(go);
    if (g.requires_grad(ib)) g.grad_buffer(ib).add_(go);
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  const std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (g.requires_grad(ia)) g.grad_buffer(ia).add_(go);
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const std::size_t ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (g.requires_grad(ia)) {
      Tensor& ga = g.grad_buffer(ia);
      const Tensor& B = g.value(ib);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * B[i];
    }
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      const Tensor& A = g.value(ia);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * A[i];
    }
  });
}

Var scale(Var a, double c) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (auto& v : out.data()) v *= c;
  const std::size_t ia = a.id;
  return g.record(std::move(out), {ia}, [ia, c](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * go[i];
  });
}

Var add_rowwise(Var x, Var v) {
  Graph& g = graph_of(x, v);
  const Tensor& X = x.value();
  const Tensor& V = v.value();
  require_rank(X, 2, "add_rowwise");
  const std::size_t n = X.dim(0), d = X.dim(1);
  if (V.size() != d) throw DimensionError("add_rowwise: bias " + shape_str(V.shape()) + " for rows of width " + std::to_string(d));
  Tensor out = X;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += V[j];
  const std::size_t ix = x.id, iv = v.id;
  return g.record(std::move(out), {ix, iv}, [ix, iv, n, d](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (g.requires_grad(ix)) g.grad_buffer(ix).add_(go);
    if (g.requires_grad(iv)) {
      Tensor& gv = g.grad_buffer(iv);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gv[j] += go[i * d + j];
    }
  });
}

Var add_per_step(Var x, Var y) {
  Graph& g = graph_of(x, y);
  const Tensor& X = x.value();
  const Tensor& Y = y.value();
  require_rank(X, 3, "add_per_step");
  require_rank(Y, 2, "add_per_step");
  const std::size_t t = X.dim(0), l = X.dim(1), d = X.dim(2);
  if (Y.dim(0) != t || Y.dim(1) != d)
    throw DimensionError("add_per_step: " + shape_str(X.shape()) + " + " + shape_str(Y.shape()));
  Tensor out = X;
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t k = 0; k < l; ++k)
      for (std::size_t j = 0; j < d; ++j) out.at(s, k, j) += Y.at(s, j);
  const std::size_t ix = x.id, iy = y.id;
  return g.record(std::move(out), {ix, iy}, [ix, iy, t, l, d](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (g.requires_grad(ix)) g.grad_buffer(ix).add_(go);
    if (g.requires_grad(iy)) {
      Tensor& gy = g.grad_buffer(iy);
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t k = 0; k < l; ++k)
          for (std::size_t j = 0; j < d; ++j) gy.at(s, j) += go.at(s, k, j);
    }
  });
}

Var gelu(Var x) {
  Graph& g = graph_of(x);
  Tensor out = x.value();
  for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    const Tensor& X = g.value(ix);
    Tensor& gx = g.grad_buffer(ix);
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = X[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += go[i] * (cdf + v * pdf);
    }
  });
}

Var softmax_rows(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank(X, 2, "softmax_rows");
  const std::size_t n = X.dim(0), d = X.dim(1);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) mx = std::max(mx, X.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += out.at(i, j) = std::exp(X.at(i, j) - mx);
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) /= z;
  }
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix, n, d](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += go.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += y.at(i, j) * (go.at(i, j) - dot);
    }
  });
}

Var attention(Var q, Var k, Var v, bool causal) {
  Graph& g = graph_of(q, k);
  graph_of(q, v);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require_rank(Q, 2, "attention");
  require_rank(K, 2, "attention");
  require_rank(V, 2, "attention");
  const std::size_t nq = Q.dim(0), d = Q.dim(1), nk = K.dim(0), dv = V.dim(1);
  if (K.dim(1) != d) throw DimensionError("attention: query dim " + std::to_string(d) + " vs key dim " + std::to_string(K.dim(1)));
  if (V.dim(0) != nk) throw DimensionError("attention: " + std::to_string(nk) + " keys vs " + std::to_string(V.dim(0)) + " values");
  if (causal && nk < nq) throw DimensionError("attention: causal mask needs at least as many keys as queries");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t offset = nk - nq;

  Tensor probs({nq, nk});
  gemm_nt(Q.ptr(), K.ptr(), probs.ptr(), nq, d, nk);
  for (std::size_t i = 0; i < nq; ++i) {
    const std::size_t limit = causal ? i + offset + 1 : nk;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, probs.at(i, j) * inv_sqrt_d);
    double z = 0.0;
    for (std::size_t j = 0; j < limit; ++j) z += probs.at(i, j) = std::exp(probs.at(i, j) * inv_sqrt_d - mx);
    for (std::size_t j = 0; j < limit; ++j) probs.at(i, j) /= z;
    for (std::size_t j = limit; j < nk; ++j) probs.at(i, j) = 0.0;
  }
  Tensor out({nq, dv});
  gemm_nn(probs.ptr(), V.ptr(), out.ptr(), nq, nk, dv);

  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return g.record(std::move(out), {iq, ik, iv},
                  [iq, ik, iv, nq, nk, d, dv, inv_sqrt_d, probs = std::move(probs)](Graph& g, std::size_t self) {
                    const Tensor& go = g.upstream(self);
                    if (g.requires_grad(iv)) gemm_tn(probs.ptr(), go.ptr(), g.grad_buffer(iv).ptr(), nq, nk, dv);
                    if (!g.requires_grad(iq) && !g.requires_grad(ik)) return;
                    Tensor ds({nq, nk});
                    gemm_nt(go.ptr(), g.value(iv).ptr(), ds.ptr(), nq, dv, nk);
                    for (std::size_t i = 0; i < nq; ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < nk; ++j) dot += ds.at(i, j) * probs.at(i, j);
                      for (std::size_t j = 0; j < nk; ++j)
                        ds.at(i, j) = probs.at(i, j) * (ds.at(i, j) - dot) * inv_sqrt_d;
                    }
                    if (g.requires_grad(iq)) gemm_nn(ds.ptr(), g.value(ik).ptr(), g.grad_buffer(iq).ptr(), nq, nk, d);
                    if (g.requires_grad(ik)) gemm_tn(ds.ptr(), g.value(iq).ptr(), g.grad_buffer(ik).ptr(), nq, nk, d);
                  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = graph_of(x, gamma);
  graph_of(x, beta);
  const Tensor& X = x.value();
  require_rank(X, 2, "layer_norm");
  const std::size_t n = X.dim(0), d = X.dim(1);
  if (d < 2) throw ContractViolation("layer_norm: feature dimension must be at least 2");
  if (!(eps > 0.0)) throw ContractViolation("layer_norm: eps must be positive");
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  if (G.size() != d || B.size() != d) throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");

  Tensor xhat({n, d});
  std::vector<double> rstd(n);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += X.at(i, j);
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (X.at(i, j) - mu) * (X.at(i, j) - mu);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat.at(i, j) = (X.at(i, j) - mu) * rstd[i];
      out.at(i, j) = G[j] * xhat.at(i, j) + B[j];
    }
  }
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return g.record(std::move(out), {ix, ig, ib},
                  [ix, ig, ib, n, d, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, std::size_t self) {
                    const Tensor& go = g.upstream(self);
                    if (g.requires_grad(ig)) {
                      Tensor& gg = g.grad_buffer(ig);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < d; ++j) gg[j] += go.at(i, j) * xhat.at(i, j);
                    }
                    if (g.requires_grad(ib)) {
                      Tensor& gb = g.grad_buffer(ib);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < d; ++j) gb[j] += go.at(i, j);
                    }
                    if (!g.requires_grad(ix)) return;
                    const Tensor& G = g.value(ig);
                    Tensor& gx = g.grad_buffer(ix);
                    const double inv_d = 1.0 / static_cast<double>(d);
                    for (std::size_t i = 0; i < n; ++i) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double dxh = go.at(i, j) * G[j];
                        m1 += dxh;
                        m2 += dxh * xhat.at(i, j);
                      }
                      m1 *= inv_d;
                      m2 *= inv_d;
                      for (std::size_t j = 0; j < d; ++j)
                        gx.at(i, j) += rstd[i] * (go.at(i, j) * G[j] - m1 - xhat.at(i, j) * m2);
                    }
                  });
}

Var l2_normalize_rows(Var x, double eps) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank(X, 2, "l2_normalize_rows");
  const std::size_t n = X.dim(0), d = X.dim(1);
  Tensor out({n, d});
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += X.at(i, j) * X.at(i, j);
    norms[i] = std::sqrt(s + eps);
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = X.at(i, j) / norms[i];
  }
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix, n, d, norms = std::move(norms)](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    const Tensor& y = g.value(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += y.at(i, j) * go.at(i, j);
      for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += (go.at(i, j) - y.at(i, j) * dot) / norms[i];
    }
  });
}

Var sum(Var x) {
  Graph& g = graph_of(x);
  const std::size_t ix = x.id;
  return g.record(Tensor::scalar(sum_all(x.value())), {ix}, [ix](Graph& g, std::size_t self) {
    const double go = g.upstream(self)[0];
    for (auto& v : g.grad_buffer(ix).data()) v += go;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var weighted_sum(Var x, const Tensor& w) {
  Graph& g = graph_of(x);
  require_same(x.value(), w, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += x.value()[i] * w[i];
  const std::size_t ix = x.id;
  return g.record(Tensor::scalar(s), {ix}, [ix, w](Graph& g, std::size_t self) {
    const double go = g.upstream(self)[0];
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go * w[i];
  });
}

Var mean_rows(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank(X, 2, "mean_rows");
  const std::size_t n = X.dim(0), d = X.dim(1);
  Tensor out({1, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += X.at(i, j);
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out.data()) v *= inv;
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix, n, d, inv](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) gx.at(i, j) += go[j] * inv;
  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x);
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  if (X.rank() == 0 || begin >= end || end > X.dim(0))
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(X.shape()));
  const std::size_t w = row_width(X);
  std::vector<double> data(X.ptr() + begin * w, X.ptr() + end * w);
  Tensor out(with_rows(X, end - begin), std::move(data));
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix, begin, w](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gx[begin * w + i] += go[i];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Graph& g = graph_of(parts.front());
  const Tensor& first = parts.front().value();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  std::vector<double> data;
  for (const Var& p : parts) {
    graph_of(parts.front(), p);
    const Tensor& t = p.value();
    if (t.rank() != first.rank() || !std::equal(t.shape().begin() + 1, t.shape().end(), first.shape().begin() + 1))
      throw DimensionError("concat_rows: " + shape_str(t.shape()) + " vs " + shape_str(first.shape()));
    rows += t.dim(0);
    data.insert(data.end(), t.data().begin(), t.data().end());
    ids.push_back(p.id);
  }
  Tensor out(with_rows(first, rows), std::move(data));
  return g.record(std::move(out), ids, [ids](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t n = g.value(id).size();
      if (g.requires_grad(id)) {
        Tensor& gi = g.grad_buffer(id);
        for (std::size_t i = 0; i < n; ++i) gi[i] += go[off + i];
      }
      off += n;
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank(X, 2, "slice_cols");
  const std::size_t n = X.dim(0), d = X.dim(1);
  if (begin >= end || end > d)
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(X.shape()));
  const std::size_t w = end - begin;
  Tensor out({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = X.at(i, begin + j);
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix, n, w, begin](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) gx.at(i, begin + j) += go.at(i, j);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Graph& g = graph_of(parts.front());
  const std::size_t n = parts.front().value().dim(0);
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (const Var& p : parts) {
    graph_of(parts.front(), p);
    const Tensor& t = p.value();
    require_rank(t, 2, "concat_cols");
    if (t.dim(0) != n) throw DimensionError("concat_cols: row count mismatch");
    ids.push_back(p.id);
    widths.push_back(t.dim(1));
    total += t.dim(1);
  }
  Tensor out({n, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = parts[k].value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, off + j) = t.at(i, j);
    off += widths[k];
  }
  return g.record(std::move(out), ids, [ids, widths, n](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.requires_grad(ids[k])) {
        Tensor& gi = g.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gi.at(i, j) += go.at(i, off + j);
      }
      off += widths[k];
    }
  });
}

Var gather_rows(Var table, const std::vector<int>& indices) {
  Graph& g = graph_of(table);
  const Tensor& T = table.value();
  require_rank(T, 2, "gather_rows");
  const std::size_t rows = T.dim(0), d = T.dim(1);
  if (indices.empty()) throw DimensionError("gather_rows: no indices");
  Tensor out({indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || static_cast<std::size_t>(idx) >= rows)
      throw ContractViolation("gather_rows: index " + std::to_string(idx) + " out of range for " + std::to_string(rows) + " rows");
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = T.at(static_cast<std::size_t>(idx), j);
  }
  const std::size_t it = table.id;
  return g.record(std::move(out), {it}, [it, indices, d](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& gt = g.grad_buffer(it);
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt.at(static_cast<std::size_t>(indices[i]), j) += go.at(i, j);
  });
}

Var select_token(Var x, std::size_t index) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank(X, 3, "select_token");
  const std::size_t t = X.dim(0), l = X.dim(1), d = X.dim(2);
  if (index >= l) throw DimensionError("select_token: index out of range");
  Tensor out({t, d});
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t j = 0; j < d; ++j) out.at(s, j) = X.at(s, index, j);
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix, t, d, index](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t j = 0; j < d; ++j) gx.at(s, index, j) += go.at(s, j);
  });
}

Var slice_tokens(Var x, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank(X, 3, "slice_tokens");
  const std::size_t t = X.dim(0), l = X.dim(1), d = X.dim(2);
  if (begin >= end || end > l) throw DimensionError("slice_tokens: range out of bounds");
  const std::size_t w = end - begin;
  Tensor out({t, w, d});
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t k = 0; k < w; ++k)
      for (std::size_t j = 0; j < d; ++j) out.at(s, k, j) = X.at(s, begin + k, j);
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix, t, w, d, begin](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t k = 0; k < w; ++k)
        for (std::size_t j = 0; j < d; ++j) gx.at(s, begin + k, j) += go.at(s, k, j);
  });
}

Var mean_tokens(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank(X, 3, "mean_tokens");
  const std::size_t t = X.dim(0), l = X.dim(1), d = X.dim(2);
  const double inv = 1.0 / static_cast<double>(l);
  Tensor out({t, d});
  for (std::size_t s = 0; s < t; ++s) {
    for (std::size_t k = 0; k < l; ++k)
      for (std::size_t j = 0; j < d; ++j) out.at(s, j) += X.at(s, k, j);
    for (std::size_t j = 0; j < d; ++j) out.at(s, j) *= inv;
  }
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix, t, l, d, inv](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t k = 0; k < l; ++k)
        for (std::size_t j = 0; j < d; ++j) gx.at(s, k, j) += go.at(s, j) * inv;
  });
}

Var adaptive_avg_pool_tokens(Var x, std::size_t l_out) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  require_rank(X, 3, "adaptive_avg_pool_tokens");
  const std::size_t t = X.dim(0), l = X.dim(1), d = X.dim(2);
  if (l_out < 1 || l_out > l)
    throw ContractViolation("adaptive_avg_pool: output length " + std::to_string(l_out) + " must be in [1, " + std::to_string(l) + "]");
  std::vector<std::size_t> lo(l_out), hi(l_out);
  for (std::size_t i = 0; i < l_out; ++i) {
    lo[i] = (i * l) / l_out;
    hi[i] = ((i + 1) * l + l_out - 1) / l_out;
  }
  Tensor out({t, l_out, d});
  for (std::size_t s = 0; s < t; ++s)
    for (std::size_t i = 0; i < l_out; ++i) {
      const double inv = 1.0 / static_cast<double>(hi[i] - lo[i]);
      for (std::size_t k = lo[i]; k < hi[i]; ++k)
        for (std::size_t j = 0; j < d; ++j) out.at(s, i, j) += X.at(s, k, j);
      for (std::size_t j = 0; j < d; ++j) out.at(s, i, j) *= inv;
    }
  const std::size_t ix = x.id;
  return g.record(std::move(out), {ix}, [ix, t, d, l_out, lo, hi](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    Tensor& gx = g.grad_buffer(ix);
    for (std::size_t s = 0; s < t; ++s)
      for (std::size_t i = 0; i < l_out; ++i) {
        const double inv = 1.0 / static_cast<double>(hi[i] - lo[i]);
        for (std::size_t k = lo[i]; k < hi[i]; ++k)
          for (std::size_t j = 0; j < d; ++j) gx.at(s, k, j) += go.at(s, i, j) * inv;
      }
  });
}

Var grouped_conv2d(Var x, Var weight, Var bias, std::size_t groups, std::size_t pad) {
  Graph& g = graph_of(x, weight);
  graph_of(x, bias);
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  require_rank(X, 3, "grouped_conv2d");
  require_rank(W, 4, "grouped_conv2d");
  const std::size_t cin = X.dim(0), h = X.dim(1), w = X.dim(2);
  const std::size_t cout = W.dim(0), cig = W.dim(1), kh = W.dim(2), kw = W.dim(3);
  if (groups == 0 || cin % groups != 0 || cout % groups != 0)
    throw ContractViolation("grouped_conv2d: channels " + std::to_string(cin) + "->" + std::to_string(cout) +
                            " not divisible by " + std::to_string(groups) + " groups");
  if (cig != cin / groups) throw DimensionError("grouped_conv2d: weight in-channels per group mismatch");
  if (bias.value().size() != cout) throw DimensionError("grouped_conv2d: bias size mismatch");
  if (h + 2 * pad < kh || w + 2 * pad < kw) throw DimensionError("grouped_conv2d: kernel larger than padded input");
  const std::size_t ho = h + 2 * pad - kh + 1, wo = w + 2 * pad - kw + 1;
  const std::size_t cog = cout / groups;

  // Visits every (output, input, weight) triple once.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t o = 0; o < cout; ++o) {
      const std::size_t grp = o / cog;
      for (std::size_t ci = 0; ci < cig; ++ci) {
        const std::size_t c = grp * cig + ci;
        for (std::size_t a = 0; a < kh; ++a)
          for (std::size_t b = 0; b < kw; ++b) {
            const std::size_t widx = ((o * cig + ci) * kh + a) * kw + b;
            for (std::size_t yo = 0; yo < ho; ++yo) {
              const std::ptrdiff_t yi = static_cast<std::ptrdiff_t>(yo + a) - static_cast<std::ptrdiff_t>(pad);
              if (yi < 0 || yi >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t xo = 0; xo < wo; ++xo) {
                const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(xo + b) - static_cast<std::ptrdiff_t>(pad);
                if (xi < 0 || xi >= static_cast<std::ptrdiff_t>(w)) continue;
                fn((o * ho + yo) * wo + xo, (c * h + static_cast<std::size_t>(yi)) * w + static_cast<std::size_t>(xi), widx);
              }
            }
          }
      }
    }
  };

  Tensor out({cout, ho, wo});
  const Tensor& B = bias.value();
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < ho * wo; ++i) out[o * ho * wo + i] = B[o];
  for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t wi) { out[oi] += W[wi] * X[xi]; });

  const std::size_t ix = x.id, iw = weight.id, ib = bias.id;
  return g.record(std::move(out), {ix, iw, ib}, [ix, iw, ib, cout, ho, wo, for_each_tap](Graph& g, std::size_t self) {
    const Tensor& go = g.upstream(self);
    if (g.requires_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t i = 0; i < ho * wo; ++i) gb[o] += go[o * ho * wo + i];
    }
    if (g.requires_grad(ix)) {
      const Tensor& W = g.value(iw);
      Tensor& gx = g.grad_buffer(ix);
      for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t wi) { gx[xi] += W[wi] * go[oi]; });
    }
    if (g.requires_grad(iw)) {
      const Tensor& X = g.value(ix);
      Tensor& gw = g.grad_buffer(iw);
      for_each_tap([&](std::size_t oi, std::size_t xi, std::size_t wi) { gw[wi] += X[xi] * go[oi]; });
    }
  });
}

Var cross_entropy(Var logits, const std::vector<int>& targets, const std::vector<bool>& mask) {
  Graph& g = graph_of(logits);
  const Tensor& L = logits.value();
  require_rank(L, 2, "cross_entropy");
  const std::size_t n = L.dim(0), v = L.dim(1);
  if (targets.size() != n || mask.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(n) + " positions vs " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(mask.size()) + " mask entries");
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
      throw ContractViolation("cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary of " + std::to_string(v));
    ++count;
  }
  if (count == 0) return g.constant(Tensor::scalar(0.0));

  Tensor probs({n, v});
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, L.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += probs.at(i, j) = std::exp(L.at(i, j) - mx);
    for (std::size_t j = 0; j < v; ++j) probs.at(i, j) /= z;
    total += mx + std::log(z) - L.at(i, static_cast<std::size_t>(targets[i]));
  }
  const double inv = 1.0 / static_cast<double>(count);
  const std::size_t il = logits.id;
  return g.record(Tensor::scalar(total * inv), {il},
                  [il, n, v, inv, targets, mask, probs = std::move(probs)](Graph& g, std::size_t self) {
                    const double go = g.upstream(self)[0] * inv;
                    Tensor& gl = g.grad_buffer(il);
                    for (std::size_t i = 0; i < n; ++i) {
                      if (!mask[i]) continue;
                      for (std::size_t j = 0; j < v; ++j) gl.at(i, j) += go * probs.at(i, j);
                      gl.at(i, static_cast<std::size_t>(targets[i])) -= go;
                    }
                  });
}

Var cross_entropy(Var logits, const std::vector<int>& targets) {
  return cross_entropy(logits, targets, std::vector<bool>(targets.size(), true));
}

}  // namespace damo
