#include "simtrans/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <memory>
#include <string>

#include "simtrans/error.hpp"
#include "simtrans/kernels.hpp"

namespace simtrans::ad {

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::push(const Tensor* value, bool requires_grad, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.value = value;
  node.requires_grad = requires_grad;
  node.inputs = std::move(inputs);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  owned_.push_back(std::move(value));
  return push(&owned_.back(), false, {}, {});
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  owned_.push_back(std::move(value));
  return push(&owned_.back(), requires_grad, {}, {});
}

Var Graph::parameter(const Tensor& value, bool requires_grad) { return push(&value, requires_grad, {}, {}); }

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  bool needs = false;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw ContractError("graph node input does not precede its consumer");
    needs = needs || nodes_[in].requires_grad;
  }
  owned_.push_back(std::move(value));
  if (!needs) backward = {};
  return push(&owned_.back(), needs, std::move(inputs), std::move(backward));
}

const Tensor* Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? &n.grad : nullptr;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(*n.value);
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::accumulate(std::size_t id, const Tensor& delta) {
  if (!nodes_[id].requires_grad) return;
  Tensor& g = grad_buffer(id);
  if (g.size() != delta.size()) {
    throw DimensionError("gradient of shape " + to_string(delta.shape()) + " does not match node shape " +
                         to_string(g.shape()));
  }
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + to_string(value(loss).shape()));
  }
  backward(loss, Tensor(value(loss).shape(), 1.0));
}

void Graph::backward(Var output, const Tensor& seed) {
  if (output.graph != this) throw ContractError("backward: variable belongs to another graph");
  if (seed.size() != value(output).size()) {
    throw DimensionError("backward seed " + to_string(seed.shape()) + " does not match output " +
                         to_string(value(output).shape()));
  }
  if (!nodes_[output.id].requires_grad) return;
  accumulate(output.id, seed);
  // Nodes after `output` cannot contribute; every earlier node is visited once.
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, id);
  }
}

Var ParameterBinder::operator()(const Tensor& param) {
  if (auto it = index_.find(&param); it != index_.end()) return it->second;
  Var v = graph_.parameter(param, requires_grad_);
  index_.emplace(&param, v);
  order_.emplace_back(&param, v);
  return v;
}

// ---------------------------------------------------------------------------

namespace {

using kernels::MatDims;

Graph& same_graph(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw ContractError("operands belong to different graphs");
  return *a.graph;
}

MatDims dims(const Tensor& t) { return {t.rows(), t.cols()}; }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const MatDims ad = dims(av), bd = dims(bv);
  if (ad.cols != bd.rows) {
    throw DimensionError("matmul: inner extents differ, " + to_string(av.shape()) + " x " + to_string(bv.shape()));
  }
  Tensor out({ad.rows, bd.cols});
  kernels::matmul(av.values(), ad, bv.values(), bd, out.values());
  return g.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, ad, bd](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad(self);
    const MatDims gd{ad.rows, bd.cols};
    if (gr.requires_grad(ai)) {
      kernels::matmul_nt_acc(go.values(), gd, gr.value(bi).values(), bd, gr.grad_buffer(ai).values());
    }
    if (gr.requires_grad(bi)) {
      kernels::matmul_tn_acc(gr.value(ai).values(), ad, go.values(), gd, gr.grad_buffer(bi).values());
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return g.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Graph& gr, std::size_t self) {
    gr.accumulate(ai, gr.grad(self));
    gr.accumulate(bi, gr.grad(self));
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return g.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Graph& gr, std::size_t self) {
    gr.accumulate(ai, gr.grad(self));
    if (gr.requires_grad(bi)) {
      Tensor& gb = gr.grad_buffer(bi);
      const Tensor& go = gr.grad(self);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    }
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return g.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad(self);
    if (gr.requires_grad(ai)) {
      Tensor& ga = gr.grad_buffer(ai);
      const Tensor& bv = gr.value(bi);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (gr.requires_grad(bi)) {
      Tensor& gb = gr.grad_buffer(bi);
      const Tensor& av = gr.value(ai);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Var mul_scalar(Var a, double s) {
  Tensor out = map(a.value(), [s](double x) { return x * s; });
  return a.graph->record(std::move(out), {a.id}, [ai = a.id, s](Graph& gr, std::size_t self) {
    Tensor& ga = gr.grad_buffer(ai);
    const Tensor& go = gr.grad(self);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * s;
  });
}

Var add_row(Var x, Var bias) {
  Graph& g = same_graph(x, bias);
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (bias.value().size() != c) {
    throw DimensionError("add_row: bias " + to_string(bias.value().shape()) + " does not fit rows of " +
                         to_string(xv.shape()));
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias.value()[j];
  }
  return g.record(std::move(out), {x.id, bias.id}, [xi = x.id, bi = bias.id, r, c](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad(self);
    gr.accumulate(xi, go);
    if (gr.requires_grad(bi)) {
      Tensor& gb = gr.grad_buffer(bi);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gb[j] += go[i * c + j];
      }
    }
  });
}

Var gelu(Var x) {
  Tensor out = Tensor::zeros_like(x.value());
  kernels::gelu(x.value().values(), out.values());
  return x.graph->record(std::move(out), {x.id}, [xi = x.id](Graph& gr, std::size_t self) {
    Tensor& gx = gr.grad_buffer(xi);
    const Tensor& xv = gr.value(xi);
    const Tensor& go = gr.grad(self);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * kernels::gelu_derivative(xv[i]);
  });
}

Var relu(Var x) {
  Tensor out = map(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return x.graph->record(std::move(out), {x.id}, [xi = x.id](Graph& gr, std::size_t self) {
    Tensor& gx = gr.grad_buffer(xi);
    const Tensor& xv = gr.value(xi);
    const Tensor& go = gr.grad(self);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += go[i];
    }
  });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  for (double v : xv.values()) {
    if (std::isnan(v)) throw NumericError("softmax_rows: NaN input");
  }
  const MatDims d = dims(xv);
  Tensor out = Tensor::zeros_like(xv);
  kernels::softmax_rows(xv.values(), d, out.values());
  return x.graph->record(std::move(out), {x.id}, [xi = x.id, d](Graph& gr, std::size_t self) {
    const Tensor& y = gr.value(self);
    const Tensor& go = gr.grad(self);
    Tensor& gx = gr.grad_buffer(xi);
    for (std::size_t r = 0; r < d.rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d.cols; ++c) dot += go[r * d.cols + c] * y[r * d.cols + c];
      for (std::size_t c = 0; c < d.cols; ++c) {
        gx[r * d.cols + c] += y[r * d.cols + c] * (go[r * d.cols + c] - dot);
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = same_graph(x, gamma);
  same_graph(x, beta);
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  const std::size_t width = xv.shape().back();
  const MatDims d{xv.size() / width, width};
  if (gamma.value().size() != width || beta.value().size() != width) {
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(width) + " entries");
  }
  auto stats = std::make_shared<std::vector<double>>(2 * d.rows);
  std::span<double> mean(stats->data(), d.rows), rstd(stats->data() + d.rows, d.rows);
  Tensor out = Tensor::zeros_like(xv);
  kernels::layer_norm(xv.values(), d, gamma.value().values(), beta.value().values(), eps, out.values(), mean, rstd);
  return g.record(
      std::move(out), {x.id, gamma.id, beta.id},
      [xi = x.id, gi = gamma.id, bi = beta.id, d, stats](Graph& gr, std::size_t self) {
        const Tensor& go = gr.grad(self);
        const Tensor& xv = gr.value(xi);
        const Tensor& gv = gr.value(gi);
        const double* mean = stats->data();
        const double* rstd = stats->data() + d.rows;
        const bool need_x = gr.requires_grad(xi);
        const bool need_g = gr.requires_grad(gi);
        const bool need_b = gr.requires_grad(bi);
        std::vector<double> xhat(d.cols), dxhat(d.cols);
        for (std::size_t r = 0; r < d.rows; ++r) {
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t c = 0; c < d.cols; ++c) {
            const std::size_t k = r * d.cols + c;
            xhat[c] = (xv[k] - mean[r]) * rstd[r];
            dxhat[c] = go[k] * gv[c];
            sum_dxhat += dxhat[c];
            sum_dxhat_xhat += dxhat[c] * xhat[c];
          }
          if (need_g) {
            Tensor& gg = gr.grad_buffer(gi);
            for (std::size_t c = 0; c < d.cols; ++c) gg[c] += go[r * d.cols + c] * xhat[c];
          }
          if (need_b) {
            Tensor& gb = gr.grad_buffer(bi);
            for (std::size_t c = 0; c < d.cols; ++c) gb[c] += go[r * d.cols + c];
          }
          if (need_x) {
            Tensor& gx = gr.grad_buffer(xi);
            const double n = static_cast<double>(d.cols);
            for (std::size_t c = 0; c < d.cols; ++c) {
              gx[r * d.cols + c] += rstd[r] * (dxhat[c] - sum_dxhat / n - xhat[c] * sum_dxhat_xhat / n);
            }
          }
        }
      });
}

Var transpose(Var x) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  }
  return x.graph->record(std::move(out), {x.id}, [xi = x.id, r, c](Graph& gr, std::size_t self) {
    Tensor& gx = gr.grad_buffer(xi);
    const Tensor& go = gr.grad(self);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += go[j * r + i];
    }
  });
}

Var concat_last_axis(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_last_axis: no operands");
  Graph& g = *parts.front().graph;
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> ids, widths;
  std::size_t total = 0;
  for (Var p : parts) {
    same_graph(parts.front(), p);
    if (p.value().rows() != rows) {
      throw DimensionError("concat_last_axis: row counts differ, " + to_string(parts.front().shape()) + " vs " +
                           to_string(p.shape()));
    }
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out({rows, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  return g.record(std::move(out), ids, [ids, widths, rows, total](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.requires_grad(ids[k])) {
        Tensor& gp = gr.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += go[r * total + offset + c];
        }
      }
      offset += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  Graph& g = *parts.front().graph;
  const std::size_t cols = parts.front().value().cols();
  std::vector<std::size_t> ids, sizes;
  std::vector<double> data;
  std::size_t rows = 0;
  for (Var p : parts) {
    same_graph(parts.front(), p);
    if (p.value().cols() != cols) {
      throw DimensionError("concat_rows: column counts differ, " + to_string(parts.front().shape()) + " vs " +
                           to_string(p.shape()));
    }
    ids.push_back(p.id);
    sizes.push_back(p.value().size());
    rows += p.value().rows();
    data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  }
  return g.record(Tensor({rows, cols}, std::move(data)), ids, [ids, sizes](Graph& gr, std::size_t self) {
    const Tensor& go = gr.grad(self);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.requires_grad(ids[k])) {
        Tensor& gp = gr.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += go[offset + i];
      }
      offset += sizes[k];
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  const std::size_t cols = xv.cols();
  if (begin >= end || end > xv.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + to_string(xv.shape()));
  }
  std::vector<double> data(xv.data() + begin * cols, xv.data() + end * cols);
  return x.graph->record(Tensor({end - begin, cols}, std::move(data)), {x.id},
                         [xi = x.id, offset = begin * cols](Graph& gr, std::size_t self) {
                           Tensor& gx = gr.grad_buffer(xi);
                           const Tensor& go = gr.grad(self);
                           for (std::size_t i = 0; i < go.size(); ++i) gx[offset + i] += go[i];
                         });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (begin >= end || end > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + to_string(xv.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * cols + begin, w, out.data() + r * w);
  return x.graph->record(std::move(out), {x.id}, [xi = x.id, rows, cols, begin, w](Graph& gr, std::size_t self) {
    Tensor& gx = gr.grad_buffer(xi);
    const Tensor& go = gr.grad(self);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += go[r * w + c];
    }
  });
}

Var sum_all(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.graph->record(Tensor({1}, s), {x.id}, [xi = x.id](Graph& gr, std::size_t self) {
    Tensor& gx = gr.grad_buffer(xi);
    const double go = gr.grad(self)[0];
    for (double& v : gx.values()) v += go;
  });
}

Var mean_all(Var x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.graph->record(Tensor({1}, s / n), {x.id}, [xi = x.id, n](Graph& gr, std::size_t self) {
    Tensor& gx = gr.grad_buffer(xi);
    const double go = gr.grad(self)[0] / n;
    for (double& v : gx.values()) v += go;
  });
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DimensionError("cosine_similarity: lengths " + std::to_string(u.size()) + " and " +
                         std::to_string(v.size()));
  }
  double dot = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) {
    std::cerr << "warning: cosine_similarity of a zero vector, returning 0\n";
    return 0.0;
  }
  return dot / (std::sqrt(uu) * std::sqrt(vv));
}

Var cosine_similarity(Var u, Var v) {
  Graph& g = same_graph(u, v);
  const double s = cosine_similarity(u.value().values(), v.value().values());
  return g.record(Tensor({1}, s), {u.id, v.id}, [ui = u.id, vi = v.id, s](Graph& gr, std::size_t self) {
    const Tensor& uv = gr.value(ui);
    const Tensor& vv = gr.value(vi);
    double nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < uv.size(); ++i) {
      nu += uv[i] * uv[i];
      nv += vv[i] * vv[i];
    }
    if (nu == 0.0 || nv == 0.0) return;  // constant 0 by convention
    const double go = gr.grad(self)[0];
    const double inv = 1.0 / (std::sqrt(nu) * std::sqrt(nv));
    if (gr.requires_grad(ui)) {
      Tensor& gu = gr.grad_buffer(ui);
      for (std::size_t i = 0; i < gu.size(); ++i) gu[i] += go * (vv[i] * inv - s * uv[i] / nu);
    }
    if (gr.requires_grad(vi)) {
      Tensor& gv = gr.grad_buffer(vi);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += go * (uv[i] * inv - s * vv[i] / nv);
    }
  });
}

}  // namespace simtrans::ad
