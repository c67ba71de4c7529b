/*
 * SPDX-FileCopyrightText: Copyright (c) 2026 The octran-desk Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "octran/tensor.hpp"

namespace octran {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Ops with an analytic backward. `Tape::backward` refuses to propagate
/// through a node whose op is not listed here.
inline const std::set<std::string, std::less<>>& op_registry() {
  static const std::set<std::string, std::less<>> ops = {
      "add",       "mul",          "scale",         "relu",        "matmul",           "add_row_bias",
      "add_channel_bias", "softmax", "conv2d",      "conv_transpose3d", "layer_norm", "attention",
      "reshape",   "gather",       "concat",        "mean",        "sum",              "bce_with_logits",
      "cross_entropy"};
  return ops;
}

/// Reverse-mode trace. Nodes are appended in evaluation order, so a reverse
/// sweep over the node list is a valid topological order.
class Tape {
 public:
  /// Returns one gradient per parent (nullopt = no contribution).
  using BackwardFn = std::function<std::vector<std::optional<Tensor>>(const Tensor& upstream)>;

  Var constant(Tensor value) { return push("constant", std::move(value), {}, nullptr, false); }
  Var leaf(Tensor value) { return push("leaf", std::move(value), {}, nullptr, true); }

  Var record(std::string_view op, Tensor value, std::vector<Var> parents, BackwardFn backward) {
    bool needs = false;
    std::vector<std::size_t> ids;
    for (const auto& p : parents) {
      own(p);
      ids.push_back(p.id);
      needs = needs || nodes_[p.id].requires_grad;
    }
    return push(std::string(op), std::move(value), std::move(ids), std::move(backward), needs);
  }

  const Tensor& value(Var v) const {
    own(v);
    return nodes_[v.id].value;
  }

  bool requires_grad(Var v) const {
    own(v);
    return nodes_[v.id].requires_grad;
  }

  /// Gradient accumulated by the last `backward`; zeros when nothing flowed.
  Tensor grad(Var v) const {
    own(v);
    const auto& n = nodes_[v.id];
    return n.grad ? *n.grad : Tensor(n.value.shape());
  }

  /// Seeds d(out)/d(out) = 1 on a scalar and sweeps the trace in reverse.
  void backward(Var out) {
    own(out);
    if (nodes_[out.id].value.numel() != 1) {
      fail(ErrorCode::shape_mismatch, "backward needs a scalar, got " + shape_str(nodes_[out.id].value.shape()));
    }
    for (auto& n : nodes_) n.grad.reset();
    nodes_[out.id].grad = Tensor(nodes_[out.id].value.shape(), 1.0);
    for (std::size_t i = out.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.grad || !n.requires_grad || n.parents.empty()) continue;
      if (!op_registry().count(n.op) || !n.backward) {
        fail(ErrorCode::unrecorded_op, "no backward registered for op '" + n.op + "'");
      }
      auto grads = n.backward(*n.grad);
      for (std::size_t p = 0; p < n.parents.size(); ++p) {
        if (!grads[p]) continue;
        auto& parent = nodes_[n.parents[p]];
        if (!parent.requires_grad) continue;
        if (grads[p]->shape() != parent.value.shape()) {
          fail(ErrorCode::shape_mismatch, "backward of '" + n.op + "' produced " + shape_str(grads[p]->shape()) +
                                              " for " + shape_str(parent.value.shape()));
        }
        if (parent.grad) {
          auto& g = *parent.grad;
          for (std::size_t k = 0; k < g.numel(); ++k) g[k] += (*grads[p])[k];
        } else {
          parent.grad = std::move(*grads[p]);
        }
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<Tensor> grad;
  };

  Var push(std::string op, Tensor value, std::vector<std::size_t> parents, BackwardFn backward, bool needs_grad) {
    nodes_.push_back(Node{std::move(op), std::move(value), std::move(parents), std::move(backward), needs_grad, {}});
    return Var{this, nodes_.size() - 1};
  }

  void own(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) fail(ErrorCode::unrecorded_op, "variable is not on this tape");
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (!tape) fail(ErrorCode::unrecorded_op, "variable is not on any tape");
  return tape->value(*this);
}

namespace ad {

inline Tape& tape_of(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const auto& v : vars) {
    if (!v.tape) fail(ErrorCode::unrecorded_op, "variable is not on any tape");
    if (t && t != v.tape) fail(ErrorCode::unrecorded_op, "variables from different tapes");
    t = v.tape;
  }
  return *t;
}

using Grads = std::vector<std::optional<Tensor>>;

inline Var add(Var a, Var b) {
  auto& t = tape_of({a, b});
  return t.record("add", octran::add(a.value(), b.value()), {a, b},
                  [](const Tensor& g) { return Grads{g, g}; });
}

inline Var mul(Var a, Var b) {
  auto& t = tape_of({a, b});
  return t.record("mul", octran::mul(a.value(), b.value()), {a, b}, [a, b](const Tensor& g) {
    return Grads{octran::mul(g, b.value()), octran::mul(g, a.value())};
  });
}

inline Var scale(Var a, double s) {
  auto& t = tape_of({a});
  return t.record("scale", octran::scale(a.value(), s), {a},
                  [s](const Tensor& g) { return Grads{octran::scale(g, s)}; });
}

inline Var relu(Var a) {
  auto& t = tape_of({a});
  return t.record("relu", octran::relu(a.value()), {a}, [a](const Tensor& g) {
    Tensor out = g;
    const auto& x = a.value();
    for (std::size_t i = 0; i < out.numel(); ++i)
      if (!(x[i] > 0)) out[i] = 0;
    return Grads{out};
  });
}

inline Var matmul(Var a, Var b) {
  auto& t = tape_of({a, b});
  return t.record("matmul", octran::matmul(a.value(), b.value()), {a, b}, [a, b](const Tensor& g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    const auto p = av.dim(0), q = av.dim(1), r = bv.dim(1);
    Tensor ga({p, q}), gb({q, r});
    detail::gemm_nt_acc(g.data().data(), bv.data().data(), ga.data().data(), p, r, q);
    detail::gemm_tn_acc(av.data().data(), g.data().data(), gb.data().data(), q, p, r);
    return Grads{ga, gb};
  });
}

inline Var add_row_bias(Var x, Var bias) {
  auto& t = tape_of({x, bias});
  return t.record("add_row_bias", octran::add_row_bias(x.value(), bias.value()), {x, bias}, [x](const Tensor& g) {
    const auto m = x.value().dim(0), n = x.value().dim(1);
    Tensor gb({n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    return Grads{g, gb};
  });
}

inline Var add_channel_bias(Var x, Var bias) {
  auto& t = tape_of({x, bias});
  return t.record("add_channel_bias", octran::add_channel_bias(x.value(), bias.value()), {x, bias},
                  [x](const Tensor& g) {
                    const auto c = x.value().dim(0);
                    const auto inner = x.value().numel() / c;
                    Tensor gb({c});
                    for (std::size_t k = 0; k < c; ++k)
                      for (std::size_t i = 0; i < inner; ++i) gb[k] += g[k * inner + i];
                    return Grads{g, gb};
                  });
}

inline Var softmax(Var a, std::size_t axis) {
  auto& t = tape_of({a});
  Tensor y = octran::softmax(a.value(), axis);
  return t.record("softmax", y, {a}, [y, axis](const Tensor& g) {
    const auto& shape = y.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    const auto n = shape[axis];
    Tensor gx(shape);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const auto base = o * n * inner + in;
        double dot = 0;
        for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) gx[base + k * inner] = y[base + k * inner] * (g[base + k * inner] - dot);
      }
    return Grads{gx};
  });
}

inline Var conv2d(Var x, Var kernel, std::size_t stride, std::size_t pad) {
  auto& t = tape_of({x, kernel});
  return t.record("conv2d", octran::conv2d(x.value(), kernel.value(), stride, pad), {x, kernel},
                  [x, kernel, stride, pad](const Tensor& g) {
                    const auto& xv = x.value();
                    const auto& kv = kernel.value();
                    const auto C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
                    const auto O = kv.dim(0), KH = kv.dim(2), KW = kv.dim(3);
                    const auto HO = g.dim(1), WO = g.dim(2);
                    Tensor gx(xv.shape()), gk(kv.shape());
                    for (std::size_t o = 0; o < O; ++o)
                      for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ky = 0; ky < KH; ++ky)
                          for (std::size_t kx = 0; kx < KW; ++kx) {
                            const auto widx = ((o * C + c) * KH + ky) * KW + kx;
                            const double w = kv[widx];
                            double gw = 0;
                            for (std::size_t oy = 0; oy < HO; ++oy) {
                              const auto iy = std::ptrdiff_t(oy * stride + ky) - std::ptrdiff_t(pad);
                              if (iy < 0 || iy >= std::ptrdiff_t(H)) continue;
                              for (std::size_t ox = 0; ox < WO; ++ox) {
                                const auto ix = std::ptrdiff_t(ox * stride + kx) - std::ptrdiff_t(pad);
                                if (ix < 0 || ix >= std::ptrdiff_t(W)) continue;
                                const auto xi = (c * H + std::size_t(iy)) * W + std::size_t(ix);
                                const double go = g[(o * HO + oy) * WO + ox];
                                gx[xi] += w * go;
                                gw += xv[xi] * go;
                              }
                            }
                            gk[widx] += gw;
                          }
                    return Grads{gx, gk};
                  });
}

inline Var conv_transpose3d(Var x, Var kernel, Index3 stride, Index3 pad) {
  auto& t = tape_of({x, kernel});
  return t.record(
      "conv_transpose3d", octran::conv_transpose3d(x.value(), kernel.value(), stride, pad), {x, kernel},
      [x, kernel, stride, pad](const Tensor& g) {
        const auto& xv = x.value();
        const auto& kv = kernel.value();
        const auto C = xv.dim(0), O = kv.dim(1);
        const Index3 in{xv.dim(1), xv.dim(2), xv.dim(3)};
        const Index3 k{kv.dim(2), kv.dim(3), kv.dim(4)};
        const Index3 od{g.dim(1), g.dim(2), g.dim(3)};
        const auto in_vol = in[0] * in[1] * in[2];
        const auto out_vol = od[0] * od[1] * od[2];
        const auto k_vol = k[0] * k[1] * k[2];
        Tensor gx(xv.shape()), gk(kv.shape());
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t o = 0; o < O; ++o)
            for (std::size_t a = 0; a < k[0]; ++a)
              for (std::size_t b = 0; b < k[1]; ++b)
                for (std::size_t e = 0; e < k[2]; ++e) {
                  const auto widx = (c * O + o) * k_vol + (a * k[1] + b) * k[2] + e;
                  const double w = kv[widx];
                  double gw = 0;
                  for (std::size_t i0 = 0; i0 < in[0]; ++i0) {
                    const auto o0 = std::ptrdiff_t(i0 * stride[0] + a) - std::ptrdiff_t(pad[0]);
                    if (o0 < 0 || o0 >= std::ptrdiff_t(od[0])) continue;
                    for (std::size_t i1 = 0; i1 < in[1]; ++i1) {
                      const auto o1 = std::ptrdiff_t(i1 * stride[1] + b) - std::ptrdiff_t(pad[1]);
                      if (o1 < 0 || o1 >= std::ptrdiff_t(od[1])) continue;
                      for (std::size_t i2 = 0; i2 < in[2]; ++i2) {
                        const auto o2 = std::ptrdiff_t(i2 * stride[2] + e) - std::ptrdiff_t(pad[2]);
                        if (o2 < 0 || o2 >= std::ptrdiff_t(od[2])) continue;
                        const auto xi = c * in_vol + (i0 * in[1] + i1) * in[2] + i2;
                        const double go =
                            g[o * out_vol + (std::size_t(o0) * od[1] + std::size_t(o1)) * od[2] + std::size_t(o2)];
                        gx[xi] += w * go;
                        gw += xv[xi] * go;
                      }
                    }
                  }
                  gk[widx] += gw;
                }
        return Grads{gx, gk};
      });
}

inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  auto& t = tape_of({x, gamma, beta});
  std::vector<double> inv_std;
  Tensor y = octran::layer_norm(x.value(), gamma.value(), beta.value(), eps, &inv_std);
  return t.record("layer_norm", std::move(y), {x, gamma, beta}, [x, gamma, inv_std](const Tensor& g) {
    const auto& xv = x.value();
    const auto& gm = gamma.value();
    const auto m = xv.dim(0), n = xv.dim(1);
    Tensor gx(xv.shape()), gg(gm.shape()), gb(gm.shape());
    std::vector<double> xhat(n), dxhat(n);
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = xv.data().data() + i * n;
      double mu = 0;
      for (std::size_t j = 0; j < n; ++j) mu += row[j];
      mu /= double(n);
      const double r = inv_std[i];
      double s1 = 0, s2 = 0;
      for (std::size_t j = 0; j < n; ++j) {
        xhat[j] = (row[j] - mu) * r;
        const double gy = g[i * n + j];
        gg[j] += gy * xhat[j];
        gb[j] += gy;
        dxhat[j] = gy * gm[j];
        s1 += dxhat[j];
        s2 += dxhat[j] * xhat[j];
      }
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] = r / double(n) * (double(n) * dxhat[j] - s1 - xhat[j] * s2);
    }
    return Grads{gx, gg, gb};
  });
}

/// Multi-head scaled dot-product attention as one traced composite.
inline Var attention(Var q, Var k, Var v, std::size_t heads, std::string_view label = "attention") {
  auto& t = tape_of({q, k, v});
  auto r = scaled_dot_product_attention(q.value(), k.value(), v.value(), heads, label);
  return t.record("attention", std::move(r.output), {q, k, v},
                  [q, k, v, heads, w = std::move(r.weights)](const Tensor& g) {
                    const auto& qv = q.value();
                    const auto& kv = k.value();
                    const auto& vv = v.value();
                    const auto mq = qv.dim(0), mk = kv.dim(0);
                    const auto qw = qv.dim(1), vw = vv.dim(1);
                    const auto dk = qw / heads, dv = vw / heads;
                    const double inv_sqrt = 1.0 / std::sqrt(double(dk));
                    Tensor gq(qv.shape()), gk(kv.shape()), gvv(vv.shape());
                    std::vector<double> dw(mk);
                    for (std::size_t h = 0; h < heads; ++h)
                      for (std::size_t i = 0; i < mq; ++i) {
                        const double* wrow = w.data().data() + (h * mq + i) * mk;
                        const double* grow = g.data().data() + i * vw + h * dv;
                        double dot = 0;
                        for (std::size_t j = 0; j < mk; ++j) {
                          const double* vrow = vv.data().data() + j * vw + h * dv;
                          double s = 0;
                          for (std::size_t c = 0; c < dv; ++c) {
                            s += grow[c] * vrow[c];
                            gvv[j * vw + h * dv + c] += wrow[j] * grow[c];
                          }
                          dw[j] = s;
                          dot += s * wrow[j];
                        }
                        for (std::size_t j = 0; j < mk; ++j) {
                          const double ds = wrow[j] * (dw[j] - dot) * inv_sqrt;
                          for (std::size_t c = 0; c < dk; ++c) {
                            gq[i * qw + h * dk + c] += ds * kv[j * qw + h * dk + c];
                            gk[j * qw + h * dk + c] += ds * qv[i * qw + h * dk + c];
                          }
                        }
                      }
                    return Grads{gq, gk, gvv};
                  });
}

inline Var reshape(Var a, Shape shape) {
  auto& t = tape_of({a});
  auto in_shape = a.value().shape();
  return t.record("reshape", a.value().reshaped(std::move(shape)), {a},
                  [in_shape](const Tensor& g) { return Grads{g.reshaped(in_shape)}; });
}

/// out.flat[i] = a.flat[index[i]]; the backward scatter-adds.
inline Var gather(Var a, std::vector<std::size_t> index, Shape shape) {
  auto& t = tape_of({a});
  Tensor y = octran::gather(a.value(), index, std::move(shape));
  auto in_shape = a.value().shape();
  return t.record("gather", std::move(y), {a}, [in_shape, index = std::move(index)](const Tensor& g) {
    Tensor gx(in_shape);
    for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += g[i];
    return Grads{gx};
  });
}

inline Var permute(Var a, const std::vector<std::size_t>& perm) {
  Shape os;
  auto idx = permute_indices(a.value().shape(), perm, &os);
  return gather(a, std::move(idx), std::move(os));
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::shape_mismatch, "concat of zero variables");
  Tape& t = *parts.front().tape;
  std::vector<Tensor> values;
  for (const auto& p : parts) {
    if (p.tape != &t) fail(ErrorCode::unrecorded_op, "variables from different tapes");
    values.push_back(p.value());
  }
  Tensor y = octran::concat(values, axis);
  std::vector<Shape> shapes;
  for (const auto& v : values) shapes.push_back(v.shape());
  return t.record("concat", std::move(y), parts, [shapes, axis](const Tensor& g) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t a = 0; a < axis; ++a) outer *= g.dim(a);
    for (std::size_t a = axis + 1; a < g.rank(); ++a) inner *= g.dim(a);
    const auto total = g.dim(axis);
    Grads out;
    std::size_t col = 0;
    for (const auto& s : shapes) {
      Tensor gp(s);
      const auto w = s[axis] * inner;
      for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(g.data().data() + o * total * inner + col, w, gp.data().data() + o * w);
      col += w;
      out.push_back(std::move(gp));
    }
    return out;
  });
}

inline Var sum(Var a) {
  auto& t = tape_of({a});
  auto shape = a.value().shape();
  return t.record("sum", Tensor::scalar(octran::sum(a.value())), {a},
                  [shape](const Tensor& g) { return Grads{Tensor(shape, g.item())}; });
}

inline Var mean(Var a) {
  auto& t = tape_of({a});
  auto shape = a.value().shape();
  const double n = double(a.value().numel());
  return t.record("mean", octran::mean(a.value()), {a},
                  [shape, n](const Tensor& g) { return Grads{Tensor(shape, g.item() / n)}; });
}

/// Weighted mean of per-element binary cross-entropy on sigmoid(logits):
/// sum_i w_i * bce(x_i, y_i) / sum_i w_i. Targets and weights are constants.
inline Var bce_with_logits(Var logits, const Tensor& targets, const Tensor& weights) {
  auto& t = tape_of({logits});
  const auto& x = logits.value();
  detail::require(targets.shape() == x.shape() && weights.shape() == x.shape(), "bce_with_logits", x.shape(),
                  targets.shape());
  double wsum = 0, acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (weights[i] == 0) continue;
    const double xi = x[i];
    acc += weights[i] * (std::max(xi, 0.0) - xi * targets[i] + std::log1p(std::exp(-std::abs(xi))));
    wsum += weights[i];
  }
  if (!(wsum > 0)) fail(ErrorCode::empty_loss, "every element is masked out of the loss");
  return t.record("bce_with_logits", Tensor::scalar(acc / wsum), {logits},
                  [logits, targets, weights, wsum](const Tensor& g) {
                    const auto& x = logits.value();
                    Tensor gx(x.shape());
                    for (std::size_t i = 0; i < x.numel(); ++i) {
                      if (weights[i] == 0) continue;
                      const double s = 1.0 / (1.0 + std::exp(-x[i]));
                      gx[i] = g.item() * weights[i] * (s - targets[i]) / wsum;
                    }
                    return Grads{gx};
                  });
}

/// Mean over rows of -log softmax(logits)[row, label].
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  auto& t = tape_of({logits});
  const auto& x = logits.value();
  detail::require(x.rank() == 2 && labels.size() == x.dim(0), "cross_entropy", x.shape(), {labels.size()});
  const auto m = x.dim(0), n = x.dim(1);
  Tensor p = octran::softmax(x, 1);
  double loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= n) fail(ErrorCode::invalid_argument, "label out of range");
    loss -= std::log(p[i * n + labels[i]]);
  }
  return t.record("cross_entropy", Tensor::scalar(loss / double(m)), {logits},
                  [p, labels, m, n](const Tensor& g) {
                    Tensor gx = p;
                    for (std::size_t i = 0; i < m; ++i) gx[i * n + labels[i]] -= 1.0;
                    return Grads{octran::scale(gx, g.item() / double(m))};
                  });
}

}  // namespace ad

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
inline Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                     double h = 1e-5) {
  if (!(h > 0)) fail(ErrorCode::invalid_argument, "step must be positive");
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2 * h);
  }
  return grad;
}

}  // namespace octran
