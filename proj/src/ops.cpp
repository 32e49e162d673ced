#include "bad/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

namespace bad::ops {

namespace {

using Mat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const Mat>;
using MapM = Eigen::Map<Mat>;

MapC view(const Tensor& t) { return MapC(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }
MapM view(Tensor& t) { return MapM(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

std::string dims(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

Tensor like_matrix(std::size_t r, std::size_t c) { return Tensor::matrix(r, c); }

void accumulate(Graph& g, Var target, const Tensor& delta) {
  if (!g.needs_grad(target)) return;
  Tensor& buf = g.grad_buffer(target.id());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += delta[i];
}

template <typename F>
Var unary_elementwise(Var x, F f, const char* name, real (*df)(real)) {
  Graph& g = x.graph();
  Tensor out = x.value();
  for (auto& v : out.values()) v = f(v);
  return g.make(std::move(out), {x},
                [x, df](Graph& gr, std::size_t self) {
                  const Tensor& go = gr.grad_of(self);
                  const Tensor& xv = gr.value(x);
                  Tensor& gx = gr.grad_buffer(x.id());
                  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * df(xv[i]);
                },
                name);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.rows(), "matmul: inner dimensions differ (" + dims(av) + " * " + dims(bv) + ")");
  Tensor out = like_matrix(av.rows(), bv.cols());
  view(out).noalias() = view(av) * view(bv);
  return a.graph().make(std::move(out), {a, b},
                        [a, b](Graph& g, std::size_t self) {
                          auto go = view(g.grad_of(self));
                          if (g.needs_grad(a)) view(g.grad_buffer(a.id())).noalias() += go * view(g.value(b)).transpose();
                          if (g.needs_grad(b)) view(g.grad_buffer(b.id())).noalias() += view(g.value(a)).transpose() * go;
                        },
                        "matmul");
}

Var add(Var a, Var b) {
  require(a.value().size() == b.value().size(), "add: size mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.graph().make(std::move(out), {a, b},
                        [a, b](Graph& g, std::size_t self) {
                          accumulate(g, a, g.grad_of(self));
                          accumulate(g, b, g.grad_of(self));
                        },
                        "add");
}

Var sub(Var a, Var b) {
  require(a.value().size() == b.value().size(), "sub: size mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.graph().make(std::move(out), {a, b},
                        [a, b](Graph& g, std::size_t self) {
                          const Tensor& go = g.grad_of(self);
                          accumulate(g, a, go);
                          if (g.needs_grad(b)) {
                            Tensor& gb = g.grad_buffer(b.id());
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
                          }
                        },
                        "sub");
}

Var mul(Var a, Var b) {
  require(a.value().size() == b.value().size(), "mul: size mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.graph().make(std::move(out), {a, b},
                        [a, b](Graph& g, std::size_t self) {
                          const Tensor& go = g.grad_of(self);
                          if (g.needs_grad(a)) {
                            Tensor& ga = g.grad_buffer(a.id());
                            const Tensor& bv = g.value(b);
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
                          }
                          if (g.needs_grad(b)) {
                            Tensor& gb = g.grad_buffer(b.id());
                            const Tensor& av = g.value(a);
                            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
                          }
                        },
                        "mul");
}

Var scale(Var a, real s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.graph().make(std::move(out), {a},
                        [a, s](Graph& g, std::size_t self) {
                          const Tensor& go = g.grad_of(self);
                          Tensor& ga = g.grad_buffer(a.id());
                          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * go[i];
                        },
                        "scale");
}

Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  require(bias.value().size() == xv.cols(), "add_bias: bias length " + std::to_string(bias.value().size()) +
                                                " != columns " + std::to_string(xv.cols()));
  Tensor out = xv;
  const std::size_t c = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) out(r, j) += bias.value()[j];
  }
  return x.graph().make(std::move(out), {x, bias},
                        [x, bias](Graph& g, std::size_t self) {
                          const Tensor& go = g.grad_of(self);
                          accumulate(g, x, go);
                          if (g.needs_grad(bias)) {
                            Tensor& gb = g.grad_buffer(bias.id());
                            const std::size_t cols = go.cols();
                            for (std::size_t r = 0; r < go.rows(); ++r) {
                              for (std::size_t j = 0; j < cols; ++j) gb[j] += go(r, j);
                            }
                          }
                        },
                        "add_bias");
}

Var linear(Var x, Var weight, Var bias) { return add_bias(matmul(x, weight), bias); }

Var relu(Var x) {
  return unary_elementwise(
      x, [](real v) { return v > 0 ? v : real(0); }, "relu", [](real v) { return v > 0 ? real(1) : real(0); });
}

Var gelu(Var x) {
  return unary_elementwise(
      x, [](real v) { return real(0.5) * v * (real(1) + std::erf(v / std::numbers::sqrt2_v<real>)); }, "gelu",
      [](real v) {
        const real cdf = real(0.5) * (real(1) + std::erf(v / std::numbers::sqrt2_v<real>));
        const real pdf = std::exp(real(-0.5) * v * v) / std::sqrt(real(2) * std::numbers::pi_v<real>);
        return cdf + v * pdf;
      });
}

Var layer_norm(Var x, Var gain, Var bias, real epsilon) {
  require(epsilon > 0, "layer_norm: epsilon must be positive");
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  const std::size_t rows = xv.rows();
  require(gain.value().size() == n && bias.value().size() == n, "layer_norm: gain/bias length mismatch");

  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<real>>(rows);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = xv.row(r);
    real mu = 0;
    for (real v : row) mu += v;
    mu /= static_cast<real>(n);
    real var = 0;
    for (real v : row) var += (v - mu) * (v - mu);
    var /= static_cast<real>(n);
    const real is = real(1) / std::sqrt(var + epsilon);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const real h = (row[j] - mu) * is;
      (*xhat)(r, j) = h;
      out(r, j) = gain.value()[j] * h + bias.value()[j];
    }
  }
  return x.graph().make(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, inv_std](Graph& g, std::size_t self) {
        const Tensor& go = g.grad_of(self);
        const std::size_t cols = go.cols();
        const Tensor& gv = g.value(gain);
        if (g.needs_grad(gain) || g.needs_grad(bias)) {
          Tensor& gg = g.grad_buffer(gain.id());
          Tensor& gb = g.grad_buffer(bias.id());
          for (std::size_t r = 0; r < go.rows(); ++r) {
            for (std::size_t j = 0; j < cols; ++j) {
              gg[j] += go(r, j) * (*xhat)(r, j);
              gb[j] += go(r, j);
            }
          }
        }
        if (g.needs_grad(x)) {
          Tensor& gx = g.grad_buffer(x.id());
          std::vector<real> dh(cols);
          for (std::size_t r = 0; r < go.rows(); ++r) {
            real mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < cols; ++j) {
              dh[j] = go(r, j) * gv[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * (*xhat)(r, j);
            }
            mean_dh /= static_cast<real>(cols);
            mean_dh_h /= static_cast<real>(cols);
            for (std::size_t j = 0; j < cols; ++j) {
              gx(r, j) += (*inv_std)[r] * (dh[j] - mean_dh - (*xhat)(r, j) * mean_dh_h);
            }
          }
        }
      },
      "layer_norm");
}

Var attention(Var queries, Var keys, Var values, std::span<const AttentionSegment> segments, std::size_t heads,
              real scale) {
  const Tensor& q = queries.value();
  const Tensor& k = keys.value();
  const Tensor& v = values.value();
  require(heads >= 1, "attention: heads must be >= 1");
  require(q.cols() == k.cols(), "attention: query/key width mismatch");
  require(k.rows() == v.rows(), "attention: key/value row mismatch");
  require(q.cols() % heads == 0 && v.cols() % heads == 0, "attention: width not divisible by heads");
  const std::size_t dk = q.cols() / heads;
  const std::size_t dv = v.cols() / heads;

  auto segs = std::make_shared<std::vector<AttentionSegment>>(segments.begin(), segments.end());
  // Softmax weights per (segment, head), laid out query-major.
  auto probs = std::make_shared<std::vector<real>>();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& s : *segs) {
    require(s.query_begin + s.query_count <= q.rows() && s.key_begin + s.key_count <= k.rows(),
            "attention: segment out of range");
    require(s.key_count >= 1, "attention: segment without keys");
    if (s.mask.queries() != 0) {
      require(s.mask.queries() == s.query_count && s.mask.keys() == s.key_count,
              "attention: mask is " + std::to_string(s.mask.queries()) + "x" + std::to_string(s.mask.keys()) +
                  ", segment is " + std::to_string(s.query_count) + "x" + std::to_string(s.key_count));
    }
    offsets.push_back(total);
    total += heads * s.query_count * s.key_count;
  }
  probs->assign(total, real(0));

  Tensor out = Tensor::matrix(q.rows(), v.cols());
  std::vector<real> scores;
  for (std::size_t si = 0; si < segs->size(); ++si) {
    const auto& s = (*segs)[si];
    const bool full = s.mask.queries() == 0;
    scores.resize(s.key_count);
    for (std::size_t h = 0; h < heads; ++h) {
      real* p_base = probs->data() + offsets[si] + h * s.query_count * s.key_count;
      for (std::size_t i = 0; i < s.query_count; ++i) {
        const real* qi = q.data() + (s.query_begin + i) * q.cols() + h * dk;
        real mx = -std::numeric_limits<real>::infinity();
        std::size_t allowed = 0;
        for (std::size_t j = 0; j < s.key_count; ++j) {
          if (!full && !s.mask(i, j)) continue;
          const real* kj = k.data() + (s.key_begin + j) * k.cols() + h * dk;
          real dot = 0;
          for (std::size_t c = 0; c < dk; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * scale;
          mx = std::max(mx, scores[j]);
          ++allowed;
        }
        if (allowed == 0) {
          throw std::invalid_argument("attention: query row " + std::to_string(i) + " has no allowed keys");
        }
        real denom = 0;
        real* pi = p_base + i * s.key_count;
        for (std::size_t j = 0; j < s.key_count; ++j) {
          if (!full && !s.mask(i, j)) continue;
          pi[j] = std::exp(scores[j] - mx);
          denom += pi[j];
        }
        real* oi = out.data() + (s.query_begin + i) * out.cols() + h * dv;
        for (std::size_t j = 0; j < s.key_count; ++j) {
          if (pi[j] == real(0)) continue;
          pi[j] /= denom;
          const real* vj = v.data() + (s.key_begin + j) * v.cols() + h * dv;
          for (std::size_t c = 0; c < dv; ++c) oi[c] += pi[j] * vj[c];
        }
      }
    }
  }

  auto offs = std::make_shared<std::vector<std::size_t>>(std::move(offsets));
  return queries.graph().make(
      std::move(out), {queries, keys, values},
      [queries, keys, values, segs, probs, offs, heads, scale, dk, dv](Graph& g, std::size_t self) {
        const Tensor& go = g.grad_of(self);
        const Tensor& q = g.value(queries);
        const Tensor& k = g.value(keys);
        const Tensor& v = g.value(values);
        const bool need_q = g.needs_grad(queries);
        const bool need_k = g.needs_grad(keys);
        const bool need_v = g.needs_grad(values);
        Tensor* gq = need_q ? &g.grad_buffer(queries.id()) : nullptr;
        Tensor* gk = need_k ? &g.grad_buffer(keys.id()) : nullptr;
        Tensor* gv = need_v ? &g.grad_buffer(values.id()) : nullptr;
        std::vector<real> dp;
        for (std::size_t si = 0; si < segs->size(); ++si) {
          const auto& s = (*segs)[si];
          dp.resize(s.key_count);
          for (std::size_t h = 0; h < heads; ++h) {
            const real* p_base = probs->data() + (*offs)[si] + h * s.query_count * s.key_count;
            for (std::size_t i = 0; i < s.query_count; ++i) {
              const real* pi = p_base + i * s.key_count;
              const real* goi = go.data() + (s.query_begin + i) * go.cols() + h * dv;
              real weighted = 0;
              for (std::size_t j = 0; j < s.key_count; ++j) {
                if (pi[j] == real(0)) {
                  dp[j] = 0;
                  continue;
                }
                const real* vj = v.data() + (s.key_begin + j) * v.cols() + h * dv;
                real d = 0;
                for (std::size_t c = 0; c < dv; ++c) d += goi[c] * vj[c];
                dp[j] = d;
                weighted += pi[j] * d;
                if (gv) {
                  real* gvj = gv->data() + (s.key_begin + j) * v.cols() + h * dv;
                  for (std::size_t c = 0; c < dv; ++c) gvj[c] += pi[j] * goi[c];
                }
              }
              const real* qi = q.data() + (s.query_begin + i) * q.cols() + h * dk;
              real* gqi = gq ? gq->data() + (s.query_begin + i) * q.cols() + h * dk : nullptr;
              for (std::size_t j = 0; j < s.key_count; ++j) {
                if (pi[j] == real(0)) continue;
                const real ds = pi[j] * (dp[j] - weighted) * scale;
                const real* kj = k.data() + (s.key_begin + j) * k.cols() + h * dk;
                if (gqi) {
                  for (std::size_t c = 0; c < dk; ++c) gqi[c] += ds * kj[c];
                }
                if (gk) {
                  real* gkj = gk->data() + (s.key_begin + j) * k.cols() + h * dk;
                  for (std::size_t c = 0; c < dk; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      },
      "attention");
}

Var masked_attention(Var queries, Var keys, Var values, const AttentionMask& mask, real scale) {
  require(mask.queries() == queries.rows() && mask.keys() == keys.rows(),
          "masked_attention: mask dimensions do not match query/key counts");
  AttentionSegment seg{0, queries.rows(), 0, keys.rows(), mask};
  return attention(queries, keys, values, std::span<const AttentionSegment>(&seg, 1), 1, scale);
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  require(!rows.empty(), "gather_rows: no rows requested");
  Tensor out = Tensor::matrix(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < xv.rows(), "gather_rows: row index " + std::to_string(rows[i]) + " out of range " +
                                     std::to_string(xv.rows()));
    std::copy_n(xv.data() + rows[i] * c, c, out.data() + i * c);
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  return x.graph().make(std::move(out), {x},
                        [x, idx](Graph& g, std::size_t self) {
                          const Tensor& go = g.grad_of(self);
                          Tensor& gx = g.grad_buffer(x.id());
                          const std::size_t cols = go.cols();
                          for (std::size_t i = 0; i < idx->size(); ++i) {
                            real* dst = gx.data() + (*idx)[i] * cols;
                            const real* src = go.data() + i * cols;
                            for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
                          }
                        },
                        "gather_rows");
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: nothing to concatenate");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const Var& p : parts) {
    require(p.cols() == c, "concat_rows: column mismatch");
    total += p.rows();
  }
  Tensor out = Tensor::matrix(total, c);
  std::size_t at = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), out.data() + at * c);
    at += p.rows();
  }
  auto pieces = std::make_shared<std::vector<Var>>(parts.begin(), parts.end());
  return parts.front().graph().make(std::move(out), parts,
                                    [pieces](Graph& g, std::size_t self) {
                                      const Tensor& go = g.grad_of(self);
                                      std::size_t row = 0;
                                      for (const Var& p : *pieces) {
                                        if (g.needs_grad(p)) {
                                          Tensor& gp = g.grad_buffer(p.id());
                                          const real* src = go.data() + row * go.cols();
                                          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
                                        }
                                        row += p.rows();
                                      }
                                    },
                                    "concat_rows");
}

Var mean_rows(Var x) {
  const Tensor& xv = x.value();
  Tensor out = Tensor::matrix(1, xv.cols());
  const real inv = real(1) / static_cast<real>(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t j = 0; j < xv.cols(); ++j) out[j] += xv(r, j);
  }
  for (auto& v : out.values()) v *= inv;
  return x.graph().make(std::move(out), {x},
                        [x, inv](Graph& g, std::size_t self) {
                          const Tensor& go = g.grad_of(self);
                          Tensor& gx = g.grad_buffer(x.id());
                          for (std::size_t r = 0; r < gx.rows(); ++r) {
                            for (std::size_t j = 0; j < gx.cols(); ++j) gx(r, j) += go[j] * inv;
                          }
                        },
                        "mean_rows");
}

Var repeat_rows(Var x, std::size_t factor) {
  require(factor >= 1, "repeat_rows: factor must be >= 1");
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  Tensor out = Tensor::matrix(xv.rows() * factor, c);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t f = 0; f < factor; ++f) std::copy_n(xv.data() + r * c, c, out.data() + (r * factor + f) * c);
  }
  return x.graph().make(std::move(out), {x},
                        [x, factor](Graph& g, std::size_t self) {
                          const Tensor& go = g.grad_of(self);
                          Tensor& gx = g.grad_buffer(x.id());
                          const std::size_t cols = gx.cols();
                          for (std::size_t r = 0; r < gx.rows(); ++r) {
                            for (std::size_t f = 0; f < factor; ++f) {
                              const real* src = go.data() + (r * factor + f) * cols;
                              for (std::size_t j = 0; j < cols; ++j) gx(r, j) += src[j];
                            }
                          }
                        },
                        "repeat_rows");
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::span<const real> weights) {
  const Tensor& lv = logits.value();
  const std::size_t n = lv.rows();
  const std::size_t k = lv.cols();
  require(targets.size() == n, "cross_entropy: one target per row required");
  require(weights.empty() || weights.size() == n, "cross_entropy: one weight per row required");
  auto softmax = std::make_shared<Tensor>(lv.shape());
  real total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= k) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary of " +
                              std::to_string(k));
    }
    auto row = lv.row(r);
    const real mx = *std::max_element(row.begin(), row.end());
    real denom = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const real e = std::exp(row[j] - mx);
      (*softmax)(r, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < k; ++j) (*softmax)(r, j) /= denom;
    const real w = weights.empty() ? real(1) : weights[r];
    if (w != real(0)) total += w * (std::log(denom) - (row[targets[r]] - mx));
  }
  auto tg = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  auto wt = std::make_shared<std::vector<real>>(weights.begin(), weights.end());
  return logits.graph().make(Tensor::scalar(total), {logits},
                             [logits, softmax, tg, wt](Graph& g, std::size_t self) {
                               const real go = g.grad_of(self)[0];
                               Tensor& gl = g.grad_buffer(logits.id());
                               const std::size_t cols = gl.cols();
                               for (std::size_t r = 0; r < gl.rows(); ++r) {
                                 const real w = (wt->empty() ? real(1) : (*wt)[r]) * go;
                                 if (w == real(0)) continue;
                                 for (std::size_t j = 0; j < cols; ++j) gl(r, j) += w * (*softmax)(r, j);
                                 gl(r, (*tg)[r]) -= w;
                               }
                             },
                             "cross_entropy");
}

Var cross_entropy(Var logits, std::size_t target) {
  require(logits.rows() == 1, "cross_entropy: expected a single row of logits");
  const std::size_t t[1] = {target};
  return cross_entropy(logits, std::span<const std::size_t>(t, 1));
}

Var sum(Var x) {
  real s = 0;
  for (real v : x.value().values()) s += v;
  return x.graph().make(Tensor::scalar(s), {x},
                        [x](Graph& g, std::size_t self) {
                          const real go = g.grad_of(self)[0];
                          for (auto& v : g.grad_buffer(x.id()).values()) v += go;
                        },
                        "sum");
}

Var mean(Var x) { return scale(sum(x), real(1) / static_cast<real>(x.value().size())); }

Var mean_abs(Var x) {
  real s = 0;
  for (real v : x.value().values()) s += std::abs(v);
  const real inv = real(1) / static_cast<real>(x.value().size());
  return x.graph().make(Tensor::scalar(s * inv), {x},
                        [x, inv](Graph& g, std::size_t self) {
                          const real go = g.grad_of(self)[0] * inv;
                          const Tensor& xv = g.value(x);
                          Tensor& gx = g.grad_buffer(x.id());
                          for (std::size_t i = 0; i < gx.size(); ++i) {
                            gx[i] += xv[i] > 0 ? go : (xv[i] < 0 ? -go : real(0));
                          }
                        },
                        "mean_abs");
}

Var mean_square(Var x) {
  real s = 0;
  for (real v : x.value().values()) s += v * v;
  const real inv = real(1) / static_cast<real>(x.value().size());
  return x.graph().make(Tensor::scalar(s * inv), {x},
                        [x, inv](Graph& g, std::size_t self) {
                          const real go = g.grad_of(self)[0] * inv * real(2);
                          const Tensor& xv = g.value(x);
                          Tensor& gx = g.grad_buffer(x.id());
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go * xv[i];
                        },
                        "mean_square");
}

Var stop_gradient(Var x) { return x.graph().constant(x.value()); }

Var straight_through(Var latent, Var quantized) {
  require(latent.value().shape() == quantized.value().shape(), "straight_through: shape mismatch");
  return latent.graph().make(quantized.value(), {latent},
                             [latent](Graph& g, std::size_t self) { accumulate(g, latent, g.grad_of(self)); },
                             "straight_through");
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t padding) {
  require(stride >= 1 && kernel >= 1, "conv1d: kernel and stride must be >= 1");
  require(length + 2 * padding >= kernel, "conv1d: input shorter than kernel");
  return (length + 2 * padding - kernel) / stride + 1;
}

Var conv1d(Var x, Var weight, Var bias, std::size_t batch, std::size_t kernel, std::size_t stride,
           std::size_t padding) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require(batch >= 1 && xv.rows() % batch == 0, "conv1d: rows not divisible by batch");
  const std::size_t len = xv.rows() / batch;
  const std::size_t cin = xv.cols();
  const std::size_t cout = wv.rows();
  require(wv.cols() == kernel * cin, "conv1d: weight is " + dims(wv) + ", expected " + std::to_string(cout) + "x" +
                                         std::to_string(kernel * cin));
  require(bias.value().size() == cout, "conv1d: bias length mismatch");
  const std::size_t out_len = conv1d_output_length(len, kernel, stride, padding);

  // im2col: one row per output step, tap-major columns.
  auto cols = std::make_shared<Tensor>(Shape{batch * out_len, kernel * cin});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < out_len; ++t) {
      real* dst = cols->data() + (b * out_len + t) * kernel * cin;
      for (std::size_t tap = 0; tap < kernel; ++tap) {
        const long src_t = static_cast<long>(t * stride + tap) - static_cast<long>(padding);
        if (src_t < 0 || src_t >= static_cast<long>(len)) continue;
        std::copy_n(xv.data() + (b * len + static_cast<std::size_t>(src_t)) * cin, cin, dst + tap * cin);
      }
    }
  }
  Tensor out = Tensor::matrix(batch * out_len, cout);
  view(out).noalias() = view(*cols) * view(wv).transpose();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t j = 0; j < cout; ++j) out(r, j) += bias.value()[j];
  }
  return x.graph().make(
      std::move(out), {x, weight, bias},
      [x, weight, bias, cols, batch, len, cin, kernel, stride, padding, out_len](Graph& g, std::size_t self) {
        const Tensor& go = g.grad_of(self);
        if (g.needs_grad(weight)) view(g.grad_buffer(weight.id())).noalias() += view(go).transpose() * view(*cols);
        if (g.needs_grad(bias)) {
          Tensor& gb = g.grad_buffer(bias.id());
          for (std::size_t r = 0; r < go.rows(); ++r) {
            for (std::size_t j = 0; j < go.cols(); ++j) gb[j] += go(r, j);
          }
        }
        if (g.needs_grad(x)) {
          Tensor gcols(cols->shape());
          view(gcols).noalias() = view(go) * view(g.value(weight));
          Tensor& gx = g.grad_buffer(x.id());
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t t = 0; t < out_len; ++t) {
              const real* src = gcols.data() + (b * out_len + t) * kernel * cin;
              for (std::size_t tap = 0; tap < kernel; ++tap) {
                const long src_t = static_cast<long>(t * stride + tap) - static_cast<long>(padding);
                if (src_t < 0 || src_t >= static_cast<long>(len)) continue;
                real* dst = gx.data() + (b * len + static_cast<std::size_t>(src_t)) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += src[tap * cin + c];
              }
            }
          }
        }
      },
      "conv1d");
}

}  // namespace bad::ops
