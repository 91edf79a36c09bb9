#include "cda/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "cda/errors.hpp"

namespace cda::nn {

namespace {

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic,
                                                   Eigen::RowMajor>>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

double logsumexp2(const double* row, std::size_t k) {
  double m = row[0];
  for (std::size_t i = 1; i < k; ++i) m = std::max(m, row[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += std::exp(row[i] - m);
  return m + std::log(s);
}

void softmax_row(const double* in, double* out, std::size_t k) {
  double m = in[0];
  for (std::size_t i = 1; i < k; ++i) m = std::max(m, in[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out[i] = std::exp(in[i] - m);
    s += out[i];
  }
  for (std::size_t i = 0; i < k; ++i) out[i] /= s;
}

// Fills a (Ci*kh*kw, Ho*Wo) column matrix for one sample.
void im2col(const double* x, std::size_t ci, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, double* col) {
  const std::size_t patch = ci * kh * kw;
  const std::size_t positions = ho * wo;
  for (std::size_t c = 0; c < ci; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const std::size_t row = (c * kh + i) * kw + j;
        double* dst = col + row * positions;
        for (std::size_t y = 0; y < ho; ++y) {
          const std::ptrdiff_t in_y =
              static_cast<std::ptrdiff_t>(y * stride + i) -
              static_cast<std::ptrdiff_t>(pad);
          for (std::size_t xph = 0; xph < wo; ++xph) {
            const std::ptrdiff_t in_x =
                static_cast<std::ptrdiff_t>(xph * stride + j) -
                static_cast<std::ptrdiff_t>(pad);
            double v = 0.0;
            if (in_y >= 0 && in_y < static_cast<std::ptrdiff_t>(h) &&
                in_x >= 0 && in_x < static_cast<std::ptrdiff_t>(w)) {
              v = x[(c * h + static_cast<std::size_t>(in_y)) * w +
                    static_cast<std::size_t>(in_x)];
            }
            dst[y * wo + xph] = v;
          }
        }
      }
    }
  }
  (void)patch;
}

// Scatter-add of the column gradient back to the input image.
void col2im_add(const double* col, std::size_t ci, std::size_t h,
                std::size_t w, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t pad, std::size_t ho,
                std::size_t wo, double* dx) {
  const std::size_t positions = ho * wo;
  for (std::size_t c = 0; c < ci; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        const std::size_t row = (c * kh + i) * kw + j;
        const double* src = col + row * positions;
        for (std::size_t y = 0; y < ho; ++y) {
          const std::ptrdiff_t in_y =
              static_cast<std::ptrdiff_t>(y * stride + i) -
              static_cast<std::ptrdiff_t>(pad);
          if (in_y < 0 || in_y >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t xph = 0; xph < wo; ++xph) {
            const std::ptrdiff_t in_x =
                static_cast<std::ptrdiff_t>(xph * stride + j) -
                static_cast<std::ptrdiff_t>(pad);
            if (in_x < 0 || in_x >= static_cast<std::ptrdiff_t>(w)) continue;
            dx[(c * h + static_cast<std::size_t>(in_y)) * w +
               static_cast<std::size_t>(in_x)] += src[y * wo + xph];
          }
        }
      }
    }
  }
}

}  // namespace

Value Tape::push(Tensor value, std::vector<std::uint32_t> inputs,
                 std::function<void(Tape&, std::size_t)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = any_needs_grad(inputs);
  n.inputs = std::move(inputs);
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

bool Tape::any_needs_grad(const std::vector<std::uint32_t>& ids) const {
  for (auto id : ids) {
    if (nodes_[id].needs_grad) return true;
  }
  return false;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

Value Tape::constant(Tensor t) { return push(std::move(t), {}, {}); }

Value Tape::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.sink = &p;
  nodes_.push_back(std::move(n));
  return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Value Tape::add(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.same_shape(tb), "add: shape mismatch " + ta.shape_str() + " vs " +
                                 tb.shape_str());
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] + tb[i];
  return push(std::move(out), {a.id, b.id},
              [](Tape& t, std::size_t id) {
                const Tensor& g = t.nodes_[id].grad;
                auto& n = t.nodes_[id];
                for (int k = 0; k < 2; ++k) {
                  if (!t.nodes_[n.inputs[k]].needs_grad) continue;
                  Tensor& gi = t.grad_buffer(n.inputs[k]);
                  for (std::size_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
                }
              });
}

Value Tape::sub(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.same_shape(tb), "sub: shape mismatch");
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] - tb[i];
  return push(std::move(out), {a.id, b.id},
              [](Tape& t, std::size_t id) {
                const Tensor& g = t.nodes_[id].grad;
                auto& n = t.nodes_[id];
                if (t.nodes_[n.inputs[0]].needs_grad) {
                  Tensor& ga = t.grad_buffer(n.inputs[0]);
                  for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                }
                if (t.nodes_[n.inputs[1]].needs_grad) {
                  Tensor& gb = t.grad_buffer(n.inputs[1]);
                  for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
                }
              });
}

Value Tape::mul(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.same_shape(tb), "mul: shape mismatch " + ta.shape_str() + " vs " +
                                 tb.shape_str());
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * tb[i];
  return push(std::move(out), {a.id, b.id},
              [](Tape& t, std::size_t id) {
                auto& n = t.nodes_[id];
                const Tensor& g = n.grad;
                const Tensor& va = t.nodes_[n.inputs[0]].value;
                const Tensor& vb = t.nodes_[n.inputs[1]].value;
                if (t.nodes_[n.inputs[0]].needs_grad) {
                  Tensor& ga = t.grad_buffer(n.inputs[0]);
                  for (std::size_t i = 0; i < g.numel(); ++i)
                    ga[i] += g[i] * vb[i];
                }
                if (t.nodes_[n.inputs[1]].needs_grad) {
                  Tensor& gb = t.grad_buffer(n.inputs[1]);
                  for (std::size_t i = 0; i < g.numel(); ++i)
                    gb[i] += g[i] * va[i];
                }
              });
}

Value Tape::scale(Value a, double c) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = ta[i] * c;
  return push(std::move(out), {a.id},
              [c](Tape& t, std::size_t id) {
                auto& n = t.nodes_[id];
                if (!t.nodes_[n.inputs[0]].needs_grad) return;
                Tensor& ga = t.grad_buffer(n.inputs[0]);
                const Tensor& g = n.grad;
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
              });
}

Value Tape::add_bias(Value x, Value b) {
  const Tensor& tx = val(x);
  const Tensor& tb = val(b);
  require(tx.rank() == 2 && tb.rank() == 1 && tx.dim(1) == tb.dim(0),
          "add_bias: shapes " + tx.shape_str() + " and " + tb.shape_str());
  Tensor out(tx.shape());
  const std::size_t n = tx.dim(0), m = tx.dim(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      out[i * m + j] = tx[i * m + j] + tb[j];
  return push(std::move(out), {x.id, b.id},
              [n, m](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                const Tensor& g = node.grad;
                if (t.nodes_[node.inputs[0]].needs_grad) {
                  Tensor& gx = t.grad_buffer(node.inputs[0]);
                  for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                }
                if (t.nodes_[node.inputs[1]].needs_grad) {
                  Tensor& gb = t.grad_buffer(node.inputs[1]);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j)
                      gb[j] += g[i * m + j];
                }
              });
}

Value Tape::matmul(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.dim(1) == tb.dim(0),
          "matmul: shapes " + ta.shape_str() + " and " + tb.shape_str());
  const std::size_t n = ta.dim(0), k = ta.dim(1), m = tb.dim(1);
  Tensor out({n, m});
  {
    ConstMatMap ma(ta.data(), static_cast<Eigen::Index>(n),
                   static_cast<Eigen::Index>(k));
    ConstMatMap mb(tb.data(), static_cast<Eigen::Index>(k),
                   static_cast<Eigen::Index>(m));
    MatMap mo(out.data(), static_cast<Eigen::Index>(n),
              static_cast<Eigen::Index>(m));
    mo.noalias() = ma * mb;
  }
  return push(std::move(out), {a.id, b.id},
              [n, k, m](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                const Tensor& g = node.grad;
                ConstMatMap mg(g.data(), static_cast<Eigen::Index>(n),
                               static_cast<Eigen::Index>(m));
                const Tensor& va = t.nodes_[node.inputs[0]].value;
                const Tensor& vb = t.nodes_[node.inputs[1]].value;
                if (t.nodes_[node.inputs[0]].needs_grad) {
                  Tensor& ga = t.grad_buffer(node.inputs[0]);
                  MatMap mga(ga.data(), static_cast<Eigen::Index>(n),
                             static_cast<Eigen::Index>(k));
                  ConstMatMap mvb(vb.data(), static_cast<Eigen::Index>(k),
                                  static_cast<Eigen::Index>(m));
                  mga.noalias() += mg * mvb.transpose();
                }
                if (t.nodes_[node.inputs[1]].needs_grad) {
                  Tensor& gb = t.grad_buffer(node.inputs[1]);
                  MatMap mgb(gb.data(), static_cast<Eigen::Index>(k),
                             static_cast<Eigen::Index>(m));
                  ConstMatMap mva(va.data(), static_cast<Eigen::Index>(n),
                                  static_cast<Eigen::Index>(k));
                  mgb.noalias() += mva.transpose() * mg;
                }
              });
}

Value Tape::relu(Value a) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
  return push(std::move(out), {a.id},
              [](Tape& t, std::size_t id) {
                auto& n = t.nodes_[id];
                if (!t.nodes_[n.inputs[0]].needs_grad) return;
                const Tensor& g = n.grad;
                const Tensor& vin = t.nodes_[n.inputs[0]].value;
                Tensor& ga = t.grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i)
                  if (vin[i] > 0.0) ga[i] += g[i];
              });
}

Value Tape::sigmoid(Value a) {
  const Tensor& ta = val(a);
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double x = ta[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  return push(std::move(out), {a.id},
              [](Tape& t, std::size_t id) {
                auto& n = t.nodes_[id];
                if (!t.nodes_[n.inputs[0]].needs_grad) return;
                const Tensor& g = n.grad;
                const Tensor& y = n.value;
                Tensor& ga = t.grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i)
                  ga[i] += g[i] * y[i] * (1.0 - y[i]);
              });
}

Value Tape::reshape(Value a, std::vector<std::size_t> shape) {
  Tensor out = val(a).reshaped(std::move(shape));
  return push(std::move(out), {a.id},
              [](Tape& t, std::size_t id) {
                auto& n = t.nodes_[id];
                if (!t.nodes_[n.inputs[0]].needs_grad) return;
                const Tensor& g = n.grad;
                Tensor& ga = t.grad_buffer(n.inputs[0]);
                for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
              });
}

Value Tape::concat_cols(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.dim(0) == tb.dim(0),
          "concat_cols: shapes " + ta.shape_str() + " and " + tb.shape_str());
  const std::size_t n = ta.dim(0), ca = ta.dim(1), cb = tb.dim(1);
  Tensor out({n, ca + cb});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out[i * (ca + cb) + j] = ta[i * ca + j];
    for (std::size_t j = 0; j < cb; ++j)
      out[i * (ca + cb) + ca + j] = tb[i * cb + j];
  }
  return push(std::move(out), {a.id, b.id},
              [n, ca, cb](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                const Tensor& g = node.grad;
                if (t.nodes_[node.inputs[0]].needs_grad) {
                  Tensor& ga = t.grad_buffer(node.inputs[0]);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < ca; ++j)
                      ga[i * ca + j] += g[i * (ca + cb) + j];
                }
                if (t.nodes_[node.inputs[1]].needs_grad) {
                  Tensor& gb = t.grad_buffer(node.inputs[1]);
                  for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < cb; ++j)
                      gb[i * cb + j] += g[i * (ca + cb) + ca + j];
                }
              });
}

Value Tape::concat_rows(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.rank() == 2 && tb.rank() == 2 && ta.dim(1) == tb.dim(1),
          "concat_rows: shapes " + ta.shape_str() + " and " + tb.shape_str());
  const std::size_t na = ta.dim(0), nb = tb.dim(0), m = ta.dim(1);
  Tensor out({na + nb, m});
  for (std::size_t i = 0; i < na * m; ++i) out[i] = ta[i];
  for (std::size_t i = 0; i < nb * m; ++i) out[na * m + i] = tb[i];
  return push(std::move(out), {a.id, b.id},
              [na, nb, m](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                const Tensor& g = node.grad;
                if (t.nodes_[node.inputs[0]].needs_grad) {
                  Tensor& ga = t.grad_buffer(node.inputs[0]);
                  for (std::size_t i = 0; i < na * m; ++i) ga[i] += g[i];
                }
                if (t.nodes_[node.inputs[1]].needs_grad) {
                  Tensor& gb = t.grad_buffer(node.inputs[1]);
                  for (std::size_t i = 0; i < nb * m; ++i)
                    gb[i] += g[na * m + i];
                }
              });
}

Value Tape::conv2d(Value x, Value w, Value b, std::size_t stride,
                   std::size_t pad) {
  const Tensor& tx = val(x);
  const Tensor& tw = val(w);
  const Tensor& tb = val(b);
  require(tx.rank() == 4 && tw.rank() == 4, "conv2d: need 4-D input/weight");
  const std::size_t n = tx.dim(0), ci = tx.dim(1), h = tx.dim(2),
                    wdt = tx.dim(3);
  const std::size_t co = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
  require(tw.dim(1) == ci, "conv2d: channel mismatch " + tx.shape_str() +
                               " vs " + tw.shape_str());
  require(tb.rank() == 1 && tb.dim(0) == co, "conv2d: bias shape");
  require(h + 2 * pad >= kh && wdt + 2 * pad >= kw, "conv2d: kernel too big");
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wdt + 2 * pad - kw) / stride + 1;
  const std::size_t patch = ci * kh * kw;
  const std::size_t positions = ho * wo;

  Tensor out({n, co, ho, wo});
  std::vector<double> col(patch * positions);
  ConstMatMap wm(tw.data(), static_cast<Eigen::Index>(co),
                 static_cast<Eigen::Index>(patch));
  for (std::size_t s = 0; s < n; ++s) {
    im2col(tx.data() + s * ci * h * wdt, ci, h, wdt, kh, kw, stride, pad, ho,
           wo, col.data());
    ConstMatMap cm(col.data(), static_cast<Eigen::Index>(patch),
                   static_cast<Eigen::Index>(positions));
    MatMap om(out.data() + s * co * positions, static_cast<Eigen::Index>(co),
              static_cast<Eigen::Index>(positions));
    om.noalias() = wm * cm;
    for (std::size_t c = 0; c < co; ++c) {
      double* dst = out.data() + (s * co + c) * positions;
      for (std::size_t p = 0; p < positions; ++p) dst[p] += tb[c];
    }
  }

  auto back = [n, ci, h, wdt, co, kh, kw, stride, pad, ho, wo, patch,
               positions](Tape& t, std::size_t id) {
    auto& node = t.nodes_[id];
    const Tensor& g = node.grad;
    const Tensor& vx = t.nodes_[node.inputs[0]].value;
    const Tensor& vw = t.nodes_[node.inputs[1]].value;
    const bool need_x = t.nodes_[node.inputs[0]].needs_grad;
    const bool need_w = t.nodes_[node.inputs[1]].needs_grad;
    const bool need_b = t.nodes_[node.inputs[2]].needs_grad;
    std::vector<double> col(patch * positions);
    std::vector<double> dcol(patch * positions);
    ConstMatMap wm(vw.data(), static_cast<Eigen::Index>(co),
                   static_cast<Eigen::Index>(patch));
    for (std::size_t s = 0; s < n; ++s) {
      ConstMatMap gm(g.data() + s * co * positions,
                     static_cast<Eigen::Index>(co),
                     static_cast<Eigen::Index>(positions));
      if (need_w || need_x) {
        im2col(vx.data() + s * ci * h * wdt, ci, h, wdt, kh, kw, stride, pad,
               ho, wo, col.data());
      }
      if (need_w) {
        Tensor& gw = t.grad_buffer(node.inputs[1]);
        MatMap gwm(gw.data(), static_cast<Eigen::Index>(co),
                   static_cast<Eigen::Index>(patch));
        ConstMatMap cm(col.data(), static_cast<Eigen::Index>(patch),
                       static_cast<Eigen::Index>(positions));
        gwm.noalias() += gm * cm.transpose();
      }
      if (need_x) {
        MatMap dcm(dcol.data(), static_cast<Eigen::Index>(patch),
                   static_cast<Eigen::Index>(positions));
        dcm.noalias() = wm.transpose() * gm;
        Tensor& gx = t.grad_buffer(node.inputs[0]);
        col2im_add(dcol.data(), ci, h, wdt, kh, kw, stride, pad, ho, wo,
                   gx.data() + s * ci * h * wdt);
      }
      if (need_b) {
        Tensor& gb = t.grad_buffer(node.inputs[2]);
        for (std::size_t c = 0; c < co; ++c) {
          const double* src = g.data() + (s * co + c) * positions;
          double acc = 0.0;
          for (std::size_t p = 0; p < positions; ++p) acc += src[p];
          gb[c] += acc;
        }
      }
    }
  };
  return push(std::move(out), {x.id, w.id, b.id}, back);
}

Value Tape::avg_pool2(Value x) {
  const Tensor& tx = val(x);
  require(tx.rank() == 4 && tx.dim(2) % 2 == 0 && tx.dim(3) % 2 == 0,
          "avg_pool2: need even H,W, got " + tx.shape_str());
  const std::size_t n = tx.dim(0), c = tx.dim(1), h = tx.dim(2),
                    w = tx.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out({n, c, ho, wo});
  for (std::size_t s = 0; s < n * c; ++s) {
    const double* in = tx.data() + s * h * w;
    double* dst = out.data() + s * ho * wo;
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xph = 0; xph < wo; ++xph)
        dst[y * wo + xph] = 0.25 * (in[(2 * y) * w + 2 * xph] +
                                    in[(2 * y) * w + 2 * xph + 1] +
                                    in[(2 * y + 1) * w + 2 * xph] +
                                    in[(2 * y + 1) * w + 2 * xph + 1]);
  }
  return push(std::move(out), {x.id},
              [n, c, h, w, ho, wo](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                if (!t.nodes_[node.inputs[0]].needs_grad) return;
                const Tensor& g = node.grad;
                Tensor& gx = t.grad_buffer(node.inputs[0]);
                for (std::size_t s = 0; s < n * c; ++s) {
                  const double* gsrc = g.data() + s * ho * wo;
                  double* gdst = gx.data() + s * h * w;
                  for (std::size_t y = 0; y < ho; ++y)
                    for (std::size_t xph = 0; xph < wo; ++xph) {
                      const double v = 0.25 * gsrc[y * wo + xph];
                      gdst[(2 * y) * w + 2 * xph] += v;
                      gdst[(2 * y) * w + 2 * xph + 1] += v;
                      gdst[(2 * y + 1) * w + 2 * xph] += v;
                      gdst[(2 * y + 1) * w + 2 * xph + 1] += v;
                    }
                }
              });
}

Value Tape::global_avg_pool(Value x) {
  const Tensor& tx = val(x);
  require(tx.rank() == 4, "global_avg_pool: need 4-D input");
  const std::size_t n = tx.dim(0), c = tx.dim(1),
                    hw = tx.dim(2) * tx.dim(3);
  Tensor out({n, c});
  for (std::size_t s = 0; s < n * c; ++s) {
    const double* in = tx.data() + s * hw;
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += in[i];
    out[s] = acc / static_cast<double>(hw);
  }
  return push(std::move(out), {x.id},
              [n, c, hw](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                if (!t.nodes_[node.inputs[0]].needs_grad) return;
                const Tensor& g = node.grad;
                Tensor& gx = t.grad_buffer(node.inputs[0]);
                const double inv = 1.0 / static_cast<double>(hw);
                for (std::size_t s = 0; s < n * c; ++s) {
                  double* dst = gx.data() + s * hw;
                  const double v = g[s] * inv;
                  for (std::size_t i = 0; i < hw; ++i) dst[i] += v;
                }
              });
}

Value Tape::upsample_nearest2(Value x) {
  const Tensor& tx = val(x);
  require(tx.rank() == 4, "upsample_nearest2: need 4-D input");
  const std::size_t n = tx.dim(0), c = tx.dim(1), h = tx.dim(2),
                    w = tx.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  for (std::size_t s = 0; s < n * c; ++s) {
    const double* in = tx.data() + s * h * w;
    double* dst = out.data() + s * 4 * h * w;
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xph = 0; xph < 2 * w; ++xph)
        dst[y * 2 * w + xph] = in[(y / 2) * w + xph / 2];
  }
  return push(std::move(out), {x.id},
              [n, c, h, w](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                if (!t.nodes_[node.inputs[0]].needs_grad) return;
                const Tensor& g = node.grad;
                Tensor& gx = t.grad_buffer(node.inputs[0]);
                for (std::size_t s = 0; s < n * c; ++s) {
                  const double* gsrc = g.data() + s * 4 * h * w;
                  double* gdst = gx.data() + s * h * w;
                  for (std::size_t y = 0; y < 2 * h; ++y)
                    for (std::size_t xph = 0; xph < 2 * w; ++xph)
                      gdst[(y / 2) * w + xph / 2] += gsrc[y * 2 * w + xph];
                }
              });
}

Value Tape::softmax(Value logits) {
  const Tensor& tl = val(logits);
  require(tl.rank() == 2, "softmax: need (N,K) logits");
  const std::size_t n = tl.dim(0), k = tl.dim(1);
  Tensor out(tl.shape());
  for (std::size_t i = 0; i < n; ++i)
    softmax_row(tl.data() + i * k, out.data() + i * k, k);
  return push(std::move(out), {logits.id},
              [n, k](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                if (!t.nodes_[node.inputs[0]].needs_grad) return;
                const Tensor& g = node.grad;
                const Tensor& y = node.value;
                Tensor& gx = t.grad_buffer(node.inputs[0]);
                for (std::size_t i = 0; i < n; ++i) {
                  double dot = 0.0;
                  for (std::size_t j = 0; j < k; ++j)
                    dot += g[i * k + j] * y[i * k + j];
                  for (std::size_t j = 0; j < k; ++j)
                    gx[i * k + j] +=
                        y[i * k + j] * (g[i * k + j] - dot);
                }
              });
}

Value Tape::ce_mean(Value logits, std::vector<int> labels) {
  const Tensor& tl = val(logits);
  require(tl.rank() == 2, "ce_mean: need (N,K) logits");
  const std::size_t n = tl.dim(0), k = tl.dim(1);
  require(labels.size() == n, "ce_mean: labels/batch mismatch");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < k, "ce_mean: label range");
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = tl.data() + i * k;
    loss += logsumexp2(row, k) - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  return push(Tensor::scalar(loss), {logits.id},
              [n, k, labels = std::move(labels)](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                if (!t.nodes_[node.inputs[0]].needs_grad) return;
                const double gs = node.grad[0] / static_cast<double>(n);
                const Tensor& vl = t.nodes_[node.inputs[0]].value;
                Tensor& gx = t.grad_buffer(node.inputs[0]);
                std::vector<double> p(k);
                for (std::size_t i = 0; i < n; ++i) {
                  softmax_row(vl.data() + i * k, p.data(), k);
                  for (std::size_t j = 0; j < k; ++j) {
                    double onehot = (static_cast<std::size_t>(labels[i]) == j)
                                        ? 1.0
                                        : 0.0;
                    gx[i * k + j] += gs * (p[j] - onehot);
                  }
                }
              });
}

Value Tape::ce_uniform_mean(Value logits) {
  const Tensor& tl = val(logits);
  require(tl.rank() == 2, "ce_uniform_mean: need (N,K) logits");
  const std::size_t n = tl.dim(0), k = tl.dim(1);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = tl.data() + i * k;
    double mean_logit = 0.0;
    for (std::size_t j = 0; j < k; ++j) mean_logit += row[j];
    mean_logit /= static_cast<double>(k);
    loss += logsumexp2(row, k) - mean_logit;
  }
  loss /= static_cast<double>(n);
  return push(Tensor::scalar(loss), {logits.id},
              [n, k](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                if (!t.nodes_[node.inputs[0]].needs_grad) return;
                const double gs = node.grad[0] / static_cast<double>(n);
                const Tensor& vl = t.nodes_[node.inputs[0]].value;
                Tensor& gx = t.grad_buffer(node.inputs[0]);
                std::vector<double> p(k);
                const double u = 1.0 / static_cast<double>(k);
                for (std::size_t i = 0; i < n; ++i) {
                  softmax_row(vl.data() + i * k, p.data(), k);
                  for (std::size_t j = 0; j < k; ++j)
                    gx[i * k + j] += gs * (p[j] - u);
                }
              });
}

Value Tape::l1_mean(Value a, Value b) {
  const Tensor& ta = val(a);
  const Tensor& tb = val(b);
  require(ta.same_shape(tb), "l1_mean: shape mismatch " + ta.shape_str() +
                                 " vs " + tb.shape_str());
  const std::size_t n = ta.numel();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) loss += std::abs(ta[i] - tb[i]);
  loss /= static_cast<double>(n);
  return push(Tensor::scalar(loss), {a.id, b.id},
              [n](Tape& t, std::size_t id) {
                auto& node = t.nodes_[id];
                const double gs = node.grad[0] / static_cast<double>(n);
                const Tensor& va = t.nodes_[node.inputs[0]].value;
                const Tensor& vb = t.nodes_[node.inputs[1]].value;
                const bool need_a = t.nodes_[node.inputs[0]].needs_grad;
                const bool need_b = t.nodes_[node.inputs[1]].needs_grad;
                if (!need_a && !need_b) return;
                for (std::size_t i = 0; i < n; ++i) {
                  double d = va[i] - vb[i];
                  double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                  if (need_a) t.grad_buffer(node.inputs[0])[i] += gs * s;
                  if (need_b) t.grad_buffer(node.inputs[1])[i] -= gs * s;
                }
              });
}

void Tape::backward(Value loss) {
  if (backward_done_) throw ContractError("backward() called twice on tape");
  backward_done_ = true;
  const Tensor& lv = val(loss);
  require(lv.numel() == 1, "backward: loss must be scalar");
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t idx = nodes_.size(); idx-- > 0;) {
    Node& n = nodes_[idx];
    if (!n.needs_grad || n.grad.numel() == 0) continue;
    if (n.backprop) n.backprop(*this, idx);
    if (n.sink != nullptr) {
      Tensor& pg = n.sink->grad;
      for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
    }
  }
}

}  // namespace cda::nn
