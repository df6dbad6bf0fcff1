#include "mfcl/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mfcl/testing_hooks.hpp"

namespace mfcl::ad {

namespace testing {
namespace {
bool g_conv_fault = false;
}  // namespace
void inject_conv_grad_fault(bool on) { g_conv_fault = on; }
bool conv_grad_fault() { return g_conv_fault; }
}  // namespace testing

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  if (long bad = first_non_finite<T>(value.values()); bad >= 0) {
    throw NumericError("non-finite value at element " + std::to_string(bad) + " of a constant input");
  }
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::parameter(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {it->second};
  if (long bad = first_non_finite<T>(p.value.values()); bad >= 0) {
    throw NumericError("parameter '" + p.name + "' has a non-finite value at element " + std::to_string(bad));
  }
  Node n;
  n.op = "parameter";
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  param_nodes_[&p] = nodes_.size() - 1;
  return {nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(const char* op, Tensor<T> value, std::vector<Var> inputs, BackwardFn<T> backward) {
  if (long bad = first_non_finite<T>(value.values()); bad >= 0) {
    throw NumericError(std::string("non-finite value at element ") + std::to_string(bad) + " produced by op '" +
                       op + "' (node " + std::to_string(nodes_.size()) + ")");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (Var v : inputs) {
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_.at(v.id).requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss, bool accumulate) {
  if (swept_) throw std::logic_error("backward already ran on this tape");
  Node& root = nodes_.at(loss.id);
  if (root.value.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  for (const auto& [param, id] : param_nodes_) {
    if (param->grad_pending && !accumulate) {
      throw std::logic_error("parameter '" + param->name +
                             "' still holds gradients from an earlier backward; call zero_grad() first");
    }
  }
  swept_ = true;
  if (!root.requires_grad) return;
  grad(loss.id).fill(T{1});
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
  }
  for (const auto& [key, id] : param_nodes_) {
    Node& n = nodes_[id];
    Parameter<T>* param = n.param;
    if (param->grad.shape() != param->value.shape()) param->grad = Tensor<T>(param->value.shape());
    if (!n.grad.empty()) {
      auto dst = param->grad.values();
      auto src = n.grad.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
    param->grad_pending = true;
  }
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename T>
Var conv1d(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride) {
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(w);
  require_rank(xs, 3, "conv1d", "input");
  require_rank(ws, 3, "conv1d", "weight");
  const std::size_t n = xs[0], cin = xs[1], len = xs[2];
  const std::size_t cout = ws[0], k = ws[2];
  if (ws[1] != cin) {
    throw ShapeError("conv1d: weight " + shape_str(ws) + " expects " + std::to_string(ws[1]) +
                     " input channels, input " + shape_str(xs) + " has " + std::to_string(cin));
  }
  if (tape.shape(b) != Shape{cout}) throw ShapeError("conv1d: bias must have shape [" + std::to_string(cout) + "]");
  if (stride == 0) throw ShapeError("conv1d: stride must be >= 1");
  if (len < k) {
    throw ShapeError("conv1d: input length " + std::to_string(len) + " is shorter than kernel " + std::to_string(k));
  }
  const std::size_t lout = (len - k) / stride + 1;
  const std::size_t rows = cin * k;

  auto im2col = [=](const T* xn, T* col) {
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t j = 0; j < k; ++j) {
        T* dst = col + (c * k + j) * lout;
        const T* src = xn + c * len + j;
        for (std::size_t t = 0; t < lout; ++t) dst[t] = src[t * stride];
      }
    }
  };

  Tensor<T> out({n, cout, lout});
  {
    const Tensor<T>& xv = tape.value(x);
    CMapRM<T> W(tape.value(w).data(), cout, rows);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> B(tape.value(b).data(), cout);
    MatRM<T> col(rows, lout);
    for (std::size_t s = 0; s < n; ++s) {
      im2col(xv.data() + s * cin * len, col.data());
      MapRM<T> Y(out.data() + s * cout * lout, cout, lout);
      Y.noalias() = W * col;
      Y.colwise() += B;
    }
  }

  return tape.record("conv1d", std::move(out), {x, w, b},
                     [=](Tape<T>& tp, std::size_t self) {
                       const Tensor<T>& gy = tp.grad(self);
                       const Tensor<T>& xv = tp.value(x);
                       CMapRM<T> W(tp.value(w).data(), cout, rows);
                       const bool need_x = tp.requires_grad(x);
                       const bool need_w = tp.requires_grad(w);
                       const bool need_b = tp.requires_grad(b);
                       MatRM<T> col(rows, lout);
                       MatRM<T> dcol(rows, lout);
                       MatRM<T> dW = MatRM<T>::Zero(cout, rows);
                       for (std::size_t s = 0; s < n; ++s) {
                         CMapRM<T> G(gy.data() + s * cout * lout, cout, lout);
                         if (need_w) {
                           im2col(xv.data() + s * cin * len, col.data());
                           dW.noalias() += G * col.transpose();
                         }
                         if (need_b) {
                           T* db = tp.grad(b.id).data();
                           for (std::size_t c = 0; c < cout; ++c) db[c] += G.row(static_cast<long>(c)).sum();
                         }
                         if (need_x) {
                           dcol.noalias() = W.transpose() * G;
                           T* dx = tp.grad(x.id).data() + s * cin * len;
                           for (std::size_t c = 0; c < cin; ++c) {
                             for (std::size_t j = 0; j < k; ++j) {
                               const T* src = dcol.data() + (c * k + j) * lout;
                               T* dst = dx + c * len + j;
                               for (std::size_t t = 0; t < lout; ++t) dst[t * stride] += src[t];
                             }
                           }
                         }
                       }
                       if (need_w) {
                         if (testing::conv_grad_fault()) dW *= T{2};
                         MapRM<T> gw(tp.grad(w.id).data(), cout, rows);
                         gw += dW;
                       }
                     });
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, Var b, std::size_t stride, Padding padding) {
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(w);
  require_rank(xs, 4, "conv2d", "input");
  require_rank(ws, 4, "conv2d", "weight");
  const std::size_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const std::size_t cout = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != cin) {
    throw ShapeError("conv2d: weight " + shape_str(ws) + " expects " + std::to_string(ws[1]) +
                     " input channels, input " + shape_str(xs) + " has " + std::to_string(cin));
  }
  if (tape.shape(b) != Shape{cout}) throw ShapeError("conv2d: bias must have shape [" + std::to_string(cout) + "]");
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  std::size_t pad = 0;
  if (padding != Padding::kValid) {
    if (kh != kw || kh % 2 == 0 || stride != 1) {
      throw ShapeError("conv2d: same padding needs an odd square kernel and stride 1");
    }
    pad = kh / 2;
  }
  if (h + 2 * pad < kh || wd + 2 * pad < kw) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " is smaller than kernel " + shape_str(ws));
  }
  const std::size_t hout = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wout = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t plane = hout * wout;
  const std::size_t rows = cin * kh * kw;

  // Source row (column) of kernel tap i (j) at output row (column) o; -1 reads a zero.
  auto source_index = [&](std::size_t k, std::size_t outs, std::size_t extent) {
    std::vector<long> idx(k * outs);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t o = 0; o < outs; ++o) {
        long s = static_cast<long>(o * stride + i) - static_cast<long>(pad);
        if (s < 0 || s >= static_cast<long>(extent)) {
          s = padding == Padding::kSameReplicate ? std::clamp<long>(s, 0, static_cast<long>(extent) - 1) : -1;
        }
        idx[i * outs + o] = s;
      }
    }
    return idx;
  };
  auto src_h = std::make_shared<std::vector<long>>(source_index(kh, hout, h));
  auto src_w = std::make_shared<std::vector<long>>(source_index(kw, wout, wd));

  // Output columns whose source column is ow * stride + j - pad without clamping.
  auto lo = std::make_shared<std::vector<std::size_t>>(kw, 0);
  auto hi = std::make_shared<std::vector<std::size_t>>(kw, 0);
  for (std::size_t j = 0; j < kw; ++j) {
    auto direct = [&](std::size_t o) {
      const long want = static_cast<long>(o * stride + j) - static_cast<long>(pad);
      return want >= 0 && (*src_w)[j * wout + o] == want;
    };
    std::size_t a = 0;
    while (a < wout && !direct(a)) ++a;
    std::size_t b = a;
    while (b < wout && direct(b)) ++b;
    (*lo)[j] = a;
    (*hi)[j] = b;
  }

  // Calls row_fn(col_row, input_row, j) for every tap row that reads real input.
  auto for_each_row = [=](auto&& row_fn) {
    const std::vector<long>& sh = *src_h;
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t i = 0; i < kh; ++i) {
        for (std::size_t j = 0; j < kw; ++j) {
          const std::size_t r = (c * kh + i) * kw + j;
          for (std::size_t oh = 0; oh < hout; ++oh) {
            const long ih = sh[i * hout + oh];
            if (ih < 0) continue;
            row_fn(r * plane + oh * wout, c * h * wd + static_cast<std::size_t>(ih) * wd, j);
          }
        }
      }
    }
  };

  auto im2col = [=](const T* xn, T* col) {
    if (padding == Padding::kSame) std::fill(col, col + rows * plane, T{0});
    const std::vector<long>& sw = *src_w;
    for_each_row([&](std::size_t o, std::size_t in, std::size_t j) {
      T* dst = col + o;
      const T* src = xn + in;
      const long* cols = sw.data() + j * wout;
      const std::size_t a = (*lo)[j], b = (*hi)[j];
      for (std::size_t ow = 0; ow < a; ++ow) dst[ow] = cols[ow] >= 0 ? src[cols[ow]] : T{0};
      const T* run = src + (a * stride + j - pad);
      for (std::size_t ow = a; ow < b; ++ow) dst[ow] = run[(ow - a) * stride];
      for (std::size_t ow = b; ow < wout; ++ow) dst[ow] = cols[ow] >= 0 ? src[cols[ow]] : T{0};
    });
  };

  auto col2im = [=](const T* col, T* dx) {
    const std::vector<long>& sw = *src_w;
    for_each_row([&](std::size_t o, std::size_t in, std::size_t j) {
      const T* g = col + o;
      T* dst = dx + in;
      const long* cols = sw.data() + j * wout;
      const std::size_t a = (*lo)[j], b = (*hi)[j];
      for (std::size_t ow = 0; ow < a; ++ow) {
        if (cols[ow] >= 0) dst[cols[ow]] += g[ow];
      }
      T* run = dst + (a * stride + j - pad);
      for (std::size_t ow = a; ow < b; ++ow) run[(ow - a) * stride] += g[ow];
      for (std::size_t ow = b; ow < wout; ++ow) {
        if (cols[ow] >= 0) dst[cols[ow]] += g[ow];
      }
    });
  };

  Tensor<T> out({n, cout, hout, wout});
  {
    const Tensor<T>& xv = tape.value(x);
    CMapRM<T> W(tape.value(w).data(), cout, rows);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> B(tape.value(b).data(), cout);
    MatRM<T> col(rows, plane);
    for (std::size_t s = 0; s < n; ++s) {
      im2col(xv.data() + s * cin * h * wd, col.data());
      MapRM<T> Y(out.data() + s * cout * plane, cout, plane);
      Y.noalias() = W * col;
      Y.colwise() += B;
    }
  }

  return tape.record("conv2d", std::move(out), {x, w, b},
                     [=](Tape<T>& tp, std::size_t self) {
                       const Tensor<T>& gy = tp.grad(self);
                       const Tensor<T>& xv = tp.value(x);
                       CMapRM<T> W(tp.value(w).data(), cout, rows);
                       const bool need_x = tp.requires_grad(x);
                       const bool need_w = tp.requires_grad(w);
                       const bool need_b = tp.requires_grad(b);
                       MatRM<T> col(rows, plane);
                       MatRM<T> dcol(rows, plane);
                       MatRM<T> dW = MatRM<T>::Zero(cout, rows);
                       for (std::size_t s = 0; s < n; ++s) {
                         CMapRM<T> G(gy.data() + s * cout * plane, cout, plane);
                         if (need_w) {
                           im2col(xv.data() + s * cin * h * wd, col.data());
                           dW.noalias() += G * col.transpose();
                         }
                         if (need_b) {
                           T* db = tp.grad(b.id).data();
                           for (std::size_t c = 0; c < cout; ++c) db[c] += G.row(static_cast<long>(c)).sum();
                         }
                         if (need_x) {
                           dcol.noalias() = W.transpose() * G;
                           col2im(dcol.data(), tp.grad(x.id).data() + s * cin * h * wd);
                         }
                       }
                       if (need_w) {
                         if (testing::conv_grad_fault()) dW *= T{2};
                         MapRM<T> gw(tp.grad(w.id).data(), cout, rows);
                         gw += dW;
                       }
                     });
}

// ---------------------------------------------------------------------------
// Normalization and elementwise ops

template <typename T>
Var group_norm(Tape<T>& tape, Var x, std::size_t groups, Var gamma, Var beta, double eps) {
  const Shape& xs = tape.shape(x);
  if (xs.size() < 2) throw ShapeError("group_norm: input must have rank >= 2, got " + shape_str(xs));
  const std::size_t n = xs[0], c = xs[1];
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels are not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (tape.shape(gamma) != Shape{c} || tape.shape(beta) != Shape{c}) {
    throw ShapeError("group_norm: gamma and beta must have shape [" + std::to_string(c) + "]");
  }
  const std::size_t spatial = shape_numel(xs) / (n * c);
  const std::size_t cpg = c / groups;
  const std::size_t group_size = cpg * spatial;

  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  using CMapArr = Eigen::Map<const Arr>;
  using MapArr = Eigen::Map<Arr>;

  const Tensor<T>& xv = tape.value(x);
  const T* g = tape.value(gamma).data();
  const T* be = tape.value(beta).data();
  Tensor<T> out(xs);
  // Normalized values and inverse std are kept for the backward pass.
  auto xhat = std::make_shared<AlignedVector<T>>(xv.numel());
  auto inv_std = std::make_shared<std::vector<double>>(n * groups);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t grp = 0; grp < groups; ++grp) {
      const std::size_t base = (s * c + grp * cpg) * spatial;
      CMapArr src(xv.data() + base, static_cast<long>(group_size));
      const double mean = src.template cast<double>().sum() / static_cast<double>(group_size);
      const double var = (src.template cast<double>() - mean).square().sum() / static_cast<double>(group_size);
      const double istd = 1.0 / std::sqrt(var + eps);
      (*inv_std)[s * groups + grp] = istd;
      for (std::size_t ch = 0; ch < cpg; ++ch) {
        const std::size_t cc = grp * cpg + ch;
        const std::size_t off = base + ch * spatial;
        CMapArr xc(xv.data() + off, static_cast<long>(spatial));
        MapArr xh(xhat->data() + off, static_cast<long>(spatial));
        MapArr y(out.data() + off, static_cast<long>(spatial));
        xh = (xc - static_cast<T>(mean)) * static_cast<T>(istd);
        y = xh * g[cc] + be[cc];
      }
    }
  }

  return tape.record("group_norm", std::move(out), {x, gamma, beta},
                     [=](Tape<T>& tp, std::size_t self) {
                       const Tensor<T>& gy = tp.grad(self);
                       const T* gam = tp.value(gamma).data();
                       const bool need_x = tp.requires_grad(x);
                       T* dgamma = tp.requires_grad(gamma) ? tp.grad(gamma.id).data() : nullptr;
                       T* dbeta = tp.requires_grad(beta) ? tp.grad(beta.id).data() : nullptr;
                       T* dx = need_x ? tp.grad(x.id).data() : nullptr;
                       const long len = static_cast<long>(spatial);
                       for (std::size_t s = 0; s < n; ++s) {
                         for (std::size_t grp = 0; grp < groups; ++grp) {
                           const std::size_t base = (s * c + grp * cpg) * spatial;
                           double sum_d = 0.0;
                           double sum_dx = 0.0;
                           for (std::size_t ch = 0; ch < cpg; ++ch) {
                             const std::size_t cc = grp * cpg + ch;
                             const std::size_t off = base + ch * spatial;
                             CMapArr dy(gy.data() + off, len);
                             CMapArr xh(xhat->data() + off, len);
                             const double dg = (dy.template cast<double>() * xh.template cast<double>()).sum();
                             const double db = dy.template cast<double>().sum();
                             if (dgamma) dgamma[cc] += static_cast<T>(dg);
                             if (dbeta) dbeta[cc] += static_cast<T>(db);
                             sum_d += db * gam[cc];
                             sum_dx += dg * gam[cc];
                           }
                           if (!dx) continue;
                           const double istd = (*inv_std)[s * groups + grp];
                           const T mean_d = static_cast<T>(sum_d / static_cast<double>(group_size));
                           const T mean_dx = static_cast<T>(sum_dx / static_cast<double>(group_size));
                           for (std::size_t ch = 0; ch < cpg; ++ch) {
                             const std::size_t cc = grp * cpg + ch;
                             const std::size_t off = base + ch * spatial;
                             CMapArr dy(gy.data() + off, len);
                             CMapArr xh(xhat->data() + off, len);
                             MapArr d(dx + off, len);
                             d += static_cast<T>(istd) * (dy * gam[cc] - mean_d - xh * mean_dx);
                           }
                         }
                       }
                     });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return tape.record("relu", std::move(out), {x}, [=](Tape<T>& tp, std::size_t self) {
    const T* gy = tp.grad(self).data();
    const T* xv = tp.value(x).data();
    T* dx = tp.grad(x.id).data();
    const std::size_t count = tp.value(x).numel();
    for (std::size_t i = 0; i < count; ++i) dx[i] += xv[i] > T{0} ? gy[i] : T{0};
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.values()) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  return tape.record("sigmoid", std::move(out), {x}, [=](Tape<T>& tp, std::size_t self) {
    const T* gy = tp.grad(self).data();
    const T* y = tp.value(Var{self}).data();
    T* dx = tp.grad(x.id).data();
    const std::size_t count = tp.value(x).numel();
    for (std::size_t i = 0; i < count; ++i) dx[i] += gy[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(w);
  require_rank(xs, 2, "linear", "input");
  require_rank(ws, 2, "linear", "weight");
  const std::size_t n = xs[0], din = xs[1], dout = ws[0];
  if (ws[1] != din) {
    throw ShapeError("linear: weight " + shape_str(ws) + " does not accept input " + shape_str(xs));
  }
  if (tape.shape(b) != Shape{dout}) throw ShapeError("linear: bias must have shape [" + std::to_string(dout) + "]");
  Tensor<T> out({n, dout});
  {
    CMapRM<T> X(tape.value(x).data(), n, din);
    CMapRM<T> W(tape.value(w).data(), dout, din);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(tape.value(b).data(), dout);
    MapRM<T> Y(out.data(), n, dout);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += B;
  }
  return tape.record("linear", std::move(out), {x, w, b}, [=](Tape<T>& tp, std::size_t self) {
    CMapRM<T> G(tp.grad(self).data(), n, dout);
    if (tp.requires_grad(x)) {
      MapRM<T> dX(tp.grad(x.id).data(), n, din);
      CMapRM<T> W(tp.value(w).data(), dout, din);
      dX.noalias() += G * W;
    }
    if (tp.requires_grad(w)) {
      MapRM<T> dW(tp.grad(w.id).data(), dout, din);
      CMapRM<T> X(tp.value(x).data(), n, din);
      dW.noalias() += G.transpose() * X;
    }
    if (tp.requires_grad(b)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> dB(tp.grad(b.id).data(), dout);
      dB += G.colwise().sum();
    }
  });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x, std::vector<std::size_t> axes) {
  const Shape xs = tape.shape(x);
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  if (axes.empty()) throw ShapeError("global_avg_pool: no axes given");
  for (std::size_t a : axes) {
    if (a >= xs.size()) {
      throw ShapeError("global_avg_pool: axis " + std::to_string(a) + " out of range for shape " + shape_str(xs));
    }
  }
  Shape out_shape;
  std::vector<bool> reduced(xs.size(), false);
  std::size_t count = 1;
  for (std::size_t a : axes) {
    reduced[a] = true;
    count *= xs[a];
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!reduced[i]) out_shape.push_back(xs[i]);
  }
  // Output offset of every input element.
  auto map = std::make_shared<std::vector<std::size_t>>(shape_numel(xs));
  {
    std::vector<std::size_t> idx(xs.size(), 0);
    for (std::size_t flat = 0; flat < map->size(); ++flat) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < xs.size(); ++d) {
        if (!reduced[d]) o = o * xs[d] + idx[d];
      }
      (*map)[flat] = o;
      for (std::size_t d = xs.size(); d-- > 0;) {
        if (++idx[d] < xs[d]) break;
        idx[d] = 0;
      }
    }
  }
  Tensor<T> out(out_shape);
  std::vector<double> acc(out.numel(), 0.0);
  const Tensor<T>& xv = tape.value(x);
  for (std::size_t i = 0; i < map->size(); ++i) acc[(*map)[i]] += xv[i];
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i] / static_cast<double>(count));

  return tape.record("global_avg_pool", std::move(out), {x}, [=](Tape<T>& tp, std::size_t self) {
    const T* gy = tp.grad(self).data();
    T* dx = tp.grad(x.id).data();
    const T scale = static_cast<T>(1.0 / static_cast<double>(count));
    for (std::size_t i = 0; i < map->size(); ++i) dx[i] += gy[(*map)[i]] * scale;
  });
}

template <typename T>
Var avg_pool2x2(Tape<T>& tape, Var x) {
  const Shape& xs = tape.shape(x);
  require_rank(xs, 4, "avg_pool2x2", "input");
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  if (h < 2 || w < 2) throw ShapeError("avg_pool2x2: input " + shape_str(xs) + " is smaller than 2x2");
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> out({n, c, ho, wo});
  const Tensor<T>& xv = tape.value(x);
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = xv.data() + p * h * w;
    T* dst = out.data() + p * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        const T* a = src + 2 * i * w + 2 * j;
        dst[i * wo + j] = (a[0] + a[1] + a[w] + a[w + 1]) * T{0.25};
      }
    }
  }
  return tape.record("avg_pool2x2", std::move(out), {x}, [=](Tape<T>& tp, std::size_t self) {
    const T* gy = tp.grad(self).data();
    T* dx = tp.grad(x.id).data();
    for (std::size_t p = 0; p < n * c; ++p) {
      const T* g = gy + p * ho * wo;
      T* d = dx + p * h * w;
      for (std::size_t i = 0; i < ho; ++i) {
        for (std::size_t j = 0; j < wo; ++j) {
          const T v = g[i * wo + j] * T{0.25};
          T* a = d + 2 * i * w + 2 * j;
          a[0] += v;
          a[1] += v;
          a[w] += v;
          a[w + 1] += v;
        }
      }
    }
  });
}

template <typename T>
Var log_softmax(Tape<T>& tape, Var x) {
  const Shape& xs = tape.shape(x);
  require_rank(xs, 2, "log_softmax", "input");
  const std::size_t n = xs[0], c = xs[1];
  Tensor<T> out(xs);
  const Tensor<T>& xv = tape.value(x);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xv.data() + r * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max<double>(m, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    const double lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = static_cast<T>(row[j] - lse);
  }
  return tape.record("log_softmax", std::move(out), {x}, [=](Tape<T>& tp, std::size_t self) {
    const T* gy = tp.grad(self).data();
    const T* y = tp.value(Var{self}).data();
    T* dx = tp.grad(x.id).data();
    for (std::size_t r = 0; r < n; ++r) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += gy[r * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        dx[r * c + j] += static_cast<T>(gy[r * c + j] - std::exp(static_cast<double>(y[r * c + j])) * gs);
      }
    }
  });
}

template <typename T>
Var concat_rows(Tape<T>& tape, Var a, Var b) {
  const Shape& as = tape.shape(a);
  const Shape& bs = tape.shape(b);
  require_rank(as, 2, "concat_rows", "first input");
  require_rank(bs, 2, "concat_rows", "second input");
  if (as[1] != bs[1]) throw ShapeError("concat_rows: widths differ, " + shape_str(as) + " vs " + shape_str(bs));
  const std::size_t na = tape.value(a).numel();
  Tensor<T> out({as[0] + bs[0], as[1]});
  std::copy_n(tape.value(a).data(), na, out.data());
  std::copy_n(tape.value(b).data(), tape.value(b).numel(), out.data() + na);
  return tape.record("concat_rows", std::move(out), {a, b}, [=](Tape<T>& tp, std::size_t self) {
    const T* gy = tp.grad(self).data();
    if (tp.requires_grad(a)) {
      T* da = tp.grad(a.id).data();
      for (std::size_t i = 0; i < na; ++i) da[i] += gy[i];
    }
    if (tp.requires_grad(b)) {
      Tensor<T>& gb = tp.grad(b.id);
      for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += gy[na + i];
    }
  });
}

template <typename T>
Var concat_cols(Tape<T>& tape, Var a, Var b) {
  const Shape& as = tape.shape(a);
  const Shape& bs = tape.shape(b);
  require_rank(as, 2, "concat_cols", "first input");
  require_rank(bs, 2, "concat_cols", "second input");
  if (as[0] != bs[0]) throw ShapeError("concat_cols: row counts differ, " + shape_str(as) + " vs " + shape_str(bs));
  const std::size_t n = as[0], da = as[1], db = bs[1];
  Tensor<T> out({n, da + db});
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(tape.value(a).data() + r * da, da, out.data() + r * (da + db));
    std::copy_n(tape.value(b).data() + r * db, db, out.data() + r * (da + db) + da);
  }
  return tape.record("concat_cols", std::move(out), {a, b}, [=](Tape<T>& tp, std::size_t self) {
    const T* gy = tp.grad(self).data();
    for (std::size_t r = 0; r < n; ++r) {
      if (tp.requires_grad(a)) {
        T* d = tp.grad(a.id).data() + r * da;
        for (std::size_t j = 0; j < da; ++j) d[j] += gy[r * (da + db) + j];
      }
      if (tp.requires_grad(b)) {
        T* d = tp.grad(b.id).data() + r * db;
        for (std::size_t j = 0; j < db; ++j) d[j] += gy[r * (da + db) + da + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Scalar reductions and losses

template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights) {
  if (weights.shape() != tape.shape(x)) {
    throw ShapeError("weighted_sum: weights " + shape_str(weights.shape()) + " vs input " + shape_str(tape.shape(x)));
  }
  double s = 0.0;
  const Tensor<T>& xv = tape.value(x);
  for (std::size_t i = 0; i < xv.numel(); ++i) s += static_cast<double>(xv[i]) * weights[i];
  auto wt = std::make_shared<Tensor<T>>(weights);
  return tape.record("weighted_sum", Tensor<T>({1}, {static_cast<T>(s)}), {x}, [=](Tape<T>& tp, std::size_t self) {
    const T g = tp.grad(self)[0];
    T* dx = tp.grad(x.id).data();
    for (std::size_t i = 0; i < wt->numel(); ++i) dx[i] += g * (*wt)[i];
  });
}

template <typename T>
Var sum_squares(Tape<T>& tape, Var x) {
  double s = 0.0;
  for (T v : tape.value(x).values()) s += static_cast<double>(v) * v;
  return tape.record("sum_squares", Tensor<T>({1}, {static_cast<T>(s)}), {x}, [=](Tape<T>& tp, std::size_t self) {
    const T g = tp.grad(self)[0];
    const T* xv = tp.value(x).data();
    T* dx = tp.grad(x.id).data();
    for (std::size_t i = 0; i < tp.value(x).numel(); ++i) dx[i] += T{2} * g * xv[i];
  });
}

template <typename T>
Var bce_with_logits(Tape<T>& tape, Var logits, const Tensor<T>& targets) {
  if (targets.shape() != tape.shape(logits)) {
    throw ShapeError("bce_with_logits: targets " + shape_str(targets.shape()) + " vs logits " +
                     shape_str(tape.shape(logits)));
  }
  const Tensor<T>& z = tape.value(logits);
  const std::size_t count = z.numel();
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double zi = z[i];
    // max(z,0) - z*y + log(1 + exp(-|z|))
    s += std::max(zi, 0.0) - zi * targets[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  auto tg = std::make_shared<Tensor<T>>(targets);
  return tape.record("bce_with_logits", Tensor<T>({1}, {static_cast<T>(s / static_cast<double>(count))}), {logits},
                     [=](Tape<T>& tp, std::size_t self) {
                       const double g = tp.grad(self)[0] / static_cast<double>(count);
                       const T* zv = tp.value(logits).data();
                       T* dz = tp.grad(logits.id).data();
                       for (std::size_t i = 0; i < count; ++i) {
                         const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(zv[i])));
                         dz[i] += static_cast<T>(g * (p - (*tg)[i]));
                       }
                     });
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, const std::vector<std::size_t>& targets) {
  const Shape& zs = tape.shape(logits);
  require_rank(zs, 2, "softmax_cross_entropy", "logits");
  const std::size_t n = zs[0], c = zs[1];
  if (targets.size() != n) throw ShapeError("softmax_cross_entropy: one target per row required");
  for (std::size_t t : targets) {
    if (t >= c) throw ShapeError("softmax_cross_entropy: target class " + std::to_string(t) + " out of range");
  }
  const Tensor<T>& z = tape.value(logits);
  auto probs = std::make_shared<AlignedVector<double>>(n * c);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = z.data() + r * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max<double>(m, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] = std::exp(row[j] - m) / s;
    loss += -(row[targets[r]] - m - std::log(s));
  }
  auto tg = std::make_shared<std::vector<std::size_t>>(targets);
  return tape.record("softmax_cross_entropy", Tensor<T>({1}, {static_cast<T>(loss / static_cast<double>(n))}), {logits},
                     [=](Tape<T>& tp, std::size_t self) {
                       const double g = tp.grad(self)[0] / static_cast<double>(n);
                       T* dz = tp.grad(logits.id).data();
                       for (std::size_t r = 0; r < n; ++r) {
                         for (std::size_t j = 0; j < c; ++j) {
                           const double onehot = j == (*tg)[r] ? 1.0 : 0.0;
                           dz[r * c + j] += static_cast<T>(g * ((*probs)[r * c + j] - onehot));
                         }
                       }
                     });
}

template <typename T>
Var nt_xent(Tape<T>& tape, Var latents, double temperature) {
  const Shape& zs = tape.shape(latents);
  require_rank(zs, 2, "nt_xent", "latents");
  const std::size_t m = zs[0], d = zs[1];
  if (m < 2 || m % 2 != 0) throw ShapeError("nt_xent: need an even number (2N >= 2) of latent rows, got " + std::to_string(m));
  if (!(temperature > 0.0)) throw ConfigError("nt_xent: temperature must be > 0");
  const std::size_t half = m / 2;
  const Tensor<T>& z = tape.value(latents);

  auto unit = std::make_shared<AlignedVector<double>>(m * d);
  auto norms = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(z[i * d + k]) * z[i * d + k];
    const double nrm = std::sqrt(s);
    if (!(nrm > 0.0)) throw NumericError("nt_xent: latent row " + std::to_string(i) + " has zero norm");
    (*norms)[i] = nrm;
    for (std::size_t k = 0; k < d; ++k) (*unit)[i * d + k] = z[i * d + k] / nrm;
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> U(unit->data(), m, d);
  const Eigen::MatrixXd sim = U * U.transpose();

  // Softmax over k != i of sim(i,k)/tau, stabilized by the row max.
  auto soft = std::make_shared<Eigen::MatrixXd>(Eigen::MatrixXd::Zero(m, m));
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t pos = i < half ? i + half : i - half;
    double mx = -1e300;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) mx = std::max(mx, sim(i, k) / temperature);
    }
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) s += std::exp(sim(i, k) / temperature - mx);
    }
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) (*soft)(i, k) = std::exp(sim(i, k) / temperature - mx) / s;
    }
    loss += -(sim(i, pos) / temperature - mx - std::log(s));
  }
  loss /= static_cast<double>(m);

  return tape.record("nt_xent", Tensor<T>({1}, {static_cast<T>(loss)}), {latents},
                     [=](Tape<T>& tp, std::size_t self) {
                       const double g = tp.grad(self)[0];
                       // dL/dsim(i,k) for the anchor-i term, then symmetrized.
                       Eigen::MatrixXd gs = *soft;
                       for (std::size_t i = 0; i < m; ++i) gs(i, i < half ? i + half : i - half) -= 1.0;
                       gs *= g / (temperature * static_cast<double>(m));
                       const Eigen::MatrixXd gsym = gs + gs.transpose();
                       Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Uu(
                           unit->data(), m, d);
                       const Eigen::MatrixXd du = gsym * Uu;
                       T* dz = tp.grad(latents.id).data();
                       for (std::size_t i = 0; i < m; ++i) {
                         const double proj = du.row(static_cast<long>(i)).dot(Uu.row(static_cast<long>(i)));
                         for (std::size_t k = 0; k < d; ++k) {
                           dz[i * d + k] += static_cast<T>((du(static_cast<long>(i), static_cast<long>(k)) -
                                                            proj * (*unit)[i * d + k]) /
                                                           (*norms)[i]);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------

#define MFCL_INSTANTIATE(T)                                                                      \
  template class Tape<T>;                                                                        \
  template Var conv1d<T>(Tape<T>&, Var, Var, Var, std::size_t);                                  \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, std::size_t, Padding);                         \
  template Var group_norm<T>(Tape<T>&, Var, std::size_t, Var, Var, double);                      \
  template Var relu<T>(Tape<T>&, Var);                                                           \
  template Var sigmoid<T>(Tape<T>&, Var);                                                        \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                               \
  template Var global_avg_pool<T>(Tape<T>&, Var, std::vector<std::size_t>);                      \
  template Var avg_pool2x2<T>(Tape<T>&, Var);                                                    \
  template Var log_softmax<T>(Tape<T>&, Var);                                                    \
  template Var concat_rows<T>(Tape<T>&, Var, Var);                                               \
  template Var concat_cols<T>(Tape<T>&, Var, Var);                                               \
  template Var weighted_sum<T>(Tape<T>&, Var, const Tensor<T>&);                                 \
  template Var sum_squares<T>(Tape<T>&, Var);                                                    \
  template Var bce_with_logits<T>(Tape<T>&, Var, const Tensor<T>&);                              \
  template Var softmax_cross_entropy<T>(Tape<T>&, Var, const std::vector<std::size_t>&);         \
  template Var nt_xent<T>(Tape<T>&, Var, double);

MFCL_INSTANTIATE(float)
MFCL_INSTANTIATE(double)

#undef MFCL_INSTANTIATE

}  // namespace mfcl::ad
