#include "amd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

namespace amd::ops {

namespace {

using std::ptrdiff_t;

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (!t.defined()) shape_error(op, std::string(name) + " is undefined");
  if (t.rank() != rank) {
    shape_error(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got shape " +
                        shape_str(t.shape()));
  }
}

struct ConvGeometry {
  ptrdiff_t n, cin, h, w, cout, kh, kw, pad, ho, wo;
};

ConvGeometry conv_geometry(const char* op, const Tensor& input, const Tensor& weight, std::size_t padding,
                           bool depthwise) {
  require_rank(input, 4, op, "input");
  require_rank(weight, 4, op, "weight");
  ConvGeometry g{};
  g.n = static_cast<ptrdiff_t>(input.dim(0));
  g.cin = static_cast<ptrdiff_t>(input.dim(1));
  g.h = static_cast<ptrdiff_t>(input.dim(2));
  g.w = static_cast<ptrdiff_t>(input.dim(3));
  g.cout = static_cast<ptrdiff_t>(weight.dim(0));
  g.kh = static_cast<ptrdiff_t>(weight.dim(2));
  g.kw = static_cast<ptrdiff_t>(weight.dim(3));
  g.pad = static_cast<ptrdiff_t>(padding);
  if (depthwise) {
    if (weight.dim(1) != 1) {
      shape_error(op, "weight dim 1 must be 1 for depthwise, got " + std::to_string(weight.dim(1)));
    }
    if (g.cout != g.cin) {
      shape_error(op, "weight channel count (dim 0) " + std::to_string(g.cout) +
                          " does not match input channels (dim 1) " + std::to_string(g.cin));
    }
  } else if (static_cast<ptrdiff_t>(weight.dim(1)) != g.cin) {
    shape_error(op, "weight input channels (dim 1) " + std::to_string(weight.dim(1)) +
                        " does not match input channels (dim 1) " + std::to_string(g.cin));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) {
    shape_error(op, "kernel extents must be odd, got " + std::to_string(g.kh) + "x" + std::to_string(g.kw));
  }
  g.ho = g.h + 2 * g.pad - g.kh + 1;
  g.wo = g.w + 2 * g.pad - g.kw + 1;
  if (g.ho < 1) shape_error(op, "kernel height " + std::to_string(g.kh) + " exceeds padded input height");
  if (g.wo < 1) shape_error(op, "kernel width " + std::to_string(g.kw) + " exceeds padded input width");
  return g;
}

void check_bias(const char* op, const Tensor& bias, std::size_t channels) {
  if (!bias.defined()) return;
  if (bias.numel() != channels) {
    shape_error(op, "bias length " + std::to_string(bias.numel()) + " does not match output channels " +
                        std::to_string(channels));
  }
}

// Range of output indices o such that o + k - pad lies in [0, extent).
inline std::pair<ptrdiff_t, ptrdiff_t> valid_range(ptrdiff_t k, ptrdiff_t pad, ptrdiff_t extent, ptrdiff_t out) {
  return {std::max<ptrdiff_t>(0, pad - k), std::min<ptrdiff_t>(out, extent + pad - k)};
}

// Shared kernel for dense and depthwise convolutions. In depthwise mode the
// input channel loop collapses to ci == co and weight dim 1 is 1.
void conv_forward(const ConvGeometry& g, bool depthwise, const double* in, const double* wt, const double* bias,
                  double* out) {
  const ptrdiff_t wci = depthwise ? 1 : g.cin;
  for (ptrdiff_t n = 0; n < g.n; ++n) {
    for (ptrdiff_t co = 0; co < g.cout; ++co) {
      double* plane = out + (n * g.cout + co) * g.ho * g.wo;
      std::fill(plane, plane + g.ho * g.wo, bias ? bias[co] : 0.0);
      const ptrdiff_t ci_lo = depthwise ? co : 0;
      const ptrdiff_t ci_hi = depthwise ? co + 1 : g.cin;
      for (ptrdiff_t ci = ci_lo; ci < ci_hi; ++ci) {
        const double* src = in + (n * g.cin + ci) * g.h * g.w;
        const double* kern = wt + (co * wci + (depthwise ? 0 : ci)) * g.kh * g.kw;
        for (ptrdiff_t ki = 0; ki < g.kh; ++ki) {
          const auto [oh_lo, oh_hi] = valid_range(ki, g.pad, g.h, g.ho);
          for (ptrdiff_t kj = 0; kj < g.kw; ++kj) {
            const double wv = kern[ki * g.kw + kj];
            const auto [ow_lo, ow_hi] = valid_range(kj, g.pad, g.w, g.wo);
            const ptrdiff_t shift = kj - g.pad;
            for (ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
              const double* src_row = src + (oh + ki - g.pad) * g.w + shift;
              double* dst_row = plane + oh * g.wo;
              for (ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) dst_row[ow] += wv * src_row[ow];
            }
          }
        }
      }
    }
  }
}

void conv_backward(const ConvGeometry& g, bool depthwise, const double* in, const double* wt, const double* gout,
                   double* gin, double* gwt, double* gbias) {
  const ptrdiff_t wci = depthwise ? 1 : g.cin;
  for (ptrdiff_t n = 0; n < g.n; ++n) {
    for (ptrdiff_t co = 0; co < g.cout; ++co) {
      const double* gplane = gout + (n * g.cout + co) * g.ho * g.wo;
      if (gbias) {
        double s = 0.0;
        for (ptrdiff_t i = 0; i < g.ho * g.wo; ++i) s += gplane[i];
        gbias[co] += s;
      }
      const ptrdiff_t ci_lo = depthwise ? co : 0;
      const ptrdiff_t ci_hi = depthwise ? co + 1 : g.cin;
      for (ptrdiff_t ci = ci_lo; ci < ci_hi; ++ci) {
        const ptrdiff_t src_off = (n * g.cin + ci) * g.h * g.w;
        const ptrdiff_t k_off = (co * wci + (depthwise ? 0 : ci)) * g.kh * g.kw;
        for (ptrdiff_t ki = 0; ki < g.kh; ++ki) {
          const auto [oh_lo, oh_hi] = valid_range(ki, g.pad, g.h, g.ho);
          for (ptrdiff_t kj = 0; kj < g.kw; ++kj) {
            const auto [ow_lo, ow_hi] = valid_range(kj, g.pad, g.w, g.wo);
            const ptrdiff_t shift = kj - g.pad;
            const double wv = wt[k_off + ki * g.kw + kj];
            double wacc = 0.0;
            for (ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
              const ptrdiff_t row = src_off + (oh + ki - g.pad) * g.w + shift;
              const double* grow = gplane + oh * g.wo;
              if (gwt) {
                const double* src_row = in + row;
                for (ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) wacc += grow[ow] * src_row[ow];
              }
              if (gin) {
                double* gin_row = gin + row;
                for (ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) gin_row[ow] += wv * grow[ow];
              }
            }
            if (gwt) gwt[k_off + ki * g.kw + kj] += wacc;
          }
        }
      }
    }
  }
}

Tensor convolution(const char* op, Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
                   std::size_t padding, bool depthwise) {
  const ConvGeometry g = conv_geometry(op, input, weight, padding, depthwise);
  check_bias(op, bias, static_cast<std::size_t>(g.cout));
  Tensor out(Shape{static_cast<std::size_t>(g.n), static_cast<std::size_t>(g.cout),
                   static_cast<std::size_t>(g.ho), static_cast<std::size_t>(g.wo)});
  conv_forward(g, depthwise, input.data().data(), weight.data().data(),
               bias.defined() ? bias.data().data() : nullptr, out.data().data());
  if (Tape::tracks({&input, &weight, &bias})) {
    tape.record(op, {input, weight, bias}, out, [g, depthwise, input = input, weight = weight, bias = bias, out]() mutable {
      double* gin = input.requires_grad() ? input.grad().data() : nullptr;
      double* gwt = weight.requires_grad() ? weight.grad().data() : nullptr;
      double* gb = bias.defined() && bias.requires_grad() ? bias.grad().data() : nullptr;
      conv_backward(g, depthwise, input.data().data(), weight.data().data(), out.grad().data(), gin, gwt, gb);
    });
  }
  return out;
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t padding) {
  return convolution("conv2d", tape, input, weight, bias, padding, false);
}

Tensor depthwise_conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
                        std::size_t padding) {
  return convolution("depthwise_conv2d", tape, input, weight, bias, padding, true);
}

Tensor linear(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const std::size_t n = input.dim(0), cin = input.dim(1), cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    shape_error("linear", "weight inner dim (dim 1) " + std::to_string(weight.dim(1)) +
                              " does not match input features (dim 1) " + std::to_string(cin));
  }
  check_bias("linear", bias, cout);
  Tensor out(Shape{n, cout});
  {
    const auto x = input.data();
    const auto w = weight.data();
    auto y = out.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < cout; ++o) {
        double acc = bias.defined() ? bias[o] : 0.0;
        for (std::size_t k = 0; k < cin; ++k) acc += x[i * cin + k] * w[o * cin + k];
        y[i * cout + o] = acc;
      }
    }
  }
  if (Tape::tracks({&input, &weight, &bias})) {
    tape.record("linear", {input, weight, bias}, out, [=, input = input, weight = weight, bias = bias]() mutable {
      const auto gy = out.grad();
      const auto x = input.data();
      const auto w = weight.data();
      if (input.requires_grad()) {
        auto gx = input.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t k = 0; k < cin; ++k) gx[i * cin + k] += gy[i * cout + o] * w[o * cin + k];
      }
      if (weight.requires_grad()) {
        auto gw = weight.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t k = 0; k < cin; ++k) gw[o * cin + k] += gy[i * cout + o] * x[i * cin + k];
      }
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < cout; ++o) gb[o] += gy[i * cout + o];
      }
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > 0.0 ? xs[i] : 0.0;
  if (Tape::tracks({&x})) {
    tape.record("relu", {x}, out, [x = x, out]() mutable {
      const auto xs = x.data();
      const auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < xs.size(); ++i)
        if (xs[i] > 0.0) gx[i] += gy[i];
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] >= 0.0) {
      ys[i] = 1.0 / (1.0 + std::exp(-xs[i]));
    } else {
      const double e = std::exp(xs[i]);
      ys[i] = e / (1.0 + e);
    }
  }
  if (Tape::tracks({&x})) {
    tape.record("sigmoid", {x}, out, [x = x, out]() mutable {
      const auto ys = out.data();
      const auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < ys.size(); ++i) gx[i] += gy[i] * ys[i] * (1.0 - ys[i]);
    });
  }
  return out;
}

Tensor softmax_temp(Tape& tape, const Tensor& values, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("softmax_temp: temperature must be positive and finite, got " +
                                std::to_string(temperature));
  }
  require_rank(values, 2, "softmax_temp", "values");
  const std::size_t rows = values.dim(0), len = values.dim(1);
  Tensor out(values.shape());
  const auto v = values.data();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * len;
    double* dst = y.data() + r * len;
    const double mx = *std::max_element(row, row + len);
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      dst[i] = std::exp((row[i] - mx) / temperature);
      total += dst[i];
    }
    for (std::size_t i = 0; i < len; ++i) dst[i] /= total;
  }
  if (Tape::tracks({&values})) {
    tape.record("softmax_temp", {values}, out, [=, values = values]() mutable {
      const auto y = out.data();
      const auto gy = out.grad();
      auto gv = values.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += gy[r * len + i] * y[r * len + i];
        for (std::size_t i = 0; i < len; ++i) {
          gv[r * len + i] += y[r * len + i] * (gy[r * len + i] - dot) / temperature;
        }
      }
    });
  }
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out(Shape{n, c});
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += xs[p * hw + i];
    ys[p] = s / static_cast<double>(hw);
  }
  if (Tape::tracks({&x})) {
    tape.record("global_avg_pool", {x}, out, [=, x = x]() mutable {
      const auto gy = out.grad();
      auto gx = x.grad();
      const double inv = 1.0 / static_cast<double>(hw);
      for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += gy[p] * inv;
    });
  }
  return out;
}

Tensor avg_pool2(Tape& tape, const Tensor& x) {
  require_rank(x, 4, "avg_pool2", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 || w % 2) shape_error("avg_pool2", "spatial extents must be even, got " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out(Shape{n, c, ho, wo});
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = xs.data() + p * h * w;
    double* dst = ys.data() + p * ho * wo;
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        dst[i * wo + j] = 0.25 * (src[2 * i * w + 2 * j] + src[2 * i * w + 2 * j + 1] +
                                  src[(2 * i + 1) * w + 2 * j] + src[(2 * i + 1) * w + 2 * j + 1]);
  }
  if (Tape::tracks({&x})) {
    tape.record("avg_pool2", {x}, out, [=, x = x]() mutable {
      const auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t p = 0; p < n * c; ++p) {
        double* dst = gx.data() + p * h * w;
        const double* g = gy.data() + p * ho * wo;
        for (std::size_t i = 0; i < ho; ++i)
          for (std::size_t j = 0; j < wo; ++j) {
            const double q = 0.25 * g[i * wo + j];
            dst[2 * i * w + 2 * j] += q;
            dst[2 * i * w + 2 * j + 1] += q;
            dst[(2 * i + 1) * w + 2 * j] += q;
            dst[(2 * i + 1) * w + 2 * j + 1] += q;
          }
      }
    });
  }
  return out;
}

Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "hadamard", "a");
  if (!b.defined()) shape_error("hadamard", "b is undefined");
  const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  const Shape& bs = b.shape();
  const bool per_channel = (bs == Shape{n, c}) || (bs == Shape{n, c, 1, 1});
  const bool per_position = bs == Shape{n, 1, a.dim(2), a.dim(3)};
  if (!per_channel && !per_position) {
    shape_error("hadamard", "b shape " + shape_str(bs) + " is not broadcastable as [N,C,1,1] or [N,1,H,W] against " +
                                shape_str(a.shape()));
  }
  // Index of the b element that multiplies a[n, ch, pos].
  auto b_index = [=](std::size_t s, std::size_t ch, std::size_t pos) {
    return per_channel ? s * c + ch : s * hw + pos;
  };
  Tensor out(a.shape());
  {
    const auto as = a.data();
    const auto bv = b.data();
    auto ys = out.data();
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t pos = 0; pos < hw; ++pos) {
          const std::size_t i = (s * c + ch) * hw + pos;
          ys[i] = as[i] * bv[b_index(s, ch, pos)];
        }
  }
  if (Tape::tracks({&a, &b})) {
    tape.record("hadamard", {a, b}, out, [=, a = a, b = b]() mutable {
      const auto gy = out.grad();
      const auto as = a.data();
      const auto bv = b.data();
      const bool ga = a.requires_grad(), gb = b.requires_grad();
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t pos = 0; pos < hw; ++pos) {
            const std::size_t i = (s * c + ch) * hw + pos;
            const std::size_t j = b_index(s, ch, pos);
            if (ga) a.grad()[i] += gy[i] * bv[j];
            if (gb) b.grad()[j] += gy[i] * as[i];
          }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const auto as = a.data();
  const auto bs = b.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] + bs[i];
  if (Tape::tracks({&a, &b})) {
    tape.record("add", {a, b}, out, [a = a, b = b, out]() mutable {
      const auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  Tensor out(x.shape());
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = factor * xs[i];
  if (Tape::tracks({&x})) {
    tape.record("scale", {x}, out, [x = x, out, factor]() mutable {
      const auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += factor * gy[i];
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (Tape::tracks({&x})) {
    tape.record("sum", {x}, out, [x = x, out]() mutable {
      const double g = out.grad()[0];
      for (double& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor sum_squared_error(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sum_squared_error");
  const auto as = a.data();
  const auto bs = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < as.size(); ++i) {
    const double d = as[i] - bs[i];
    s += d * d;
  }
  Tensor out = Tensor::scalar(s);
  if (Tape::tracks({&a, &b})) {
    tape.record("sum_squared_error", {a, b}, out, [a = a, b = b, out]() mutable {
      const double g = out.grad()[0];
      const auto as = a.data();
      const auto bs = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < as.size(); ++i) ga[i] += 2.0 * g * (as[i] - bs[i]);
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < as.size(); ++i) gb[i] -= 2.0 * g * (as[i] - bs[i]);
      }
    });
  }
  return out;
}

Tensor bce_with_logits(Tape& tape, const Tensor& logits, const Tensor& labels) {
  require_same_shape(logits, labels, "bce_with_logits");
  const auto z = logits.data();
  const auto y = labels.data();
  for (double v : y) {
    if (v != 0.0 && v != 1.0) {
      throw std::invalid_argument("bce_with_logits: labels must be 0 or 1, got " + std::to_string(v));
    }
  }
  const double inv = 1.0 / static_cast<double>(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    s += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  Tensor out = Tensor::scalar(s * inv);
  if (Tape::tracks({&logits})) {
    tape.record("bce_with_logits", {logits, labels}, out, [logits = logits, labels = labels, out, inv]() mutable {
      const double g = out.grad()[0] * inv;
      const auto z = logits.data();
      const auto y = labels.data();
      auto gz = logits.grad();
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double p = z[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-z[i])) : std::exp(z[i]) / (1.0 + std::exp(z[i]));
        gz[i] += g * (p - y[i]);
      }
    });
  }
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  Tensor out = x.reshaped(std::move(shape));
  if (Tape::tracks({&x})) {
    tape.record("reshape", {x}, out, [x = x, out]() mutable {
      const auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    });
  }
  return out;
}

}  // namespace amd::ops
