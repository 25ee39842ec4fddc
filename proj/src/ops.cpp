#include "prunelab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace prunelab {

namespace {

using DataPtr = std::shared_ptr<Tensor::Data>;

void ensure_grad_buf(Tensor::Data& d) {
  if (d.grad.empty()) d.grad.assign(d.values.size(), 0.0f);
}

bool wants_grad(const Tensor& t) { return t.requires_grad(); }

struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int stride, padding;
  int ho, wo;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight,
                   const Tensor& bias, int stride, int padding) {
  check(input.ndim() == 4, "conv2d input must be 4-d, got ",
        shape_str(input.shape()));
  check(weight.ndim() == 4, "conv2d weight must be 4-d, got ",
        shape_str(weight.shape()));
  check(bias.ndim() == 1 && bias.dim(0) == weight.dim(0),
        "conv2d bias shape ", shape_str(bias.shape()),
        " does not match weight ", shape_str(weight.shape()));
  check(stride >= 1, "conv2d stride must be positive, got ", stride);
  check(padding >= 0, "conv2d padding must be non-negative, got ", padding);
  ConvDims d;
  d.n = input.dim(0);
  d.cin = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.cout = weight.dim(0);
  d.kh = weight.dim(2);
  d.kw = weight.dim(3);
  d.stride = stride;
  d.padding = padding;
  check(weight.dim(1) == d.cin, "conv2d channel mismatch: input ",
        shape_str(input.shape()), " vs weight ", shape_str(weight.shape()));
  d.ho = (d.h + 2 * padding - d.kh) / stride + 1;
  d.wo = (d.w + 2 * padding - d.kw) / stride + 1;
  check(d.h + 2 * padding - d.kh >= 0 && d.w + 2 * padding - d.kw >= 0 &&
            d.ho >= 1 && d.wo >= 1,
        "conv2d produces non-positive output extent for input ",
        shape_str(input.shape()), ", kernel ", shape_str(weight.shape()),
        ", stride ", stride, ", padding ", padding);
  return d;
}

// Output-index range [lo, hi] such that o*stride - padding + k stays inside
// [0, limit).
inline void valid_range(int limit, int out_extent, int stride, int padding,
                        int k, int& lo, int& hi) {
  const int shift = padding - k;
  lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
  const int top = limit - 1 + shift;
  hi = top < 0 ? -1 : std::min(out_extent - 1, top / stride);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, Tape* tape) {
  const ConvDims d = conv_dims(input, weight, bias, stride, padding);
  Tensor out = Tensor::zeros({d.n, d.cout, d.ho, d.wo});

  const float* in = input.values().data();
  const float* w = weight.values().data();
  const float* b = bias.values().data();
  float* o = out.values_mut().data();

  const int in_ch = d.h * d.w;
  const int out_ch = d.ho * d.wo;
  for (int n = 0; n < d.n; ++n) {
    for (int co = 0; co < d.cout; ++co) {
      float* o_map = o + (static_cast<std::int64_t>(n) * d.cout + co) * out_ch;
      std::fill(o_map, o_map + out_ch, b[co]);
      for (int ci = 0; ci < d.cin; ++ci) {
        const float* in_map =
            in + (static_cast<std::int64_t>(n) * d.cin + ci) * in_ch;
        const float* w_k = w + ((static_cast<std::int64_t>(co) * d.cin + ci) *
                                d.kh * d.kw);
        for (int i = 0; i < d.kh; ++i) {
          int oh_lo, oh_hi;
          valid_range(d.h, d.ho, d.stride, d.padding, i, oh_lo, oh_hi);
          for (int j = 0; j < d.kw; ++j) {
            const float wv = w_k[i * d.kw + j];
            if (wv == 0.0f) continue;
            int ow_lo, ow_hi;
            valid_range(d.w, d.wo, d.stride, d.padding, j, ow_lo, ow_hi);
            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
              const int ih = oh * d.stride - d.padding + i;
              const float* in_row = in_map + ih * d.w;
              float* o_row = o_map + oh * d.wo;
              const int base = -d.padding + j;
              for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                o_row[ow] += wv * in_row[ow * d.stride + base];
              }
            }
          }
        }
      }
    }
  }

  const bool rec =
      tape && (wants_grad(input) || wants_grad(weight) || wants_grad(bias));
  if (rec) {
    out.set_requires_grad(true);
    DataPtr in_d = input.raw(), w_d = weight.raw(), b_d = bias.raw(),
            o_d = out.raw();
    tape->record([in_d, w_d, b_d, o_d, d]() {
      if (o_d->grad.empty()) return;
      const float* go = o_d->grad.data();
      const int in_ch = d.h * d.w;
      const int out_ch = d.ho * d.wo;
      if (in_d->requires_grad) {
        ensure_grad_buf(*in_d);
        float* gi = in_d->grad.data();
        const float* w = w_d->values.data();
        for (int n = 0; n < d.n; ++n) {
          for (int co = 0; co < d.cout; ++co) {
            const float* go_map =
                go + (static_cast<std::int64_t>(n) * d.cout + co) * out_ch;
            for (int ci = 0; ci < d.cin; ++ci) {
              float* gi_map =
                  gi + (static_cast<std::int64_t>(n) * d.cin + ci) * in_ch;
              const float* w_k =
                  w + (static_cast<std::int64_t>(co) * d.cin + ci) * d.kh *
                          d.kw;
              for (int i = 0; i < d.kh; ++i) {
                int oh_lo, oh_hi;
                valid_range(d.h, d.ho, d.stride, d.padding, i, oh_lo, oh_hi);
                for (int j = 0; j < d.kw; ++j) {
                  const float wv = w_k[i * d.kw + j];
                  if (wv == 0.0f) continue;
                  int ow_lo, ow_hi;
                  valid_range(d.w, d.wo, d.stride, d.padding, j, ow_lo, ow_hi);
                  for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                    const int ih = oh * d.stride - d.padding + i;
                    float* gi_row = gi_map + ih * d.w;
                    const float* go_row = go_map + oh * d.wo;
                    const int base = -d.padding + j;
                    for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                      gi_row[ow * d.stride + base] += wv * go_row[ow];
                    }
                  }
                }
              }
            }
          }
        }
      }
      if (w_d->requires_grad) {
        ensure_grad_buf(*w_d);
        float* gw = w_d->grad.data();
        const float* in = in_d->values.data();
        for (int co = 0; co < d.cout; ++co) {
          for (int ci = 0; ci < d.cin; ++ci) {
            float* gw_k = gw + (static_cast<std::int64_t>(co) * d.cin + ci) *
                                   d.kh * d.kw;
            for (int i = 0; i < d.kh; ++i) {
              int oh_lo, oh_hi;
              valid_range(d.h, d.ho, d.stride, d.padding, i, oh_lo, oh_hi);
              for (int j = 0; j < d.kw; ++j) {
                int ow_lo, ow_hi;
                valid_range(d.w, d.wo, d.stride, d.padding, j, ow_lo, ow_hi);
                double acc = 0.0;
                for (int n = 0; n < d.n; ++n) {
                  const float* in_map =
                      in + (static_cast<std::int64_t>(n) * d.cin + ci) * in_ch;
                  const float* go_map =
                      go +
                      (static_cast<std::int64_t>(n) * d.cout + co) * out_ch;
                  for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                    const int ih = oh * d.stride - d.padding + i;
                    const float* in_row = in_map + ih * d.w;
                    const float* go_row = go_map + oh * d.wo;
                    const int base = -d.padding + j;
                    for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                      acc += static_cast<double>(in_row[ow * d.stride + base]) *
                             go_row[ow];
                    }
                  }
                }
                gw_k[i * d.kw + j] += static_cast<float>(acc);
              }
            }
          }
        }
      }
      if (b_d->requires_grad) {
        ensure_grad_buf(*b_d);
        for (int co = 0; co < d.cout; ++co) {
          double acc = 0.0;
          for (int n = 0; n < d.n; ++n) {
            const float* go_map =
                go + (static_cast<std::int64_t>(n) * d.cout + co) * out_ch;
            for (int k = 0; k < out_ch; ++k) acc += go_map[k];
          }
          b_d->grad[static_cast<size_t>(co)] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias,
             Tape* tape) {
  check(input.ndim() == 2, "dense input must be 2-d, got ",
        shape_str(input.shape()));
  check(weight.ndim() == 2, "dense weight must be 2-d, got ",
        shape_str(weight.shape()));
  const int n = input.dim(0), dcols = input.dim(1);
  const int wd = weight.dim(0), m = weight.dim(1);
  check(dcols == wd, "dense dimension mismatch: input ",
        shape_str(input.shape()), " vs weight ", shape_str(weight.shape()));
  check(bias.ndim() == 1 && bias.dim(0) == m, "dense bias shape ",
        shape_str(bias.shape()), " does not match weight ",
        shape_str(weight.shape()));

  Tensor out = Tensor::zeros({n, m});
  const float* in = input.values().data();
  const float* w = weight.values().data();
  const float* b = bias.values().data();
  float* o = out.values_mut().data();
  for (int r = 0; r < n; ++r) {
    float* o_row = o + static_cast<std::int64_t>(r) * m;
    std::copy(b, b + m, o_row);
    const float* in_row = in + static_cast<std::int64_t>(r) * dcols;
    for (int k = 0; k < dcols; ++k) {
      const float x = in_row[k];
      if (x == 0.0f) continue;
      const float* w_row = w + static_cast<std::int64_t>(k) * m;
      for (int c = 0; c < m; ++c) o_row[c] += x * w_row[c];
    }
  }

  const bool rec =
      tape && (wants_grad(input) || wants_grad(weight) || wants_grad(bias));
  if (rec) {
    out.set_requires_grad(true);
    DataPtr in_d = input.raw(), w_d = weight.raw(), b_d = bias.raw(),
            o_d = out.raw();
    tape->record([in_d, w_d, b_d, o_d, n, dcols, m]() {
      if (o_d->grad.empty()) return;
      const float* go = o_d->grad.data();
      if (in_d->requires_grad) {
        ensure_grad_buf(*in_d);
        float* gi = in_d->grad.data();
        const float* w = w_d->values.data();
        for (int r = 0; r < n; ++r) {
          const float* go_row = go + static_cast<std::int64_t>(r) * m;
          float* gi_row = gi + static_cast<std::int64_t>(r) * dcols;
          for (int k = 0; k < dcols; ++k) {
            const float* w_row = w + static_cast<std::int64_t>(k) * m;
            double acc = 0.0;
            for (int c = 0; c < m; ++c) acc += static_cast<double>(w_row[c]) * go_row[c];
            gi_row[k] += static_cast<float>(acc);
          }
        }
      }
      if (w_d->requires_grad) {
        ensure_grad_buf(*w_d);
        float* gw = w_d->grad.data();
        const float* in = in_d->values.data();
        for (int r = 0; r < n; ++r) {
          const float* in_row = in + static_cast<std::int64_t>(r) * dcols;
          const float* go_row = go + static_cast<std::int64_t>(r) * m;
          for (int k = 0; k < dcols; ++k) {
            const float x = in_row[k];
            if (x == 0.0f) continue;
            float* gw_row = gw + static_cast<std::int64_t>(k) * m;
            for (int c = 0; c < m; ++c) gw_row[c] += x * go_row[c];
          }
        }
      }
      if (b_d->requires_grad) {
        ensure_grad_buf(*b_d);
        for (int c = 0; c < m; ++c) {
          double acc = 0.0;
          for (int r = 0; r < n; ++r) acc += go[static_cast<std::int64_t>(r) * m + c];
          b_d->grad[static_cast<size_t>(c)] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                   const Tensor& beta, BatchNormState& state, Mode mode,
                   float momentum, float epsilon, Tape* tape) {
  check(input.ndim() == 4, "batchnorm2d input must be 4-d, got ",
        shape_str(input.shape()));
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  check(gamma.ndim() == 1 && gamma.dim(0) == c && beta.ndim() == 1 &&
            beta.dim(0) == c,
        "batchnorm2d parameter channels do not match input ",
        shape_str(input.shape()));
  check(static_cast<int>(state.running_mean.size()) == c &&
            static_cast<int>(state.running_var.size()) == c,
        "batchnorm2d state channels do not match input ",
        shape_str(input.shape()));

  const std::int64_t per_ch = static_cast<std::int64_t>(n) * h * w;
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const float* in = input.values().data();
  const float* g = gamma.values().data();
  const float* bt = beta.values().data();

  Tensor out = Tensor::zeros({n, c, h, w});
  float* o = out.values_mut().data();

  if (mode == Mode::Eval) {
    check(state.initialized,
          "batchnorm2d eval mode requires initialized running statistics");
    std::vector<float> sc(static_cast<size_t>(c)), sh(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
      const float is =
          1.0f / std::sqrt(state.running_var[static_cast<size_t>(ch)] + epsilon);
      sc[static_cast<size_t>(ch)] = g[ch] * is;
      sh[static_cast<size_t>(ch)] =
          bt[ch] - state.running_mean[static_cast<size_t>(ch)] * g[ch] * is;
    }
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < c; ++ch) {
        const float* ip = in + (static_cast<std::int64_t>(b) * c + ch) * plane;
        float* op = o + (static_cast<std::int64_t>(b) * c + ch) * plane;
        const float a = sc[static_cast<size_t>(ch)];
        const float s = sh[static_cast<size_t>(ch)];
        for (std::int64_t k = 0; k < plane; ++k) op[k] = ip[k] * a + s;
      }
    }
    const bool rec = tape && (wants_grad(input) || wants_grad(gamma) ||
                              wants_grad(beta));
    if (rec) {
      out.set_requires_grad(true);
      DataPtr in_d = input.raw(), g_d = gamma.raw(), b_d = beta.raw(),
              o_d = out.raw();
      std::vector<float> rm = state.running_mean, rv = state.running_var;
      tape->record([in_d, g_d, b_d, o_d, rm, rv, n, c, plane, epsilon]() {
        if (o_d->grad.empty()) return;
        const float* go = o_d->grad.data();
        if (in_d->requires_grad) {
          ensure_grad_buf(*in_d);
          float* gi = in_d->grad.data();
          for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
              const float a =
                  g_d->values[static_cast<size_t>(ch)] /
                  std::sqrt(rv[static_cast<size_t>(ch)] + epsilon);
              const std::int64_t off =
                  (static_cast<std::int64_t>(b) * c + ch) * plane;
              for (std::int64_t k = 0; k < plane; ++k)
                gi[off + k] += go[off + k] * a;
            }
          }
        }
        if (g_d->requires_grad || b_d->requires_grad) {
          if (g_d->requires_grad) ensure_grad_buf(*g_d);
          if (b_d->requires_grad) ensure_grad_buf(*b_d);
          for (int ch = 0; ch < c; ++ch) {
            const float is =
                1.0f / std::sqrt(rv[static_cast<size_t>(ch)] + epsilon);
            double dg = 0.0, db = 0.0;
            for (int b = 0; b < n; ++b) {
              const std::int64_t off =
                  (static_cast<std::int64_t>(b) * c + ch) * plane;
              for (std::int64_t k = 0; k < plane; ++k) {
                const float xh =
                    (in_d->values[static_cast<size_t>(off + k)] -
                     rm[static_cast<size_t>(ch)]) *
                    is;
                dg += static_cast<double>(go[off + k]) * xh;
                db += go[off + k];
              }
            }
            if (g_d->requires_grad)
              g_d->grad[static_cast<size_t>(ch)] += static_cast<float>(dg);
            if (b_d->requires_grad)
              b_d->grad[static_cast<size_t>(ch)] += static_cast<float>(db);
          }
        }
      });
    }
    return out;
  }

  // Train mode: batch statistics, biased variance over N*H*W.
  check(per_ch >= 2, "batchnorm2d train mode needs N*H*W >= 2, got ", per_ch);
  std::vector<float> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  std::vector<float> xhat(static_cast<size_t>(input.numel()));
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (int b = 0; b < n; ++b) {
      const float* ip = in + (static_cast<std::int64_t>(b) * c + ch) * plane;
      for (std::int64_t k = 0; k < plane; ++k) acc += ip[k];
    }
    const double mu = acc / static_cast<double>(per_ch);
    double vacc = 0.0;
    for (int b = 0; b < n; ++b) {
      const float* ip = in + (static_cast<std::int64_t>(b) * c + ch) * plane;
      for (std::int64_t k = 0; k < plane; ++k) {
        const double dv = ip[k] - mu;
        vacc += dv * dv;
      }
    }
    const double var = vacc / static_cast<double>(per_ch);
    const double is = 1.0 / std::sqrt(var + epsilon);
    mean[static_cast<size_t>(ch)] = static_cast<float>(mu);
    inv_std[static_cast<size_t>(ch)] = static_cast<float>(is);
    for (int b = 0; b < n; ++b) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * plane;
      const float* ip = in + off;
      float* op = o + off;
      float* xh = xhat.data() + off;
      const float gm = g[ch], bb = bt[ch];
      const float mu_f = mean[static_cast<size_t>(ch)];
      const float is_f = inv_std[static_cast<size_t>(ch)];
      for (std::int64_t k = 0; k < plane; ++k) {
        const float v = (ip[k] - mu_f) * is_f;
        xh[k] = v;
        op[k] = gm * v + bb;
      }
    }
    state.running_mean[static_cast<size_t>(ch)] =
        (1.0f - momentum) * state.running_mean[static_cast<size_t>(ch)] +
        momentum * static_cast<float>(mu);
    state.running_var[static_cast<size_t>(ch)] =
        (1.0f - momentum) * state.running_var[static_cast<size_t>(ch)] +
        momentum * static_cast<float>(var);
  }
  state.initialized = true;

  const bool rec =
      tape && (wants_grad(input) || wants_grad(gamma) || wants_grad(beta));
  if (rec) {
    out.set_requires_grad(true);
    DataPtr in_d = input.raw(), g_d = gamma.raw(), b_d = beta.raw(),
            o_d = out.raw();
    auto xh_p = std::make_shared<std::vector<float>>(std::move(xhat));
    auto is_p = std::make_shared<std::vector<float>>(std::move(inv_std));
    tape->record([in_d, g_d, b_d, o_d, xh_p, is_p, n, c, plane, per_ch]() {
      if (o_d->grad.empty()) return;
      const float* go = o_d->grad.data();
      const float* xh = xh_p->data();
      for (int ch = 0; ch < c; ++ch) {
        double sum_go = 0.0, sum_go_xh = 0.0;
        for (int b = 0; b < n; ++b) {
          const std::int64_t off =
              (static_cast<std::int64_t>(b) * c + ch) * plane;
          for (std::int64_t k = 0; k < plane; ++k) {
            sum_go += go[off + k];
            sum_go_xh += static_cast<double>(go[off + k]) * xh[off + k];
          }
        }
        if (g_d->requires_grad) {
          ensure_grad_buf(*g_d);
          g_d->grad[static_cast<size_t>(ch)] += static_cast<float>(sum_go_xh);
        }
        if (b_d->requires_grad) {
          ensure_grad_buf(*b_d);
          b_d->grad[static_cast<size_t>(ch)] += static_cast<float>(sum_go);
        }
        if (in_d->requires_grad) {
          ensure_grad_buf(*in_d);
          float* gi = in_d->grad.data();
          const double inv_m = 1.0 / static_cast<double>(per_ch);
          const float a = g_d->values[static_cast<size_t>(ch)] *
                          (*is_p)[static_cast<size_t>(ch)];
          const float mean_go = static_cast<float>(sum_go * inv_m);
          const float mean_go_xh = static_cast<float>(sum_go_xh * inv_m);
          for (int b = 0; b < n; ++b) {
            const std::int64_t off =
                (static_cast<std::int64_t>(b) * c + ch) * plane;
            for (std::int64_t k = 0; k < plane; ++k) {
              gi[off + k] +=
                  a * (go[off + k] - mean_go - xh[off + k] * mean_go_xh);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& input, Tape* tape) {
  Tensor out = Tensor::zeros(input.shape());
  const float* in = input.values().data();
  float* o = out.values_mut().data();
  const std::int64_t n = input.numel();
  for (std::int64_t i = 0; i < n; ++i) o[i] = in[i] > 0.0f ? in[i] : 0.0f;

  if (tape && wants_grad(input)) {
    out.set_requires_grad(true);
    DataPtr in_d = input.raw(), o_d = out.raw();
    tape->record([in_d, o_d, n]() {
      if (o_d->grad.empty() || !in_d->requires_grad) return;
      ensure_grad_buf(*in_d);
      const float* go = o_d->grad.data();
      float* gi = in_d->grad.data();
      const float* x = in_d->values.data();
      for (std::int64_t i = 0; i < n; ++i) {
        if (x[i] > 0.0f) gi[i] += go[i];
      }
    });
  }
  return out;
}

Tensor max_pool2d(const Tensor& input, int kernel, int stride, Tape* tape) {
  check(input.ndim() == 4, "max_pool2d input must be 4-d, got ",
        shape_str(input.shape()));
  check(kernel >= 1 && stride >= 1, "max_pool2d kernel and stride must be positive");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  check(kernel <= h && kernel <= w, "max_pool2d kernel ", kernel,
        " exceeds input ", shape_str(input.shape()));
  const int ho = (h - kernel) / stride + 1;
  const int wo = (w - kernel) / stride + 1;

  Tensor out = Tensor::zeros({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<size_t>(out.numel()));
  const float* in = input.values().data();
  float* o = out.values_mut().data();
  std::int64_t oi = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::int64_t base =
          (static_cast<std::int64_t>(b) * c + ch) * h * w;
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow, ++oi) {
          float best = -std::numeric_limits<float>::infinity();
          std::int64_t best_idx = -1;
          for (int i = 0; i < kernel; ++i) {
            for (int j = 0; j < kernel; ++j) {
              const std::int64_t idx =
                  base + static_cast<std::int64_t>(oh * stride + i) * w +
                  (ow * stride + j);
              // Strict comparison keeps the first (row-major lowest) index
              // on ties.
              if (in[idx] > best) {
                best = in[idx];
                best_idx = idx;
              }
            }
          }
          o[oi] = best;
          (*argmax)[static_cast<size_t>(oi)] = best_idx;
        }
      }
    }
  }

  if (tape && wants_grad(input)) {
    out.set_requires_grad(true);
    DataPtr in_d = input.raw(), o_d = out.raw();
    tape->record([in_d, o_d, argmax]() {
      if (o_d->grad.empty() || !in_d->requires_grad) return;
      ensure_grad_buf(*in_d);
      const float* go = o_d->grad.data();
      float* gi = in_d->grad.data();
      for (size_t i = 0; i < argmax->size(); ++i) {
        gi[(*argmax)[i]] += go[i];
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& input, Tape* tape) {
  check(input.ndim() == 4, "global_avg_pool input must be 4-d, got ",
        shape_str(input.shape()));
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2),
            w = input.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out = Tensor::zeros({n, c});
  const float* in = input.values().data();
  float* o = out.values_mut().data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const float* ip = in + (static_cast<std::int64_t>(b) * c + ch) * plane;
      double acc = 0.0;
      for (std::int64_t k = 0; k < plane; ++k) acc += ip[k];
      o[static_cast<std::int64_t>(b) * c + ch] =
          static_cast<float>(acc / static_cast<double>(plane));
    }
  }

  if (tape && wants_grad(input)) {
    out.set_requires_grad(true);
    DataPtr in_d = input.raw(), o_d = out.raw();
    tape->record([in_d, o_d, n, c, plane]() {
      if (o_d->grad.empty() || !in_d->requires_grad) return;
      ensure_grad_buf(*in_d);
      const float* go = o_d->grad.data();
      float* gi = in_d->grad.data();
      const float inv = 1.0f / static_cast<float>(plane);
      for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
          const float gv = go[static_cast<std::int64_t>(b) * c + ch] * inv;
          float* gp = gi + (static_cast<std::int64_t>(b) * c + ch) * plane;
          for (std::int64_t k = 0; k < plane; ++k) gp[k] += gv;
        }
      }
    });
  }
  return out;
}

Tensor flatten(const Tensor& input, Tape* tape) {
  check(input.ndim() >= 1, "flatten needs at least one dimension");
  const int n = input.dim(0);
  const std::int64_t rest = n == 0 ? 0 : input.numel() / n;
  Tensor out = Tensor::from_values(
      {n, static_cast<int>(rest)},
      std::vector<float>(input.values().begin(), input.values().end()));

  if (tape && wants_grad(input)) {
    out.set_requires_grad(true);
    DataPtr in_d = input.raw(), o_d = out.raw();
    tape->record([in_d, o_d]() {
      if (o_d->grad.empty() || !in_d->requires_grad) return;
      ensure_grad_buf(*in_d);
      for (size_t i = 0; i < in_d->grad.size(); ++i)
        in_d->grad[i] += o_d->grad[i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  check(a.shape() == b.shape(),
        "residual join requires identical shapes on both branches, got ",
        shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.values().data();
  const float* pb = b.values().data();
  float* o = out.values_mut().data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i];

  if (tape && (wants_grad(a) || wants_grad(b))) {
    out.set_requires_grad(true);
    DataPtr a_d = a.raw(), b_d = b.raw(), o_d = out.raw();
    tape->record([a_d, b_d, o_d]() {
      if (o_d->grad.empty()) return;
      if (a_d->requires_grad) {
        ensure_grad_buf(*a_d);
        for (size_t i = 0; i < a_d->grad.size(); ++i)
          a_d->grad[i] += o_d->grad[i];
      }
      if (b_d->requires_grad) {
        ensure_grad_buf(*b_d);
        for (size_t i = 0; i < b_d->grad.size(); ++i)
          b_d->grad[i] += o_d->grad[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) {
  check(a.shape() == b.shape(), "mul requires identical shapes, got ",
        shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.values().data();
  const float* pb = b.values().data();
  float* o = out.values_mut().data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) o[i] = pa[i] * pb[i];

  if (tape && (wants_grad(a) || wants_grad(b))) {
    out.set_requires_grad(true);
    DataPtr a_d = a.raw(), b_d = b.raw(), o_d = out.raw();
    tape->record([a_d, b_d, o_d]() {
      if (o_d->grad.empty()) return;
      if (a_d->requires_grad) {
        ensure_grad_buf(*a_d);
        for (size_t i = 0; i < a_d->grad.size(); ++i)
          a_d->grad[i] += o_d->grad[i] * b_d->values[i];
      }
      if (b_d->requires_grad) {
        ensure_grad_buf(*b_d);
        for (size_t i = 0; i < b_d->grad.size(); ++i)
          b_d->grad[i] += o_d->grad[i] * a_d->values[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float factor, Tape* tape) {
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.values().data();
  float* o = out.values_mut().data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) o[i] = pa[i] * factor;

  if (tape && wants_grad(a)) {
    out.set_requires_grad(true);
    DataPtr a_d = a.raw(), o_d = out.raw();
    tape->record([a_d, o_d, factor]() {
      if (o_d->grad.empty() || !a_d->requires_grad) return;
      ensure_grad_buf(*a_d);
      for (size_t i = 0; i < a_d->grad.size(); ++i)
        a_d->grad[i] += o_d->grad[i] * factor;
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a, Tape* tape) {
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  Tensor out = Tensor::from_values({1}, {static_cast<float>(acc)});

  if (tape && wants_grad(a)) {
    out.set_requires_grad(true);
    DataPtr a_d = a.raw(), o_d = out.raw();
    tape->record([a_d, o_d]() {
      if (o_d->grad.empty() || !a_d->requires_grad) return;
      ensure_grad_buf(*a_d);
      const float g = o_d->grad[0];
      for (size_t i = 0; i < a_d->grad.size(); ++i) a_d->grad[i] += g;
    });
  }
  return out;
}

Tensor channel_affine(const Tensor& input, const std::vector<float>& scale,
                      const std::vector<float>& shift, Tape* tape) {
  check(input.ndim() == 4, "channel_affine input must be 4-d, got ",
        shape_str(input.shape()));
  const int n = input.dim(0), c = input.dim(1);
  const std::int64_t plane =
      static_cast<std::int64_t>(input.dim(2)) * input.dim(3);
  check(static_cast<int>(scale.size()) == c &&
            static_cast<int>(shift.size()) == c,
        "channel_affine parameter size does not match channels ", c);

  Tensor out = Tensor::zeros(input.shape());
  const float* in = input.values().data();
  float* o = out.values_mut().data();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::int64_t off = (static_cast<std::int64_t>(b) * c + ch) * plane;
      const float a = scale[static_cast<size_t>(ch)];
      const float s = shift[static_cast<size_t>(ch)];
      for (std::int64_t k = 0; k < plane; ++k) o[off + k] = in[off + k] * a + s;
    }
  }

  if (tape && wants_grad(input)) {
    out.set_requires_grad(true);
    DataPtr in_d = input.raw(), o_d = out.raw();
    tape->record([in_d, o_d, scale, n, c, plane]() {
      if (o_d->grad.empty() || !in_d->requires_grad) return;
      ensure_grad_buf(*in_d);
      const float* go = o_d->grad.data();
      float* gi = in_d->grad.data();
      for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < c; ++ch) {
          const std::int64_t off =
              (static_cast<std::int64_t>(b) * c + ch) * plane;
          const float a = scale[static_cast<size_t>(ch)];
          for (std::int64_t k = 0; k < plane; ++k) gi[off + k] += go[off + k] * a;
        }
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels, Tape* tape) {
  check(logits.ndim() == 2, "softmax_cross_entropy logits must be 2-d, got ",
        shape_str(logits.shape()));
  const int n = logits.dim(0), j = logits.dim(1);
  check(static_cast<int>(labels.size()) == n,
        "label count ", labels.size(), " does not match batch ", n);
  for (int r = 0; r < n; ++r) {
    check(labels[static_cast<size_t>(r)] >= 0 &&
              labels[static_cast<size_t>(r)] < j,
          "label ", labels[static_cast<size_t>(r)], " out of range [0,", j,
          ") at row ", r);
  }

  const float* lg = logits.values().data();
  auto probs = std::make_shared<std::vector<float>>(
      static_cast<size_t>(logits.numel()));
  double loss_acc = 0.0;
  for (int r = 0; r < n; ++r) {
    const float* row = lg + static_cast<std::int64_t>(r) * j;
    float m = row[0];
    for (int k = 1; k < j; ++k) m = std::max(m, row[k]);
    double denom = 0.0;
    for (int k = 0; k < j; ++k) denom += std::exp(static_cast<double>(row[k]) - m);
    const double log_denom = std::log(denom);
    for (int k = 0; k < j; ++k) {
      (*probs)[static_cast<size_t>(static_cast<std::int64_t>(r) * j + k)] =
          static_cast<float>(std::exp(static_cast<double>(row[k]) - m) / denom);
    }
    const int y = labels[static_cast<size_t>(r)];
    loss_acc += -(static_cast<double>(row[y]) - m - log_denom);
  }
  Tensor out = Tensor::from_values(
      {1}, {static_cast<float>(loss_acc / static_cast<double>(n))});

  if (tape && wants_grad(logits)) {
    out.set_requires_grad(true);
    DataPtr l_d = logits.raw(), o_d = out.raw();
    auto lbl = std::make_shared<std::vector<int>>(labels);
    tape->record([l_d, o_d, probs, lbl, n, j]() {
      if (o_d->grad.empty() || !l_d->requires_grad) return;
      ensure_grad_buf(*l_d);
      const float g = o_d->grad[0] / static_cast<float>(n);
      float* gl = l_d->grad.data();
      for (int r = 0; r < n; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * j;
        for (int k = 0; k < j; ++k) gl[off + k] += g * (*probs)[static_cast<size_t>(off + k)];
        gl[off + (*lbl)[static_cast<size_t>(r)]] -= g;
      }
    });
  }
  return out;
}

void backward(Tensor& loss, Tape& tape) {
  check(loss.numel() == 1, "backward requires a scalar loss, got shape ",
        shape_str(loss.shape()));
  loss.ensure_grad();
  loss.grad_mut()[0] = 1.0f;
  tape.run_backward();
}

}  // namespace prunelab
