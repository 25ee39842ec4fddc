#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace oracle {

namespace {

using prunelab::ConvUnit;
using prunelab::Mode;
using prunelab::NetworkGraph;
using prunelab::Tensor;

std::vector<double> to_double(std::span<const float> v) {
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace

std::vector<double> naive_conv2d(const std::vector<double>& input,
                                 const std::vector<double>& weight,
                                 const std::vector<double>& bias,
                                 const ConvShape& s) {
  const int ho = (s.h + 2 * s.padding - s.kh) / s.stride + 1;
  const int wo = (s.w + 2 * s.padding - s.kw) / s.stride + 1;
  std::vector<double> out(static_cast<size_t>(s.n) * s.cout * ho * wo, 0.0);
  for (int n = 0; n < s.n; ++n) {
    for (int co = 0; co < s.cout; ++co) {
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow) {
          double acc = bias[static_cast<size_t>(co)];
          for (int ci = 0; ci < s.cin; ++ci) {
            for (int i = 0; i < s.kh; ++i) {
              for (int j = 0; j < s.kw; ++j) {
                const int ih = oh * s.stride - s.padding + i;
                const int iw = ow * s.stride - s.padding + j;
                if (ih < 0 || ih >= s.h || iw < 0 || iw >= s.w) continue;
                const double x =
                    input[((static_cast<size_t>(n) * s.cin + ci) * s.h + ih) * s.w + iw];
                const double wv =
                    weight[((static_cast<size_t>(co) * s.cin + ci) * s.kh + i) * s.kw + j];
                acc += x * wv;
              }
            }
          }
          out[((static_cast<size_t>(n) * s.cout + co) * ho + oh) * wo + ow] = acc;
        }
      }
    }
  }
  return out;
}

std::vector<double> naive_dense(const std::vector<double>& input, int n, int d,
                                const std::vector<double>& weight, int m,
                                const std::vector<double>& bias) {
  std::vector<double> out(static_cast<size_t>(n) * m, 0.0);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < m; ++c) {
      double acc = bias[static_cast<size_t>(c)];
      for (int k = 0; k < d; ++k) {
        acc += input[static_cast<size_t>(r) * d + k] * weight[static_cast<size_t>(k) * m + c];
      }
      out[static_cast<size_t>(r) * m + c] = acc;
    }
  }
  return out;
}

double naive_cross_entropy(const std::vector<double>& logits, int n, int j,
                           const std::vector<int>& labels) {
  double loss = 0.0;
  for (int r = 0; r < n; ++r) {
    const double* row = logits.data() + static_cast<size_t>(r) * j;
    double m = row[0];
    for (int k = 1; k < j; ++k) m = std::max(m, row[k]);
    double denom = 0.0;
    for (int k = 0; k < j; ++k) denom += std::exp(row[k] - m);
    loss += -(row[labels[static_cast<size_t>(r)]] - m - std::log(denom));
  }
  return loss / n;
}

namespace {

struct Feature {
  std::vector<double> values;
  int c, h, w;
};

Feature run_unit(const ConvUnit& u, const Feature& in, int batch, Mode mode) {
  ConvShape s{batch,      in.c,          in.h,      in.w,
              u.weight.dim(0), u.weight.dim(2), u.weight.dim(3),
              u.stride,   u.padding};
  s.cout = u.weight.dim(0);
  Feature out;
  out.c = s.cout;
  out.h = (in.h + 2 * u.padding - s.kh) / u.stride + 1;
  out.w = (in.w + 2 * u.padding - s.kw) / u.stride + 1;
  out.values = naive_conv2d(in.values, to_double(u.weight.values()),
                            to_double(u.bias.values()), s);

  // Batchnorm.
  const std::int64_t plane = static_cast<std::int64_t>(out.h) * out.w;
  const std::int64_t per_ch = static_cast<std::int64_t>(batch) * plane;
  for (int ch = 0; ch < out.c; ++ch) {
    double mean, var;
    if (mode == Mode::Train) {
      double acc = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double* p =
            out.values.data() + (static_cast<std::int64_t>(b) * out.c + ch) * plane;
        for (std::int64_t k = 0; k < plane; ++k) acc += p[k];
      }
      mean = acc / static_cast<double>(per_ch);
      double vacc = 0.0;
      for (int b = 0; b < batch; ++b) {
        const double* p =
            out.values.data() + (static_cast<std::int64_t>(b) * out.c + ch) * plane;
        for (std::int64_t k = 0; k < plane; ++k) {
          vacc += (p[k] - mean) * (p[k] - mean);
        }
      }
      var = vacc / static_cast<double>(per_ch);
    } else {
      mean = u.bn_state.running_mean[static_cast<size_t>(ch)];
      var = u.bn_state.running_var[static_cast<size_t>(ch)];
    }
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(u.bn_epsilon));
    const double g = u.gamma.values()[static_cast<size_t>(ch)];
    const double bt = u.beta.values()[static_cast<size_t>(ch)];
    for (int b = 0; b < batch; ++b) {
      double* p =
          out.values.data() + (static_cast<std::int64_t>(b) * out.c + ch) * plane;
      for (std::int64_t k = 0; k < plane; ++k) {
        p[k] = g * (p[k] - mean) * inv + bt;
      }
    }
  }

  if (u.relu_after) {
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
  }
  return out;
}

}  // namespace

std::vector<double> ref_forward_logits(const NetworkGraph& net,
                                       const Tensor& batch, Mode mode) {
  const int n = batch.dim(0);
  Feature x;
  x.c = batch.dim(1);
  x.h = batch.dim(2);
  x.w = batch.dim(3);
  x.values = to_double(batch.values());

  if (!net.norm_mean.empty()) {
    const std::int64_t plane = static_cast<std::int64_t>(x.h) * x.w;
    for (int b = 0; b < n; ++b) {
      for (int ch = 0; ch < x.c; ++ch) {
        double* p = x.values.data() + (static_cast<std::int64_t>(b) * x.c + ch) * plane;
        const double m = net.norm_mean[static_cast<size_t>(ch)];
        const double s = net.norm_std[static_cast<size_t>(ch)];
        for (std::int64_t k = 0; k < plane; ++k) p[k] = (p[k] - m) / s;
      }
    }
  }

  for (const auto& step : net.trunk) {
    if (const auto* u = std::get_if<ConvUnit>(&step)) {
      x = run_unit(*u, x, n, mode);
    } else {
      const auto& pool = std::get<prunelab::MaxPoolStep>(step);
      Feature out;
      out.c = x.c;
      out.h = (x.h - pool.kernel) / pool.stride + 1;
      out.w = (x.w - pool.kernel) / pool.stride + 1;
      out.values.assign(static_cast<size_t>(n) * out.c * out.h * out.w, 0.0);
      for (int b = 0; b < n; ++b) {
        for (int ch = 0; ch < x.c; ++ch) {
          for (int oh = 0; oh < out.h; ++oh) {
            for (int ow = 0; ow < out.w; ++ow) {
              double best = -1e300;
              for (int i = 0; i < pool.kernel; ++i) {
                for (int j = 0; j < pool.kernel; ++j) {
                  const double v =
                      x.values[((static_cast<size_t>(b) * x.c + ch) * x.h +
                                oh * pool.stride + i) *
                                   x.w +
                               ow * pool.stride + j];
                  best = std::max(best, v);
                }
              }
              out.values[((static_cast<size_t>(b) * out.c + ch) * out.h + oh) *
                             out.w +
                         ow] = best;
            }
          }
        }
      }
      x = out;
    }
  }

  for (const auto& block : net.blocks) {
    Feature branch = run_unit(block.conv1, x, n, mode);
    branch = run_unit(block.conv2, branch, n, mode);
    Feature skip = block.projection ? run_unit(*block.projection, x, n, mode) : x;
    Feature joined;
    joined.c = branch.c;
    joined.h = branch.h;
    joined.w = branch.w;
    joined.values.resize(branch.values.size());
    for (size_t i = 0; i < branch.values.size(); ++i) {
      const double v = branch.values[i] + skip.values[i];
      joined.values[i] = v > 0.0 ? v : 0.0;
    }
    x = joined;
  }

  // Global average pool + dense head.
  std::vector<double> pooled(static_cast<size_t>(n) * x.c, 0.0);
  const std::int64_t plane = static_cast<std::int64_t>(x.h) * x.w;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < x.c; ++ch) {
      double acc = 0.0;
      const double* p = x.values.data() + (static_cast<std::int64_t>(b) * x.c + ch) * plane;
      for (std::int64_t k = 0; k < plane; ++k) acc += p[k];
      pooled[static_cast<size_t>(b) * x.c + ch] = acc / static_cast<double>(plane);
    }
  }
  return naive_dense(pooled, n, x.c, to_double(net.head.weight.values()),
                     net.head.weight.dim(1), to_double(net.head.bias.values()));
}

double ref_forward_loss(const NetworkGraph& net, const Tensor& batch,
                        const std::vector<int>& labels, Mode mode) {
  const std::vector<double> logits = ref_forward_logits(net, batch, mode);
  return naive_cross_entropy(logits, batch.dim(0), net.num_classes, labels);
}

double fd_loss_gradient(NetworkGraph& net, Tensor& param, std::int64_t index,
                        const Tensor& batch, const std::vector<int>& labels,
                        Mode mode, double h) {
  auto values = param.values_mut();
  const float original = values[static_cast<size_t>(index)];
  const float plus = static_cast<float>(static_cast<double>(original) + h);
  const float minus = static_cast<float>(static_cast<double>(original) - h);

  values[static_cast<size_t>(index)] = plus;
  const double loss_plus = ref_forward_loss(net, batch, labels, mode);
  values[static_cast<size_t>(index)] = minus;
  const double loss_minus = ref_forward_loss(net, batch, labels, mode);
  values[static_cast<size_t>(index)] = original;

  return (loss_plus - loss_minus) /
         (static_cast<double>(plus) - static_cast<double>(minus));
}

double relative_error(double a, double b, double floor) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

std::vector<double> eigen_pls_vip(std::vector<double> x, int n, int m,
                                  const std::vector<double>& y, int j,
                                  int components) {
  std::vector<double> w_all(static_cast<size_t>(components) * m, 0.0);
  std::vector<double> ssy(static_cast<size_t>(components), 0.0);

  for (int a = 0; a < components; ++a) {
    // M = X'Y Y'X, m x m symmetric PSD.
    std::vector<double> xty(static_cast<size_t>(m) * j, 0.0);
    for (int c = 0; c < m; ++c) {
      for (int l = 0; l < j; ++l) {
        double acc = 0.0;
        for (int r = 0; r < n; ++r) {
          acc += x[static_cast<size_t>(r) * m + c] * y[static_cast<size_t>(r) * j + l];
        }
        xty[static_cast<size_t>(c) * j + l] = acc;
      }
    }
    std::vector<double> big(static_cast<size_t>(m) * m, 0.0);
    for (int c1 = 0; c1 < m; ++c1) {
      for (int c2 = 0; c2 < m; ++c2) {
        double acc = 0.0;
        for (int l = 0; l < j; ++l) {
          acc += xty[static_cast<size_t>(c1) * j + l] * xty[static_cast<size_t>(c2) * j + l];
        }
        big[static_cast<size_t>(c1) * m + c2] = acc;
      }
    }

    // Dominant eigenvector by power iteration from a fixed start.
    std::vector<double> w(static_cast<size_t>(m));
    for (int c = 0; c < m; ++c) w[static_cast<size_t>(c)] = 1.0 + 0.01 * c;
    for (int it = 0; it < 20000; ++it) {
      std::vector<double> next(static_cast<size_t>(m), 0.0);
      for (int c1 = 0; c1 < m; ++c1) {
        double acc = 0.0;
        for (int c2 = 0; c2 < m; ++c2) {
          acc += big[static_cast<size_t>(c1) * m + c2] * w[static_cast<size_t>(c2)];
        }
        next[static_cast<size_t>(c1)] = acc;
      }
      double norm = 0.0;
      for (double v : next) norm += v * v;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      for (double& v : next) v /= norm;
      double diff = 0.0;
      for (int c = 0; c < m; ++c) {
        diff = std::max(diff, std::fabs(std::fabs(next[static_cast<size_t>(c)]) -
                                        std::fabs(w[static_cast<size_t>(c)])));
      }
      w = next;
      if (it > 3 && diff < 1e-14) break;
    }

    // Scores, explained label variance, deflation.
    std::vector<double> t(static_cast<size_t>(n), 0.0);
    for (int r = 0; r < n; ++r) {
      double acc = 0.0;
      for (int c = 0; c < m; ++c) {
        acc += x[static_cast<size_t>(r) * m + c] * w[static_cast<size_t>(c)];
      }
      t[static_cast<size_t>(r)] = acc;
    }
    double tt = 0.0;
    for (double v : t) tt += v * v;
    if (tt == 0.0) break;

    double yt2 = 0.0;
    for (int l = 0; l < j; ++l) {
      double acc = 0.0;
      for (int r = 0; r < n; ++r) {
        acc += y[static_cast<size_t>(r) * j + l] * t[static_cast<size_t>(r)];
      }
      yt2 += acc * acc;
    }
    ssy[static_cast<size_t>(a)] = yt2 / tt;

    std::vector<double> p(static_cast<size_t>(m), 0.0);
    for (int c = 0; c < m; ++c) {
      double acc = 0.0;
      for (int r = 0; r < n; ++r) {
        acc += x[static_cast<size_t>(r) * m + c] * t[static_cast<size_t>(r)];
      }
      p[static_cast<size_t>(c)] = acc / tt;
    }
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < m; ++c) {
        x[static_cast<size_t>(r) * m + c] -= t[static_cast<size_t>(r)] * p[static_cast<size_t>(c)];
      }
    }
    std::copy(w.begin(), w.end(), w_all.begin() + static_cast<size_t>(a) * m);
  }

  double total = 0.0;
  for (double v : ssy) total += v;
  std::vector<double> vip(static_cast<size_t>(m), 0.0);
  if (total == 0.0) return vip;
  for (int c = 0; c < m; ++c) {
    double acc = 0.0;
    for (int a = 0; a < components; ++a) {
      const double wv = w_all[static_cast<size_t>(a) * m + c];
      acc += ssy[static_cast<size_t>(a)] * wv * wv;
    }
    vip[static_cast<size_t>(c)] = std::sqrt(static_cast<double>(m) * acc / total);
  }
  return vip;
}

}  // namespace oracle
