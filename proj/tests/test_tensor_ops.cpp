#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "prunelab/ops.hpp"
#include "prunelab/sgd.hpp"
#include "support/common.hpp"
#include "support/oracles.hpp"

using namespace prunelab;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

std::vector<double> to_double(std::span<const float> v) {
  return std::vector<double>(v.begin(), v.end());
}

/// Scalar loss sum(out * weights) so every output entry contributes a
/// distinct gradient.
Tensor weighted_sum(const Tensor& out, const Tensor& weights, Tape* tape) {
  return sum_all(mul(out, weights, tape), tape);
}

struct GradStats {
  double max_rel = 0.0;
  double median_rel = 0.0;
};

GradStats compare_grads(std::span<const float> analytic,
                        const std::vector<double>& reference) {
  std::vector<double> rel(analytic.size());
  for (size_t i = 0; i < analytic.size(); ++i) {
    rel[i] = oracle::relative_error(analytic[i], reference[i]);
  }
  std::sort(rel.begin(), rel.end());
  GradStats s;
  s.max_rel = rel.back();
  s.median_rel = rel[rel.size() / 2];
  return s;
}

/// Central finite differences against the (float) op pipeline itself; the
/// independent double-precision oracle handles the full-network check.
template <typename Forward>
std::vector<double> fd_gradient(Tensor& param, Forward&& forward, double h) {
  std::vector<double> grads(static_cast<size_t>(param.numel()));
  auto values = param.values_mut();
  for (std::int64_t i = 0; i < param.numel(); ++i) {
    const float original = values[static_cast<size_t>(i)];
    const float plus = static_cast<float>(original + h);
    const float minus = static_cast<float>(original - h);
    values[static_cast<size_t>(i)] = plus;
    const double lp = forward();
    values[static_cast<size_t>(i)] = minus;
    const double lm = forward();
    values[static_cast<size_t>(i)] = original;
    grads[static_cast<size_t>(i)] =
        (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
  }
  return grads;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  Tensor x = random_tensor({2, 1, 4, 4}, 1);
  Tensor w = Tensor::from_values({1, 1, 1, 1}, {1.0f});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1, 0);
  CHECK(max_abs_diff(y.values(), x.values()) == 0.0);
}

TEST_CASE("conv2d counts overlap of ones") {
  Tensor x = Tensor::full({1, 1, 4, 4}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (float v : y.values()) CHECK(v == doctest::Approx(9.0f));
}

TEST_CASE("conv2d matches the naive sextuple-loop oracle") {
  Tensor x = random_tensor({1, 2, 5, 5}, 2);
  Tensor w = random_tensor({3, 2, 3, 3}, 3);
  Tensor b = random_tensor({3}, 4);
  Tensor y = conv2d(x, w, b, 2, 1);
  const oracle::ConvShape s{1, 2, 5, 5, 3, 3, 3, 2, 1};
  const auto ref = oracle::naive_conv2d(to_double(x.values()), to_double(w.values()),
                                        to_double(b.values()), s);
  CHECK(y.numel() == static_cast<std::int64_t>(ref.size()));
  CHECK(max_abs_diff(y.values(), ref) < 1e-5);
}

TEST_CASE("conv2d agrees with the oracle on an exhaustive small sweep") {
  int cases = 0;
  for (int h = 1; h <= 8; ++h) {
    for (int w = 1; w <= 8; ++w) {
      for (int cin : {1, 3}) {
        for (int cout : {1, 4}) {
          for (int k : {1, 2, 3}) {
            for (int stride : {1, 2}) {
              for (int pad : {0, 1}) {
                if (h + 2 * pad - k < 0 || w + 2 * pad - k < 0) continue;
                const std::uint64_t seed =
                    static_cast<std::uint64_t>(((((h * 9 + w) * 5 + cin) * 5 + cout) * 4 + k) * 4 +
                                               stride * 2 + pad);
                Tensor x = random_tensor({2, cin, h, w}, seed);
                Tensor wt = random_tensor({cout, cin, k, k}, seed + 1);
                Tensor b = random_tensor({cout}, seed + 2);
                Tensor y = conv2d(x, wt, b, stride, pad);
                const oracle::ConvShape s{2, cin, h, w, cout, k, k, stride, pad};
                const auto ref =
                    oracle::naive_conv2d(to_double(x.values()), to_double(wt.values()),
                                         to_double(b.values()), s);
                REQUIRE(max_abs_diff(y.values(), ref) < 1e-5);
                ++cases;
              }
            }
          }
        }
      }
    }
  }
  CHECK(cases > 2000);
}

TEST_CASE("conv2d rejects bad geometry") {
  Tensor x = random_tensor({1, 2, 4, 4}, 5);
  Tensor w = random_tensor({1, 3, 3, 3}, 6);  // channel mismatch
  Tensor b = Tensor::zeros({1});
  CHECK_THROWS_WITH_AS(conv2d(x, w, b, 1, 0),
                       doctest::Contains("channel mismatch"), Error);

  Tensor w2 = random_tensor({1, 2, 5, 5}, 7);  // kernel larger than input
  CHECK_THROWS_WITH_AS(conv2d(x, w2, b, 1, 0),
                       doctest::Contains("non-positive output extent"), Error);
}

TEST_CASE("dense identity and hand-added example") {
  Tensor x = Tensor::from_values({1, 2}, {1.0f, 2.0f});
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor zero_b = Tensor::zeros({2});
  Tensor y = dense(x, eye, zero_b);
  CHECK(y.values()[0] == 1.0f);
  CHECK(y.values()[1] == 2.0f);

  Tensor b = Tensor::from_values({2}, {3.0f, 4.0f});
  Tensor z = dense(x, eye, b);
  CHECK(z.values()[0] == 4.0f);
  CHECK(z.values()[1] == 6.0f);
}

TEST_CASE("dense matches the naive matmul oracle") {
  Tensor x = random_tensor({3, 4}, 8);
  Tensor w = random_tensor({4, 5}, 9);
  Tensor b = random_tensor({5}, 10);
  Tensor y = dense(x, w, b);
  const auto ref = oracle::naive_dense(to_double(x.values()), 3, 4,
                                       to_double(w.values()), 5, to_double(b.values()));
  CHECK(max_abs_diff(y.values(), ref) < 1e-5);
}

TEST_CASE("dense rejects dimension mismatch") {
  Tensor x = random_tensor({3, 4}, 11);
  Tensor w = random_tensor({5, 2}, 12);
  Tensor b = Tensor::zeros({2});
  CHECK_THROWS_AS(dense(x, w, b), Error);
}

TEST_CASE("batchnorm2d train mode statistics") {
  const int n = 4, c = 3, h = 6, w = 6;
  Tensor x = random_tensor({n, c, h, w}, 13, 2.0, 0.5);
  Tensor gamma = Tensor::full({c}, 1.0f);
  Tensor beta = Tensor::zeros({c});
  BatchNormState state = BatchNormState::uninitialized(c);
  Tensor y = batchnorm2d(x, gamma, beta, state, Mode::Train, 0.1f, 1e-5f);

  const std::int64_t per_ch = static_cast<std::int64_t>(n) * h * w;
  for (int ch = 0; ch < c; ++ch) {
    double mean = 0.0, var = 0.0;
    for (int b = 0; b < n; ++b) {
      for (std::int64_t k = 0; k < static_cast<std::int64_t>(h) * w; ++k) {
        mean += y.values()[((static_cast<std::int64_t>(b) * c + ch) * h * w) + k];
      }
    }
    mean /= static_cast<double>(per_ch);
    for (int b = 0; b < n; ++b) {
      for (std::int64_t k = 0; k < static_cast<std::int64_t>(h) * w; ++k) {
        const double v =
            y.values()[((static_cast<std::int64_t>(b) * c + ch) * h * w) + k] - mean;
        var += v * v;
      }
    }
    var /= static_cast<double>(per_ch);
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }
  CHECK(state.initialized);
}

TEST_CASE("batchnorm2d constant channel normalizes to zero") {
  Tensor x = Tensor::full({2, 1, 3, 3}, 5.0f);
  Tensor gamma = Tensor::full({1}, 1.0f);
  Tensor beta = Tensor::zeros({1});
  BatchNormState state = BatchNormState::uninitialized(1);
  Tensor y = batchnorm2d(x, gamma, beta, state, Mode::Train, 0.1f, 1e-5f);
  for (float v : y.values()) CHECK(v == 0.0f);
}

TEST_CASE("batchnorm2d near-identity on standardized input") {
  // Build a channel with mean 0 and variance 1 by construction.
  Tensor x = Tensor::from_values({2, 1, 1, 2}, {1.0f, -1.0f, 1.0f, -1.0f});
  Tensor gamma = Tensor::full({1}, 1.0f);
  Tensor beta = Tensor::zeros({1});
  BatchNormState state = BatchNormState::uninitialized(1);
  Tensor y = batchnorm2d(x, gamma, beta, state, Mode::Train, 0.1f, 1e-5f);
  CHECK(max_abs_diff(y.values(), x.values()) < 1e-4);
}

TEST_CASE("batchnorm2d eval mode requires initialized statistics") {
  Tensor x = random_tensor({1, 2, 3, 3}, 14);
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta = Tensor::zeros({2});
  BatchNormState state = BatchNormState::uninitialized(2);
  CHECK_THROWS_WITH_AS(
      batchnorm2d(x, gamma, beta, state, Mode::Eval, 0.1f, 1e-5f),
      doctest::Contains("initialized"), Error);
  state.initialized = true;
  CHECK_NOTHROW(batchnorm2d(x, gamma, beta, state, Mode::Eval, 0.1f, 1e-5f));
}

TEST_CASE("relu, pooling, flatten examples") {
  Tensor x = Tensor::from_values({1, 3}, {-1.0f, 0.0f, 2.0f});
  Tensor y = relu(x);
  CHECK(y.values()[0] == 0.0f);
  CHECK(y.values()[1] == 0.0f);
  CHECK(y.values()[2] == 2.0f);

  Tensor g = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor pooled = global_avg_pool(g);
  CHECK(pooled.shape() == Shape{1, 1});
  CHECK(pooled.values()[0] == doctest::Approx(2.5f));

  std::vector<float> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<size_t>(i)] = static_cast<float>(i);
  Tensor m = Tensor::from_values({1, 1, 4, 4}, std::move(ramp));
  Tensor mp = max_pool2d(m, 2, 2);
  CHECK(mp.values()[0] == 5.0f);
  CHECK(mp.values()[1] == 7.0f);
  CHECK(mp.values()[2] == 13.0f);
  CHECK(mp.values()[3] == 15.0f);

  Tensor f = flatten(g);
  CHECK(f.shape() == Shape{1, 4});
}

TEST_CASE("max_pool2d routes ties to the first index") {
  Tensor x = Tensor::full({1, 1, 2, 2}, 3.0f);
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = max_pool2d(x, 2, 2, &tape);
  Tensor loss = sum_all(y, &tape);
  backward(loss, tape);
  CHECK(x.grad()[0] == 1.0f);  // first position wins the tie
  CHECK(x.grad()[1] == 0.0f);
  CHECK(x.grad()[2] == 0.0f);
  CHECK(x.grad()[3] == 0.0f);
}

TEST_CASE("add enforces the residual shape constraint") {
  Tensor a = random_tensor({1, 2, 3, 3}, 15);
  Tensor b = random_tensor({1, 3, 3, 3}, 16);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("residual"), Error);
}

TEST_CASE("softmax cross entropy examples") {
  Tensor uniform = Tensor::full({1, 4}, 0.7f);
  Tensor loss = softmax_cross_entropy(uniform, {2});
  CHECK(loss.values()[0] == doctest::Approx(std::log(4.0)).epsilon(1e-5));

  Tensor saturated = Tensor::from_values({1, 3}, {1000.0f, 0.0f, 0.0f});
  Tensor loss2 = softmax_cross_entropy(saturated, {0});
  CHECK(loss2.values()[0] == doctest::Approx(0.0f).epsilon(1e-6));

  Tensor logits = random_tensor({2, 3}, 17);
  const std::vector<int> labels = {2, 0};
  Tensor loss3 = softmax_cross_entropy(logits, labels);
  const double ref =
      oracle::naive_cross_entropy(to_double(logits.values()), 2, 3, labels);
  CHECK(std::fabs(loss3.values()[0] - ref) < 1e-5);

  CHECK_THROWS_WITH_AS(softmax_cross_entropy(logits, {3, 0}),
                       doctest::Contains("out of range"), Error);
}

TEST_CASE("backward fills simple analytic gradients") {
  Tensor x = random_tensor({2, 3}, 18);
  x.set_requires_grad(true);

  SUBCASE("sum -> ones") {
    Tape tape;
    Tensor loss = sum_all(x, &tape);
    backward(loss, tape);
    for (float g : x.grad()) CHECK(g == 1.0f);
  }
  SUBCASE("sum of squares -> 2x") {
    Tape tape;
    Tensor loss = sum_all(mul(x, x, &tape), &tape);
    backward(loss, tape);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      CHECK(x.grad()[static_cast<size_t>(i)] ==
            doctest::Approx(2.0f * x.values()[static_cast<size_t>(i)]));
    }
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape tape;
    Tensor y = mul(x, x, &tape);
    CHECK_THROWS_WITH_AS(backward(y, tape), doctest::Contains("scalar"), Error);
  }
}

TEST_CASE("backward is linear in the loss") {
  Tensor x = random_tensor({3, 3}, 19);
  Tensor a = random_tensor({3, 3}, 20);
  Tensor b = random_tensor({3, 3}, 21);

  auto grad_of = [&](float ca, float cb) {
    Tensor xc = x.clone();
    xc.set_requires_grad(true);
    Tape tape;
    Tensor f = weighted_sum(xc, a, &tape);
    Tensor g = weighted_sum(xc, b, &tape);
    Tensor loss = add(scale(f, ca, &tape), scale(g, cb, &tape), &tape);
    backward(loss, tape);
    return std::vector<float>(xc.grad().begin(), xc.grad().end());
  };

  const auto gf = grad_of(1.0f, 0.0f);
  const auto gg = grad_of(0.0f, 1.0f);
  const auto combined = grad_of(2.5f, -1.5f);
  for (size_t i = 0; i < combined.size(); ++i) {
    CHECK(combined[i] ==
          doctest::Approx(2.5f * gf[i] - 1.5f * gg[i]).epsilon(1e-4));
  }
}

TEST_CASE("gradient accumulation sums over multiple uses") {
  Tensor x = random_tensor({2, 2}, 22);
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = add(x, x, &tape);
  Tensor loss = sum_all(y, &tape);
  backward(loss, tape);
  for (float g : x.grad()) CHECK(g == 2.0f);
}

TEST_CASE("op pipeline is deterministic") {
  auto run = []() {
    Tensor x = random_tensor({2, 3, 6, 6}, 23);
    Tensor w = random_tensor({4, 3, 3, 3}, 24);
    Tensor b = random_tensor({4}, 25);
    Tensor y = relu(conv2d(x, w, b, 1, 1));
    return std::vector<float>(y.values().begin(), y.values().end());
  };
  const auto a = run();
  const auto b = run();
  CHECK(a == b);
}

TEST_CASE("per-op gradient check against central finite differences") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed * 977 + 11);
    const int n = 1 + static_cast<int>(rng.uniform_int(2));
    const int cin = 1 + static_cast<int>(rng.uniform_int(3));
    const int cout = 1 + static_cast<int>(rng.uniform_int(3));
    const int hw = 3 + static_cast<int>(rng.uniform_int(4));

    SUBCASE("") {}  // keep doctest quiet about loops

    // conv2d (weight + bias + input).
    {
      Tensor x = random_tensor({n, cin, hw, hw}, seed * 31 + 1);
      Tensor w = random_tensor({cout, cin, 3, 3}, seed * 31 + 2, 0.5);
      Tensor b = random_tensor({cout}, seed * 31 + 3, 0.1);
      Tensor m;
      auto forward = [&]() {
        Tensor out = conv2d(x, w, b, 1, 1);
        double acc = 0.0;
        for (std::int64_t i = 0; i < out.numel(); ++i) {
          acc += static_cast<double>(out.values()[static_cast<size_t>(i)]) *
                 m.values()[static_cast<size_t>(i)];
        }
        return acc;
      };
      {
        Tensor probe = conv2d(x, w, b, 1, 1);
        m = random_tensor(probe.shape(), seed * 31 + 4);
      }
      x.set_requires_grad(true);
      w.set_requires_grad(true);
      b.set_requires_grad(true);
      Tape tape;
      Tensor loss = weighted_sum(conv2d(x, w, b, 1, 1, &tape), m, &tape);
      backward(loss, tape);

      for (Tensor* p : {&w, &b, &x}) {
        const auto fd = fd_gradient(*p, forward, 1e-3);
        const auto stats = compare_grads(p->grad(), fd);
        CHECK(stats.max_rel < 1e-2);
        CHECK(stats.median_rel < 1e-3);
        ++checked;
      }
    }

    // batchnorm2d in train mode (gamma, beta, input).
    {
      const int c = 1 + static_cast<int>(rng.uniform_int(3));
      Tensor x = random_tensor({2, c, hw, hw}, seed * 37 + 5);
      Tensor gamma = random_tensor({c}, seed * 37 + 6, 0.3, 1.0);
      Tensor beta = random_tensor({c}, seed * 37 + 7, 0.3);
      Tensor m = random_tensor({2, c, hw, hw}, seed * 37 + 8);
      auto forward = [&]() {
        BatchNormState state = BatchNormState::uninitialized(c);
        Tensor out = batchnorm2d(x, gamma, beta, state, Mode::Train, 0.1f, 1e-5f);
        double acc = 0.0;
        for (std::int64_t i = 0; i < out.numel(); ++i) {
          acc += static_cast<double>(out.values()[static_cast<size_t>(i)]) *
                 m.values()[static_cast<size_t>(i)];
        }
        return acc;
      };
      x.set_requires_grad(true);
      gamma.set_requires_grad(true);
      beta.set_requires_grad(true);
      Tape tape;
      BatchNormState state = BatchNormState::uninitialized(c);
      Tensor out = batchnorm2d(x, gamma, beta, state, Mode::Train, 0.1f, 1e-5f, &tape);
      Tensor loss = weighted_sum(out, m, &tape);
      backward(loss, tape);

      for (Tensor* p : {&gamma, &beta, &x}) {
        const auto fd = fd_gradient(*p, forward, 1e-3);
        const auto stats = compare_grads(p->grad(), fd);
        CHECK(stats.max_rel < 1e-2);
        ++checked;
      }
    }

    // dense + softmax cross entropy.
    {
      const int d = 2 + static_cast<int>(rng.uniform_int(4));
      const int classes = 2 + static_cast<int>(rng.uniform_int(3));
      Tensor x = random_tensor({3, d}, seed * 41 + 9);
      Tensor w = random_tensor({d, classes}, seed * 41 + 10, 0.5);
      Tensor b = random_tensor({classes}, seed * 41 + 11, 0.1);
      const std::vector<int> labels = testutil::random_labels(3, classes, seed);
      auto forward = [&]() {
        Tensor loss = softmax_cross_entropy(dense(x, w, b), labels);
        return static_cast<double>(loss.values()[0]);
      };
      x.set_requires_grad(true);
      w.set_requires_grad(true);
      b.set_requires_grad(true);
      Tape tape;
      Tensor loss = softmax_cross_entropy(dense(x, w, b, &tape), labels, &tape);
      backward(loss, tape);

      for (Tensor* p : {&w, &b, &x}) {
        const auto fd = fd_gradient(*p, forward, 1e-3);
        const auto stats = compare_grads(p->grad(), fd);
        CHECK(stats.max_rel < 1e-2);
        ++checked;
      }
    }
  }
  CHECK(checked >= 9 * 20);
}

TEST_CASE("sgd examples") {
  SUBCASE("zero learning rate leaves parameters unchanged") {
    Tensor w = random_tensor({4}, 26);
    const std::vector<float> before(w.values().begin(), w.values().end());
    w.set_requires_grad(true);
    w.grad_mut()[0] = 1.0f;
    std::vector<Tensor> params = {w};
    SgdOptimizer opt(0.0f, 0.9f, 0.0f);
    opt.step(params);
    CHECK(std::vector<float>(w.values().begin(), w.values().end()) == before);
  }
  SUBCASE("plain step") {
    Tensor w = Tensor::from_values({1}, {1.0f});
    w.set_requires_grad(true);
    w.grad_mut()[0] = 2.0f;
    std::vector<Tensor> params = {w};
    SgdOptimizer opt(0.1f, 0.0f, 0.0f);
    opt.step(params);
    CHECK(w.values()[0] == doctest::Approx(0.8f));
    CHECK_FALSE(w.has_grad());  // grads zeroed afterwards
  }
  SUBCASE("two momentum steps follow the hand recursion") {
    Tensor w = Tensor::from_values({1}, {0.0f});
    w.set_requires_grad(true);
    std::vector<Tensor> params = {w};
    SgdOptimizer opt(0.1f, 0.9f, 0.0f);
    w.grad_mut()[0] = 1.0f;
    opt.step(params);
    CHECK(w.values()[0] == doctest::Approx(-0.1f));
    w.grad_mut()[0] = 1.0f;
    opt.step(params);
    CHECK(w.values()[0] == doctest::Approx(-0.29f));
  }
  SUBCASE("missing gradient names the parameter") {
    Tensor w = random_tensor({2}, 27);
    w.set_requires_grad(true);
    w.set_name("stem.weight");
    std::vector<Tensor> params = {w};
    SgdOptimizer opt(0.1f, 0.9f, 0.0f);
    CHECK_THROWS_WITH_AS(opt.step(params), doctest::Contains("stem.weight"), Error);
  }
}
