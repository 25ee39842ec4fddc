#pragma once

// Independent reference implementations used as test oracles. Everything
// here recomputes results with naive loops in double precision and never
// calls into the library's forward/backward kernels, so agreement is
// meaningful.

#include <vector>

#include "prunelab/network.hpp"
#include "prunelab/tensor.hpp"

namespace oracle {

struct ConvShape {
  int n, cin, h, w;
  int cout, kh, kw;
  int stride, padding;
};

/// Plain sextuple-loop cross-correlation with zero padding, all double.
std::vector<double> naive_conv2d(const std::vector<double>& input,
                                 const std::vector<double>& weight,
                                 const std::vector<double>& bias,
                                 const ConvShape& s);

/// Row-by-column matmul plus bias.
std::vector<double> naive_dense(const std::vector<double>& input, int n, int d,
                                const std::vector<double>& weight, int m,
                                const std::vector<double>& bias);

/// Direct softmax cross entropy: mean over rows of -log softmax[label].
double naive_cross_entropy(const std::vector<double>& logits, int n, int j,
                           const std::vector<int>& labels);

/// Double-precision re-implementation of the full network forward
/// (normalization, conv/bn/relu trunk, residual blocks, pooling, head).
/// Train mode normalizes with batch statistics exactly like the library but
/// never touches the running-stat state.
std::vector<double> ref_forward_logits(const prunelab::NetworkGraph& net,
                                       const prunelab::Tensor& batch,
                                       prunelab::Mode mode);

double ref_forward_loss(const prunelab::NetworkGraph& net,
                        const prunelab::Tensor& batch,
                        const std::vector<int>& labels, prunelab::Mode mode);

/// Central finite difference of ref_forward_loss with respect to one entry
/// of `param`. Perturbs in float representation space and divides by the
/// exactly-representable step.
double fd_loss_gradient(prunelab::NetworkGraph& net, prunelab::Tensor& param,
                        std::int64_t index, const prunelab::Tensor& batch,
                        const std::vector<int>& labels, prunelab::Mode mode,
                        double h = 1e-3);

/// |a-b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-2);

/// PLS VIP scores computed through an eigendecomposition route: per
/// component the weight vector is the dominant eigenvector of X'YY'X
/// (power iteration, double precision), scores/loadings/deflation follow.
/// X [n x m] and Y [n x j] must be column-centered, row-major.
std::vector<double> eigen_pls_vip(std::vector<double> x, int n, int m,
                                  const std::vector<double>& y, int j,
                                  int components);

}  // namespace oracle
