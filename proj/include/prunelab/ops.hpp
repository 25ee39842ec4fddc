#pragma once

#include <vector>

#include "prunelab/tensor.hpp"

namespace prunelab {

enum class Mode { Train, Eval };

/// Running statistics of a batchnorm layer. `initialized` guards eval-mode
/// use before any train-mode update (or explicit initialization).
struct BatchNormState {
  std::vector<float> running_mean;
  std::vector<float> running_var;
  bool initialized = false;

  static BatchNormState identity(int channels) {
    BatchNormState s;
    s.running_mean.assign(static_cast<size_t>(channels), 0.0f);
    s.running_var.assign(static_cast<size_t>(channels), 1.0f);
    s.initialized = true;
    return s;
  }
  static BatchNormState uninitialized(int channels) {
    BatchNormState s = identity(channels);
    s.initialized = false;
    return s;
  }
};

// Layer primitives. Every op returns a fresh tensor and, when `tape` is
// non-null and an input requires grad, records its backward rule. Gradients
// accumulate by summation across multiple uses of a tensor.

/// Cross-correlation with zero padding. input [N,Cin,H,W], weight
/// [Cout,Cin,kH,kW], bias [Cout]. Output extent floor((H+2p-kH)/s)+1 must be
/// positive.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding, Tape* tape = nullptr);

/// Affine map input[N,D] x weight[D,M] + bias[M].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias,
             Tape* tape = nullptr);

/// Train mode normalizes by per-channel batch statistics (biased variance
/// over N*H*W) and updates `state` with the given momentum; eval mode uses
/// the running statistics and requires state.initialized.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma,
                   const Tensor& beta, BatchNormState& state, Mode mode,
                   float momentum, float epsilon, Tape* tape = nullptr);

Tensor relu(const Tensor& input, Tape* tape = nullptr);

/// Max pooling without padding; ties route the gradient to the first
/// (row-major lowest) index.
Tensor max_pool2d(const Tensor& input, int kernel, int stride,
                  Tape* tape = nullptr);

/// [N,C,H,W] -> [N,C] spatial mean.
Tensor global_avg_pool(const Tensor& input, Tape* tape = nullptr);

/// [N,...] -> [N,prod(...)].
Tensor flatten(const Tensor& input, Tape* tape = nullptr);

/// Residual join; both shapes must be identical.
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

Tensor scale(const Tensor& a, float factor, Tape* tape = nullptr);

/// Sum of all entries -> scalar (shape [1]).
Tensor sum_all(const Tensor& a, Tape* tape = nullptr);

/// Per-channel x*scale + shift on [N,C,H,W]; used to fold input
/// normalization into the forward pass. Gradient flows to x only.
Tensor channel_affine(const Tensor& input, const std::vector<float>& scale,
                      const std::vector<float>& shift, Tape* tape = nullptr);

/// Mean over the batch of -log softmax(logits)[label], max-stabilized.
/// Gradient is (softmax - onehot)/N.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels,
                             Tape* tape = nullptr);

/// Seeds d(loss)/d(loss)=1 and replays the tape in reverse. loss must be a
/// scalar produced through `tape`.
void backward(Tensor& loss, Tape& tape);

}  // namespace prunelab
