#pragma once

#include <vector>

#include "fedlsi/nn/tensor.hpp"
#include "fedlsi/util.hpp"

namespace fedlsi::nn {

// Differentiable ops. Every op records a pullback on the tape when the tape
// is non-null and any input requires gradients; passing a null tape gives a
// plain forward evaluation.

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape* tape, const TensorPtr& a, double c);

// (b,p) + (p) broadcast over rows
TensorPtr add_rowvec(Tape* tape, const TensorPtr& x, const TensorPtr& v);
TensorPtr sub_rowvec(Tape* tape, const TensorPtr& x, const TensorPtr& v);

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
// a (m,k) times b (n,k) transposed -> (m,n); the dense-layer workhorse
TensorPtr matmul_nt(Tape* tape, const TensorPtr& a, const TensorPtr& b);

TensorPtr relu(Tape* tape, const TensorPtr& x);
TensorPtr leaky_relu(Tape* tape, const TensorPtr& x, double slope);
TensorPtr sigmoid(Tape* tape, const TensorPtr& x);
TensorPtr log_elem(Tape* tape, const TensorPtr& x);
TensorPtr clamp_min(Tape* tape, const TensorPtr& x, double lo);
TensorPtr square(Tape* tape, const TensorPtr& x);

TensorPtr sum_all(Tape* tape, const TensorPtr& x);
TensorPtr mean_all(Tape* tape, const TensorPtr& x);
// (b,p) -> (p): mean over the batch dimension
TensorPtr batch_mean(Tape* tape, const TensorPtr& x);
// Euclidean norm of all elements; subgradient 0 at the origin
TensorPtr l2_norm(Tape* tape, const TensorPtr& x);
// mean over all elements of |a - b|
TensorPtr mean_abs_diff(Tape* tape, const TensorPtr& a, const TensorPtr& b);

TensorPtr concat_cols(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr gather_rows(Tape* tape, const TensorPtr& x, const std::vector<std::size_t>& rows);

// Inverted dropout; identity in eval mode. The mask is drawn from `rng`.
TensorPtr dropout(Tape* tape, const TensorPtr& x, double p, Rng& rng, bool training);

// Per-row normalization with learnable affine, eps inside the sqrt.
TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, double eps);

// Mean over the batch of -log softmax(logits)[label]; numerically stable.
TensorPtr cross_entropy(Tape* tape, const TensorPtr& logits, const std::vector<int>& labels);

}  // namespace fedlsi::nn
