#pragma once

#include <cstddef>
#include <vector>

#include "cdn/autograd.hpp"

namespace cdn::ad {

// Convolution and resampling -------------------------------------------------

/// 2-D cross-correlation. x: (N, Cin, H, W), weight: (Cout, Cin, K, K), bias: (Cout).
Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t pad);

/// Nearest-neighbour 2x upsampling of (N, C, H, W).
Var upsample2x(const Var& x);

// Pointwise ------------------------------------------------------------------

Var leaky_relu(const Var& x, double slope);
Var silu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double s);

// Per-sample, per-channel statistics over (H, W) -----------------------------

/// Spatial mean, (N, C, H, W) -> (N, C). Doubles as global average pooling.
Var channel_mean(const Var& x);
/// sqrt(population variance + eps), (N, C, H, W) -> (N, C).
Var channel_std(const Var& x, double eps);
/// (x - mean) / std with the statistics above.
Var instance_normalize(const Var& x, double eps);
/// y[n,c,:,:] = x[n,c,:,:] * scale[n,c] + shift[n,c].
Var scale_shift(const Var& x, const Var& scale, const Var& shift);

// Batch plumbing -------------------------------------------------------------

/// y[n] = x[index[n]]; gradients scatter-add back.
Var gather_batch(const Var& x, const std::vector<std::size_t>& index);
/// y[n] = take_a[n] ? a[n] : b[n].
Var select_batch(const std::vector<bool>& take_a, const Var& a, const Var& b);
Var concat_batch(const std::vector<Var>& parts);
Var slice_batch(const Var& x, std::size_t begin, std::size_t count);
/// Concatenates (N, F_i) matrices along the feature axis.
Var concat_features(const std::vector<Var>& parts);

// Dense ----------------------------------------------------------------------

/// x: (N, F), weight: (O, F), bias: (O) -> (N, O).
Var linear(const Var& x, const Var& weight, const Var& bias);

// Reductions to scalars ------------------------------------------------------

/// mean((a - b)^2) over every element.
Var mean_squared_error(const Var& a, const Var& b);
/// mean over the batch of sum over remaining axes of (a - b)^2.
Var batch_squared_distance(const Var& a, const Var& b);
/// Mean binary cross-entropy of probabilities against {0,1} labels, with
/// probabilities clamped to [clamp, 1 - clamp].
Var binary_cross_entropy(const Var& scores, const std::vector<double>& labels, double clamp);
/// Mean real-real cosine distance minus mean real-fake cosine distance over
/// rows of (N_r, F) and (N_f, F) matrices.
Var boundary_contrast(const Var& real, const Var& fake);

}  // namespace cdn::ad
