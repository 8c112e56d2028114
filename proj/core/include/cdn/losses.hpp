#pragma once

#include <span>
#include <vector>

#include "cdn/autograd.hpp"
#include "cdn/feature_stats.hpp"
#include "cdn/models.hpp"

namespace cdn {

inline constexpr double kBceClamp = 1e-7;

/// Relative weights of the auxiliary losses. lambda_b = 0 disables the
/// domain boundary constraint.
struct LossWeights {
  double lambda_d = 0.1;
  double lambda_i = 0.1;
  double lambda_s = 0.1;
  double lambda_b = 0.0;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Unweighted loss terms of one step plus their weighted total.
struct LossBreakdown {
  double cls = 0.0;
  double d = 0.0;
  double i = 0.0;
  double s = 0.0;
  double b = 0.0;
  double total = 0.0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

/// Mean squared error between the decoded restyled latent and the original image.
ad::Var denoising_reconstruction_loss(const ad::Var& reconstruction, const ad::Var& x_a);
ad::Var denoising_reconstruction_loss(const ad::Var& z_out, const ad::Var& x_a, const Decoder& decoder);

/// Mean squared error between a re-encoded latent and z_out. z_out is the
/// target and receives no gradient.
ad::Var intrinsic_loss(const ad::Var& reencoded, const ad::Var& z_out);
ad::Var intrinsic_loss(const ad::Var& z_out, const Encoder& encoder, const Decoder& decoder);

/// Sum over tapped stages of squared distances between channel means and
/// between channel stds, summed over channels and averaged over the batch.
/// `reference[k]` and `reconstructed[k]` are the features of tap k.
ad::Var domain_alignment_loss(const std::vector<ad::Var>& reference, const std::vector<ad::Var>& reconstructed,
                              double eps = kDefaultStatsEps);
/// Full form: encodes x_b and decoder(z_out) with `encoder`, compares at `layer_taps`.
ad::Var domain_alignment_loss(const ad::Var& x_b, const ad::Var& z_out, const Encoder& encoder,
                              const Decoder& decoder, const std::vector<int>& layer_taps,
                              double eps = kDefaultStatsEps);

/// 0.5 * (1 - cos(x, y)), in [0, 1].
double cosine_distance(std::span<const double> x, std::span<const double> y);

/// Contrastive boundary term over rows of (N_r, F) real and (N_f, F) fake
/// representations: mean real-real distance minus mean real-fake distance.
ad::Var boundary_loss(const ad::Var& real_reps, const ad::Var& fake_reps);
double boundary_loss(const std::vector<std::vector<double>>& real_reps,
                     const std::vector<std::vector<double>>& fake_reps);

/// Mean binary cross-entropy, scores clamped at kBceClamp.
ad::Var classification_loss(const ad::Var& scores, const std::vector<double>& labels);
double classification_loss(std::span<const double> scores, std::span<const int> labels);

/// Weighted sum; throws TrainingDivergence(step) on any non-finite part.
LossBreakdown total_loss(const LossBreakdown& parts, const LossWeights& w, std::int64_t step = -1);

}  // namespace cdn
