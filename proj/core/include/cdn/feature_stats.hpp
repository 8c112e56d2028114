#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cdn/autograd.hpp"
#include "cdn/tensor.hpp"

namespace cdn {

inline constexpr double kDefaultStatsEps = 1e-5;

/// Per-sample, per-channel style statistics of a feature map.
/// `mu` and `sigma` are both (N, C); sigma = sqrt(population variance + eps).
struct DomainStats {
  Tensor mu;
  Tensor sigma;
};

/// Feature map normalised per sample and channel: zero mean, unit std.
struct IntrinsicFeature {
  Tensor values;
};

/// Spatial mean and std of each (n, c) plane.
DomainStats channel_stats(const Tensor& z, double eps = kDefaultStatsEps);

/// Splits z into its normalised content and its style statistics.
std::pair<IntrinsicFeature, DomainStats> decompose(const Tensor& z, double eps = kDefaultStatsEps);

/// Inverse of decompose: sigma * i + mu per (n, c).
Tensor recompose(const IntrinsicFeature& i, const DomainStats& d);

/// Re-styles z_a with the statistics of z_b (sample n of z_a takes the
/// statistics of sample n of z_b).
Tensor domain_transform(const Tensor& z_a, const Tensor& z_b, double eps = kDefaultStatsEps);

/// One restyled sample: `source` takes the statistics of `partner`.
struct MixPair {
  std::size_t source;
  std::size_t partner;
  friend bool operator==(const MixPair&, const MixPair&) = default;
};
using Pairing = std::vector<MixPair>;

/// Chooses which samples of a batch get restyled and by whom.
///
/// Exactly ceil(alpha * N) sources are taken as the first entries of a seeded
/// shuffle. Each source draws a partner with a different domain id, uniformly
/// and without replacement from that pool; a pool that runs dry is refilled
/// (sampling with replacement from then on).
Pairing plan_domain_mix(const std::vector<int>& domain_ids, double alpha, std::uint64_t seed);

/// Partner index for every sample, the sample itself when untouched.
std::vector<std::size_t> partner_index(const Pairing& pairing, std::size_t batch);

/// Applies a pairing to a batch. Untouched samples are copied verbatim.
Tensor apply_domain_mix(const Tensor& batch, const Pairing& pairing, double eps = kDefaultStatsEps);

/// plan_domain_mix followed by apply_domain_mix.
std::pair<Tensor, Pairing> batch_domain_mix(const Tensor& batch, const std::vector<int>& domain_ids, double alpha,
                                            std::uint64_t seed, double eps = kDefaultStatsEps);

namespace ad {
/// Differentiable apply_domain_mix: gradients reach both the source content
/// and the partner statistics.
Var domain_mix(const Var& batch, const Pairing& pairing, double eps = kDefaultStatsEps);
}  // namespace ad

}  // namespace cdn
