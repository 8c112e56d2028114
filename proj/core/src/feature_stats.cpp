#include "cdn/feature_stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "cdn/errors.hpp"
#include "cdn/ops.hpp"

namespace cdn {
namespace {

void require_eps(double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw InvalidInput("stats eps must be finite and >= 0");
}

void require_stats_for(const DomainStats& d, const Tensor& values, const char* what) {
  const Shape expect{values.dim(0), values.dim(1)};
  if (d.mu.shape() != expect || d.sigma.shape() != expect) {
    throw InvalidInput(std::string(what) + ": statistics shape " + shape_string(d.mu.shape()) + "/" +
                       shape_string(d.sigma.shape()) + " incompatible with " + shape_string(values.shape()));
  }
}

}  // namespace

DomainStats channel_stats(const Tensor& z, double eps) {
  require_feature_map(z, "channel_stats");
  require_eps(eps);
  const std::size_t planes = z.dim(0) * z.dim(1), m = z.dim(2) * z.dim(3);
  DomainStats d{Tensor(Shape{z.dim(0), z.dim(1)}), Tensor(Shape{z.dim(0), z.dim(1)})};
  for (std::size_t p = 0; p < planes; ++p) {
    const double* v = z.data() + p * m;
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += v[i];
    const double mu = acc / static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (v[i] - mu) * (v[i] - mu);
    d.mu[p] = mu;
    d.sigma[p] = std::sqrt(var / static_cast<double>(m) + eps);
  }
  return d;
}

std::pair<IntrinsicFeature, DomainStats> decompose(const Tensor& z, double eps) {
  DomainStats d = channel_stats(z, eps);
  const std::size_t planes = z.dim(0) * z.dim(1), m = z.dim(2) * z.dim(3);
  IntrinsicFeature i{Tensor::zeros_like(z)};
  for (std::size_t p = 0; p < planes; ++p) {
    if (!(d.sigma[p] > 0.0)) {
      throw InvalidInput("decompose: zero standard deviation in a constant channel with eps = 0");
    }
    for (std::size_t k = 0; k < m; ++k) i.values[p * m + k] = (z[p * m + k] - d.mu[p]) / d.sigma[p];
  }
  return {std::move(i), std::move(d)};
}

Tensor recompose(const IntrinsicFeature& i, const DomainStats& d) {
  require_feature_map(i.values, "recompose");
  require_stats_for(d, i.values, "recompose");
  const std::size_t planes = i.values.dim(0) * i.values.dim(1), m = i.values.dim(2) * i.values.dim(3);
  Tensor z = Tensor::zeros_like(i.values);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t k = 0; k < m; ++k) z[p * m + k] = d.sigma[p] * i.values[p * m + k] + d.mu[p];
  }
  return z;
}

Tensor domain_transform(const Tensor& z_a, const Tensor& z_b, double eps) {
  require_feature_map(z_a, "domain_transform source");
  require_feature_map(z_b, "domain_transform target");
  if (z_a.dim(0) != z_b.dim(0) || z_a.dim(1) != z_b.dim(1)) {
    throw InvalidInput("domain_transform: batch/channel mismatch " + shape_string(z_a.shape()) + " vs " +
                       shape_string(z_b.shape()));
  }
  auto [content, own] = decompose(z_a, eps);
  return recompose(content, channel_stats(z_b, eps));
}

Pairing plan_domain_mix(const std::vector<int>& domain_ids, double alpha, std::uint64_t seed) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("domain mix alpha must lie in [0, 1]");
  const std::size_t n = domain_ids.size();
  const auto count = static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(n) - 1e-12));
  if (count == 0) return {};
  const std::set<int> distinct(domain_ids.begin(), domain_ids.end());
  if (distinct.size() < 2) {
    throw DegenerateBatch("domain mixing with alpha > 0 needs at least two domains in the batch");
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  // One partner pool per source domain: every sample of another domain.
  std::map<int, std::vector<std::size_t>> pools;
  auto refill = [&](int domain) {
    auto& pool = pools[domain];
    pool.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (domain_ids[j] != domain) pool.push_back(j);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
  };

  Pairing pairing;
  pairing.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t src = order[k];
    const int domain = domain_ids[src];
    if (!pools.contains(domain) || pools[domain].empty()) refill(domain);
    auto& pool = pools[domain];
    pairing.push_back({src, pool.back()});
    pool.pop_back();
  }
  std::sort(pairing.begin(), pairing.end(), [](const MixPair& a, const MixPair& b) { return a.source < b.source; });
  return pairing;
}

std::vector<std::size_t> partner_index(const Pairing& pairing, std::size_t batch) {
  std::vector<std::size_t> idx(batch);
  for (std::size_t i = 0; i < batch; ++i) idx[i] = i;
  for (const MixPair& p : pairing) {
    if (p.source >= batch || p.partner >= batch) throw InvalidInput("pairing index outside the batch");
    idx[p.source] = p.partner;
  }
  return idx;
}

Tensor apply_domain_mix(const Tensor& batch, const Pairing& pairing, double eps) {
  require_feature_map(batch, "apply_domain_mix");
  require_eps(eps);
  Tensor out = batch;
  if (pairing.empty()) return out;
  const DomainStats d = channel_stats(batch, eps);
  const std::size_t c = batch.dim(1), m = batch.dim(2) * batch.dim(3);
  for (const MixPair& p : pairing) {
    if (p.source >= batch.dim(0) || p.partner >= batch.dim(0)) throw InvalidInput("pairing index outside the batch");
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t sp = p.source * c + ch, pp = p.partner * c + ch;
      for (std::size_t k = 0; k < m; ++k) {
        out[sp * m + k] = d.sigma[pp] * (batch[sp * m + k] - d.mu[sp]) / d.sigma[sp] + d.mu[pp];
      }
    }
  }
  return out;
}

std::pair<Tensor, Pairing> batch_domain_mix(const Tensor& batch, const std::vector<int>& domain_ids, double alpha,
                                            std::uint64_t seed, double eps) {
  require_feature_map(batch, "batch_domain_mix");
  if (domain_ids.size() != batch.dim(0)) throw InvalidInput("batch_domain_mix: one domain id per sample required");
  Pairing pairing = plan_domain_mix(domain_ids, alpha, seed);
  return {apply_domain_mix(batch, pairing, eps), std::move(pairing)};
}

namespace ad {

Var domain_mix(const Var& batch, const Pairing& pairing, double eps) {
  if (pairing.empty()) return batch;
  const std::size_t n = batch.shape().at(0);
  const std::vector<std::size_t> idx = partner_index(pairing, n);
  std::vector<bool> mixed(n, false);
  for (const MixPair& p : pairing) mixed[p.source] = true;
  Var content = instance_normalize(batch, eps);
  Var mu = gather_batch(channel_mean(batch), idx);
  Var sigma = gather_batch(channel_std(batch, eps), idx);
  return select_batch(mixed, scale_shift(content, sigma, mu), batch);
}

}  // namespace ad
}  // namespace cdn
