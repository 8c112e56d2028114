#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cdn::theory {

/// Diagonal Gaussian N(mean, diag(diag_var)).
struct GaussianSpec {
  std::vector<double> mean;
  std::vector<double> diag_var;

  void validate() const;
  std::size_t dim() const noexcept { return mean.size(); }
};

double gaussian_log_density(const GaussianSpec& g, std::span<const double> x);

/// Closed-form KL(p || q) between diagonal Gaussians.
double gaussian_kl(const GaussianSpec& p, const GaussianSpec& q);

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// E_p[log p - log q] from n samples of p.
MonteCarloEstimate gaussian_kl_monte_carlo(const GaussianSpec& p, const GaussianSpec& q, std::size_t n,
                                           std::uint64_t seed);

// --- Conditional independence on finite tables -----------------------------

/// Finite model over intrinsic values i, domains d and representations z.
/// cond[(i * n_d + d) * n_z + z] = P(z | i, d); prior[i * n_d + d] = P(d | i).
struct DiscreteCondModel {
  std::size_t n_i = 0;
  std::size_t n_d = 0;
  std::size_t n_z = 0;
  std::vector<double> cond;
  std::vector<double> prior;

  double p_z(std::size_t i, std::size_t d, std::size_t z) const { return cond[(i * n_d + d) * n_z + z]; }
  double& p_z(std::size_t i, std::size_t d, std::size_t z) { return cond[(i * n_d + d) * n_z + z]; }
  double p_d(std::size_t i, std::size_t d) const { return prior[i * n_d + d]; }

  /// Non-negative entries, rows summing to 1 within 1e-12. Throws InvalidInput.
  void validate() const;
};

struct Theorem1Report {
  /// max over (z, i, d) of |P(z|i,d) - P(z|i)|, with P(z|i) = sum_d P(d|i) P(z|i,d).
  double max_ci_violation = 0.0;
  /// P(z|i,d) identical across d for every i (up to tol).
  bool premise_holds = false;
  bool holds = false;
};

Theorem1Report verify_theorem1(const DiscreteCondModel& model, double tol);

DiscreteCondModel random_cond_model(std::size_t n_i, std::size_t n_d, std::size_t n_z, std::mt19937_64& rng);
/// Replaces every P(z|i,d) by its average over d, making z independent of d given i.
DiscreteCondModel equalize_over_domains(const DiscreteCondModel& model);
/// Adds `amount` to one entry of row (i, d) and renormalises that row.
DiscreteCondModel perturb_row(const DiscreteCondModel& model, std::size_t i, std::size_t d, std::size_t z,
                              double amount);

// --- Reconstruction likelihood versus latent KL ----------------------------

/// Gaussian latent model with an affine Gaussian decoder:
/// z | (i, d_A) ~ z_given_a, z | (i, d_B) ~ z_given_b,
/// x | z ~ N(W z + b, decoder_var * I), evaluated at x_a.
struct LatentGaussianSetup {
  GaussianSpec z_given_a;
  GaussianSpec z_given_b;
  std::vector<double> decoder_weight;  // data_dim x latent_dim, row-major
  std::vector<double> decoder_bias;    // data_dim
  double decoder_var = 1.0;
  std::vector<double> x_a;
  /// Inflate decoder_var (doubling) until P(z|i,d_A) >= P(x_a|z) on every
  /// sampled z, up to max_decoder_var.
  bool enforce_assumption = true;
  double max_decoder_var = 1e12;

  void validate() const;
  std::size_t data_dim() const noexcept { return x_a.size(); }
};

struct Theorem2Report {
  double nll = 0.0;  // -E_{z ~ P(z|i,d_B)} log P(x_a | z)
  double nll_std_error = 0.0;
  double kl = 0.0;  // KL(P(z|i,d_B) || P(z|i,d_A)), closed form
  double kl_monte_carlo = 0.0;
  double decoder_var_used = 0.0;
  std::size_t n_samples = 0;
  bool assumption_violated = false;
  /// nll >= kl - 3 * nll_std_error
  bool bound_holds = false;
};

Theorem2Report verify_theorem2_bound(const LatentGaussianSetup& setup, std::size_t n_samples, std::uint64_t seed);

/// Random setup with latent variances in [0.3, 2] so both latent densities stay below 1.
LatentGaussianSetup random_latent_setup(std::size_t latent_dim, std::size_t data_dim, std::mt19937_64& rng);

// --- Isotropic Gaussian likelihood versus squared error --------------------

/// phi_t(z) = weight * z + bias + t * direction, one decoder per grid value t.
struct AffineDecoderFamily {
  std::vector<double> weight;  // data_dim x latent_dim, row-major
  std::vector<double> bias;
  std::vector<double> direction;
};

struct NllEquivalenceReport {
  std::vector<double> grid;
  std::vector<double> nll;  // mean negative log-likelihood per grid point
  std::vector<double> mse;  // mean squared L2 norm per grid point
  double slope = 0.0;       // least-squares fit nll = slope * mse + intercept
  double intercept = 0.0;
  double expected_slope = 0.0;  // 1 / (2 lambda)
  double max_residual = 0.0;    // max |nll - (mse / (2 lambda) + K/2 log(2 pi lambda))|
  std::size_t argmin_nll = 0;
  std::size_t argmin_mse = 0;
};

NllEquivalenceReport gaussian_nll_equivalence(const std::vector<std::vector<double>>& z_samples,
                                              const std::vector<double>& x_a, const AffineDecoderFamily& family,
                                              const std::vector<double>& grid, double lambda_var);

// --- Log-density gap between latent and data likelihoods -------------------

/// (n/2) log(2 pi s_phi2) - (m/2) log(2 pi s_theta2) + bias_x / (2 s_phi2) - bias_z / (2 s_theta2)
double assumption_delta(std::size_t n, std::size_t m, double sigma_theta2, double sigma_phi2, double bias_x,
                        double bias_z);

// --- Report suite -----------------------------------------------------------

struct CheckRecord {
  std::string name;
  std::string statistic_name;
  double statistic = 0.0;
  std::string comparison;  // "<=", ">=", ">", "=="
  double threshold = 0.0;
  bool passed = false;
};

/// Known check names: kl, theorem1, theorem2, nll, delta.
const std::vector<std::string>& known_checks();
std::vector<CheckRecord> run_suite(const std::vector<std::string>& checks, std::uint64_t seed);
std::string to_json_line(const CheckRecord& r);

}  // namespace cdn::theory
