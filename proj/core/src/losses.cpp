#include "cdn/losses.hpp"

#include <algorithm>
#include <cmath>

#include "cdn/errors.hpp"
#include "cdn/ops.hpp"

namespace cdn {

void LossWeights::validate() const {
  for (double w : {lambda_d, lambda_i, lambda_s, lambda_b}) {
    if (!std::isfinite(w) || w < 0.0) throw InvalidConfig("loss weights must be finite and non-negative");
  }
}

ad::Var denoising_reconstruction_loss(const ad::Var& reconstruction, const ad::Var& x_a) {
  if (reconstruction.shape() != x_a.shape()) {
    throw InvalidInput("denoising reconstruction: decoder output " + shape_string(reconstruction.shape()) +
                       " vs image " + shape_string(x_a.shape()));
  }
  return ad::mean_squared_error(reconstruction, x_a);
}

ad::Var denoising_reconstruction_loss(const ad::Var& z_out, const ad::Var& x_a, const Decoder& decoder) {
  return denoising_reconstruction_loss(decoder.forward(z_out).image(), x_a);
}

ad::Var intrinsic_loss(const ad::Var& reencoded, const ad::Var& z_out) {
  if (reencoded.shape() != z_out.shape()) {
    throw InvalidInput("intrinsic loss: re-encoded " + shape_string(reencoded.shape()) + " vs latent " +
                       shape_string(z_out.shape()));
  }
  return ad::mean_squared_error(reencoded, ad::detach(z_out));
}

ad::Var intrinsic_loss(const ad::Var& z_out, const Encoder& encoder, const Decoder& decoder) {
  return intrinsic_loss(encoder.forward(decoder.forward(z_out).image()).final(), z_out);
}

ad::Var domain_alignment_loss(const std::vector<ad::Var>& reference, const std::vector<ad::Var>& reconstructed,
                              double eps) {
  if (reference.empty()) throw InvalidConfig("domain alignment needs at least one layer tap");
  if (reference.size() != reconstructed.size()) throw InvalidInput("domain alignment: tap count mismatch");
  ad::Var total;
  for (std::size_t k = 0; k < reference.size(); ++k) {
    if (reference[k].shape() != reconstructed[k].shape()) {
      throw InvalidInput("domain alignment: tap feature shape mismatch");
    }
    ad::Var term = ad::add(ad::batch_squared_distance(ad::channel_mean(reference[k]), ad::channel_mean(reconstructed[k])),
                           ad::batch_squared_distance(ad::channel_std(reference[k], eps),
                                                      ad::channel_std(reconstructed[k], eps)));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

ad::Var domain_alignment_loss(const ad::Var& x_b, const ad::Var& z_out, const Encoder& encoder,
                              const Decoder& decoder, const std::vector<int>& layer_taps, double eps) {
  if (layer_taps.empty()) throw InvalidConfig("domain alignment needs at least one layer tap");
  const EncoderOutput ref = encoder.forward(x_b);
  const EncoderOutput rec = encoder.forward(decoder.forward(z_out).image());
  std::vector<ad::Var> a, b;
  for (int tap : layer_taps) {
    if (tap < 1 || static_cast<std::size_t>(tap) > ref.stages.size()) throw InvalidConfig("layer tap out of range");
    a.push_back(ref.stages[static_cast<std::size_t>(tap) - 1]);
    b.push_back(rec.stages[static_cast<std::size_t>(tap) - 1]);
  }
  return domain_alignment_loss(a, b, eps);
}

double cosine_distance(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidInput("cosine_distance: length mismatch");
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx += x[i] * x[i];
    yy += y[i] * y[i];
    xy += x[i] * y[i];
  }
  if (!(xx > 0.0) || !(yy > 0.0)) throw InvalidInput("cosine_distance: zero vector");
  const double cos = std::clamp(xy / (std::sqrt(xx) * std::sqrt(yy)), -1.0, 1.0);
  return 0.5 * (1.0 - cos);
}

ad::Var boundary_loss(const ad::Var& real_reps, const ad::Var& fake_reps) {
  return ad::boundary_contrast(real_reps, fake_reps);
}

double boundary_loss(const std::vector<std::vector<double>>& real_reps,
                     const std::vector<std::vector<double>>& fake_reps) {
  if (real_reps.size() < 2 || fake_reps.empty()) {
    throw InvalidInput("boundary_loss: needs >= 2 real and >= 1 fake representation");
  }
  auto to_tensor = [](const std::vector<std::vector<double>>& rows) {
    const std::size_t f = rows.front().size();
    Tensor t(Shape{rows.size(), f});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != f) throw InvalidInput("boundary_loss: ragged representations");
      for (std::size_t c = 0; c < f; ++c) t.at(r, c) = rows[r][c];
    }
    return t;
  };
  return ad::boundary_contrast(ad::constant(to_tensor(real_reps)), ad::constant(to_tensor(fake_reps))).value().item();
}

ad::Var classification_loss(const ad::Var& scores, const std::vector<double>& labels) {
  return ad::binary_cross_entropy(scores, labels, kBceClamp);
}

double classification_loss(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InvalidInput("classification_loss: length mismatch");
  std::vector<double> y;
  for (int l : labels) {
    if (l != 0 && l != 1) throw InvalidInput("classification_loss: labels must be 0 or 1");
    y.push_back(l);
  }
  Tensor s(Shape{scores.size()}, std::vector<double>(scores.begin(), scores.end()));
  return ad::binary_cross_entropy(ad::constant(std::move(s)), y, kBceClamp).value().item();
}

LossBreakdown total_loss(const LossBreakdown& parts, const LossWeights& w, std::int64_t step) {
  w.validate();
  for (double v : {parts.cls, parts.d, parts.i, parts.s, parts.b}) {
    if (!std::isfinite(v)) throw TrainingDivergence(step, "non-finite loss term");
  }
  LossBreakdown out = parts;
  out.total = parts.cls + w.lambda_d * parts.d + w.lambda_i * parts.i + w.lambda_s * parts.s;
  if (w.lambda_b > 0.0) out.total += w.lambda_b * parts.b;
  if (!std::isfinite(out.total)) throw TrainingDivergence(step, "non-finite total loss");
  return out;
}

}  // namespace cdn
