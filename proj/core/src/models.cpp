#include "cdn/models.hpp"

#include <cmath>

#include "cdn/errors.hpp"
#include "cdn/ops.hpp"

namespace cdn {
namespace {

ConvLayer make_conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(cin * k * k)));
  Tensor w(Shape{cout, cin, k, k});
  for (double& v : w.values()) v = normal(rng);
  return ConvLayer{ad::parameter(std::move(w)), ad::parameter(Tensor(Shape{cout})), stride, k / 2};
}

DenseLayer make_dense(std::size_t in, std::size_t out, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, gain * std::sqrt(2.0 / static_cast<double>(in)));
  Tensor w(Shape{out, in});
  for (double& v : w.values()) v = normal(rng);
  return DenseLayer{ad::parameter(std::move(w)), ad::parameter(Tensor(Shape{out}))};
}

ad::Var run_conv(const ConvLayer& l, const ad::Var& x) { return ad::conv2d(x, l.weight, l.bias, l.stride, l.pad); }

ad::Var copy_leaf(const ad::Var& v, bool requires_grad) { return ad::Var(v.value(), requires_grad); }

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kSilu: return "silu";
    case Activation::kIdentity: return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "silu") return Activation::kSilu;
  if (name == "identity") return Activation::kIdentity;
  throw InvalidConfig("unknown activation '" + name + "'");
}

ad::Var apply_activation(const ad::Var& x, Activation a) {
  switch (a) {
    case Activation::kLeakyRelu: return ad::leaky_relu(x, kLeakySlope);
    case Activation::kSilu: return ad::silu(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

void EncoderConfig::validate() const {
  if (in_channels == 0) throw InvalidConfig("in_channels must be >= 1");
  if (stage_channels.size() < 2) throw InvalidConfig("encoder needs >= 2 stages so layer taps 1 and 2 exist");
  for (std::size_t c : stage_channels) {
    if (c == 0) throw InvalidConfig("stage channel counts must be >= 1");
  }
  if (kernel_size == 0 || kernel_size % 2 == 0) throw InvalidConfig("kernel_size must be odd");
  if (classifier_hidden == 0) throw InvalidConfig("classifier_hidden must be >= 1");
  if (image_size == 0) throw InvalidConfig("image_size must be >= 1");
  if (downsample && image_size % (std::size_t{1} << stage_channels.size()) != 0) {
    throw InvalidConfig("image_size must be divisible by 2^stages when downsampling");
  }
}

std::size_t EncoderConfig::stage_size(std::size_t stage) const {
  return downsample ? image_size >> stage : image_size;
}

std::array<std::size_t, 3> EncoderConfig::tap_channels() const {
  const std::size_t l = stage_channels.size();
  return {stage_channels[0], stage_channels[l - 2], l >= 3 ? stage_channels[l - 3] : in_channels};
}

std::size_t EncoderConfig::embedding_width() const {
  if (classifier_conv > 0) return 3 * classifier_conv;
  const auto ch = tap_channels();
  return ch[0] + ch[1] + ch[2];
}

void validate_layer_taps(const std::vector<int>& taps) {
  if (taps.empty()) throw InvalidConfig("layer_taps must be nonempty");
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] != 1 && taps[i] != 2) throw InvalidConfig("layer taps must be drawn from {1, 2}");
    for (std::size_t j = 0; j < i; ++j) {
      if (taps[j] == taps[i]) throw InvalidConfig("duplicate layer tap");
    }
  }
}

Encoder::Encoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg.validate();
  std::size_t cin = cfg.in_channels;
  for (std::size_t c : cfg.stage_channels) {
    layers_.push_back(make_conv(cin, c, cfg.kernel_size, cfg.downsample ? 2 : 1, rng));
    cin = c;
  }
}

EncoderOutput Encoder::forward(const ad::Var& x, const StageHook& hook) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != cfg_.in_channels || s[2] != cfg_.image_size || s[3] != cfg_.image_size) {
    throw InvalidInput("encoder input " + shape_string(s) + " does not match (N, " + std::to_string(cfg_.in_channels) +
                       ", " + std::to_string(cfg_.image_size) + ", " + std::to_string(cfg_.image_size) + ")");
  }
  EncoderOutput out;
  ad::Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = apply_activation(run_conv(layers_[i], h), cfg_.activation);
    if (hook) h = hook(i + 1, h);
    out.stages.push_back(h);
  }
  return out;
}

std::vector<ad::Var> Encoder::parameters() const {
  std::vector<ad::Var> p;
  for (const ConvLayer& l : layers_) {
    p.push_back(l.weight);
    p.push_back(l.bias);
  }
  return p;
}

Encoder Encoder::clone(bool requires_grad) const {
  Encoder e;
  e.cfg_ = cfg_;
  for (const ConvLayer& l : layers_) {
    e.layers_.push_back(ConvLayer{copy_leaf(l.weight, requires_grad), copy_leaf(l.bias, requires_grad), l.stride, l.pad});
  }
  return e;
}

Decoder::Decoder(const EncoderConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg.validate();
  const auto& ch = cfg.stage_channels;
  for (std::size_t i = ch.size(); i-- > 0;) {
    const std::size_t cout = i == 0 ? cfg.in_channels : ch[i - 1];
    layers_.push_back(make_conv(ch[i], cout, cfg.kernel_size, 1, rng));
  }
}

DecoderOutput Decoder::forward(const ad::Var& z) const {
  const Shape& s = z.shape();
  const std::size_t latent = cfg_.stage_size(cfg_.stage_channels.size());
  if (s.size() != 4 || s[1] != cfg_.stage_channels.back() || s[2] != latent || s[3] != latent) {
    throw InvalidInput("decoder input " + shape_string(s) + " is not the encoder's latent shape");
  }
  DecoderOutput out;
  ad::Var h = z;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (cfg_.downsample) h = ad::upsample2x(h);
    h = run_conv(layers_[i], h);
    if (i + 1 < layers_.size()) h = apply_activation(h, cfg_.activation);
    out.stages.push_back(h);
  }
  return out;
}

std::vector<ad::Var> Decoder::parameters() const {
  std::vector<ad::Var> p;
  for (const ConvLayer& l : layers_) {
    p.push_back(l.weight);
    p.push_back(l.bias);
  }
  return p;
}

Classifier::Classifier(const EncoderConfig& cfg, std::mt19937_64& rng) : activation_(cfg.activation) {
  if (cfg.classifier_conv > 0) {
    for (std::size_t c : cfg.tap_channels()) taps_.push_back(make_conv(c, cfg.classifier_conv, cfg.kernel_size, 1, rng));
  }
  hidden_ = make_dense(cfg.embedding_width(), cfg.classifier_hidden, 1.0, rng);
  head_ = make_dense(cfg.classifier_hidden, 1, 0.1, rng);
}

ClassifierOutput Classifier::forward(const std::vector<ad::Var>& taps) const {
  if (taps.size() != 3) {
    throw InvalidInput("classifier needs 3 taps (encoder stage 1, decoder stages 1 and 2), got " +
                       std::to_string(taps.size()));
  }
  std::vector<ad::Var> pooled;
  for (std::size_t k = 0; k < taps.size(); ++k) {
    if (!taps[k].defined()) throw InvalidInput("classifier tap missing");
    const ad::Var f = taps_.empty() ? taps[k] : apply_activation(run_conv(taps_[k], taps[k]), activation_);
    pooled.push_back(ad::channel_mean(f));
  }
  ClassifierOutput out;
  out.embedding = ad::concat_features(pooled);
  ad::Var h = apply_activation(ad::linear(out.embedding, hidden_.weight, hidden_.bias), activation_);
  out.scores = ad::sigmoid(ad::linear(h, head_.weight, head_.bias));
  return out;
}

std::vector<ad::Var> Classifier::parameters() const {
  std::vector<ad::Var> p;
  for (const ConvLayer& l : taps_) {
    p.push_back(l.weight);
    p.push_back(l.bias);
  }
  for (const ad::Var& v : {hidden_.weight, hidden_.bias, head_.weight, head_.bias}) p.push_back(v);
  return p;
}

ModelBundle ModelBundle::create(const EncoderConfig& cfg, std::vector<int> layer_taps, std::uint64_t seed) {
  cfg.validate();
  validate_layer_taps(layer_taps);
  std::mt19937_64 rng(seed);
  ModelBundle b;
  b.config = cfg;
  b.encoder = Encoder(cfg, rng);
  b.decoder = Decoder(cfg, rng);
  b.classifier = Classifier(cfg, rng);
  b.momentum_encoder = b.encoder.clone(false);
  b.layer_taps = std::move(layer_taps);
  return b;
}

std::vector<std::pair<std::string, ad::Var>> ModelBundle::named_parameters() const {
  std::vector<std::pair<std::string, ad::Var>> out;
  auto add_convs = [&out](const std::string& prefix, const std::vector<ConvLayer>& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out.emplace_back(prefix + "." + std::to_string(i) + ".weight", layers[i].weight);
      out.emplace_back(prefix + "." + std::to_string(i) + ".bias", layers[i].bias);
    }
  };
  add_convs("encoder", encoder.layers());
  add_convs("decoder", decoder.layers());
  add_convs("momentum_encoder", momentum_encoder.layers());
  const auto cls = classifier.parameters();
  const std::size_t n_tap = cls.size() - 4;
  for (std::size_t k = 0; k < n_tap; ++k) {
    out.emplace_back("classifier.tap." + std::to_string(k / 2) + (k % 2 ? ".bias" : ".weight"), cls[k]);
  }
  out.emplace_back("classifier.hidden.weight", cls[n_tap]);
  out.emplace_back("classifier.hidden.bias", cls[n_tap + 1]);
  out.emplace_back("classifier.head.weight", cls[n_tap + 2]);
  out.emplace_back("classifier.head.bias", cls[n_tap + 3]);
  return out;
}

std::vector<ad::Var> ModelBundle::trainable_parameters() const {
  std::vector<ad::Var> p = encoder.parameters();
  for (const auto& v : decoder.parameters()) p.push_back(v);
  for (const auto& v : classifier.parameters()) p.push_back(v);
  return p;
}

void momentum_update(const std::vector<ad::Var>& online, const std::vector<ad::Var>& target, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw InvalidInput("momentum must lie in [0, 1]");
  if (online.size() != target.size()) throw InvalidInput("momentum_update: parameter count mismatch");
  for (std::size_t k = 0; k < online.size(); ++k) {
    if (online[k].shape() != target[k].shape()) {
      throw InvalidInput("momentum_update: shape mismatch " + shape_string(online[k].shape()) + " vs " +
                         shape_string(target[k].shape()));
    }
  }
  for (std::size_t k = 0; k < online.size(); ++k) {
    const Tensor& o = online[k].value();
    Tensor& t = target[k].value_mut();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = m * t[i] + (1.0 - m) * o[i];
  }
}

void momentum_update(const Encoder& online, Encoder& target, double m) {
  momentum_update(online.parameters(), target.parameters(), m);
}

std::vector<ad::Var> classifier_taps(const EncoderOutput& enc, const DecoderOutput& dec) {
  if (enc.stages.empty() || dec.stages.size() < 2) throw InvalidInput("classifier taps need 1 encoder and 2 decoder stages");
  return {enc.stages[0], dec.stages[0], dec.stages[1]};
}

EncoderOutput encode(const Tensor& x, const Encoder& encoder) { return encoder.forward(ad::constant(x)); }

Tensor decode(const Tensor& z, const Decoder& decoder) { return decoder.forward(ad::constant(z)).image().value(); }

std::vector<ForgeryScore> classify(const std::vector<Tensor>& taps, const Classifier& classifier) {
  std::vector<ad::Var> vars;
  for (const Tensor& t : taps) vars.push_back(ad::constant(t));
  const ClassifierOutput out = classifier.forward(vars);
  std::vector<ForgeryScore> scores;
  for (double v : out.scores.value().values()) scores.push_back(ForgeryScore{v});
  return scores;
}

}  // namespace cdn
