#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cdn/autograd.hpp"
#include "cdn/tensor.hpp"

namespace cdn {

enum class Activation { kLeakyRelu, kSilu, kIdentity };

inline constexpr double kLeakySlope = 0.1;

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Shape of the toy convolutional backbone. Each encoder stage is one
/// k x k convolution (stride 2 when `downsample`) followed by the activation;
/// the decoder mirrors it with nearest upsampling.
struct EncoderConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> stage_channels{32, 64, 128};
  std::size_t image_size = 64;
  std::size_t kernel_size = 3;
  bool downsample = true;
  Activation activation = Activation::kLeakyRelu;
  std::size_t classifier_hidden = 64;
  /// Width of the classifier's own k x k convolution on each tap; 0 pools the
  /// taps directly.
  std::size_t classifier_conv = 32;

  /// Throws InvalidConfig. Requires >= 2 stages so layer taps 1 and 2 exist.
  void validate() const;
  /// Spatial size after stage `stage` (1-based).
  std::size_t stage_size(std::size_t stage) const;
  /// Channels of the three classifier taps: encoder stage 1, decoder stages 1 and 2.
  std::array<std::size_t, 3> tap_channels() const;
  /// Width of the pooled classifier embedding.
  std::size_t embedding_width() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct ConvLayer {
  ad::Var weight;  // (Cout, Cin, K, K)
  ad::Var bias;    // (Cout)
  std::size_t stride = 1;
  std::size_t pad = 0;
};

struct DenseLayer {
  ad::Var weight;  // (O, F)
  ad::Var bias;    // (O)
};

ad::Var apply_activation(const ad::Var& x, Activation a);

/// Called after each encoder stage with the 1-based stage index; returns the
/// value to feed forward. Training uses it for domain transformation.
using StageHook = std::function<ad::Var(std::size_t stage, const ad::Var& features)>;

struct EncoderOutput {
  std::vector<ad::Var> stages;  // post-hook activations, stage 1 first
  const ad::Var& final() const { return stages.back(); }
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  EncoderOutput forward(const ad::Var& x, const StageHook& hook = {}) const;

  std::vector<ConvLayer>& layers() noexcept { return layers_; }
  const std::vector<ConvLayer>& layers() const noexcept { return layers_; }
  std::vector<ad::Var> parameters() const;
  /// Deep copy with fresh leaves.
  Encoder clone(bool requires_grad) const;

 private:
  EncoderConfig cfg_;
  std::vector<ConvLayer> layers_;
};

struct DecoderOutput {
  std::vector<ad::Var> stages;  // every stage output; the last is the image
  const ad::Var& image() const { return stages.back(); }
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const EncoderConfig& cfg, std::mt19937_64& rng);

  DecoderOutput forward(const ad::Var& z) const;

  std::vector<ConvLayer>& layers() noexcept { return layers_; }
  const std::vector<ConvLayer>& layers() const noexcept { return layers_; }
  std::vector<ad::Var> parameters() const;

 private:
  EncoderConfig cfg_;
  std::vector<ConvLayer> layers_;
};

struct ClassifierOutput {
  ad::Var embedding;  // (N, F) pooled, concatenated taps
  ad::Var scores;     // (N, 1) in [0, 1]
};

/// Per tap: conv -> act -> global average pool. The pooled vectors are
/// concatenated, then dense -> act -> dense -> sigmoid.
class Classifier {
 public:
  Classifier() = default;
  Classifier(const EncoderConfig& cfg, std::mt19937_64& rng);

  /// taps = [encoder stage 1, decoder stage 1, decoder stage 2].
  ClassifierOutput forward(const std::vector<ad::Var>& taps) const;

  std::vector<ConvLayer>& tap_layers() noexcept { return taps_; }
  DenseLayer& hidden() noexcept { return hidden_; }
  DenseLayer& head() noexcept { return head_; }
  std::vector<ad::Var> parameters() const;

 private:
  Activation activation_ = Activation::kLeakyRelu;
  std::vector<ConvLayer> taps_;
  DenseLayer hidden_;
  DenseLayer head_;
};

struct ForgeryScore {
  double value = 0.5;
};

/// Everything that is trained or tracked: online encoder, decoder, EMA copy
/// of the encoder used for loss targets, and the classifier head.
struct ModelBundle {
  EncoderConfig config;
  Encoder encoder;
  Decoder decoder;
  Encoder momentum_encoder;
  Classifier classifier;
  std::vector<int> layer_taps{1, 2};

  static ModelBundle create(const EncoderConfig& cfg, std::vector<int> layer_taps, std::uint64_t seed);

  /// Stable names in a fixed order; the checkpoint format relies on it.
  std::vector<std::pair<std::string, ad::Var>> named_parameters() const;
  /// Parameters updated by the optimizer (everything but the momentum encoder).
  std::vector<ad::Var> trainable_parameters() const;
};

/// Throws InvalidConfig unless taps is a nonempty subset of {1, 2}.
void validate_layer_taps(const std::vector<int>& taps);

/// target <- m * target + (1 - m) * online, elementwise.
void momentum_update(const std::vector<ad::Var>& online, const std::vector<ad::Var>& target, double m);
void momentum_update(const Encoder& online, Encoder& target, double m);

/// Classifier taps from an encoder and decoder pass.
std::vector<ad::Var> classifier_taps(const EncoderOutput& enc, const DecoderOutput& dec);

// Inference helpers on plain tensors.
EncoderOutput encode(const Tensor& x, const Encoder& encoder);
Tensor decode(const Tensor& z, const Decoder& decoder);
std::vector<ForgeryScore> classify(const std::vector<Tensor>& taps, const Classifier& classifier);

}  // namespace cdn
