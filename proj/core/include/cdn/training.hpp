#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cdn/losses.hpp"
#include "cdn/models.hpp"
#include "cdn/synthdata.hpp"

namespace cdn {

/// Which encoder evaluates the L_i and L_s targets.
enum class TargetEncoder { kMomentum, kOnline };

struct TrainConfig {
  EncoderConfig model;
  std::size_t batch_size = 16;
  double lr = 2e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double momentum_m = 0.999;
  double alpha = 0.3;
  std::vector<int> layer_taps{1, 2};
  LossWeights weights;
  /// Required; -1 means unset.
  std::int64_t steps = -1;
  std::uint64_t seed = 0;
  /// lr is multiplied by lr_decay_factor every ceil(lr_decay_fraction * steps) steps.
  double lr_decay_fraction = 0.4;
  double lr_decay_factor = 0.5;
  /// 0 writes a checkpoint only at the end.
  std::int64_t checkpoint_every = 0;
  TargetEncoder target_encoder = TargetEncoder::kMomentum;
  /// Score reals from the restyled forward pass (true) or from a separate
  /// clean pass (false).
  bool classify_restyled = false;
  double stats_eps = kDefaultStatsEps;

  /// Throws InvalidConfig.
  void validate() const;
  double lr_at(std::int64_t step) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

std::string config_to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys throw InvalidConfig.
TrainConfig config_from_json(const std::string& text);

struct TrainState {
  ModelBundle model;
  std::vector<Tensor> adam_m;  // aligned with model.trainable_parameters()
  std::vector<Tensor> adam_v;
  std::int64_t step = 0;
  std::mt19937_64 rng;
  std::vector<LossBreakdown> history;
};

TrainState init_state(const TrainConfig& cfg);

struct Batch {
  Tensor real;  // (N, 3, H, W)
  std::vector<int> real_domains;
  std::vector<std::size_t> real_index;  // into the ImageSet
  Tensor fake;  // empty when the set holds no fakes
  std::vector<std::size_t> fake_index;
};

/// Draws batch_size reals stratified over domains (each domain gets
/// floor(B / D) and the remainder goes to randomly chosen domains) and
/// batch_size fakes the same way. Throws DegenerateBatch when alpha > 0 and
/// only one domain is present.
Batch sample_batch(const ImageSet& train, const TrainConfig& cfg, std::mt19937_64& rng);

/// One forward/backward/update. Increments state.step and appends to history.
LossBreakdown train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing is written
  std::function<void(const TrainState&)> on_step;
};

/// Runs the remaining cfg.steps - state.step steps. Writes checkpoint.bin and
/// loss_history.csv under out_dir.
TrainState train(const ImageSet& train_set, const TrainConfig& cfg, TrainState state, const TrainOptions& opts = {});
TrainState train(const DatasetManifest& manifest, const TrainConfig& cfg, const TrainOptions& opts = {});

/// Binary archive with a JSON header: config, parameters, Adam moments, RNG
/// state and loss history. Round trips are bit-exact.
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const TrainState& state);
std::pair<TrainConfig, TrainState> load_checkpoint(const std::filesystem::path& path);

void write_loss_history(const std::filesystem::path& path, const std::vector<LossBreakdown>& history);

}  // namespace cdn
