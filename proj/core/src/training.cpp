#include "cdn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cdn/errors.hpp"
#include "cdn/ops.hpp"

namespace cdn {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'C', 'D', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

json model_to_json(const EncoderConfig& m) {
  return {{"in_channels", m.in_channels},   {"stage_channels", m.stage_channels},
          {"image_size", m.image_size},     {"kernel_size", m.kernel_size},
          {"downsample", m.downsample},     {"activation", to_string(m.activation)},
          {"classifier_hidden", m.classifier_hidden}, {"classifier_conv", m.classifier_conv}};
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw InvalidConfig("unknown key '" + it.key() + "' in " + where);
    }
  }
}

EncoderConfig model_from_json(const json& j) {
  reject_unknown(j, {"in_channels", "stage_channels", "image_size", "kernel_size", "downsample", "activation",
                     "classifier_hidden", "classifier_conv"},
                 "model config");
  EncoderConfig m;
  read_key(j, "in_channels", m.in_channels);
  read_key(j, "stage_channels", m.stage_channels);
  read_key(j, "image_size", m.image_size);
  read_key(j, "kernel_size", m.kernel_size);
  read_key(j, "downsample", m.downsample);
  if (j.contains("activation")) m.activation = activation_from_string(j.at("activation").get<std::string>());
  read_key(j, "classifier_hidden", m.classifier_hidden);
  read_key(j, "classifier_conv", m.classifier_conv);
  return m;
}

json config_json(const TrainConfig& c) {
  return {{"model", model_to_json(c.model)},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"momentum_m", c.momentum_m},
          {"alpha", c.alpha},
          {"layer_taps", c.layer_taps},
          {"weights",
           {{"lambda_d", c.weights.lambda_d},
            {"lambda_i", c.weights.lambda_i},
            {"lambda_s", c.weights.lambda_s},
            {"lambda_b", c.weights.lambda_b}}},
          {"steps", c.steps},
          {"seed", c.seed},
          {"lr_decay_fraction", c.lr_decay_fraction},
          {"lr_decay_factor", c.lr_decay_factor},
          {"checkpoint_every", c.checkpoint_every},
          {"target_encoder", c.target_encoder == TargetEncoder::kMomentum ? "momentum" : "online"},
          {"classify_restyled", c.classify_restyled},
          {"stats_eps", c.stats_eps}};
}

TrainConfig config_from(const json& j) {
  if (!j.is_object()) throw InvalidConfig("train config must be a JSON object");
  reject_unknown(j, {"model", "batch_size", "lr", "weight_decay", "beta1", "beta2", "adam_eps", "momentum_m", "alpha",
                     "layer_taps", "weights", "steps", "seed", "lr_decay_fraction", "lr_decay_factor",
                     "checkpoint_every", "target_encoder", "classify_restyled", "stats_eps"},
                 "train config");
  TrainConfig c;
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "lr", c.lr);
  read_key(j, "weight_decay", c.weight_decay);
  read_key(j, "beta1", c.beta1);
  read_key(j, "beta2", c.beta2);
  read_key(j, "adam_eps", c.adam_eps);
  read_key(j, "momentum_m", c.momentum_m);
  read_key(j, "alpha", c.alpha);
  read_key(j, "layer_taps", c.layer_taps);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    reject_unknown(w, {"lambda_d", "lambda_i", "lambda_s", "lambda_b"}, "loss weights");
    read_key(w, "lambda_d", c.weights.lambda_d);
    read_key(w, "lambda_i", c.weights.lambda_i);
    read_key(w, "lambda_s", c.weights.lambda_s);
    read_key(w, "lambda_b", c.weights.lambda_b);
  }
  read_key(j, "steps", c.steps);
  read_key(j, "seed", c.seed);
  read_key(j, "lr_decay_fraction", c.lr_decay_fraction);
  read_key(j, "lr_decay_factor", c.lr_decay_factor);
  read_key(j, "checkpoint_every", c.checkpoint_every);
  if (j.contains("target_encoder")) {
    const std::string t = j.at("target_encoder").get<std::string>();
    if (t == "momentum") c.target_encoder = TargetEncoder::kMomentum;
    else if (t == "online") c.target_encoder = TargetEncoder::kOnline;
    else throw InvalidConfig("target_encoder must be 'momentum' or 'online'");
  }
  read_key(j, "classify_restyled", c.classify_restyled);
  read_key(j, "stats_eps", c.stats_eps);
  return c;
}

bool is_tapped(const std::vector<int>& taps, std::size_t stage) {
  return std::find(taps.begin(), taps.end(), static_cast<int>(stage)) != taps.end();
}

std::vector<std::size_t> stratified_draw(const std::map<int, std::vector<std::size_t>>& pools, std::size_t count,
                                         std::mt19937_64& rng) {
  const std::size_t d = pools.size();
  std::vector<std::size_t> per(d, count / d);
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k < count % d; ++k) ++per[order[k]];

  std::vector<std::size_t> out;
  out.reserve(count);
  std::size_t slot = 0;
  for (const auto& [domain, pool] : pools) {
    if (per[slot] > pool.size()) {
      throw InvalidInput("domain " + std::to_string(domain) + " has fewer images than its batch share");
    }
    std::vector<std::size_t> p = pool;
    for (std::size_t k = 0; k < per[slot]; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, p.size() - 1);
      std::swap(p[k], p[pick(rng)]);
      out.push_back(p[k]);
    }
    ++slot;
  }
  return out;
}

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* p, std::size_t n, const std::filesystem::path& path) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw IoError("truncated checkpoint " + path.string());
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  validate_layer_taps(layer_taps);
  weights.validate();
  if (batch_size < 2) throw InvalidConfig("batch_size must be >= 2");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidConfig("lr must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidConfig("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidConfig("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw InvalidConfig("adam_eps must be positive");
  if (!(momentum_m >= 0.0 && momentum_m <= 1.0)) throw InvalidConfig("momentum_m must lie in [0, 1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidConfig("alpha must lie in [0, 1]");
  if (steps < 0) throw InvalidConfig("steps is required and must be >= 0");
  if (!(lr_decay_fraction > 0.0 && lr_decay_fraction <= 1.0)) throw InvalidConfig("lr_decay_fraction must lie in (0, 1]");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw InvalidConfig("lr_decay_factor must lie in (0, 1]");
  if (checkpoint_every < 0) throw InvalidConfig("checkpoint_every must be >= 0");
  if (!(stats_eps >= 0.0)) throw InvalidConfig("stats_eps must be >= 0");
}

double TrainConfig::lr_at(std::int64_t step) const {
  const auto period = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(lr_decay_fraction * steps)));
  return lr * std::pow(lr_decay_factor, static_cast<double>(step / period));
}

std::string config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(2); }

TrainConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string("bad train config: ") + e.what());
  }
}

TrainState init_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.model = ModelBundle::create(cfg.model, cfg.layer_taps, cfg.seed);
  for (const ad::Var& p : st.model.trainable_parameters()) {
    st.adam_m.push_back(Tensor::zeros_like(p.value()));
    st.adam_v.push_back(Tensor::zeros_like(p.value()));
  }
  st.rng.seed(cfg.seed ^ 0x5eed5eed5eedULL);
  return st;
}

Batch sample_batch(const ImageSet& train, const TrainConfig& cfg, std::mt19937_64& rng) {
  std::map<int, std::vector<std::size_t>> reals, fakes;
  for (std::size_t k = 0; k < train.size(); ++k) (train.labels[k] == 0 ? reals : fakes)[train.domains[k]].push_back(k);
  if (reals.empty()) throw InvalidInput("training set holds no real images");
  if (reals.size() < 2 && cfg.alpha > 0.0) {
    throw DegenerateBatch("domain transformation needs >= 2 training domains, found " + std::to_string(reals.size()));
  }
  Batch b;
  b.real_index = stratified_draw(reals, cfg.batch_size, rng);
  b.real = train.batch(b.real_index);
  for (std::size_t k : b.real_index) b.real_domains.push_back(train.domains[k]);
  if (!fakes.empty()) {
    b.fake_index = stratified_draw(fakes, cfg.batch_size, rng);
    b.fake = train.batch(b.fake_index);
  }
  return b;
}

LossBreakdown train_step(TrainState& st, const Batch& batch, const TrainConfig& cfg) {
  ModelBundle& m = st.model;
  const Encoder& target = cfg.target_encoder == TargetEncoder::kMomentum ? m.momentum_encoder : m.encoder;
  const double eps = cfg.stats_eps;
  const Pairing pairing = plan_domain_mix(batch.real_domains, cfg.alpha, st.rng());

  const StageHook hook = [&](std::size_t stage, const ad::Var& f) {
    return !pairing.empty() && is_tapped(cfg.layer_taps, stage) ? ad::domain_mix(f, pairing, eps) : f;
  };
  const ad::Var x_a = ad::constant(batch.real);
  const EncoderOutput enc = m.encoder.forward(x_a, hook);
  const ad::Var& z_out = enc.final();
  const DecoderOutput dec = m.decoder.forward(z_out);

  const ad::Var l_d = denoising_reconstruction_loss(dec.image(), x_a);
  const EncoderOutput re = target.forward(dec.image());
  const ad::Var l_i = intrinsic_loss(re.final(), z_out);

  const ad::Var x_b = ad::gather_batch(x_a, partner_index(pairing, batch.real.dim(0)));
  const EncoderOutput ref = target.forward(x_b);
  std::vector<ad::Var> ref_taps, re_taps;
  for (int t : cfg.layer_taps) {
    ref_taps.push_back(ref.stages[t - 1]);
    re_taps.push_back(re.stages[t - 1]);
  }
  const ad::Var l_s = domain_alignment_loss(ref_taps, re_taps, eps);

  ClassifierOutput cls_real;
  if (cfg.classify_restyled || pairing.empty()) {
    cls_real = m.classifier.forward(classifier_taps(enc, dec));
  } else {
    const EncoderOutput enc_c = m.encoder.forward(x_a);
    cls_real = m.classifier.forward(classifier_taps(enc_c, m.decoder.forward(enc_c.final())));
  }
  std::vector<double> labels(batch.real.dim(0), 0.0);
  ad::Var scores = cls_real.scores;
  ad::Var l_b;
  if (!batch.fake.empty()) {
    const EncoderOutput enc_f = m.encoder.forward(ad::constant(batch.fake));
    const DecoderOutput dec_f = m.decoder.forward(enc_f.final());
    const ClassifierOutput cls_fake = m.classifier.forward(classifier_taps(enc_f, dec_f));
    scores = ad::concat_batch({cls_real.scores, cls_fake.scores});
    labels.resize(labels.size() + batch.fake.dim(0), 1.0);
    if (cfg.weights.lambda_b > 0.0) l_b = boundary_loss(cls_real.embedding, cls_fake.embedding);
  } else if (cfg.weights.lambda_b > 0.0) {
    throw InvalidInput("boundary constraint enabled but the batch holds no fakes");
  }
  const ad::Var l_cls = classification_loss(scores, labels);

  LossBreakdown parts{l_cls.value().item(), l_d.value().item(), l_i.value().item(), l_s.value().item(),
                      l_b.defined() ? l_b.value().item() : 0.0, 0.0};
  const LossBreakdown out = total_loss(parts, cfg.weights, st.step);

  ad::Var total = l_cls;
  auto add_term = [&](const ad::Var& term, double w) {
    if (w > 0.0 && term.defined()) total = ad::add(total, ad::scale(term, w));
  };
  add_term(l_d, cfg.weights.lambda_d);
  add_term(l_i, cfg.weights.lambda_i);
  add_term(l_s, cfg.weights.lambda_s);
  add_term(l_b, cfg.weights.lambda_b);
  ad::backward(total);

  const std::vector<ad::Var> params = m.trainable_parameters();
  const double t = static_cast<double>(st.step + 1);
  const double lr = cfg.lr_at(st.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t), bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& g = params[k].grad();
    if (g.empty()) continue;
    Tensor& w = params[k].value_mut();
    Tensor& mk = st.adam_m[k];
    Tensor& vk = st.adam_v[k];
    for (std::size_t e = 0; e < w.size(); ++e) {
      const double ge = g[e] + cfg.weight_decay * w[e];
      mk[e] = cfg.beta1 * mk[e] + (1.0 - cfg.beta1) * ge;
      vk[e] = cfg.beta2 * vk[e] + (1.0 - cfg.beta2) * ge * ge;
      w[e] -= lr * (mk[e] / bc1) / (std::sqrt(vk[e] / bc2) + cfg.adam_eps);
    }
    params[k].zero_grad();
  }
  momentum_update(m.encoder, m.momentum_encoder, cfg.momentum_m);
  ++st.step;
  st.history.push_back(out);
  return out;
}

TrainState train(const ImageSet& train_set, const TrainConfig& cfg, TrainState state, const TrainOptions& opts) {
  cfg.validate();
  if (train_set.size() == 0) throw InvalidInput("empty training set");
  const Shape& img = train_set.images.front().shape();
  if (img != Shape{cfg.model.in_channels, cfg.model.image_size, cfg.model.image_size}) {
    throw InvalidConfig("images are " + shape_string(img) + " but the model expects " +
                        std::to_string(cfg.model.image_size) + "x" + std::to_string(cfg.model.image_size));
  }
  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);
  auto persist = [&] {
    if (opts.out_dir.empty()) return;
    save_checkpoint(opts.out_dir / "checkpoint.bin", cfg, state);
    write_loss_history(opts.out_dir / "loss_history.csv", state.history);
  };
  while (state.step < cfg.steps) {
    const Batch batch = sample_batch(train_set, cfg, state.rng);
    train_step(state, batch, cfg);
    if (opts.on_step) opts.on_step(state);
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.steps) persist();
  }
  persist();
  return state;
}

TrainState train(const DatasetManifest& manifest, const TrainConfig& cfg, const TrainOptions& opts) {
  return train(load_split(manifest, kSplitTrain), cfg, init_state(cfg), opts);
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg, const TrainState& state) {
  const auto named = state.model.named_parameters();
  json tensors = json::array();
  std::vector<const Tensor*> blobs;
  for (const auto& [name, var] : named) {
    tensors.push_back({{"name", name}, {"shape", var.shape()}});
    blobs.push_back(&var.value());
  }
  for (std::size_t k = 0; k < state.adam_m.size(); ++k) {
    tensors.push_back({{"name", "adam.m." + std::to_string(k)}, {"shape", state.adam_m[k].shape()}});
    blobs.push_back(&state.adam_m[k]);
  }
  for (std::size_t k = 0; k < state.adam_v.size(); ++k) {
    tensors.push_back({{"name", "adam.v." + std::to_string(k)}, {"shape", state.adam_v[k].shape()}});
    blobs.push_back(&state.adam_v[k]);
  }
  std::ostringstream rng;
  rng << state.rng;
  const json header{{"config", config_json(cfg)},        {"step", state.step},
                    {"rng", rng.str()},                  {"layer_taps", state.model.layer_taps},
                    {"tensors", tensors},                {"history_rows", state.history.size()}};
  const std::string text = header.dump();

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    write_bytes(out, kMagic, sizeof kMagic);
    write_bytes(out, &kCheckpointVersion, sizeof kCheckpointVersion);
    const std::uint64_t len = text.size();
    write_bytes(out, &len, sizeof len);
    write_bytes(out, text.data(), text.size());
    for (const Tensor* t : blobs) write_bytes(out, t->data(), t->size() * sizeof(double));
    for (const LossBreakdown& h : state.history) {
      const double row[6] = {h.cls, h.d, h.i, h.s, h.b, h.total};
      write_bytes(out, row, sizeof row);
    }
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::pair<TrainConfig, TrainState> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  read_bytes(in, magic, sizeof magic, path);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError(path.string() + " is not a checkpoint");
  std::uint32_t version = 0;
  read_bytes(in, &version, sizeof version, path);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  std::uint64_t len = 0;
  read_bytes(in, &len, sizeof len, path);
  std::string text(len, '\0');
  read_bytes(in, text.data(), len, path);

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("corrupt checkpoint header: " + std::string(e.what()));
  }
  const TrainConfig cfg = config_from(header.at("config"));
  TrainState st = init_state(cfg);
  st.model.layer_taps = header.at("layer_taps").get<std::vector<int>>();
  st.step = header.at("step").get<std::int64_t>();
  std::istringstream rng(header.at("rng").get<std::string>());
  rng >> st.rng;

  std::vector<Tensor*> blobs;
  for (const auto& [name, var] : st.model.named_parameters()) blobs.push_back(&var.value_mut());
  for (Tensor& t : st.adam_m) blobs.push_back(&t);
  for (Tensor& t : st.adam_v) blobs.push_back(&t);
  const json& tensors = header.at("tensors");
  if (tensors.size() != blobs.size()) throw IoError("checkpoint tensor count does not match the configured model");
  for (std::size_t k = 0; k < blobs.size(); ++k) {
    if (tensors[k].at("shape").get<Shape>() != blobs[k]->shape()) {
      throw IoError("checkpoint tensor " + tensors[k].at("name").get<std::string>() + " has the wrong shape");
    }
    read_bytes(in, blobs[k]->data(), blobs[k]->size() * sizeof(double), path);
  }
  const auto rows = header.at("history_rows").get<std::size_t>();
  for (std::size_t r = 0; r < rows; ++r) {
    double row[6];
    read_bytes(in, row, sizeof row, path);
    st.history.push_back({row[0], row[1], row[2], row[3], row[4], row[5]});
  }
  return {cfg, std::move(st)};
}

void write_loss_history(const std::filesystem::path& path, const std::vector<LossBreakdown>& history) {
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw IoError("cannot write " + path.string());
  std::fprintf(f, "step,cls,d,i,s,b,total\n");
  for (std::size_t k = 0; k < history.size(); ++k) {
    const LossBreakdown& h = history[k];
    std::fprintf(f, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", k, h.cls, h.d, h.i, h.s, h.b, h.total);
  }
  if (std::fclose(f) != 0) throw IoError("write failed for " + path.string());
}

}  // namespace cdn
