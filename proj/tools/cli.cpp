#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "cdn/errors.hpp"
#include "cdn/evaluation.hpp"
#include "cdn/synthdata.hpp"
#include "cdn/theory_check.hpp"
#include "cdn/training.hpp"

namespace cdn::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kRootEnv = "CDN_OUTPUT_ROOT";

fs::path output_root() {
  const char* root = std::getenv(kRootEnv);
  return root && *root ? fs::path(root) : fs::path();
}

// Relative output paths live under $CDN_OUTPUT_ROOT when it is set.
fs::path resolve_out(const std::string& p) {
  const fs::path path(p);
  const fs::path root = output_root();
  return path.is_relative() && !root.empty() ? root / path : path;
}

fs::path resolve_in(const std::string& p) {
  const fs::path path(p);
  const fs::path root = output_root();
  if (!fs::exists(path) && path.is_relative() && !root.empty() && fs::exists(root / path)) return root / path;
  return path;
}

fs::path manifest_path(const std::string& data) {
  const fs::path p = resolve_in(data);
  return fs::is_directory(p) ? p / "manifest.csv" : p;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text << '\n';
  if (!f) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct GenArgs {
  std::string out;
  std::size_t identities = 200;
  std::size_t domains = 3;
  std::size_t fakes_per_real = 1;
  std::uint64_t seed = 0;
  std::size_t image_size = kDefaultImageSize;
  double blend_width = 3.0;
  double intra_fraction = 0.2;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  if (a.domains < 1) throw InvalidConfig("--domains must be >= 1");
  DatasetOptions opts;
  opts.n_identities = a.identities;
  opts.domains = default_domains(a.domains, a.seed);
  opts.fakes_per_real = a.fakes_per_real;
  opts.seed = a.seed;
  opts.image_size = a.image_size;
  opts.blend_width = a.blend_width;
  opts.split.intra_test_fraction = a.intra_fraction;
  opts.split.train_domains.clear();
  opts.split.cross_test_domains.clear();
  for (std::size_t d = 0; d < a.domains; ++d) {
    const bool held_out = a.domains >= 2 && d + 1 == a.domains;
    (held_out ? opts.split.cross_test_domains : opts.split.train_domains).push_back(static_cast<int>(d));
  }

  const fs::path dir = resolve_out(a.out);
  const DatasetManifest m = build_dataset(opts, dir);
  json domains = json::array();
  for (const DomainSpec& d : opts.domains) {
    domains.push_back({{"domain_id", d.domain_id},
                       {"color_shift", d.color_shift},
                       {"contrast", d.contrast},
                       {"blur_sigma", d.blur_sigma},
                       {"noise_std", d.noise_std}});
  }
  const json lock{{"command", "gen-data"},
                  {"identities", a.identities},
                  {"domains", domains},
                  {"fakes_per_real", a.fakes_per_real},
                  {"seed", a.seed},
                  {"image_size", a.image_size},
                  {"blend_width", a.blend_width},
                  {"train_domains", opts.split.train_domains},
                  {"cross_test_domains", opts.split.cross_test_domains},
                  {"intra_test_fraction", a.intra_fraction}};
  write_text(dir / "config.lock", lock.dump(2));
  out << (dir / "manifest.csv").string() << '\n';
  return m.entries.empty() ? 1 : 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  bool resume = false;
  std::int64_t log_every = 50;
  std::vector<std::string> ablate;
  bool dbc = false;
  // Flag values; only flags given on the command line override the base config.
  TrainConfig flags;
  std::string channels;
  std::string activation;
  std::string layer_taps;
  std::string target_encoder;
};

void apply_ablation(TrainConfig& cfg, const std::string& name) {
  if (name == "dt") cfg.alpha = 0.0;
  else if (name == "dl") cfg.weights.lambda_d = cfg.weights.lambda_i = cfg.weights.lambda_s = 0.0;
  else if (name == "dbc") cfg.weights.lambda_b = 0.0;
  else if (name == "layer1") cfg.layer_taps = {1};
  else if (name == "layer2") cfg.layer_taps = {2};
  else throw InvalidConfig("unknown ablation '" + name + "' (expected dt, dl, dbc, layer1 or layer2)");
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(s)) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::logic_error&) {
      throw InvalidConfig("expected a comma-separated list of integers, got '" + s + "'");
    }
  }
  return out;
}

int cmd_train(const TrainArgs& a, const CLI::App& sub, std::ostream& out) {
  const fs::path dir = resolve_out(a.out);
  fs::create_directories(dir);
  auto given = [&](const char* name) { return sub.count(name) > 0; };

  TrainConfig cfg;
  std::string data = a.data;
  if (a.resume) {
    auto [ckpt_cfg, state] = load_checkpoint(dir / "checkpoint.bin");
    if (data.empty()) throw InvalidConfig("--resume needs --data");
    const ImageSet set = load_split(read_manifest(manifest_path(data)), kSplitTrain);
    out << "resuming at step " << state.step << " of " << ckpt_cfg.steps << '\n';
    train(set, ckpt_cfg, std::move(state), {dir, {}});
    return 0;
  }
  if (!a.config.empty()) {
    const json j = json::parse(read_text(resolve_in(a.config)));
    if (j.contains("train")) {
      cfg = config_from_json(j.at("train").dump());
      if (data.empty() && j.contains("data")) data = j.at("data").get<std::string>();
    } else {
      cfg = config_from_json(j.dump());
    }
  }
  if (data.empty()) throw InvalidConfig("--data is required (or a config.lock naming it)");

  const TrainConfig& f = a.flags;
  if (given("--batch-size")) cfg.batch_size = f.batch_size;
  if (given("--lr")) cfg.lr = f.lr;
  if (given("--weight-decay")) cfg.weight_decay = f.weight_decay;
  if (given("--momentum")) cfg.momentum_m = f.momentum_m;
  if (given("--alpha")) cfg.alpha = f.alpha;
  if (given("--lambda-d")) cfg.weights.lambda_d = f.weights.lambda_d;
  if (given("--lambda-i")) cfg.weights.lambda_i = f.weights.lambda_i;
  if (given("--lambda-s")) cfg.weights.lambda_s = f.weights.lambda_s;
  if (a.dbc) cfg.weights.lambda_b = 0.1;
  if (given("--lambda-b")) cfg.weights.lambda_b = f.weights.lambda_b;
  if (given("--steps")) cfg.steps = f.steps;
  if (given("--seed")) cfg.seed = f.seed;
  if (given("--checkpoint-every")) cfg.checkpoint_every = f.checkpoint_every;
  if (given("--lr-decay-fraction")) cfg.lr_decay_fraction = f.lr_decay_fraction;
  if (given("--kernel-size")) cfg.model.kernel_size = f.model.kernel_size;
  if (given("--classifier-hidden")) cfg.model.classifier_hidden = f.model.classifier_hidden;
  if (given("--classifier-conv")) cfg.model.classifier_conv = f.model.classifier_conv;
  if (given("--channels")) cfg.model.stage_channels = parse_sizes(a.channels);
  if (given("--activation")) cfg.model.activation = activation_from_string(a.activation);
  if (given("--layer-taps")) {
    cfg.layer_taps.clear();
    for (std::size_t t : parse_sizes(a.layer_taps)) cfg.layer_taps.push_back(static_cast<int>(t));
  }
  if (given("--target-encoder")) {
    cfg.target_encoder = a.target_encoder == "online" ? TargetEncoder::kOnline : TargetEncoder::kMomentum;
  }
  if (given("--classify-restyled")) cfg.classify_restyled = true;
  for (const std::string& ab : a.ablate) apply_ablation(cfg, ab);

  const fs::path manifest_file = fs::absolute(manifest_path(data));
  const DatasetManifest manifest = read_manifest(manifest_file);
  const ImageSet set = load_split(manifest, kSplitTrain);
  if (given("--image-size")) cfg.model.image_size = f.model.image_size;
  else cfg.model.image_size = set.images.front().dim(1);
  cfg.validate();

  const json lock{{"command", "train"}, {"data", manifest_file.string()}, {"train", json::parse(config_to_json(cfg))}};
  write_text(dir / "config.lock", lock.dump(2));

  TrainOptions opts{dir, {}};
  if (a.log_every > 0) {
    opts.on_step = [&](const TrainState& s) {
      if (s.step % a.log_every != 0 && s.step != cfg.steps) return;
      const LossBreakdown& h = s.history.back();
      char line[256];
      std::snprintf(line, sizeof line, "step %lld/%lld total=%.5f cls=%.5f d=%.5f i=%.5f s=%.5f b=%.5f",
                    static_cast<long long>(s.step), static_cast<long long>(cfg.steps), h.total, h.cls, h.d, h.i, h.s,
                    h.b);
      out << line << std::endl;
    };
  }
  train(set, cfg, init_state(cfg), opts);
  out << (dir / "checkpoint.bin").string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string protocol = "cross";
  std::string out;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Protocol protocol = protocol_from_string(a.protocol);
  const fs::path ckpt = fs::absolute(resolve_in(a.checkpoint));
  const fs::path manifest_file = fs::absolute(manifest_path(a.data));
  const fs::path dir = resolve_out(a.out);
  const EvalReport r = run_protocol(ckpt, read_manifest(manifest_file), protocol, dir);
  const json lock{{"command", "eval"},
                  {"checkpoint", ckpt.string()},
                  {"data", manifest_file.string()},
                  {"protocol", to_string(protocol)}};
  write_text(dir / "config.lock", lock.dump(2));
  char line[256];
  std::snprintf(line, sizeof line, "%s: acc=%.4f auc=%.4f eer=%.4f fpr@tpr85=%.4f fnr=%.4f fpr=%.4f (n_real=%zu n_fake=%zu)",
                to_string(protocol).c_str(), r.acc, r.auc, r.eer, r.fpr_at_tpr.at(0.85), r.fnr, r.fpr, r.n_real,
                r.n_fake);
  out << line << '\n';
  return 0;
}

struct TheoryArgs {
  std::string checks;
  std::uint64_t seed = 0;
};

int cmd_theory(const TheoryArgs& a, std::ostream& out) {
  std::vector<std::string> checks = split_list(a.checks);
  if (checks.empty()) checks = theory::known_checks();
  bool all = true;
  for (const theory::CheckRecord& r : theory::run_suite(checks, a.seed)) {
    out << theory::to_json_line(r) << '\n';
    all = all && r.passed;
  }
  return all ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contrastive desensitization network: data, training, evaluation and theory checks", "cdn"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* g = app.add_subcommand("gen-data", "Render the synthetic multi-domain face dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--identities", gen.identities, "Identities per domain")->capture_default_str();
  g->add_option("--domains", gen.domains, "Number of domains; the last one is the cross-domain test")
      ->capture_default_str();
  g->add_option("--fakes-per-real", gen.fakes_per_real, "Blended fakes per real image")->capture_default_str();
  g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  g->add_option("--image-size", gen.image_size, "Square image side in pixels")->capture_default_str();
  g->add_option("--blend-width", gen.blend_width, "Feather width of fake seams in pixels")->capture_default_str();
  g->add_option("--intra-fraction", gen.intra_fraction, "Identities held out for the intra-domain test")
      ->capture_default_str();

  TrainArgs tr;
  CLI::App* t = app.add_subcommand("train", "Train a model on the train split of a dataset");
  t->add_option("--data", tr.data, "Dataset directory or manifest.csv");
  t->add_option("--out", tr.out, "Run directory")->required();
  t->add_option("--config", tr.config, "Train config JSON or a config.lock; flags override it");
  t->add_flag("--resume", tr.resume, "Continue from <out>/checkpoint.bin");
  t->add_option("--steps", tr.flags.steps, "Optimizer steps (required unless in --config)");
  t->add_option("--batch-size", tr.flags.batch_size)->capture_default_str();
  t->add_option("--lr", tr.flags.lr)->capture_default_str();
  t->add_option("--weight-decay", tr.flags.weight_decay)->capture_default_str();
  t->add_option("--momentum", tr.flags.momentum_m, "Momentum encoder EMA coefficient")->capture_default_str();
  t->add_option("--alpha", tr.flags.alpha, "Fraction of reals restyled per batch")->capture_default_str();
  t->add_option("--layer-taps", tr.layer_taps, "Encoder stages that get the domain transformation, e.g. 1,2");
  t->add_option("--lambda-d", tr.flags.weights.lambda_d)->capture_default_str();
  t->add_option("--lambda-i", tr.flags.weights.lambda_i)->capture_default_str();
  t->add_option("--lambda-s", tr.flags.weights.lambda_s)->capture_default_str();
  t->add_option("--lambda-b", tr.flags.weights.lambda_b)->capture_default_str();
  t->add_flag("--dbc", tr.dbc, "Enable the domain boundary constraint with weight 0.1");
  t->add_option("--ablate", tr.ablate, "dt, dl, dbc, layer1 or layer2; repeatable");
  t->add_option("--seed", tr.flags.seed)->capture_default_str();
  t->add_option("--checkpoint-every", tr.flags.checkpoint_every)->capture_default_str();
  t->add_option("--lr-decay-fraction", tr.flags.lr_decay_fraction)->capture_default_str();
  t->add_option("--image-size", tr.flags.model.image_size, "Defaults to the dataset's image size");
  t->add_option("--channels", tr.channels, "Encoder stage widths, e.g. 32,64,128");
  t->add_option("--kernel-size", tr.flags.model.kernel_size)->capture_default_str();
  t->add_option("--activation", tr.activation, "leaky_relu, silu or identity");
  t->add_option("--classifier-hidden", tr.flags.model.classifier_hidden)->capture_default_str();
  t->add_option("--classifier-conv", tr.flags.model.classifier_conv, "Classifier conv width per tap; 0 pools taps directly")
      ->capture_default_str();
  t->add_option("--target-encoder", tr.target_encoder, "Encoder for loss targets")
      ->check(CLI::IsMember({"momentum", "online"}));
  t->add_flag("--classify-restyled", "Score reals from the restyled forward pass instead of a clean one");
  t->add_option("--log-every", tr.log_every, "Print losses every N steps; 0 is quiet")->capture_default_str();

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("eval", "Score a test split and write report, ROC and embeddings");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data, "Dataset directory or manifest.csv")->required();
  e->add_option("--protocol", ev.protocol)->check(CLI::IsMember({"intra", "cross"}))->capture_default_str();
  e->add_option("--out", ev.out, "Output directory")->required();

  TheoryArgs th;
  CLI::App* h = app.add_subcommand("theory", "Run numerical checks of the theoretical claims");
  h->add_option("--checks", th.checks, "Comma-separated subset of kl,theorem1,theorem2,nll,delta");
  h->add_option("--seed", th.seed)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    err << "usage error: " << ex.what() << "\nRun 'cdn --help' for usage.\n";
    return 2;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen, out);
    if (t->parsed()) return cmd_train(tr, *t, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (h->parsed()) return cmd_theory(th, out);
  } catch (const TrainingDivergence& ex) {
    err << "training diverged at step " << ex.step() << ": " << ex.what() << '\n';
    return 3;
  } catch (const InvalidConfig& ex) {
    err << "invalid configuration: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace cdn::cli
