#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cdn/errors.hpp"
#include "cdn/losses.hpp"
#include "cdn/ops.hpp"
#include "cdn/training.hpp"
#include "test_support.hpp"

namespace cdn {
namespace {

using testing::TempDir;

// Two styled domains of 12 identities, one fake per real, 16 px.
ImageSet toy_set(std::size_t domains = 2) {
  ImageSet s;
  const auto specs = default_domains(3);
  for (std::size_t d = 0; d < domains; ++d)
    for (int id = 0; id < 12; ++id) {
      const LabeledImage real = make_real(id, specs[d], 0, 16);
      const LabeledImage donor = make_real((id + 1) % 12, specs[d], 0, 16);
      for (const LabeledImage& img : {real, make_fake(real, donor, 1.0, id)}) {
        s.images.push_back(img.pixels);
        s.labels.push_back(img.label);
        s.domains.push_back(img.domain_id);
        s.identities.push_back(img.identity_id);
        s.paths.push_back("d" + std::to_string(d) + "/" + std::to_string(id) + (img.label ? "f" : "r"));
      }
    }
  return s;
}

TrainConfig toy_config() {
  TrainConfig c;
  c.model.stage_channels = {4, 6};
  c.model.image_size = 16;
  c.model.classifier_hidden = 5;
  c.model.classifier_conv = 3;
  c.batch_size = 6;
  c.lr = 1e-3;
  c.steps = 4;
  c.seed = 7;
  return c;
}

std::vector<Tensor> snapshot(const std::vector<ad::Var>& params) {
  std::vector<Tensor> out;
  for (const ad::Var& p : params) out.push_back(p.value());
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

TEST(TrainConfig, DefaultsAndValidation) {
  TrainConfig c;
  EXPECT_EQ(c.batch_size, 16u);
  EXPECT_EQ(c.lr, 2e-4);
  EXPECT_EQ(c.weight_decay, 1e-5);
  EXPECT_EQ(c.momentum_m, 0.999);
  EXPECT_EQ(c.weights.lambda_d, 0.1);
  EXPECT_EQ(c.weights.lambda_i, 0.1);
  EXPECT_EQ(c.weights.lambda_s, 0.1);
  EXPECT_EQ(c.weights.lambda_b, 0.0);
  EXPECT_THROW(c.validate(), InvalidConfig);  // steps unset
  c.steps = 10;
  EXPECT_NO_THROW(c.validate());
  c.layer_taps = {};
  EXPECT_THROW(c.validate(), InvalidConfig);
}

TEST(TrainConfig, StepSchedule) {
  TrainConfig c;
  c.steps = 10;
  c.lr = 1.0;
  EXPECT_EQ(c.lr_at(0), 1.0);
  EXPECT_EQ(c.lr_at(3), 1.0);
  EXPECT_EQ(c.lr_at(4), 0.5);
  EXPECT_EQ(c.lr_at(8), 0.25);
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c = toy_config();
  c.weights.lambda_b = 0.25;
  c.layer_taps = {2};
  c.target_encoder = TargetEncoder::kOnline;
  c.model.activation = Activation::kSilu;
  c.lr = 0.1 + 0.2;  // not exactly representable in short decimal
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
  EXPECT_EQ(config_from_json("{\"steps\": 3}").steps, 3);
  EXPECT_EQ(config_from_json("{\"steps\": 3}").batch_size, 16u);
  EXPECT_THROW(config_from_json("{\"stepz\": 3}"), InvalidConfig);
  EXPECT_THROW(config_from_json("{\"model\": {\"chanels\": 3}}"), InvalidConfig);
  EXPECT_THROW(config_from_json("not json"), InvalidConfig);
}

TEST(SampleBatch, StratifiedAndSeeded) {
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  c.batch_size = 16;
  std::mt19937_64 r1(3), r2(3);
  for (int k = 0; k < 5; ++k) {
    const Batch a = sample_batch(set, c, r1), b = sample_batch(set, c, r2);
    EXPECT_EQ(a.real_index, b.real_index);
    EXPECT_EQ(a.fake_index, b.fake_index);
    EXPECT_EQ(std::count(a.real_domains.begin(), a.real_domains.end(), 0), 8);
    EXPECT_EQ(std::set<std::size_t>(a.real_index.begin(), a.real_index.end()).size(), 16u);
    for (std::size_t i : a.real_index) EXPECT_EQ(set.labels[i], 0);
    for (std::size_t i : a.fake_index) EXPECT_EQ(set.labels[i], 1);
    EXPECT_EQ(a.real.shape(), (Shape{16, 3, 16, 16}));
    EXPECT_EQ(a.fake.shape(), (Shape{16, 3, 16, 16}));
  }
}

TEST(SampleBatch, OddBatchSplitsRemainder) {
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  c.batch_size = 5;
  std::mt19937_64 rng(4);
  const Batch b = sample_batch(set, c, rng);
  const auto zeros = std::count(b.real_domains.begin(), b.real_domains.end(), 0);
  EXPECT_TRUE(zeros == 2 || zeros == 3);
}

TEST(SampleBatch, SingleDomainIsDegenerate) {
  const ImageSet set = toy_set(1);
  TrainConfig c = toy_config();
  std::mt19937_64 rng(5);
  EXPECT_THROW(sample_batch(set, c, rng), DegenerateBatch);
  c.alpha = 0.0;
  EXPECT_NO_THROW(sample_batch(set, c, rng));
}

TEST(TrainStep, ZeroWeightsLeaveOnlyClassification) {
  // with every auxiliary weight at zero the restyled pass carries no gradient,
  // so the update cannot depend on alpha
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  c.weights = LossWeights{0.0, 0.0, 0.0, 0.0};
  TrainConfig no_dt = c;
  no_dt.alpha = 0.0;
  TrainState a = init_state(c), b = init_state(no_dt);
  std::mt19937_64 rng(6);
  const Batch batch = sample_batch(set, c, rng);
  const LossBreakdown la = train_step(a, batch, c);
  train_step(b, batch, no_dt);
  EXPECT_EQ(la.total, la.cls);
  EXPECT_GT(la.d, 0.0);
  const auto pa = a.model.named_parameters(), pb = b.model.named_parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].second.value(), pb[k].second.value()) << pa[k].first;
}

TEST(TrainStep, AlphaZeroGivesPlainAutoencoderLosses) {
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  c.alpha = 0.0;
  TrainState st = init_state(c);
  std::mt19937_64 rng(8);
  const Batch batch = sample_batch(set, c, rng);

  const ad::Var x = ad::constant(batch.real);
  const ModelBundle& m = st.model;
  const ad::Var z = m.encoder.forward(x).final();
  const ad::Var rec = m.decoder.forward(z).image();
  const double want_d = ad::mean_squared_error(rec, x).value().item();
  const EncoderOutput re = m.momentum_encoder.forward(rec), ref = m.momentum_encoder.forward(x);
  const double want_i = ad::mean_squared_error(re.final(), z).value().item();
  const double want_s = domain_alignment_loss({ref.stages[0], ref.stages[1]}, {re.stages[0], re.stages[1]}).value().item();

  const LossBreakdown got = train_step(st, batch, c);
  EXPECT_EQ(got.d, want_d);
  EXPECT_EQ(got.i, want_i);
  EXPECT_EQ(got.s, want_s);
  EXPECT_NEAR(got.total, got.cls + 0.1 * (got.d + got.i + got.s), 1e-14);
}

TEST(TrainStep, SmallStepDescends) {
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  c.alpha = 0.0;
  c.lr = 1e-4;
  TrainState st = init_state(c);
  std::mt19937_64 rng(9);
  const Batch batch = sample_batch(set, c, rng);
  const double before = train_step(st, batch, c).total;
  const double after = train_step(st, batch, c).total;
  EXPECT_LT(after, before);
}

TEST(TrainStep, MomentumEncoderOnlyFollowsEma) {
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  c.momentum_m = 0.9;
  TrainState st = init_state(c);
  std::mt19937_64 rng(10);
  const auto before = snapshot(st.model.momentum_encoder.parameters());
  train_step(st, sample_batch(set, c, rng), c);
  const auto online = snapshot(st.model.encoder.parameters());
  const auto after = snapshot(st.model.momentum_encoder.parameters());
  for (std::size_t k = 0; k < after.size(); ++k)
    for (std::size_t e = 0; e < after[k].size(); ++e) {
      EXPECT_EQ(after[k][e], 0.9 * before[k][e] + (1.0 - 0.9) * online[k][e]);
    }
  for (const ad::Var& p : st.model.momentum_encoder.parameters()) EXPECT_TRUE(p.grad().empty());
}

TEST(TrainStep, BoundaryTermOnlyWhenEnabled) {
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  TrainState st = init_state(c);
  std::mt19937_64 rng(11);
  EXPECT_EQ(train_step(st, sample_batch(set, c, rng), c).b, 0.0);
  c.weights.lambda_b = 0.1;
  const LossBreakdown l = train_step(st, sample_batch(set, c, rng), c);
  EXPECT_NE(l.b, 0.0);
  EXPECT_NEAR(l.total, l.cls + 0.1 * (l.d + l.i + l.s + l.b), 1e-14);
}

TEST(TrainStep, NonFiniteLossReportsStep) {
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  TrainState st = init_state(c);
  std::mt19937_64 rng(12);
  Batch batch = sample_batch(set, c, rng);
  train_step(st, batch, c);
  for (double& v : batch.real.values()) v = 1e300;
  try {
    train_step(st, batch, c);
    FAIL() << "expected TrainingDivergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_EQ(e.step(), 1);
  }
}

TEST(Train, ReproducibleAndPersisted) {
  const ImageSet set = toy_set();
  const TrainConfig c = toy_config();
  TempDir d1("tr1"), d2("tr2");
  const TrainState a = train(set, c, init_state(c), {d1.path(), {}});
  const TrainState b = train(set, c, init_state(c), {d2.path(), {}});
  EXPECT_EQ(a.step, 4);
  ASSERT_EQ(a.history.size(), 4u);
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(slurp(d1.path() / "loss_history.csv"), slurp(d2.path() / "loss_history.csv"));
  EXPECT_EQ(slurp(d1.path() / "checkpoint.bin"), slurp(d2.path() / "checkpoint.bin"));
  std::ifstream csv(d1.path() / "loss_history.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "step,cls,d,i,s,b,total");
  std::getline(csv, line);
  EXPECT_EQ(line.substr(0, 2), "0,");
}

TEST(Train, RejectsImageSizeMismatch) {
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  c.model.image_size = 32;
  EXPECT_THROW(train(set, c, init_state(c)), InvalidConfig);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const ImageSet set = toy_set();
  const TrainConfig c = toy_config();
  TempDir dir("ck");
  const TrainState st = train(set, c, init_state(c), {dir.path(), {}});
  const auto [cfg, back] = load_checkpoint(dir.path() / "checkpoint.bin");
  EXPECT_EQ(cfg, c);
  EXPECT_EQ(back.step, st.step);
  EXPECT_EQ(back.history, st.history);
  EXPECT_EQ(back.rng, st.rng);
  const auto pa = st.model.named_parameters(), pb = back.model.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].second.value(), pb[k].second.value());
  for (std::size_t k = 0; k < st.adam_m.size(); ++k) {
    EXPECT_EQ(st.adam_m[k], back.adam_m[k]);
    EXPECT_EQ(st.adam_v[k], back.adam_v[k]);
  }
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.bin"), IoError);
  std::ofstream(dir.path() / "junk.bin") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir.path() / "junk.bin"), IoError);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  c.steps = 6;
  c.checkpoint_every = 3;
  TempDir full("full"), part("part");
  const TrainState straight = train(set, c, init_state(c), {full.path(), {}});
  // interrupt after the step-3 checkpoint, then resume from it
  struct Interrupted {};
  const auto stop = [](const TrainState& s) {
    if (s.step == 4) throw Interrupted{};
  };
  EXPECT_THROW(train(set, c, init_state(c), {part.path(), stop}), Interrupted);
  auto [cfg, st] = load_checkpoint(part.path() / "checkpoint.bin");
  const TrainState resumed = train(set, c, std::move(st), {});
  EXPECT_EQ(resumed.history, straight.history);
  const auto pa = straight.model.named_parameters(), pb = resumed.model.named_parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].second.value(), pb[k].second.value());
}

TEST(Train, LossTrendsDownEarly) {
  const ImageSet set = toy_set();
  TrainConfig c = toy_config();
  c.steps = 200;
  const TrainState st = train(set, c, init_state(c));
  auto window = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t k = from; k < from + 40; ++k) s += st.history[k].total;
    return s / 40.0;
  };
  EXPECT_LT(window(160), window(0));
}

}  // namespace
}  // namespace cdn
