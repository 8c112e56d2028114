#include "cdn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "cdn/errors.hpp"
#include "cdn/training.hpp"

namespace cdn {
namespace {

struct ClassCounts {
  std::size_t real = 0;
  std::size_t fake = 0;
};

ClassCounts check_samples(std::span<const ScoredSample> samples) {
  ClassCounts c;
  for (const ScoredSample& s : samples) {
    if (!std::isfinite(s.score) || s.score < 0.0 || s.score > 1.0) throw InvalidInput("scores must lie in [0, 1]");
    if (s.label == 0) ++c.real;
    else if (s.label == 1) ++c.fake;
    else throw InvalidInput("labels must be 0 or 1");
  }
  if (c.real == 0 || c.fake == 0) throw InvalidInput("metrics need both real and fake samples");
  return c;
}

class CsvFile {
 public:
  explicit CsvFile(const std::filesystem::path& path) : f_(std::fopen(path.string().c_str(), "wb")), path_(path) {
    if (!f_) throw IoError("cannot write " + path.string());
  }
  ~CsvFile() {
    if (f_) std::fclose(f_);
  }
  std::FILE* get() const { return f_; }
  void close() {
    const int rc = std::fclose(f_);
    f_ = nullptr;
    if (rc != 0) throw IoError("write failed for " + path_.string());
  }

 private:
  std::FILE* f_;
  std::filesystem::path path_;
};

std::string target_key(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", t);
  return buf;
}

}  // namespace

double auc(std::span<const ScoredSample> samples) {
  const ClassCounts c = check_samples(samples);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return samples[a].score < samples[b].score; });
  // Mann-Whitney: fake rank sum with tied groups sharing their average rank
  double fake_rank_sum = 0.0;
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    while (hi < order.size() && samples[order[hi]].score == samples[order[lo]].score) ++hi;
    const double avg_rank = 0.5 * static_cast<double>(lo + 1 + hi);
    for (std::size_t k = lo; k < hi; ++k) {
      if (samples[order[k]].label == 1) fake_rank_sum += avg_rank;
    }
    lo = hi;
  }
  const double nf = static_cast<double>(c.fake), nr = static_cast<double>(c.real);
  return (fake_rank_sum - nf * (nf + 1.0) / 2.0) / (nf * nr);
}

std::vector<RocPoint> roc_curve(std::span<const ScoredSample> samples) {
  const ClassCounts c = check_samples(samples);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return samples[a].score > samples[b].score; });
  std::vector<RocPoint> roc{{0.0, 0.0, std::nextafter(samples[order.front()].score, 2.0)}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t lo = 0; lo < order.size();) {
    const double thr = samples[order[lo]].score;
    std::size_t hi = lo;
    for (; hi < order.size() && samples[order[hi]].score == thr; ++hi) (samples[order[hi]].label == 1 ? tp : fp)++;
    roc.push_back({static_cast<double>(fp) / static_cast<double>(c.real),
                   static_cast<double>(tp) / static_cast<double>(c.fake), thr});
    lo = hi;
  }
  return roc;
}

double eer(std::span<const ScoredSample> samples) {
  const std::vector<RocPoint> roc = roc_curve(samples);
  auto gap = [](const RocPoint& p) { return p.fpr - (1.0 - p.tpr); };
  for (std::size_t k = 1; k < roc.size(); ++k) {
    const double g1 = gap(roc[k]);
    if (g1 < 0.0) continue;
    if (g1 == 0.0) return roc[k].fpr;
    const double g0 = gap(roc[k - 1]);
    const double t = -g0 / (g1 - g0);
    return roc[k - 1].fpr + t * (roc[k].fpr - roc[k - 1].fpr);
  }
  return roc.back().fpr;  // unreachable: the last point has gap 1
}

double fpr_at_tpr(std::span<const ScoredSample> samples, double target_tpr) {
  if (!(target_tpr > 0.0 && target_tpr <= 1.0)) throw InvalidInput("target TPR must lie in (0, 1]");
  const ClassCounts c = check_samples(samples);
  // compare in counts so that targets such as 0.85 * 20 are not lost to rounding
  const double needed = target_tpr * static_cast<double>(c.fake) - 1e-9;
  double best = 1.0;
  for (const RocPoint& p : roc_curve(samples)) {
    if (p.tpr * static_cast<double>(c.fake) >= needed) best = std::min(best, p.fpr);
  }
  return best;
}

ConfusionRates confusion_rates(std::span<const ScoredSample> samples, double threshold) {
  const ClassCounts c = check_samples(samples);
  std::size_t fn = 0, fp = 0;
  for (const ScoredSample& s : samples) {
    const bool called_fake = s.score >= threshold;
    if (s.label == 1 && !called_fake) ++fn;
    if (s.label == 0 && called_fake) ++fp;
  }
  return {1.0 - static_cast<double>(fn + fp) / static_cast<double>(samples.size()),
          static_cast<double>(fn) / static_cast<double>(c.fake), static_cast<double>(fp) / static_cast<double>(c.real)};
}

EvalReport evaluate(std::span<const ScoredSample> samples, const std::vector<double>& tpr_targets) {
  const ClassCounts c = check_samples(samples);
  EvalReport r;
  r.n_real = c.real;
  r.n_fake = c.fake;
  r.auc = auc(samples);
  r.eer = eer(samples);
  for (double t : tpr_targets) r.fpr_at_tpr[t] = fpr_at_tpr(samples, t);
  const ConfusionRates cr = confusion_rates(samples);
  r.acc = cr.acc;
  r.fnr = cr.fnr;
  r.fpr = cr.fpr;
  r.roc = roc_curve(samples);
  return r;
}

ScoredSet score_images(const ModelBundle& model, const ImageSet& images, std::size_t chunk) {
  if (chunk == 0) throw InvalidInput("chunk must be >= 1");
  ScoredSet out;
  for (std::size_t lo = 0; lo < images.size(); lo += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, images.size() - lo));
    std::iota(idx.begin(), idx.end(), lo);
    const EncoderOutput enc = model.encoder.forward(ad::constant(images.batch(idx)));
    const DecoderOutput dec = model.decoder.forward(enc.final());
    const ClassifierOutput cls = model.classifier.forward(classifier_taps(enc, dec));
    const Tensor& emb = cls.embedding.value();
    const std::size_t width = emb.dim(1);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.samples.push_back({cls.scores.value()[k], images.labels[idx[k]], images.domains[idx[k]]});
      out.embeddings.emplace_back(emb.data() + k * width, emb.data() + (k + 1) * width);
    }
  }
  return out;
}

std::string to_string(Protocol p) { return p == Protocol::kIntra ? "intra" : "cross"; }

Protocol protocol_from_string(const std::string& name) {
  if (name == "intra") return Protocol::kIntra;
  if (name == "cross") return Protocol::kCross;
  throw InvalidConfig("protocol must be 'intra' or 'cross', got '" + name + "'");
}

const std::string& protocol_split(Protocol p) { return p == Protocol::kIntra ? kSplitIntraTest : kSplitCrossTest; }

std::string report_to_json(const EvalReport& r) {
  nlohmann::json at = nlohmann::json::object();
  for (const auto& [t, v] : r.fpr_at_tpr) at[target_key(t)] = v;
  nlohmann::json roc = nlohmann::json::array();
  for (const RocPoint& p : r.roc) roc.push_back({p.fpr, p.tpr, p.threshold});
  const nlohmann::json j{{"acc", r.acc}, {"auc", r.auc},       {"eer", r.eer},       {"fpr_at_tpr", at},
                         {"fnr", r.fnr}, {"fpr", r.fpr},       {"n_real", r.n_real}, {"n_fake", r.n_fake},
                         {"roc", roc}};
  return j.dump(2);
}

EvalReport run_protocol(const ModelBundle& model, const DatasetManifest& manifest, Protocol protocol,
                        const std::filesystem::path& out_dir) {
  const std::string& split = protocol_split(protocol);
  if (!manifest.has_split(split)) throw InvalidInput("manifest has no '" + split + "' split");
  const ImageSet images = load_split(manifest, split);
  const ScoredSet scored = score_images(model, images);
  const EvalReport report = evaluate(scored.samples);
  if (out_dir.empty()) return report;

  std::filesystem::create_directories(out_dir);
  {
    CsvFile f(out_dir / "report.json");
    std::fputs(report_to_json(report).c_str(), f.get());
    std::fputc('\n', f.get());
    f.close();
  }
  {
    CsvFile f(out_dir / "roc.csv");
    std::fprintf(f.get(), "fpr,tpr,threshold\n");
    for (const RocPoint& p : report.roc) std::fprintf(f.get(), "%.17g,%.17g,%.17g\n", p.fpr, p.tpr, p.threshold);
    f.close();
  }
  {
    CsvFile f(out_dir / "scores.csv");
    std::fprintf(f.get(), "path,label,domain_id,score\n");
    for (std::size_t k = 0; k < images.size(); ++k) {
      const ScoredSample& s = scored.samples[k];
      std::fprintf(f.get(), "%s,%d,%d,%.17g\n", images.paths[k].c_str(), s.label, s.domain_id, s.score);
    }
    f.close();
  }
  {
    CsvFile f(out_dir / "embeddings.csv");
    std::fprintf(f.get(), "path,label,domain_id");
    const std::size_t width = scored.embeddings.empty() ? 0 : scored.embeddings.front().size();
    for (std::size_t d = 0; d < width; ++d) std::fprintf(f.get(), ",dim%zu", d);
    std::fputc('\n', f.get());
    for (std::size_t k = 0; k < images.size(); ++k) {
      std::fprintf(f.get(), "%s,%d,%d", images.paths[k].c_str(), images.labels[k], images.domains[k]);
      for (double v : scored.embeddings[k]) std::fprintf(f.get(), ",%.17g", v);
      std::fputc('\n', f.get());
    }
    f.close();
  }
  return report;
}

EvalReport run_protocol(const std::filesystem::path& checkpoint, const DatasetManifest& manifest, Protocol protocol,
                        const std::filesystem::path& out_dir) {
  const auto [cfg, state] = load_checkpoint(checkpoint);
  return run_protocol(state.model, manifest, protocol, out_dir);
}

}  // namespace cdn
