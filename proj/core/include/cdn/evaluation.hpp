#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cdn/models.hpp"
#include "cdn/synthdata.hpp"

namespace cdn {

/// Label 1 is the positive (fake) class; higher scores mean "more fake".
struct ScoredSample {
  double score = 0.0;
  int label = 0;
  int domain_id = 0;
};

/// A sample is called fake when score >= threshold.
struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct ConfusionRates {
  double acc = 0.0;
  double fnr = 0.0;
  double fpr = 0.0;
};

struct EvalReport {
  double acc = 0.0;
  double auc = 0.0;
  double eer = 0.0;
  std::map<double, double> fpr_at_tpr;
  double fnr = 0.0;
  double fpr = 0.0;
  std::vector<RocPoint> roc;
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
};

/// Every metric throws InvalidInput unless both classes are present and all
/// scores are finite and in [0, 1].
double auc(std::span<const ScoredSample> samples);
/// One point per distinct score, from (0, 0) to (1, 1). The first threshold
/// lies just above the highest score.
std::vector<RocPoint> roc_curve(std::span<const ScoredSample> samples);
/// FPR where FPR - FNR changes sign on the ROC, interpolated linearly.
double eer(std::span<const ScoredSample> samples);
/// Smallest FPR over thresholds whose TPR reaches target_tpr, in (0, 1].
double fpr_at_tpr(std::span<const ScoredSample> samples, double target_tpr);
ConfusionRates confusion_rates(std::span<const ScoredSample> samples, double threshold = 0.5);

EvalReport evaluate(std::span<const ScoredSample> samples, const std::vector<double>& tpr_targets = {0.85});

/// Clean forward pass (no domain transformation) over an image set, in
/// chunks. Returns one score and one pooled embedding row per image.
struct ScoredSet {
  std::vector<ScoredSample> samples;
  std::vector<std::vector<double>> embeddings;
};
ScoredSet score_images(const ModelBundle& model, const ImageSet& images, std::size_t chunk = 32);

enum class Protocol { kIntra, kCross };
std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& name);
/// intra -> "intra_test", cross -> "cross_test".
const std::string& protocol_split(Protocol p);

/// Scores the protocol's test split and writes report.json, roc.csv,
/// scores.csv and embeddings.csv into out_dir (skipped when empty).
EvalReport run_protocol(const ModelBundle& model, const DatasetManifest& manifest, Protocol protocol,
                        const std::filesystem::path& out_dir);
EvalReport run_protocol(const std::filesystem::path& checkpoint, const DatasetManifest& manifest, Protocol protocol,
                        const std::filesystem::path& out_dir);

std::string report_to_json(const EvalReport& r);

}  // namespace cdn
