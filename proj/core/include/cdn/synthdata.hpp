#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdn/tensor.hpp"

namespace cdn {

inline constexpr std::size_t kDefaultImageSize = 64;

/// Per-domain image style, applied as color shift, contrast, blur, noise.
struct DomainSpec {
  int domain_id = 0;
  std::array<double, 3> color_shift{0.0, 0.0, 0.0};  // each in [-0.3, 0.3]
  double contrast = 1.0;                              // in [0.5, 1.5], around mid-gray
  double blur_sigma = 0.0;
  double noise_std = 0.0;

  /// Throws InvalidConfig on out-of-range fields.
  void validate() const;
  bool neutral() const;
};

/// Three hand-picked styles for domains 0..2, then seeded random styles.
std::vector<DomainSpec> default_domains(std::size_t n, std::uint64_t seed = 0);

struct LabeledImage {
  Tensor pixels;  // (3, H, W) in [0, 1]
  int label = 0;  // 0 real, 1 fake
  int domain_id = 0;
  int identity_id = 0;
};

/// Unstyled face for an identity. Geometry and colors depend only on
/// (identity_id, seed).
Tensor base_face(int identity_id, std::uint64_t seed, std::size_t image_size = kDefaultImageSize);

/// base_face with the domain style applied. Styling noise is seeded by
/// (identity_id, domain, seed).
LabeledImage make_real(int identity_id, const DomainSpec& spec, std::uint64_t seed,
                       std::size_t image_size = kDefaultImageSize);

/// Alpha-blends the central face ellipse of `donor` into `target`. The alpha
/// ramp is `blend_width` pixels wide and straddles the ellipse boundary; 0
/// gives a hard seam. The seed jitters the ellipse radii.
LabeledImage make_fake(const LabeledImage& target, const LabeledImage& donor, double blend_width,
                       std::uint64_t seed);

/// Blend mask used by make_fake, (H, W) in [0, 1].
Tensor fake_blend_mask(std::size_t height, std::size_t width, double blend_width, std::uint64_t seed);

// --- Datasets on disk -------------------------------------------------------

inline const std::string kSplitTrain = "train";
inline const std::string kSplitIntraTest = "intra_test";
inline const std::string kSplitCrossTest = "cross_test";

/// Whole domains go either to training or to the cross-domain test. Within the
/// training domains the last `intra_test_fraction` of identities is held out
/// as the intra-domain test split.
struct SplitPlan {
  std::vector<int> train_domains{0, 1};
  std::vector<int> cross_test_domains{2};
  double intra_test_fraction = 0.2;
};

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  int label = 0;
  int domain_id = 0;
  int identity_id = 0;
  std::string split;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding manifest.csv
  std::vector<ManifestEntry> entries;

  std::vector<std::size_t> indices(const std::string& split) const;
  bool has_split(const std::string& split) const;
  /// Unique paths, binary labels. Throws InvalidInput.
  void validate() const;
};

struct DatasetOptions {
  std::size_t n_identities = 200;
  std::vector<DomainSpec> domains = default_domains(3);
  std::size_t fakes_per_real = 1;
  SplitPlan split;
  std::uint64_t seed = 0;
  std::size_t image_size = kDefaultImageSize;
  double blend_width = 3.0;
};

/// Renders every image to `out_dir/images/...png` and writes
/// `out_dir/manifest.csv`. Fakes blend two reals of the same domain and split.
DatasetManifest build_dataset(const DatasetOptions& opts, const std::filesystem::path& out_dir);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& csv_path);
DatasetManifest read_manifest(const std::filesystem::path& csv_path);

/// 8-bit RGB PNG. Pixels are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Tensor& pixels);
Tensor read_png(const std::filesystem::path& path);

/// Decoded images of one split, in manifest order.
struct ImageSet {
  std::vector<Tensor> images;
  std::vector<int> labels;
  std::vector<int> domains;
  std::vector<int> identities;
  std::vector<std::string> paths;

  std::size_t size() const noexcept { return images.size(); }
  /// Stacks the selected images into an (N, 3, H, W) batch.
  Tensor batch(const std::vector<std::size_t>& index) const;
};

ImageSet load_split(const DatasetManifest& manifest, const std::string& split);

}  // namespace cdn
