#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cdn/errors.hpp"
#include "cdn/synthdata.hpp"
#include "test_support.hpp"

namespace cdn {
namespace {

using testing::TempDir;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Mask of one channel: pixels above the channel median. Color shift and
// contrast are monotone per channel, so the mask only depends on geometry.
std::vector<bool> median_mask(const Tensor& img, std::size_t c) {
  const std::size_t plane = img.dim(1) * img.dim(2);
  std::vector<double> v(img.values().begin() + c * plane, img.values().begin() + (c + 1) * plane);
  std::vector<double> sorted = v;
  std::nth_element(sorted.begin(), sorted.begin() + plane / 2, sorted.end());
  const double med = sorted[plane / 2];
  std::vector<bool> m(plane);
  for (std::size_t k = 0; k < plane; ++k) m[k] = v[k] > med;
  return m;
}

double iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  std::size_t both = 0, either = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    both += a[k] && b[k];
    either += a[k] || b[k];
  }
  return static_cast<double>(both) / static_cast<double>(either);
}

double channel_mean(const Tensor& img, std::size_t c) {
  const std::size_t plane = img.dim(1) * img.dim(2);
  double s = 0.0;
  for (std::size_t k = 0; k < plane; ++k) s += img[c * plane + k];
  return s / static_cast<double>(plane);
}

// Forward-difference gradient magnitude summed over channels.
double grad_mag(const Tensor& img, std::size_t y, std::size_t x) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  double g = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const double v = img[(c * h + y) * w + x];
    const double dx = x + 1 < w ? img[(c * h + y) * w + x + 1] - v : 0.0;
    const double dy = y + 1 < h ? img[(c * h + y + 1) * w + x] - v : 0.0;
    g += std::hypot(dx, dy);
  }
  return g;
}

TEST(DomainSpec, Validation) {
  DomainSpec s;
  EXPECT_TRUE(s.neutral());
  EXPECT_NO_THROW(s.validate());
  s.color_shift[1] = 0.4;
  EXPECT_THROW(s.validate(), InvalidConfig);
  s.color_shift[1] = 0.0;
  s.contrast = 1.6;
  EXPECT_THROW(s.validate(), InvalidConfig);
  EXPECT_EQ(default_domains(5).size(), 5u);
  for (const DomainSpec& d : default_domains(6, 3)) EXPECT_NO_THROW(d.validate());
}

TEST(MakeReal, Deterministic) {
  const DomainSpec spec = default_domains(3)[2];
  EXPECT_EQ(make_real(7, spec, 1, 32).pixels, make_real(7, spec, 1, 32).pixels);
  EXPECT_NE(make_real(7, spec, 1, 32).pixels, make_real(8, spec, 1, 32).pixels);
  EXPECT_NE(make_real(7, spec, 1, 32).pixels, make_real(7, spec, 2, 32).pixels);
}

TEST(MakeReal, NeutralStyleIsBaseImage) {
  DomainSpec neutral;
  neutral.domain_id = 4;
  const LabeledImage img = make_real(3, neutral, 9, 32);
  EXPECT_EQ(img.pixels, base_face(3, 9, 32));
  EXPECT_EQ(img.label, 0);
  EXPECT_EQ(img.domain_id, 4);
  EXPECT_EQ(img.identity_id, 3);
}

TEST(MakeReal, DomainsShareGeometryButNotColor) {
  // blur and noise move individual pixels across any threshold, so the
  // geometry comparison uses color and contrast styles only
  DomainSpec warm, cold;
  warm.domain_id = 0;
  warm.color_shift = {0.1, -0.05, 0.08};
  warm.contrast = 0.8;
  cold.domain_id = 1;
  cold.color_shift = {-0.08, 0.1, -0.1};
  cold.contrast = 1.2;
  for (int id = 0; id < 10; ++id) {
    const Tensor a = make_real(id, warm, 0, 64).pixels;
    const Tensor b = make_real(id, cold, 0, 64).pixels;
    double gap = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_GT(iou(median_mask(a, c), median_mask(b, c)), 0.95) << "identity " << id << " channel " << c;
      gap = std::max(gap, std::abs(channel_mean(a, c) - channel_mean(b, c)));
    }
    EXPECT_GT(gap, 0.05);
  }
  // the default styles still move channel means
  const auto domains = default_domains(3);
  const Tensor d0 = make_real(0, domains[0], 0, 64).pixels, d2 = make_real(0, domains[2], 0, 64).pixels;
  EXPECT_GT(std::abs(channel_mean(d0, 0) - channel_mean(d2, 0)), 0.05);
}

TEST(MakeReal, PixelsInUnitInterval) {
  for (const DomainSpec& d : default_domains(3))
    for (double v : make_real(1, d, 0, 32).pixels.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
}

TEST(MakeFake, IsMaskBlendOfTargetAndDonor) {
  const DomainSpec spec = default_domains(3)[0];
  const LabeledImage t = make_real(1, spec, 0, 32), d = make_real(2, spec, 0, 32);
  const LabeledImage f = make_fake(t, d, 3.0, 17);
  const Tensor mask = fake_blend_mask(32, 32, 3.0, 17);
  EXPECT_EQ(f.label, 1);
  EXPECT_EQ(f.domain_id, t.domain_id);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t k = 0; k < 1024; ++k) {
      const double want = mask[k] * d.pixels[c * 1024 + k] + (1.0 - mask[k]) * t.pixels[c * 1024 + k];
      EXPECT_NEAR(f.pixels[c * 1024 + k], want, 1e-15);
      EXPECT_GE(f.pixels[c * 1024 + k], 0.0);
      EXPECT_LE(f.pixels[c * 1024 + k], 1.0);
    }
}

TEST(MakeFake, SameImageDonorLeavesTargetUnchanged) {
  const LabeledImage t = make_real(1, default_domains(3)[1], 0, 32);
  LabeledImage donor = t;
  donor.identity_id = 99;
  const LabeledImage f = make_fake(t, donor, 2.0, 5);
  EXPECT_LT(max_abs_diff(f.pixels, t.pixels), 1e-15);
  EXPECT_NE(f.label, t.label);
}

TEST(MakeFake, SameIdentityThrows) {
  const LabeledImage t = make_real(1, default_domains(3)[0], 0, 32);
  EXPECT_THROW(make_fake(t, t, 2.0, 0), InvalidInput);
  const LabeledImage small = make_real(2, default_domains(3)[0], 0, 16);
  EXPECT_THROW(make_fake(t, small, 2.0, 0), InvalidInput);
}

TEST(MakeFake, HardSeamRaisesBoundaryGradient) {
  const DomainSpec spec = default_domains(3)[0];
  const std::size_t s = 64;
  int sharper = 0;
  for (int id = 0; id < 10; ++id) {
    const LabeledImage t = make_real(id, spec, 0, s), d = make_real(id + 10, spec, 0, s);
    const std::uint64_t seed = 100 + static_cast<std::uint64_t>(id);
    const LabeledImage f = make_fake(t, d, 0.0, seed);
    const Tensor m = fake_blend_mask(s, s, 0.0, seed);
    double g_fake = 0.0, g_real = 0.0;
    for (std::size_t y = 0; y + 1 < s; ++y)
      for (std::size_t x = 0; x + 1 < s; ++x) {
        const double v = m[y * s + x];
        if (v == m[y * s + x + 1] && v == m[(y + 1) * s + x]) continue;
        g_fake += grad_mag(f.pixels, y, x);
        g_real += grad_mag(t.pixels, y, x);
      }
    sharper += g_fake > g_real;
  }
  EXPECT_GE(sharper, 9);
}

TEST(BlendMask, HardAndFeathered) {
  const Tensor hard = fake_blend_mask(32, 32, 0.0, 1);
  for (double v : hard.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
  const Tensor soft = fake_blend_mask(32, 32, 4.0, 1);
  EXPECT_TRUE(std::any_of(soft.values().begin(), soft.values().end(), [](double v) { return v > 0.0 && v < 1.0; }));
  EXPECT_EQ(soft[16 * 32 + 16], 1.0);
  EXPECT_EQ(soft[0], 0.0);
  EXPECT_THROW(fake_blend_mask(8, 8, -1.0, 0), InvalidInput);
}

TEST(Png, RoundTripQuantizes) {
  TempDir dir("png");
  const Tensor img = make_real(4, default_domains(3)[2], 0, 16).pixels;
  write_png(dir.path() / "a.png", img);
  const Tensor back = read_png(dir.path() / "a.png");
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_LE(max_abs_diff(back, img), 0.5 / 255.0 + 1e-12);
  EXPECT_THROW(read_png(dir.path() / "missing.png"), IoError);
}

DatasetOptions small_options() {
  DatasetOptions o;
  o.n_identities = 10;
  o.image_size = 16;
  o.fakes_per_real = 2;
  o.seed = 3;
  return o;
}

TEST(BuildDataset, CountsSplitsAndBalance) {
  TempDir dir("ds");
  const DatasetOptions o = small_options();
  const DatasetManifest m = build_dataset(o, dir.path());
  EXPECT_EQ(m.entries.size(), 10u * 3u * 3u);
  std::map<std::string, std::pair<int, int>> per_split;
  std::map<std::string, std::set<int>> ids;
  for (const ManifestEntry& e : m.entries) {
    EXPECT_TRUE(std::filesystem::exists(dir.path() / e.path)) << e.path;
    (e.label ? per_split[e.split].second : per_split[e.split].first)++;
    if (e.split == kSplitTrain) EXPECT_NE(e.domain_id, 2);
    if (e.split == kSplitCrossTest) EXPECT_EQ(e.domain_id, 2);
    if (e.domain_id != 2) ids[e.split].insert(e.identity_id);
  }
  ASSERT_EQ(per_split.size(), 3u);
  for (const auto& [split, counts] : per_split) EXPECT_EQ(counts.second, 2 * counts.first) << split;
  EXPECT_EQ(per_split[kSplitTrain].first, 16);
  EXPECT_EQ(per_split[kSplitIntraTest].first, 4);
  EXPECT_EQ(per_split[kSplitCrossTest].first, 10);
  for (int id : ids[kSplitIntraTest]) EXPECT_FALSE(ids[kSplitTrain].contains(id));
}

TEST(BuildDataset, SameSeedIsByteIdentical) {
  TempDir a("dsa"), b("dsb");
  build_dataset(small_options(), a.path());
  build_dataset(small_options(), b.path());
  EXPECT_EQ(slurp(a.path() / "manifest.csv"), slurp(b.path() / "manifest.csv"));
  EXPECT_EQ(slurp(a.path() / "images/d1/fake_00003_1.png"), slurp(b.path() / "images/d1/fake_00003_1.png"));
}

TEST(BuildDataset, DomainOutsideEverySplitThrows) {
  TempDir dir("bad");
  DatasetOptions o = small_options();
  o.domains = default_domains(4);
  EXPECT_THROW(build_dataset(o, dir.path()), InvalidConfig);
}

TEST(Manifest, RoundTripAndValidation) {
  TempDir dir("man");
  DatasetManifest m;
  m.entries = {{"a.png", 0, 0, 1, kSplitTrain}, {"b.png", 1, 2, 1, kSplitCrossTest}};
  write_manifest(m, dir.path() / "manifest.csv");
  const DatasetManifest back = read_manifest(dir.path() / "manifest.csv");
  EXPECT_EQ(back.entries, m.entries);
  EXPECT_EQ(back.root, dir.path());
  EXPECT_EQ(back.indices(kSplitCrossTest), (std::vector<std::size_t>{1}));
  EXPECT_FALSE(back.has_split(kSplitIntraTest));
  m.entries.push_back({"a.png", 1, 0, 2, kSplitTrain});
  EXPECT_THROW(m.validate(), InvalidInput);
  std::ofstream(dir.path() / "bad.csv") << "path,label\n";
  EXPECT_THROW(read_manifest(dir.path() / "bad.csv"), InvalidInput);
}

TEST(LoadSplit, ReadsImagesInManifestOrder) {
  TempDir dir("load");
  const DatasetManifest m = build_dataset(small_options(), dir.path());
  const ImageSet s = load_split(m, kSplitIntraTest);
  ASSERT_EQ(s.size(), m.indices(kSplitIntraTest).size());
  std::size_t k = 0;
  for (std::size_t idx : m.indices(kSplitIntraTest)) {
    EXPECT_EQ(s.paths[k], m.entries[idx].path);
    EXPECT_EQ(s.labels[k], m.entries[idx].label);
    ++k;
  }
  EXPECT_EQ(s.batch({0, 2}).shape(), (Shape{2, 3, 16, 16}));
}

}  // namespace
}  // namespace cdn
