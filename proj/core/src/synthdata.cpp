#include "cdn/synthdata.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "cdn/errors.hpp"

namespace cdn {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::uint64_t p : parts) h = splitmix(h ^ p);
  return h;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Fraction of the pixel inside an ellipse, with a one-pixel soft edge.
double ellipse_coverage(double x, double y, double cx, double cy, double a, double b) {
  const double r = std::hypot((x - cx) / a, (y - cy) / b);
  return clamp01(0.5 + (1.0 - r) * std::min(a, b));
}

double box_coverage(double x, double y, double cx, double cy, double hw, double hh) {
  const double inside = std::min(hw - std::abs(x - cx), hh - std::abs(y - cy));
  return clamp01(0.5 + inside);
}

void paint(Tensor& img, std::size_t y, std::size_t x, const std::array<double, 3>& color, double alpha) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    double& p = img[(c * h + y) * w + x];
    p = (1.0 - alpha) * p + alpha * color[c];
  }
}

void gaussian_blur(Tensor& img, double sigma) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int k = -radius; k <= radius; ++k) norm += (kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma)));
  for (double& k : kernel) k /= norm;
  std::vector<double> tmp(h * w);
  for (std::size_t c = 0; c < 3; ++c) {
    double* plane = img.data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const auto xx = std::clamp<long>(static_cast<long>(x) + k, 0, static_cast<long>(w) - 1);
          s += kernel[k + radius] * plane[y * w + xx];
        }
        tmp[y * w + x] = s;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double s = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const auto yy = std::clamp<long>(static_cast<long>(y) + k, 0, static_cast<long>(h) - 1);
          s += kernel[k + radius] * tmp[yy * w + x];
        }
        plane[y * w + x] = s;
      }
    }
  }
}

void apply_style(Tensor& img, const DomainSpec& spec, std::uint64_t noise_seed) {
  const std::size_t plane = img.dim(1) * img.dim(2);
  if (spec.color_shift != std::array<double, 3>{0.0, 0.0, 0.0}) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < plane; ++k) img[c * plane + k] = clamp01(img[c * plane + k] + spec.color_shift[c]);
  }
  if (spec.contrast != 1.0) {
    for (double& p : img.values()) p = clamp01((p - 0.5) * spec.contrast + 0.5);
  }
  if (spec.blur_sigma > 0.0) gaussian_blur(img, spec.blur_sigma);
  if (spec.noise_std > 0.0) {
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> normal(0.0, spec.noise_std);
    for (double& p : img.values()) p = clamp01(p + normal(rng));
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void DomainSpec::validate() const {
  for (double s : color_shift) {
    if (!(s >= -0.3 && s <= 0.3)) throw InvalidConfig("domain color shift must lie in [-0.3, 0.3]");
  }
  if (!(contrast >= 0.5 && contrast <= 1.5)) throw InvalidConfig("domain contrast must lie in [0.5, 1.5]");
  if (!(blur_sigma >= 0.0) || !std::isfinite(blur_sigma)) throw InvalidConfig("blur sigma must be >= 0");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw InvalidConfig("noise std must be >= 0");
}

bool DomainSpec::neutral() const {
  return color_shift == std::array<double, 3>{0.0, 0.0, 0.0} && contrast == 1.0 && blur_sigma == 0.0 &&
         noise_std == 0.0;
}

std::vector<DomainSpec> default_domains(std::size_t n, std::uint64_t seed) {
  std::vector<DomainSpec> out{
      {0, {0.04, 0.0, -0.04}, 1.0, 0.0, 0.01},
      {1, {-0.06, 0.03, 0.06}, 0.85, 0.5, 0.02},
      {2, {0.22, -0.12, -0.18}, 1.4, 0.0, 0.05},
  };
  out.resize(std::min(n, out.size()));
  std::mt19937_64 rng(mix_seed({seed, 0xd0a1}));
  std::uniform_real_distribution<double> shift(-0.25, 0.25), contrast(0.6, 1.4), blur(0.0, 1.0), noise(0.0, 0.05);
  while (out.size() < n) {
    DomainSpec s;
    s.domain_id = static_cast<int>(out.size());
    s.color_shift = {shift(rng), shift(rng), shift(rng)};
    s.contrast = contrast(rng);
    s.blur_sigma = blur(rng);
    s.noise_std = noise(rng);
    out.push_back(s);
  }
  return out;
}

Tensor base_face(int identity_id, std::uint64_t seed, std::size_t image_size) {
  if (image_size < 8) throw InvalidConfig("image size must be >= 8");
  std::mt19937_64 rng(mix_seed({seed, static_cast<std::uint64_t>(identity_id), 0xface}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double s = static_cast<double>(image_size);

  const std::array<double, 3> bg0{in(0.1, 0.6), in(0.1, 0.6), in(0.1, 0.6)};
  const std::array<double, 3> bg1{in(0.3, 0.9), in(0.3, 0.9), in(0.3, 0.9)};
  const double angle = in(0.0, 2.0 * 3.14159265358979);
  const double r = in(0.55, 0.9);
  const std::array<double, 3> skin{r, r * in(0.65, 0.85), r * in(0.5, 0.75)};
  const double cx = s * (0.5 + in(-0.04, 0.04)), cy = s * (0.5 + in(-0.03, 0.03));
  const double fa = s * in(0.26, 0.32), fb = s * in(0.33, 0.40);
  const double eye_dy = s * in(0.08, 0.14), eye_dx = s * in(0.09, 0.14), eye_r = s * in(0.035, 0.055);
  const double eye_tone = in(0.05, 0.3);
  const std::array<double, 3> eye{eye_tone, eye_tone * in(0.8, 1.2), eye_tone * in(0.8, 1.4)};
  const double mouth_dy = s * in(0.14, 0.2), mouth_hw = s * in(0.08, 0.14), mouth_hh = s * in(0.015, 0.03);
  const std::array<double, 3> mouth{in(0.5, 0.8), in(0.1, 0.3), in(0.15, 0.35)};

  Tensor img({3, image_size, image_size});
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < image_size; ++y) {
    for (std::size_t x = 0; x < image_size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double t = clamp01(0.5 + ((px / s - 0.5) * ca + (py / s - 0.5) * sa));
      for (std::size_t c = 0; c < 3; ++c) img[(c * image_size + y) * image_size + x] = (1 - t) * bg0[c] + t * bg1[c];
      paint(img, y, x, skin, ellipse_coverage(px, py, cx, cy, fa, fb));
      for (double side : {-1.0, 1.0}) {
        const double d2 = (px - cx - side * eye_dx) * (px - cx - side * eye_dx) + (py - cy + eye_dy) * (py - cy + eye_dy);
        paint(img, y, x, eye, std::exp(-0.5 * d2 / (eye_r * eye_r)));
      }
      paint(img, y, x, mouth, box_coverage(px, py, cx, cy + mouth_dy, mouth_hw, mouth_hh));
    }
  }
  return img;
}

LabeledImage make_real(int identity_id, const DomainSpec& spec, std::uint64_t seed, std::size_t image_size) {
  spec.validate();
  LabeledImage out{base_face(identity_id, seed, image_size), 0, spec.domain_id, identity_id};
  apply_style(out.pixels, spec,
              mix_seed({seed, static_cast<std::uint64_t>(identity_id), static_cast<std::uint64_t>(spec.domain_id), 0x57}));
  return out;
}

Tensor fake_blend_mask(std::size_t height, std::size_t width, double blend_width, std::uint64_t seed) {
  if (!(blend_width >= 0.0) || !std::isfinite(blend_width)) throw InvalidInput("blend width must be >= 0");
  std::mt19937_64 rng(mix_seed({seed, 0xb1e9d}));
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  const double a = 0.22 * static_cast<double>(width) * jitter(rng);
  const double b = 0.26 * static_cast<double>(height) * jitter(rng);
  const double cx = 0.5 * static_cast<double>(width), cy = 0.5 * static_cast<double>(height);
  Tensor mask({height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double r = std::hypot((x + 0.5 - cx) / a, (y + 0.5 - cy) / b);
      const double inside = (1.0 - r) * std::min(a, b);  // approximate signed distance in pixels
      mask[y * width + x] = blend_width == 0.0 ? (r <= 1.0 ? 1.0 : 0.0) : clamp01(0.5 + inside / blend_width);
    }
  }
  return mask;
}

LabeledImage make_fake(const LabeledImage& target, const LabeledImage& donor, double blend_width, std::uint64_t seed) {
  if (target.identity_id == donor.identity_id) throw InvalidInput("make_fake: donor and target share an identity");
  if (target.pixels.shape() != donor.pixels.shape() || target.pixels.rank() != 3 || target.pixels.dim(0) != 3) {
    throw InvalidInput("make_fake: target and donor must both be (3, H, W) of equal size");
  }
  const std::size_t h = target.pixels.dim(1), w = target.pixels.dim(2);
  const Tensor mask = fake_blend_mask(h, w, blend_width, seed);
  LabeledImage out = target;
  out.label = 1;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t k = 0; k < h * w; ++k) {
      const double a = mask[k];
      out.pixels[c * h * w + k] = (1.0 - a) * target.pixels[c * h * w + k] + a * donor.pixels[c * h * w + k];
    }
  }
  return out;
}

std::vector<std::size_t> DatasetManifest::indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (entries[k].split == split) out.push_back(k);
  }
  return out;
}

bool DatasetManifest::has_split(const std::string& split) const {
  return std::any_of(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; });
}

void DatasetManifest::validate() const {
  std::set<std::string> seen;
  for (const ManifestEntry& e : entries) {
    if (e.label != 0 && e.label != 1) throw InvalidInput("manifest: label must be 0 or 1 for " + e.path);
    if (e.path.empty() || e.path.find(',') != std::string::npos) throw InvalidInput("manifest: bad path '" + e.path + "'");
    if (!seen.insert(e.path).second) throw InvalidInput("manifest: duplicate path " + e.path);
  }
}

DatasetManifest build_dataset(const DatasetOptions& opts, const std::filesystem::path& out_dir) {
  if (opts.n_identities < 2) throw InvalidConfig("need at least 2 identities");
  if (!(opts.split.intra_test_fraction >= 0.0 && opts.split.intra_test_fraction < 1.0)) {
    throw InvalidConfig("intra_test_fraction must lie in [0, 1)");
  }
  std::set<int> ids;
  for (const DomainSpec& d : opts.domains) {
    d.validate();
    if (!ids.insert(d.domain_id).second) throw InvalidConfig("duplicate domain id");
  }
  auto contains = [](const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); };

  const std::size_t n = opts.n_identities;
  std::size_t n_intra = static_cast<std::size_t>(std::llround(opts.split.intra_test_fraction * static_cast<double>(n)));
  if (opts.split.intra_test_fraction > 0.0) n_intra = std::clamp<std::size_t>(n_intra, 2, n - 2);
  const std::size_t n_train = n - n_intra;

  DatasetManifest manifest;
  manifest.root = out_dir;
  std::filesystem::create_directories(out_dir / "images");
  for (const DomainSpec& spec : opts.domains) {
    const bool cross = contains(opts.split.cross_test_domains, spec.domain_id);
    if (!cross && !contains(opts.split.train_domains, spec.domain_id)) {
      throw InvalidConfig("domain " + std::to_string(spec.domain_id) + " is in no split");
    }
    const std::string dir = "images/d" + std::to_string(spec.domain_id);
    std::filesystem::create_directories(out_dir / dir);
    std::vector<LabeledImage> reals;
    reals.reserve(n);
    for (std::size_t i = 0; i < n; ++i) reals.push_back(make_real(static_cast<int>(i), spec, opts.seed, opts.image_size));

    for (std::size_t i = 0; i < n; ++i) {
      const bool held_out = !cross && i >= n_train;
      const std::string split = cross ? kSplitCrossTest : (held_out ? kSplitIntraTest : kSplitTrain);
      // donors come from the same identity group so splits never share identities
      const std::size_t lo = cross ? 0 : (held_out ? n_train : 0);
      const std::size_t hi = cross ? n : (held_out ? n : n_train);
      char name[64];
      std::snprintf(name, sizeof name, "/real_%05zu.png", i);
      write_png(out_dir / (dir + name), reals[i].pixels);
      manifest.entries.push_back({dir + name, 0, spec.domain_id, static_cast<int>(i), split});

      std::mt19937_64 rng(mix_seed({opts.seed, static_cast<std::uint64_t>(spec.domain_id), i, 0xdead}));
      std::uniform_int_distribution<std::size_t> pick(lo, hi - 2);
      for (std::size_t k = 0; k < opts.fakes_per_real; ++k) {
        std::size_t donor = pick(rng);
        if (donor >= i) ++donor;
        const LabeledImage fake = make_fake(reals[i], reals[donor], opts.blend_width, rng());
        std::snprintf(name, sizeof name, "/fake_%05zu_%zu.png", i, k);
        write_png(out_dir / (dir + name), fake.pixels);
        manifest.entries.push_back({dir + name, 1, spec.domain_id, static_cast<int>(i), split});
      }
    }
  }
  manifest.validate();
  write_manifest(manifest, out_dir / "manifest.csv");
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& csv_path) {
  manifest.validate();
  std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + csv_path.string());
  out << "path,label,domain_id,identity_id,split\n";
  for (const ManifestEntry& e : manifest.entries) {
    out << e.path << ',' << e.label << ',' << e.domain_id << ',' << e.identity_id << ',' << e.split << '\n';
  }
  if (!out) throw IoError("write failed for " + csv_path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + csv_path.string());
  std::string line;
  if (!std::getline(in, line) || line != "path,label,domain_id,identity_id,split") {
    throw InvalidInput("manifest header mismatch in " + csv_path.string());
  }
  DatasetManifest m;
  m.root = csv_path.parent_path();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 5) throw InvalidInput("manifest line " + std::to_string(lineno) + ": expected 5 fields");
    try {
      m.entries.push_back({f[0], std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3]), f[4]});
    } catch (const std::logic_error&) {
      throw InvalidInput("manifest line " + std::to_string(lineno) + ": bad integer field");
    }
  }
  m.validate();
  return m;
}

void write_png(const std::filesystem::path& path, const Tensor& pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3) throw InvalidInput("write_png expects (3, H, W)");
  const std::size_t h = pixels.dim(1), w = pixels.dim(2);
  std::vector<unsigned char> rgb(3 * h * w);
  for (std::size_t k = 0; k < h * w; ++k) {
    for (std::size_t c = 0; c < 3; ++c) {
      rgb[3 * k + c] = static_cast<unsigned char>(std::lround(clamp01(pixels[c * h * w + k]) * 255.0));
    }
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

Tensor read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  const std::size_t h = image.height, w = image.width;
  std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  Tensor out({3, h, w});
  for (std::size_t k = 0; k < h * w; ++k)
    for (std::size_t c = 0; c < 3; ++c) out[c * h * w + k] = rgb[3 * k + c] / 255.0;
  return out;
}

Tensor ImageSet::batch(const std::vector<std::size_t>& index) const {
  std::vector<Tensor> parts;
  parts.reserve(index.size());
  for (std::size_t k : index) {
    if (k >= images.size()) throw InvalidInput("ImageSet::batch: index out of range");
    const Tensor& img = images[k];
    parts.emplace_back(Shape{1, img.dim(0), img.dim(1), img.dim(2)}, std::vector<double>(img.storage()));
  }
  return concat_batch(parts);
}

ImageSet load_split(const DatasetManifest& manifest, const std::string& split) {
  const std::vector<std::size_t> idx = manifest.indices(split);
  if (idx.empty()) throw InvalidInput("manifest has no '" + split + "' split");
  ImageSet set;
  for (std::size_t k : idx) {
    const ManifestEntry& e = manifest.entries[k];
    Tensor img = read_png(manifest.root / e.path);
    if (!set.images.empty() && img.shape() != set.images.front().shape()) {
      throw InvalidInput("images in split '" + split + "' differ in size");
    }
    set.images.push_back(std::move(img));
    set.labels.push_back(e.label);
    set.domains.push_back(e.domain_id);
    set.identities.push_back(e.identity_id);
    set.paths.push_back(e.path);
  }
  return set;
}

}  // namespace cdn
