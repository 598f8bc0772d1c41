#include "ahdc/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "ahdc/errors.hpp"
#include "ahdc/parallel.hpp"
#include "ahdc/rng.hpp"

namespace ahdc::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaxRetries = 100;
constexpr double kMinFraction = 0.02;
constexpr double kMaxFraction = 0.4;

struct Harmonic {
  int order;
  double amp;
  double phase;
};

bool connected(const LabelMask& m) {
  const int h = m.height();
  const int w = m.width();
  std::vector<std::uint8_t> seen(m.size(), 0);
  std::vector<int> stack;
  std::size_t total = 0;
  int start = -1;
  for (int i = 0; i < h * w; ++i) {
    if (m.values()[i]) {
      ++total;
      if (start < 0) start = i;
    }
  }
  if (start < 0) return false;
  stack.push_back(start);
  seen[start] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    ++reached;
    const int y = i / w;
    const int x = i % w;
    const int nbr[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
    for (const auto& n : nbr) {
      if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
      const int j = n[0] * w + n[1];
      if (m.values()[j] && !seen[j]) {
        seen[j] = 1;
        stack.push_back(j);
      }
    }
  }
  return reached == total;
}

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[i + radius] = static_cast<float>(v);
    sum += v;
  }
  for (auto& v : k) v = static_cast<float>(v / sum);
  return k;
}

int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

// Separable Gaussian blur with symmetric (half-sample) boundary reflection.
std::vector<float> blur(const std::vector<float>& img, int h, int w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<float> tmp(img.size());
  std::vector<float> out(img.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * img[y * w + reflect(x + i, w)];
      tmp[y * w + x] = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[reflect(y + i, h) * w + x];
      out[y * w + x] = static_cast<float>(acc);
    }
  }
  return out;
}

// Distractor shapes: small ellipses kept at least 2 px away from the target.
std::vector<std::uint8_t> distractor_map(const LabelMask& mask, int count, std::uint64_t seed) {
  const int h = mask.height();
  const int w = mask.width();
  std::vector<std::uint8_t> out(mask.size(), 0);
  if (count <= 0) return out;
  Rng rng(seed, "distractors");
  const double size = std::min(h, w);
  for (int placed = 0, attempts = 0; placed < count && attempts < 50 * count; ++attempts) {
    const double ry = rng.uniform(0.03, 0.08) * size;
    const double rx = rng.uniform(0.03, 0.08) * size;
    const double cy = rng.uniform(ry, h - 1 - ry);
    const double cx = rng.uniform(rx, w - 1 - rx);
    std::vector<int> pixels;
    bool clash = false;
    for (int y = 0; y < h && !clash; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = (y - cy) / (ry + 2.0);
        const double dx = (x - cx) / (rx + 2.0);
        const bool in_margin = dy * dy + dx * dx <= 1.0;
        if (in_margin && mask.at(y, x)) {
          clash = true;
          break;
        }
        const double ey = (y - cy) / ry;
        const double ex = (x - cx) / rx;
        if (ey * ey + ex * ex <= 1.0) pixels.push_back(y * w + x);
      }
    }
    if (clash) continue;
    for (const int p : pixels) out[p] = 1;
    ++placed;
  }
  return out;
}

}  // namespace

void GeometryParams::validate() const {
  if (image_size < 8) throw ValidationError("image_size must be at least 8");
  if (n_lobes < 1 || n_lobes > 3) throw ValidationError("n_lobes must lie in 1..3");
  if (!(radius_min > 0.0 && radius_min <= radius_max && radius_max < 0.5)) {
    throw ValidationError("radius_range must satisfy 0 < min <= max < 0.5");
  }
  if (!(wobble_amp >= 0.0)) throw ValidationError("wobble_amp must be non-negative");
}

void AppearanceParams::validate() const {
  const auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(fg_mean) || !unit(bg_mean)) throw ValidationError("fg_mean and bg_mean must lie in [0, 1]");
  if (fg_mean == bg_mean) throw ValidationError("fg_mean must differ from bg_mean");
  if (!(noise_sigma >= 0.0) || !(blur_sigma >= 0.0) || !(stripe_amp >= 0.0)) {
    throw ValidationError("noise_sigma, blur_sigma and stripe_amp must be non-negative");
  }
  if (!(gamma > 0.0)) throw ValidationError("gamma must be positive");
  if (stripe_period < 2) throw ValidationError("stripe_period must be at least 2");
  if (distractors < 0) throw ValidationError("distractors must be non-negative");
  if (!unit(distractor_level)) throw ValidationError("distractor_level must lie in [0, 1]");
}

AppearanceParams AppearanceParams::domain_a() { return AppearanceParams{}; }

AppearanceParams AppearanceParams::domain_b() {
  AppearanceParams b;
  b.noise_sigma = 0.06;
  b.blur_sigma = 1.2;
  b.gamma = 1.8;
  b.stripe_amp = 0.12;
  b.stripe_period = 6;
  b.invert = true;
  return b;
}

void to_json(json& j, const AppearanceParams& a) {
  j = json{{"fg_mean", a.fg_mean},         {"bg_mean", a.bg_mean},
           {"noise_sigma", a.noise_sigma}, {"blur_sigma", a.blur_sigma},
           {"gamma", a.gamma},             {"stripe_amp", a.stripe_amp},
           {"stripe_period", a.stripe_period}, {"invert", a.invert},
           {"distractors", a.distractors}, {"distractor_level", a.distractor_level}};
}

void from_json(const json& j, AppearanceParams& a) {
  static const std::set<std::string> known = {"fg_mean",    "bg_mean",      "noise_sigma",   "blur_sigma",
                                              "gamma",      "stripe_amp",   "stripe_period", "invert",
                                              "distractors", "distractor_level"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ValidationError("unknown appearance key '" + key + "'");
  }
  a.fg_mean = j.value("fg_mean", a.fg_mean);
  a.bg_mean = j.value("bg_mean", a.bg_mean);
  a.noise_sigma = j.value("noise_sigma", a.noise_sigma);
  a.blur_sigma = j.value("blur_sigma", a.blur_sigma);
  a.gamma = j.value("gamma", a.gamma);
  a.stripe_amp = j.value("stripe_amp", a.stripe_amp);
  a.stripe_period = j.value("stripe_period", a.stripe_period);
  a.invert = j.value("invert", a.invert);
  a.distractors = j.value("distractors", a.distractors);
  a.distractor_level = j.value("distractor_level", a.distractor_level);
}

Geometry gen_geometry_detailed(const GeometryParams& p) {
  p.validate();
  const int n = p.image_size;
  Rng rng(p.seed, "geometry");
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    std::vector<Lobe> lobes;
    const double radius = rng.uniform(p.radius_min, p.radius_max) * n;
    const double cy = 0.5 * (n - 1) + rng.uniform(-0.1, 0.1) * n;
    const double cx = 0.5 * (n - 1) + rng.uniform(-0.1, 0.1) * n;
    lobes.push_back({cy, cx, radius});
    for (int l = 1; l < p.n_lobes; ++l) {
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double dist = radius * rng.uniform(0.5, 0.9);
      lobes.push_back({cy + dist * std::sin(angle), cx + dist * std::cos(angle), radius * rng.uniform(0.4, 0.7)});
    }
    std::vector<Harmonic> harmonics;
    for (int order = 2; order <= 4; ++order) {
      harmonics.push_back({order, p.wobble_amp * rng.uniform(-1.0, 1.0) / 3.0,
                           rng.uniform(0.0, 2.0 * std::numbers::pi)});
    }

    LabelMask mask(n, n);
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        for (const auto& lobe : lobes) {
          const double dy = y - lobe.cy;
          const double dx = x - lobe.cx;
          const double theta = std::atan2(dy, dx);
          double scale = 1.0;
          for (const auto& hmc : harmonics) scale += hmc.amp * std::sin(hmc.order * theta + hmc.phase);
          if (std::sqrt(dy * dy + dx * dx) <= lobe.radius * scale) {
            mask.at(y, x) = 1;
            break;
          }
        }
      }
    }
    const double fraction = static_cast<double>(mask.count()) / static_cast<double>(mask.size());
    if (fraction >= kMinFraction && fraction <= kMaxFraction && connected(mask)) {
      return {std::move(mask), std::move(lobes)};
    }
  }
  throw ValidationError("geometry parameters cannot satisfy the foreground-fraction bound after 100 retries");
}

LabelMask gen_geometry(const GeometryParams& p) { return gen_geometry_detailed(p).mask; }

TensorImage render(const LabelMask& mask, const AppearanceParams& a, std::uint64_t seed) {
  mask.validate();
  a.validate();
  const int h = mask.height();
  const int w = mask.width();
  const auto distractors = distractor_map(mask, a.distractors, seed);
  const double distractor_value = a.bg_mean + a.distractor_level * (a.fg_mean - a.bg_mean);
  Rng noise(seed, "render-noise");

  std::vector<float> img(mask.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      double v = mask.values()[i] ? a.fg_mean : (distractors[i] ? distractor_value : a.bg_mean);
      if (a.invert) v = 1.0 - v;
      if (a.stripe_amp > 0.0) v += a.stripe_amp * std::sin(2.0 * std::numbers::pi * (x + y) / a.stripe_period);
      v = std::clamp(v, 0.0, 1.0);
      if (a.gamma != 1.0) v = std::pow(v, a.gamma);
      // The noise stream is consumed unconditionally so that sigma only scales it.
      const double n = noise.normal();
      v += a.noise_sigma * n;
      img[i] = static_cast<float>(v);
    }
  }
  if (a.blur_sigma > 0.0) img = blur(img, h, w, a.blur_sigma);
  for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
  return TensorImage(h, w, 1, std::move(img), mask.spacing());
}

TensorImage oracle_transform(const TensorImage& x_a, const LabelMask& mask, const AppearanceParams& params_a,
                             const AppearanceParams& params_b, std::uint64_t seed) {
  if (!(render(mask, params_a, seed) == x_a)) {
    throw ValidationError("oracle_transform: image was not rendered from the given mask, appearance and seed");
  }
  return render(mask, params_b, seed);
}

// ---------------------------------------------------------------------------
// Dataset generation

void SynthConfig::validate() const {
  if (image_size < 8) throw ValidationError("synth.image_size must be at least 8");
  if (n_a < 0 || n_b < 0 || n_test_a < 0 || n_test_b < 0 || n_oracle_pairs < 0) {
    throw ValidationError("synth sample counts must be non-negative");
  }
  if (!(label_ratio > 0.0 && label_ratio <= 1.0)) throw ValidationError("synth.label_ratio must lie in (0, 1]");
  if (labelled_domain != "A" && labelled_domain != "B") throw ValidationError("synth.labelled_domain must be A or B");
  if (max_lobes < 1 || max_lobes > 3) throw ValidationError("synth.max_lobes must lie in 1..3");
  if (!(spacing_mm > 0.0)) throw ValidationError("synth.spacing_mm must be positive");
  GeometryParams g;
  g.image_size = image_size;
  g.radius_min = radius_min;
  g.radius_max = radius_max;
  g.wobble_amp = wobble_amp;
  g.validate();
  appearance_a.validate();
  appearance_b.validate();
}

namespace {

struct Job {
  std::string id;
  std::string domain;
  Split split;
  std::uint64_t index;
};

struct Rendered {
  std::uint64_t geom_seed = 0;
  LabelMask mask;
  TensorImage image_a;
  TensorImage image_b;
};

Rendered make_sample(const SynthConfig& c, std::uint64_t index, bool render_a, bool render_b) {
  Rendered r;
  GeometryParams g;
  g.image_size = c.image_size;
  g.radius_min = c.radius_min;
  g.radius_max = c.radius_max;
  g.wobble_amp = c.wobble_amp;
  g.seed = derive_seed(c.seed, "geometry", index);
  Rng lobes(derive_seed(c.seed, "lobes", index));
  g.n_lobes = 1 + static_cast<int>(lobes.below(static_cast<std::uint64_t>(c.max_lobes)));
  r.geom_seed = g.seed;
  const Spacing spacing{static_cast<float>(c.spacing_mm), static_cast<float>(c.spacing_mm)};
  const auto geo = gen_geometry(g);
  r.mask = LabelMask(geo.height(), geo.width(), {geo.values().begin(), geo.values().end()}, spacing);
  const std::uint64_t render_seed = derive_seed(c.seed, "render", index);
  if (render_a) r.image_a = normalize_image(render(r.mask, c.appearance_a, render_seed));
  if (render_b) r.image_b = normalize_image(render(r.mask, c.appearance_b, render_seed));
  return r;
}

DomainDataset strip_unlabelled_masks(DomainDataset d) {
  std::vector<Sample> out = d.samples();
  for (auto& s : out) {
    if (s.split == Split::TrainUnlabelled) s.mask.reset();
  }
  return DomainDataset(d.name(), std::move(out));
}

}  // namespace

SynthDataset gen_dataset(const SynthConfig& c) {
  c.validate();
  // Each sample owns a distinct index; geometry seeds are splitmix64 images of
  // distinct inputs and therefore distinct across every set.
  std::vector<Job> jobs;
  std::uint64_t index = 0;
  const auto add = [&](const char* prefix, const char* domain, Split split, int count) {
    for (int i = 0; i < count; ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%04d", prefix, i);
      jobs.push_back({id, domain, split, index++});
    }
  };
  add("a", "A", Split::TrainUnlabelled, c.n_a);
  add("a_test", "A", Split::Test, c.n_test_a);
  add("b", "B", Split::TrainUnlabelled, c.n_b);
  add("b_test", "B", Split::Test, c.n_test_b);
  const std::size_t n_domain_jobs = jobs.size();
  for (int i = 0; i < c.n_oracle_pairs; ++i) jobs.push_back({"", "pair", Split::Test, index++});

  std::vector<Rendered> rendered(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& job = jobs[i];
    const bool pair = i >= n_domain_jobs;
    rendered[i] = make_sample(c, job.index, pair || job.domain == "A", pair || job.domain == "B");
  });

  std::vector<Sample> a;
  std::vector<Sample> b;
  std::vector<Sample> oa;
  std::vector<Sample> ob;
  SynthDataset out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& job = jobs[i];
    auto& r = rendered[i];
    if (i >= n_domain_jobs) {
      const int k = static_cast<int>(i - n_domain_jobs);
      char ida[32];
      char idb[32];
      std::snprintf(ida, sizeof(ida), "oa_%04d", k);
      std::snprintf(idb, sizeof(idb), "ob_%04d", k);
      oa.push_back({ida, std::move(r.image_a), r.mask, "A", Split::Test});
      ob.push_back({idb, std::move(r.image_b), r.mask, "B", Split::Test});
      out.pairs.push_back({r.geom_seed, ida, idb});
    } else if (job.domain == "A") {
      a.push_back({job.id, std::move(r.image_a), r.mask, "A", job.split});
    } else {
      b.push_back({job.id, std::move(r.image_b), r.mask, "B", job.split});
    }
  }

  DomainDataset da("domain_a", std::move(a));
  DomainDataset db("domain_b", std::move(b));
  const std::uint64_t split_seed = derive_seed(c.seed, "label-split");
  if (c.labelled_domain == "A") {
    if (c.n_a > 0) da = split_dataset(da, c.label_ratio, split_seed);
  } else if (c.n_b > 0) {
    db = split_dataset(db, c.label_ratio, split_seed);
  }
  out.domain_a = strip_unlabelled_masks(std::move(da));
  out.domain_b = strip_unlabelled_masks(std::move(db));
  out.oracle_a = DomainDataset("oracle_a", std::move(oa));
  out.oracle_b = DomainDataset("oracle_b", std::move(ob));
  return out;
}

void write_dataset(const fs::path& dir, const SynthDataset& data) {
  save_dataset(dir / "domain_a", data.domain_a);
  save_dataset(dir / "domain_b", data.domain_b);
  save_dataset(dir / "oracle_a", data.oracle_a);
  save_dataset(dir / "oracle_b", data.oracle_b);
  json pairs = json::array();
  for (const auto& p : data.pairs) pairs.push_back({{"geom_seed", p.geom_seed}, {"a", p.a}, {"b", p.b}});
  std::ofstream os(dir / "pairs.json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + (dir / "pairs.json").string());
  os << pairs.dump(2) << '\n';
}

std::vector<OraclePair> load_pairs(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open pairing table: " + path.string());
  std::vector<OraclePair> out;
  try {
    for (const auto& e : json::parse(is)) {
      out.push_back({e.at("geom_seed").get<std::uint64_t>(), e.at("a").get<std::string>(), e.at("b").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw ValidationError("malformed pairing table " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace ahdc::synth
