#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "ahdc/errors.hpp"
#include "ahdc/metrics.hpp"
#include "ahdc/rng.hpp"
#include "ahdc/synthgen.hpp"
#include "support.hpp"

using namespace ahdc;
using namespace ahdc::synth;

namespace {

AppearanceParams identity_appearance() {
  AppearanceParams a;
  a.fg_mean = 1.0;
  a.bg_mean = 0.0;
  a.noise_sigma = 0.0;
  a.blur_sigma = 0.0;
  a.gamma = 1.0;
  a.stripe_amp = 0.0;
  a.invert = false;
  return a;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

bool four_connected(const LabelMask& m) {
  std::vector<std::pair<int, int>> stack;
  std::set<std::pair<int, int>> seen;
  for (int y = 0; y < m.height() && stack.empty(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (m.at(y, x)) {
        stack.push_back({y, x});
        seen.insert({y, x});
        break;
      }
    }
  }
  while (!stack.empty()) {
    const auto [y, x] = stack.back();
    stack.pop_back();
    for (const auto [dy, dx] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
      const int ny = y + dy, nx = x + dx;
      if (ny < 0 || nx < 0 || ny >= m.height() || nx >= m.width() || !m.at(ny, nx)) continue;
      if (seen.insert({ny, nx}).second) stack.push_back({ny, nx});
    }
  }
  return seen.size() == m.count();
}

}  // namespace

TEST(Geometry, UnwobbledSingleLobeIsDiscreteDisk) {
  GeometryParams p;
  p.n_lobes = 1;
  p.wobble_amp = 0.0;
  p.seed = 17;
  const auto g = gen_geometry_detailed(p);
  const auto& lobe = g.lobes.at(0);
  for (const auto& [y, x] : metrics::boundary_pixels(g.mask)) {
    const double r = std::hypot(y - lobe.cy, x - lobe.cx);
    EXPECT_LE(std::abs(r - lobe.radius), 1.0);
  }
}

TEST(Geometry, DeterministicConnectedAndBounded) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    GeometryParams p;
    p.seed = seed;
    p.n_lobes = 1 + static_cast<int>(seed % 3);
    p.radius_min = 0.2;
    p.radius_max = 0.3;
    const auto m = gen_geometry(p);
    EXPECT_EQ(m, gen_geometry(p));
    const double f = static_cast<double>(m.count()) / static_cast<double>(m.size());
    EXPECT_GE(f, 0.02);
    EXPECT_LE(f, 0.4);
    EXPECT_TRUE(four_connected(m));
  }
}

TEST(Geometry, InvalidParameters) {
  GeometryParams p;
  p.radius_max = 0.6;
  EXPECT_THROW(gen_geometry(p), ValidationError);
  p = {};
  p.n_lobes = 4;
  EXPECT_THROW(gen_geometry(p), ValidationError);
  p = {};
  p.radius_min = 0.01;  // too small for the 2% lower bound
  p.radius_max = 0.02;
  EXPECT_THROW(gen_geometry(p), ValidationError);
}

TEST(Render, IdentityAppearanceReproducesMask) {
  GeometryParams g;
  g.seed = 3;
  const auto m = gen_geometry(g);
  const auto img = render(m, identity_appearance(), 5);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(img.values()[i], static_cast<float>(m.values()[i]));
  auto inv = identity_appearance();
  inv.invert = true;
  const auto img2 = render(m, inv, 5);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(img2.values()[i], 1.0f - static_cast<float>(m.values()[i]));
}

TEST(Render, NoiseMagnitudeMatchesHalfNormalMean) {
  AppearanceParams clean = identity_appearance();
  clean.fg_mean = 0.75;
  clean.bg_mean = 0.25;
  AppearanceParams noisy = clean;
  noisy.noise_sigma = 0.05;
  const double bound = 0.05 * std::sqrt(2.0 / std::numbers::pi) * 1.1;
  double total = 0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GeometryParams g;
    g.seed = seed;
    const auto m = gen_geometry(g);
    const auto a = render(m, clean, seed);
    const auto b = render(m, noisy, seed);
    for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a.values()[i] - b.values()[i]);
    n += static_cast<int>(a.size());
  }
  const double mean = total / n;
  EXPECT_LE(mean, bound);
  EXPECT_GT(mean, 0.9 * 0.05 * std::sqrt(2.0 / std::numbers::pi));
}

TEST(Render, OutputInUnitRange) {
  GeometryParams g;
  g.seed = 8;
  const auto m = gen_geometry(g);
  for (const auto& a : {AppearanceParams::domain_a(), AppearanceParams::domain_b()}) {
    const auto img = render(m, a, 1);
    for (const float v : img.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Render, AppearanceJsonRejectsUnknownKeys) {
  nlohmann::json j = AppearanceParams::domain_b();
  EXPECT_EQ(j.get<AppearanceParams>().gamma, AppearanceParams::domain_b().gamma);
  j["glow"] = 1;
  EXPECT_THROW(j.get<AppearanceParams>(), ValidationError);
}

TEST(Oracle, SameAppearanceRerendersAndDomainBIsFar) {
  const auto pa = AppearanceParams::domain_a();
  const auto pb = AppearanceParams::domain_b();
  double gap = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    GeometryParams g;
    g.seed = seed;
    const auto m = gen_geometry(g);
    const auto xa = render(m, pa, seed);
    if (seed == 0) EXPECT_EQ(oracle_transform(xa, m, pa, pa, seed), xa);
    const auto xb = oracle_transform(xa, m, pa, pb, seed);
    double s = 0;
    for (std::size_t i = 0; i < xa.size(); ++i) s += std::abs(xa.values()[i] - xb.values()[i]);
    gap += s / static_cast<double>(xa.size());
  }
  EXPECT_GT(gap / 100, 0.2);
}

TEST(Oracle, GeometryPreservedUnderThresholding) {
  GeometryParams g;
  g.seed = 9;
  const auto m = gen_geometry(g);
  auto pa = identity_appearance();
  pa.fg_mean = 0.7;
  pa.bg_mean = 0.3;
  auto pb = pa;
  pb.invert = true;
  const auto xb = oracle_transform(render(m, pa, 2), m, pa, pb, 2);
  LabelMask seg(m.height(), m.width());
  for (std::size_t i = 0; i < m.size(); ++i) seg.values()[i] = xb.values()[i] < 0.5f;  // inverted: target is dark
  EXPECT_DOUBLE_EQ(metrics::dsc(m, seg), 1.0);
}

TEST(Oracle, WrongMaskIsRejected) {
  GeometryParams g;
  g.seed = 1;
  const auto m1 = gen_geometry(g);
  g.seed = 2;
  const auto m2 = gen_geometry(g);
  const auto pa = AppearanceParams::domain_a();
  EXPECT_THROW(oracle_transform(render(m1, pa, 4), m2, pa, AppearanceParams::domain_b(), 4), ValidationError);
}

TEST(Dataset, ReferenceCountsOnDomainB) {
  SynthConfig c;
  c.image_size = 16;
  c.radius_min = 0.2;
  c.radius_max = 0.3;
  c.n_a = 99;
  c.n_b = 91;
  c.n_test_a = 0;
  c.n_test_b = 0;
  c.n_oracle_pairs = 0;
  c.label_ratio = 0.2;
  c.labelled_domain = "B";
  const auto d = gen_dataset(c);
  EXPECT_EQ(d.domain_b.counts(), (SplitCounts{18, 73, 0}));
  EXPECT_EQ(d.domain_a.counts(), (SplitCounts{0, 99, 0}));
  EXPECT_TRUE(d.pairs.empty());
  for (const auto& s : d.domain_a.samples()) EXPECT_FALSE(s.mask.has_value());
}

TEST(Dataset, DeterministicBytesAndDisjointGeometry) {
  SynthConfig c;
  c.image_size = 16;
  c.n_a = 6;
  c.n_b = 6;
  c.n_test_a = 2;
  c.n_test_b = 2;
  c.n_oracle_pairs = 3;
  c.seed = 5;
  ahdc::testing::TempDir d1, d2;
  write_dataset(d1.path(), gen_dataset(c));
  write_dataset(d2.path(), gen_dataset(c));
  for (const auto& e : std::filesystem::recursive_directory_iterator(d1.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), d1.path());
    EXPECT_EQ(file_bytes(e.path()), file_bytes(d2.path() / rel)) << rel;
  }
  const auto data = gen_dataset(c);
  ASSERT_EQ(data.pairs.size(), 3u);
  // Oracle images never appear among the training inputs.
  for (const auto& p : data.pairs) {
    EXPECT_THROW(data.domain_a.find(p.a), Error);
    EXPECT_THROW(data.domain_b.find(p.b), Error);
    EXPECT_EQ(data.oracle_a.find(p.a).mask, data.oracle_b.find(p.b).mask);
  }
  // Unpaired training domains: no mask is shared across A and B.
  for (const auto& a : data.domain_a.samples()) {
    for (const auto& b : data.domain_b.samples()) {
      if (a.mask && b.mask) EXPECT_NE(*a.mask, *b.mask);
    }
  }
  for (const auto* dom : {&data.domain_a, &data.domain_b}) {
    for (const auto& s : dom->samples()) {
      for (const float v : s.image.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
    }
  }
}
