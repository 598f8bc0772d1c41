#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ahdc/core_data.hpp"

namespace ahdc::synth {

struct GeometryParams {
  int image_size = 64;
  int n_lobes = 1;            // 1..3
  double radius_min = 0.15;   // fraction of image size
  double radius_max = 0.3;
  double wobble_amp = 0.1;    // relative boundary perturbation
  std::uint64_t seed = 0;

  void validate() const;
};

struct Lobe {
  double cy = 0.0;
  double cx = 0.0;
  double radius = 0.0;  // pixels
};

struct Geometry {
  LabelMask mask;
  std::vector<Lobe> lobes;  // lobes[0] is the main body
};

struct AppearanceParams {
  double fg_mean = 0.75;
  double bg_mean = 0.25;
  double noise_sigma = 0.05;
  double blur_sigma = 0.6;
  double gamma = 1.0;
  double stripe_amp = 0.0;
  int stripe_period = 8;
  bool invert = false;
  // Bright non-target structures drawn from the render seed, so both domains
  // show them at the same places. Intensity is a fraction of the way from
  // background to foreground.
  int distractors = 0;
  double distractor_level = 1.0;

  void validate() const;

  /// Bright target on dark background with mild noise.
  static AppearanceParams domain_a();
  /// Inverted, gamma 1.8, striped and more strongly blurred.
  static AppearanceParams domain_b();
};

void to_json(nlohmann::json& j, const AppearanceParams& a);
void from_json(const nlohmann::json& j, AppearanceParams& a);

/// Connected blob with foreground fraction in [0.02, 0.4]; deterministic given the seed.
Geometry gen_geometry_detailed(const GeometryParams& p);
LabelMask gen_geometry(const GeometryParams& p);

/// Renders a mask under an appearance; output clipped to [0, 1].
TensorImage render(const LabelMask& mask, const AppearanceParams& a, std::uint64_t seed);

/// Ground-truth matched sample: the same geometry and seed rendered under
/// `params_b`. Throws if `x_a` is not the rendering of (mask, params_a, seed).
TensorImage oracle_transform(const TensorImage& x_a, const LabelMask& mask, const AppearanceParams& params_a,
                             const AppearanceParams& params_b, std::uint64_t seed);

struct SynthConfig {
  int image_size = 64;
  int n_a = 200;
  int n_b = 200;
  int n_test_a = 40;
  int n_test_b = 40;
  int n_oracle_pairs = 32;
  double label_ratio = 0.2;
  std::string labelled_domain = "A";  // "A" or "B"; the other domain is fully unlabelled
  int max_lobes = 3;
  double radius_min = 0.15;
  double radius_max = 0.3;
  double wobble_amp = 0.12;
  double spacing_mm = 1.0;
  AppearanceParams appearance_a = AppearanceParams::domain_a();
  AppearanceParams appearance_b = AppearanceParams::domain_b();
  std::uint64_t seed = 0;

  void validate() const;
};

struct OraclePair {
  std::uint64_t geom_seed = 0;
  std::string a;
  std::string b;
};

struct SynthDataset {
  DomainDataset domain_a;
  DomainDataset domain_b;
  DomainDataset oracle_a;  // held-out, never used for training
  DomainDataset oracle_b;
  std::vector<OraclePair> pairs;
};

/// Generates both domains plus the oracle evaluation pairs. Images are
/// min-max normalised. Training domains use disjoint geometry seeds.
SynthDataset gen_dataset(const SynthConfig& config);

/// Writes domain_a/, domain_b/, oracle_a/, oracle_b/ and pairs.json under `dir`.
void write_dataset(const std::filesystem::path& dir, const SynthDataset& data);

std::vector<OraclePair> load_pairs(const std::filesystem::path& path);

}  // namespace ahdc::synth
