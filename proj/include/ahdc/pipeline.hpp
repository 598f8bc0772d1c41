#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "ahdc/bai.hpp"
#include "ahdc/hdc.hpp"
#include "ahdc/synthgen.hpp"

namespace ahdc::pipeline {

struct DataConfig {
  std::string source = "synth";  // "synth" or "manifests"
  double label_ratio = 0.2;
  std::string labelled_domain = "A";  // synth only: which rendered domain is D1
  std::string d1_manifest;            // manifests only
  std::string d2_manifest;
  synth::SynthConfig synth{};
};

struct EvalConfig {
  std::string which = "auto";
  bool evaluate_d2 = true;
};

struct AnalysisConfig {
  int pca_max_per_set = 64;
  int probe_samples = 8;
  bool per_channel = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  DataConfig data{};
  bai::BaiConfig bai{};
  hdc::HdcConfig hdc{};
  EvalConfig eval{};
  AnalysisConfig analysis{};

  nlohmann::json to_json() const;  // fully materialized
};

/// Every key with its default value.
nlohmann::json default_config_json();

/// Overlays `user` on the defaults; unknown keys or mistyped values are
/// rejected with the offending path. Seeds of the stages derive from "seed".
ExperimentConfig resolve_config(const nlohmann::json& user);

/// Command-line overrides applied after the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  bool no_global_branch = false;
  bool single_net = false;
  bool no_ow = false;
  bool combined_objective = false;
  bool consistency_unlabelled_only = false;
  bool no_skip_connections = false;
  bool no_reconstruction = false;
  bool supervised_only = false;
};

nlohmann::json apply_overrides(nlohmann::json user, const Overrides& o);

/// One run over an output directory. Holds the directory lock for its
/// lifetime; stage outputs go to output_dir/<stage>/.
class Runner {
 public:
  Runner(ExperimentConfig config, bool force);
  ~Runner();
  Runner(const Runner&) = delete;
  Runner& operator=(const Runner&) = delete;

  void synth();
  void train_bai();
  void build_matched();
  void train_hdc();
  void eval();
  void analyze_pca();
  void analyze_featcorr();
  void all();

  const ExperimentConfig& config() const { return config_; }
  std::filesystem::path stage_dir(const std::string& stage) const;

 private:
  std::filesystem::path begin_stage(const std::string& stage);
  void require(const std::filesystem::path& path, const std::string& what) const;
  DomainDataset load_d1() const;
  DomainDataset load_d2() const;

  ExperimentConfig config_;
  bool force_;
  std::filesystem::path lock_path_;
};

}  // namespace ahdc::pipeline
