// Command-line entry point: one JSON config drives every stage.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ahdc/errors.hpp"
#include "ahdc/pipeline.hpp"

namespace {

using nlohmann::json;

int fail(int code, const std::string& type, const std::string& message) {
  std::cerr << json{{"error", {{"code", code}, {"type", type}, {"message", message}}}}.dump() << '\n';
  return code;
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw ahdc::ValidationError("cannot read config file: " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ahdc::ValidationError("config file is not valid JSON: " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-domain semi-supervised segmentation laboratory"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  std::uint64_t seed = 0;
  std::string out_dir;
  ahdc::pipeline::Overrides ov;
  app.add_option("--config", config_path, "Experiment config (JSON)");
  app.add_flag("--force", force, "Overwrite existing stage outputs");
  auto* seed_opt = app.add_option("--seed", seed, "Override the experiment seed");
  auto* out_opt = app.add_option("--out", out_dir, "Override the output directory");
  app.add_flag("--no-global-branch", ov.no_global_branch, "Dual nets without the global attention branch");
  app.add_flag("--single-net", ov.single_net, "Train S1 alone (no inter-domain consistency)");
  app.add_flag("--no-ow", ov.no_ow, "Disable the orthogonal weight penalty");
  app.add_flag("--combined-objective", ov.combined_objective, "One joint update per iteration");
  app.add_flag("--consistency-unlabelled-only", ov.consistency_unlabelled_only,
               "Consistency phases use unlabelled pairs only");
  app.add_flag("--no-skip-connections", ov.no_skip_connections, "Mapping nets without skip connections");
  app.add_flag("--no-reconstruction", ov.no_reconstruction, "BAI without the cycle reconstruction losses");
  app.add_flag("--supervised-only", ov.supervised_only, "Supervised phase only (baseline)");

  app.add_subcommand("synth", "Generate (or import) the two-domain dataset");
  app.add_subcommand("train-bai", "Train the mapping networks");
  app.add_subcommand("build-matched", "Build the matched domains");
  app.add_subcommand("train-hdc", "Train the dual-modelling networks");
  app.add_subcommand("eval", "Evaluate on the test splits");
  auto* analyze = app.add_subcommand("analyze", "Analysis exports");
  analyze->require_subcommand(1);
  analyze->add_subcommand("pca", "PCA projection of source and adapted images");
  analyze->add_subcommand("featcorr", "Inter-network feature correlation");
  app.add_subcommand("all", "Run every stage in order");
  app.add_subcommand("config", "Print the resolved config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(1, "usage", e.what());
  }

  try {
    if (*seed_opt) ov.seed = seed;
    if (*out_opt) ov.output_dir = out_dir;
    const auto config = ahdc::pipeline::resolve_config(ahdc::pipeline::apply_overrides(read_config(config_path), ov));
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "config") {
      std::cout << config.to_json().dump(2) << '\n';
      return 0;
    }
    ahdc::pipeline::Runner runner(config, force);
    if (name == "synth") runner.synth();
    else if (name == "train-bai") runner.train_bai();
    else if (name == "build-matched") runner.build_matched();
    else if (name == "train-hdc") runner.train_hdc();
    else if (name == "eval") runner.eval();
    else if (name == "all") runner.all();
    else if (name == "analyze") {
      const std::string what = sub->get_subcommands().front()->get_name();
      if (what == "pca") runner.analyze_pca();
      else runner.analyze_featcorr();
    }
    return 0;
  } catch (const ahdc::ValidationError& e) {
    return fail(1, "validation", e.what());
  } catch (const std::exception& e) {
    return fail(2, "runtime", e.what());
  }
}
