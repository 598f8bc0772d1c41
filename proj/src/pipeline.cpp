#include "ahdc/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <fstream>

#include "ahdc/errors.hpp"
#include "ahdc/format.hpp"
#include "ahdc/log.hpp"
#include "ahdc/metrics.hpp"
#include "ahdc/rng.hpp"

namespace ahdc::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

json synth_to_json(const synth::SynthConfig& c) {
  return json{{"image_size", c.image_size},
              {"n_a", c.n_a},
              {"n_b", c.n_b},
              {"n_test_a", c.n_test_a},
              {"n_test_b", c.n_test_b},
              {"n_oracle_pairs", c.n_oracle_pairs},
              {"max_lobes", c.max_lobes},
              {"radius_min", c.radius_min},
              {"radius_max", c.radius_max},
              {"wobble_amp", c.wobble_amp},
              {"spacing_mm", c.spacing_mm},
              {"appearance_a", c.appearance_a},
              {"appearance_b", c.appearance_b}};
}

synth::SynthConfig synth_from_json(const json& j) {
  synth::SynthConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.n_a = j.at("n_a").get<int>();
  c.n_b = j.at("n_b").get<int>();
  c.n_test_a = j.at("n_test_a").get<int>();
  c.n_test_b = j.at("n_test_b").get<int>();
  c.n_oracle_pairs = j.at("n_oracle_pairs").get<int>();
  c.max_lobes = j.at("max_lobes").get<int>();
  c.radius_min = j.at("radius_min").get<double>();
  c.radius_max = j.at("radius_max").get<double>();
  c.wobble_amp = j.at("wobble_amp").get<double>();
  c.spacing_mm = j.at("spacing_mm").get<double>();
  c.appearance_a = j.at("appearance_a").get<synth::AppearanceParams>();
  c.appearance_b = j.at("appearance_b").get<synth::AppearanceParams>();
  return c;
}

json without_seed(json j) {
  j.erase("seed");
  return j;
}

json merge_strict(const json& defaults, const json& user, const std::string& path) {
  if (!user.is_object()) throw ValidationError("config value '" + (path.empty() ? "<root>" : path) + "' must be an object");
  json out = defaults;
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw ValidationError("unknown config key '" + where + "'");
    const json& d = defaults.at(key);
    if (d.is_object()) {
      out[key] = merge_strict(d, value, where);
    } else if (d.is_boolean()) {
      if (!value.is_boolean()) throw ValidationError("config key '" + where + "' must be a boolean");
      out[key] = value;
    } else if (d.is_string()) {
      if (!value.is_string()) throw ValidationError("config key '" + where + "' must be a string");
      out[key] = value;
    } else if (d.is_number_integer()) {
      if (!value.is_number_integer()) throw ValidationError("config key '" + where + "' must be an integer");
      if (d.is_number_unsigned() && value.get<std::int64_t>() < 0) {
        throw ValidationError("config key '" + where + "' must be non-negative");
      }
      out[key] = value;
    } else if (d.is_number()) {
      if (!value.is_number()) throw ValidationError("config key '" + where + "' must be a number");
      out[key] = value.get<double>();
    } else {
      throw ValidationError("config key '" + where + "' cannot be set");
    }
  }
  return out;
}

}  // namespace

json ExperimentConfig::to_json() const {
  return json{{"seed", seed},
              {"output_dir", output_dir.string()},
              {"data",
               {{"source", data.source},
                {"label_ratio", data.label_ratio},
                {"labelled_domain", data.labelled_domain},
                {"d1_manifest", data.d1_manifest},
                {"d2_manifest", data.d2_manifest},
                {"synth", synth_to_json(data.synth)}}},
              {"bai", without_seed(bai)},
              {"hdc", without_seed(hdc)},
              {"eval", {{"which", eval.which}, {"evaluate_d2", eval.evaluate_d2}}},
              {"analysis",
               {{"pca_max_per_set", analysis.pca_max_per_set},
                {"probe_samples", analysis.probe_samples},
                {"per_channel", analysis.per_channel}}}};
}

json default_config_json() { return ExperimentConfig{}.to_json(); }

ExperimentConfig resolve_config(const json& user) {
  const json j = merge_strict(default_config_json(), user, "");
  ExperimentConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
    const auto& d = j.at("data");
    c.data.source = d.at("source").get<std::string>();
    c.data.label_ratio = d.at("label_ratio").get<double>();
    c.data.labelled_domain = d.at("labelled_domain").get<std::string>();
    c.data.d1_manifest = d.at("d1_manifest").get<std::string>();
    c.data.d2_manifest = d.at("d2_manifest").get<std::string>();
    c.data.synth = synth_from_json(d.at("synth"));
    json bai = j.at("bai");
    bai["seed"] = derive_seed(c.seed, "bai");
    c.bai = bai.get<bai::BaiConfig>();
    json hdc = j.at("hdc");
    hdc["seed"] = derive_seed(c.seed, "hdc");
    c.hdc = hdc.get<hdc::HdcConfig>();
    c.eval.which = j.at("eval").at("which").get<std::string>();
    c.eval.evaluate_d2 = j.at("eval").at("evaluate_d2").get<bool>();
    const auto& a = j.at("analysis");
    c.analysis.pca_max_per_set = a.at("pca_max_per_set").get<int>();
    c.analysis.probe_samples = a.at("probe_samples").get<int>();
    c.analysis.per_channel = a.at("per_channel").get<bool>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("invalid config: ") + e.what());
  }

  c.data.synth.seed = c.seed;
  c.data.synth.label_ratio = c.data.label_ratio;
  c.data.synth.labelled_domain = c.data.labelled_domain;
  if (c.data.source != "synth" && c.data.source != "manifests") {
    throw ValidationError("data.source must be 'synth' or 'manifests'");
  }
  if (c.data.source == "manifests" && (c.data.d1_manifest.empty() || c.data.d2_manifest.empty())) {
    throw ValidationError("data.source 'manifests' needs data.d1_manifest and data.d2_manifest");
  }
  if (c.data.source == "synth") c.data.synth.validate();
  if (!(c.data.label_ratio > 0.0 && c.data.label_ratio <= 1.0)) throw ValidationError("data.label_ratio must lie in (0, 1]");
  c.bai.validate();
  c.hdc.validate();
  hdc::parse_which(c.eval.which);
  if (c.analysis.pca_max_per_set < 1 || c.analysis.probe_samples < 1) {
    throw ValidationError("analysis sample counts must be positive");
  }
  if (c.output_dir.empty()) throw ValidationError("output_dir must not be empty");
  return c;
}

json apply_overrides(json user, const Overrides& o) {
  if (!user.is_object()) throw ValidationError("config must be a JSON object");
  const auto set = [&](std::initializer_list<const char*> path, json value) {
    json* node = &user;
    for (auto it = path.begin(); it + 1 != path.end(); ++it) {
      if (!node->contains(*it)) (*node)[*it] = json::object();
      node = &(*node)[*it];
    }
    (*node)[*(path.end() - 1)] = std::move(value);
  };
  if (o.seed) set({"seed"}, *o.seed);
  if (o.output_dir) set({"output_dir"}, *o.output_dir);
  if (o.no_global_branch) set({"hdc", "ablation", "no_global_branch"}, true);
  if (o.single_net) set({"hdc", "ablation", "single_net"}, true);
  if (o.no_ow) set({"hdc", "ablation", "no_ow"}, true);
  if (o.combined_objective) set({"hdc", "ablation", "combined_objective"}, true);
  if (o.consistency_unlabelled_only) set({"hdc", "ablation", "consistency_unlabelled_only"}, true);
  if (o.supervised_only) set({"hdc", "ablation", "supervised_only"}, true);
  if (o.no_skip_connections) set({"bai", "mapping", "use_skip_connections"}, false);
  if (o.no_reconstruction) set({"bai", "reconstruction"}, false);
  return user;
}

// ---------------------------------------------------------------------------
// Runner

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

json eval_json(const bai::AdaptationEval& e) {
  return json{{"cycle_mae", e.cycle_mae}, {"oracle_mae", e.oracle_mae}, {"identity_mae", e.identity_mae}};
}

std::shared_ptr<nn::Mapper> load_mapper(const fs::path& path) {
  auto net = std::dynamic_pointer_cast<nn::Mapper>(nn::load_any_network(path));
  if (!net) throw ValidationError("checkpoint is not a mapping network: " + path.string());
  return net;
}

}  // namespace

Runner::Runner(ExperimentConfig config, bool force) : config_(std::move(config)), force_(force) {
  torch::set_num_threads(1);
  fs::create_directories(config_.output_dir);
  lock_path_ = config_.output_dir / ".lock";
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    const auto held = lock_path_;
    lock_path_.clear();
    throw ValidationError("output directory is locked by another run: " + held.string() +
                          " (remove the file if no run is active)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

Runner::~Runner() {
  if (!lock_path_.empty()) {
    std::error_code ec;
    fs::remove(lock_path_, ec);
  }
}

fs::path Runner::stage_dir(const std::string& stage) const { return config_.output_dir / stage; }

fs::path Runner::begin_stage(const std::string& stage) {
  const fs::path dir = stage_dir(stage);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force_) throw ValidationError("stage output exists: " + dir.string() + " (use --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  write_json(dir / "resolved_config.json", config_.to_json());
  info("[" + stage + "] writing " + dir.string());
  return dir;
}

void Runner::require(const fs::path& path, const std::string& what) const {
  if (!fs::exists(path)) throw ValidationError("missing " + what + ": " + path.string());
}

DomainDataset Runner::load_d1() const {
  const auto path = stage_dir("synth") / "d1" / "manifest.json";
  require(path, "upstream dataset (run synth first)");
  return load_manifest(path);
}

DomainDataset Runner::load_d2() const {
  const auto path = stage_dir("synth") / "d2" / "manifest.json";
  require(path, "upstream dataset (run synth first)");
  return load_manifest(path);
}

void Runner::synth() {
  const fs::path dir = begin_stage("synth");
  DomainDataset d1, d2;
  json summary;
  if (config_.data.source == "synth") {
    const auto data = synth::gen_dataset(config_.data.synth);
    const bool a_is_d1 = config_.data.labelled_domain == "A";
    d1 = a_is_d1 ? data.domain_a : data.domain_b;
    d2 = a_is_d1 ? data.domain_b : data.domain_a;
    save_dataset(dir / "oracle_a", data.oracle_a);
    save_dataset(dir / "oracle_b", data.oracle_b);
    json pairs = json::array();
    for (const auto& p : data.pairs) pairs.push_back({{"geom_seed", p.geom_seed}, {"a", p.a}, {"b", p.b}});
    write_json(dir / "pairs.json", pairs);
    summary["oracle_pairs"] = data.pairs.size();
  } else {
    const auto raw = load_manifest(config_.data.d1_manifest);
    d1 = split_dataset(raw, config_.data.label_ratio, derive_seed(config_.seed, "label-split"));
    d2 = load_manifest(config_.data.d2_manifest);
    summary["oracle_pairs"] = 0;
  }
  save_dataset(dir / "d1", d1);
  save_dataset(dir / "d2", d2);
  const auto counts = [](const DomainDataset& d) {
    return json{{"name", d.name()},
                {"labelled", d.counts().labelled},
                {"unlabelled", d.counts().unlabelled},
                {"test", d.counts().test}};
  };
  summary["d1"] = counts(d1);
  summary["d2"] = counts(d2);
  summary["d1_domain"] = d1.empty() ? "" : d1.samples().front().domain;
  write_json(dir / "summary.json", summary);
}

void Runner::train_bai() {
  const DomainDataset d1 = load_d1();
  const DomainDataset d2 = load_d2();
  const fs::path dir = begin_stage("bai");
  bai::BaiTrainer trainer(config_.bai);

  std::optional<DomainDataset> oa, ob;
  std::vector<synth::OraclePair> pairs;
  const fs::path synth_dir = stage_dir("synth");
  if (fs::exists(synth_dir / "pairs.json")) {
    pairs = synth::load_pairs(synth_dir / "pairs.json");
    if (!pairs.empty()) {
      oa = load_manifest(synth_dir / "oracle_a" / "manifest.json");
      ob = load_manifest(synth_dir / "oracle_b" / "manifest.json");
    }
  }
  const bool a_is_d1 = !d1.empty() && d1.samples().front().domain == "A";
  const auto evaluate = [&] {
    nn::Mapper& a_to_b = a_is_d1 ? trainer.g1() : trainer.g2();
    return bai::evaluate_adaptation(trainer.g1(), trainer.g2(), d1, d2, a_to_b, oa ? &*oa : nullptr,
                                    ob ? &*ob : nullptr, pairs);
  };

  std::ofstream eval_csv(dir / "eval.csv", std::ios::trunc);
  eval_csv << "epoch,cycle_mae,oracle_mae,identity_mae\n";
  const auto log_eval = [&](int epoch, const bai::AdaptationEval& e) {
    eval_csv << epoch << ',' << fmt_real(e.cycle_mae) << ',' << fmt_real(e.oracle_mae) << ','
             << fmt_real(e.identity_mae) << '\n';
    info("[bai] epoch " + std::to_string(epoch) + " cycle_mae " + fmt_real(e.cycle_mae) + " oracle_mae " +
         fmt_real(e.oracle_mae) + " identity_mae " + fmt_real(e.identity_mae));
  };
  const auto initial = evaluate();
  log_eval(0, initial);
  bai::AdaptationEval last = initial;
  int last_epoch = 0;
  trainer.train(d1, d2, dir / "checkpoints", [&](int epoch) {
    last = evaluate();
    last_epoch = epoch;
    log_eval(epoch, last);
  });
  if (trainer.steps() % std::max<std::int64_t>(trainer.steps_per_epoch(d1.counts().labelled + d1.counts().unlabelled,
                                                                       d2.counts().labelled + d2.counts().unlabelled),
                                               1) != 0) {
    last = evaluate();
    log_eval(last_epoch + 1, last);
  }
  eval_csv.close();
  bai::write_history_csv(dir / "loss.csv", trainer.history());
  nn::save_network(dir / "g1.ckpt", trainer.g1());
  nn::save_network(dir / "g2.ckpt", trainer.g2());
  write_json(dir / "summary.json",
             json{{"steps", trainer.steps()}, {"initial", eval_json(initial)}, {"final", eval_json(last)}});
}

void Runner::build_matched() {
  const DomainDataset d1 = load_d1();
  const DomainDataset d2 = load_d2();
  const fs::path bai_dir = stage_dir("bai");
  require(bai_dir / "g1.ckpt", "checkpoint (run train-bai first)");
  require(bai_dir / "g2.ckpt", "checkpoint (run train-bai first)");
  const auto g1 = load_mapper(bai_dir / "g1.ckpt");
  const auto g2 = load_mapper(bai_dir / "g2.ckpt");
  const fs::path dir = begin_stage("matched");
  const auto m = bai::build_matched_domains(d1, d2, *g1, *g2);
  m.save(dir);
  std::size_t from_d1 = 0;
  for (const auto& p : m.pairing) from_d1 += p.origin == bai::Origin::FromD1 ? 1 : 0;
  write_json(dir / "summary.json", json{{"pairs", m.pairing.size()},
                                        {"from_d1", from_d1},
                                        {"from_d2", m.pairing.size() - from_d1},
                                        {"labelled", m.d_p1.counts().labelled},
                                        {"unlabelled", m.d_p1.counts().unlabelled}});
}

void Runner::train_hdc() {
  const fs::path matched_dir = stage_dir("matched");
  require(matched_dir / "pairing.json", "matched domains (run build-matched first)");
  const auto m = bai::MatchedDomains::load(matched_dir);
  const fs::path dir = begin_stage("hdc");
  hdc::HdcTrainer trainer(config_.hdc, m);
  const auto total = trainer.total_iterations();
  trainer.train(dir / "checkpoints", [&](int epoch) {
    const auto& h = trainer.history().back();
    info("[hdc] epoch " + std::to_string(epoch) + " step " + std::to_string(trainer.steps()) + "/" +
         std::to_string(total) + " intra " + fmt_real(h.o_intra1) + " inter " + fmt_real(h.o_inter) + " super " +
         fmt_real(h.o_super1));
  });
  hdc::write_history_csv(dir / "loss.csv", trainer.history());
  trainer.save_checkpoint(dir / "model.ckpt");
  const double final_lambda = trainer.history().empty() ? 0.0 : trainer.history().back().lambda_intra;
  write_json(dir / "summary.json", json{{"steps", trainer.steps()},
                                        {"iterations_per_epoch", trainer.iterations_per_epoch()},
                                        {"t_max", config_.hdc.t_max > 0 ? config_.hdc.t_max : total},
                                        {"final_lambda_intra", final_lambda}});
}

void Runner::eval() {
  const fs::path ckpt = stage_dir("hdc") / "model.ckpt";
  if (!fs::exists(ckpt)) throw ValidationError("missing checkpoint: " + ckpt.string() + " (run train-hdc first)");
  const auto model = hdc::HdcModel::load(ckpt);
  const DomainDataset d1 = load_d1();
  const DomainDataset d2 = load_d2();
  const fs::path dir = begin_stage("eval");
  const auto which = hdc::parse_which(config_.eval.which);
  const auto report = hdc::evaluate(model, d1, which);
  report.write(dir);
  info("[eval] D1 test DSC " + fmt_real(report.dsc.mean) + " JI " + fmt_real(report.ji.mean) + " ASD " +
       fmt_real(report.asd.mean) + " (n=" + std::to_string(report.rows.size()) + ")");
  if (config_.eval.evaluate_d2 && d2.counts().test > 0) {
    const auto r2 = hdc::evaluate(model, d2, which);
    fs::create_directories(dir / "d2");
    r2.write(dir / "d2");
    info("[eval] D2 test DSC " + fmt_real(r2.dsc.mean) + " (n=" + std::to_string(r2.rows.size()) + ")");
  }
}

void Runner::analyze_pca() {
  const fs::path bai_dir = stage_dir("bai");
  require(bai_dir / "g1.ckpt", "checkpoint (run train-bai first)");
  const auto g1 = load_mapper(bai_dir / "g1.ckpt");
  const auto g2 = load_mapper(bai_dir / "g2.ckpt");
  const DomainDataset d1 = load_d1();
  const DomainDataset d2 = load_d2();
  const fs::path dir = begin_stage("analysis/pca");

  const auto pick = [&](const DomainDataset& d) {
    // Test images when present (the held-out distribution), else training.
    DomainDataset t = d.subset({Split::Test});
    if (t.empty()) t = d.subset({Split::TrainLabelled, Split::TrainUnlabelled});
    std::vector<Sample> s(t.samples().begin(),
                          t.samples().begin() + std::min<std::size_t>(t.size(), config_.analysis.pca_max_per_set));
    return DomainDataset(d.name(), std::move(s));
  };
  const DomainDataset s1 = pick(d1);
  const DomainDataset s2 = pick(d2);
  const DomainDataset s12 = bai::adapt_domain(*g1, s1, bai::kTag1t2);
  const DomainDataset s21 = bai::adapt_domain(*g2, s2, bai::kTag2t1);
  std::vector<metrics::LabelledImage> images;
  const auto add = [&](const DomainDataset& d, const std::string& tag) {
    for (const auto& s : d.samples()) images.push_back({s.id, tag, &s.image});
  };
  add(s1, "D1");
  add(s2, "D2");
  add(s12, "D1t2");
  add(s21, "D2t1");
  const auto projection = metrics::pca_project(images, 2);
  projection.write_csv(dir / "projection.csv");
  write_json(dir / "summary.json", json{{"n", images.size()}, {"explained_variance", projection.explained_variance}});
}

void Runner::analyze_featcorr() {
  const fs::path ckpt = stage_dir("hdc") / "model.ckpt";
  if (!fs::exists(ckpt)) throw ValidationError("missing checkpoint: " + ckpt.string() + " (run train-hdc first)");
  const auto model = hdc::HdcModel::load(ckpt);
  if (!model.s2) throw ValidationError("feature correlation needs two dual nets (the run used --single-net)");
  const DomainDataset d1 = load_d1();
  const fs::path dir = begin_stage("analysis/featcorr");
  DomainDataset probe_set = d1.subset({Split::Test});
  if (probe_set.empty()) probe_set = d1.subset({Split::TrainLabelled, Split::TrainUnlabelled});
  std::vector<const TensorImage*> probe;
  for (const auto& s : probe_set.samples()) {
    if (probe.size() >= static_cast<std::size_t>(config_.analysis.probe_samples)) break;
    probe.push_back(&s.image);
  }
  if (probe.empty()) throw ValidationError("no probe images available for feature correlation");
  const auto layers = hdc::feature_correlation(*model.s1, *model.s2,
                                               nn::to_tensor(std::span<const TensorImage* const>(probe)),
                                               config_.analysis.per_channel);
  metrics::write_featcorr_csv(dir / "featcorr.csv", layers);
  info("[featcorr] mean |r| " + fmt_real(layers.back().abs_pearson));
}

void Runner::all() {
  synth();
  train_bai();
  build_matched();
  train_hdc();
  eval();
  analyze_pca();
  if (config_.hdc.ablation.single_net) {
    info("[featcorr] skipped: single-net run has no second dual net");
  } else {
    analyze_featcorr();
  }
}

}  // namespace ahdc::pipeline
