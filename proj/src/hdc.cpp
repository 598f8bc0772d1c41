#include "ahdc/hdc.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "ahdc/errors.hpp"
#include "ahdc/format.hpp"
#include "ahdc/log.hpp"
#include "ahdc/rng.hpp"
#include "ahdc/train_util.hpp"

namespace ahdc::hdc {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void HdcConfig::validate() const {
  effective_net().validate();
  if (net.feature.in_channels != 1) throw ValidationError("dual nets take 1-channel images");
  if (epochs < 0) throw ValidationError("hdc.epochs must be >= 0");
  if (batch_unlabelled < 1 || batch_labelled < 1) throw ValidationError("hdc batch sizes must be >= 1");
  if (!(lr > 0)) throw ValidationError("hdc.lr must be positive");
  if (!(lr_decay > 0) || lr_decay > 1) throw ValidationError("hdc.lr_decay must lie in (0, 1]");
  if (weights.lambda_super < 0 || weights.lambda_inter < 0 || weights.lambda_ow < 0) {
    throw ValidationError("loss weights must be >= 0");
  }
  if (t_max < 0 || max_steps < 0 || checkpoint_every < 0) throw ValidationError("hdc schedule values must be >= 0");
  if (rotation_deg < 0 || rotation_deg > 180) throw ValidationError("hdc.rotation_deg must lie in [0, 180]");
}

nn::DualNetDescriptor HdcConfig::effective_net() const {
  nn::DualNetDescriptor d = net;
  if (ablation.no_global_branch) d.global_branch = false;
  return d;
}

loss::LossWeights HdcConfig::effective_weights() const {
  loss::LossWeights w = weights;
  if (ablation.no_ow) w.lambda_ow = 0.0;
  return w;
}

void to_json(json& j, const Ablation& a) {
  j = json{{"single_net", a.single_net},
           {"no_global_branch", a.no_global_branch},
           {"no_ow", a.no_ow},
           {"combined_objective", a.combined_objective},
           {"consistency_unlabelled_only", a.consistency_unlabelled_only},
           {"supervised_only", a.supervised_only},
           {"inter_one_way", a.inter_one_way}};
}

void from_json(const json& j, Ablation& a) {
  a.single_net = j.at("single_net").get<bool>();
  a.no_global_branch = j.at("no_global_branch").get<bool>();
  a.no_ow = j.at("no_ow").get<bool>();
  a.combined_objective = j.at("combined_objective").get<bool>();
  a.consistency_unlabelled_only = j.at("consistency_unlabelled_only").get<bool>();
  a.supervised_only = j.at("supervised_only").get<bool>();
  a.inter_one_way = j.at("inter_one_way").get<bool>();
}

void to_json(json& j, const HdcConfig& c) {
  j = json{{"net", c.net},
           {"epochs", c.epochs},
           {"batch_unlabelled", c.batch_unlabelled},
           {"batch_labelled", c.batch_labelled},
           {"lr", c.lr},
           {"lr_decay", c.lr_decay},
           {"lambda_super", c.weights.lambda_super},
           {"lambda_inter", c.weights.lambda_inter},
           {"lambda_ow", c.weights.lambda_ow},
           {"t_max", c.t_max},
           {"rotation_deg", c.rotation_deg},
           {"checkpoint_every", c.checkpoint_every},
           {"max_steps", c.max_steps},
           {"ablation", c.ablation},
           {"seed", c.seed}};
}

void from_json(const json& j, HdcConfig& c) {
  c.net = j.at("net").get<nn::DualNetDescriptor>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_unlabelled = j.at("batch_unlabelled").get<int>();
  c.batch_labelled = j.at("batch_labelled").get<int>();
  c.lr = j.at("lr").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.weights.lambda_super = j.at("lambda_super").get<double>();
  c.weights.lambda_inter = j.at("lambda_inter").get<double>();
  c.weights.lambda_ow = j.at("lambda_ow").get<double>();
  c.t_max = j.at("t_max").get<std::int64_t>();
  c.rotation_deg = j.at("rotation_deg").get<double>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.max_steps = j.at("max_steps").get<std::int64_t>();
  c.ablation = j.at("ablation").get<Ablation>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

void write_history_csv(const fs::path& path, std::span<const IterationLosses> history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "step,o_intra1,o_intra2,o_inter,o_ow,o_super1,o_super2,lambda_intra,lr\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    os << (i + 1) << ',' << fmt_real(h.o_intra1) << ',' << fmt_real(h.o_intra2) << ',' << fmt_real(h.o_inter) << ','
       << fmt_real(h.o_ow) << ',' << fmt_real(h.o_super1) << ',' << fmt_real(h.o_super2) << ','
       << fmt_real(h.lambda_intra) << ',' << fmt_real(h.lr) << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Trainer

HdcTrainer::HdcTrainer(const HdcConfig& config, const bai::MatchedDomains& matched)
    : config_(config), matched_(&matched) {
  config_.validate();
  matched.validate();
  const auto& p1 = matched.d_p1.samples();
  for (std::size_t i = 0; i < matched.pairing.size(); ++i) {
    pair_set_.insert({matched.pairing[i].id_p1, matched.pairing[i].id_p2});
    if (p1[i].split == Split::TrainLabelled) labelled_.push_back(i);
    if (p1[i].split == Split::TrainUnlabelled ||
        (p1[i].split == Split::TrainLabelled && !config_.ablation.consistency_unlabelled_only)) {
      consistency_.push_back(i);
    }
    if (d1_domain_.empty() && matched.pairing[i].origin == bai::Origin::FromD1) d1_domain_ = p1[i].domain;
    if (d2_domain_.empty() && matched.pairing[i].origin == bai::Origin::FromD2) {
      d2_domain_ = matched.d_p2.samples()[i].domain;
    }
  }
  if (labelled_.empty()) throw ValidationError("matched domains hold no labelled pairs");
  if (consistency_.empty() && !config_.ablation.supervised_only) {
    throw ValidationError("matched domains hold no pairs for the consistency phases");
  }

  const auto desc = config_.effective_net();
  s1_ = std::make_shared<nn::DualNet>(desc);
  nn::initialize(*s1_, derive_seed(config_.seed, "hdc-s1"));
  if (!config_.ablation.single_net) {
    s2_ = std::make_shared<nn::DualNet>(desc);
    nn::initialize(*s2_, derive_seed(config_.seed, "hdc-s2"));
  }
  const auto params = all_params();
  // One Adam shared by the three phases, so the phase weights keep their
  // relative scale (a per-phase Adam would normalise each of them away).
  opt_ = std::make_unique<torch::optim::Adam>(params, torch::optim::AdamOptions(config_.lr));
}

std::vector<Tensor> HdcTrainer::all_params() const {
  std::vector<Tensor> out = s1_->parameters();
  if (s2_) {
    for (const auto& p : s2_->parameters()) out.push_back(p);
  }
  return out;
}

std::int64_t HdcTrainer::iterations_per_epoch() const {
  std::size_t n_u = 0;
  for (const auto& s : matched_->d_p1.samples()) n_u += s.split == Split::TrainUnlabelled ? 1 : 0;
  if (n_u == 0) n_u = std::max(consistency_.size(), labelled_.size());
  const auto b = static_cast<std::size_t>(config_.batch_unlabelled);
  return static_cast<std::int64_t>((n_u + b - 1) / b);
}

std::int64_t HdcTrainer::total_iterations() const {
  std::int64_t total = iterations_per_epoch() * config_.epochs;
  if (config_.max_steps > 0) total = std::min(total, config_.max_steps);
  return total;
}

PairBatch HdcTrainer::make_batch(std::span<const std::size_t> indices, bool with_labels, std::int64_t step) const {
  PairBatch out;
  std::vector<const TensorImage*> a, b;
  std::vector<const LabelMask*> m;
  for (const auto i : indices) {
    const auto& s1 = matched_->d_p1.samples()[i];
    const auto& s2 = matched_->d_p2.samples()[i];
    out.ids_p1.push_back(s1.id);
    out.ids_p2.push_back(s2.id);
    a.push_back(&s1.image);
    b.push_back(&s2.image);
    if (with_labels) m.push_back(&*s1.mask);
  }
  if (indices.empty()) return out;
  out.x1 = nn::to_tensor(std::span<const TensorImage* const>(a));
  out.x2 = nn::to_tensor(std::span<const TensorImage* const>(b));
  if (with_labels) out.y = nn::to_tensor(std::span<const LabelMask* const>(m));
  if (config_.rotation_deg > 0) {
    Rng rng(derive_seed(config_.seed, with_labels ? "hdc-rotation-l" : "hdc-rotation-u", static_cast<std::uint64_t>(step)));
    std::vector<double> angles(indices.size());
    for (auto& v : angles) v = rng.uniform(-config_.rotation_deg, config_.rotation_deg);
    // The same angle moves a matched pair and its mask together.
    out.x1 = train::rotate(out.x1, angles, false);
    out.x2 = train::rotate(out.x2, angles, false);
    if (with_labels) out.y = train::rotate(out.y, angles, true);
  }
  return out;
}

PairBatch HdcTrainer::consistency_batch(std::int64_t step) const {
  if (consistency_.empty()) return {};
  const train::IndexStream stream(consistency_.size(), derive_seed(config_.seed, "hdc-order-u"));
  std::vector<std::size_t> idx;
  for (int j = 0; j < config_.batch_unlabelled; ++j) {
    idx.push_back(consistency_[stream.at(static_cast<std::uint64_t>(step) * config_.batch_unlabelled + j)]);
  }
  return make_batch(idx, false, step);
}

PairBatch HdcTrainer::labelled_batch(std::int64_t step) const {
  const train::IndexStream stream(labelled_.size(), derive_seed(config_.seed, "hdc-order-l"));
  std::vector<std::size_t> idx;
  for (int j = 0; j < config_.batch_labelled; ++j) {
    idx.push_back(labelled_[stream.at(static_cast<std::uint64_t>(step) * config_.batch_labelled + j)]);
  }
  return make_batch(idx, true, step);
}

namespace {

Tensor zero_like_scalar() { return torch::zeros({}, torch::kFloat32); }

Tensor or_zero(const Tensor& t) { return t.defined() ? t : zero_like_scalar(); }

double value(const Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

void apply(torch::optim::Adam& opt, const Tensor& loss) {
  opt.zero_grad();
  loss.backward();
  opt.step();
}

}  // namespace

IterationLosses HdcTrainer::iteration(const PairBatch& c, const PairBatch& l, std::int64_t t_max) {
  for (const PairBatch* b : {&c, &l}) {
    for (std::size_t i = 0; i < b->ids_p1.size(); ++i) {
      if (!pair_set_.contains({b->ids_p1[i], b->ids_p2[i]})) {
        throw ValidationError("pairing violation: " + b->ids_p1[i] + " is not matched with " + b->ids_p2[i]);
      }
    }
  }
  if (!l.empty() && !l.y.defined()) throw ValidationError("labelled batch without labels");

  const auto w = config_.effective_weights();
  const bool global = config_.effective_net().global_branch;
  const bool consistency = !config_.ablation.supervised_only && !c.empty();
  const auto mode = config_.ablation.inter_one_way ? loss::InterMode::OneWay : loss::InterMode::Symmetric;
  const double t = static_cast<double>(step_ + 1);
  const double tm = static_cast<double>(std::max<std::int64_t>(t_max, 1));

  IterationLosses out;
  out.lambda_intra = loss::ramp_weight(std::min(t, tm), tm);
  out.lr = train::current_lr(*opt_);
  std::vector<std::string> ids = c.ids_p1;
  ids.insert(ids.end(), l.ids_p1.begin(), l.ids_p1.end());
  const auto check = [&](double v, const char* what) { train::require_finite(v, what, ids); };

  const auto ow_penalty = [&]() -> Tensor {
    if (!two_nets()) return {};
    const auto f1 = s1_->feature_conv_weights();
    const auto f2 = s2_->feature_conv_weights();
    return loss::orthogonal_weight_penalty(f1, f2);
  };
  const auto supervised = [&](Tensor& sup1, Tensor& sup2) {
    const auto o1 = s1_->forward(l.x1);
    sup1 = loss::supervised_loss(o1.local, o1.global, l.y);
    if (two_nets()) {
      const auto o2 = s2_->forward(l.x2);
      sup2 = loss::supervised_loss(o2.local, o2.global, l.y);
    }
  };

  if (config_.ablation.combined_objective) {
    loss::HdcParts parts;
    if (consistency) {
      const auto o1 = s1_->forward(c.x1);
      if (global) parts.intra1 = loss::intra_consistency(o1.local, o1.global);
      if (two_nets()) {
        const auto o2 = s2_->forward(c.x2);
        if (global) parts.intra2 = loss::intra_consistency(o2.local, o2.global);
        parts.inter = loss::inter_consistency(o1.local, o1.global, o2.local, o2.global, mode);
      }
    }
    parts.ow = ow_penalty();
    if (!l.empty()) supervised(parts.super1, parts.super2);
    out.o_intra1 = value(parts.intra1);
    out.o_intra2 = value(parts.intra2);
    out.o_inter = value(parts.inter);
    out.o_ow = value(parts.ow);
    out.o_super1 = value(parts.super1);
    out.o_super2 = value(parts.super2);
    for (auto* p : {&parts.intra1, &parts.intra2, &parts.inter, &parts.ow, &parts.super1, &parts.super2}) {
      *p = or_zero(*p);
    }
    auto total_w = w;
    if (!consistency) total_w.lambda_inter = 0.0;
    const Tensor total = loss::hdc_total(parts, total_w, consistency ? out.lambda_intra : 0.0);
    check(total.item<double>(), "hdc_total");
    if (total.requires_grad()) apply(*opt_, total);
  } else {
    // Phase 1: intra-domain dual consistency.
    if (consistency) {
      const auto o1 = s1_->forward(c.x1);
      Tensor intra1, intra2, ow;
      if (global) intra1 = loss::intra_consistency(o1.local, o1.global);
      if (two_nets() && global) {
        const auto o2 = s2_->forward(c.x2);
        intra2 = loss::intra_consistency(o2.local, o2.global);
      }
      ow = ow_penalty();
      out.o_intra1 = value(intra1);
      out.o_intra2 = value(intra2);
      out.o_ow = value(ow);
      check(out.o_intra1, "o_intra1");
      check(out.o_intra2, "o_intra2");
      check(out.o_ow, "o_ow");
      Tensor loss;
      if (global) loss = out.lambda_intra * (or_zero(intra1) + or_zero(intra2));
      if (ow.defined() && w.lambda_ow > 0) loss = loss.defined() ? loss + w.lambda_ow * ow : w.lambda_ow * ow;
      if (loss.defined() && loss.requires_grad()) apply(*opt_, loss);
    }
    // Phase 2: inter-domain consistency on the matched pair.
    if (consistency && two_nets() && (w.lambda_inter > 0 || w.lambda_ow > 0)) {
      const auto o1 = s1_->forward(c.x1);
      const auto o2 = s2_->forward(c.x2);
      const Tensor inter = loss::inter_consistency(o1.local, o1.global, o2.local, o2.global, mode);
      out.o_inter = value(inter);
      check(out.o_inter, "o_inter");
      Tensor loss = w.lambda_inter * inter;
      if (w.lambda_ow > 0) loss = loss + w.lambda_ow * ow_penalty();
      apply(*opt_, loss);
    } else if (consistency && two_nets()) {
      torch::NoGradGuard no_grad;
      const auto o1 = s1_->forward(c.x1);
      const auto o2 = s2_->forward(c.x2);
      out.o_inter = value(loss::inter_consistency(o1.local, o1.global, o2.local, o2.global, mode));
    }
    // Phase 3: supervised learning on labelled pairs.
    if (!l.empty() && w.lambda_super > 0) {
      Tensor sup1, sup2;
      supervised(sup1, sup2);
      out.o_super1 = value(sup1);
      out.o_super2 = value(sup2);
      check(out.o_super1, "o_super1");
      check(out.o_super2, "o_super2");
      apply(*opt_, w.lambda_super * (sup1 + or_zero(sup2)));
    }
  }
  ++step_;
  history_.push_back(out);
  return out;
}

void HdcTrainer::train(const fs::path& checkpoint_dir, const EpochHook& on_epoch) {
  const std::int64_t ipe = iterations_per_epoch();
  const std::int64_t total = total_iterations();
  const std::int64_t t_max = config_.t_max > 0 ? config_.t_max : std::max<std::int64_t>(total, 1);
  const auto checkpoint = [&](const std::string& name) {
    if (checkpoint_dir.empty()) return;
    fs::create_directories(checkpoint_dir);
    save_checkpoint(checkpoint_dir / name);
  };
  const auto set_epoch_lr = [&](std::int64_t epoch) {
    const double lr = config_.lr * std::pow(config_.lr_decay, static_cast<double>(epoch));
    train::set_lr(*opt_, lr);
  };
  while (step_ < total) {
    set_epoch_lr(step_ / ipe);
    iteration(consistency_batch(step_), labelled_batch(step_), t_max);
    if (step_ % ipe == 0) {
      const int done = static_cast<int>(step_ / ipe);
      if (on_epoch) on_epoch(done);
      if (config_.checkpoint_every > 0 && done % config_.checkpoint_every == 0 && step_ < total) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", done);
        checkpoint(name);
      }
    }
  }
  set_epoch_lr(step_ / ipe);
  checkpoint("final.ckpt");
}

void HdcTrainer::save_checkpoint(const fs::path& path) const {
  std::vector<nn::NamedTensor> entries;
  for (auto& t : nn::network_tensors(*s1_)) entries.push_back({"s1/" + t.name, t.value});
  if (s2_) {
    for (auto& t : nn::network_tensors(*s2_)) entries.push_back({"s2/" + t.name, t.value});
  }
  const auto params = all_params();
  json opt_steps;
  for (auto& e : train::adam_state(*opt_, params, "opt/", opt_steps)) entries.push_back(std::move(e));
  json history = json::array();
  for (const auto& h : history_) {
    history.push_back({h.o_intra1, h.o_intra2, h.o_inter, h.o_ow, h.o_super1, h.o_super2, h.lambda_intra, h.lr});
  }
  const auto net_meta = [](const nn::Network& n) { return json{{"kind", n.kind()}, {"descriptor", n.descriptor_json()}}; };
  json meta = {{"kind", "hdc-state"},
               {"config", config_},
               {"step", step_},
               {"lr", train::current_lr(*opt_)},
               {"d1_domain", d1_domain_},
               {"d2_domain", d2_domain_},
               {"s1", net_meta(*s1_)},
               {"opt_steps", opt_steps},
               {"history", history}};
  if (s2_) meta["s2"] = net_meta(*s2_);
  nn::save_archive(path, meta, entries);
}

void HdcTrainer::load_checkpoint(const fs::path& path) {
  const auto [meta, entries] = nn::load_archive(path);
  if (meta.at("kind") != "hdc-state") throw ValidationError("not an HDC checkpoint: " + path.string());
  nn::restore_network(*s1_, meta.at("s1"), entries, "s1/");
  if (s2_ && !meta.contains("s2")) throw ValidationError("checkpoint lacks the second net");
  if (s2_) nn::restore_network(*s2_, meta.at("s2"), entries, "s2/");
  std::map<std::string, Tensor> by_name;
  for (const auto& e : entries) by_name[e.name] = e.value;
  const auto params = all_params();
  train::restore_adam_state(*opt_, params, "opt/", by_name, meta.at("opt_steps"));
  train::set_lr(*opt_, meta.at("lr").get<double>());
  step_ = meta.at("step").get<std::int64_t>();
  history_.clear();
  for (const auto& h : meta.at("history")) {
    IterationLosses r;
    r.o_intra1 = h[0];
    r.o_intra2 = h[1];
    r.o_inter = h[2];
    r.o_ow = h[3];
    r.o_super1 = h[4];
    r.o_super2 = h[5];
    r.lambda_intra = h[6];
    r.lr = h[7];
    history_.push_back(r);
  }
}

// ---------------------------------------------------------------------------
// Inference

HdcModel HdcModel::load(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw ValidationError("missing checkpoint: " + checkpoint.string());
  const auto [meta, entries] = nn::load_archive(checkpoint);
  if (meta.at("kind") != "hdc-state") throw ValidationError("not an HDC checkpoint: " + checkpoint.string());
  const auto desc = meta.at("s1").at("descriptor").get<nn::DualNetDescriptor>();
  HdcModel m;
  m.s1 = std::make_shared<nn::DualNet>(desc);
  nn::restore_network(*m.s1, meta.at("s1"), entries, "s1/");
  if (meta.contains("s2")) {
    m.s2 = std::make_shared<nn::DualNet>(meta.at("s2").at("descriptor").get<nn::DualNetDescriptor>());
    nn::restore_network(*m.s2, meta.at("s2"), entries, "s2/");
  }
  m.d1_domain = meta.at("d1_domain").get<std::string>();
  m.d2_domain = meta.at("d2_domain").get<std::string>();
  return m;
}

Which parse_which(std::string_view s) {
  if (s == "auto") return Which::Auto;
  if (s == "s1") return Which::S1;
  if (s == "s2") return Which::S2;
  throw ValidationError("unknown net choice: " + std::string(s));
}

Prediction predict(const HdcModel& model, const Sample& sample, Which which) {
  if (which == Which::Auto) {
    if (sample.domain == model.d1_domain || sample.domain == bai::kTag2t1) {
      which = Which::S1;
    } else if (sample.domain == model.d2_domain || sample.domain == bai::kTag1t2) {
      which = Which::S2;
    } else {
      throw ValidationError("unknown domain tag '" + sample.domain + "' for automatic net selection");
    }
  }
  nn::DualNet& net = (which == Which::S2 && model.s2) ? *model.s2 : *model.s1;
  torch::NoGradGuard no_grad;
  Prediction p;
  p.probability = net.predict_local(nn::to_tensor(sample.image))[0][0];
  p.mask = nn::threshold(p.probability, 0.5, sample.image.spacing());
  return p;
}

metrics::MetricReport evaluate(const HdcModel& model, const DomainDataset& dataset, Which which) {
  return metrics::evaluate_dataset([&](const Sample& s) { return predict(model, s, which).mask; }, dataset);
}

// ---------------------------------------------------------------------------
// Feature correlation

std::vector<std::string> feature_layer_names(const nn::MappingNetDescriptor& d) {
  std::vector<std::string> names;
  for (int l = 0; l <= d.levels; ++l) names.push_back("down" + std::to_string(l));
  for (int l = d.levels; l >= 1; --l) names.push_back("up" + std::to_string(l));
  names.push_back("out");
  return names;
}

std::vector<metrics::LayerCorrelation> correlate_activations(std::span<const Tensor> a, std::span<const Tensor> b,
                                                             std::span<const std::string> names, bool per_channel) {
  if (a.size() != b.size() || a.size() != names.size() || a.empty()) {
    throw ValidationError("feature correlation needs matching, non-empty layer lists");
  }
  const auto corr = [&](const Tensor& x, const Tensor& y, const std::string& layer) {
    const Tensor cx = x.detach().to(torch::kFloat32).contiguous();
    const Tensor cy = y.detach().to(torch::kFloat32).contiguous();
    bool degenerate = false;
    const double r = metrics::abs_pearson(std::span<const float>(cx.data_ptr<float>(), cx.numel()),
                                          std::span<const float>(cy.data_ptr<float>(), cy.numel()), &degenerate);
    if (degenerate) warn("feature correlation: zero-variance activations in layer " + layer + " reported as 0");
    return r;
  };
  std::vector<metrics::LayerCorrelation> out;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].sizes() != b[i].sizes()) throw ValidationError("activation shapes differ in layer " + names[i]);
    double r = 0.0;
    if (per_channel) {
      const auto ch = a[i].size(1);
      for (std::int64_t c = 0; c < ch; ++c) r += corr(a[i].select(1, c), b[i].select(1, c), names[i]);
      r /= static_cast<double>(ch);
    } else {
      r = corr(a[i], b[i], names[i]);
    }
    out.push_back({names[i], r});
    sum += r;
  }
  out.push_back({"mean", sum / static_cast<double>(a.size())});
  return out;
}

std::vector<metrics::LayerCorrelation> feature_correlation(nn::DualNet& s1, nn::DualNet& s2, const Tensor& probe,
                                                           bool per_channel) {
  if (s1.descriptor().feature != s2.descriptor().feature) {
    throw ValidationError("feature correlation needs identical feature-extractor descriptors");
  }
  torch::NoGradGuard no_grad;
  std::vector<Tensor> a, b;
  s1.forward(probe, &a);
  s2.forward(probe, &b);
  const auto names = feature_layer_names(s1.descriptor().feature);
  return correlate_activations(a, b, names, per_channel);
}

}  // namespace ahdc::hdc
