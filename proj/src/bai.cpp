#include "ahdc/bai.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "ahdc/errors.hpp"
#include "ahdc/format.hpp"
#include "ahdc/losses.hpp"
#include "ahdc/rng.hpp"
#include "ahdc/train_util.hpp"

namespace ahdc::bai {

namespace fs = std::filesystem;
using nlohmann::json;

void BaiConfig::validate() const {
  mapping.validate();
  if (mapping.in_channels != 1 || mapping.out_channels != 1) throw ValidationError("mapping nets are 1 -> 1 channel");
  if (epochs < 0) throw ValidationError("bai.epochs must be >= 0");
  if (batch < 1) throw ValidationError("bai.batch must be >= 1");
  if (!(lr_g > 0) || !(lr_d > 0)) throw ValidationError("bai learning rates must be positive");
  if (!(lr_decay > 0) || lr_decay > 1) throw ValidationError("bai.lr_decay must lie in (0, 1]");
  if (checkpoint_every < 0) throw ValidationError("bai.checkpoint_every must be >= 0");
  if (max_steps < 0) throw ValidationError("bai.max_steps must be >= 0");
}

void to_json(json& j, const BaiConfig& c) {
  j = json{{"mapping", c.mapping},       {"epochs", c.epochs},
           {"batch", c.batch},           {"lr_g", c.lr_g},
           {"lr_d", c.lr_d},             {"lr_decay", c.lr_decay},
           {"checkpoint_every", c.checkpoint_every}, {"max_steps", c.max_steps},
           {"reconstruction", c.reconstruction},     {"seed", c.seed}};
}

void from_json(const json& j, BaiConfig& c) {
  c.mapping = j.at("mapping").get<nn::MappingNetDescriptor>();
  c.epochs = j.at("epochs").get<int>();
  c.batch = j.at("batch").get<int>();
  c.lr_g = j.at("lr_g").get<double>();
  c.lr_d = j.at("lr_d").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.checkpoint_every = j.at("checkpoint_every").get<int>();
  c.max_steps = j.at("max_steps").get<std::int64_t>();
  c.reconstruction = j.at("reconstruction").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

void write_history_csv(const fs::path& path, std::span<const StepLosses> history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "step,disc_loss,gen_loss,rec1,rec2,s_d,s_r,lr\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    os << (i + 1) << ',' << fmt_real(h.disc_loss) << ',' << fmt_real(h.gen_loss) << ',' << fmt_real(h.rec1) << ','
       << fmt_real(h.rec2) << ',' << fmt_real(h.s_d) << ',' << fmt_real(h.s_r) << ',' << fmt_real(h.lr) << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Trainer

BaiTrainer::BaiTrainer(const BaiConfig& config) : config_(config) {
  config_.validate();
  auto g1 = std::make_shared<nn::MappingNet>(config_.mapping);
  auto g2 = std::make_shared<nn::MappingNet>(config_.mapping);
  nn::initialize(*g1, derive_seed(config_.seed, "bai-g1"));
  nn::initialize(*g2, derive_seed(config_.seed, "bai-g2"));
  g1_ = g1;
  g2_ = g2;
  t_ = std::make_shared<nn::Discriminator>();
  nn::initialize(*t_, derive_seed(config_.seed, "bai-t"));
  build_optimizers();
}

BaiTrainer::BaiTrainer(const BaiConfig& config, std::shared_ptr<nn::Mapper> g1, std::shared_ptr<nn::Mapper> g2)
    : config_(config), g1_(std::move(g1)), g2_(std::move(g2)) {
  if (config_.epochs < 0 || config_.batch < 1) throw ValidationError("invalid bai config");
  t_ = std::make_shared<nn::Discriminator>();
  nn::initialize(*t_, derive_seed(config_.seed, "bai-t"));
  build_optimizers();
}

std::vector<Tensor> BaiTrainer::generator_params() const {
  std::vector<Tensor> out = g1_->parameters();
  for (const auto& p : g2_->parameters()) out.push_back(p);
  out.push_back(s_d_);
  out.push_back(s_r_);
  return out;
}

void BaiTrainer::build_optimizers() {
  s_d_ = torch::zeros({}, torch::kFloat32).requires_grad_(true);
  s_r_ = torch::zeros({}, torch::kFloat32).requires_grad_(true);
  opt_g_ = std::make_unique<torch::optim::Adam>(generator_params(), torch::optim::AdamOptions(config_.lr_g));
  opt_d_ = std::make_unique<torch::optim::Adam>(t_->parameters(), torch::optim::AdamOptions(config_.lr_d));
}

double BaiTrainer::generator_lr() const { return train::current_lr(*opt_g_); }

std::int64_t BaiTrainer::steps_per_epoch(std::size_t n1, std::size_t n2) const {
  const auto n = static_cast<std::int64_t>(std::max(n1, n2));
  return (n + config_.batch - 1) / config_.batch;
}

StepLosses BaiTrainer::step(const Tensor& x1, const Tensor& x2, std::span<const std::string> batch_ids) {
  if (x1.size(0) == 0 || x2.size(0) == 0) throw ValidationError("bai step needs non-empty batches");
  StepLosses out;

  // Discriminator: score (x1, G1(x1)) as real-side pairs and (G2(x2), x2) as the other side.
  {
    Tensor y1, y2;
    {
      torch::NoGradGuard no_grad;
      y1 = g1_->forward(x1);
      y2 = g2_->forward(x2);
    }
    const auto adv = loss::adversarial_losses(nn::Discriminator::score(t_->forward(torch::cat({x1, y1}, 1))),
                                              nn::Discriminator::score(t_->forward(torch::cat({y2, x2}, 1))));
    const Tensor loss_d = torch::exp(-s_d_.detach()) * adv.disc;
    out.disc_loss = adv.disc.item<double>();
    train::require_finite(out.disc_loss, "disc_loss", batch_ids);
    opt_d_->zero_grad();
    loss_d.backward();
    opt_d_->step();
  }

  // Generators and the uncertainty weights; T is held fixed.
  {
    for (auto& p : t_->parameters()) p.requires_grad_(false);
    const Tensor y1 = g1_->forward(x1);
    const Tensor y2 = g2_->forward(x2);
    const auto adv = loss::adversarial_losses(nn::Discriminator::score(t_->forward(torch::cat({x1, y1}, 1))),
                                              nn::Discriminator::score(t_->forward(torch::cat({y2, x2}, 1))));
    const Tensor rec1 = loss::reconstruction_loss(x1, g2_->forward(y1));
    const Tensor rec2 = loss::reconstruction_loss(x2, g1_->forward(y2));
    const Tensor total = config_.reconstruction ? loss::bai_total(adv.gen, rec1, rec2, s_d_, s_r_)
                                                : torch::exp(-s_d_) * adv.gen + s_d_;
    out.gen_loss = adv.gen.item<double>();
    out.rec1 = rec1.item<double>();
    out.rec2 = rec2.item<double>();
    train::require_finite(out.gen_loss, "gen_loss", batch_ids);
    train::require_finite(out.rec1, "rec1", batch_ids);
    train::require_finite(out.rec2, "rec2", batch_ids);
    train::require_finite(total.item<double>(), "bai_total", batch_ids);
    opt_g_->zero_grad();
    total.backward();
    opt_g_->step();
    for (auto& p : t_->parameters()) p.requires_grad_(true);
  }

  out.s_d = s_d_.item<double>();
  out.s_r = s_r_.item<double>();
  out.lr = generator_lr();
  ++step_;
  history_.push_back(out);
  return out;
}

void BaiTrainer::train(const DomainDataset& d1, const DomainDataset& d2, const fs::path& checkpoint_dir,
                       const EpochHook& on_epoch) {
  std::vector<const Sample*> s1, s2;
  for (const auto& s : d1.samples()) if (s.is_training()) s1.push_back(&s);
  for (const auto& s : d2.samples()) if (s.is_training()) s2.push_back(&s);
  if (s1.empty() || s2.empty()) throw ValidationError("bai training needs training samples in both domains");

  const std::int64_t spe = steps_per_epoch(s1.size(), s2.size());
  std::int64_t total = spe * config_.epochs;
  if (config_.max_steps > 0) total = std::min(total, config_.max_steps);
  const train::IndexStream order1(s1.size(), derive_seed(config_.seed, "bai-order-d1"));
  const train::IndexStream order2(s2.size(), derive_seed(config_.seed, "bai-order-d2"));

  const auto checkpoint = [&](const std::string& name) {
    if (checkpoint_dir.empty()) return;
    fs::create_directories(checkpoint_dir);
    save_checkpoint(checkpoint_dir / name);
  };
  if (step_ == 0) checkpoint("initial.ckpt");

  const auto b = static_cast<std::size_t>(config_.batch);
  std::vector<const TensorImage*> batch1(b), batch2(b);
  std::vector<std::string> ids(2 * b);
  while (step_ < total) {
    const std::int64_t epoch = step_ / spe;
    train::set_lr(*opt_g_, config_.lr_g * std::pow(config_.lr_decay, static_cast<double>(epoch)));
    for (std::size_t j = 0; j < b; ++j) {
      const auto pos = static_cast<std::uint64_t>(step_) * b + j;
      const Sample* a = s1[order1.at(pos)];
      const Sample* c = s2[order2.at(pos)];
      batch1[j] = &a->image;
      batch2[j] = &c->image;
      ids[j] = a->id;
      ids[b + j] = c->id;
    }
    step(nn::to_tensor(std::span<const TensorImage* const>(batch1)),
         nn::to_tensor(std::span<const TensorImage* const>(batch2)), ids);
    if (step_ % spe == 0) {
      const int done = static_cast<int>(step_ / spe);
      if (on_epoch) on_epoch(done);
      if (config_.checkpoint_every > 0 && done % config_.checkpoint_every == 0 && step_ < total) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", done);
        checkpoint(name);
      }
    }
  }
  // Learning rate the next epoch would start with, so a finished run reports
  // the decayed value.
  train::set_lr(*opt_g_, config_.lr_g * std::pow(config_.lr_decay, static_cast<double>(step_ / spe)));
  checkpoint("final.ckpt");
}

void BaiTrainer::save_checkpoint(const fs::path& path) const {
  std::vector<nn::NamedTensor> entries;
  const auto add_net = [&](const std::string& prefix, const nn::Network& net) {
    for (auto& t : nn::network_tensors(net)) entries.push_back({prefix + t.name, t.value});
  };
  add_net("g1/", *g1_);
  add_net("g2/", *g2_);
  add_net("t/", *t_);
  entries.push_back({"s_d", s_d_.reshape({1})});
  entries.push_back({"s_r", s_r_.reshape({1})});
  json steps_g, steps_d;
  const auto gp = generator_params();
  for (auto& e : train::adam_state(*opt_g_, gp, "opt_g/", steps_g)) entries.push_back(std::move(e));
  const auto dp = t_->parameters();
  for (auto& e : train::adam_state(*opt_d_, dp, "opt_d/", steps_d)) entries.push_back(std::move(e));

  json history = json::array();
  for (const auto& h : history_) history.push_back({h.disc_loss, h.gen_loss, h.rec1, h.rec2, h.s_d, h.s_r, h.lr});
  const auto net_meta = [](const nn::Network& n) { return json{{"kind", n.kind()}, {"descriptor", n.descriptor_json()}}; };
  const json meta = {{"kind", "bai-state"},
                     {"config", config_},
                     {"step", step_},
                     {"lr_g", generator_lr()},
                     {"g1", net_meta(*g1_)},
                     {"g2", net_meta(*g2_)},
                     {"t", net_meta(*t_)},
                     {"opt_g_steps", steps_g},
                     {"opt_d_steps", steps_d},
                     {"history", history}};
  nn::save_archive(path, meta, entries);
}

void BaiTrainer::load_checkpoint(const fs::path& path) {
  const auto [meta, entries] = nn::load_archive(path);
  if (meta.at("kind") != "bai-state") throw ValidationError("not a BAI checkpoint: " + path.string());
  nn::restore_network(*g1_, meta.at("g1"), entries, "g1/");
  nn::restore_network(*g2_, meta.at("g2"), entries, "g2/");
  nn::restore_network(*t_, meta.at("t"), entries, "t/");
  std::map<std::string, Tensor> by_name;
  for (const auto& e : entries) by_name[e.name] = e.value;
  {
    torch::NoGradGuard no_grad;
    s_d_.copy_(by_name.at("s_d").reshape({}));
    s_r_.copy_(by_name.at("s_r").reshape({}));
  }
  const auto gp = generator_params();
  train::restore_adam_state(*opt_g_, gp, "opt_g/", by_name, meta.at("opt_g_steps"));
  const auto dp = t_->parameters();
  train::restore_adam_state(*opt_d_, dp, "opt_d/", by_name, meta.at("opt_d_steps"));
  train::set_lr(*opt_g_, meta.at("lr_g").get<double>());
  step_ = meta.at("step").get<std::int64_t>();
  history_.clear();
  for (const auto& h : meta.at("history")) {
    history_.push_back({h[0].get<double>(), h[1].get<double>(), h[2].get<double>(), h[3].get<double>(),
                        h[4].get<double>(), h[5].get<double>(), h[6].get<double>()});
  }
}

// ---------------------------------------------------------------------------
// Adaptation and matched domains

DomainDataset adapt_domain(nn::Mapper& g, const DomainDataset& d, const std::string& tag, const std::string& name) {
  torch::NoGradGuard no_grad;
  std::vector<Sample> out;
  out.reserve(d.size());
  for (const auto& s : d.samples()) {
    const Tensor y = g.forward(nn::to_tensor(s.image));
    if (y.size(2) != s.image.height() || y.size(3) != s.image.width()) {
      throw ValidationError("mapping changed the shape of sample " + s.id);
    }
    Sample a;
    a.id = s.id + "_" + tag;
    a.image = nn::to_image(y[0], s.image.spacing());
    a.mask = s.mask;
    a.domain = tag;
    a.split = s.split;
    out.push_back(std::move(a));
  }
  return DomainDataset(name.empty() ? d.name() + "_" + tag : name, std::move(out));
}

std::string_view to_string(Origin o) { return o == Origin::FromD1 ? "from-D1" : "from-D2"; }

void MatchedDomains::validate() const {
  d_p1.validate();
  d_p2.validate();
  if (d_p1.size() != d_p2.size()) throw ValidationError("matched domains differ in size");
  if (pairing.size() != d_p1.size()) throw ValidationError("pairing does not cover the matched domains");
  std::set<std::string> seen1, seen2;
  for (std::size_t i = 0; i < pairing.size(); ++i) {
    const auto& p = pairing[i];
    const auto& a = d_p1.samples()[i];
    const auto& b = d_p2.samples()[i];
    if (a.id != p.id_p1 || b.id != p.id_p2) throw ValidationError("pairing entry " + std::to_string(i) + " is not index-aligned");
    if (!seen1.insert(p.id_p1).second || !seen2.insert(p.id_p2).second) throw ValidationError("pairing is not a bijection");
    if (a.split != b.split) throw ValidationError("paired samples differ in split: " + a.id + " / " + b.id);
    if (a.split == Split::TrainLabelled && *a.mask != *b.mask) {
      throw ValidationError("paired labelled samples carry different masks: " + a.id + " / " + b.id);
    }
  }
  if (d_p1.counts() != d_p2.counts()) throw ValidationError("matched domains differ in split counts");
}

void MatchedDomains::save(const fs::path& dir) const {
  save_dataset(dir / "d_p1", d_p1);
  save_dataset(dir / "d_p2", d_p2);
  json j = json::array();
  for (const auto& p : pairing) j.push_back({{"id_p1", p.id_p1}, {"id_p2", p.id_p2}, {"origin", to_string(p.origin)}});
  std::ofstream os(dir / "pairing.json", std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + (dir / "pairing.json").string());
  os << j.dump(2) << '\n';
}

MatchedDomains MatchedDomains::load(const fs::path& dir) {
  MatchedDomains m;
  m.d_p1 = load_manifest(dir / "d_p1" / "manifest.json");
  m.d_p2 = load_manifest(dir / "d_p2" / "manifest.json");
  std::ifstream is(dir / "pairing.json");
  if (!is) throw IoError("missing pairing file: " + (dir / "pairing.json").string());
  const json j = json::parse(is);
  for (const auto& e : j) {
    const auto origin = e.at("origin").get<std::string>();
    if (origin != "from-D1" && origin != "from-D2") throw ValidationError("unknown pairing origin: " + origin);
    m.pairing.push_back({e.at("id_p1").get<std::string>(), e.at("id_p2").get<std::string>(),
                         origin == "from-D1" ? Origin::FromD1 : Origin::FromD2});
  }
  m.validate();
  return m;
}

MatchedDomains build_matched_domains(const DomainDataset& d1, const DomainDataset& d2, nn::Mapper& g1,
                                     nn::Mapper& g2) {
  const DomainDataset t1 = d1.subset({Split::TrainLabelled, Split::TrainUnlabelled});
  const DomainDataset t2 = d2.subset({Split::TrainLabelled, Split::TrainUnlabelled});
  const DomainDataset a12 = adapt_domain(g1, t1, kTag1t2);
  const DomainDataset a21 = adapt_domain(g2, t2, kTag2t1);

  std::vector<Sample> p1(t1.samples());
  p1.insert(p1.end(), a21.samples().begin(), a21.samples().end());
  std::vector<Sample> p2(a12.samples());
  p2.insert(p2.end(), t2.samples().begin(), t2.samples().end());

  MatchedDomains m;
  for (std::size_t i = 0; i < t1.size(); ++i) m.pairing.push_back({t1.samples()[i].id, a12.samples()[i].id, Origin::FromD1});
  for (std::size_t i = 0; i < t2.size(); ++i) m.pairing.push_back({a21.samples()[i].id, t2.samples()[i].id, Origin::FromD2});
  m.d_p1 = DomainDataset("d_p1", std::move(p1));
  m.d_p2 = DomainDataset("d_p2", std::move(p2));
  m.validate();
  return m;
}

AdaptationEval evaluate_adaptation(nn::Mapper& g1, nn::Mapper& g2, const DomainDataset& d1, const DomainDataset& d2,
                                   nn::Mapper& a_to_b, const DomainDataset* oracle_a, const DomainDataset* oracle_b,
                                   std::span<const synth::OraclePair> pairs, std::size_t max_samples) {
  torch::NoGradGuard no_grad;
  const auto cycle = [&](const DomainDataset& d, nn::Mapper& there, nn::Mapper& back, double& sum, std::size_t& n) {
    for (const auto& s : d.samples()) {
      if (!s.is_training()) continue;
      if (n >= max_samples) break;
      const Tensor x = nn::to_tensor(s.image);
      sum += loss::reconstruction_loss(x, back.forward(there.forward(x))).item<double>();
      ++n;
    }
  };
  AdaptationEval out;
  double s1 = 0, s2 = 0;
  std::size_t n1 = 0, n2 = 0;
  cycle(d1, g1, g2, s1, n1);
  cycle(d2, g2, g1, s2, n2);
  if (n1 == 0 || n2 == 0) throw ValidationError("adaptation evaluation needs training samples in both domains");
  out.cycle_mae = 0.5 * (s1 / static_cast<double>(n1) + s2 / static_cast<double>(n2));

  if (oracle_a && oracle_b && !pairs.empty()) {
    double mapped = 0, identity = 0;
    for (const auto& p : pairs) {
      const Tensor xa = nn::to_tensor(oracle_a->find(p.a).image);
      const Tensor tb = nn::to_tensor(oracle_b->find(p.b).image);
      mapped += loss::reconstruction_loss(a_to_b.forward(xa), tb).item<double>();
      identity += loss::reconstruction_loss(xa, tb).item<double>();
    }
    out.oracle_mae = mapped / static_cast<double>(pairs.size());
    out.identity_mae = identity / static_cast<double>(pairs.size());
  }
  return out;
}

}  // namespace ahdc::bai
