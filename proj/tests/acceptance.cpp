// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
// stderr. AHDC_ACCEPT_ONLY=1,4,7 restricts the run to the listed criteria.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "ahdc/bai.hpp"
#include "ahdc/format.hpp"
#include "ahdc/hdc.hpp"
#include "ahdc/losses.hpp"
#include "ahdc/metrics.hpp"
#include "ahdc/nets.hpp"
#include "ahdc/rng.hpp"
#include "ahdc/synthgen.hpp"
#include "doubles.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ahdc;
using ahdc::testing::TempDir;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void progress(const std::string& s) { std::cerr << "  .. " << s << std::endl; }

// ---------------------------------------------------------------------------
// 1. Loss closed forms

Outcome loss_exactness() {
  using namespace loss;
  const auto t0 = Clock::now();
  const double ln2 = std::numbers::ln2;
  const auto v = [](const torch::Tensor& t) { return t.item<double>(); };
  const auto full = [](double x) { return torch::full({1, 1, 4, 4}, x, torch::kFloat64); };
  const auto hard = [](std::initializer_list<int> on) {
    auto t = torch::zeros({16}, torch::kFloat64);
    for (const int i : on) t[i] = 1.0;
    return t.reshape({1, 1, 4, 4});
  };
  const auto e = torch::eye(2, torch::kFloat64).reshape({2, 2, 1, 1});
  const std::vector<torch::Tensor> e12 = {e};
  const auto ident = [](double x) { return torch::full({}, x, torch::kFloat64); };
  const auto p4 = hard({0, 1, 2, 3}), q4 = hard({8, 9, 10, 11}), r4 = hard({2, 3, 4, 5});
  const auto checker = (torch::arange(16, torch::kFloat64).remainder(2)).reshape({1, 1, 4, 4});

  struct Case {
    const char* name;
    double got;
    double want;
  };
  const double eps = kDiceEps;
  std::vector<Case> cases = {
      {"ramp f(0)", ramp_weight(0, 100), std::exp(-5.0)},
      {"ramp f(t_max)", ramp_weight(100, 100), 1.0},
      {"ramp f(t_max/2)", ramp_weight(50, 100), std::exp(-1.25)},
      {"dice disjoint", v(dice_loss(p4, q4)), 1.0 - eps / (8.0 + eps)},
      {"dice overlap 2", v(dice_loss(p4, r4)), 1.0 - (4.0 + eps) / (8.0 + eps)},
      {"ce at 0.5", v(soft_cross_entropy(full(0.5), full(0.5))), ln2},
      {"ce clamp", v(soft_cross_entropy(full(1.0), full(1e-7))), -std::log(1e-7)},
      {"disc equilibrium", v(adversarial_losses(torch::full({4}, 0.5, torch::kFloat64), torch::full({4}, 0.5, torch::kFloat64)).disc),
       2 * ln2},
      {"disc + gen at 0.5",
       v(adversarial_losses(torch::full({4}, 0.5, torch::kFloat64), torch::full({4}, 0.5, torch::kFloat64)).disc +
         adversarial_losses(torch::full({4}, 0.5, torch::kFloat64), torch::full({4}, 0.5, torch::kFloat64)).gen),
       4 * ln2},
      {"mae identical", v(reconstruction_loss(p4, p4)), 0.0},
      {"mae 0 vs 1", v(reconstruction_loss(full(0.0), full(1.0))), 1.0},
      {"mae checkerboard", v(reconstruction_loss(checker, full(0.5))), 0.5},
      {"bai_total plug-in", v(bai_total(ident(1.0), ident(0.5), ident(0.5), ident(0.0), ident(0.0))), 2.0},
      {"intra complementary", v(intra_consistency(p4, 1.0 - p4)), 1.0 - eps / (16.0 + eps)},
      {"inter at 0.5", v(inter_consistency(full(0.5), full(0.5), full(0.5), full(0.5))), 2 * ln2},
      {"ow K=2", v(orthogonal_weight_penalty(e12, e12)), 0.5},
      {"hdc_total defaults", v(hdc_total({ident(1), ident(1), ident(1), ident(1), ident(1), ident(1)}, LossWeights{}, 1.0)),
       4.1},
  };
  // Stationary point of the uncertainty weighting: s_d = log L_adv.
  {
    auto sd = torch::full({}, std::log(0.7), torch::kFloat64).requires_grad_(true);
    bai_total(ident(0.7), ident(0.2), ident(0.3), sd, ident(0.0)).backward();
    cases.push_back({"d total / d s_d at log L", sd.grad().item<double>(), 0.0});
  }
  std::vector<std::string> bounds;
  const auto ones = torch::ones({1, 1, 10, 10}, torch::kFloat64);
  if (v(dice_loss(ones, ones)) > 1e-7) bounds.push_back("dice identical");
  if (v(soft_cross_entropy(p4, p4)) > 1.2e-6) bounds.push_back("ce hard match");
  if (v(inter_consistency(p4, p4, p4, p4)) > 1.2e-6) bounds.push_back("inter hard match");
  if (v(supervised_loss(p4, p4, p4)) > 3e-6) bounds.push_back("supervised exact");
  if (v(supervised_loss(1 - p4, 1 - p4, p4)) < 2 * (16.1 + 0.999)) bounds.push_back("supervised worst");

  double worst = 0;
  std::string worst_name;
  for (const auto& c : cases) {
    const double err = std::abs(c.got - c.want);
    if (err > worst) worst = err, worst_name = c.name;
  }
  const double dt = seconds_since(t0);
  Outcome o;
  o.pass = worst <= 1e-6 && bounds.empty() && dt < 1.0;
  o.detail = std::to_string(cases.size()) + " closed forms, max abs error " + num(worst, 3) +
             (worst_name.empty() ? "" : " (" + worst_name + ")") + ", bound failures " + std::to_string(bounds.size()) +
             ", " + num(dt, 3) + " s (limits 1e-6, 1 s)";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Gradient suite

double input_gradient_error(const std::function<torch::Tensor()>& f, std::vector<torch::Tensor> inputs) {
  for (auto& x : inputs) {
    x.requires_grad_(true);
    if (x.grad().defined()) x.grad().zero_();
  }
  f().backward();
  double worst = 0;
  for (auto& x : inputs) {
    const auto analytic = x.grad().reshape({-1}).clone();
    const auto numeric = testing::numeric_gradient([&] { torch::NoGradGuard ng; return f().item<double>(); }, x.detach(), 1e-4);
    worst = std::max(worst, testing::relative_error(analytic, numeric));
  }
  return worst;
}

Outcome gradient_suite() {
  using namespace loss;
  const auto t0 = Clock::now();
  torch::manual_seed(123);
  const auto prob = [](std::vector<std::int64_t> s) { return torch::rand(s, torch::kFloat64) * 0.9 + 0.05; };
  const std::vector<std::int64_t> s = {2, 1, 8, 8};
  const auto p = prob(s), q = prob(s), y = (torch::rand(s, torch::kFloat64) > 0.5).to(torch::kFloat64);
  const auto a = prob({4}), b = prob({4});
  const auto adv = prob({}), r1 = prob({}), r2 = prob({});
  const auto sd = torch::randn({}, torch::kFloat64), sr = torch::randn({}, torch::kFloat64);
  const auto l1 = prob(s), g1 = prob(s), l2 = prob(s), g2 = prob(s);
  const auto tl1 = l1.clone(), tg1 = g1.clone(), tl2 = l2.clone(), tg2 = g2.clone();
  const auto w1 = torch::randn({3, 2, 3, 3}, torch::kFloat64), w2 = torch::randn({3, 2, 3, 3}, torch::kFloat64);
  const auto parts = std::vector<torch::Tensor>{prob({}), prob({}), prob({}), prob({}), prob({}), prob({})};

  std::map<std::string, double> err;
  err["dice_loss"] = input_gradient_error([&] { return dice_loss(p, q); }, {p, q});
  err["soft_cross_entropy"] = input_gradient_error([&] { return soft_cross_entropy(q, p); }, {p, q});
  err["adversarial_losses"] = std::max(input_gradient_error([&] { return adversarial_losses(a, b).disc; }, {a, b}),
                                       input_gradient_error([&] { return adversarial_losses(a, b).gen; }, {a, b}));
  err["reconstruction_loss"] = input_gradient_error([&] { return reconstruction_loss(p, q); }, {p, q});
  err["bai_total"] = input_gradient_error([&] { return bai_total(adv, r1, r2, sd, sr); }, {adv, r1, r2, sd, sr});
  err["intra_consistency"] = input_gradient_error([&] { return intra_consistency(p, q); }, {p, q});
  {
    // Detached targets: probe the predictions with the targets held fixed,
    // then confirm the operation's own gradient equals that reference.
    const auto fixed = [&] {
      return 0.5 * (soft_cross_entropy(tl2, l1) + soft_cross_entropy(tl1, l2)) +
             0.5 * (soft_cross_entropy(tg2, g1) + soft_cross_entropy(tg1, g2));
    };
    double e1 = input_gradient_error(fixed, {l1, g1, l2, g2});
    for (auto* t : {&l1, &g1, &l2, &g2}) t->grad().zero_();
    inter_consistency(l1, g1, l2, g2).backward();
    std::vector<torch::Tensor> via_op;
    for (auto* t : {&l1, &g1, &l2, &g2}) via_op.push_back(t->grad().clone()), t->grad().zero_();
    fixed().backward();
    int k = 0;
    for (auto* t : {&l1, &g1, &l2, &g2}) e1 = std::max(e1, testing::relative_error(via_op[k++], t->grad()));
    err["inter_consistency"] = e1;
  }
  err["orthogonal_weight_penalty"] = input_gradient_error(
      [&] {
        const std::vector<torch::Tensor> x = {w1}, z = {w2};
        return orthogonal_weight_penalty(x, z);
      },
      {w1, w2});
  err["supervised_loss"] = input_gradient_error([&] { return supervised_loss(p, q, y); }, {p, q});
  err["hdc_total"] = input_gradient_error(
      [&] { return hdc_total({parts[0], parts[1], parts[2], parts[3], parts[4], parts[5]}, LossWeights{}, 0.3); }, parts);

  // Both forward passes: mapping network and dual network (each branch),
  // with respect to parameters and input. Probes whose step crosses a ReLU
  // switch are rechecked at step/100; their count is reported.
  testing::GradientCheck nets;
  {
    nn::MappingNetDescriptor d;
    d.levels = 2;
    d.base_channels = 2;
    d.max_channels = 4;
    nn::MappingNet g(d);
    nn::initialize(g, 21);
    g.to(torch::kFloat64);
    const auto x = torch::rand({2, 1, 8, 8}, torch::kFloat64);
    testing::GradientCheck c = testing::network_gradient_check(g, [&] { return g.forward(x).mean(); }, 1e-4);
    c.merge(testing::input_gradient_check([&](const torch::Tensor& in) { return g.forward(in).pow(2).mean(); }, x, 1e-4),
            "input");
    err["forward_mapping"] = c.error;
    nets.merge(c, "forward_mapping");
  }
  {
    nn::DualNetDescriptor d;
    d.feature.levels = 2;
    d.feature.base_channels = 2;
    d.feature.max_channels = 4;
    d.feature.out_channels = 2;
    d.patch_size = 4;
    d.attention_blocks = 1;
    d.heads = 2;
    nn::DualNet net(d);
    nn::initialize(net, 22);
    net.to(torch::kFloat64);
    const auto x = torch::rand({2, 1, 8, 8}, torch::kFloat64);
    testing::GradientCheck c;
    for (const bool global : {false, true}) {
      c.merge(testing::network_gradient_check(
                  net,
                  [&] {
                    const auto o = net.forward(x);
                    return global ? o.global.mean() : o.local.mean();
                  },
                  1e-4),
              global ? "global" : "local");
    }
    c.merge(testing::input_gradient_check(
                [&](const torch::Tensor& in) {
                  const auto o = net.forward(in);
                  return (o.local * o.global).sum();
                },
                x, 1e-4),
            "input");
    err["forward_dual"] = c.error;
    nets.merge(c, "forward_dual");
  }

  double worst = 0;
  std::string worst_name;
  for (const auto& [k, e] : err) {
    if (!(e <= worst)) worst = e, worst_name = k;
  }
  const double dt = seconds_since(t0);
  Outcome o;
  o.pass = worst < 1e-5 && dt < 120.0;
  o.detail = std::to_string(err.size() - 2) + " loss operations + 2 forward passes, max relative error " + num(worst, 3) +
             " (" + worst_name + "), " + std::to_string(nets.straddling) + " of " + std::to_string(nets.probes) +
             " network probes rechecked at step 1e-6 (ReLU switch inside the step), " + num(dt, 3) +
             " s (limits 1e-5, 120 s)";
  return o;
}

// ---------------------------------------------------------------------------
// 3. Metric oracles

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.02, 0.7);
  int compared = 0, dsc_mismatch = 0, ji_mismatch = 0, identity_mismatch = 0;
  double asd_worst = 0;
  for (int i = 0; i < 500; ++i) {
    const auto a = testing::random_mask(rng, 16, 16, u(rng));
    const auto b = testing::random_mask(rng, 16, 16, u(rng));
    if (a.count() + b.count() == 0) continue;
    ++compared;
    const double d = metrics::dsc(a, b), j = metrics::jaccard(a, b);
    dsc_mismatch += d != oracle::dsc(a, b);
    ji_mismatch += j != oracle::jaccard(a, b);
        // JI = I/U and DSC/(2-DSC) = I/(S-I): the identity is exact iff U = S - I
    // on the counts; the two float evaluations agree to rounding.
    const auto c = oracle::set_counts(a, b);
    const std::size_t sum = c.a + c.b;
    const bool counts_ok = c.uni == sum - c.inter;
    const bool float_ok = std::abs(j - d / (2.0 - d)) <= 4 * std::numeric_limits<double>::epsilon();
    identity_mismatch += !(counts_ok && float_ok);
    if (a.count() > 0 && b.count() > 0) {
      const Spacing s{1.0f + 0.25f * (i % 3), 1.0f + 0.5f * (i % 2)};
      asd_worst = std::max(asd_worst, std::abs(metrics::asd(a, b, s) - oracle::asd(a, b, s.dy, s.dx)));
    }
  }
  const double dt = seconds_since(t0);
  Outcome o;
  o.pass = compared > 0 && dsc_mismatch == 0 && ji_mismatch == 0 && identity_mismatch == 0 && asd_worst <= 1e-9 && dt < 60;
  o.detail = std::to_string(compared) + " mask pairs: DSC mismatches " + std::to_string(dsc_mismatch) + ", JI mismatches " +
             std::to_string(ji_mismatch) + ", JI identity failures " + std::to_string(identity_mismatch) +
             ", max ASD deviation " + num(asd_worst, 3) + ", " + num(dt, 3) + " s (limits exact, exact, exact, 1e-9, 60 s)";
  return o;
}

// ---------------------------------------------------------------------------
// 4. Set algebra of the matched domains

Outcome set_algebra() {
  const auto d1 = testing::toy_domain("a", "A", 20, 79, 0, 8, 1);
  const auto d2 = testing::toy_domain("b", "B", 0, 91, 0, 8, 2);
  testing::IdentityMapper id;
  const auto m = bai::build_matched_domains(d1, d2, id, id);
  const auto c1 = m.d_p1.counts(), c2 = m.d_p2.counts();
  std::set<std::string> s1, s2;
  for (const auto& p : m.pairing) s1.insert(p.id_p1), s2.insert(p.id_p2);
  const bool bijective = s1.size() == m.pairing.size() && s2.size() == m.pairing.size() &&
                         s1.size() == m.d_p1.samples().size() && s2.size() == m.d_p2.samples().size();
  Outcome o;
  o.pass = c1.unlabelled == 170 && c2.unlabelled == 170 && c1.labelled == 20 && c2.labelled == 20 && bijective;
  o.detail = "|Dp1u|=" + std::to_string(c1.unlabelled) + " |Dp2u|=" + std::to_string(c2.unlabelled) +
             " |Dp1l|=" + std::to_string(c1.labelled) + " |Dp2l|=" + std::to_string(c2.labelled) +
             ", pairing " + (bijective ? "bijective" : "NOT bijective") + " (expected 170/170/20/20)";
  return o;
}

// ---------------------------------------------------------------------------
// 5. Architecture contracts

Outcome architecture() {
  torch::NoGradGuard ng;
  nn::Discriminator t;
  nn::initialize(t, 31);
  const auto side = [&](int n) { return t.forward(torch::rand({1, 2, n, n})).size(2); };
  const auto s256 = side(256), s64 = side(64);

  nn::DualNetDescriptor d;
  d.feature.levels = 3;
  d.feature.base_channels = 4;
  d.feature.max_channels = 16;
  d.feature.out_channels = 4;
  d.patch_size = 8;
  d.attention_blocks = 2;
  d.heads = 2;
  nn::DualNet net(d);
  nn::initialize(net, 32);
  const auto out = net.forward(torch::rand({2, 1, 64, 64}));
  const bool shapes = out.local.sizes() == out.global.sizes() && out.local.size(2) == 64;

  auto dz = d;
  dz.positional_encoding = false;
  nn::DualNet plain(dz);
  nn::initialize(plain, 33);
  torch::manual_seed(34);
  const auto seq = torch::randn({2, 64, dz.model_dim()});
  double dev = 0;
  for (int k = 0; k < 5; ++k) {
    const auto perm = torch::randperm(64, torch::kInt64);
    const auto a = plain.global_branch()->encode(seq).index_select(1, perm);
    const auto b = plain.global_branch()->encode(seq.index_select(1, perm));
    dev = std::max(dev, (a - b).abs().max().item<double>());
  }
  Outcome o;
  o.pass = s256 == 8 && s64 == 2 && shapes && dev < 1e-5;
  o.detail = "score map 256->" + std::to_string(s256) + ", 64->" + std::to_string(s64) + "; local/global shapes " +
             (shapes ? "equal" : "DIFFER") + "; permutation deviation " + num(dev, 3) + " (limit 1e-5)";
  return o;
}

// ---------------------------------------------------------------------------
// 6-8. Desk-scale training trends

constexpr std::array<double, 3> kRatios = {0.05, 0.10, 0.20};
constexpr std::array<std::uint64_t, 3> kSeeds = {1, 2, 3};

synth::SynthConfig trend_synth(std::uint64_t seed, double ratio) {
  synth::SynthConfig c;
  c.image_size = 64;
  c.n_a = 200;
  c.n_b = 200;
  c.n_test_a = 40;
  c.n_test_b = 40;
  c.n_oracle_pairs = 32;
  c.label_ratio = ratio;
  c.appearance_a.distractors = 3;
  c.appearance_b.distractors = 3;
  c.seed = seed;
  return c;
}

bai::BaiConfig trend_bai(std::uint64_t seed) {
  bai::BaiConfig c;
  c.mapping.levels = 3;
  c.mapping.base_channels = 8;
  c.mapping.max_channels = 32;
  c.batch = 4;
  c.epochs = 20;  // 50 steps per epoch
  c.max_steps = 1000;
  c.seed = derive_seed(seed, "bai");
  return c;
}

hdc::HdcConfig trend_hdc(std::uint64_t seed) {
  hdc::HdcConfig c;
  c.net.feature.levels = 3;
  c.net.feature.base_channels = 4;
  c.net.feature.max_channels = 32;
  c.net.feature.out_channels = 4;
  c.net.patch_size = 8;
  c.net.attention_blocks = 1;
  c.net.heads = 2;
  c.epochs = 6;
  c.batch_unlabelled = 4;
  c.batch_labelled = 2;
  c.seed = derive_seed(seed, "hdc");
  return c;
}

struct HdcRun {
  double dsc = 0;
  double featcorr = -1;
};

HdcRun run_hdc(const hdc::HdcConfig& cfg, const bai::MatchedDomains& m, const DomainDataset& test_domain) {
  hdc::HdcTrainer t(cfg, m);
  t.train();
  const hdc::HdcModel model{t.s1_ptr(), t.s2_ptr(), t.d1_domain(), t.d2_domain()};
  HdcRun r;
  r.dsc = hdc::evaluate(model, test_domain, hdc::Which::Auto).dsc.mean;
  if (t.s2()) {
    const auto test = test_domain.subset({Split::Test});
    std::vector<const TensorImage*> probe;
    for (std::size_t i = 0; i < std::min<std::size_t>(8, test.samples().size()); ++i) probe.push_back(&test.samples()[i].image);
    const auto x = nn::to_tensor(std::span<const TensorImage* const>(probe));
    r.featcorr = hdc::feature_correlation(t.s1(), *t.s2(), x).back().abs_pearson;
  }
  return r;
}

struct TrendResults {
  std::vector<double> cycle_ratio, oracle_mae, identity_mae, bai_seconds;
  std::map<double, std::vector<double>> ahdc, base;
  std::vector<double> corr_ow, corr_no_ow, dsc_ow, dsc_no_ow;
  double trend_seconds = 0;  // everything criterion 7 needs (BAI + 18 HDC runs)
};

TrendResults run_trends(bool need_hdc, bool need_ow) {
  TrendResults r;
  for (const auto seed : kSeeds) {
    const auto data0 = synth::gen_dataset(trend_synth(seed, kRatios[0]));
    auto t0 = Clock::now();
    bai::BaiTrainer bt(trend_bai(seed));
    const auto eval = [&] {
      return bai::evaluate_adaptation(bt.g1(), bt.g2(), data0.domain_a, data0.domain_b, bt.g1(), &data0.oracle_a,
                                      &data0.oracle_b, data0.pairs);
    };
    const auto before = eval();
    bt.train(data0.domain_a, data0.domain_b);
    const auto after = eval();
    const double bai_s = seconds_since(t0);
    r.bai_seconds.push_back(bai_s);
    r.trend_seconds += bai_s;
    r.cycle_ratio.push_back(after.cycle_mae / before.cycle_mae);
    r.oracle_mae.push_back(after.oracle_mae);
    r.identity_mae.push_back(after.identity_mae);
    progress("seed " + std::to_string(seed) + " BAI: cycle " + num(before.cycle_mae) + " -> " + num(after.cycle_mae) +
             ", oracle MAE " + num(after.oracle_mae) + " vs identity " + num(after.identity_mae) + ", " + num(bai_s, 3) +
             " s");
    if (!need_hdc && !need_ow) continue;

    for (const double ratio : kRatios) {
      if (!need_hdc && ratio != kRatios[0]) continue;
      // The split depends on the ratio, the images do not; the mappers carry over.
      const auto data = synth::gen_dataset(trend_synth(seed, ratio));
      t0 = Clock::now();
      const auto m = bai::build_matched_domains(data.domain_a, data.domain_b, bt.g1(), bt.g2());
      auto cfg = trend_hdc(seed);
      const auto ahdc_run = run_hdc(cfg, m, data.domain_a);
      auto base_cfg = cfg;
      base_cfg.ablation.supervised_only = true;
      base_cfg.ablation.single_net = true;
      const auto base_run = need_hdc ? run_hdc(base_cfg, m, data.domain_a) : HdcRun{};
      r.trend_seconds += seconds_since(t0);
      r.ahdc[ratio].push_back(ahdc_run.dsc);
      r.base[ratio].push_back(base_run.dsc);
      progress("seed " + std::to_string(seed) + " ratio " + num(ratio, 2) + ": AHDC " + num(ahdc_run.dsc) + ", baseline " +
               num(base_run.dsc) + ", featcorr " + num(ahdc_run.featcorr));
      if (need_ow && ratio == kRatios[0]) {
        auto no_ow = cfg;
        no_ow.weights.lambda_ow = 0.0;
        const auto z = run_hdc(no_ow, m, data.domain_a);
        r.corr_ow.push_back(ahdc_run.featcorr);
        r.dsc_ow.push_back(ahdc_run.dsc);
        r.corr_no_ow.push_back(z.featcorr);
        r.dsc_no_ow.push_back(z.dsc);
        progress("seed " + std::to_string(seed) + " lambda_ow 0: DSC " + num(z.dsc) + ", featcorr " + num(z.featcorr));
      }
    }
  }
  return r;
}

Outcome bai_criterion(const TrendResults& r) {
  const double ratio = median(r.cycle_ratio);
  const double oracle = median(r.oracle_mae), identity = median(r.identity_mae);
  const double slowest = *std::max_element(r.bai_seconds.begin(), r.bai_seconds.end());
  const auto steps = trend_bai(0).max_steps;
  Outcome o;
  o.pass = ratio < 0.25 && oracle < identity && slowest <= 1800 && steps <= 3000;
  o.detail = "median cycle MAE final/initial " + num(ratio) + " (limit 0.25); median oracle MAE " + num(oracle) +
             " vs untransformed " + num(identity) + "; " + std::to_string(steps) + " steps, slowest seed " +
             num(slowest, 3) + " s (limits 3000 steps, 1800 s)";
  return o;
}

Outcome semi_supervised_criterion(const TrendResults& r) {
  Outcome o;
  o.pass = r.trend_seconds <= 7200;
  std::string parts;
  for (const double ratio : kRatios) {
    const double a = median(r.ahdc.at(ratio)), b = median(r.base.at(ratio));
    const bool ok = ratio == kRatios[0] ? a >= b + 0.01 : a >= b;
    o.pass = o.pass && ok;
    parts += (parts.empty() ? "" : "; ") + num(100 * ratio, 2) + "%: AHDC " + num(a) + " vs baseline " + num(b);
  }
  o.detail = "median test DSC " + parts + "; " + num(r.trend_seconds, 4) + " s (need >= baseline, +0.01 at 5%, <= 7200 s)";
  return o;
}

Outcome orthogonality_criterion(const TrendResults& r) {
  const double c_ow = median(r.corr_ow), c_no = median(r.corr_no_ow);
  const double d_ow = median(r.dsc_ow), d_no = median(r.dsc_no_ow);
  Outcome o;
  o.pass = c_ow < c_no && d_ow >= d_no - 0.01;
  o.detail = "median feature correlation " + num(c_ow) + " (lambda_ow 0.1) vs " + num(c_no) + " (0); DSC " + num(d_ow) +
             " vs " + num(d_no) + " (need lower correlation, DSC within 0.01)";
  return o;
}

// ---------------------------------------------------------------------------
// 9-10. End-to-end runs through the CLI

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = std::string("AHDC_QUIET=1 ") + AHDC_CLI_PATH + " " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return -1;
  std::string out;
  std::array<char, 4096> buf{};
  while (const auto n = std::fread(buf.data(), 1, buf.size(), p)) out.append(buf.data(), n);
  const int status = ::pclose(p);
  if (output) *output = out;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome ablations() {
  TempDir dir("ahdc_accept");
  std::string detail;
  bool pass = true;
  for (const char* flag : {"--single-net", "--no-global-branch", "--no-skip-connections", "--no-reconstruction"}) {
    const auto out = dir / (std::string(flag).substr(2));
    std::string log;
    const int code = run_cli(std::string("--config ") + AHDC_SMOKE_CONFIG + " --out " + out.string() + " " + flag + " all", &log);
    const bool ok = code == 0 && std::filesystem::exists(out / "eval" / "report.csv") &&
                    std::filesystem::exists(out / "eval" / "summary.json");
    if (!ok) std::cerr << log;
    pass = pass && ok;
    detail += (detail.empty() ? "" : ", ") + std::string(flag) + (ok ? " ok" : " FAILED (exit " + std::to_string(code) + ")");
  }
  return {pass, detail};
}

std::map<std::string, std::string> collect_outputs(const std::filesystem::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    const bool wanted = name == "summary.json" || (e.path().extension() == ".csv" && name.find("loss") != std::string::npos);
    if (!wanted) continue;
    std::ifstream is(e.path(), std::ios::binary);
    files[std::filesystem::relative(e.path(), root).string()] = std::string(std::istreambuf_iterator<char>(is), {});
  }
  return files;
}

Outcome determinism() {
  TempDir dir("ahdc_accept");
  const auto a = dir / "a", b = dir / "b";
  for (const auto& out : {a, b}) {
    std::string log;
    if (run_cli(std::string("--config ") + AHDC_SMOKE_CONFIG + " --out " + out.string() + " all", &log) != 0) {
      std::cerr << log;
      return {false, "smoke run failed"};
    }
  }
  const auto fa = collect_outputs(a), fb = collect_outputs(b);
  int differing = 0;
  for (const auto& [k, v] : fa) differing += !fb.contains(k) || fb.at(k) != v;
  Outcome o;
  o.pass = !fa.empty() && fa.size() == fb.size() && differing == 0;
  o.detail = std::to_string(fa.size()) + " summary.json / loss CSV files compared, " + std::to_string(differing) +
             " differ (need byte-identical)";
  return o;
}

}  // namespace

int main() {
  torch::set_num_threads(1);
  std::set<int> only;
  if (const char* env = std::getenv("AHDC_ACCEPT_ONLY")) {
    std::stringstream ss(env);
    for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
  }
  const auto wanted = [&](int k) { return only.empty() || only.contains(k); };

  int failures = 0;
  const auto report = [&](int k, const std::string& name, const std::function<Outcome()>& run) {
    if (!wanted(k)) return;
    std::cerr << "criterion " << k << ": " << name << std::endl;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << k << ". " << name << ": " << o.detail << std::endl;
  };

  report(1, "loss-library exactness", loss_exactness);
  report(2, "gradient suite", gradient_suite);
  report(3, "metric oracle equivalence", metric_oracles);
  report(4, "matched-domain set algebra", set_algebra);
  report(5, "architecture contracts", architecture);

  if (wanted(6) || wanted(7) || wanted(8)) {
    std::optional<TrendResults> trends;
    std::string error;
    try {
      trends = run_trends(wanted(7), wanted(8));
    } catch (const std::exception& e) {
      error = e.what();
    }
    const auto from_trends = [&](const std::function<Outcome(const TrendResults&)>& f) {
      return [&, f]() -> Outcome {
        if (!trends) return {false, "training failed: " + error};
        return f(*trends);
      };
    };
    report(6, "BAI desk-scale adaptation", from_trends(bai_criterion));
    report(7, "semi-supervised trend", from_trends(semi_supervised_criterion));
    report(8, "orthogonality trend", from_trends(orthogonality_criterion));
  }

  report(9, "ablation executability", ablations);
  report(10, "determinism", determinism);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
