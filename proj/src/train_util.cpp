#include "ahdc/train_util.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "ahdc/errors.hpp"
#include "ahdc/format.hpp"
#include "ahdc/rng.hpp"

namespace ahdc::train {

IndexStream::IndexStream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {
  if (n == 0) throw ValidationError("cannot draw samples from an empty set");
}

std::size_t IndexStream::at(std::uint64_t position) const {
  const std::uint64_t pass = position / n_;
  if (pass != cached_pass_) {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, "pass", pass));
    rng.shuffle(std::span<std::size_t>(perm_));
    cached_pass_ = pass;
  }
  return perm_[position % n_];
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

double current_lr(const torch::optim::Adam& opt) {
  return static_cast<const torch::optim::AdamOptions&>(opt.param_groups().front().options()).lr();
}

std::vector<nn::NamedTensor> adam_state(const torch::optim::Adam& opt, std::span<const Tensor> params,
                                        const std::string& prefix, nlohmann::json& steps) {
  std::vector<nn::NamedTensor> out;
  steps = nlohmann::json::object();
  const auto& state = opt.state();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto it = state.find(params[i].unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
    const std::string key = prefix + std::to_string(i);
    steps[std::to_string(i)] = s.step();
    out.push_back({key + "/exp_avg", s.exp_avg()});
    out.push_back({key + "/exp_avg_sq", s.exp_avg_sq()});
  }
  return out;
}

void restore_adam_state(torch::optim::Adam& opt, std::span<const Tensor> params, const std::string& prefix,
                        const std::map<std::string, Tensor>& entries, const nlohmann::json& steps) {
  auto& state = opt.state();
  state.clear();
  for (const auto& [index, step] : steps.items()) {
    const auto i = std::stoul(index);
    if (i >= params.size()) throw ValidationError("optimizer state refers to a missing parameter");
    const std::string key = prefix + index;
    const auto m = entries.find(key + "/exp_avg");
    const auto v = entries.find(key + "/exp_avg_sq");
    if (m == entries.end() || v == entries.end()) throw ValidationError("checkpoint lacks optimizer moments " + key);
    if (m->second.sizes() != params[i].sizes() || v->second.sizes() != params[i].sizes()) {
      throw ValidationError("optimizer moment shape mismatch for " + key);
    }
    auto s = std::make_unique<torch::optim::AdamParamState>();
    s->step(step.get<std::int64_t>());
    s->exp_avg(m->second.to(params[i].dtype()).clone());
    s->exp_avg_sq(v->second.to(params[i].dtype()).clone());
    state[params[i].unsafeGetTensorImpl()] = std::move(s);
  }
}

void require_finite(double v, const std::string& what, std::span<const std::string> batch_ids) {
  if (std::isfinite(v)) return;
  std::string ids;
  for (const auto& id : batch_ids) ids += (ids.empty() ? "" : ",") + id;
  throw NonFiniteError(what + " is not finite (" + fmt_real(v) + "); batch ids: [" + ids + "]");
}

Tensor rotate(const Tensor& batch, std::span<const double> angles_deg, bool nearest) {
  namespace F = torch::nn::functional;
  const auto b = batch.size(0);
  if (static_cast<std::int64_t>(angles_deg.size()) != b) throw ValidationError("rotate: one angle per sample");
  auto theta = torch::zeros({b, 2, 3}, torch::kFloat64);
  auto acc = theta.accessor<double, 3>();
  for (std::int64_t i = 0; i < b; ++i) {
    const double a = angles_deg[i] * std::numbers::pi / 180.0;
    acc[i][0][0] = std::cos(a);
    acc[i][0][1] = -std::sin(a);
    acc[i][1][0] = std::sin(a);
    acc[i][1][1] = std::cos(a);
  }
  const Tensor grid = F::affine_grid(theta.to(batch.dtype()), batch.sizes().vec(), false);
  auto options = F::GridSampleFuncOptions().padding_mode(torch::kBorder).align_corners(false);
  if (nearest) {
    options.mode(torch::kNearest);
  } else {
    options.mode(torch::kBilinear);
  }
  return F::grid_sample(batch, grid, options);
}

}  // namespace ahdc::train
