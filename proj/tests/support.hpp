#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ahdc/core_data.hpp"
#include "ahdc/nets.hpp"

namespace ahdc::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "ahdc") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline LabelMask random_mask(std::mt19937_64& rng, int h, int w, double p) {
  std::bernoulli_distribution fg(p);
  std::vector<std::uint8_t> v(static_cast<std::size_t>(h) * w);
  for (auto& x : v) x = fg(rng) ? 1 : 0;
  return LabelMask(h, w, std::move(v));
}

inline TensorImage random_image(std::mt19937_64& rng, int h, int w, int c = 1) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(h) * w * c);
  for (auto& x : v) x = u(rng);
  return TensorImage(h, w, c, std::move(v));
}

/// ||a - n|| / max(||a||, ||n||); 0 when both vanish to finite-difference
/// noise (e.g. a key bias, which softmax attention is invariant to).
inline double relative_error(const torch::Tensor& analytic, const torch::Tensor& numeric) {
  const double denom = std::max(analytic.norm().item<double>(), numeric.norm().item<double>());
  if (denom < 1e-9) return 0.0;
  return (analytic - numeric).norm().item<double>() / denom;
}

/// Central finite differences of a scalar function with respect to every
/// entry of `x` (modified in place and restored).
inline torch::Tensor numeric_gradient(const std::function<double()>& f, torch::Tensor x, double step) {
  torch::NoGradGuard no_grad;
  auto flat = x.view({-1});
  auto out = torch::zeros({flat.numel()}, torch::kFloat64);
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + step;
    const double fp = f();
    flat[i] = orig - step;
    const double fm = f();
    flat[i] = orig;
    out[i] = (fp - fm) / (2.0 * step);
  }
  return out;
}

struct GradientCheck {
  double error = 0.0;           // worst relative error over the checked tensors
  std::int64_t probes = 0;
  std::int64_t straddling = 0;  // probes rechecked at step/100 because a kink lies inside the step
  std::string worst;

  void merge(const GradientCheck& o, const std::string& name) {
    if (o.error >= error) {
      error = o.error;
      worst = name;
    }
    probes += o.probes;
    straddling += o.straddling;
  }
};

/// Compares `analytic` (same shape as `x`) with central differences of f.
/// ReLU nets are piecewise smooth: when a unit switches inside [x - h, x + h]
/// the difference quotient is not a derivative estimate. Such probes are
/// detected by the step-h and step-h/2 quotients disagreeing far beyond the
/// O(h^2) gap of a smooth function; they are rechecked at step h/100 instead.
/// A probe that fails both stays in the comparison.
inline GradientCheck check_gradient(const torch::Tensor& analytic, const std::function<double()>& f, torch::Tensor x,
                                    double step, std::int64_t max_entries = 0) {
  torch::NoGradGuard no_grad;
  auto flat = x.view({-1});
  const auto a = analytic.defined() ? analytic.reshape({-1}).to(torch::kFloat64) : torch::zeros({flat.numel()}, torch::kFloat64);
  const std::int64_t n = flat.numel();
  const auto central = [&](std::int64_t i, double h) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double fp = f();
    flat[i] = orig - h;
    const double fm = f();
    flat[i] = orig;
    return (fp - fm) / (2.0 * h);
  };
  const std::int64_t count = max_entries <= 0 || max_entries >= n ? n : max_entries;
  std::vector<double> kept_a, kept_n;
  GradientCheck out;
  for (std::int64_t k = 0; k < count; ++k) {
    const std::int64_t i = count == n ? k : k * n / count;
    const double ai = a[i].item<double>();
    const double d = central(i, step);
    ++out.probes;
    if (std::abs(d - ai) > 1e-9 + 1e-6 * std::max(std::abs(d), std::abs(ai))) {
      const double d_half = central(i, step / 2);
      const double d_fine = central(i, step / 100);
      const bool unsteady = std::abs(d - d_half) > 1e-7 + 1e-6 * std::abs(d);
      const bool fine_agrees = std::abs(d_fine - ai) <= 1e-9 + 1e-5 * std::max(std::abs(d_fine), std::abs(ai));
      if (unsteady && fine_agrees) {
        ++out.straddling;
        continue;
      }
    }
    kept_a.push_back(ai);
    kept_n.push_back(d);
  }
  if (!kept_a.empty()) {
    out.error = relative_error(torch::tensor(kept_a, torch::kFloat64), torch::tensor(kept_n, torch::kFloat64));
  }
  return out;
}

/// Gradient check over every parameter of `net` for the scalar objective
/// `loss` (float64 network expected). Parameters the objective does not reach
/// must have zero numeric gradient.
inline GradientCheck network_gradient_check(nn::Network& net, const std::function<torch::Tensor()>& loss, double step,
                                            std::int64_t max_entries_per_tensor = 0) {
  net.zero_grad();
  loss().backward();
  GradientCheck out;
  for (auto& item : net.named_parameters()) {
    auto p = item.value();
    const auto analytic = p.grad().defined() ? p.grad().detach().clone() : torch::Tensor();
    out.merge(check_gradient(analytic, [&] { torch::NoGradGuard ng; return loss().item<double>(); }, p, step,
                             max_entries_per_tensor),
              item.key());
  }
  return out;
}

/// Gradient check with respect to an input tensor.
inline GradientCheck input_gradient_check(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x,
                                          double step) {
  auto xi = x.detach().clone().requires_grad_(true);
  f(xi).backward();
  const auto analytic = xi.grad().clone();
  auto probe = x.detach().clone();
  return check_gradient(analytic, [&] { torch::NoGradGuard ng; return f(probe).item<double>(); }, probe, step);
}

}  // namespace ahdc::testing
