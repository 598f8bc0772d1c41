#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>
#include <json.hpp>

#include "ahdc/nets.hpp"

namespace ahdc::train {

using torch::Tensor;

/// Infinite, stateless sample order over n items: position p lies in pass
/// p / n, each pass a fresh seed-derived shuffle. at(p) depends only on
/// (n, seed, p), so a resumed run replays exactly the same order.
class IndexStream {
 public:
  IndexStream(std::size_t n, std::uint64_t seed);
  std::size_t at(std::uint64_t position) const;
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  mutable std::uint64_t cached_pass_ = ~std::uint64_t{0};
  mutable std::vector<std::size_t> perm_;
};

void set_lr(torch::optim::Adam& opt, double lr);
double current_lr(const torch::optim::Adam& opt);

/// Adam moments of `params` as named tensors "<prefix><i>/exp_avg" and
/// "<prefix><i>/exp_avg_sq", plus a JSON map index -> step count.
std::vector<nn::NamedTensor> adam_state(const torch::optim::Adam& opt, std::span<const Tensor> params,
                                        const std::string& prefix, nlohmann::json& steps);
void restore_adam_state(torch::optim::Adam& opt, std::span<const Tensor> params, const std::string& prefix,
                        const std::map<std::string, Tensor>& entries, const nlohmann::json& steps);

/// Throws NonFiniteError naming `what` and the batch ids when v is NaN/Inf.
void require_finite(double v, const std::string& what, std::span<const std::string> batch_ids);

/// Rotates each sample of a [B, C, H, W] batch about the image centre by
/// angles_deg[b]; border padding, bilinear or nearest interpolation.
Tensor rotate(const Tensor& batch, std::span<const double> angles_deg, bool nearest);

/// Pretty-prints a float tensor scalar.
inline double scalar(const Tensor& t) { return t.item<double>(); }

}  // namespace ahdc::train
