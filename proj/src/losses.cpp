#include "ahdc/losses.hpp"

#include <cmath>
#include <string>

#include "ahdc/errors.hpp"
#include "ahdc/log.hpp"

namespace ahdc::loss {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    throw ValidationError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

double ramp_weight(double t, double t_max) {
  if (!(t_max > 0.0)) throw ValidationError("ramp_weight: t_max must be positive");
  if (t < 0.0 || t > t_max) throw ValidationError("ramp_weight: t outside [0, t_max]");
  const double r = 1.0 - t / t_max;
  return std::exp(-5.0 * r * r);
}

Tensor dice_loss(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "dice_loss");
  const Tensor inter = (p * q).sum();
  return 1.0 - (2.0 * inter + kDiceEps) / (p.sum() + q.sum() + kDiceEps);
}

Tensor soft_cross_entropy(const Tensor& target, const Tensor& pred) {
  require_same_shape(target, pred, "soft_cross_entropy");
  const Tensor p = pred.clamp(kProbClamp, 1.0 - kProbClamp);
  return -(target * torch::log(p) + (1.0 - target) * torch::log(1.0 - p)).mean();
}

AdversarialLosses adversarial_losses(const Tensor& scores_p1, const Tensor& scores_p2) {
  if (scores_p1.numel() == 0 || scores_p2.numel() == 0) throw ValidationError("adversarial_losses: empty batch");
  const auto log_clamped = [](const Tensor& v) { return torch::log(v.clamp(kProbClamp, 1.0 - kProbClamp)); };
  AdversarialLosses out;
  out.disc = -log_clamped(scores_p1).mean() - log_clamped(1.0 - scores_p2).mean();
  out.gen = -log_clamped(1.0 - scores_p1).mean() - log_clamped(scores_p2).mean();
  return out;
}

Tensor reconstruction_loss(const Tensor& x, const Tensor& x_hat) {
  require_same_shape(x, x_hat, "reconstruction_loss");
  return (x - x_hat).abs().mean();
}

Tensor bai_total(const Tensor& adv, const Tensor& rec1, const Tensor& rec2, const Tensor& s_d, const Tensor& s_r) {
  return torch::exp(-s_d) * adv + s_d + torch::exp(-s_r) * (rec1 + rec2) + s_r;
}

Tensor intra_consistency(const Tensor& local, const Tensor& global) {
  require_same_shape(local, global, "intra_consistency");
  return dice_loss(local, global);
}

Tensor inter_consistency(const Tensor& local1, const Tensor& global1, const Tensor& local2, const Tensor& global2,
                         InterMode mode) {
  require_same_shape(local1, local2, "inter_consistency");
  const auto pair_term = [mode](const Tensor& a, const Tensor& b) {
    if (mode == InterMode::OneWay) return soft_cross_entropy(b.detach(), a);
    return soft_cross_entropy(b.detach(), a) + soft_cross_entropy(a.detach(), b);
  };
  Tensor total = 0.5 * pair_term(local1, local2);
  if (global1.defined() != global2.defined()) throw ValidationError("inter_consistency: global maps on one side only");
  if (global1.defined()) {
    require_same_shape(global1, global2, "inter_consistency");
    total = total + 0.5 * pair_term(global1, global2);
  }
  return total;
}

Tensor orthogonal_weight_penalty(std::span<const Tensor> layers1, std::span<const Tensor> layers2) {
  if (layers1.size() != layers2.size() || layers1.empty()) {
    throw ValidationError("orthogonal_weight_penalty: nets must have the same non-empty layer list");
  }
  Tensor total;
  for (std::size_t i = 0; i < layers1.size(); ++i) {
    require_same_shape(layers1[i], layers2[i], "orthogonal_weight_penalty");
    const auto k = layers1[i].size(0);
    const Tensor a = layers1[i].reshape({k, -1});
    const Tensor b = layers2[i].reshape({k, -1});
    const Tensor na = a.norm(2, {1}, true);
    const Tensor nb = b.norm(2, {1}, true);
    const Tensor za = na == 0;
    const Tensor zb = nb == 0;
    if (za.any().item<bool>() || zb.any().item<bool>()) {
      warn("orthogonal_weight_penalty: zero-norm filter in layer " + std::to_string(i) + " treated as cos = 0");
    }
    // Zero rows stay zero after division by 1, so their cosines vanish.
    const Tensor ua = a / torch::where(za, torch::ones_like(na), na);
    const Tensor ub = b / torch::where(zb, torch::ones_like(nb), nb);
    const Tensor layer = torch::matmul(ua, ub.t()).abs().mean();
    total = total.defined() ? total + layer : layer;
  }
  return total / static_cast<double>(layers1.size());
}

Tensor supervised_loss(const Tensor& local, const Tensor& global, const Tensor& y) {
  require_same_shape(local, y, "supervised_loss");
  Tensor total = soft_cross_entropy(y, local) + dice_loss(y, local);
  if (global.defined()) {
    require_same_shape(global, y, "supervised_loss");
    total = total + soft_cross_entropy(y, global) + dice_loss(y, global);
  }
  return total;
}

Tensor hdc_total(const HdcParts& p, const LossWeights& w, double ramp) {
  return w.lambda_super * (p.super1 + p.super2) + ramp * (p.intra1 + p.intra2) + w.lambda_inter * p.inter +
         w.lambda_ow * p.ow;
}

}  // namespace ahdc::loss
