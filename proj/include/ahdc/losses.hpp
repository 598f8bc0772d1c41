#pragma once

#include <span>

#include <torch/torch.h>

namespace ahdc::loss {

using torch::Tensor;

inline constexpr double kDiceEps = 1e-5;
inline constexpr double kProbClamp = 1e-7;

/// exp(-5 (1 - t/t_max)^2); t must lie in [0, t_max].
double ramp_weight(double t, double t_max);

/// 1 - (2 sum(pq) + eps) / (sum(p) + sum(q) + eps), summed over the whole batch.
Tensor dice_loss(const Tensor& p, const Tensor& q);

/// -mean[target log pred + (1 - target) log(1 - pred)], pred clamped to
/// [1e-7, 1 - 1e-7].
Tensor soft_cross_entropy(const Tensor& target, const Tensor& pred);

struct AdversarialLosses {
  Tensor disc;
  Tensor gen;
};

/// Scores are per-sample discriminator probabilities on (x1, G1(x1)) pairs
/// and (G2(x2), x2) pairs. The generator loss swaps the labels.
AdversarialLosses adversarial_losses(const Tensor& scores_p1, const Tensor& scores_p2);

/// mean |x - x_hat|
Tensor reconstruction_loss(const Tensor& x, const Tensor& x_hat);

/// exp(-s_d) L_adv + s_d + exp(-s_r) (L_rec1 + L_rec2) + s_r
Tensor bai_total(const Tensor& adv, const Tensor& rec1, const Tensor& rec2, const Tensor& s_d, const Tensor& s_r);

/// Dice agreement between the local and global branch of one net.
Tensor intra_consistency(const Tensor& local, const Tensor& global);

enum class InterMode {
  Symmetric,  // both nets learn from the other's detached prediction
  OneWay      // only net 1 follows net 2
};

/// Cross-entropy agreement of two nets on a matched pair. Either global map
/// may be undefined (no global branch), which drops the global terms.
Tensor inter_consistency(const Tensor& local1, const Tensor& global1, const Tensor& local2, const Tensor& global2,
                         InterMode mode = InterMode::Symmetric);

/// Mean over layers of the mean |cos| over all K x K filter pairs of the two
/// nets' corresponding layers. Zero-norm filters count as cos = 0 (warned).
Tensor orthogonal_weight_penalty(std::span<const Tensor> layers1, std::span<const Tensor> layers2);

/// [CE(y, local) + dice(y, local)] + [CE(y, global) + dice(y, global)]; the
/// global terms are dropped when `global` is undefined.
Tensor supervised_loss(const Tensor& local, const Tensor& global, const Tensor& y);

struct LossWeights {
  double lambda_super = 0.5;
  double lambda_inter = 1.0;
  double lambda_ow = 0.1;
};

struct HdcParts {
  Tensor intra1, intra2, inter, ow, super1, super2;
};

/// lambda_super (s1 + s2) + f(t) (i1 + i2) + lambda_inter inter + lambda_ow ow
Tensor hdc_total(const HdcParts& parts, const LossWeights& w, double ramp);

}  // namespace ahdc::loss
