#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>
#include <json.hpp>

#include "ahdc/core_data.hpp"
#include "ahdc/nets.hpp"
#include "ahdc/synthgen.hpp"

namespace ahdc::bai {

using torch::Tensor;

struct BaiConfig {
  nn::MappingNetDescriptor mapping{};
  int epochs = 10;
  int batch = 8;
  double lr_g = 1e-3;
  double lr_d = 1e-4;
  double lr_decay = 0.98;     // generator lr multiplier per epoch
  int checkpoint_every = 1;   // epochs; the final state is always written
  std::int64_t max_steps = 0; // 0 = no cap
  bool reconstruction = true;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const BaiConfig& c);
void from_json(const nlohmann::json& j, BaiConfig& c);

struct StepLosses {
  double disc_loss = 0.0;
  double gen_loss = 0.0;
  double rec1 = 0.0;
  double rec2 = 0.0;
  double s_d = 0.0;
  double s_r = 0.0;
  double lr = 0.0;
};

void write_history_csv(const std::filesystem::path& path, std::span<const StepLosses> history);

/// G1, G2, T and the two uncertainty log-variances, with their optimizers.
class BaiTrainer {
 public:
  /// Builds and initializes G1, G2 and T from the config seed.
  explicit BaiTrainer(const BaiConfig& config);
  /// Uses the given mappers (e.g. test doubles) and a fresh discriminator.
  BaiTrainer(const BaiConfig& config, std::shared_ptr<nn::Mapper> g1, std::shared_ptr<nn::Mapper> g2);

  /// One discriminator update followed by one generator update.
  StepLosses step(const Tensor& x1, const Tensor& x2, std::span<const std::string> batch_ids = {});

  using EpochHook = std::function<void(int epoch)>;
  /// Trains on the training splits of d1 and d2 until the configured epoch
  /// count (or step cap). Checkpoints go to `checkpoint_dir` when non-empty.
  void train(const DomainDataset& d1, const DomainDataset& d2, const std::filesystem::path& checkpoint_dir = {},
             const EpochHook& on_epoch = {});

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

  std::int64_t steps() const { return step_; }
  const std::vector<StepLosses>& history() const { return history_; }
  nn::Mapper& g1() { return *g1_; }
  nn::Mapper& g2() { return *g2_; }
  std::shared_ptr<nn::Mapper> g1_ptr() const { return g1_; }
  std::shared_ptr<nn::Mapper> g2_ptr() const { return g2_; }
  nn::Discriminator& discriminator() { return *t_; }
  const Tensor& s_d() const { return s_d_; }
  const Tensor& s_r() const { return s_r_; }
  const BaiConfig& config() const { return config_; }
  double generator_lr() const;

  /// Steps per epoch for training sets of size n1 and n2.
  std::int64_t steps_per_epoch(std::size_t n1, std::size_t n2) const;

 private:
  void build_optimizers();
  std::vector<Tensor> generator_params() const;

  BaiConfig config_;
  std::shared_ptr<nn::Mapper> g1_;
  std::shared_ptr<nn::Mapper> g2_;
  std::shared_ptr<nn::Discriminator> t_;
  Tensor s_d_;
  Tensor s_r_;
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
  std::int64_t step_ = 0;
  std::vector<StepLosses> history_;
};

/// Maps every sample through g one at a time. Masks and splits are copied;
/// ids get the suffix "_<tag>" and the domain tag becomes `tag`.
DomainDataset adapt_domain(nn::Mapper& g, const DomainDataset& d, const std::string& tag,
                           const std::string& name = {});

enum class Origin { FromD1, FromD2 };
std::string_view to_string(Origin o);

struct PairEntry {
  std::string id_p1;
  std::string id_p2;
  Origin origin = Origin::FromD1;
};

inline constexpr const char* kTag1t2 = "1t2";
inline constexpr const char* kTag2t1 = "2t1";

struct MatchedDomains {
  DomainDataset d_p1;
  DomainDataset d_p2;
  std::vector<PairEntry> pairing;  // pairing[i] joins d_p1.samples()[i] and d_p2.samples()[i]

  /// Equal sizes, bijective index-aligned pairing, equal splits and label
  /// counts, identical masks on labelled pairs.
  void validate() const;
  void save(const std::filesystem::path& dir) const;
  static MatchedDomains load(const std::filesystem::path& dir);
};

/// D_p1 = D1 ∪ G2(D2), D_p2 = G1(D1) ∪ D2, over the training splits.
MatchedDomains build_matched_domains(const DomainDataset& d1, const DomainDataset& d2, nn::Mapper& g1,
                                     nn::Mapper& g2);

struct AdaptationEval {
  double cycle_mae = 0.0;     // mean of |x1 - G2(G1(x1))| and |x2 - G1(G2(x2))|
  double oracle_mae = -1.0;   // MAE(G_AtoB(x_A), T*(x_A)); -1 without oracle pairs
  double identity_mae = -1.0; // MAE(x_A, T*(x_A))
};

/// Cycle reconstruction on up to `max_samples` training samples of each
/// domain, plus oracle-pair distances. `a_to_b` maps domain A to domain B.
AdaptationEval evaluate_adaptation(nn::Mapper& g1, nn::Mapper& g2, const DomainDataset& d1, const DomainDataset& d2,
                                   nn::Mapper& a_to_b, const DomainDataset* oracle_a,
                                   const DomainDataset* oracle_b, std::span<const synth::OraclePair> pairs,
                                   std::size_t max_samples = 64);

}  // namespace ahdc::bai
