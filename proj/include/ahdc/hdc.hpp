#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>
#include <json.hpp>

#include "ahdc/bai.hpp"
#include "ahdc/losses.hpp"
#include "ahdc/metrics.hpp"
#include "ahdc/nets.hpp"

namespace ahdc::hdc {

using torch::Tensor;

struct Ablation {
  bool single_net = false;        // S1 alone: intra + supervised
  bool no_global_branch = false;  // local branches only: inter + supervised
  bool no_ow = false;             // lambda_ow forced to 0
  bool combined_objective = false;  // one joint step on the total objective
  bool consistency_unlabelled_only = false;
  bool supervised_only = false;   // supervised phase only (baseline)
  bool inter_one_way = false;     // S1 follows S2, not vice versa
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct HdcConfig {
  nn::DualNetDescriptor net{};
  int epochs = 10;
  int batch_unlabelled = 4;
  int batch_labelled = 2;
  double lr = 1e-3;
  double lr_decay = 0.98;
  loss::LossWeights weights{};
  std::int64_t t_max = 0;       // 0 = total number of iterations
  double rotation_deg = 15.0;   // augmentation angle range (+/-)
  int checkpoint_every = 0;     // epochs; the final state is always written
  std::int64_t max_steps = 0;   // 0 = no cap
  Ablation ablation{};
  std::uint64_t seed = 0;

  void validate() const;
  nn::DualNetDescriptor effective_net() const;
  loss::LossWeights effective_weights() const;
};

void to_json(nlohmann::json& j, const Ablation& a);
void from_json(const nlohmann::json& j, Ablation& a);
void to_json(nlohmann::json& j, const HdcConfig& c);
void from_json(const nlohmann::json& j, HdcConfig& c);

struct IterationLosses {
  double o_intra1 = 0.0;
  double o_intra2 = 0.0;
  double o_inter = 0.0;
  double o_ow = 0.0;
  double o_super1 = 0.0;
  double o_super2 = 0.0;
  double lambda_intra = 0.0;
  double lr = 0.0;
};

void write_history_csv(const std::filesystem::path& path, std::span<const IterationLosses> history);

/// A batch of matched pairs; y is undefined for consistency batches.
struct PairBatch {
  std::vector<std::string> ids_p1;
  std::vector<std::string> ids_p2;
  Tensor x1;
  Tensor x2;
  Tensor y;
  bool empty() const { return ids_p1.empty(); }
};

class HdcTrainer {
 public:
  /// Initializes S1 and S2 from independent seed-derived streams.
  HdcTrainer(const HdcConfig& config, const bai::MatchedDomains& matched);

  /// Intra step, inter step, supervised step (or one joint step in combined
  /// mode). `t_max` feeds the ramp; t = step + 1.
  IterationLosses iteration(const PairBatch& consistency, const PairBatch& labelled, std::int64_t t_max);

  using EpochHook = std::function<void(int epoch)>;
  void train(const std::filesystem::path& checkpoint_dir = {}, const EpochHook& on_epoch = {});

  /// Pair batch at stream position `step` (labelled or consistency stream),
  /// augmented with the step's rotation angles.
  PairBatch consistency_batch(std::int64_t step) const;
  PairBatch labelled_batch(std::int64_t step) const;

  std::int64_t iterations_per_epoch() const;
  std::int64_t total_iterations() const;

  void save_checkpoint(const std::filesystem::path& path) const;
  void load_checkpoint(const std::filesystem::path& path);

  std::int64_t steps() const { return step_; }
  const std::vector<IterationLosses>& history() const { return history_; }
  nn::DualNet& s1() { return *s1_; }
  nn::DualNet* s2() { return s2_.get(); }
  std::shared_ptr<nn::DualNet> s1_ptr() const { return s1_; }
  std::shared_ptr<nn::DualNet> s2_ptr() const { return s2_; }
  const HdcConfig& config() const { return config_; }
  const std::string& d1_domain() const { return d1_domain_; }
  const std::string& d2_domain() const { return d2_domain_; }

 private:
  PairBatch make_batch(std::span<const std::size_t> indices, bool with_labels, std::int64_t step) const;
  std::vector<Tensor> all_params() const;
  bool two_nets() const { return s2_ != nullptr; }

  HdcConfig config_;
  const bai::MatchedDomains* matched_;
  std::vector<std::size_t> labelled_;     // pairing indices with labels
  std::vector<std::size_t> consistency_;  // pairing indices used by the consistency phases
  std::set<std::pair<std::string, std::string>> pair_set_;
  std::string d1_domain_;
  std::string d2_domain_;
  std::shared_ptr<nn::DualNet> s1_;
  std::shared_ptr<nn::DualNet> s2_;
  std::unique_ptr<torch::optim::Adam> opt_;
  std::int64_t step_ = 0;
  std::vector<IterationLosses> history_;
};

/// Trained nets for inference.
struct HdcModel {
  std::shared_ptr<nn::DualNet> s1;
  std::shared_ptr<nn::DualNet> s2;  // null for single-net runs
  std::string d1_domain;
  std::string d2_domain;

  static HdcModel load(const std::filesystem::path& checkpoint);
};

enum class Which { Auto, S1, S2 };
Which parse_which(std::string_view s);

struct Prediction {
  Tensor probability;  // [H, W], local branch
  LabelMask mask;      // probability >= 0.5
};

/// Local-branch prediction. Auto picks S1 for D1 / 2t1 tags and S2 for
/// D2 / 1t2 tags; single-net models always use S1.
Prediction predict(const HdcModel& model, const Sample& sample, Which which = Which::Auto);

/// Evaluates the test split of `dataset` with the given net choice.
metrics::MetricReport evaluate(const HdcModel& model, const DomainDataset& dataset, Which which = Which::Auto);

/// |Pearson| between corresponding activation tensors, one entry per layer
/// followed by a "mean" row. Per-channel mode averages |r| over channels.
std::vector<metrics::LayerCorrelation> correlate_activations(std::span<const Tensor> a, std::span<const Tensor> b,
                                                             std::span<const std::string> names,
                                                             bool per_channel = false);

/// Feeds the same probe batch through both feature extractors.
std::vector<metrics::LayerCorrelation> feature_correlation(nn::DualNet& s1, nn::DualNet& s2, const Tensor& probe,
                                                           bool per_channel = false);

/// Names of the recorded feature-extractor layers for a descriptor.
std::vector<std::string> feature_layer_names(const nn::MappingNetDescriptor& d);

}  // namespace ahdc::hdc
