#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>
#include <json.hpp>

#include "ahdc/core_data.hpp"

namespace ahdc::nn {

using torch::Tensor;

/// Batch statistics (training and testing) or the running estimates.
enum class BnMode { Batch, Frozen };

enum class ParamGroup { Feature, Local, Global, Whole };
std::string_view to_string(ParamGroup g);

struct MappingNetDescriptor {
  int levels = 4;
  int base_channels = 16;
  int max_channels = 128;
  bool use_skip_connections = true;
  int in_channels = 1;
  int out_channels = 1;

  void validate() const;
  int channels_at(int level) const;
  friend bool operator==(const MappingNetDescriptor&, const MappingNetDescriptor&) = default;
};

/// Six convolutions, 32-64-128-256-256-1; the ladder is not configurable.
struct DiscriminatorDescriptor {
  static constexpr std::array<int, 6> kFilters = {32, 64, 128, 256, 256, 1};
  static constexpr std::array<int, 6> kStrides = {2, 2, 2, 2, 2, 1};
  static constexpr std::array<int, 6> kKernels = {3, 3, 3, 3, 3, 1};
  int in_channels = 2;

  void validate() const;
  friend bool operator==(const DiscriminatorDescriptor&, const DiscriminatorDescriptor&) = default;
};

struct DualNetDescriptor {
  MappingNetDescriptor feature{};  // out_channels = feature map width F
  int patch_size = 8;
  int attention_blocks = 2;
  int heads = 4;
  bool positional_encoding = true;
  bool global_branch = true;

  DualNetDescriptor() { feature.out_channels = 16; }
  int feature_channels() const { return feature.out_channels; }
  int model_dim() const { return patch_size * patch_size * feature.out_channels; }
  void validate() const;
  friend bool operator==(const DualNetDescriptor&, const DualNetDescriptor&) = default;
};

void to_json(nlohmann::json& j, const MappingNetDescriptor& d);
void from_json(const nlohmann::json& j, MappingNetDescriptor& d);
void to_json(nlohmann::json& j, const DualNetDescriptor& d);
void from_json(const nlohmann::json& j, DualNetDescriptor& d);

// ---------------------------------------------------------------------------
// Layers

class BatchNorm2dImpl : public torch::nn::Module {
 public:
  explicit BatchNorm2dImpl(int channels);
  Tensor forward(const Tensor& x);
  BnMode mode = BnMode::Batch;

 private:
  Tensor weight_;
  Tensor bias_;
  Tensor running_mean_;
  Tensor running_var_;
};
TORCH_MODULE(BatchNorm2d);

/// conv3x3 -> BN -> ReLU, twice.
class DoubleConvImpl : public torch::nn::Module {
 public:
  DoubleConvImpl(int in_channels, int out_channels);
  Tensor forward(const Tensor& x);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(DoubleConv);

/// U-Net with max-pool downsampling and bilinear upsampling. The output is a
/// 1x1 convolution of the last decoder block (no activation).
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const MappingNetDescriptor& d);

  /// When `activations` is given, every block output is appended to it.
  Tensor forward(const Tensor& x, std::vector<Tensor>* activations = nullptr);

  /// Weights of every convolution in order (encoder, decoder, output).
  std::vector<Tensor> conv_weights() const;
  const MappingNetDescriptor& descriptor() const { return desc_; }

 private:
  MappingNetDescriptor desc_;
  std::vector<DoubleConv> down_;
  std::vector<DoubleConv> up_;
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(UNet);

// ---------------------------------------------------------------------------
// Networks

/// Common base of G1/G2, T and S1/S2: a parameter store plus its architecture.
class Network : public torch::nn::Module {
 public:
  virtual std::string kind() const = 0;
  virtual nlohmann::json descriptor_json() const = 0;
  virtual ParamGroup group_of(const std::string& param_name) const;

  void set_bn_mode(BnMode mode);
  std::vector<Tensor> parameters_in(ParamGroup g) const;
  std::int64_t parameter_count() const;
};

/// Image-to-image mapping (G1, G2 and test doubles).
class Mapper : public Network {
 public:
  virtual Tensor forward(const Tensor& x) = 0;
};

class MappingNet : public Mapper {
 public:
  explicit MappingNet(const MappingNetDescriptor& d);
  std::string kind() const override { return "mapping"; }
  nlohmann::json descriptor_json() const override;
  /// Output in (0, 1), same spatial shape as the input.
  Tensor forward(const Tensor& x) override;
  const MappingNetDescriptor& descriptor() const { return desc_; }

 private:
  MappingNetDescriptor desc_;
  UNet unet_{nullptr};
};

class Discriminator : public Network {
 public:
  explicit Discriminator(const DiscriminatorDescriptor& d = {});
  std::string kind() const override { return "discriminator"; }
  nlohmann::json descriptor_json() const override;
  /// Probability map [B, 1, ceil(H/32), ceil(W/32)] for a 2-channel pair batch.
  Tensor forward(const Tensor& pair);
  /// Per-sample score: mean of the probability map.
  static Tensor score(const Tensor& map);
  torch::nn::Conv2d& final_layer() { return convs_.back(); }

 private:
  std::vector<torch::nn::Conv2d> convs_;
  std::vector<BatchNorm2d> norms_;
};

/// Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x)).
class AttentionBlockImpl : public torch::nn::Module {
 public:
  AttentionBlockImpl(int model_dim, int heads);
  Tensor forward(const Tensor& x);

 private:
  int heads_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear q_{nullptr}, k_{nullptr}, v_{nullptr}, o_{nullptr};
  torch::nn::Linear ff1_{nullptr}, ff2_{nullptr};
};
TORCH_MODULE(AttentionBlock);

class GlobalBranchImpl : public torch::nn::Module {
 public:
  explicit GlobalBranchImpl(const DualNetDescriptor& d);
  /// Features [B, F, H, W] -> probability map [B, 1, H, W].
  Tensor forward(const Tensor& features);
  /// Attention stack on a patch sequence [B, N, D]; adds the positional
  /// encoding when enabled.
  Tensor encode(const Tensor& sequence);

 private:
  DualNetDescriptor desc_;
  std::vector<AttentionBlock> blocks_;
  torch::nn::LayerNorm final_norm_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(GlobalBranch);

class LocalBranchImpl : public torch::nn::Module {
 public:
  explicit LocalBranchImpl(int channels);
  Tensor forward(const Tensor& features);

 private:
  torch::nn::Sequential blocks_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(LocalBranch);

struct DualOutput {
  Tensor local;
  Tensor global;  // undefined when the global branch is disabled
};

class DualNet : public Network {
 public:
  explicit DualNet(const DualNetDescriptor& d);
  std::string kind() const override { return "dual"; }
  nlohmann::json descriptor_json() const override;
  ParamGroup group_of(const std::string& param_name) const override;

  DualOutput forward(const Tensor& x, std::vector<Tensor>* feature_activations = nullptr);
  /// Local-branch probability only (inference path).
  Tensor predict_local(const Tensor& x);
  std::vector<Tensor> feature_conv_weights() const { return feature_->conv_weights(); }
  GlobalBranch& global_branch() { return global_; }
  const DualNetDescriptor& descriptor() const { return desc_; }

 private:
  DualNetDescriptor desc_;
  UNet feature_{nullptr};
  LocalBranch local_{nullptr};
  GlobalBranch global_{nullptr};
};

// ---------------------------------------------------------------------------
// Free functions

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(...).
Tensor sinusoidal_position_encoding(std::int64_t n_positions, std::int64_t d_model);

/// [B, F, H, W] -> [B, (H/P)(W/P), P*P*F]; patches row-major, each patch
/// vector row-major and channel-last.
Tensor patchify(const Tensor& features, int patch);
Tensor unpatchify(const Tensor& sequence, int patch, std::int64_t height, std::int64_t width);

/// Fan-in scaled uniform weights, zero biases, unit/zero norm affine.
void initialize(Network& net, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tensor conversion

Tensor to_tensor(std::span<const TensorImage* const> images);
Tensor to_tensor(const TensorImage& image);
Tensor to_tensor(std::span<const LabelMask* const> masks);
TensorImage to_image(const Tensor& chw, Spacing spacing = {});
LabelMask threshold(const Tensor& hw_probability, double level = 0.5, Spacing spacing = {});

// ---------------------------------------------------------------------------
// Checkpoints: AHCK archive = magic, JSON header, AHD1 blob per tensor.

struct NamedTensor {
  std::string name;
  Tensor value;
};

void save_archive(const std::filesystem::path& path, const nlohmann::json& meta, std::span<const NamedTensor> entries);
std::pair<nlohmann::json, std::vector<NamedTensor>> load_archive(const std::filesystem::path& path);

std::vector<NamedTensor> network_tensors(const Network& net);
/// Copies archived tensors into `net`; rejects kind, descriptor or shape mismatches.
void restore_network(Network& net, const nlohmann::json& meta, std::span<const NamedTensor> entries,
                     const std::string& prefix = "");
void save_network(const std::filesystem::path& path, const Network& net);
void load_network(const std::filesystem::path& path, Network& net);
std::shared_ptr<Network> load_any_network(const std::filesystem::path& path);

}  // namespace ahdc::nn
