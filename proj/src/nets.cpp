#include "ahdc/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "ahdc/errors.hpp"
#include "ahdc/rng.hpp"

namespace ahdc::nn {

namespace F = torch::nn::functional;
namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Feature: return "feature";
    case ParamGroup::Local: return "local";
    case ParamGroup::Global: return "global";
    case ParamGroup::Whole: return "whole";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Descriptors

void MappingNetDescriptor::validate() const {
  if (levels < 2) throw ValidationError("mapping net needs at least 2 levels");
  if (base_channels < 1 || max_channels < base_channels) throw ValidationError("invalid mapping net channel schedule");
  if (in_channels < 1 || out_channels < 1) throw ValidationError("invalid mapping net channel counts");
}

int MappingNetDescriptor::channels_at(int level) const {
  long c = base_channels;
  for (int l = 0; l < level && c < max_channels; ++l) c *= 2;
  return static_cast<int>(std::min<long>(c, max_channels));
}

void DiscriminatorDescriptor::validate() const {
  if (in_channels != 2) throw ValidationError("discriminator input must be a 2-channel pair");
}

void DualNetDescriptor::validate() const {
  feature.validate();
  if (patch_size < 1) throw ValidationError("patch_size must be positive");
  if (attention_blocks < 1 || heads < 1) throw ValidationError("attention blocks and heads must be positive");
  if (model_dim() % heads != 0) throw ValidationError("model dim P*P*F must be divisible by the head count");
  if (model_dim() % 2 != 0) throw ValidationError("model dim must be even for sinusoidal encoding");
}

void to_json(json& j, const MappingNetDescriptor& d) {
  j = json{{"levels", d.levels},
           {"base_channels", d.base_channels},
           {"max_channels", d.max_channels},
           {"use_skip_connections", d.use_skip_connections},
           {"in_channels", d.in_channels},
           {"out_channels", d.out_channels},
           {"upsampling", "bilinear"}};
}

void from_json(const json& j, MappingNetDescriptor& d) {
  if (j.contains("upsampling") && j.at("upsampling") != "bilinear") {
    throw ValidationError("mapping nets upsample bilinearly; other modes are not supported");
  }
  d.levels = j.at("levels").get<int>();
  d.base_channels = j.at("base_channels").get<int>();
  d.max_channels = j.at("max_channels").get<int>();
  d.use_skip_connections = j.at("use_skip_connections").get<bool>();
  d.in_channels = j.at("in_channels").get<int>();
  d.out_channels = j.at("out_channels").get<int>();
}

void to_json(json& j, const DualNetDescriptor& d) {
  j = json{{"feature", d.feature},
           {"patch_size", d.patch_size},
           {"attention_blocks", d.attention_blocks},
           {"heads", d.heads},
           {"positional_encoding", d.positional_encoding},
           {"global_branch", d.global_branch}};
}

void from_json(const json& j, DualNetDescriptor& d) {
  d.feature = j.at("feature").get<MappingNetDescriptor>();
  d.patch_size = j.at("patch_size").get<int>();
  d.attention_blocks = j.at("attention_blocks").get<int>();
  d.heads = j.at("heads").get<int>();
  d.positional_encoding = j.at("positional_encoding").get<bool>();
  d.global_branch = j.at("global_branch").get<bool>();
}

// ---------------------------------------------------------------------------
// Layers

namespace {

torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1, bool bias = true) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(bias));
}

}  // namespace

BatchNorm2dImpl::BatchNorm2dImpl(int channels) {
  weight_ = register_parameter("weight", torch::ones({channels}));
  bias_ = register_parameter("bias", torch::zeros({channels}));
  running_mean_ = register_buffer("running_mean", torch::zeros({channels}));
  running_var_ = register_buffer("running_var", torch::ones({channels}));
}

Tensor BatchNorm2dImpl::forward(const Tensor& x) {
  return torch::batch_norm(x, weight_, bias_, running_mean_, running_var_, mode == BnMode::Batch, 0.1, 1e-5, false);
}

DoubleConvImpl::DoubleConvImpl(int in_channels, int out_channels) {
  conv1 = register_module("conv1", conv(in_channels, out_channels, 3, 1, false));
  bn1 = register_module("bn1", BatchNorm2d(out_channels));
  conv2 = register_module("conv2", conv(out_channels, out_channels, 3, 1, false));
  bn2 = register_module("bn2", BatchNorm2d(out_channels));
}

Tensor DoubleConvImpl::forward(const Tensor& x) {
  auto h = torch::relu(bn1(conv1(x)));
  return torch::relu(bn2(conv2(h)));
}

UNetImpl::UNetImpl(const MappingNetDescriptor& d) : desc_(d) {
  d.validate();
  for (int l = 0; l <= d.levels; ++l) {
    const int in = l == 0 ? d.in_channels : d.channels_at(l - 1);
    down_.push_back(register_module("down" + std::to_string(l), DoubleConv(in, d.channels_at(l))));
  }
  for (int l = d.levels; l >= 1; --l) {
    const int in = d.channels_at(l) + (d.use_skip_connections ? d.channels_at(l - 1) : 0);
    up_.push_back(register_module("up" + std::to_string(l), DoubleConv(in, d.channels_at(l - 1))));
  }
  out_ = register_module("out", conv(d.channels_at(0), d.out_channels, 1));
}

Tensor UNetImpl::forward(const Tensor& x, std::vector<Tensor>* activations) {
  if (x.dim() != 4 || x.size(1) != desc_.in_channels) {
    throw ValidationError("U-Net expects a [B, " + std::to_string(desc_.in_channels) + ", H, W] batch");
  }
  const std::int64_t factor = std::int64_t{1} << desc_.levels;
  if (x.size(2) % factor != 0 || x.size(3) % factor != 0) {
    throw ValidationError("U-Net input sides must be divisible by 2^levels = " + std::to_string(factor));
  }
  const auto record = [&](const Tensor& t) {
    if (activations) activations->push_back(t);
  };
  std::vector<Tensor> skips;
  Tensor h = down_[0](x);
  record(h);
  for (int l = 1; l <= desc_.levels; ++l) {
    skips.push_back(h);
    h = down_[l](F::max_pool2d(h, F::MaxPool2dFuncOptions(2)));
    record(h);
  }
  for (std::size_t i = 0; i < up_.size(); ++i) {
    const Tensor& skip = skips[skips.size() - 1 - i];
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    if (desc_.use_skip_connections) h = torch::cat({h, skip}, 1);
    h = up_[i](h);
    record(h);
  }
  h = out_(h);
  record(h);
  return h;
}

std::vector<Tensor> UNetImpl::conv_weights() const {
  std::vector<Tensor> out;
  for (const auto& b : down_) {
    out.push_back(b->conv1->weight);
    out.push_back(b->conv2->weight);
  }
  for (const auto& b : up_) {
    out.push_back(b->conv1->weight);
    out.push_back(b->conv2->weight);
  }
  out.push_back(out_->weight);
  return out;
}

// ---------------------------------------------------------------------------
// Network base

ParamGroup Network::group_of(const std::string&) const { return ParamGroup::Whole; }

void Network::set_bn_mode(BnMode mode) {
  for (const auto& m : modules(/*include_self=*/false)) {
    if (auto* bn = dynamic_cast<BatchNorm2dImpl*>(m.get())) bn->mode = mode;
  }
}

std::vector<Tensor> Network::parameters_in(ParamGroup g) const {
  std::vector<Tensor> out;
  for (const auto& p : named_parameters()) {
    if (group_of(p.key()) == g) out.push_back(p.value());
  }
  return out;
}

std::int64_t Network::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Mapping net

MappingNet::MappingNet(const MappingNetDescriptor& d) : desc_(d) {
  unet_ = register_module("unet", UNet(d));
}

json MappingNet::descriptor_json() const { return desc_; }

Tensor MappingNet::forward(const Tensor& x) { return torch::sigmoid(unet_(x)); }

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(const DiscriminatorDescriptor& d) {
  d.validate();
  int in = d.in_channels;
  for (std::size_t i = 0; i < DiscriminatorDescriptor::kFilters.size(); ++i) {
    const int out = DiscriminatorDescriptor::kFilters[i];
    const bool last = i + 1 == DiscriminatorDescriptor::kFilters.size();
    convs_.push_back(register_module(
        "conv" + std::to_string(i + 1),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, DiscriminatorDescriptor::kKernels[i])
                              .stride(DiscriminatorDescriptor::kStrides[i])
                              .padding(DiscriminatorDescriptor::kKernels[i] / 2)
                              .bias(last))));
    if (!last) norms_.push_back(register_module("bn" + std::to_string(i + 1), BatchNorm2d(out)));
    in = out;
  }
}

json Discriminator::descriptor_json() const {
  return json{{"filters", DiscriminatorDescriptor::kFilters},
              {"strides", DiscriminatorDescriptor::kStrides},
              {"kernels", DiscriminatorDescriptor::kKernels},
              {"in_channels", 2}};
}

Tensor Discriminator::forward(const Tensor& pair) {
  if (pair.dim() != 4 || pair.size(1) != 2) throw ValidationError("discriminator expects a [B, 2, H, W] pair batch");
  Tensor h = pair;
  for (std::size_t i = 0; i < norms_.size(); ++i) h = torch::relu(norms_[i](convs_[i](h)));
  return torch::sigmoid(convs_.back()(h));
}

Tensor Discriminator::score(const Tensor& map) { return map.mean({1, 2, 3}); }

// ---------------------------------------------------------------------------
// Dual-modelling net

AttentionBlockImpl::AttentionBlockImpl(int model_dim, int heads) : heads_(heads) {
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({model_dim})));
  q_ = register_module("q", torch::nn::Linear(model_dim, model_dim));
  k_ = register_module("k", torch::nn::Linear(model_dim, model_dim));
  v_ = register_module("v", torch::nn::Linear(model_dim, model_dim));
  o_ = register_module("o", torch::nn::Linear(model_dim, model_dim));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({model_dim})));
  ff1_ = register_module("ff1", torch::nn::Linear(model_dim, 2 * model_dim));
  ff2_ = register_module("ff2", torch::nn::Linear(2 * model_dim, model_dim));
}

Tensor AttentionBlockImpl::forward(const Tensor& x) {
  const auto b = x.size(0);
  const auto n = x.size(1);
  const auto d = x.size(2);
  const auto hd = d / heads_;
  const auto split = [&](const Tensor& t) { return t.view({b, n, heads_, hd}).transpose(1, 2); };
  const Tensor h = norm1_(x);
  const Tensor q = split(q_(h));
  const Tensor k = split(k_(h));
  const Tensor v = split(v_(h));
  const Tensor attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd)), -1);
  const Tensor mixed = torch::matmul(attn, v).transpose(1, 2).reshape({b, n, d});
  Tensor out = x + o_(mixed);
  return out + ff2_(torch::gelu(ff1_(norm2_(out))));
}

GlobalBranchImpl::GlobalBranchImpl(const DualNetDescriptor& d) : desc_(d) {
  for (int i = 0; i < d.attention_blocks; ++i) {
    blocks_.push_back(register_module("block" + std::to_string(i), AttentionBlock(d.model_dim(), d.heads)));
  }
  final_norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d.model_dim()})));
  head_ = register_module("head", conv(d.feature_channels(), 1, 1));
}

Tensor GlobalBranchImpl::encode(const Tensor& sequence) {
  Tensor h = sequence;
  if (desc_.positional_encoding) {
    h = h + sinusoidal_position_encoding(h.size(1), h.size(2)).to(h.dtype()).unsqueeze(0);
  }
  for (auto& block : blocks_) h = block(h);
  return h;
}

Tensor GlobalBranchImpl::forward(const Tensor& features) {
  const Tensor seq = patchify(features, desc_.patch_size);
  const Tensor encoded = final_norm_(encode(seq));
  return torch::sigmoid(head_(unpatchify(encoded, desc_.patch_size, features.size(2), features.size(3))));
}

LocalBranchImpl::LocalBranchImpl(int channels) {
  blocks_ = register_module("blocks", torch::nn::Sequential());
  for (int i = 0; i < 3; ++i) {
    blocks_->push_back(conv(channels, channels, 3, 1, false));
    blocks_->push_back(BatchNorm2d(channels));
    blocks_->push_back(torch::nn::ReLU());
  }
  head_ = register_module("head", conv(channels, 1, 1));
}

Tensor LocalBranchImpl::forward(const Tensor& features) { return torch::sigmoid(head_(blocks_->forward(features))); }

DualNet::DualNet(const DualNetDescriptor& d) : desc_(d) {
  d.validate();
  feature_ = register_module("feature", UNet(d.feature));
  local_ = register_module("local", LocalBranch(d.feature_channels()));
  if (d.global_branch) global_ = register_module("global", GlobalBranch(d));
}

json DualNet::descriptor_json() const { return desc_; }

ParamGroup DualNet::group_of(const std::string& name) const {
  if (name.starts_with("feature.")) return ParamGroup::Feature;
  if (name.starts_with("local.")) return ParamGroup::Local;
  if (name.starts_with("global.")) return ParamGroup::Global;
  return ParamGroup::Whole;
}

DualOutput DualNet::forward(const Tensor& x, std::vector<Tensor>* feature_activations) {
  if (desc_.global_branch && (x.size(2) % desc_.patch_size != 0 || x.size(3) % desc_.patch_size != 0)) {
    throw ValidationError("feature map sides must be divisible by the patch size");
  }
  const Tensor f = feature_(x, feature_activations);
  DualOutput out;
  out.local = local_(f);
  if (desc_.global_branch) out.global = global_(f);
  return out;
}

Tensor DualNet::predict_local(const Tensor& x) { return local_(feature_(x)); }

// ---------------------------------------------------------------------------
// Free functions

Tensor sinusoidal_position_encoding(std::int64_t n_positions, std::int64_t d_model) {
  if (d_model <= 0 || d_model % 2 != 0) throw ValidationError("d_model must be positive and even");
  if (n_positions < 0) throw ValidationError("n_positions must be non-negative");
  auto pe = torch::empty({n_positions, d_model}, torch::kFloat64);
  auto acc = pe.accessor<double, 2>();
  for (std::int64_t pos = 0; pos < n_positions; ++pos) {
    for (std::int64_t i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, 2.0 * i / static_cast<double>(d_model));
      acc[pos][2 * i] = std::sin(angle);
      acc[pos][2 * i + 1] = std::cos(angle);
    }
  }
  return pe.to(torch::kFloat32);
}

Tensor patchify(const Tensor& f, int p) {
  if (f.dim() != 4) throw ValidationError("patchify expects [B, F, H, W]");
  const auto b = f.size(0);
  const auto c = f.size(1);
  const auto h = f.size(2);
  const auto w = f.size(3);
  if (p < 1 || h % p != 0 || w % p != 0) throw ValidationError("feature map sides must be divisible by the patch size");
  return f.permute({0, 2, 3, 1})
      .reshape({b, h / p, p, w / p, p, c})
      .permute({0, 1, 3, 2, 4, 5})
      .reshape({b, (h / p) * (w / p), p * p * c});
}

Tensor unpatchify(const Tensor& s, int p, std::int64_t h, std::int64_t w) {
  if (s.dim() != 3 || p < 1 || h % p != 0 || w % p != 0 || s.size(1) != (h / p) * (w / p) || s.size(2) % (p * p) != 0) {
    throw ValidationError("unpatchify: sequence shape does not match the requested map");
  }
  const auto b = s.size(0);
  const auto c = s.size(2) / (p * p);
  return s.reshape({b, h / p, w / p, p, p, c}).permute({0, 1, 3, 2, 4, 5}).reshape({b, h, w, c}).permute({0, 3, 1, 2});
}

void initialize(Network& net, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  for (auto& item : net.named_parameters()) {
    const std::string& name = item.key();
    Tensor& p = item.value();
    const bool is_bias = name.ends_with("bias");
    if (is_bias) {
      p.zero_();
    } else if (p.dim() == 1) {
      p.fill_(1.0);
    } else {
      const double fan_in = static_cast<double>(p.numel() / p.size(0));
      // Conv weights feed ReLUs (He bound); linear layers use a unit-variance bound.
      const double bound = p.dim() == 4 ? std::sqrt(6.0 / fan_in) : std::sqrt(3.0 / fan_in);
      Rng rng(seed, name);
      std::vector<double> values(static_cast<std::size_t>(p.numel()));
      for (auto& v : values) v = rng.uniform(-bound, bound);
      p.copy_(torch::from_blob(values.data(), p.sizes(), torch::kFloat64).to(p.dtype()));
    }
  }
}

// ---------------------------------------------------------------------------
// Tensor conversion

Tensor to_tensor(std::span<const TensorImage* const> images) {
  if (images.empty()) throw ValidationError("to_tensor: empty batch");
  const auto& first = *images.front();
  const auto b = static_cast<std::int64_t>(images.size());
  auto out = torch::empty({b, first.height(), first.width(), first.channels()}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const auto* img : images) {
    if (img->height() != first.height() || img->width() != first.width() || img->channels() != first.channels()) {
      throw ValidationError("to_tensor: images in a batch must share one shape");
    }
    std::memcpy(dst, img->values().data(), img->values().size_bytes());
    dst += img->size();
  }
  return out.permute({0, 3, 1, 2}).contiguous();
}

Tensor to_tensor(const TensorImage& image) {
  const TensorImage* p = &image;
  return to_tensor(std::span<const TensorImage* const>(&p, 1));
}

Tensor to_tensor(std::span<const LabelMask* const> masks) {
  if (masks.empty()) throw ValidationError("to_tensor: empty batch");
  const auto& first = *masks.front();
  auto out = torch::empty({static_cast<std::int64_t>(masks.size()), 1, first.height(), first.width()}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const auto* m : masks) {
    if (m->height() != first.height() || m->width() != first.width()) {
      throw ValidationError("to_tensor: masks in a batch must share one shape");
    }
    for (const auto v : m->values()) *dst++ = static_cast<float>(v);
  }
  return out;
}

TensorImage to_image(const Tensor& chw, Spacing spacing) {
  if (chw.dim() != 3) throw ValidationError("to_image expects [C, H, W]");
  const Tensor hwc = chw.detach().to(torch::kFloat32).permute({1, 2, 0}).contiguous();
  const float* src = hwc.data_ptr<float>();
  std::vector<float> values(src, src + hwc.numel());
  return TensorImage(static_cast<int>(chw.size(1)), static_cast<int>(chw.size(2)), static_cast<int>(chw.size(0)),
                     std::move(values), spacing);
}

LabelMask threshold(const Tensor& hw, double level, Spacing spacing) {
  if (hw.dim() != 2) throw ValidationError("threshold expects [H, W]");
  const Tensor bin = (hw.detach() >= level).to(torch::kUInt8).contiguous();
  const std::uint8_t* src = bin.data_ptr<std::uint8_t>();
  return LabelMask(static_cast<int>(hw.size(0)), static_cast<int>(hw.size(1)),
                   std::vector<std::uint8_t>(src, src + bin.numel()), spacing);
}

// ---------------------------------------------------------------------------
// Checkpoint archive

namespace {

constexpr char kArchiveMagic[4] = {'A', 'H', 'C', 'K'};
constexpr std::uint32_t kArchiveVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const fs::path& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint: " + path.string());
  return v;
}

}  // namespace

void save_archive(const fs::path& path, const json& meta, std::span<const NamedTensor> entries) {
  json header = {{"meta", meta}, {"entries", json::array()}};
  std::vector<std::vector<std::uint8_t>> blobs;
  for (const auto& e : entries) {
    const Tensor flat = e.value.detach().to(torch::kCPU).to(torch::kFloat32).contiguous().reshape({-1});
    if (flat.numel() == 0) throw ValidationError("cannot archive empty tensor " + e.name);
    header["entries"].push_back({{"name", e.name}, {"shape", e.value.sizes().vec()}});
    const float* src = flat.data_ptr<float>();
    blobs.push_back(encode_tensor(TensorImage(1, static_cast<int>(flat.numel()), 1,
                                              std::vector<float>(src, src + flat.numel()))));
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kArchiveMagic, 4);
  write_pod<std::uint32_t>(os, kArchiveVersion);
  write_pod<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& blob : blobs) {
    write_pod<std::uint64_t>(os, blob.size());
    os.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::pair<json, std::vector<NamedTensor>> load_archive(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kArchiveMagic, 4) != 0) throw IoError("not a checkpoint: " + path.string());
  if (read_pod<std::uint32_t>(is, path) != kArchiveVersion) throw IoError("unsupported checkpoint version: " + path.string());
  const auto len = read_pod<std::uint64_t>(is, path);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw IoError("truncated checkpoint: " + path.string());
  json header = json::parse(text);
  std::vector<NamedTensor> out;
  for (const auto& e : header.at("entries")) {
    const auto n = read_pod<std::uint64_t>(is, path);
    std::vector<std::uint8_t> blob(n);
    if (!is.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(n))) {
      throw IoError("truncated checkpoint: " + path.string());
    }
    auto decoded = decode_tensor(blob, path.string());
    auto* img = std::get_if<TensorImage>(&decoded);
    if (!img) throw IoError("checkpoint blob is not float32: " + path.string());
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::from_blob(img->values().data(), {static_cast<std::int64_t>(img->size())}, torch::kFloat32).clone();
    std::int64_t numel = 1;
    for (const auto s : shape) numel *= s;
    if (numel != t.numel()) throw IoError("checkpoint entry size disagrees with its shape: " + path.string());
    out.push_back({e.at("name").get<std::string>(), t.reshape(shape)});
  }
  return {header.at("meta"), std::move(out)};
}

std::vector<NamedTensor> network_tensors(const Network& net) {
  std::vector<NamedTensor> out;
  for (const auto& p : net.named_parameters()) out.push_back({p.key(), p.value()});
  for (const auto& b : net.named_buffers()) out.push_back({b.key(), b.value()});
  return out;
}

void restore_network(Network& net, const json& meta, std::span<const NamedTensor> entries, const std::string& prefix) {
  if (meta.at("kind") != net.kind()) {
    throw ValidationError("checkpoint holds a '" + meta.at("kind").get<std::string>() + "' network, expected '" +
                          net.kind() + "'");
  }
  if (meta.at("descriptor") != net.descriptor_json()) throw ValidationError("checkpoint descriptor mismatch");
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e.value;
  torch::NoGradGuard no_grad;
  for (auto& t : network_tensors(net)) {
    const auto it = by_name.find(prefix + t.name);
    if (it == by_name.end()) throw ValidationError("checkpoint lacks tensor " + prefix + t.name);
    if (it->second->sizes() != t.value.sizes()) throw ValidationError("checkpoint shape mismatch for " + prefix + t.name);
    t.value.copy_(it->second->to(t.value.dtype()));
  }
}

void save_network(const fs::path& path, const Network& net) {
  const json meta = {{"kind", net.kind()}, {"descriptor", net.descriptor_json()}};
  save_archive(path, meta, network_tensors(net));
}

void load_network(const fs::path& path, Network& net) {
  const auto [meta, entries] = load_archive(path);
  restore_network(net, meta, entries);
}

std::shared_ptr<Network> load_any_network(const fs::path& path) {
  const auto [meta, entries] = load_archive(path);
  const auto kind = meta.at("kind").get<std::string>();
  std::shared_ptr<Network> net;
  if (kind == "mapping") net = std::make_shared<MappingNet>(meta.at("descriptor").get<MappingNetDescriptor>());
  else if (kind == "discriminator") net = std::make_shared<Discriminator>();
  else if (kind == "dual") net = std::make_shared<DualNet>(meta.at("descriptor").get<DualNetDescriptor>());
  else throw ValidationError("unknown network kind in checkpoint: " + kind);
  restore_network(*net, meta, entries);
  return net;
}

}  // namespace ahdc::nn
