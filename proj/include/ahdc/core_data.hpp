#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ahdc {

/// Physical pixel size in mm.
struct Spacing {
  float dy = 1.0f;
  float dx = 1.0f;
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Real-valued raster, row-major and channel-last.
class TensorImage {
 public:
  TensorImage() = default;
  TensorImage(int height, int width, int channels = 1, Spacing spacing = {});
  TensorImage(int height, int width, int channels, std::vector<float> values, Spacing spacing = {});

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  Spacing spacing() const { return spacing_; }
  void set_spacing(Spacing s);
  std::size_t size() const { return values_.size(); }

  float& at(int y, int x, int c = 0) { return values_[index(y, x, c)]; }
  float at(int y, int x, int c = 0) const { return values_[index(y, x, c)]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  /// Throws ValidationError on shape mismatch or non-finite values.
  void validate() const;

  friend bool operator==(const TensorImage&, const TensorImage&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> values_;
  Spacing spacing_{};
};

/// Binary raster; values are exactly 0 or 1.
class LabelMask {
 public:
  LabelMask() = default;
  LabelMask(int height, int width, Spacing spacing = {});
  LabelMask(int height, int width, std::vector<std::uint8_t> values, Spacing spacing = {});

  int height() const { return height_; }
  int width() const { return width_; }
  Spacing spacing() const { return spacing_; }
  std::size_t size() const { return values_.size(); }

  std::uint8_t& at(int y, int x) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<std::uint8_t> values() { return values_; }
  std::span<const std::uint8_t> values() const { return values_; }

  std::size_t count() const;
  void validate() const;

  friend bool operator==(const LabelMask&, const LabelMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> values_;
  Spacing spacing_{};
};

enum class Split { TrainLabelled, TrainUnlabelled, Test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Sample {
  std::string id;
  TensorImage image;
  std::optional<LabelMask> mask;
  std::string domain;
  Split split = Split::TrainUnlabelled;

  bool is_training() const { return split != Split::Test; }
};

struct SplitCounts {
  std::size_t labelled = 0;
  std::size_t unlabelled = 0;
  std::size_t test = 0;
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

class DomainDataset {
 public:
  DomainDataset() = default;
  DomainDataset(std::string name, std::vector<Sample> samples);

  const std::string& name() const { return name_; }
  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  SplitCounts counts() const { return counts_; }

  const Sample& find(std::string_view id) const;

  /// Samples of the given splits, in dataset order.
  DomainDataset subset(std::initializer_list<Split> splits, std::string name = {}) const;

  /// Checks unique ids, mask presence for labelled samples, shapes and values.
  void validate() const;

 private:
  std::string name_;
  std::vector<Sample> samples_;
  SplitCounts counts_{};
};

/// AHD1 tensor files. Images are stored as float32, masks as uint8.
void save_tensor(const std::filesystem::path& path, const TensorImage& t);
void save_tensor(const std::filesystem::path& path, const LabelMask& m);
std::variant<TensorImage, LabelMask> load_tensor(const std::filesystem::path& path);
TensorImage load_image(const std::filesystem::path& path);
LabelMask load_mask(const std::filesystem::path& path);

/// AHD1 encoding in memory; used by save_tensor and the checkpoint archive.
std::vector<std::uint8_t> encode_tensor(const TensorImage& t);
std::vector<std::uint8_t> encode_tensor(const LabelMask& m);
std::variant<TensorImage, LabelMask> decode_tensor(std::span<const std::uint8_t> bytes,
                                                   std::string_view origin = "<memory>");

/// Reads a manifest and every tensor it references (paths relative to the manifest).
DomainDataset load_manifest(const std::filesystem::path& path);

/// Writes images/, masks/ and manifest.json under `dir`.
void save_dataset(const std::filesystem::path& dir, const DomainDataset& d);

/// Per-image min-max rescale to [0, 1].
TensorImage normalize_image(const TensorImage& t);

/// Re-partitions the training samples; round-half-up of ratio * n_train are labelled.
DomainDataset split_dataset(const DomainDataset& d, double label_ratio, std::uint64_t seed);

/// Number of labelled samples split_dataset selects for `n_train` training samples.
std::size_t labelled_count(double label_ratio, std::size_t n_train);

}  // namespace ahdc
