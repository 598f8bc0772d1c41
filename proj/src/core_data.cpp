#include "ahdc/core_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ahdc/errors.hpp"
#include "ahdc/rng.hpp"

namespace ahdc {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "AHD1 I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'H', 'D', '1'};
constexpr std::size_t kHeaderBytes = 22;
constexpr std::uint8_t kDtypeFloat32 = 1;
constexpr std::uint8_t kDtypeUint8 = 2;

void check_shape(int h, int w, int c) {
  if (h <= 0 || w <= 0 || c <= 0) {
    std::ostringstream os;
    os << "invalid tensor shape " << h << "x" << w << "x" << c;
    throw ValidationError(os.str());
  }
  if (c > 255) throw ValidationError("channel count exceeds 255");
}

void check_spacing(Spacing s) {
  if (!(s.dy > 0.0f) || !(s.dx > 0.0f) || !std::isfinite(s.dy) || !std::isfinite(s.dx)) {
    throw ValidationError("spacing must be positive and finite");
  }
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

std::vector<std::uint8_t> header(std::uint8_t dtype, int c, int h, int w, Spacing s) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(dtype);
  out.push_back(static_cast<std::uint8_t>(c));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(h));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  put<float>(out, s.dy);
  put<float>(out, s.dx);
  return out;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

// ---------------------------------------------------------------------------
// TensorImage / LabelMask

TensorImage::TensorImage(int height, int width, int channels, Spacing spacing)
    : TensorImage(height, width, channels,
                  std::vector<float>(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0) *
                                     std::max(channels, 0)),
                  spacing) {}

TensorImage::TensorImage(int height, int width, int channels, std::vector<float> values, Spacing spacing)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)), spacing_(spacing) {
  check_shape(height, width, channels);
  check_spacing(spacing);
  if (values_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ValidationError("value buffer length does not match height*width*channels");
  }
  if (!std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); })) {
    throw ValidationError("image values must be finite");
  }
}

void TensorImage::set_spacing(Spacing s) {
  check_spacing(s);
  spacing_ = s;
}

void TensorImage::validate() const {
  check_shape(height_, width_, channels_);
  check_spacing(spacing_);
  if (values_.size() != static_cast<std::size_t>(height_) * width_ * channels_) {
    throw ValidationError("value buffer length does not match height*width*channels");
  }
  for (const float v : values_) {
    if (!std::isfinite(v)) throw ValidationError("tensor contains non-finite values");
  }
}

LabelMask::LabelMask(int height, int width, Spacing spacing)
    : LabelMask(height, width,
                std::vector<std::uint8_t>(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0)),
                spacing) {}

LabelMask::LabelMask(int height, int width, std::vector<std::uint8_t> values, Spacing spacing)
    : height_(height), width_(width), values_(std::move(values)), spacing_(spacing) {
  check_shape(height, width, 1);
  check_spacing(spacing);
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw ValidationError("mask buffer length does not match height*width");
  }
  if (!std::all_of(values_.begin(), values_.end(), [](std::uint8_t v) { return v <= 1; })) {
    throw ValidationError("mask values must be 0 or 1");
  }
}

std::size_t LabelMask::count() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

void LabelMask::validate() const {
  check_shape(height_, width_, 1);
  check_spacing(spacing_);
  if (values_.size() != static_cast<std::size_t>(height_) * width_) {
    throw ValidationError("mask buffer length does not match height*width");
  }
  for (const auto v : values_) {
    if (v > 1) throw ValidationError("mask values must be 0 or 1");
  }
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::TrainLabelled: return "train-labelled";
    case Split::TrainUnlabelled: return "train-unlabelled";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train-labelled") return Split::TrainLabelled;
  if (s == "train-unlabelled") return Split::TrainUnlabelled;
  if (s == "test") return Split::Test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// DomainDataset

DomainDataset::DomainDataset(std::string name, std::vector<Sample> samples)
    : name_(std::move(name)), samples_(std::move(samples)) {
  for (const auto& s : samples_) {
    switch (s.split) {
      case Split::TrainLabelled: ++counts_.labelled; break;
      case Split::TrainUnlabelled: ++counts_.unlabelled; break;
      case Split::Test: ++counts_.test; break;
    }
  }
  validate();
}

const Sample& DomainDataset::find(std::string_view id) const {
  for (const auto& s : samples_) {
    if (s.id == id) return s;
  }
  throw ValidationError("no sample with id '" + std::string(id) + "' in dataset " + name_);
}

DomainDataset DomainDataset::subset(std::initializer_list<Split> splits, std::string name) const {
  std::vector<Sample> out;
  for (const auto& s : samples_) {
    if (std::find(splits.begin(), splits.end(), s.split) != splits.end()) out.push_back(s);
  }
  return DomainDataset(name.empty() ? name_ : std::move(name), std::move(out));
}

void DomainDataset::validate() const {
  std::set<std::string_view> ids;
  for (const auto& s : samples_) {
    if (s.id.empty()) throw ValidationError("sample with empty id in dataset " + name_);
    if (!ids.insert(s.id).second) throw ValidationError("duplicate sample id '" + s.id + "'");
    if (s.split == Split::TrainLabelled && !s.mask) {
      throw ValidationError("labelled sample missing mask: " + s.id);
    }
    s.image.validate();
    if (s.mask) {
      s.mask->validate();
      if (s.mask->height() != s.image.height() || s.mask->width() != s.image.width()) {
        throw ValidationError("mask shape does not match image for sample " + s.id);
      }
    }
  }
  SplitCounts c;
  for (const auto& s : samples_) {
    if (s.split == Split::TrainLabelled) ++c.labelled;
    else if (s.split == Split::TrainUnlabelled) ++c.unlabelled;
    else ++c.test;
  }
  if (!(c == counts_)) throw ValidationError("split counts disagree with samples in " + name_);
}

// ---------------------------------------------------------------------------
// AHD1 encoding

std::vector<std::uint8_t> encode_tensor(const TensorImage& t) {
  t.validate();
  auto out = header(kDtypeFloat32, t.channels(), t.height(), t.width(), t.spacing());
  const auto vals = t.values();
  const auto* p = reinterpret_cast<const std::uint8_t*>(vals.data());
  out.insert(out.end(), p, p + vals.size_bytes());
  return out;
}

std::vector<std::uint8_t> encode_tensor(const LabelMask& m) {
  m.validate();
  auto out = header(kDtypeUint8, 1, m.height(), m.width(), m.spacing());
  out.insert(out.end(), m.values().begin(), m.values().end());
  return out;
}

std::variant<TensorImage, LabelMask> decode_tensor(std::span<const std::uint8_t> bytes, std::string_view origin) {
  const std::string where(origin);
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IoError("not an AHD1 tensor: " + where);
  }
  const std::uint8_t dtype = bytes[4];
  const int channels = bytes[5];
  const auto h = get<std::uint32_t>(bytes, 6);
  const auto w = get<std::uint32_t>(bytes, 10);
  const Spacing spacing{get<float>(bytes, 14), get<float>(bytes, 18)};
  if (h == 0 || w == 0 || channels == 0 || h > (1u << 24) || w > (1u << 24)) {
    throw IoError("corrupt AHD1 header: " + where);
  }
  const std::size_t n = static_cast<std::size_t>(h) * w * channels;
  const auto payload = bytes.subspan(kHeaderBytes);
  if (dtype == kDtypeFloat32) {
    if (payload.size() != n * sizeof(float)) throw IoError("truncated AHD1 payload: " + where);
    std::vector<float> vals(n);
    std::memcpy(vals.data(), payload.data(), payload.size());
    return TensorImage(static_cast<int>(h), static_cast<int>(w), channels, std::move(vals), spacing);
  }
  if (dtype == kDtypeUint8) {
    if (channels != 1) throw IoError("uint8 AHD1 tensors must have one channel: " + where);
    if (payload.size() != n) throw IoError("truncated AHD1 payload: " + where);
    LabelMask m(static_cast<int>(h), static_cast<int>(w), {payload.begin(), payload.end()}, spacing);
    m.validate();
    return m;
  }
  throw IoError("unknown AHD1 dtype in " + where);
}

void save_tensor(const fs::path& path, const TensorImage& t) { write_bytes(path, encode_tensor(t)); }
void save_tensor(const fs::path& path, const LabelMask& m) { write_bytes(path, encode_tensor(m)); }

std::variant<TensorImage, LabelMask> load_tensor(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return decode_tensor(bytes, path.string());
}

TensorImage load_image(const fs::path& path) {
  auto v = load_tensor(path);
  if (auto* t = std::get_if<TensorImage>(&v)) return std::move(*t);
  throw IoError("expected a float32 image: " + path.string());
}

LabelMask load_mask(const fs::path& path) {
  auto v = load_tensor(path);
  if (auto* m = std::get_if<LabelMask>(&v)) return std::move(*m);
  throw IoError("expected a uint8 mask: " + path.string());
}

// ---------------------------------------------------------------------------
// Manifests

DomainDataset load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  std::vector<Sample> samples;
  try {
    for (const auto& entry : doc.at("samples")) {
      Sample s;
      s.id = entry.at("id").get<std::string>();
      s.domain = entry.at("domain").get<std::string>();
      s.split = parse_split(entry.at("split").get<std::string>());
      const fs::path image = base / entry.at("image").get<std::string>();
      if (!fs::exists(image)) throw IoError("manifest references missing file: " + image.string());
      s.image = load_image(image);
      const auto& mask = entry.at("mask");
      if (!mask.is_null()) {
        const fs::path mp = base / mask.get<std::string>();
        if (!fs::exists(mp)) throw IoError("manifest references missing file: " + mp.string());
        s.mask = load_mask(mp);
      } else if (s.split == Split::TrainLabelled) {
        throw ValidationError("labelled sample missing mask: " + s.id);
      }
      samples.push_back(std::move(s));
    }
    return DomainDataset(doc.at("name").get<std::string>(), std::move(samples));
  } catch (const json::exception& e) {
    throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
  }
}

void save_dataset(const fs::path& dir, const DomainDataset& d) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  json samples = json::array();
  for (const auto& s : d.samples()) {
    const std::string image_rel = "images/" + s.id + ".ahd";
    save_tensor(dir / image_rel, s.image);
    json mask = nullptr;
    if (s.mask) {
      const std::string mask_rel = "masks/" + s.id + ".ahd";
      save_tensor(dir / mask_rel, *s.mask);
      mask = mask_rel;
    }
    samples.push_back({{"id", s.id},
                       {"image", image_rel},
                       {"mask", mask},
                       {"domain", s.domain},
                       {"split", std::string(to_string(s.split))}});
  }
  const json doc = {{"name", d.name()}, {"samples", samples}};
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + dir.string());
  os << doc.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Normalisation and splitting

TensorImage normalize_image(const TensorImage& t) {
  t.validate();
  const auto vals = t.values();
  const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
  const double min = *lo;
  const double max = *hi;
  if (!(max > min)) throw ValidationError("degenerate intensity range");
  const double range = max - min;
  std::vector<float> out(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    out[i] = static_cast<float>((static_cast<double>(vals[i]) - min) / range);
  }
  return TensorImage(t.height(), t.width(), t.channels(), std::move(out), t.spacing());
}

std::size_t labelled_count(double label_ratio, std::size_t n_train) {
  return static_cast<std::size_t>(std::floor(label_ratio * static_cast<double>(n_train) + 0.5));
}

DomainDataset split_dataset(const DomainDataset& d, double label_ratio, std::uint64_t seed) {
  if (!(label_ratio > 0.0 && label_ratio <= 1.0)) throw ValidationError("label ratio must lie in (0, 1]");
  std::vector<std::size_t> train;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& s = d.samples()[i];
    if (!s.is_training()) continue;
    train.push_back(i);
    if (s.mask) pool.push_back(i);
  }
  const std::size_t k = labelled_count(label_ratio, train.size());
  if (k == 0) throw ValidationError("label ratio yields zero labelled samples");
  if (k > pool.size()) throw ValidationError("not enough masked training samples for the requested label ratio");

  // Sorting by id first makes the shuffle independent of manifest order.
  std::sort(pool.begin(), pool.end(),
            [&](std::size_t a, std::size_t b) { return d.samples()[a].id < d.samples()[b].id; });
  Rng rng(seed, "split_dataset");
  rng.shuffle(std::span<std::size_t>(pool));
  std::vector<bool> labelled(d.size(), false);
  for (std::size_t i = 0; i < k; ++i) labelled[pool[i]] = true;

  std::vector<Sample> out = d.samples();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out[i].is_training()) continue;
    out[i].split = labelled[i] ? Split::TrainLabelled : Split::TrainUnlabelled;
  }
  return DomainDataset(d.name(), std::move(out));
}

}  // namespace ahdc
