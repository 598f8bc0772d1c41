#pragma once

#include <random>
#include <string>

#include "ahdc/bai.hpp"
#include "ahdc/nets.hpp"
#include "ahdc/synthgen.hpp"
#include "support.hpp"

namespace ahdc::testing {

/// Mapper that returns its input unchanged (optionally intensity-inverted).
class IdentityMapper : public nn::Mapper {
 public:
  explicit IdentityMapper(bool invert = false) : invert_(invert) {}
  std::string kind() const override { return "identity"; }
  nlohmann::json descriptor_json() const override { return {{"invert", invert_}}; }
  torch::Tensor forward(const torch::Tensor& x) override { return invert_ ? 1.0 - x : x; }

 private:
  bool invert_;
};

/// Domain with `n_labelled` + `n_unlabelled` training samples and `n_test`
/// test samples of random side x side images.
inline DomainDataset toy_domain(const std::string& prefix, const std::string& domain, int n_labelled, int n_unlabelled,
                                int n_test, int side = 8, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  const auto add = [&](int n, Split split, const char* tag) {
    for (int i = 0; i < n; ++i) {
      Sample s;
      s.id = prefix + tag + std::to_string(1000 + i);
      s.image = random_image(rng, side, side);
      if (split != Split::TrainUnlabelled) s.mask = random_mask(rng, side, side, 0.3);
      s.domain = domain;
      s.split = split;
      out.push_back(std::move(s));
    }
  };
  add(n_labelled, Split::TrainLabelled, "l");
  add(n_unlabelled, Split::TrainUnlabelled, "u");
  add(n_test, Split::Test, "t");
  return DomainDataset(prefix, std::move(out));
}

}  // namespace ahdc::testing
