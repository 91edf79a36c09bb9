#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cda/autodiff.hpp"
#include "cda/random.hpp"
#include "cda/tensor.hpp"

namespace cda::nn {

// Weights drawn from U(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases zero.
void init_fan_in_uniform(Parameter& p, std::size_t fan_in, Rng& rng);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 added to the gradient, torch-Adam style
};

// Adam over an explicit parameter list. Frozen sub-networks are excluded by
// construction: their parameters are simply not handed to the optimizer.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  void step();
  void zero_grad();
  const AdamConfig& config() const { return cfg_; }
  std::size_t num_params() const { return params_.size(); }

 private:
  struct Moments {
    Tensor m, v;
  };
  std::vector<Parameter*> params_;
  std::vector<Moments> moments_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

using NamedParams = std::vector<std::pair<std::string, Parameter*>>;

// Digest over the raw bytes of the listed parameters, in list order.
// Bit-equality of digests is the freeze/update-scope test primitive.
std::uint64_t params_hash(const std::vector<const Parameter*>& params);
std::uint64_t params_hash(const std::vector<Parameter*>& params);

}  // namespace cda::nn
