#include "cda/nn.hpp"

#include <cmath>

#include "cda/errors.hpp"
#include "cda/hashing.hpp"

namespace cda::nn {

void init_fan_in_uniform(Parameter& p, std::size_t fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  for (std::size_t i = 0; i < p.value.numel(); ++i)
    p.value[i] = rng.uniform(-s, s);
  p.zero_grad();
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  moments_.reserve(params_.size());
  for (Parameter* p : params_) {
    moments_.push_back({Tensor::zeros(p->value.shape()),
                        Tensor::zeros(p->value.shape())});
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    Moments& mo = moments_[k];
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      double g = p.grad[i] + cfg_.weight_decay * p.value[i];
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g;
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = mo.m[i] / bc1;
      const double vhat = mo.v[i] / bc2;
      p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

std::uint64_t params_hash(const std::vector<const Parameter*>& params) {
  std::uint64_t h = kFnvOffset;
  for (const Parameter* p : params)
    h = fnv1a(p->value.data(), p->value.numel() * sizeof(double), h);
  return h;
}

std::uint64_t params_hash(const std::vector<Parameter*>& params) {
  std::vector<const Parameter*> c(params.begin(), params.end());
  return params_hash(c);
}

}  // namespace cda::nn
