#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cda/autodiff.hpp"
#include "cda/nn.hpp"

namespace cda::nn {

// Desk-scale backbone: a 3-block conv stack for image inputs or a 2-layer
// perceptron for flat vectors, both ending in a linear map to a D-vector.
// A heavier backbone can be slotted in behind the same contract later.
struct EncoderConfig {
  enum class Mode { image, vector };
  Mode mode = Mode::image;
  std::size_t in_h = 32, in_w = 32, in_c = 3;  // image mode; H,W % 8 == 0
  std::size_t in_dim = 16;                     // vector mode
  std::size_t c1 = 8, c2 = 16, c3 = 32;        // conv widths
  std::size_t hidden = 32;                     // vector-mode hidden width
  std::size_t out_dim = 128;                   // feature dimension D

  bool operator==(const EncoderConfig&) const = default;
};

class EncoderNet {
 public:
  EncoderNet() = default;
  EncoderNet(EncoderConfig cfg, std::uint64_t seed);

  // x: (N, C, H, W) image mode, (N, in_dim) vector mode -> (N, D).
  Value forward(Tape& tape, Value x);

  const EncoderConfig& config() const { return cfg_; }
  std::size_t feature_dim() const { return cfg_.out_dim; }
  NamedParams named_parameters();
  std::vector<Parameter*> parameters();
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }
  std::uint64_t param_hash() const;
  void reinit(std::uint64_t seed);

 private:
  Value leaf(Tape& t, Parameter& p) {
    return frozen_ ? t.frozen(p) : t.param(p);
  }

  EncoderConfig cfg_;
  bool frozen_ = false;
  Parameter conv1_w_, conv1_b_, conv2_w_, conv2_b_, conv3_w_, conv3_b_;
  Parameter fc_w_, fc_b_;   // image mode head
  Parameter w1_, b1_, w2_, b2_;  // vector mode
};

// Two logits (live, spoof) from a D-feature. hidden == 0 gives one linear
// layer, the size used by the <=64-parameter gradient-check toys.
class LabelClassifierNet {
 public:
  LabelClassifierNet() = default;
  LabelClassifierNet(std::size_t in_dim, std::size_t hidden,
                     std::uint64_t seed);

  Value forward(Tape& tape, Value z);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t hidden() const { return hidden_; }
  NamedParams named_parameters();
  std::vector<Parameter*> parameters();
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }
  std::uint64_t param_hash() const;
  void reinit(std::uint64_t seed);

 private:
  Value leaf(Tape& t, Parameter& p) {
    return frozen_ ? t.frozen(p) : t.param(p);
  }

  std::size_t in_dim_ = 0, hidden_ = 0;
  bool frozen_ = false;
  Parameter w1_, b1_, w2_, b2_;
};

// The domain indicator F: a 2-layer perceptron D -> D with a sigmoid head,
// so its output acts as a per-channel gate in (0,1)^D.
class DomainIndicatorNet {
 public:
  DomainIndicatorNet() = default;
  DomainIndicatorNet(std::size_t dim, std::size_t hidden, std::uint64_t seed);

  Value forward(Tape& tape, Value z);

  std::size_t dim() const { return dim_; }
  std::size_t hidden() const { return hidden_; }
  NamedParams named_parameters();
  std::vector<Parameter*> parameters();
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }
  std::uint64_t param_hash() const;
  void reinit(std::uint64_t seed);

 private:
  Value leaf(Tape& t, Parameter& p) {
    return frozen_ ? t.frozen(p) : t.param(p);
  }

  std::size_t dim_ = 0, hidden_ = 0;
  bool frozen_ = false;
  Parameter w1_, b1_, w2_, b2_;
};

// Domain discriminator on predicted logits: 2 -> hidden -> hidden -> 2.
// It consumes 2-vectors of class logits, not D-features.
class DiscriminatorNet {
 public:
  DiscriminatorNet() = default;
  DiscriminatorNet(std::size_t hidden, std::uint64_t seed);

  Value forward(Tape& tape, Value logits);

  std::size_t hidden() const { return hidden_; }
  NamedParams named_parameters();
  std::vector<Parameter*> parameters();
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }
  std::uint64_t param_hash() const;
  void reinit(std::uint64_t seed);
  // Test hook: make the net output (0,0) logits for every input, which
  // pins both adversarial losses at ln 2 exactly.
  void force_uniform_output();

 private:
  Value leaf(Tape& t, Parameter& p) {
    return frozen_ ? t.frozen(p) : t.param(p);
  }

  std::size_t hidden_ = 0;
  bool frozen_ = false;
  Parameter w1_, b1_, w2_, b2_, w3_, b3_;
};

// Reconstructs the input from the concatenated domain and class features.
struct DecoderConfig {
  EncoderConfig::Mode mode = EncoderConfig::Mode::image;
  std::size_t latent_dim = 128;  // D; decoder input is 2*D
  std::size_t out_h = 32, out_w = 32, out_c = 3;  // image mode
  std::size_t g1 = 8, g2 = 8;                     // image-mode conv widths
  std::size_t out_dim = 16;                       // vector mode
  std::size_t hidden = 32;                        // vector-mode hidden

  bool operator==(const DecoderConfig&) const = default;
};

class DecoderNet {
 public:
  DecoderNet() = default;
  DecoderNet(DecoderConfig cfg, std::uint64_t seed);

  // z: (N, 2*latent_dim) -> (N, C, H, W) or (N, out_dim).
  Value forward(Tape& tape, Value z);

  const DecoderConfig& config() const { return cfg_; }
  NamedParams named_parameters();
  std::vector<Parameter*> parameters();
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }
  std::uint64_t param_hash() const;
  void reinit(std::uint64_t seed);

 private:
  Value leaf(Tape& t, Parameter& p) {
    return frozen_ ? t.frozen(p) : t.param(p);
  }

  DecoderConfig cfg_;
  bool frozen_ = false;
  Parameter fc_w_, fc_b_, conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  Parameter w1_, b1_, w2_, b2_;  // vector mode
};

struct ArchConfig {
  EncoderConfig encoder;
  std::size_t classifier_hidden = 32;
  std::size_t indicator_hidden = 0;  // 0 -> same as encoder.out_dim
  std::size_t disc_hidden = 32;
  std::size_t decoder_g1 = 8, decoder_g2 = 8, decoder_hidden = 32;

  bool operator==(const ArchConfig&) const = default;

  DecoderConfig decoder_config() const;
  std::size_t indicator_width() const {
    return indicator_hidden == 0 ? encoder.out_dim : indicator_hidden;
  }
};

// Source and target networks plus the domain indicator and discriminator.
struct ModelBundle {
  EncoderNet source_encoder;
  LabelClassifierNet source_classifier;
  EncoderNet target_encoder;
  LabelClassifierNet target_classifier;
  DomainIndicatorNet indicator;
  DiscriminatorNet discriminator;
  ArchConfig arch;

  static ModelBundle create(const ArchConfig& arch, std::uint64_t seed);

  NamedParams named_parameters();
  std::vector<Parameter*> source_params();
  std::vector<Parameter*> target_params();  // E_t + L_t + F
  std::uint64_t source_hash() const;
  std::uint64_t target_hash() const;
  std::uint64_t disc_hash() const;
};

// Stage-B initialization: target encoder/classifier become bit-equal copies
// of the trained source networks, F is freshly drawn, and the source side is
// frozen for the rest of the pipeline.
void init_target_from_source(ModelBundle& bundle, std::uint64_t f_seed);

// Copies parameters between identically configured encoders/classifiers;
// throws ContractError on an architecture mismatch.
void copy_parameters(EncoderNet& dst, const EncoderNet& src);
void copy_parameters(LabelClassifierNet& dst, const LabelClassifierNet& src);

}  // namespace cda::nn
