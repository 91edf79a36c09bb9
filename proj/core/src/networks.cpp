#include "cda/networks.hpp"

#include "cda/errors.hpp"

namespace cda::nn {

namespace {
constexpr std::uint64_t kTagConv1 = 11, kTagConv2 = 12, kTagConv3 = 13,
                        kTagFc = 14, kTagW1 = 21, kTagW2 = 22, kTagW3 = 23;

std::vector<const Parameter*> as_const(std::vector<Parameter*> v) {
  return {v.begin(), v.end()};
}
}  // namespace

// ---------------------------------------------------------------------------
// EncoderNet

EncoderNet::EncoderNet(EncoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.mode == EncoderConfig::Mode::image) {
    if (cfg_.in_h % 8 != 0 || cfg_.in_w % 8 != 0)
      throw ContractError("image encoder needs H,W divisible by 8");
    conv1_w_ = Parameter("conv1_w", Tensor({cfg_.c1, cfg_.in_c, 3, 3}));
    conv1_b_ = Parameter("conv1_b", Tensor({cfg_.c1}));
    conv2_w_ = Parameter("conv2_w", Tensor({cfg_.c2, cfg_.c1, 3, 3}));
    conv2_b_ = Parameter("conv2_b", Tensor({cfg_.c2}));
    conv3_w_ = Parameter("conv3_w", Tensor({cfg_.c3, cfg_.c2, 3, 3}));
    conv3_b_ = Parameter("conv3_b", Tensor({cfg_.c3}));
    fc_w_ = Parameter("fc_w", Tensor({cfg_.c3, cfg_.out_dim}));
    fc_b_ = Parameter("fc_b", Tensor({cfg_.out_dim}));
  } else {
    w1_ = Parameter("w1", Tensor({cfg_.in_dim, cfg_.hidden}));
    b1_ = Parameter("b1", Tensor({cfg_.hidden}));
    w2_ = Parameter("w2", Tensor({cfg_.hidden, cfg_.out_dim}));
    b2_ = Parameter("b2", Tensor({cfg_.out_dim}));
  }
  reinit(seed);
}

void EncoderNet::reinit(std::uint64_t seed) {
  if (cfg_.mode == EncoderConfig::Mode::image) {
    Rng r1(mix_seed(seed, kTagConv1));
    init_fan_in_uniform(conv1_w_, cfg_.in_c * 9, r1);
    conv1_b_.value.fill(0.0);
    Rng r2(mix_seed(seed, kTagConv2));
    init_fan_in_uniform(conv2_w_, cfg_.c1 * 9, r2);
    conv2_b_.value.fill(0.0);
    Rng r3(mix_seed(seed, kTagConv3));
    init_fan_in_uniform(conv3_w_, cfg_.c2 * 9, r3);
    conv3_b_.value.fill(0.0);
    Rng r4(mix_seed(seed, kTagFc));
    init_fan_in_uniform(fc_w_, cfg_.c3, r4);
    fc_b_.value.fill(0.0);
  } else {
    Rng r1(mix_seed(seed, kTagW1));
    init_fan_in_uniform(w1_, cfg_.in_dim, r1);
    b1_.value.fill(0.0);
    Rng r2(mix_seed(seed, kTagW2));
    init_fan_in_uniform(w2_, cfg_.hidden, r2);
    b2_.value.fill(0.0);
  }
}

Value EncoderNet::forward(Tape& t, Value x) {
  const Tensor& tx = t.val(x);
  if (cfg_.mode == EncoderConfig::Mode::image) {
    if (tx.rank() != 4 || tx.dim(1) != cfg_.in_c || tx.dim(2) != cfg_.in_h ||
        tx.dim(3) != cfg_.in_w)
      throw ContractError("encoder: input shape " + tx.shape_str() +
                          " does not match configured image size");
    Value h = t.conv2d(x, leaf(t, conv1_w_), leaf(t, conv1_b_), 1, 1);
    h = t.relu(h);
    h = t.avg_pool2(h);
    h = t.conv2d(h, leaf(t, conv2_w_), leaf(t, conv2_b_), 1, 1);
    h = t.relu(h);
    h = t.avg_pool2(h);
    h = t.conv2d(h, leaf(t, conv3_w_), leaf(t, conv3_b_), 1, 1);
    h = t.relu(h);
    h = t.avg_pool2(h);
    h = t.global_avg_pool(h);
    return t.add_bias(t.matmul(h, leaf(t, fc_w_)), leaf(t, fc_b_));
  }
  if (tx.rank() != 2 || tx.dim(1) != cfg_.in_dim)
    throw ContractError("encoder: input shape " + tx.shape_str() +
                        " does not match configured vector dim");
  Value h = t.relu(t.add_bias(t.matmul(x, leaf(t, w1_)), leaf(t, b1_)));
  return t.add_bias(t.matmul(h, leaf(t, w2_)), leaf(t, b2_));
}

NamedParams EncoderNet::named_parameters() {
  if (cfg_.mode == EncoderConfig::Mode::image) {
    return {{"conv1_w", &conv1_w_}, {"conv1_b", &conv1_b_},
            {"conv2_w", &conv2_w_}, {"conv2_b", &conv2_b_},
            {"conv3_w", &conv3_w_}, {"conv3_b", &conv3_b_},
            {"fc_w", &fc_w_},       {"fc_b", &fc_b_}};
  }
  return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_}, {"b2", &b2_}};
}

std::vector<Parameter*> EncoderNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::uint64_t EncoderNet::param_hash() const {
  return params_hash(as_const(const_cast<EncoderNet*>(this)->parameters()));
}

// ---------------------------------------------------------------------------
// LabelClassifierNet

LabelClassifierNet::LabelClassifierNet(std::size_t in_dim, std::size_t hidden,
                                       std::uint64_t seed)
    : in_dim_(in_dim), hidden_(hidden) {
  if (hidden_ == 0) {
    w1_ = Parameter("w", Tensor({in_dim_, 2}));
    b1_ = Parameter("b", Tensor({2}));
  } else {
    w1_ = Parameter("w1", Tensor({in_dim_, hidden_}));
    b1_ = Parameter("b1", Tensor({hidden_}));
    w2_ = Parameter("w2", Tensor({hidden_, 2}));
    b2_ = Parameter("b2", Tensor({2}));
  }
  reinit(seed);
}

void LabelClassifierNet::reinit(std::uint64_t seed) {
  Rng r1(mix_seed(seed, kTagW1));
  init_fan_in_uniform(w1_, in_dim_, r1);
  b1_.value.fill(0.0);
  if (hidden_ != 0) {
    Rng r2(mix_seed(seed, kTagW2));
    init_fan_in_uniform(w2_, hidden_, r2);
    b2_.value.fill(0.0);
  }
}

Value LabelClassifierNet::forward(Tape& t, Value z) {
  const Tensor& tz = t.val(z);
  if (tz.rank() != 2 || tz.dim(1) != in_dim_)
    throw ContractError("classifier: feature shape " + tz.shape_str());
  if (hidden_ == 0)
    return t.add_bias(t.matmul(z, leaf(t, w1_)), leaf(t, b1_));
  Value h = t.relu(t.add_bias(t.matmul(z, leaf(t, w1_)), leaf(t, b1_)));
  return t.add_bias(t.matmul(h, leaf(t, w2_)), leaf(t, b2_));
}

NamedParams LabelClassifierNet::named_parameters() {
  if (hidden_ == 0) return {{"w", &w1_}, {"b", &b1_}};
  return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_}, {"b2", &b2_}};
}

std::vector<Parameter*> LabelClassifierNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::uint64_t LabelClassifierNet::param_hash() const {
  return params_hash(
      as_const(const_cast<LabelClassifierNet*>(this)->parameters()));
}

// ---------------------------------------------------------------------------
// DomainIndicatorNet

DomainIndicatorNet::DomainIndicatorNet(std::size_t dim, std::size_t hidden,
                                       std::uint64_t seed)
    : dim_(dim), hidden_(hidden == 0 ? dim : hidden) {
  w1_ = Parameter("w1", Tensor({dim_, hidden_}));
  b1_ = Parameter("b1", Tensor({hidden_}));
  w2_ = Parameter("w2", Tensor({hidden_, dim_}));
  b2_ = Parameter("b2", Tensor({dim_}));
  reinit(seed);
}

void DomainIndicatorNet::reinit(std::uint64_t seed) {
  Rng r1(mix_seed(seed, kTagW1));
  init_fan_in_uniform(w1_, dim_, r1);
  b1_.value.fill(0.0);
  Rng r2(mix_seed(seed, kTagW2));
  init_fan_in_uniform(w2_, hidden_, r2);
  b2_.value.fill(0.0);
}

Value DomainIndicatorNet::forward(Tape& t, Value z) {
  const Tensor& tz = t.val(z);
  if (tz.rank() != 2 || tz.dim(1) != dim_)
    throw ContractError("indicator: feature shape " + tz.shape_str());
  Value h = t.relu(t.add_bias(t.matmul(z, leaf(t, w1_)), leaf(t, b1_)));
  return t.sigmoid(t.add_bias(t.matmul(h, leaf(t, w2_)), leaf(t, b2_)));
}

NamedParams DomainIndicatorNet::named_parameters() {
  return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_}, {"b2", &b2_}};
}

std::vector<Parameter*> DomainIndicatorNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::uint64_t DomainIndicatorNet::param_hash() const {
  return params_hash(
      as_const(const_cast<DomainIndicatorNet*>(this)->parameters()));
}

// ---------------------------------------------------------------------------
// DiscriminatorNet

DiscriminatorNet::DiscriminatorNet(std::size_t hidden, std::uint64_t seed)
    : hidden_(hidden) {
  w1_ = Parameter("w1", Tensor({2, hidden_}));
  b1_ = Parameter("b1", Tensor({hidden_}));
  w2_ = Parameter("w2", Tensor({hidden_, hidden_}));
  b2_ = Parameter("b2", Tensor({hidden_}));
  w3_ = Parameter("w3", Tensor({hidden_, 2}));
  b3_ = Parameter("b3", Tensor({2}));
  reinit(seed);
}

void DiscriminatorNet::reinit(std::uint64_t seed) {
  Rng r1(mix_seed(seed, kTagW1));
  init_fan_in_uniform(w1_, 2, r1);
  b1_.value.fill(0.0);
  Rng r2(mix_seed(seed, kTagW2));
  init_fan_in_uniform(w2_, hidden_, r2);
  b2_.value.fill(0.0);
  Rng r3(mix_seed(seed, kTagW3));
  init_fan_in_uniform(w3_, hidden_, r3);
  b3_.value.fill(0.0);
}

void DiscriminatorNet::force_uniform_output() {
  w3_.value.fill(0.0);
  b3_.value.fill(0.0);
}

Value DiscriminatorNet::forward(Tape& t, Value logits) {
  const Tensor& tl = t.val(logits);
  if (tl.rank() != 2 || tl.dim(1) != 2)
    throw ContractError("discriminator: expects (N,2) logits, got " +
                        tl.shape_str());
  Value h = t.relu(t.add_bias(t.matmul(logits, leaf(t, w1_)), leaf(t, b1_)));
  h = t.relu(t.add_bias(t.matmul(h, leaf(t, w2_)), leaf(t, b2_)));
  return t.add_bias(t.matmul(h, leaf(t, w3_)), leaf(t, b3_));
}

NamedParams DiscriminatorNet::named_parameters() {
  return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_},
          {"b2", &b2_}, {"w3", &w3_}, {"b3", &b3_}};
}

std::vector<Parameter*> DiscriminatorNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::uint64_t DiscriminatorNet::param_hash() const {
  return params_hash(
      as_const(const_cast<DiscriminatorNet*>(this)->parameters()));
}

// ---------------------------------------------------------------------------
// DecoderNet

DecoderNet::DecoderNet(DecoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.mode == EncoderConfig::Mode::image) {
    if (cfg_.out_h % 4 != 0 || cfg_.out_w % 4 != 0)
      throw ContractError("image decoder needs H,W divisible by 4");
    const std::size_t h0 = cfg_.out_h / 4, w0 = cfg_.out_w / 4;
    fc_w_ = Parameter("fc_w", Tensor({2 * cfg_.latent_dim, cfg_.g1 * h0 * w0}));
    fc_b_ = Parameter("fc_b", Tensor({cfg_.g1 * h0 * w0}));
    conv1_w_ = Parameter("conv1_w", Tensor({cfg_.g2, cfg_.g1, 3, 3}));
    conv1_b_ = Parameter("conv1_b", Tensor({cfg_.g2}));
    conv2_w_ = Parameter("conv2_w", Tensor({cfg_.out_c, cfg_.g2, 3, 3}));
    conv2_b_ = Parameter("conv2_b", Tensor({cfg_.out_c}));
  } else {
    w1_ = Parameter("w1", Tensor({2 * cfg_.latent_dim, cfg_.hidden}));
    b1_ = Parameter("b1", Tensor({cfg_.hidden}));
    w2_ = Parameter("w2", Tensor({cfg_.hidden, cfg_.out_dim}));
    b2_ = Parameter("b2", Tensor({cfg_.out_dim}));
  }
  reinit(seed);
}

void DecoderNet::reinit(std::uint64_t seed) {
  if (cfg_.mode == EncoderConfig::Mode::image) {
    Rng r1(mix_seed(seed, kTagFc));
    init_fan_in_uniform(fc_w_, 2 * cfg_.latent_dim, r1);
    fc_b_.value.fill(0.0);
    Rng r2(mix_seed(seed, kTagConv1));
    init_fan_in_uniform(conv1_w_, cfg_.g1 * 9, r2);
    conv1_b_.value.fill(0.0);
    Rng r3(mix_seed(seed, kTagConv2));
    init_fan_in_uniform(conv2_w_, cfg_.g2 * 9, r3);
    conv2_b_.value.fill(0.0);
  } else {
    Rng r1(mix_seed(seed, kTagW1));
    init_fan_in_uniform(w1_, 2 * cfg_.latent_dim, r1);
    b1_.value.fill(0.0);
    Rng r2(mix_seed(seed, kTagW2));
    init_fan_in_uniform(w2_, cfg_.hidden, r2);
    b2_.value.fill(0.0);
  }
}

Value DecoderNet::forward(Tape& t, Value z) {
  const Tensor& tz = t.val(z);
  if (tz.rank() != 2 || tz.dim(1) != 2 * cfg_.latent_dim)
    throw ContractError("decoder: expects (N,2D) input, got " +
                        tz.shape_str());
  const std::size_t n = tz.dim(0);
  if (cfg_.mode == EncoderConfig::Mode::image) {
    const std::size_t h0 = cfg_.out_h / 4, w0 = cfg_.out_w / 4;
    Value h = t.relu(t.add_bias(t.matmul(z, leaf(t, fc_w_)), leaf(t, fc_b_)));
    h = t.reshape(h, {n, cfg_.g1, h0, w0});
    h = t.upsample_nearest2(h);
    h = t.relu(t.conv2d(h, leaf(t, conv1_w_), leaf(t, conv1_b_), 1, 1));
    h = t.upsample_nearest2(h);
    h = t.conv2d(h, leaf(t, conv2_w_), leaf(t, conv2_b_), 1, 1);
    return t.sigmoid(h);  // image data lives in [0,1]
  }
  Value h = t.relu(t.add_bias(t.matmul(z, leaf(t, w1_)), leaf(t, b1_)));
  return t.add_bias(t.matmul(h, leaf(t, w2_)), leaf(t, b2_));
}

NamedParams DecoderNet::named_parameters() {
  if (cfg_.mode == EncoderConfig::Mode::image) {
    return {{"fc_w", &fc_w_},       {"fc_b", &fc_b_},
            {"conv1_w", &conv1_w_}, {"conv1_b", &conv1_b_},
            {"conv2_w", &conv2_w_}, {"conv2_b", &conv2_b_}};
  }
  return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_}, {"b2", &b2_}};
}

std::vector<Parameter*> DecoderNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

std::uint64_t DecoderNet::param_hash() const {
  return params_hash(as_const(const_cast<DecoderNet*>(this)->parameters()));
}

// ---------------------------------------------------------------------------
// ModelBundle

DecoderConfig ArchConfig::decoder_config() const {
  DecoderConfig d;
  d.mode = encoder.mode;
  d.latent_dim = encoder.out_dim;
  d.out_h = encoder.in_h;
  d.out_w = encoder.in_w;
  d.out_c = encoder.in_c;
  d.g1 = decoder_g1;
  d.g2 = decoder_g2;
  d.out_dim = encoder.in_dim;
  d.hidden = decoder_hidden;
  return d;
}

ModelBundle ModelBundle::create(const ArchConfig& arch, std::uint64_t seed) {
  ModelBundle b;
  b.arch = arch;
  b.source_encoder = EncoderNet(arch.encoder, mix_seed(seed, 1));
  b.source_classifier =
      LabelClassifierNet(arch.encoder.out_dim, arch.classifier_hidden,
                         mix_seed(seed, 2));
  b.target_encoder = EncoderNet(arch.encoder, mix_seed(seed, 3));
  b.target_classifier =
      LabelClassifierNet(arch.encoder.out_dim, arch.classifier_hidden,
                         mix_seed(seed, 4));
  b.indicator = DomainIndicatorNet(arch.encoder.out_dim,
                                   arch.indicator_width(), mix_seed(seed, 5));
  b.discriminator = DiscriminatorNet(arch.disc_hidden, mix_seed(seed, 6));
  return b;
}

NamedParams ModelBundle::named_parameters() {
  NamedParams out;
  auto append = [&out](const std::string& prefix, NamedParams nps) {
    for (auto& [name, p] : nps) out.emplace_back(prefix + "." + name, p);
  };
  append("source_encoder", source_encoder.named_parameters());
  append("source_classifier", source_classifier.named_parameters());
  append("target_encoder", target_encoder.named_parameters());
  append("target_classifier", target_classifier.named_parameters());
  append("indicator", indicator.named_parameters());
  append("discriminator", discriminator.named_parameters());
  return out;
}

std::vector<Parameter*> ModelBundle::source_params() {
  auto out = source_encoder.parameters();
  auto cls = source_classifier.parameters();
  out.insert(out.end(), cls.begin(), cls.end());
  return out;
}

std::vector<Parameter*> ModelBundle::target_params() {
  auto out = target_encoder.parameters();
  auto cls = target_classifier.parameters();
  out.insert(out.end(), cls.begin(), cls.end());
  auto ind = indicator.parameters();
  out.insert(out.end(), ind.begin(), ind.end());
  return out;
}

std::uint64_t ModelBundle::source_hash() const {
  auto* self = const_cast<ModelBundle*>(this);
  return params_hash(self->source_params());
}

std::uint64_t ModelBundle::target_hash() const {
  auto* self = const_cast<ModelBundle*>(this);
  return params_hash(self->target_params());
}

std::uint64_t ModelBundle::disc_hash() const {
  return discriminator.param_hash();
}

void init_target_from_source(ModelBundle& bundle, std::uint64_t f_seed) {
  copy_parameters(bundle.target_encoder, bundle.source_encoder);
  copy_parameters(bundle.target_classifier, bundle.source_classifier);
  bundle.indicator.reinit(f_seed);
  bundle.source_encoder.set_frozen(true);
  bundle.source_classifier.set_frozen(true);
}

namespace {
void copy_named(NamedParams dst, NamedParams src) {
  for (std::size_t i = 0; i < dst.size(); ++i)
    dst[i].second->value = src[i].second->value;
}
}  // namespace

void copy_parameters(EncoderNet& dst, const EncoderNet& src) {
  if (!(dst.config() == src.config()))
    throw ContractError("encoder copy: architecture mismatch");
  copy_named(dst.named_parameters(),
             const_cast<EncoderNet&>(src).named_parameters());
}

void copy_parameters(LabelClassifierNet& dst, const LabelClassifierNet& src) {
  if (dst.in_dim() != src.in_dim() || dst.hidden() != src.hidden())
    throw ContractError("classifier copy: architecture mismatch");
  copy_named(dst.named_parameters(),
             const_cast<LabelClassifierNet&>(src).named_parameters());
}

}  // namespace cda::nn
