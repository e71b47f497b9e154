#include "amd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "amd/ops.hpp"

namespace amd {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::pair<E, std::string_view> (&table)[N], const char* what) {
  for (const auto& [value, name] : table)
    if (name == s) return value;
  std::string allowed;
  for (const auto& [value, name] : table) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(s) + "' (expected one of: " +
                              allowed + ")");
}

constexpr std::pair<MaskPolicy, std::string_view> kMaskPolicies[] = {
    {MaskPolicy::adaptive, "adaptive"}, {MaskPolicy::random, "random"}, {MaskPolicy::none, "none"}};
constexpr std::pair<GenBlockKind, std::string_view> kGenBlocks[] = {{GenBlockKind::dense3x3_x2, "dense3x3_x2"},
                                                                    {GenBlockKind::dense3x3_x1, "dense3x3_x1"},
                                                                    {GenBlockKind::mbconv_dw5, "mbconv_dw5"}};
constexpr std::pair<ClueLocation, std::string_view> kLocations[] = {{ClueLocation::after, "after"},
                                                                    {ClueLocation::within, "within"}};
constexpr std::pair<FeatureLoss, std::string_view> kFeatureLosses[] = {{FeatureLoss::generative, "generative"},
                                                                       {FeatureLoss::imitation, "imitation"}};

template <typename E, std::size_t N>
std::string_view name_of(E v, const std::pair<E, std::string_view> (&table)[N]) {
  for (const auto& [value, name] : table)
    if (value == v) return name;
  return "?";
}

void require_feature(const Tensor& t, const char* op) {
  if (!t.defined() || t.rank() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected a [N,C,H,W] feature, got " +
                                (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
  }
}

// Teacher tensors never pass gradient into the distillation branch.
Tensor constant_view(const Tensor& t) { return t.requires_grad() ? t.clone() : t; }

}  // namespace

std::string_view to_string(MaskPolicy v) { return name_of(v, kMaskPolicies); }
std::string_view to_string(GenBlockKind v) { return name_of(v, kGenBlocks); }
std::string_view to_string(ClueLocation v) { return name_of(v, kLocations); }
std::string_view to_string(FeatureLoss v) { return name_of(v, kFeatureLosses); }
MaskPolicy parse_mask_policy(std::string_view s) { return parse_enum(s, kMaskPolicies, "mask_policy"); }
GenBlockKind parse_gen_block(std::string_view s) { return parse_enum(s, kGenBlocks, "gen_block"); }
ClueLocation parse_clue_location(std::string_view s) { return parse_enum(s, kLocations, "clue_location"); }
FeatureLoss parse_feature_loss(std::string_view s) { return parse_enum(s, kFeatureLosses, "feature_loss"); }

void DistillConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("invalid " + field + ": " + why);
  };
  if (alpha && (!(*alpha >= 0.0) || !std::isfinite(*alpha))) fail("alpha", "must be finite and >= 0");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) fail("lambda", "must be finite and > 0");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature", "must be finite and > 0");
  if (mask_ratio) {
    if (mask_policy != MaskPolicy::random) fail("mask_ratio", "only meaningful with mask_policy 'random'");
    if (!(*mask_ratio >= 0.0 && *mask_ratio <= 1.0)) fail("mask_ratio", "must lie in [0, 1]");
  }
  if (se_reduction == 0) fail("se_reduction", "must be >= 1");
  if (clue_location == ClueLocation::within && gen_block != GenBlockKind::dense3x3_x2) {
    fail("clue_location", "'within' requires gen_block 'dense3x3_x2'");
  }
  if (feature_loss == FeatureLoss::imitation && mask_policy != MaskPolicy::none) {
    fail("feature_loss", "'imitation' requires mask_policy 'none'");
  }
}

std::size_t BinaryMask::zeros(std::size_t sample) const {
  const std::size_t hw = mask.dim(2) * mask.dim(3);
  const auto v = mask.data().subspan(sample * hw, hw);
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), 0.0));
}

std::size_t BinaryMask::total_zeros() const {
  const auto v = mask.data();
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), 0.0));
}

double BinaryMask::masked_fraction() const {
  return static_cast<double>(total_zeros()) / static_cast<double>(mask.numel());
}

SeParams SeParams::init(std::size_t channels, std::size_t reduction, Rng& rng) {
  const std::size_t hidden = std::max<std::size_t>(1, channels / std::min(reduction, channels));
  ParamSet tmp;
  SeParams p;
  p.squeeze_w = tmp.add_glorot("squeeze.weight", {hidden, channels}, channels, hidden, rng);
  p.squeeze_b = tmp.add("squeeze.bias", Tensor::zeros({hidden}));
  p.excite_w = tmp.add_glorot("excite.weight", {channels, hidden}, hidden, channels, rng);
  p.excite_b = tmp.add("excite.bias", Tensor::zeros({channels}));
  return p;
}

void SeParams::register_in(ParamSet& set, std::string_view prefix) const {
  const std::string p(prefix);
  set.add(p + "squeeze.weight", squeeze_w);
  set.add(p + "squeeze.bias", squeeze_b);
  set.add(p + "excite.weight", excite_w);
  set.add(p + "excite.bias", excite_b);
}

GenBlockParams GenBlockParams::init(GenBlockKind kind, std::size_t channels, Rng& rng) {
  GenBlockParams b;
  b.kind = kind;
  b.channels = channels;
  const std::size_t c = channels;
  auto conv = [&](const std::string& name, std::size_t cout, std::size_t cin, std::size_t k) {
    b.params.add_glorot(name + ".weight", {cout, cin, k, k}, cin * k * k, cout * k * k, rng);
    b.params.add(name + ".bias", Tensor::zeros({cout}));
  };
  switch (kind) {
    case GenBlockKind::dense3x3_x2:
      conv("conv1", c, c, 3);
      conv("conv2", c, c, 3);
      break;
    case GenBlockKind::dense3x3_x1:
      conv("conv1", c, c, 3);
      break;
    case GenBlockKind::mbconv_dw5: {
      const std::size_t e = c * kMbconvExpansion;
      conv("expand", e, c, 1);
      b.params.add_glorot("depthwise.weight", {e, 1, 5, 5}, 25, 25, rng);
      b.params.add("depthwise.bias", Tensor::zeros({e}));
      conv("project", c, e, 1);
      break;
    }
  }
  return b;
}

Tensor channel_abs_mean(const Tensor& teacher_feat) {
  require_feature(teacher_feat, "channel_abs_mean");
  const std::size_t n = teacher_feat.dim(0), c = teacher_feat.dim(1), h = teacher_feat.dim(2),
                    w = teacher_feat.dim(3);
  Tensor out = Tensor::zeros({n, 1, h, w});
  const auto f = teacher_feat.data();
  auto g = out.data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t p = 0; p < h * w; ++p) g[s * h * w + p] += std::abs(f[(s * c + k) * h * w + p]);
  for (double& v : g) v /= static_cast<double>(c);
  return out;
}

SpatialAttention spatial_attention(const Tensor& g, double temperature) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("spatial_attention: temperature must be > 0, got " + std::to_string(temperature));
  }
  require_feature(g, "spatial_attention");
  if (g.dim(1) != 1) throw std::invalid_argument("spatial_attention: expected [N,1,H,W], got " + shape_str(g.shape()));
  const std::size_t n = g.dim(0), hw = g.dim(2) * g.dim(3);
  Tape scratch;
  Tensor probs = ops::softmax_temp(scratch, constant_view(g).reshaped({n, hw}), temperature);
  for (double& v : probs.data()) v *= static_cast<double>(hw);
  return SpatialAttention{probs.reshaped(g.shape())};
}

BinaryMask threshold_mask(const SpatialAttention& attn, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("threshold_mask: lambda must be > 0");
  Tensor m(attn.map.shape());
  const auto a = attn.map.data();
  auto mv = m.data();
  for (std::size_t i = 0; i < a.size(); ++i) mv[i] = a[i] > lambda ? 0.0 : 1.0;
  return BinaryMask{m};
}

BinaryMask random_mask_with_counts(std::size_t n, std::size_t h, std::size_t w,
                                   const std::vector<std::size_t>& zeros_per_sample, Rng& rng) {
  if (zeros_per_sample.size() != n) throw std::invalid_argument("random_mask: need one zero count per sample");
  const std::size_t hw = h * w;
  Tensor m = Tensor::ones({n, 1, h, w});
  auto mv = m.data();
  std::vector<std::size_t> idx(hw);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t k = zeros_per_sample[s];
    if (k > hw) throw std::invalid_argument("random_mask: zero count exceeds H*W");
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(hw - i));
      std::swap(idx[i], idx[j]);
      mv[s * hw + idx[i]] = 0.0;
    }
  }
  return BinaryMask{m};
}

BinaryMask random_mask(std::size_t n, std::size_t h, std::size_t w, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("random_mask: ratio must lie in [0, 1]");
  Rng rng(seed);
  const auto k = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(h * w)));
  return random_mask_with_counts(n, h, w, std::vector<std::size_t>(n, k), rng);
}

Tensor apply_mask(Tape& tape, const Tensor& student_feat, const BinaryMask& m) {
  require_feature(student_feat, "apply_mask");
  const Shape& ms = m.mask.shape();
  if (ms.size() != 4 || ms[0] != student_feat.dim(0) || ms[1] != 1 || ms[2] != student_feat.dim(2) ||
      ms[3] != student_feat.dim(3)) {
    throw std::invalid_argument("apply_mask: mask " + shape_str(ms) + " does not match feature extents " +
                                shape_str(student_feat.shape()));
  }
  return ops::hadamard(tape, student_feat, constant_view(m.mask));
}

ChannelClue se_clue(Tape& tape, const Tensor& teacher_feat, const SeParams& se, bool hidden_relu) {
  require_feature(teacher_feat, "se_clue");
  Tensor pooled = ops::global_avg_pool(tape, constant_view(teacher_feat));
  Tensor hidden = ops::linear(tape, pooled, se.squeeze_w, se.squeeze_b);
  if (hidden_relu) hidden = ops::relu(tape, hidden);
  Tensor logits = ops::linear(tape, hidden, se.excite_w, se.excite_b);
  return ChannelClue{ops::sigmoid(tape, logits)};
}

Tensor generate(Tape& tape, const Tensor& masked_feat, const GenBlockParams& block, const ChannelClue* clue,
                ClueLocation location) {
  require_feature(masked_feat, "generate");
  if (location == ClueLocation::within && block.kind != GenBlockKind::dense3x3_x2) {
    throw std::invalid_argument("generate: clue location 'within' requires the two-conv dense block, got " +
                                std::string(to_string(block.kind)));
  }
  const ParamSet& p = block.params;
  Tensor out;
  switch (block.kind) {
    case GenBlockKind::dense3x3_x2: {
      Tensor h = ops::relu(tape, ops::conv2d(tape, masked_feat, p.get("conv1.weight"), p.get("conv1.bias"), 1));
      if (clue && location == ClueLocation::within) h = ops::hadamard(tape, h, clue->clue);
      out = ops::conv2d(tape, h, p.get("conv2.weight"), p.get("conv2.bias"), 1);
      break;
    }
    case GenBlockKind::dense3x3_x1:
      out = ops::conv2d(tape, masked_feat, p.get("conv1.weight"), p.get("conv1.bias"), 1);
      break;
    case GenBlockKind::mbconv_dw5: {
      Tensor h = ops::relu(tape, ops::conv2d(tape, masked_feat, p.get("expand.weight"), p.get("expand.bias"), 0));
      h = ops::relu(tape, ops::depthwise_conv2d(tape, h, p.get("depthwise.weight"), p.get("depthwise.bias"), 2));
      out = ops::conv2d(tape, h, p.get("project.weight"), p.get("project.bias"), 0);
      break;
    }
  }
  if (clue && location == ClueLocation::after) out = ops::hadamard(tape, out, clue->clue);
  return out;
}

Tensor adaptation(Tape& tape, const Tensor& student_feat, const Tensor& weight) {
  require_feature(student_feat, "adaptation");
  if (!weight.defined()) {
    return student_feat;
  }
  return ops::conv2d(tape, student_feat, weight, Tensor{}, 0);
}

Tensor distill_loss(Tape& tape, const Tensor& teacher_feat, const Tensor& generated) {
  return ops::sum_squared_error(tape, constant_view(teacher_feat), generated);
}

Tensor basic_fea_loss(Tape& tape, const Tensor& teacher_feat, const Tensor& student_feat, const Tensor& adapt_weight) {
  require_feature(teacher_feat, "basic_fea_loss");
  Tensor aligned = adaptation(tape, student_feat, adapt_weight);
  require_same_shape(teacher_feat, aligned, "basic_fea_loss");
  Tensor sse = ops::sum_squared_error(tape, constant_view(teacher_feat), aligned);
  return ops::scale(tape, sse, 1.0 / static_cast<double>(teacher_feat.numel()));
}

Tensor overall_loss(Tape& tape, const Tensor& l_fea, const Tensor& l_original, double alpha) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("overall_loss: alpha must be >= 0");
  return ops::add(tape, ops::scale(tape, l_fea, alpha), l_original);
}

Distiller::Distiller(DistillConfig config, std::size_t student_channels, std::size_t teacher_channels)
    : config_(std::move(config)), teacher_channels_(teacher_channels) {
  config_.validate();
  Rng rng = Rng::derive(config_.seed, "distiller");
  adapt_w_ = params_.add_glorot("adapt.weight", {teacher_channels, student_channels, 1, 1}, student_channels,
                                teacher_channels, rng);
  if (config_.feature_loss == FeatureLoss::generative) {
    gen_ = GenBlockParams::init(config_.gen_block, teacher_channels, rng);
    params_.extend(gen_.params, "gen.");
    if (config_.ada_channel) {
      se_ = SeParams::init(teacher_channels, config_.se_reduction, rng);
      se_.register_in(params_, "se.");
    }
  }
}

BinaryMask Distiller::make_mask(const Tensor& teacher_feat, Rng& rng) const {
  require_feature(teacher_feat, "make_mask");
  const std::size_t n = teacher_feat.dim(0), h = teacher_feat.dim(2), w = teacher_feat.dim(3);
  auto adaptive = [&] {
    return threshold_mask(spatial_attention(channel_abs_mean(teacher_feat), config_.temperature), config_.lambda);
  };
  switch (config_.mask_policy) {
    case MaskPolicy::none:
      return BinaryMask{Tensor::ones({n, 1, h, w})};
    case MaskPolicy::adaptive:
      return adaptive();
    case MaskPolicy::random: {
      std::vector<std::size_t> counts(n);
      if (config_.mask_ratio) {
        const auto k = static_cast<std::size_t>(std::lround(*config_.mask_ratio * static_cast<double>(h * w)));
        std::fill(counts.begin(), counts.end(), k);
      } else {
        const BinaryMask budget = adaptive();
        for (std::size_t s = 0; s < n; ++s) counts[s] = budget.zeros(s);
      }
      return random_mask_with_counts(n, h, w, counts, rng);
    }
  }
  throw std::logic_error("unreachable mask policy");
}

FeatureTerm Distiller::forward(Tape& tape, const Tensor& teacher_feat, const Tensor& student_feat,
                               Rng& mask_rng) const {
  require_feature(teacher_feat, "distiller");
  if (teacher_feat.dim(1) != teacher_channels_) {
    throw std::invalid_argument("distiller: teacher feature has " + std::to_string(teacher_feat.dim(1)) +
                                " channels, expected " + std::to_string(teacher_channels_));
  }
  if (config_.feature_loss == FeatureLoss::imitation) {
    Tensor loss = basic_fea_loss(tape, teacher_feat, student_feat, adapt_w_);
    Tape scratch;
    Tensor rec = adaptation(scratch, student_feat, adapt_w_.clone());
    const std::size_t n = teacher_feat.dim(0), h = teacher_feat.dim(2), w = teacher_feat.dim(3);
    return FeatureTerm{loss, rec, BinaryMask{Tensor::ones({n, 1, h, w})}};
  }
  BinaryMask mask = make_mask(teacher_feat, mask_rng);
  Tensor aligned = adaptation(tape, student_feat, adapt_w_);
  Tensor masked = apply_mask(tape, aligned, mask);
  std::optional<ChannelClue> clue;
  if (config_.ada_channel) clue = se_clue(tape, teacher_feat, se_, config_.se_relu);
  Tensor rec = generate(tape, masked, gen_, clue ? &*clue : nullptr, config_.clue_location);
  Tensor loss = distill_loss(tape, teacher_feat, rec);
  return FeatureTerm{loss, rec, std::move(mask)};
}

}  // namespace amd
