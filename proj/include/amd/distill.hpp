#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "amd/optim.hpp"
#include "amd/rng.hpp"
#include "amd/tape.hpp"
#include "amd/tensor.hpp"

namespace amd {

enum class MaskPolicy { adaptive, random, none };
enum class GenBlockKind { dense3x3_x2, dense3x3_x1, mbconv_dw5 };
enum class ClueLocation { after, within };
/// generative: mask + generation block + unnormalized squared error.
/// imitation: adaptation layer only, CHW-normalized squared error.
enum class FeatureLoss { generative, imitation };

std::string_view to_string(MaskPolicy v);
std::string_view to_string(GenBlockKind v);
std::string_view to_string(ClueLocation v);
std::string_view to_string(FeatureLoss v);
MaskPolicy parse_mask_policy(std::string_view s);
GenBlockKind parse_gen_block(std::string_view s);
ClueLocation parse_clue_location(std::string_view s);
FeatureLoss parse_feature_loss(std::string_view s);

struct DistillConfig {
  /// Weight of the feature term in the overall loss. Empty means auto-balance:
  /// alpha is set on the first batch so that alpha * L_fea == L_task, then frozen.
  std::optional<double> alpha;
  double lambda = 1.0;
  double temperature = 0.5;
  MaskPolicy mask_policy = MaskPolicy::adaptive;
  /// Fraction of positions zeroed by the random policy. Empty means match the
  /// per-sample zero count of the adaptive mask for the same batch.
  std::optional<double> mask_ratio;
  bool ada_channel = true;
  GenBlockKind gen_block = GenBlockKind::dense3x3_x2;
  ClueLocation clue_location = ClueLocation::after;
  FeatureLoss feature_loss = FeatureLoss::generative;
  std::size_t se_reduction = 4;
  bool se_relu = true;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// A^S: [N,1,H,W], nonnegative, each sample sums to H*W.
struct SpatialAttention {
  Tensor map;
};

/// M: [N,1,H,W] in {0,1}; never requires grad.
struct BinaryMask {
  Tensor mask;
  std::size_t zeros(std::size_t sample) const;
  std::size_t total_zeros() const;
  double masked_fraction() const;
};

/// F_clue: [N,C] with entries in (0,1).
struct ChannelClue {
  Tensor clue;
};

/// Squeeze-and-excitation weights: squeeze C -> C/r, excite C/r -> C.
struct SeParams {
  Tensor squeeze_w, squeeze_b, excite_w, excite_b;

  static SeParams init(std::size_t channels, std::size_t reduction, Rng& rng);
  void register_in(ParamSet& set, std::string_view prefix) const;
};

/// Generation block weights. Names per kind:
///   dense3x3_x2: conv1.{weight,bias}, conv2.{weight,bias}
///   dense3x3_x1: conv1.{weight,bias}
///   mbconv_dw5:  expand.{weight,bias}, depthwise.{weight,bias}, project.{weight,bias}
struct GenBlockParams {
  GenBlockKind kind = GenBlockKind::dense3x3_x2;
  std::size_t channels = 0;
  ParamSet params;

  static GenBlockParams init(GenBlockKind kind, std::size_t channels, Rng& rng);
};

inline constexpr std::size_t kMbconvExpansion = 4;

/// G^S = mean_k |F^T_k| per position; [N,C,H,W] -> [N,1,H,W]. Teacher is constant.
Tensor channel_abs_mean(const Tensor& teacher_feat);

/// A^S = H*W * softmax(g / T) over the flattened H*W positions of each sample.
SpatialAttention spatial_attention(const Tensor& g, double temperature);

/// M = 0 where A^S > lambda (strict), 1 otherwise.
BinaryMask threshold_mask(const SpatialAttention& attn, double lambda);

/// Exactly round(ratio*H*W) zeros per sample at uniformly drawn positions.
BinaryMask random_mask(std::size_t n, std::size_t h, std::size_t w, double ratio, std::uint64_t seed);

/// Random mask with the given number of zeros for each sample.
BinaryMask random_mask_with_counts(std::size_t n, std::size_t h, std::size_t w,
                                   const std::vector<std::size_t>& zeros_per_sample, Rng& rng);

/// F^S_mask = F^S * M broadcast over channels.
Tensor apply_mask(Tape& tape, const Tensor& student_feat, const BinaryMask& m);

/// sigmoid(excite(relu?(squeeze(avgpool(F^T))))). Gradients reach the SE
/// weights only; the teacher feature is treated as constant.
ChannelClue se_clue(Tape& tape, const Tensor& teacher_feat, const SeParams& se, bool hidden_relu = true);

/// Runs the generation block on the masked feature and fuses the clue (if any)
/// after the block or between its two convolutions.
Tensor generate(Tape& tape, const Tensor& masked_feat, const GenBlockParams& block, const ChannelClue* clue,
                ClueLocation location);

/// 1x1 projection of student channels to teacher channels. An undefined weight
/// means identity, which requires equal channel counts.
Tensor adaptation(Tape& tape, const Tensor& student_feat, const Tensor& weight);

/// sum over N,C,H,W of (F^T - generated)^2.
Tensor distill_loss(Tape& tape, const Tensor& teacher_feat, const Tensor& generated);

/// Squared error after adaptation normalized by C*H*W per sample, averaged
/// over the batch.
Tensor basic_fea_loss(Tape& tape, const Tensor& teacher_feat, const Tensor& student_feat, const Tensor& adapt_weight);

/// alpha * l_fea + l_original.
Tensor overall_loss(Tape& tape, const Tensor& l_fea, const Tensor& l_original, double alpha);

/// Result of one forward pass of the distillation branch.
struct FeatureTerm {
  Tensor loss;
  Tensor reconstruction;
  BinaryMask mask;
};

/// Trainable distillation branch: adaptation layer, SE clue path and
/// generation block, wired according to a DistillConfig.
class Distiller {
 public:
  Distiller(DistillConfig config, std::size_t student_channels, std::size_t teacher_channels);

  const DistillConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// Mask for a batch of teacher features under the configured policy.
  BinaryMask make_mask(const Tensor& teacher_feat, Rng& rng) const;

  FeatureTerm forward(Tape& tape, const Tensor& teacher_feat, const Tensor& student_feat, Rng& mask_rng) const;

 private:
  DistillConfig config_;
  std::size_t teacher_channels_;
  Tensor adapt_w_;
  SeParams se_;
  GenBlockParams gen_;
  ParamSet params_;
};

}  // namespace amd
