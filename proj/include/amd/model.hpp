#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "amd/optim.hpp"
#include "amd/tape.hpp"
#include "amd/tensor.hpp"

namespace amd {

enum class Role { teacher, student };

inline constexpr std::size_t kTeacherWidth = 16;
inline constexpr std::size_t kStudentWidth = 8;
inline constexpr std::size_t kImageChannels = 3;

struct ModelOutput {
  Tensor feature;  ///< neck feature [N,C,H/4,W/4]
  Tensor logits;   ///< objectness logits [N,1,H/4,W/4]
};

/// Three conv3x3+ReLU stages with 2x average pooling between them, followed
/// by a 1x1 objectness head. The post-ReLU output of the third stage is the
/// neck feature used for distillation.
class ToyDetector {
 public:
  ToyDetector(std::size_t width, std::uint64_t seed);
  /// Wraps an existing parameter set (e.g. loaded from disk).
  explicit ToyDetector(ParamSet params);

  std::size_t width() const { return width_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  ModelOutput forward(Tape& tape, const Tensor& images) const;

  /// Stops gradient tracking for all parameters.
  void freeze() { params_.set_requires_grad(false); }

 private:
  std::size_t width_;
  ParamSet params_;
};

ToyDetector build_model(Role role, std::uint64_t seed);

/// Mean binary cross-entropy with logits over all cells.
Tensor task_loss(Tape& tape, const Tensor& logits, const Tensor& labels);

/// Flat little-endian weight file: "AMDW", u32 version, u32 count, then per
/// tensor: u16 name length, name bytes, u8 rank, u32 extents, f64 payload.
inline constexpr std::uint32_t kWeightsVersion = 1;

std::vector<unsigned char> encode_weights(const ParamSet& params);
ParamSet decode_weights(const std::vector<unsigned char>& bytes);
void save_weights(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_weights(const std::filesystem::path& path);

}  // namespace amd
