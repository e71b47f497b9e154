#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "amd/tensor.hpp"

namespace amd {

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kCellSize = 4;
inline constexpr std::size_t kGridSize = kImageSize / kCellSize;

struct Blob {
  double cx = 0, cy = 0;  ///< center in pixel coordinates (pixel i spans [i, i+1))
  double radius = 0;
  std::array<double, 3> color{};
};

/// One synthetic image with per-cell objectness labels.
struct BlobScene {
  Tensor image;   ///< [3,32,32] in [0,1]
  Tensor labels;  ///< [1,8,8] in {0,1}
  std::vector<Blob> blobs;
};

struct SynthOptions {
  std::size_t min_blobs = 1;
  std::size_t max_blobs = 4;
  double noise = 0.1;  ///< background is uniform in [0, noise]
  double min_radius = 2.0;
  double max_radius = 5.0;
};

using Dataset = std::vector<BlobScene>;

/// Scene `index` of the stream identified by `seed`. Each scene has its own
/// derived generator, so any index range can be produced independently.
BlobScene gen_scene(std::uint64_t seed, std::size_t index, const SynthOptions& opts = {});
Dataset gen_range(std::uint64_t seed, std::size_t begin, std::size_t end, const SynthOptions& opts = {});
Dataset gen_dataset(std::uint64_t seed, std::size_t count, const SynthOptions& opts = {});

/// Cell (r, c) is 1 iff some blob center lies in it.
Tensor derive_labels(const std::vector<Blob>& blobs);

/// Prefix split: the first round(fraction * size) scenes go to train.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction);

/// Stacks the selected scenes into [B,3,32,32] images and [B,1,8,8] labels.
std::pair<Tensor, Tensor> make_batch(const Dataset& data, std::span<const std::size_t> indices);

/// "AMDD", u32 version, u32 count, then per scene: image f64 payload, label
/// bytes, u32 blob count and per blob cx, cy, radius, r, g, b as f64.
inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<unsigned char> encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::vector<unsigned char>& bytes);
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace amd
