#include "amd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "amd/binio.hpp"
#include "amd/rng.hpp"

namespace amd {

namespace {

constexpr std::size_t kPixels = kImageSize * kImageSize;
constexpr std::size_t kCells = kGridSize * kGridSize;

void check_options(const SynthOptions& o) {
  if (o.min_blobs > o.max_blobs) throw std::invalid_argument("synth: min_blobs > max_blobs");
  if (o.noise < 0.0 || o.noise > 1.0) throw std::invalid_argument("synth: noise must lie in [0, 1]");
  if (!(o.min_radius > 0.0) || o.min_radius > o.max_radius) throw std::invalid_argument("synth: bad radius range");
}

}  // namespace

Tensor derive_labels(const std::vector<Blob>& blobs) {
  Tensor labels = Tensor::zeros({1, kGridSize, kGridSize});
  for (const Blob& b : blobs) {
    const auto col = static_cast<std::size_t>(std::floor(b.cx / static_cast<double>(kCellSize)));
    const auto row = static_cast<std::size_t>(std::floor(b.cy / static_cast<double>(kCellSize)));
    if (row < kGridSize && col < kGridSize) labels[row * kGridSize + col] = 1.0;
  }
  return labels;
}

BlobScene gen_scene(std::uint64_t seed, std::size_t index, const SynthOptions& opts) {
  check_options(opts);
  Rng rng = Rng::derive(seed ^ (0x9E3779B97F4A7C15ULL * (index + 1)), "scene");
  BlobScene scene;
  scene.image = Tensor::zeros({3, kImageSize, kImageSize});
  auto px = scene.image.data();
  for (double& v : px) v = opts.noise * rng.uniform();

  const std::size_t nblobs = opts.min_blobs + static_cast<std::size_t>(rng.below(opts.max_blobs - opts.min_blobs + 1));
  for (std::size_t k = 0; k < nblobs; ++k) {
    Blob b;
    // Centers stay at least one pixel away from every cell border.
    const auto cell_x = static_cast<double>(rng.below(kGridSize));
    const auto cell_y = static_cast<double>(rng.below(kGridSize));
    b.cx = cell_x * kCellSize + rng.uniform(1.0, kCellSize - 1.0);
    b.cy = cell_y * kCellSize + rng.uniform(1.0, kCellSize - 1.0);
    b.radius = rng.uniform(opts.min_radius, opts.max_radius);
    for (double& c : b.color) c = rng.uniform(0.25, 1.0);
    scene.blobs.push_back(b);

    for (std::size_t y = 0; y < kImageSize; ++y) {
      for (std::size_t x = 0; x < kImageSize; ++x) {
        const double dx = static_cast<double>(x) + 0.5 - b.cx;
        const double dy = static_cast<double>(y) + 0.5 - b.cy;
        const double cover = std::clamp(b.radius + 0.5 - std::sqrt(dx * dx + dy * dy), 0.0, 1.0);
        if (cover == 0.0) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          double& v = px[ch * kPixels + y * kImageSize + x];
          v = v * (1.0 - cover) + b.color[ch] * cover;
        }
      }
    }
  }
  for (double& v : px) v = std::clamp(v, 0.0, 1.0);
  scene.labels = derive_labels(scene.blobs);
  return scene;
}

Dataset gen_range(std::uint64_t seed, std::size_t begin, std::size_t end, const SynthOptions& opts) {
  Dataset out;
  out.reserve(end > begin ? end - begin : 0);
  for (std::size_t i = begin; i < end; ++i) out.push_back(gen_scene(seed, i, opts));
  return out;
}

Dataset gen_dataset(std::uint64_t seed, std::size_t count, const SynthOptions& opts) {
  if (count == 0) throw std::invalid_argument("gen_dataset: count must be >= 1");
  return gen_range(seed, 0, count, opts);
}

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split: train fraction must lie in (0, 1)");
  }
  const auto cut = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(data.size())));
  return {Dataset(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(cut)),
          Dataset(data.begin() + static_cast<std::ptrdiff_t>(cut), data.end())};
}

std::pair<Tensor, Tensor> make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t b = indices.size();
  Tensor images({b, 3, kImageSize, kImageSize});
  Tensor labels({b, 1, kGridSize, kGridSize});
  auto iv = images.data();
  auto lv = labels.data();
  for (std::size_t i = 0; i < b; ++i) {
    const BlobScene& s = data.at(indices[i]);
    std::copy(s.image.data().begin(), s.image.data().end(), iv.begin() + static_cast<std::ptrdiff_t>(i * 3 * kPixels));
    std::copy(s.labels.data().begin(), s.labels.data().end(), lv.begin() + static_cast<std::ptrdiff_t>(i * kCells));
  }
  return {images, labels};
}

std::vector<unsigned char> encode_dataset(const Dataset& data) {
  ByteWriter w;
  w.put_bytes("AMDD");
  w.put_u32(kDatasetVersion);
  w.put_u32(static_cast<std::uint32_t>(data.size()));
  for (const BlobScene& s : data) {
    for (double v : s.image.data()) w.put_f64(v);
    for (double v : s.labels.data()) w.put_u8(v != 0.0 ? 1 : 0);
    w.put_u32(static_cast<std::uint32_t>(s.blobs.size()));
    for (const Blob& b : s.blobs) {
      w.put_f64(b.cx);
      w.put_f64(b.cy);
      w.put_f64(b.radius);
      for (double c : b.color) w.put_f64(c);
    }
  }
  return w.take();
}

Dataset decode_dataset(const std::vector<unsigned char>& bytes) {
  ByteReader r(bytes, "dataset file");
  if (r.get_bytes(4) != "AMDD") throw std::runtime_error("dataset file: bad magic");
  const std::uint32_t version = r.get_u32();
  if (version != kDatasetVersion) {
    throw std::runtime_error("dataset file: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.get_u32();
  Dataset data;
  data.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    BlobScene s;
    s.image = Tensor({3, kImageSize, kImageSize});
    for (double& v : s.image.data()) v = r.get_f64();
    s.labels = Tensor({1, kGridSize, kGridSize});
    for (double& v : s.labels.data()) {
      const std::uint8_t b = r.get_u8();
      if (b > 1) throw std::runtime_error("dataset file: label byte out of range");
      v = b;
    }
    const std::uint32_t nb = r.get_u32();
    for (std::uint32_t k = 0; k < nb; ++k) {
      Blob b;
      b.cx = r.get_f64();
      b.cy = r.get_f64();
      b.radius = r.get_f64();
      for (double& c : b.color) c = r.get_f64();
      s.blobs.push_back(b);
    }
    data.push_back(std::move(s));
  }
  if (!r.at_end()) throw std::runtime_error("dataset file: trailing bytes");
  return data;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  write_file_bytes(path, encode_dataset(data));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

}  // namespace amd
