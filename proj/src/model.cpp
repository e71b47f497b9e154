#include "amd/model.hpp"

#include <stdexcept>

#include "amd/binio.hpp"
#include "amd/ops.hpp"
#include "amd/rng.hpp"

namespace amd {

namespace {

constexpr const char* kConvNames[] = {"conv1", "conv2", "conv3"};

void add_conv(ParamSet& p, const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, Rng& rng) {
  p.add_glorot(name + ".weight", {cout, cin, k, k}, cin * k * k, cout * k * k, rng);
  p.add(name + ".bias", Tensor::zeros({cout}));
}

std::size_t infer_width(const ParamSet& params) {
  for (const char* name : {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "conv3.weight",
                           "conv3.bias", "head.weight", "head.bias"}) {
    if (!params.contains(name)) throw std::invalid_argument(std::string("model weights missing '") + name + "'");
  }
  const Tensor& w1 = params.get("conv1.weight");
  if (w1.rank() != 4 || w1.dim(1) != kImageChannels) {
    throw std::invalid_argument("conv1.weight has unexpected shape " + shape_str(w1.shape()));
  }
  const std::size_t c = w1.dim(0);
  const Shape expect_w[] = {{c, kImageChannels, 3, 3}, {c, c, 3, 3}, {c, c, 3, 3}};
  for (int i = 0; i < 3; ++i) {
    const std::string n = kConvNames[i];
    if (params.get(n + ".weight").shape() != expect_w[i] || params.get(n + ".bias").shape() != Shape{c}) {
      throw std::invalid_argument("model weights for " + n + " do not match width " + std::to_string(c));
    }
  }
  if (params.get("head.weight").shape() != Shape{1, c, 1, 1} || params.get("head.bias").shape() != Shape{1}) {
    throw std::invalid_argument("head weights do not match width " + std::to_string(c));
  }
  return c;
}

}  // namespace

ToyDetector::ToyDetector(std::size_t width, std::uint64_t seed) : width_(width) {
  Rng rng = Rng::derive(seed, "model-init");
  add_conv(params_, "conv1", width, kImageChannels, 3, rng);
  add_conv(params_, "conv2", width, width, 3, rng);
  add_conv(params_, "conv3", width, width, 3, rng);
  add_conv(params_, "head", 1, width, 1, rng);
}

ToyDetector::ToyDetector(ParamSet params) : width_(infer_width(params)), params_(std::move(params)) {}

ModelOutput ToyDetector::forward(Tape& tape, const Tensor& images) const {
  if (!images.defined() || images.rank() != 4 || images.dim(1) != kImageChannels) {
    throw std::invalid_argument("forward: expected images [N,3,H,W], got " +
                                (images.defined() ? shape_str(images.shape()) : std::string("<undefined>")));
  }
  if (images.dim(2) % 4 != 0 || images.dim(3) % 4 != 0) {
    throw std::invalid_argument("forward: image extents must be divisible by 4, got " + shape_str(images.shape()));
  }
  const ParamSet& p = params_;
  auto stage = [&](const Tensor& x, const std::string& name) {
    return ops::relu(tape, ops::conv2d(tape, x, p.get(name + ".weight"), p.get(name + ".bias"), 1));
  };
  Tensor x = stage(images, "conv1");
  x = ops::avg_pool2(tape, x);
  x = stage(x, "conv2");
  x = ops::avg_pool2(tape, x);
  Tensor feature = stage(x, "conv3");
  Tensor logits = ops::conv2d(tape, feature, p.get("head.weight"), p.get("head.bias"), 0);
  return ModelOutput{feature, logits};
}

ToyDetector build_model(Role role, std::uint64_t seed) {
  return ToyDetector(role == Role::teacher ? kTeacherWidth : kStudentWidth, seed);
}

Tensor task_loss(Tape& tape, const Tensor& logits, const Tensor& labels) {
  return ops::bce_with_logits(tape, logits, labels);
}

std::vector<unsigned char> encode_weights(const ParamSet& params) {
  ByteWriter w;
  w.put_bytes("AMDW");
  w.put_u32(kWeightsVersion);
  w.put_u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    if (e.name.size() > 0xFFFF) throw std::invalid_argument("parameter name too long: " + e.name);
    w.put_u16(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name);
    w.put_u8(static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) w.put_u32(static_cast<std::uint32_t>(d));
    for (double v : e.value.data()) w.put_f64(v);
  }
  return w.take();
}

ParamSet decode_weights(const std::vector<unsigned char>& bytes) {
  ByteReader r(bytes, "weight file");
  if (r.get_bytes(4) != "AMDW") throw std::runtime_error("weight file: bad magic");
  const std::uint32_t version = r.get_u32();
  if (version != kWeightsVersion) {
    throw std::runtime_error("weight file: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.get_u32();
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_bytes(r.get_u16());
    const std::uint8_t rank = r.get_u8();
    if (rank == 0 || rank > 4) throw std::runtime_error("weight file: bad rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = r.get_u32();
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.get_f64();
    params.add(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) throw std::runtime_error("weight file: trailing bytes");
  return params;
}

void save_weights(const std::filesystem::path& path, const ParamSet& params) {
  write_file_bytes(path, encode_weights(params));
}

ParamSet load_weights(const std::filesystem::path& path) { return decode_weights(read_file_bytes(path)); }

}  // namespace amd
