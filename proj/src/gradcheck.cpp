#include <algorithm>
#include <cmath>

#include "amd/harness.hpp"
#include "amd/ops.hpp"
#include "amd/rng.hpp"

namespace amd {

GradCheckReport check_gradients(const GradCheckCase& c, double step, double tolerance) {
  GradCheckReport report;
  report.name = c.name;
  std::vector<Tensor> inputs = c.inputs;
  for (Tensor& t : inputs) {
    t.set_requires_grad(true);
    t.drop_grad();
  }
  {
    Tape tape;
    tape.backward(c.loss(tape));
  }
  auto eval = [&] {
    Tape tape;
    return c.loss(tape).item();
  };
  for (Tensor& t : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    std::vector<double> numeric(analytic.size());
    auto v = t.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + step;
      const double up = eval();
      v[i] = saved - step;
      const double down = eval();
      v[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    double diff = 0.0, scale = 1e-8;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    report.max_rel_error = std::max(report.max_rel_error, diff / scale);
    report.checked += analytic.size();
    t.drop_grad();
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error < tolerance;
  return report;
}

namespace {

// Values bounded away from zero so relu kinks stay out of reach of the step.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    const double mag = rng.uniform(0.1, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Reduces an arbitrary output to a scalar with a fixed random target.
Tensor probe(Tape& tape, const Tensor& out, const Tensor& target) { return ops::sum_squared_error(tape, out, target); }

}  // namespace

std::vector<GradCheckCase> standard_gradcheck_cases(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "gradcheck");
  auto U = [&](Shape s, double lo = -1.0, double hi = 1.0) { return Tensor::uniform(std::move(s), rng, lo, hi); };
  const Shape feat{1, 4, 6, 6};
  std::vector<GradCheckCase> cases;

  {
    Tensor x = U(feat), w = U({3, 4, 3, 3}), b = U({3}), t = U({1, 3, 6, 6});
    cases.push_back({"conv2d", {x, w, b}, [=](Tape& tp) { return probe(tp, ops::conv2d(tp, x, w, b, 1), t); }});
  }
  {
    Tensor x = U(feat), w = U({4, 1, 5, 5}), b = U({4}), t = U(feat);
    cases.push_back({"depthwise_conv2d", {x, w, b},
                     [=](Tape& tp) { return probe(tp, ops::depthwise_conv2d(tp, x, w, b, 2), t); }});
  }
  {
    Tensor x = U({2, 4}), w = U({3, 4}), b = U({3}), t = U({2, 3});
    cases.push_back({"linear", {x, w, b}, [=](Tape& tp) { return probe(tp, ops::linear(tp, x, w, b), t); }});
  }
  {
    Tensor x = away_from_zero(feat, rng), t = U(feat);
    cases.push_back({"relu", {x}, [=](Tape& tp) { return probe(tp, ops::relu(tp, x), t); }});
  }
  {
    Tensor x = U(feat, -4.0, 4.0), t = U(feat);
    cases.push_back({"sigmoid", {x}, [=](Tape& tp) { return probe(tp, ops::sigmoid(tp, x), t); }});
  }
  {
    Tensor x = U({1, 36}), t = U({1, 36});
    cases.push_back({"softmax_temp", {x}, [=](Tape& tp) { return probe(tp, ops::softmax_temp(tp, x, 0.5), t); }});
  }
  {
    Tensor x = U(feat), t = U({1, 4});
    cases.push_back({"global_avg_pool", {x}, [=](Tape& tp) { return probe(tp, ops::global_avg_pool(tp, x), t); }});
  }
  {
    Tensor x = U(feat), t = U({1, 4, 3, 3});
    cases.push_back({"avg_pool2", {x}, [=](Tape& tp) { return probe(tp, ops::avg_pool2(tp, x), t); }});
  }
  {
    Tensor a = U(feat), b = U({1, 4}), t = U(feat);
    cases.push_back({"hadamard[channel]", {a, b}, [=](Tape& tp) { return probe(tp, ops::hadamard(tp, a, b), t); }});
  }
  {
    Tensor a = U(feat), b = U({1, 1, 6, 6}), t = U(feat);
    cases.push_back({"hadamard[spatial]", {a, b}, [=](Tape& tp) { return probe(tp, ops::hadamard(tp, a, b), t); }});
  }
  {
    Tensor a = U(feat), b = U(feat), t = U(feat);
    cases.push_back({"add", {a, b}, [=](Tape& tp) { return probe(tp, ops::add(tp, a, b), t); }});
  }
  {
    Tensor x = U(feat), t = U(feat);
    cases.push_back({"scale", {x}, [=](Tape& tp) { return probe(tp, ops::scale(tp, x, -1.7), t); }});
  }
  {
    Tensor x = U(feat);
    cases.push_back({"sum", {x}, [=](Tape& tp) {
                       Tensor s = ops::sum(tp, x);
                       return ops::sum_squared_error(tp, s, Tensor::scalar(0.3));
                     }});
  }
  {
    Tensor a = U(feat), b = U(feat);
    cases.push_back({"sum_squared_error", {a, b}, [=](Tape& tp) { return ops::sum_squared_error(tp, a, b); }});
  }
  {
    Tensor z = U({1, 1, 6, 6}, -3.0, 3.0);
    Tensor y({1, 1, 6, 6});
    for (double& v : y.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    cases.push_back({"bce_with_logits", {z}, [=](Tape& tp) { return ops::bce_with_logits(tp, z, y); }});
  }
  {
    Tensor x = U(feat), t = U({4, 36});
    cases.push_back({"reshape", {x}, [=](Tape& tp) { return probe(tp, ops::reshape(tp, x, {4, 36}), t); }});
  }

  // Distillation-specific compositions.
  const Tensor teacher = U(feat, 0.0, 1.5);
  {
    Tensor s = U(feat), t = U(feat);
    const BinaryMask m = threshold_mask(spatial_attention(channel_abs_mean(teacher), 0.5), 1.0);
    cases.push_back({"apply_mask", {s}, [=](Tape& tp) { return probe(tp, apply_mask(tp, s, m), t); }});
  }
  {
    SeParams se = SeParams::init(4, 2, rng);
    se.squeeze_b = U({2});
    se.excite_b = U({4});
    Tensor t = U({1, 4}, 0.0, 1.0);
    cases.push_back({"se_clue", {se.squeeze_w, se.squeeze_b, se.excite_w, se.excite_b},
                     [=](Tape& tp) { return probe(tp, se_clue(tp, teacher, se).clue, t); }});
  }
  for (GenBlockKind kind : {GenBlockKind::dense3x3_x2, GenBlockKind::dense3x3_x1, GenBlockKind::mbconv_dw5}) {
    for (ClueLocation loc : {ClueLocation::after, ClueLocation::within}) {
      if (loc == ClueLocation::within && kind != GenBlockKind::dense3x3_x2) continue;
      GenBlockParams block = GenBlockParams::init(kind, 4, rng);
      for (auto& e : block.params.entries())
        if (e.name.ends_with(".bias")) e.value = U(e.value.shape(), -0.2, 0.2);
      Tensor x = U(feat), clue = U({1, 4}, 0.1, 0.9), t = U(feat);
      std::vector<Tensor> inputs{x, clue};
      for (auto& e : block.params.entries()) inputs.push_back(e.value);
      cases.push_back({"generate[" + std::string(to_string(kind)) + "," + std::string(to_string(loc)) + "]", inputs,
                       [=](Tape& tp) {
                         const ChannelClue c{clue};
                         return probe(tp, generate(tp, x, block, &c, loc), t);
                       }});
    }
  }
  {
    Tensor s = U({1, 2, 6, 6}), w = U({4, 2, 1, 1}), t = U(feat);
    cases.push_back({"adaptation", {s, w}, [=](Tape& tp) { return probe(tp, adaptation(tp, s, w), t); }});
  }
  {
    Tensor g = U(feat);
    cases.push_back({"distill_loss", {g}, [=](Tape& tp) { return distill_loss(tp, teacher, g); }});
  }
  {
    Tensor s = U({1, 2, 6, 6}), w = U({4, 2, 1, 1});
    cases.push_back({"basic_fea_loss", {s, w}, [=](Tape& tp) { return basic_fea_loss(tp, teacher, s, w); }});
  }
  {
    Tensor a = U({1}), b = U({1});
    cases.push_back({"overall_loss", {a, b}, [=](Tape& tp) {
                       return ops::sum_squared_error(tp, overall_loss(tp, a, b, 2.5), Tensor::scalar(0.1));
                     }});
  }

  // Whole overall-loss graph: a width-2 student on 24x24 images gives a
  // 1x2x6x6 neck feature distilled toward a 1x4x6x6 teacher feature.
  struct GraphVariant {
    const char* name;
    MaskPolicy policy;
    GenBlockKind block;
    ClueLocation loc;
  };
  for (const GraphVariant& gv : {GraphVariant{"overall_graph[adaptive,dense3x3_x2,after]", MaskPolicy::adaptive,
                                          GenBlockKind::dense3x3_x2, ClueLocation::after},
                                GraphVariant{"overall_graph[random,dense3x3_x2,within]", MaskPolicy::random,
                                          GenBlockKind::dense3x3_x2, ClueLocation::within},
                                GraphVariant{"overall_graph[adaptive,mbconv_dw5,after]", MaskPolicy::adaptive,
                                          GenBlockKind::mbconv_dw5, ClueLocation::after}}) {
    DistillConfig cfg;
    cfg.mask_policy = gv.policy;
    cfg.gen_block = gv.block;
    cfg.clue_location = gv.loc;
    cfg.se_reduction = 2;
    cfg.seed = rng.next_u64();
    const ToyDetector student(2, rng.next_u64());
    const Distiller distiller(cfg, 2, 4);
    // Zero biases would put fully masked positions exactly on a relu kink.
    std::vector<ParamSet::Entry> biased = student.params().entries();
    biased.insert(biased.end(), distiller.params().entries().begin(), distiller.params().entries().end());
    for (const auto& e : biased) {
      if (!e.name.ends_with(".bias")) continue;
      Tensor bias = e.value;
      const Tensor fresh = U(bias.shape(), 0.0, 0.2);
      std::ranges::copy(fresh.data(), bias.data().begin());
    }
    Tensor images = U({1, 3, 24, 24}, 0.0, 1.0);
    Tensor labels({1, 1, 6, 6});
    for (double& v : labels.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    const std::uint64_t mask_seed = rng.next_u64();
    std::vector<Tensor> inputs;
    for (const auto& e : student.params().entries()) inputs.push_back(e.value);
    for (const auto& e : distiller.params().entries()) inputs.push_back(e.value);
    cases.push_back({gv.name, inputs, [=](Tape& tp) {
                       ModelOutput out = student.forward(tp, images);
                       Tensor lt = task_loss(tp, out.logits, labels);
                       Rng mask_rng(mask_seed);
                       FeatureTerm term = distiller.forward(tp, teacher, out.feature, mask_rng);
                       return overall_loss(tp, term.loss, lt, 0.05);
                     }});
  }
  return cases;
}

std::vector<GradCheckReport> gradcheck_suite(const std::vector<GradCheckCase>& extra, std::uint64_t seed) {
  std::vector<GradCheckCase> cases = standard_gradcheck_cases(seed);
  cases.insert(cases.end(), extra.begin(), extra.end());
  std::vector<GradCheckReport> out;
  for (const auto& c : cases) out.push_back(check_gradients(c));
  return out;
}

}  // namespace amd
