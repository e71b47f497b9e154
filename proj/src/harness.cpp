#include "amd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "amd/ops.hpp"
#include "amd/rng.hpp"

namespace amd {

Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  Metrics m{tp, fp, tn, fn};
  const auto total = static_cast<double>(tp + fp + tn + fn);
  m.accuracy = total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

Metrics score_logits(const Tensor& logits, const Tensor& labels) {
  require_same_shape(logits, labels, "score_logits");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  const auto z = logits.data();
  const auto y = labels.data();
  for (std::size_t i = 0; i < z.size(); ++i) {
    const bool pred = z[i] > 0.0;
    const bool truth = y[i] != 0.0;
    if (pred && truth) ++tp;
    else if (pred) ++fp;
    else if (truth) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, tn, fn);
}

namespace {

constexpr std::size_t kEvalChunk = 64;

std::vector<std::size_t> iota_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

// Rows `indices` of a tensor stacked along dim 0.
Tensor gather(const Tensor& t, std::span<const std::size_t> indices) {
  Shape shape = t.shape();
  const std::size_t row = t.numel() / shape[0];
  shape[0] = indices.size();
  Tensor out(shape);
  auto dst = out.data();
  const auto src = t.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(indices[i] * row), row,
                dst.begin() + static_cast<std::ptrdiff_t>(i * row));
  }
  return out;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm = iota_indices(0, n);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

bool finite(double v) { return std::isfinite(v); }

std::string describe(const DistillConfig& c) {
  std::ostringstream os;
  os << "mask_policy=" << to_string(c.mask_policy) << " lambda=" << c.lambda << " T=" << c.temperature
     << " ada_channel=" << c.ada_channel << " gen_block=" << to_string(c.gen_block)
     << " clue_location=" << to_string(c.clue_location) << " feature_loss=" << to_string(c.feature_loss)
     << " alpha=" << (c.alpha ? std::to_string(*c.alpha) : std::string("auto"));
  return os.str();
}

struct StepLosses {
  double task = 0, distill = 0, overall = 0;
};

// Shared student training loop. With `distiller` null this is plain task
// training; the batch order and student init depend only on `seed` in both
// cases.
ExperimentResult train_student(const ExperimentData& data, std::uint64_t seed, const TrainBudget& budget,
                               const Distiller* distiller, std::string label, const DistillConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  if (data.train.empty()) throw std::invalid_argument("train_student: empty training set");
  if (budget.batch_size == 0) throw std::invalid_argument("train_student: batch_size must be >= 1");

  ExperimentResult result;
  result.label = std::move(label);
  result.config = config;
  result.config.seed = seed;
  result.seed = seed;
  result.distilled = distiller != nullptr;

  ToyDetector student = build_model(Role::student, seed);
  ParamSet trainable;
  trainable.extend(student.params());
  if (distiller) trainable.extend(distiller->params(), "distill.");

  Rng order_rng = Rng::derive(seed, "batch-order");
  Rng mask_rng = Rng::derive(seed, "mask");
  const SgdOptions sgd{budget.lr, budget.momentum, budget.weight_decay};
  std::optional<double> alpha = config.alpha;
  double masked_sum = 0.0;
  std::size_t mask_batches = 0;
  StepLosses last;

  for (std::size_t epoch = 1; epoch <= budget.epochs; ++epoch) {
    const std::vector<std::size_t> perm = shuffled(data.train.size(), order_rng);
    StepLosses sums;
    for (std::size_t start = 0; start < perm.size(); start += budget.batch_size) {
      const std::size_t end = std::min(perm.size(), start + budget.batch_size);
      const std::span<const std::size_t> idx(perm.data() + start, end - start);
      auto [images, labels] = make_batch(data.train, idx);

      Tape tape;
      ModelOutput out = student.forward(tape, images);
      Tensor l_task = task_loss(tape, out.logits, labels);
      Tensor total = l_task;
      double l_fea_value = 0.0;
      if (distiller) {
        FeatureTerm term = distiller->forward(tape, gather(data.teacher_train, idx), out.feature, mask_rng);
        l_fea_value = term.loss.item();
        if (!alpha) alpha = l_fea_value > 0.0 ? l_task.item() / l_fea_value : 0.0;
        total = overall_loss(tape, term.loss, l_task, *alpha);
        masked_sum += term.mask.masked_fraction();
        ++mask_batches;
      }
      const StepLosses step{l_task.item(), l_fea_value, total.item()};
      if (!finite(step.task) || !finite(step.distill) || !finite(step.overall)) {
        std::ostringstream os;
        os << "non-finite loss in run '" << result.label << "' seed=" << seed << " epoch=" << epoch
           << " batch_start=" << start << " [" << describe(config) << "] task=" << step.task
           << " distill=" << step.distill << " overall=" << step.overall << " previous: task=" << last.task
           << " distill=" << last.distill << " overall=" << last.overall;
        throw NumericFailure(os.str());
      }
      last = step;
      tape.backward(total);
      sgd_step(trainable, sgd);

      const auto w = static_cast<double>(idx.size());
      sums.task += w * step.task;
      sums.distill += w * step.distill;
      sums.overall += w * step.overall;
    }
    const auto n = static_cast<double>(perm.size());
    result.epochs.push_back(EpochLog{epoch, sums.task / n, sums.distill / n, sums.overall / n});
  }

  result.alpha_used = alpha.value_or(0.0);
  result.masked_fraction = mask_batches ? masked_sum / static_cast<double>(mask_batches) : 0.0;
  result.metrics = evaluate(student, data.test);

  // Reconstruction error on held-out scenes. Plain runs are scored with an
  // untrained branch of the reported configuration.
  std::optional<Distiller> fresh;
  const Distiller* recon = distiller;
  if (!recon) {
    fresh.emplace(result.config, kStudentWidth, data.teacher_test.dim(1));
    recon = &*fresh;
  }
  Rng eval_rng = Rng::derive(seed, "eval-mask");
  double sse = 0.0;
  for (std::size_t start = 0; start < data.test.size(); start += kEvalChunk) {
    const auto idx = iota_indices(start, std::min(data.test.size(), start + kEvalChunk));
    Tape scratch;
    ModelOutput out = student.forward(scratch, make_batch(data.test, idx).first);
    const Tensor teacher = gather(data.teacher_test, idx);
    FeatureTerm term = recon->forward(scratch, teacher, out.feature, eval_rng);
    const auto a = teacher.data();
    const auto b = term.reconstruction.data();
    for (std::size_t i = 0; i < a.size(); ++i) sse += (a[i] - b[i]) * (a[i] - b[i]);
  }
  result.recon_mse = data.test.empty() ? 0.0 : sse / static_cast<double>(data.teacher_test.numel());

  result.student = student.params().clone();
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace

Metrics evaluate(const ToyDetector& model, const Dataset& test) {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t start = 0; start < test.size(); start += kEvalChunk) {
    const auto idx = iota_indices(start, std::min(test.size(), start + kEvalChunk));
    auto [images, labels] = make_batch(test, idx);
    Tape scratch;
    const Metrics m = score_logits(model.forward(scratch, images).logits, labels);
    tp += m.tp;
    fp += m.fp;
    tn += m.tn;
    fn += m.fn;
  }
  return metrics_from_counts(tp, fp, tn, fn);
}

TeacherResult pretrain_teacher(const Dataset& train, const Dataset& test, std::uint64_t seed,
                               const TrainBudget& budget, double min_accuracy) {
  if (train.empty()) throw std::invalid_argument("pretrain_teacher: empty training set");
  ToyDetector teacher = build_model(Role::teacher, seed);
  Rng order_rng = Rng::derive(seed, "teacher-batch-order");
  const SgdOptions sgd{budget.lr, budget.momentum, budget.weight_decay};
  std::vector<double> losses;
  for (std::size_t epoch = 1; epoch <= budget.epochs; ++epoch) {
    const std::vector<std::size_t> perm = shuffled(train.size(), order_rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < perm.size(); start += budget.batch_size) {
      const std::size_t end = std::min(perm.size(), start + budget.batch_size);
      const std::span<const std::size_t> idx(perm.data() + start, end - start);
      auto [images, labels] = make_batch(train, idx);
      Tape tape;
      Tensor loss = task_loss(tape, teacher.forward(tape, images).logits, labels);
      if (!finite(loss.item())) {
        throw NumericFailure("non-finite teacher loss at epoch " + std::to_string(epoch) + ", seed " +
                             std::to_string(seed));
      }
      tape.backward(loss);
      sgd_step(teacher.params(), sgd);
      sum += loss.item() * static_cast<double>(idx.size());
    }
    losses.push_back(sum / static_cast<double>(perm.size()));
  }
  teacher.freeze();
  const Metrics m = test.empty() ? Metrics{} : evaluate(teacher, test);
  if (!test.empty() && m.accuracy < min_accuracy) {
    std::ostringstream os;
    os << "teacher accuracy " << m.accuracy << " below required " << min_accuracy << " (seed " << seed << ")";
    throw PreconditionFailure(os.str());
  }
  return TeacherResult{std::move(teacher), m, std::move(losses)};
}

Tensor compute_features(const ToyDetector& model, const Dataset& data) {
  if (data.empty()) throw std::invalid_argument("compute_features: empty dataset");
  Tensor all;
  std::size_t row = 0;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const auto idx = iota_indices(start, std::min(data.size(), start + kEvalChunk));
    Tape scratch;
    const Tensor f = model.forward(scratch, make_batch(data, idx).first).feature;
    if (!all.defined()) {
      all = Tensor({data.size(), f.dim(1), f.dim(2), f.dim(3)});
      row = f.numel() / f.dim(0);
    }
    std::copy(f.data().begin(), f.data().end(), all.data().begin() + static_cast<std::ptrdiff_t>(start * row));
  }
  return all;
}

ExperimentData prepare_data(const ToyDetector& teacher, Dataset train, Dataset test) {
  ExperimentData d;
  d.teacher_train = compute_features(teacher, train);
  d.teacher_test = compute_features(teacher, test);
  d.train = std::move(train);
  d.test = std::move(test);
  return d;
}

ExperimentResult distill_student(const DistillConfig& config, const ExperimentData& data, std::uint64_t seed,
                                 const TrainBudget& budget, std::string label) {
  DistillConfig cfg = config;
  cfg.seed = seed;
  const Distiller distiller(cfg, kStudentWidth, data.teacher_train.dim(1));
  return train_student(data, seed, budget, &distiller, std::move(label), cfg);
}

ExperimentResult train_plain(const ExperimentData& data, std::uint64_t seed, const TrainBudget& budget,
                             std::string label, const DistillConfig& report_config) {
  DistillConfig cfg = report_config;
  cfg.alpha = 0.0;
  return train_student(data, seed, budget, nullptr, std::move(label), cfg);
}

std::vector<ExperimentResult> run_parallel(const std::vector<std::function<ExperimentResult()>>& jobs,
                                           std::size_t threads) {
  std::vector<ExperimentResult> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = jobs[i]();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("AMD_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) return 1;
  return static_cast<std::size_t>(n);
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

}  // namespace amd
