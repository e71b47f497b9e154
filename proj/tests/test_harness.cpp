#include <cmath>
#include <cstdlib>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <gtest/gtest.h>

#include "amd/harness.hpp"
#include "amd/ops.hpp"
#include "amd/rng.hpp"

using namespace amd;

namespace {

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (std::size_t pos = 0; (pos = s.find("\r\n", pos)) != std::string::npos; pos += 2) ++n;
  return n;
}

bool same_result(const ExperimentResult& a, const ExperimentResult& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    if (a.epochs[i].task_loss != b.epochs[i].task_loss || a.epochs[i].distill_loss != b.epochs[i].distill_loss ||
        a.epochs[i].overall_loss != b.epochs[i].overall_loss) {
      return false;
    }
  }
  return a.metrics.tp == b.metrics.tp && a.metrics.fp == b.metrics.fp && a.metrics.f1 == b.metrics.f1 &&
         a.recon_mse == b.recon_mse && a.masked_fraction == b.masked_fraction && a.alpha_used == b.alpha_used &&
         identical_values(a.student, b.student);
}

// A small shared setup: 96 scenes, a briefly trained teacher, short student budgets.
class HarnessTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto [train, test] = split(gen_dataset(101, 96), 0.75);
    TrainBudget tb{3, 0.05};
    teacher_ = new TeacherResult(pretrain_teacher(train, test, 5, tb, 0.0));
    data_ = new ExperimentData(prepare_data(teacher_->model, train, test));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete teacher_;
  }
  static TrainBudget short_budget() { return TrainBudget{2, 0.02}; }

  static TeacherResult* teacher_;
  static ExperimentData* data_;
};

TeacherResult* HarnessTest::teacher_ = nullptr;
ExperimentData* HarnessTest::data_ = nullptr;

}  // namespace

TEST(Metrics, FromCounts) {
  Metrics m = metrics_from_counts(3, 1, 10, 2);
  EXPECT_DOUBLE_EQ(m.accuracy, 13.0 / 16.0);
  EXPECT_DOUBLE_EQ(m.precision, 0.75);
  EXPECT_DOUBLE_EQ(m.recall, 0.6);
  EXPECT_DOUBLE_EQ(m.f1, 2 * 0.75 * 0.6 / 1.35);
  EXPECT_EQ(metrics_from_counts(0, 0, 5, 0).f1, 0.0);
}

TEST(Metrics, ScoreLogitsMatchesCountingOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = Tensor::uniform({4, 1, 8, 8}, rng, -1, 1);
    Tensor y({4, 1, 8, 8});
    for (double& v : y.data()) v = rng.uniform() < 0.2 ? 1.0 : 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < z.numel(); ++i) {
      const bool p = z[i] > 0, t = y[i] == 1.0;
      tp += p && t;
      fp += p && !t;
      tn += !p && !t;
      fn += !p && t;
    }
    Metrics m = score_logits(z, y);
    ASSERT_EQ(m.tp, tp);
    ASSERT_EQ(m.fp, fp);
    ASSERT_EQ(m.tn, tn);
    ASSERT_EQ(m.fn, fn);
  }
}

TEST(Metrics, PerfectAndAllNegativePredictors) {
  Tensor y({1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor perfect({1, 1, 2, 2}, std::vector<double>{5, -5, -5, 5});
  Metrics m = score_logits(perfect, y);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.f1, 1.0);
  Metrics neg = score_logits(Tensor({1, 1, 2, 2}, -1.0), y);
  EXPECT_EQ(neg.recall, 0.0);
  // Threshold is strict: a zero logit predicts negative.
  EXPECT_EQ(score_logits(Tensor({1, 1, 2, 2}, 0.0), y).tp, 0u);
}

TEST(Median, OddEvenAndEmpty) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_EQ(median({}), 0.0);
}

TEST(RunParallel, OrderAndValuesIndependentOfThreads) {
  std::vector<std::function<ExperimentResult()>> jobs;
  for (int i = 0; i < 7; ++i) {
    jobs.emplace_back([i] {
      ExperimentResult r;
      r.seed = static_cast<std::uint64_t>(i);
      r.recon_mse = std::sqrt(static_cast<double>(i));
      return r;
    });
  }
  auto serial = run_parallel(jobs, 1), parallel = run_parallel(jobs, 3);
  ASSERT_EQ(serial.size(), 7u);
  for (int i = 0; i < 7; ++i) {
    EXPECT_EQ(serial[i].seed, static_cast<std::uint64_t>(i));
    EXPECT_EQ(parallel[i].seed, serial[i].seed);
    EXPECT_EQ(parallel[i].recon_mse, serial[i].recon_mse);
  }
  jobs.emplace_back([]() -> ExperimentResult { throw NumericFailure("boom"); });
  EXPECT_THROW(run_parallel(jobs, 2), NumericFailure);
}

TEST(ThreadsFromEnv, DefaultsToOne) {
  ::unsetenv("AMD_THREADS");
  EXPECT_EQ(threads_from_env(), 1u);
  ::setenv("AMD_THREADS", "3", 1);
  EXPECT_EQ(threads_from_env(), 3u);
  ::unsetenv("AMD_THREADS");
}

TEST(CheckGradients, CorruptedAdjointIsReportedByName) {
  Rng rng(2);
  Tensor x = Tensor::uniform({1, 4, 6, 6}, rng, -1, 1);
  GradCheckCase bad{"corrupted_double", {x}, [x](Tape& tape) {
                      Tensor y(x.shape());
                      for (std::size_t i = 0; i < x.numel(); ++i) y[i] = 2.0 * x[i];
                      if (Tape::tracks({&x})) {
                        tape.record("corrupted_double", {x}, y, [in = x, y]() mutable {
                          // Wrong factor: the true derivative is 2.
                          for (std::size_t i = 0; i < in.numel(); ++i) in.grad()[i] += 3.0 * y.grad()[i];
                        });
                      }
                      return ops::sum_squared_error(tape, y, Tensor::zeros(x.shape()));
                    }};
  GradCheckReport r = check_gradients(bad);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.name, "corrupted_double");
  EXPECT_GT(r.max_rel_error, 0.1);
  auto reports = gradcheck_suite({bad});
  EXPECT_FALSE(reports.back().passed);
  EXPECT_EQ(reports.back().name, "corrupted_double");
}

TEST(CheckGradients, StandardSuitePassesAndCoversEveryOp) {
  const auto reports = gradcheck_suite();
  std::set<std::string> names;
  for (const auto& r : reports) {
    EXPECT_TRUE(r.passed) << r.name << " max rel err " << r.max_rel_error;
    EXPECT_GT(r.checked, 0u) << r.name;
    names.insert(r.name.substr(0, r.name.find('[')));
  }
  for (const char* op : {"conv2d", "depthwise_conv2d", "linear", "relu", "sigmoid", "softmax_temp", "global_avg_pool",
                         "avg_pool2", "hadamard", "add", "scale", "sum", "sum_squared_error", "bce_with_logits",
                         "reshape", "apply_mask", "se_clue", "generate", "adaptation", "distill_loss",
                         "basic_fea_loss", "overall_loss", "overall_graph"}) {
    EXPECT_TRUE(names.contains(op)) << op;
  }
}

TEST(Pgm, EncodingAndGrayMaps) {
  const std::string pgm = encode_pgm(2, 1, {0, 255});
  EXPECT_EQ(pgm, std::string("P5\n2 1\n255\n") + '\0' + '\xff');
  const double flat[] = {1.0, 1.0, 1.0};
  for (unsigned char v : attention_to_gray(flat)) EXPECT_EQ(v, 128);
  const double ramp[] = {0.5, 1.0, 1.5};
  const auto g = attention_to_gray(ramp);
  EXPECT_EQ(g[0], 0);
  EXPECT_EQ(g[1], 128);
  EXPECT_EQ(g[2], 255);
  const double mask[] = {0.0, 1.0};
  EXPECT_EQ(mask_to_gray(mask), (std::vector<unsigned char>{0, 255}));
  EXPECT_THROW(encode_pgm(2, 2, {0}), std::invalid_argument);
}

TEST(CsvNumber, RoundTrips) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const double v = rng.uniform(-1e6, 1e6) * std::pow(10.0, rng.uniform(-20, 5));
    EXPECT_EQ(std::strtod(csv_number(v).c_str(), nullptr), v);
  }
}

TEST(AblationVariants, CoverTheTableRows) {
  const auto vs = ablation_variants(DistillConfig{});
  std::set<std::string> names;
  for (const Variant& v : vs) {
    names.insert(v.name);
    EXPECT_NO_THROW(v.config.validate()) << v.name;
    EXPECT_FALSE(v.reference.empty()) << v.name;
  }
  for (const char* n : {"amd_full", "ada_mask_only", "ada_channel_only", "random_mask", "no_distill",
                        "gen_dense3x3_x1", "gen_mbconv_dw5", "clue_within"}) {
    EXPECT_TRUE(names.contains(n)) << n;
  }
}

TEST_F(HarnessTest, TeacherIsFrozenAndUntouchedByDistillation) {
  const ParamSet before = teacher_->model.params().clone();
  for (const auto& e : teacher_->model.params().entries()) EXPECT_FALSE(e.value.requires_grad());
  distill_student(DistillConfig{}, *data_, 1, short_budget());
  EXPECT_TRUE(identical_values(before, teacher_->model.params()));
  const Tensor again = compute_features(teacher_->model, data_->train);
  for (std::size_t i = 0; i < again.numel(); ++i) ASSERT_EQ(again[i], data_->teacher_train[i]);
}

TEST_F(HarnessTest, AlphaZeroEqualsPlainTraining) {
  DistillConfig c;
  c.alpha = 0.0;
  const ExperimentResult d = distill_student(c, *data_, 3, short_budget());
  const ExperimentResult p = train_plain(*data_, 3, short_budget());
  for (const auto& e : p.student.entries()) {
    const Tensor& other = d.student.get(e.name);
    for (std::size_t i = 0; i < e.value.numel(); ++i) ASSERT_EQ(e.value[i], other[i]) << e.name;
  }
  for (std::size_t k = 0; k < p.epochs.size(); ++k) EXPECT_EQ(p.epochs[k].task_loss, d.epochs[k].task_loss);
  EXPECT_EQ(p.metrics.f1, d.metrics.f1);
}

TEST_F(HarnessTest, IdenticalInputsGiveIdenticalResults) {
  for (MaskPolicy policy : {MaskPolicy::adaptive, MaskPolicy::random}) {
    DistillConfig c;
    c.mask_policy = policy;
    EXPECT_TRUE(same_result(distill_student(c, *data_, 4, short_budget()),
                            distill_student(c, *data_, 4, short_budget())));
  }
}

TEST_F(HarnessTest, RandomMaskSpendsTheAdaptiveBudget) {
  DistillConfig ad, rnd;
  rnd.mask_policy = MaskPolicy::random;
  const ExperimentResult a = distill_student(ad, *data_, 5, short_budget());
  const ExperimentResult r = distill_student(rnd, *data_, 5, short_budget());
  EXPECT_GT(a.masked_fraction, 0.0);
  EXPECT_EQ(a.masked_fraction, r.masked_fraction);
}

TEST_F(HarnessTest, HugeLambdaRunEqualsNoMaskRun) {
  DistillConfig big, none;
  big.lambda = 1e9;
  none.mask_policy = MaskPolicy::none;
  const ExperimentResult a = distill_student(big, *data_, 6, short_budget());
  const ExperimentResult b = distill_student(none, *data_, 6, short_budget());
  EXPECT_EQ(a.masked_fraction, 0.0);
  EXPECT_TRUE(same_result(a, b));
}

TEST_F(HarnessTest, ResultRecordsFiniteEpochs) {
  const ExperimentResult r = distill_student(DistillConfig{}, *data_, 7, short_budget(), "probe");
  EXPECT_EQ(r.label, "probe");
  ASSERT_EQ(r.epochs.size(), 2u);
  for (std::size_t k = 0; k < r.epochs.size(); ++k) {
    EXPECT_EQ(r.epochs[k].epoch, k + 1);
    EXPECT_TRUE(std::isfinite(r.epochs[k].overall_loss));
  }
  EXPECT_TRUE(r.distilled);
  EXPECT_GT(r.alpha_used, 0.0);
  // Auto-balance: at the first batch alpha * L_fea equals L_task.
  EXPECT_TRUE(std::isfinite(r.recon_mse));
  const std::string csv = experiment_csv(r);
  EXPECT_EQ(count_lines(csv), 3u);
}

TEST_F(HarnessTest, DivergentRunAbortsWithDiagnostics) {
  DistillConfig c;
  c.alpha = 1.0;
  TrainBudget b{2, 1e6};
  try {
    distill_student(c, *data_, 8, b, "diverge");
    FAIL() << "expected NumericFailure";
  } catch (const NumericFailure& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("diverge"), std::string::npos);
    EXPECT_NE(msg.find("epoch="), std::string::npos);
    EXPECT_NE(msg.find("mask_policy=adaptive"), std::string::npos);
  }
}

TEST_F(HarnessTest, AblationSuiteShapesAndReport) {
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  const auto variants = ablation_variants(DistillConfig{});
  const AblationResult r = ablation_suite(*data_, variants, seeds, TrainBudget{1, 0.02}, 1);
  EXPECT_EQ(r.rows.size(), variants.size() * seeds.size());
  EXPECT_EQ(count_lines(ablation_csv(r)), 1 + variants.size() * seeds.size());
  EXPECT_EQ(count_lines(ablation_summary_csv(r)), 1 + variants.size());
  const std::string report = ablation_report(r);
  EXPECT_NE(report.find("41.3"), std::string::npos);
  EXPECT_NE(report.find("41.0"), std::string::npos);
  EXPECT_NE(report.find("41.2"), std::string::npos);
  EXPECT_NE(report.find("42.4"), std::string::npos);
  EXPECT_FALSE(r.checks.empty());
  EXPECT_THROW(ablation_suite(*data_, variants, {}, TrainBudget{1, 0.02}, 1), std::invalid_argument);
}

TEST_F(HarnessTest, SweepShapeAndMonotoneMaskedFraction) {
  const std::vector<std::uint64_t> seeds{1, 2};
  const SweepResult r = lambda_sweep(*data_, DistillConfig{}, kDefaultLambdas, seeds, TrainBudget{1, 0.02}, 1);
  ASSERT_EQ(r.rows.size(), 5u);
  for (std::size_t i = 0; i + 1 < r.rows.size(); ++i) {
    EXPECT_GE(r.rows[i].masked_fraction, r.rows[i + 1].masked_fraction);
  }
  for (const SweepRow& row : r.rows) EXPECT_EQ(row.reference_optimum, row.lambda == 1.0);
  const std::string csv = sweep_csv(r);
  EXPECT_EQ(count_lines(csv), 6u);
  EXPECT_NE(csv.find("f1_seed_1,f1_seed_2"), std::string::npos);
  EXPECT_NE(csv.find("42.7"), std::string::npos);
  EXPECT_THROW(lambda_sweep(*data_, DistillConfig{}, {0.0}, seeds, TrainBudget{1, 0.02}, 1), std::invalid_argument);
}

TEST(Teacher, LossDecreasesOverFirstEpochsInMedian) {
  auto [train, test] = split(gen_dataset(202, 80), 0.75);
  std::vector<double> drops01, drops12;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const TeacherResult t = pretrain_teacher(train, test, seed, TrainBudget{3, 0.05}, 0.0);
    ASSERT_EQ(t.epoch_losses.size(), 3u);
    drops01.push_back(t.epoch_losses[0] - t.epoch_losses[1]);
    drops12.push_back(t.epoch_losses[1] - t.epoch_losses[2]);
  }
  EXPECT_GT(median(drops01), 0.0);
  EXPECT_GT(median(drops12), 0.0);
}

TEST(Teacher, WeakTeacherFailsPrecondition) {
  auto [train, test] = split(gen_dataset(203, 40), 0.5);
  EXPECT_THROW(pretrain_teacher(train, test, 1, TrainBudget{1, 1e-6}, 0.999), PreconditionFailure);
}

TEST(Teacher, ReproducibleForFixedSeed) {
  auto [train, test] = split(gen_dataset(204, 40), 0.5);
  const TeacherResult a = pretrain_teacher(train, test, 9, TrainBudget{2, 0.05}, 0.0);
  const TeacherResult b = pretrain_teacher(train, test, 9, TrainBudget{2, 0.05}, 0.0);
  EXPECT_TRUE(identical_values(a.model.params(), b.model.params()));
  EXPECT_EQ(a.metrics.accuracy, b.metrics.accuracy);
}
