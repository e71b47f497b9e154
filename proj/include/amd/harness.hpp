#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "amd/distill.hpp"
#include "amd/model.hpp"
#include "amd/optim.hpp"
#include "amd/synth.hpp"

namespace amd {

/// A precondition of an experiment does not hold (e.g. the teacher is too weak).
class PreconditionFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainBudget {
  std::size_t epochs = 20;
  double lr = 0.02;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
};

inline TrainBudget default_teacher_budget() { return TrainBudget{30, 0.05}; }
inline TrainBudget default_student_budget() { return TrainBudget{20, 0.02}; }

/// Per-cell binary metrics at logit threshold 0.
struct Metrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
};

Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
Metrics score_logits(const Tensor& logits, const Tensor& labels);
Metrics evaluate(const ToyDetector& model, const Dataset& test);

struct EpochLog {
  std::size_t epoch = 0;
  double task_loss = 0;
  double distill_loss = 0;
  double overall_loss = 0;
};

struct TeacherResult {
  ToyDetector model;
  Metrics metrics;
  std::vector<double> epoch_losses;
};

/// Trains a teacher on the task loss and freezes it. Throws
/// PreconditionFailure if held-out accuracy ends below `min_accuracy`.
TeacherResult pretrain_teacher(const Dataset& train, const Dataset& test, std::uint64_t seed,
                               const TrainBudget& budget = default_teacher_budget(), double min_accuracy = 0.9);

/// Train/test scenes plus the frozen teacher's neck features for each scene.
struct ExperimentData {
  Dataset train;
  Dataset test;
  Tensor teacher_train;  ///< [|train|, Ct, 8, 8]
  Tensor teacher_test;   ///< [|test|, Ct, 8, 8]
};

/// Neck features of `model` for every scene, stacked along N.
Tensor compute_features(const ToyDetector& model, const Dataset& data);
ExperimentData prepare_data(const ToyDetector& teacher, Dataset train, Dataset test);

struct ExperimentResult {
  std::string label;
  DistillConfig config;
  std::uint64_t seed = 0;
  bool distilled = false;
  double alpha_used = 0;
  std::vector<EpochLog> epochs;
  Metrics metrics;
  double recon_mse = 0;        ///< mean squared teacher-feature reconstruction error on test
  double masked_fraction = 0;  ///< mean fraction of masked positions over training batches
  double wall_seconds = 0;
  ParamSet student;
};

/// Trains a fresh student (seeded by `seed`) jointly with a distillation
/// branch on alpha * L_fea + L_task. `config.seed` is overridden by `seed`.
/// The teacher is only read through the cached features in `data`.
ExperimentResult distill_student(const DistillConfig& config, const ExperimentData& data, std::uint64_t seed,
                                 const TrainBudget& budget = default_student_budget(), std::string label = "distill");

/// Same student, same batch order, task loss only.
ExperimentResult train_plain(const ExperimentData& data, std::uint64_t seed,
                             const TrainBudget& budget = default_student_budget(), std::string label = "no_distill",
                             const DistillConfig& report_config = {});

/// Runs independent jobs on up to `threads` workers; results are returned in
/// job order regardless of scheduling.
std::vector<ExperimentResult> run_parallel(const std::vector<std::function<ExperimentResult()>>& jobs,
                                           std::size_t threads);

/// Worker count from AMD_THREADS (default 1).
std::size_t threads_from_env();

double median(std::vector<double> values);

// ---- ablation --------------------------------------------------------------

struct Variant {
  std::string name;
  bool distill = true;
  DistillConfig config;
  std::string reference;  ///< published mAP this row is the analog of
};

/// full AMD, Ada-Mask only, Ada-Channel only, random mask, no distillation,
/// alternative generation blocks and the "within" clue location.
std::vector<Variant> ablation_variants(const DistillConfig& base);

struct VariantSummary {
  std::string name;
  std::string reference;
  double median_f1 = 0, median_accuracy = 0, median_precision = 0, median_recall = 0, median_recon_mse = 0;
  double median_masked_fraction = 0;
  double median_first_distill_loss = 0, median_last_distill_loss = 0;
};

struct OrderingCheck {
  std::string claim;
  bool holds = false;
};

struct AblationResult {
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<ExperimentResult> rows;  ///< variant-major, seed-minor
  std::vector<VariantSummary> summary;
  std::vector<OrderingCheck> checks;

  const VariantSummary& find(const std::string& name) const;
};

AblationResult ablation_suite(const ExperimentData& data, const std::vector<Variant>& variants,
                              const std::vector<std::uint64_t>& seeds, const TrainBudget& budget,
                              std::size_t threads);

std::string ablation_csv(const AblationResult& r);
std::string ablation_summary_csv(const AblationResult& r);
std::string ablation_report(const AblationResult& r);

// ---- lambda sweep ----------------------------------------------------------

struct SweepRow {
  double lambda = 0;
  double masked_fraction = 0;
  std::vector<double> f1;  ///< one per seed
  double median_f1 = 0;
  double median_accuracy = 0;
  bool reference_optimum = false;
};

struct SweepResult {
  std::vector<std::uint64_t> seeds;
  std::vector<SweepRow> rows;
  std::vector<ExperimentResult> runs;
};

inline const std::vector<double> kDefaultLambdas = {0.6, 0.8, 1.0, 1.2, 1.4};

/// Fraction of positions of the given teacher features with attention > lambda.
double masked_fraction(const Tensor& teacher_feats, double lambda, double temperature);

SweepResult lambda_sweep(const ExperimentData& data, const DistillConfig& base, const std::vector<double>& lambdas,
                         const std::vector<std::uint64_t>& seeds, const TrainBudget& budget, std::size_t threads);

std::string sweep_csv(const SweepResult& r);

std::string experiment_csv(const ExperimentResult& r);

// ---- gradient verification -------------------------------------------------

struct GradCheckCase {
  std::string name;
  std::vector<Tensor> inputs;  ///< leaves whose gradients are checked
  std::function<Tensor(Tape&)> loss;
};

struct GradCheckReport {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0;
  bool passed = false;
};

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

/// Central differences against the tape's adjoints. Relative error per input
/// is max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-8).
GradCheckReport check_gradients(const GradCheckCase& c, double step = kGradCheckStep,
                                double tolerance = kGradCheckTolerance);

/// One case per differentiable op plus the full overall-loss graph, all on
/// randomized 1x4x6x6 instances.
std::vector<GradCheckCase> standard_gradcheck_cases(std::uint64_t seed = 20240601);

std::vector<GradCheckReport> gradcheck_suite(const std::vector<GradCheckCase>& extra = {},
                                             std::uint64_t seed = 20240601);

// ---- mask dumps ------------------------------------------------------------

/// Binary 8-bit PGM (P5).
std::string encode_pgm(std::size_t width, std::size_t height, const std::vector<unsigned char>& pixels);
/// Attention map min-max rescaled to [0,255]; a constant map becomes mid-gray 128.
std::vector<unsigned char> attention_to_gray(std::span<const double> values);
/// Mask 0 -> 0, 1 -> 255.
std::vector<unsigned char> mask_to_gray(std::span<const double> values);

/// Formats a double for CSV output with enough digits to round-trip exactly.
std::string csv_number(double v);

}  // namespace amd
