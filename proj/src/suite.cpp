#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "amd/harness.hpp"

namespace amd {

std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

const char* bool_str(bool b) { return b ? "true" : "false"; }

std::string alpha_str(const DistillConfig& c) { return c.alpha ? csv_number(*c.alpha) : "auto"; }

void result_columns(std::ostringstream& os, const ExperimentResult& r) {
  const EpochLog first = r.epochs.empty() ? EpochLog{} : r.epochs.front();
  const EpochLog last = r.epochs.empty() ? EpochLog{} : r.epochs.back();
  os << csv_number(r.alpha_used) << ',' << csv_number(r.metrics.accuracy) << ',' << csv_number(r.metrics.precision)
     << ',' << csv_number(r.metrics.recall) << ',' << csv_number(r.metrics.f1) << ',' << r.metrics.tp << ','
     << r.metrics.fp << ',' << r.metrics.tn << ',' << r.metrics.fn << ',' << csv_number(r.recon_mse) << ','
     << csv_number(r.masked_fraction) << ',' << csv_number(first.distill_loss) << ','
     << csv_number(last.task_loss) << ',' << csv_number(last.distill_loss) << ',' << csv_number(last.overall_loss);
}

constexpr const char* kResultHeader =
    "alpha_used,accuracy,precision,recall,f1,tp,fp,tn,fn,recon_mse,masked_fraction,first_distill_loss,"
    "final_task_loss,final_distill_loss,final_overall_loss";

}  // namespace

// ---- ablation --------------------------------------------------------------

std::vector<Variant> ablation_variants(const DistillConfig& base) {
  DistillConfig full = base;
  full.mask_policy = MaskPolicy::adaptive;
  full.mask_ratio.reset();
  full.ada_channel = true;
  full.gen_block = GenBlockKind::dense3x3_x2;
  full.clue_location = ClueLocation::after;
  full.feature_loss = FeatureLoss::generative;

  std::vector<Variant> v;
  v.push_back({"amd_full", true, full, "41.3 (RetinaNet, Ada-Mask + Ada-Channel)"});

  DistillConfig mask_only = full;
  mask_only.ada_channel = false;
  v.push_back({"ada_mask_only", true, mask_only, "41.2 (RetinaNet, w/o Ada-Channel)"});

  DistillConfig channel_only = full;
  channel_only.mask_policy = MaskPolicy::random;
  v.push_back({"ada_channel_only", true, channel_only, "41.0 (RetinaNet, w/o Ada-Mask)"});

  DistillConfig random = full;
  random.mask_policy = MaskPolicy::random;
  random.ada_channel = false;
  v.push_back({"random_mask", true, random, "41.0 (RetinaNet, random-mask generative baseline)"});

  v.push_back({"no_distill", false, full, "37.4 (RetinaNet student without distillation)"});

  DistillConfig x1 = full;
  x1.gen_block = GenBlockKind::dense3x3_x1;
  v.push_back({"gen_dense3x3_x1", true, x1, "41.2 (3x3 dense conv x1 vs 41.3 for x2)"});

  DistillConfig mb = full;
  mb.gen_block = GenBlockKind::mbconv_dw5;
  v.push_back({"gen_mbconv_dw5", true, mb, "41.0 (MBConv, 5x5 depthwise)"});

  DistillConfig within = full;
  within.clue_location = ClueLocation::within;
  v.push_back({"clue_within", true, within, "42.2 within vs 42.4 after (Faster-RCNN)"});
  return v;
}

const VariantSummary& AblationResult::find(const std::string& name) const {
  for (const auto& s : summary)
    if (s.name == name) return s;
  throw std::out_of_range("no ablation variant named " + name);
}

AblationResult ablation_suite(const ExperimentData& data, const std::vector<Variant>& variants,
                              const std::vector<std::uint64_t>& seeds, const TrainBudget& budget,
                              std::size_t threads) {
  if (seeds.empty()) throw std::invalid_argument("ablation_suite: no seeds");
  AblationResult r;
  r.variants = variants;
  r.seeds = seeds;
  std::vector<std::function<ExperimentResult()>> jobs;
  for (const Variant& v : variants) {
    for (std::uint64_t s : seeds) {
      jobs.push_back([&data, &budget, v, s] {
        return v.distill ? distill_student(v.config, data, s, budget, v.name)
                         : train_plain(data, s, budget, v.name, v.config);
      });
    }
  }
  r.rows = run_parallel(jobs, threads);

  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    std::vector<double> f1, acc, prec, rec, mse, frac, d0, d1;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const ExperimentResult& e = r.rows[vi * seeds.size() + si];
      f1.push_back(e.metrics.f1);
      acc.push_back(e.metrics.accuracy);
      prec.push_back(e.metrics.precision);
      rec.push_back(e.metrics.recall);
      mse.push_back(e.recon_mse);
      frac.push_back(e.masked_fraction);
      d0.push_back(e.epochs.empty() ? 0.0 : e.epochs.front().distill_loss);
      d1.push_back(e.epochs.empty() ? 0.0 : e.epochs.back().distill_loss);
    }
    r.summary.push_back(VariantSummary{variants[vi].name, variants[vi].reference, median(f1), median(acc),
                                       median(prec), median(rec), median(mse), median(frac), median(d0),
                                       median(d1)});
  }

  auto has = [&](const char* name) {
    return std::any_of(r.summary.begin(), r.summary.end(), [&](const auto& s) { return s.name == name; });
  };
  auto f1_of = [&](const char* name) { return r.find(name).median_f1; };
  if (has("amd_full") && has("random_mask") && has("no_distill")) {
    r.checks.push_back({"median F1: amd_full >= random_mask >= no_distill",
                        f1_of("amd_full") >= f1_of("random_mask") && f1_of("random_mask") >= f1_of("no_distill")});
    r.checks.push_back({"median F1: amd_full - no_distill > 0", f1_of("amd_full") - f1_of("no_distill") > 0.0});
  }
  if (has("amd_full") && has("ada_mask_only")) {
    r.checks.push_back({"median F1: amd_full >= ada_mask_only", f1_of("amd_full") >= f1_of("ada_mask_only")});
  }
  if (has("amd_full") && has("ada_channel_only")) {
    r.checks.push_back({"median F1: amd_full >= ada_channel_only", f1_of("amd_full") >= f1_of("ada_channel_only")});
  }
  if (has("amd_full") && has("clue_within")) {
    r.checks.push_back({"median F1: amd_full (after) >= clue_within", f1_of("amd_full") >= f1_of("clue_within")});
  }
  if (has("amd_full") && has("gen_dense3x3_x1") && has("gen_mbconv_dw5")) {
    r.checks.push_back({"median F1: dense3x3_x2 >= dense3x3_x1 and >= mbconv_dw5",
                        f1_of("amd_full") >= f1_of("gen_dense3x3_x1") && f1_of("amd_full") >= f1_of("gen_mbconv_dw5")});
  }
  return r;
}

std::string ablation_csv(const AblationResult& r) {
  std::ostringstream os;
  os << "variant,distilled,mask_policy,ada_channel,gen_block,clue_location,lambda,temperature,alpha_config,seed,"
     << kResultHeader << "\r\n";
  for (const ExperimentResult& e : r.rows) {
    const DistillConfig& c = e.config;
    os << csv_field(e.label) << ',' << bool_str(e.distilled) << ',' << to_string(c.mask_policy) << ','
       << bool_str(c.ada_channel) << ',' << to_string(c.gen_block) << ',' << to_string(c.clue_location) << ','
       << csv_number(c.lambda) << ',' << csv_number(c.temperature) << ',' << alpha_str(c) << ',' << e.seed << ',';
    result_columns(os, e);
    os << "\r\n";
  }
  return os.str();
}

std::string ablation_summary_csv(const AblationResult& r) {
  std::ostringstream os;
  os << "variant,seeds,median_f1,median_accuracy,median_precision,median_recall,median_recon_mse,"
        "median_masked_fraction,median_first_distill_loss,median_last_distill_loss,reference_map\r\n";
  for (const VariantSummary& s : r.summary) {
    os << csv_field(s.name) << ',' << r.seeds.size() << ',' << csv_number(s.median_f1) << ','
       << csv_number(s.median_accuracy) << ',' << csv_number(s.median_precision) << ','
       << csv_number(s.median_recall) << ',' << csv_number(s.median_recon_mse) << ','
       << csv_number(s.median_masked_fraction) << ',' << csv_number(s.median_first_distill_loss) << ','
       << csv_number(s.median_last_distill_loss) << ',' << csv_field(s.reference) << "\r\n";
  }
  return os.str();
}

std::string ablation_report(const AblationResult& r) {
  std::ostringstream os;
  os << "Ablation report (medians over " << r.seeds.size() << " seeds)\n";
  os << "Published reference mAP (COCO): full 41.3, w/o Ada-Mask 41.0, w/o Ada-Channel 41.2;"
        " generation block x2 41.3 / x1 41.2 / MBConv 41.0; clue after 42.4 vs within 42.2\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %10s %10s %10s %12s  %s\n", "variant", "F1", "accuracy", "recall",
                "recon_mse", "reference");
  os << line;
  for (const VariantSummary& s : r.summary) {
    std::snprintf(line, sizeof line, "%-18s %10.4f %10.4f %10.4f %12.5g  %s\n", s.name.c_str(), s.median_f1,
                  s.median_accuracy, s.median_recall, s.median_recon_mse, s.reference.c_str());
    os << line;
  }
  os << "\nDirectional checks:\n";
  for (const OrderingCheck& c : r.checks) os << (c.holds ? "  [holds]  " : "  [FAILED] ") << c.claim << '\n';
  return os.str();
}

// ---- lambda sweep ----------------------------------------------------------

double masked_fraction(const Tensor& teacher_feats, double lambda, double temperature) {
  const BinaryMask m = threshold_mask(spatial_attention(channel_abs_mean(teacher_feats), temperature), lambda);
  return m.masked_fraction();
}

SweepResult lambda_sweep(const ExperimentData& data, const DistillConfig& base, const std::vector<double>& lambdas,
                         const std::vector<std::uint64_t>& seeds, const TrainBudget& budget, std::size_t threads) {
  if (lambdas.empty() || seeds.empty()) throw std::invalid_argument("lambda_sweep: need lambdas and seeds");
  for (double l : lambdas)
    if (!(l > 0.0)) throw std::invalid_argument("lambda_sweep: all lambdas must be > 0");

  SweepResult r;
  r.seeds = seeds;
  std::vector<std::function<ExperimentResult()>> jobs;
  for (double l : lambdas) {
    DistillConfig c = base;
    c.lambda = l;
    for (std::uint64_t s : seeds) {
      jobs.push_back([&data, &budget, c, s] { return distill_student(c, data, s, budget, "lambda_sweep"); });
    }
  }
  r.runs = run_parallel(jobs, threads);

  for (std::size_t li = 0; li < lambdas.size(); ++li) {
    SweepRow row;
    row.lambda = lambdas[li];
    row.masked_fraction = masked_fraction(data.teacher_train, lambdas[li], base.temperature);
    std::vector<double> acc;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const ExperimentResult& e = r.runs[li * seeds.size() + si];
      row.f1.push_back(e.metrics.f1);
      acc.push_back(e.metrics.accuracy);
    }
    row.median_f1 = median(row.f1);
    row.median_accuracy = median(acc);
    row.reference_optimum = lambdas[li] == 1.0;
    r.rows.push_back(std::move(row));
  }

  // Masks shrink as lambda grows; check it on the rows in ascending lambda order.
  std::vector<const SweepRow*> sorted;
  for (const auto& row : r.rows) sorted.push_back(&row);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->lambda < b->lambda; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->masked_fraction > sorted[i - 1]->masked_fraction) {
      throw std::logic_error("lambda_sweep: masked fraction increased with lambda");
    }
  }
  return r;
}

std::string sweep_csv(const SweepResult& r) {
  std::ostringstream os;
  os << "lambda,masked_fraction,median_f1,median_accuracy";
  for (std::uint64_t s : r.seeds) os << ",f1_seed_" << s;
  os << ",reference\r\n";
  for (const SweepRow& row : r.rows) {
    os << csv_number(row.lambda) << ',' << csv_number(row.masked_fraction) << ',' << csv_number(row.median_f1)
       << ',' << csv_number(row.median_accuracy);
    for (double f : row.f1) os << ',' << csv_number(f);
    os << ',' << (row.reference_optimum ? "reference_optimum (42.7 mAP / 58.8 mAR at lambda=1.0)" : "") << "\r\n";
  }
  return os.str();
}

std::string experiment_csv(const ExperimentResult& r) {
  std::ostringstream os;
  os << "epoch,task_loss,distill_loss,overall_loss\r\n";
  for (const EpochLog& e : r.epochs) {
    os << e.epoch << ',' << csv_number(e.task_loss) << ',' << csv_number(e.distill_loss) << ','
       << csv_number(e.overall_loss) << "\r\n";
  }
  return os.str();
}

// ---- mask dumps ------------------------------------------------------------

std::string encode_pgm(std::size_t width, std::size_t height, const std::vector<unsigned char>& pixels) {
  if (pixels.size() != width * height) throw std::invalid_argument("encode_pgm: pixel count mismatch");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.append(pixels.begin(), pixels.end());
  return out;
}

std::vector<unsigned char> attention_to_gray(std::span<const double> values) {
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  std::vector<unsigned char> px(values.size(), 128);
  if (values.empty() || !(*hi > *lo)) return px;
  for (std::size_t i = 0; i < values.size(); ++i) {
    px[i] = static_cast<unsigned char>(std::lround(255.0 * (values[i] - *lo) / (*hi - *lo)));
  }
  return px;
}

std::vector<unsigned char> mask_to_gray(std::span<const double> values) {
  std::vector<unsigned char> px(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) px[i] = values[i] != 0.0 ? 255 : 0;
  return px;
}

}  // namespace amd
