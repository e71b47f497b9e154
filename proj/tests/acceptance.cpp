// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.
//
//   acceptance [--workdir DIR]
//
// Criteria 6-9 drive the amd CLI end to end with the default configuration
// (pretrain, ablate, sweep), twice, into the same output directory.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "amd/config.hpp"
#include "amd/distill.hpp"
#include "amd/harness.hpp"
#include "amd/ops.hpp"
#include "amd/rng.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace amd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int n, bool pass, const std::string& what, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("%s criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", n, what.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// ---- criterion 1 ----------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  const auto reports = gradcheck_suite();
  const double secs = seconds_since(t0);
  bool ok = secs < 60.0;
  double worst = 0;
  std::string failed;
  bool full_graph = false;
  for (const auto& r : reports) {
    ok = ok && r.passed;
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.name;
    full_graph = full_graph || r.name.rfind("overall_graph", 0) == 0;
  }
  ok = ok && full_graph;
  report(1, ok, "finite-difference gradient suite, rel err < 1e-4, < 60 s",
         std::to_string(reports.size()) + " cases, max rel err " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) +
             " s" + (failed.empty() ? "" : ", failed:" + failed));
}

// ---- criterion 2 ----------------------------------------------------------

struct ConvCase {
  Tensor x, w, b;
  std::size_t pad;
};

ConvCase random_conv(Rng& rng, bool depthwise) {
  const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 4), h = pick(rng, 3, 8), wd = pick(rng, 3, 8);
  const std::size_t cout = depthwise ? cin : pick(rng, 1, 4);
  std::size_t k = 1 + 2 * rng.below(3);
  while (k > std::min(h, wd)) k -= 2;
  const std::size_t pad = rng.below(k / 2 + 1);
  return {Tensor::uniform({n, cin, h, wd}, rng, -1, 1), Tensor::uniform({cout, depthwise ? 1 : cin, k, k}, rng, -1, 1),
          Tensor::uniform({cout}, rng, -1, 1), pad};
}

// Forward and all three gradients against the loop oracle.
double conv_case_error(Rng& rng, bool depthwise) {
  ConvCase c = random_conv(rng, depthwise);
  c.x.set_requires_grad(true);
  c.w.set_requires_grad(true);
  c.b.set_requires_grad(true);
  Tape tape;
  const Tensor y = depthwise ? ops::depthwise_conv2d(tape, c.x, c.w, c.b, c.pad) : ops::conv2d(tape, c.x, c.w, c.b, c.pad);
  const Tensor target = Tensor::uniform(y.shape(), rng, -1, 1);
  tape.backward(ops::sum_squared_error(tape, y, target));
  Tensor gy(y.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) gy[i] = 2.0 * (y[i] - target[i]);
  const Tensor ref = oracle::conv2d(c.x, c.w, c.b, c.pad, depthwise);
  const oracle::ConvGrads g = oracle::conv2d_backward(c.x, c.w, gy, c.pad, depthwise);
  auto grad_of = [](const Tensor& t) {
    Tensor out(t.shape());
    std::ranges::copy(t.grad(), out.data().begin());
    return out;
  };
  return std::max({max_abs_diff(y, ref), max_abs_diff(grad_of(c.x), g.input), max_abs_diff(grad_of(c.w), g.weight),
                   max_abs_diff(grad_of(c.b), g.bias)});
}

void oracle_equivalence() {
  Rng rng = Rng::derive(2, "acceptance.oracles");
  double conv = 0, dw = 0, lin = 0, sse = 0;
  for (int i = 0; i < 100; ++i) conv = std::max(conv, conv_case_error(rng, false));
  for (int i = 0; i < 100; ++i) dw = std::max(dw, conv_case_error(rng, true));
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = pick(rng, 1, 4), in = pick(rng, 1, 8), out = pick(rng, 1, 8);
    const Tensor x = Tensor::uniform({n, in}, rng, -1, 1), w = Tensor::uniform({out, in}, rng, -1, 1),
                 b = Tensor::uniform({out}, rng, -1, 1);
    Tape tape;
    lin = std::max(lin, max_abs_diff(ops::linear(tape, x, w, b), oracle::linear(x, w, b)));
  }
  for (int i = 0; i < 100; ++i) {
    const Shape s{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 6), pick(rng, 1, 6)};
    const Tensor a = Tensor::uniform(s, rng, -1, 1), b = Tensor::uniform(s, rng, -1, 1);
    Tape tape;
    sse = std::max(sse, std::abs(ops::sum_squared_error(tape, a, b).item() - oracle::sse(a, b)));
  }
  const double worst = std::max({conv, dw, lin, sse});
  report(2, worst <= 1e-12, "conv2d, depthwise_conv2d, linear, sum_squared_error match loop oracles to 1e-12",
         "max abs err conv " + fmt("%.1e", conv) + ", depthwise " + fmt("%.1e", dw) + ", linear " +
             fmt("%.1e", lin) + ", sse " + fmt("%.1e", sse) + "; 100 cases each");
}

// ---- criterion 3 ----------------------------------------------------------

Tensor random_feature(Rng& rng) {
  const Shape s{pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 2, 8), pick(rng, 2, 8)};
  return Tensor::uniform(s, rng, -rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0));
}

void attention_invariants() {
  Rng rng = Rng::derive(3, "acceptance.attention");
  double sum_err = 0, shift_err = 0, oracle_err = 0;
  for (int i = 0; i < 100; ++i) {
    const Tensor f = random_feature(rng);
    const double t = rng.uniform(0.25, 2.0);
    const Tensor g = channel_abs_mean(f);
    const Tensor a = spatial_attention(g, t).map;
    const std::size_t n = a.dim(0), hw = a.dim(2) * a.dim(3);
    for (std::size_t s = 0; s < n; ++s) {
      double total = 0;
      for (std::size_t k = 0; k < hw; ++k) total += a[s * hw + k];
      sum_err = std::max(sum_err, std::abs(total - static_cast<double>(hw)));
    }
    Tensor shifted = g.clone();
    const double c = rng.uniform(-5, 5);
    for (double& v : shifted.data()) v += c;
    shift_err = std::max(shift_err, max_abs_diff(spatial_attention(shifted, t).map, a));
    oracle_err = std::max(oracle_err, max_abs_diff(a, oracle::attention(g, t)));
  }
  double uniform_err = 0;
  for (int i = 0; i < 20; ++i) {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 8), pick(rng, 2, 8), pick(rng, 2, 8)};
    const Tensor f(s, rng.uniform(-3, 3));
    const Tensor a = spatial_attention(channel_abs_mean(f), rng.uniform(0.25, 2.0)).map;
    for (double v : a.data()) uniform_err = std::max(uniform_err, std::abs(v - 1.0));
  }
  const bool ok = sum_err <= 1e-9 && shift_err <= 1e-12 && uniform_err <= 1e-12 && oracle_err <= 1e-12;
  report(3, ok, "attention sums to H*W, is shift invariant, uniform input gives all ones",
         "sum err " + fmt("%.1e", sum_err) + ", shift err " + fmt("%.1e", shift_err) + ", uniform err " +
             fmt("%.1e", uniform_err) + ", oracle err " + fmt("%.1e", oracle_err) + "; 100 features");
}

// ---- criterion 4 ----------------------------------------------------------

void mask_invariants() {
  Rng rng = Rng::derive(4, "acceptance.mask");
  bool nested = true;
  for (int i = 0; i < 100 && nested; ++i) {
    const SpatialAttention attn = spatial_attention(channel_abs_mean(random_feature(rng)), rng.uniform(0.25, 2.0));
    Tensor prev;
    for (double lambda : kDefaultLambdas) {
      const Tensor m = threshold_mask(attn, lambda).mask;
      // A position masked at the larger lambda must be masked at every smaller one.
      if (prev.defined()) {
        for (std::size_t k = 0; k < m.numel(); ++k) nested = nested && !(m[k] == 0.0 && prev[k] != 0.0);
      }
      prev = m;
    }
  }
  bool boundary = true;
  for (double lambda : kDefaultLambdas) {
    Tensor map({1, 1, 1, 3}, std::vector<double>{lambda, std::nextafter(lambda, 10.0), std::nextafter(lambda, 0.0)});
    const Tensor m = threshold_mask(SpatialAttention{map}, lambda).mask;
    boundary = boundary && m[0] == 1.0 && m[1] == 0.0 && m[2] == 1.0;
  }
  const Tensor flat = spatial_attention(channel_abs_mean(Tensor({2, 4, 8, 8}, 0.7)), 0.5).map;
  const std::size_t uniform_zeros = threshold_mask(SpatialAttention{flat}, 1.0).total_zeros();
  report(4, nested && boundary && uniform_zeros == 0,
         "mask zero sets nested across lambda grid, A = lambda unmasked, uniform attention unmasked at lambda 1",
         std::string("nested ") + (nested ? "yes" : "no") + ", boundary " + (boundary ? "yes" : "no") +
             ", uniform zeros " + std::to_string(uniform_zeros));
}

// ---- criterion 5 ----------------------------------------------------------

void frozenness_and_degeneration() {
  auto [train, test] = split(gen_dataset(505, 128), 0.75);
  const TeacherResult teacher = pretrain_teacher(train, test, 11, TrainBudget{4, 0.05}, 0.0);
  const ExperimentData data = prepare_data(teacher.model, train, test);
  const TrainBudget budget{3, 0.02};
  const ParamSet before = teacher.model.params().clone();
  bool frozen = true;
  std::size_t runs = 0;
  for (const Variant& v : ablation_variants(DistillConfig{})) {
    if (!v.distill) continue;
    distill_student(v.config, data, 1, budget, v.name);
    ++runs;
    frozen = frozen && identical_values(before, teacher.model.params());
  }
  bool degenerate = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    DistillConfig zero;
    zero.alpha = 0.0;
    const ExperimentResult d = distill_student(zero, data, seed, budget);
    const ExperimentResult p = train_plain(data, seed, budget);
    for (const auto& e : p.student.entries()) {
      const Tensor& other = d.student.get(e.name);
      for (std::size_t i = 0; i < e.value.numel(); ++i) degenerate = degenerate && e.value[i] == other[i];
    }
    for (std::size_t k = 0; k < p.epochs.size(); ++k) degenerate = degenerate && p.epochs[k].task_loss == d.epochs[k].task_loss;
    degenerate = degenerate && p.metrics.tp == d.metrics.tp && p.metrics.fp == d.metrics.fp;
  }
  report(5, frozen && degenerate, "teacher bit-identical across distillation, alpha = 0 bit-identical to plain training",
         "teacher unchanged over " + std::to_string(runs) + " variant runs: " + (frozen ? "yes" : "no") +
             "; alpha=0 equals plain on 3 seeds: " + (degenerate ? "yes" : "no"));
}

// ---- criteria 6-9: CLI pipeline --------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

using Row = std::map<std::string, std::string>;

// RFC-4180 records with a header line.
std::vector<Row> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> records(1);
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      records.back().push_back(std::move(field));
      field.clear();
    } else if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      records.back().push_back(std::move(field));
      field.clear();
      records.emplace_back();
      ++i;
    } else {
      field += ch;
    }
  }
  if (records.back().empty()) records.pop_back();
  std::vector<Row> rows;
  for (std::size_t r = 1; r < records.size(); ++r) {
    Row row;
    for (std::size_t c = 0; c < records[0].size() && c < records[r].size(); ++c) row[records[0][c]] = records[r][c];
    rows.push_back(std::move(row));
  }
  return rows;
}

double num(const Row& r, const std::string& key) {
  const auto it = r.find(key);
  return it == r.end() ? NAN : std::strtod(it->second.c_str(), nullptr);
}

struct Pass {
  bool ok = true;
  std::string error;
  double pretrain_seconds = 0, ablate_seconds = 0, sweep_seconds = 0;
  std::map<std::string, std::string> artifacts;
};

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("'") + AMD_CLI_PATH + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Pass run_pipeline(const fs::path& config, const fs::path& out, const std::string& tag) {
  Pass p;
  const std::string flags = " --config '" + config.string() + "'";
  const std::pair<const char*, double*> steps[] = {
      {"pretrain", &p.pretrain_seconds}, {"ablate", &p.ablate_seconds}, {"sweep", &p.sweep_seconds}};
  for (const auto& [cmd, secs] : steps) {
    const fs::path log = out.parent_path() / (tag + "_" + cmd + ".log");
    const auto t0 = Clock::now();
    const int code = run_cli(cmd + flags, log);
    *secs = seconds_since(t0);
    std::fprintf(stderr, "  [%s] amd %s: exit %d, %.1f s\n", tag.c_str(), cmd, code, *secs);
    if (code != 0) {
      p.ok = false;
      p.error = std::string("amd ") + cmd + " exited " + std::to_string(code) + ", see " + log.string();
      return p;
    }
    // Each command rewrites manifest.json; keep a copy per command.
    p.artifacts[std::string("manifest_") + cmd + ".json"] = slurp(out / "manifest.json");
  }
  for (const auto& e : fs::directory_iterator(out)) {
    const std::string name = e.path().filename().string();
    if (name != "manifest.json") p.artifacts[name] = slurp(e.path());
  }
  return p;
}

std::string strip_timestamp(const std::string& manifest) {
  std::istringstream in(manifest);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.find("\"timestamp\"") == std::string::npos) out += line + "\n";
  }
  return out;
}

void directional_claim(const Pass& p) {
  const auto summary = parse_csv(p.artifacts.at("ablation_summary.csv"));
  const auto rows = parse_csv(p.artifacts.at("ablation.csv"));
  std::map<std::string, double> f1;
  std::size_t seeds = 0;
  for (const Row& r : summary) {
    f1[r.at("variant")] = num(r, "median_f1");
    seeds = static_cast<std::size_t>(num(r, "seeds"));
  }
  std::map<std::string, double> full_budget, random_budget;
  for (const Row& r : rows) {
    if (r.at("variant") == "amd_full") full_budget[r.at("seed")] = num(r, "masked_fraction");
    if (r.at("variant") == "random_mask") random_budget[r.at("seed")] = num(r, "masked_fraction");
  }
  const bool matched = !full_budget.empty() && full_budget == random_budget;
  const double full = f1["amd_full"], rnd = f1["random_mask"], none = f1["no_distill"];
  const double secs = p.pretrain_seconds + p.ablate_seconds;
  const bool ok = seeds >= 5 && full >= rnd && rnd >= none && full - none > 0 && matched && secs < 900;
  report(6, ok, "median F1 amd_full >= random_mask >= no_distill, gap > 0, matched mask budget, < 15 min",
         "seeds " + std::to_string(seeds) + ", F1 full " + fmt("%.4f", full) + ", random " + fmt("%.4f", rnd) +
             ", none " + fmt("%.4f", none) + ", gap " + fmt("%+.4f", full - none) + ", budget matched " +
             (matched ? "yes" : "no") + ", pretrain+ablate " + fmt("%.0f", secs) + " s");
}

void ablation_analog(const Pass& p) {
  const std::string report_text = p.artifacts.at("ablation_report.txt");
  std::map<std::string, double> f1;
  for (const Row& r : parse_csv(p.artifacts.at("ablation_summary.csv"))) f1[r.at("variant")] = num(r, "median_f1");
  // The report is required; the single-component ordering is reported, and
  // its flag must agree with the medians.
  bool ok = report_text.find("41.3") != std::string::npos;
  std::string detail;
  for (const char* variant : {"ada_mask_only", "ada_channel_only"}) {
    const bool holds = f1["amd_full"] >= f1[variant];
    const std::string line = std::string(holds ? "[holds]  " : "[FAILED] ") + "median F1: amd_full >= " + variant;
    ok = ok && report_text.find(line) != std::string::npos;
    detail += std::string(variant) + " " + fmt("%.4f", f1[variant]) + (holds ? " holds" : " flagged") + ", ";
  }
  report(7, ok, "ablation report emitted with single-component ordering flagged",
         "full " + fmt("%.4f", f1["amd_full"]) + ", " + detail + "report ablation_report.txt");
}

void sweep_artifact(const Pass& p) {
  const auto rows = parse_csv(p.artifacts.at("sweep.csv"));
  bool ok = rows.size() == kDefaultLambdas.size();
  std::string curve;
  for (std::size_t i = 0; ok && i < rows.size(); ++i) {
    ok = num(rows[i], "lambda") == kDefaultLambdas[i];
    if (i > 0) ok = ok && num(rows[i], "masked_fraction") <= num(rows[i - 1], "masked_fraction");
    curve += fmt("%.1f", kDefaultLambdas[i]) + ":" + fmt("%.3f", num(rows[i], "masked_fraction")) + "/" +
             fmt("%.4f", num(rows[i], "median_f1")) + " ";
  }
  report(8, ok, "sweep CSV has the 5-point lambda grid, masked fraction non-increasing",
         "lambda:masked/F1 " + curve + "(" + fmt("%.0f", p.sweep_seconds) + " s)");
}

void reproducibility(const Pass& a, const Pass& b) {
  std::size_t csvs = 0, compared = 0;
  std::string differing;
  for (const auto& [name, bytes] : a.artifacts) {
    const auto it = b.artifacts.find(name);
    const bool manifest = name.rfind("manifest_", 0) == 0;
    const bool same = it != b.artifacts.end() &&
                      (manifest ? strip_timestamp(bytes) == strip_timestamp(it->second) : bytes == it->second);
    ++compared;
    if (name.ends_with(".csv")) ++csvs;
    if (!same) differing += " " + name;
  }
  const bool ok = a.artifacts.size() == b.artifacts.size() && differing.empty() && csvs > 0;
  report(9, ok, "two runs with the same config give identical CSVs (timestamp excluded)",
         std::to_string(csvs) + " CSVs, " + std::to_string(compared) + " artifacts compared" +
             (differing.empty() ? "" : ", differ:" + differing));
}

void pipeline(const fs::path& work) {
  fs::remove_all(work);
  const fs::path out = work / "out";
  fs::create_directories(out);
  RunConfig cfg;
  cfg.paths.out_dir = out.string();
  const fs::path config = work / "run.json";
  std::ofstream(config, std::ios::binary) << to_json_text(cfg, 2) << "\n";

  std::fprintf(stderr, "running CLI pipeline in %s\n", work.string().c_str());
  const Pass first = run_pipeline(config, out, "run1");
  if (!first.ok) {
    for (int n = 6; n <= 9; ++n) report(n, false, "CLI pipeline", first.error);
    return;
  }
  directional_claim(first);
  ablation_analog(first);
  sweep_artifact(first);
  const Pass second = run_pipeline(config, out, "run2");
  if (!second.ok) {
    report(9, false, "CLI pipeline rerun", second.error);
    return;
  }
  reproducibility(first, second);
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "amd_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--workdir DIR]\n", argv[0]);
      return 2;
    }
  }
  try {
    gradient_suite();
    oracle_equivalence();
    attention_invariants();
    mask_invariants();
    frozenness_and_degeneration();
    pipeline(work);
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
