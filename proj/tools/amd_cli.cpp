#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "amd/binio.hpp"
#include "amd/config.hpp"
#include "amd/harness.hpp"
#include "amd/model.hpp"
#include "amd/synth.hpp"

#ifndef AMD_VERSION
#define AMD_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Usage or configuration problem (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Options {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::vector<double> lambdas;
  std::size_t n = 8;
};

// One command invocation: resolved config, output directory and the
// provenance collected for the manifest.
class Run {
 public:
  Run(std::string command, const Options& opt) : command_(std::move(command)) {
    if (!opt.config_path.empty()) {
      config_ = amd::load_run_config(opt.config_path);
      record_input("config", opt.config_path);
    }
    if (opt.seed) config_.teacher_seed = *opt.seed;
    if (!opt.seeds.empty()) config_.seeds = opt.seeds;
    if (!opt.lambdas.empty()) config_.lambdas = opt.lambdas;
    try {
      config_.validate();
    } catch (const amd::ConfigError& e) {
      throw UsageError(e.what());
    }
    out_ = opt.out.empty() ? fs::path(config_.paths.out_dir) : fs::path(opt.out);
    if (out_.empty()) throw UsageError("no output directory: pass --out or set paths.out_dir");
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec || !fs::is_directory(out_)) throw UsageError("cannot create output directory " + out_.string());
    config_.paths.out_dir = out_.string();
  }

  const amd::RunConfig& config() const { return config_; }
  const fs::path& out() const { return out_; }

  void record_input(const std::string& role, const fs::path& path) {
    inputs_[role] = {{"path", path.string()}, {"fnv1a64", hex64(amd::fnv1a64(amd::read_file_bytes(path)))}};
  }

  void emit(const std::string& name, std::string_view bytes) {
    amd::write_text_file(out_ / name, bytes);
    outputs_.push_back({{"file", name}, {"fnv1a64", hex64(amd::fnv1a64({bytes.begin(), bytes.end()}))}});
  }

  void emit_bytes(const std::string& name, const std::vector<unsigned char>& bytes) {
    amd::write_file_bytes(out_ / name, bytes);
    outputs_.push_back({{"file", name}, {"fnv1a64", hex64(amd::fnv1a64(bytes))}});
  }

  std::pair<amd::Dataset, amd::Dataset> data() {
    const amd::RunConfig& c = config_;
    amd::Dataset all;
    if (!c.paths.dataset.empty()) {
      if (!fs::exists(c.paths.dataset)) throw amd::PreconditionFailure("dataset file not found: " + c.paths.dataset);
      all = amd::load_dataset(c.paths.dataset);
      record_input("dataset", c.paths.dataset);
    } else {
      all = amd::gen_dataset(c.data.seed, c.data.count, c.data.synth);
    }
    return amd::split(all, c.data.train_fraction);
  }

  amd::ToyDetector teacher() {
    const fs::path path =
        config_.paths.teacher_weights.empty() ? out_ / "teacher.amdw" : fs::path(config_.paths.teacher_weights);
    if (!fs::exists(path)) {
      throw amd::PreconditionFailure("teacher weights not found at " + path.string() + " (run 'pretrain' first)");
    }
    record_input("teacher_weights", path);
    amd::ToyDetector model(amd::load_weights(path));
    model.freeze();
    return model;
  }

  void write_manifest() {
    json manifest{{"command", command_},
                  {"version", AMD_VERSION},
                  {"timestamp", utc_timestamp()},
                  {"config", json::parse(amd::to_json_text(config_))},
                  {"seeds", config_.seeds},
                  {"teacher_seed", config_.teacher_seed},
                  {"inputs", inputs_},
                  {"outputs", outputs_}};
    amd::write_text_file(out_ / "manifest.json", manifest.dump(2) + "\n");
  }

 private:
  std::string command_;
  amd::RunConfig config_;
  fs::path out_;
  json inputs_ = json::object();
  json outputs_ = json::array();
};

std::string metrics_header() { return "accuracy,precision,recall,f1,tp,fp,tn,fn"; }

std::string metrics_fields(const amd::Metrics& m) {
  std::ostringstream os;
  os << amd::csv_number(m.accuracy) << ',' << amd::csv_number(m.precision) << ',' << amd::csv_number(m.recall) << ','
     << amd::csv_number(m.f1) << ',' << m.tp << ',' << m.fp << ',' << m.tn << ',' << m.fn;
  return os.str();
}

int cmd_pretrain(const Options& opt) {
  Run run("pretrain", opt);
  const amd::RunConfig& c = run.config();
  auto [train, test] = run.data();
  const amd::TeacherResult teacher =
      amd::pretrain_teacher(train, test, c.teacher_seed, c.teacher, c.teacher_min_accuracy);

  std::ostringstream losses;
  losses << "epoch,task_loss\r\n";
  for (std::size_t e = 0; e < teacher.epoch_losses.size(); ++e) {
    losses << e + 1 << ',' << amd::csv_number(teacher.epoch_losses[e]) << "\r\n";
  }
  run.emit("teacher_epochs.csv", losses.str());
  run.emit("teacher_metrics.csv", "teacher_seed," + metrics_header() + "\r\n" + std::to_string(c.teacher_seed) + ',' +
                                      metrics_fields(teacher.metrics) + "\r\n");
  run.emit_bytes("teacher.amdw", amd::encode_weights(teacher.model.params()));
  amd::Dataset all = train;
  all.insert(all.end(), test.begin(), test.end());
  run.emit_bytes("dataset.amdd", amd::encode_dataset(all));
  run.write_manifest();
  std::cout << "teacher accuracy " << teacher.metrics.accuracy << " f1 " << teacher.metrics.f1 << " -> "
            << (run.out() / "teacher.amdw").string() << "\n";
  return kExitOk;
}

int cmd_distill(const Options& opt) {
  Run run("distill", opt);
  const amd::RunConfig& c = run.config();
  auto [train, test] = run.data();
  const amd::ExperimentData data = amd::prepare_data(run.teacher(), std::move(train), std::move(test));

  std::vector<std::function<amd::ExperimentResult()>> jobs;
  for (std::uint64_t seed : c.seeds) {
    jobs.emplace_back([&, seed] { return amd::distill_student(c.distill, data, seed, c.student, "distill"); });
  }
  const auto results = amd::run_parallel(jobs, amd::threads_from_env());

  std::ostringstream epochs, metrics;
  epochs << "seed,epoch,task_loss,distill_loss,overall_loss\r\n";
  metrics << "seed,alpha," << metrics_header() << ",recon_mse,masked_fraction\r\n";
  for (const amd::ExperimentResult& r : results) {
    for (const amd::EpochLog& e : r.epochs) {
      epochs << r.seed << ',' << e.epoch << ',' << amd::csv_number(e.task_loss) << ','
             << amd::csv_number(e.distill_loss) << ',' << amd::csv_number(e.overall_loss) << "\r\n";
    }
    metrics << r.seed << ',' << amd::csv_number(r.alpha_used) << ',' << metrics_fields(r.metrics) << ','
            << amd::csv_number(r.recon_mse) << ',' << amd::csv_number(r.masked_fraction) << "\r\n";
    run.emit_bytes("student_seed" + std::to_string(r.seed) + ".amdw", amd::encode_weights(r.student));
    std::cout << "seed " << r.seed << " f1 " << r.metrics.f1 << " accuracy " << r.metrics.accuracy << "\n";
  }
  run.emit("distill_epochs.csv", epochs.str());
  run.emit("distill_metrics.csv", metrics.str());
  run.write_manifest();
  return kExitOk;
}

int cmd_ablate(const Options& opt) {
  Run run("ablate", opt);
  const amd::RunConfig& c = run.config();
  if (c.seeds.size() < 5) throw UsageError("ablate needs at least 5 seeds, got " + std::to_string(c.seeds.size()));
  auto [train, test] = run.data();
  const amd::ExperimentData data = amd::prepare_data(run.teacher(), std::move(train), std::move(test));
  const amd::AblationResult r =
      amd::ablation_suite(data, amd::ablation_variants(c.distill), c.seeds, c.student, amd::threads_from_env());
  run.emit("ablation.csv", amd::ablation_csv(r));
  run.emit("ablation_summary.csv", amd::ablation_summary_csv(r));
  const std::string report = amd::ablation_report(r);
  run.emit("ablation_report.txt", report);
  run.write_manifest();
  std::cout << report;
  return kExitOk;
}

int cmd_sweep(const Options& opt) {
  Run run("sweep", opt);
  const amd::RunConfig& c = run.config();
  auto [train, test] = run.data();
  const amd::ExperimentData data = amd::prepare_data(run.teacher(), std::move(train), std::move(test));
  const amd::SweepResult r =
      amd::lambda_sweep(data, c.distill, c.lambdas, c.seeds, c.student, amd::threads_from_env());
  const std::string csv = amd::sweep_csv(r);
  run.emit("sweep.csv", csv);
  run.write_manifest();
  std::cout << csv;
  return kExitOk;
}

int cmd_gradcheck(const Options& opt) {
  const std::vector<amd::GradCheckReport> reports = amd::gradcheck_suite();
  std::ostringstream csv;
  csv << "case,checked,max_rel_error,passed\r\n";
  bool ok = true;
  for (const amd::GradCheckReport& r : reports) {
    ok = ok && r.passed;
    csv << r.name << ',' << r.checked << ',' << amd::csv_number(r.max_rel_error) << ',' << (r.passed ? 1 : 0)
        << "\r\n";
    std::printf("%-4s %-45s %6zu  max rel err %.3e\n", r.passed ? "ok" : "FAIL", r.name.c_str(), r.checked,
                r.max_rel_error);
  }
  if (!opt.out.empty()) {
    Run run("gradcheck", opt);
    run.emit("gradcheck.csv", csv.str());
    run.write_manifest();
  }
  if (!ok) {
    std::cerr << "gradient check failed\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_dump_masks(const Options& opt) {
  Run run("dump-masks", opt);
  const amd::RunConfig& c = run.config();
  if (opt.n == 0) throw UsageError("--n must be >= 1");
  auto [train, test] = run.data();
  const amd::ToyDetector teacher = run.teacher();
  const std::size_t n = std::min(opt.n, test.size());
  const amd::Dataset picked(test.begin(), test.begin() + static_cast<std::ptrdiff_t>(n));
  const amd::Tensor feats = amd::compute_features(teacher, picked);
  const amd::SpatialAttention attn =
      amd::spatial_attention(amd::channel_abs_mean(feats), c.distill.temperature);
  const amd::BinaryMask mask = amd::threshold_mask(attn, c.distill.lambda);

  const std::size_t h = feats.dim(2), w = feats.dim(3), plane = h * w;
  std::ostringstream csv;
  csv << "index,masked_positions,masked_fraction,min_attention,max_attention\r\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = attn.map.data().subspan(i * plane, plane);
    const auto m = mask.mask.data().subspan(i * plane, plane);
    char idx[16];
    std::snprintf(idx, sizeof idx, "%03zu", i);
    run.emit(std::string("attn_") + idx + ".pgm", amd::encode_pgm(w, h, amd::attention_to_gray(a)));
    run.emit(std::string("mask_") + idx + ".pgm", amd::encode_pgm(w, h, amd::mask_to_gray(m)));
    const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
    csv << i << ',' << mask.zeros(i) << ',' << amd::csv_number(static_cast<double>(mask.zeros(i)) / plane) << ','
        << amd::csv_number(*lo) << ',' << amd::csv_number(*hi) << "\r\n";
  }
  run.emit("masks.csv", csv.str());
  run.write_manifest();
  std::cout << "wrote " << n << " attention/mask pairs to " << run.out().string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive masked feature distillation on a synthetic dense-prediction task"};
  app.require_subcommand(1);
  app.footer("Numeric hyper-parameters come from a JSON config (--config); every key is optional and\n"
             "unknown keys are rejected. AMD_THREADS sets the number of parallel experiments (default 1).\n"
             "Exit codes: 0 success, 1 usage/config error, 2 runtime failure.\n\n"
             "Default configuration:\n" +
             amd::default_config_json());

  Options opt;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  };
  auto add_out = [&](CLI::App* sub, bool required) {
    auto* o = sub->add_option("--out", opt.out, "output directory (default: paths.out_dir)");
    if (required) o->required();
  };
  auto add_seeds = [&](CLI::App* sub) {
    sub->add_option("--seeds", opt.seeds, "comma-separated student seeds (overrides config)")->delimiter(',');
  };

  CLI::App* pretrain = app.add_subcommand("pretrain", "train and freeze the teacher, write weights and dataset");
  add_config(pretrain);
  pretrain->add_option("--seed", opt.seed, "teacher seed (overrides teacher_seed)");
  add_out(pretrain, false);

  CLI::App* distill = app.add_subcommand("distill", "distill one student per seed under the configured variant");
  add_config(distill);
  add_seeds(distill);
  add_out(distill, false);

  CLI::App* ablate = app.add_subcommand("ablate", "run every ablation variant over the seeds");
  add_config(ablate);
  add_seeds(ablate);
  add_out(ablate, false);

  CLI::App* sweep = app.add_subcommand("sweep", "sweep the mask threshold lambda");
  add_config(sweep);
  sweep->add_option("--lambdas", opt.lambdas, "comma-separated lambda grid (overrides config)")->delimiter(',');
  add_seeds(sweep);
  add_out(sweep, false);

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--out", opt.out, "optional directory for gradcheck.csv");

  CLI::App* dump = app.add_subcommand("dump-masks", "write teacher attention maps and masks as PGM images");
  add_config(dump);
  dump->add_option("--n", opt.n, "number of held-out scenes to dump")->capture_default_str();
  add_out(dump, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*pretrain) return cmd_pretrain(opt);
    if (*distill) return cmd_distill(opt);
    if (*ablate) return cmd_ablate(opt);
    if (*sweep) return cmd_sweep(opt);
    if (*gradcheck) return cmd_gradcheck(opt);
    if (*dump) return cmd_dump_masks(opt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const amd::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
