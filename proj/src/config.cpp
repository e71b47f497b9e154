#include "amd/config.hpp"

#include <limits>
#include <set>

#include <json.hpp>

#include "amd/binio.hpp"

namespace amd {

using nlohmann::json;

namespace {

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config key '" + path + "': " + what);
}

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "expected a number");
  return v.get<double>();
}

std::uint64_t as_u64(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) fail(path, "expected a nonnegative integer");
  fail(path, "expected an integer");
}

// Reads the keys of one JSON object and rejects anything it did not consume.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  const json* find(std::string_view key) {
    seen_.emplace(key);
    auto it = obj_.find(std::string(key));
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string at(std::string_view key) const { return join(path_, key); }

  void number(std::string_view key, double& out) {
    if (const json* v = find(key)) out = as_number(*v, at(key));
  }
  void u64(std::string_view key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_u64(*v, at(key));
  }
  void size(std::string_view key, std::size_t& out) {
    if (const json* v = find(key)) out = static_cast<std::size_t>(as_u64(*v, at(key)));
  }
  void boolean(std::string_view key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(at(key), "expected true or false");
      out = v->get<bool>();
    }
  }
  void string(std::string_view key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class Enum, class Parse>
  void choice(std::string_view key, Enum& out, Parse parse) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(at(key), "expected a string");
      try {
        out = parse(v->get<std::string>());
      } catch (const std::invalid_argument& e) {
        fail(at(key), e.what());
      }
    }
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.contains(key)) fail(join(path_, key), "unknown key");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

void read_budget(Section& s, TrainBudget& b) {
  s.size("epochs", b.epochs);
  s.number("lr", b.lr);
  s.number("momentum", b.momentum);
  s.number("weight_decay", b.weight_decay);
  s.size("batch_size", b.batch_size);
}

void check_budget(const TrainBudget& b, const std::string& path) {
  if (b.epochs == 0) fail(path + ".epochs", "must be >= 1");
  if (!(b.lr > 0.0)) fail(path + ".lr", "must be > 0");
  if (b.momentum < 0.0 || b.momentum >= 1.0) fail(path + ".momentum", "must lie in [0, 1)");
  if (b.weight_decay < 0.0) fail(path + ".weight_decay", "must be >= 0");
  if (b.batch_size == 0) fail(path + ".batch_size", "must be >= 1");
}

json budget_json(const TrainBudget& b) {
  return json{{"epochs", b.epochs},
              {"lr", b.lr},
              {"momentum", b.momentum},
              {"weight_decay", b.weight_decay},
              {"batch_size", b.batch_size}};
}

}  // namespace

void RunConfig::validate() const {
  try {
    distill.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config section 'distill': ") + e.what());
  }
  check_budget(teacher, "teacher");
  check_budget(student, "student");
  if (teacher_min_accuracy < 0.0 || teacher_min_accuracy > 1.0) fail("teacher.min_accuracy", "must lie in [0, 1]");
  if (data.count < 2) fail("data.count", "must be >= 2");
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) fail("data.train_fraction", "must lie in (0, 1)");
  const SynthOptions& o = data.synth;
  if (o.min_blobs > o.max_blobs) fail("data.min_blobs", "must not exceed data.max_blobs");
  if (o.noise < 0.0 || o.noise > 1.0) fail("data.noise", "must lie in [0, 1]");
  if (!(o.min_radius > 0.0)) fail("data.min_radius", "must be > 0");
  if (o.min_radius > o.max_radius) fail("data.min_radius", "must not exceed data.max_radius");
  if (seeds.empty()) fail("seeds", "must not be empty");
  if (lambdas.empty()) fail("lambdas", "must not be empty");
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > 0.0)) fail("lambdas[" + std::to_string(i) + "]", "must be > 0");
  }
}

RunConfig parse_run_config(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");

  if (const json* d = top.find("distill")) {
    Section s(*d, "distill");
    DistillConfig& dc = c.distill;
    if (const json* a = s.find("alpha")) {
      if (a->is_string() && a->get<std::string>() == "auto") {
        dc.alpha.reset();
      } else if (a->is_number()) {
        dc.alpha = a->get<double>();
      } else {
        fail(s.at("alpha"), "expected a number or \"auto\"");
      }
    }
    s.number("lambda", dc.lambda);
    s.number("temperature", dc.temperature);
    s.choice("mask_policy", dc.mask_policy, parse_mask_policy);
    if (const json* r = s.find("mask_ratio")) {
      if (r->is_null()) {
        dc.mask_ratio.reset();
      } else {
        dc.mask_ratio = as_number(*r, s.at("mask_ratio"));
      }
    }
    s.boolean("ada_channel", dc.ada_channel);
    s.choice("gen_block", dc.gen_block, parse_gen_block);
    s.choice("clue_location", dc.clue_location, parse_clue_location);
    s.choice("feature_loss", dc.feature_loss, parse_feature_loss);
    s.size("se_reduction", dc.se_reduction);
    s.boolean("se_relu", dc.se_relu);
    s.finish();
  }
  if (const json* t = top.find("teacher")) {
    Section s(*t, "teacher");
    read_budget(s, c.teacher);
    s.number("min_accuracy", c.teacher_min_accuracy);
    s.finish();
  }
  if (const json* t = top.find("student")) {
    Section s(*t, "student");
    read_budget(s, c.student);
    s.finish();
  }
  if (const json* d = top.find("data")) {
    Section s(*d, "data");
    s.u64("seed", c.data.seed);
    s.size("count", c.data.count);
    s.number("train_fraction", c.data.train_fraction);
    s.size("min_blobs", c.data.synth.min_blobs);
    s.size("max_blobs", c.data.synth.max_blobs);
    s.number("noise", c.data.synth.noise);
    s.number("min_radius", c.data.synth.min_radius);
    s.number("max_radius", c.data.synth.max_radius);
    s.finish();
  }
  top.u64("teacher_seed", c.teacher_seed);
  if (const json* v = top.find("seeds")) {
    if (!v->is_array()) fail("seeds", "expected an array of integers");
    c.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i) c.seeds.push_back(as_u64((*v)[i], "seeds[" + std::to_string(i) + "]"));
  }
  if (const json* v = top.find("lambdas")) {
    if (!v->is_array()) fail("lambdas", "expected an array of numbers");
    c.lambdas.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      c.lambdas.push_back(as_number((*v)[i], "lambdas[" + std::to_string(i) + "]"));
    }
  }
  if (const json* p = top.find("paths")) {
    Section s(*p, "paths");
    s.string("teacher_weights", c.paths.teacher_weights);
    s.string("dataset", c.paths.dataset);
    s.string("out_dir", c.paths.out_dir);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse_run_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string to_json_text(const RunConfig& c, int indent) {
  const DistillConfig& d = c.distill;
  json distill{{"alpha", d.alpha ? json(*d.alpha) : json("auto")},
               {"lambda", d.lambda},
               {"temperature", d.temperature},
               {"mask_policy", to_string(d.mask_policy)},
               {"mask_ratio", d.mask_ratio ? json(*d.mask_ratio) : json(nullptr)},
               {"ada_channel", d.ada_channel},
               {"gen_block", to_string(d.gen_block)},
               {"clue_location", to_string(d.clue_location)},
               {"feature_loss", to_string(d.feature_loss)},
               {"se_reduction", d.se_reduction},
               {"se_relu", d.se_relu}};
  json teacher = budget_json(c.teacher);
  teacher["min_accuracy"] = c.teacher_min_accuracy;
  const SynthOptions& o = c.data.synth;
  json root{{"distill", distill},
            {"teacher", teacher},
            {"student", budget_json(c.student)},
            {"data",
             {{"seed", c.data.seed},
              {"count", c.data.count},
              {"train_fraction", c.data.train_fraction},
              {"min_blobs", o.min_blobs},
              {"max_blobs", o.max_blobs},
              {"noise", o.noise},
              {"min_radius", o.min_radius},
              {"max_radius", o.max_radius}}},
            {"teacher_seed", c.teacher_seed},
            {"seeds", c.seeds},
            {"lambdas", c.lambdas},
            {"paths",
             {{"teacher_weights", c.paths.teacher_weights},
              {"dataset", c.paths.dataset},
              {"out_dir", c.paths.out_dir}}}};
  return root.dump(indent);
}

std::string default_config_json() { return to_json_text(RunConfig{}); }

}  // namespace amd
