// Copyright 2026 The datareg Authors
// SPDX-License-Identifier: Apache-2.0
#include "datareg_app/config.hpp"

#include <fstream>
#include <set>

#include "datareg/errors.hpp"
#include "datareg/scheduler.hpp"

namespace datareg::app {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config " + (path.empty() ? std::string("<root>") : path) + ": " + what);
}

// One JSON object under validation. Every read marks the key as known;
// finish() rejects whatever was left over.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  double num(const std::string& key, double def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number()) fail(at(key), "expected a number");
    return v.get<double>();
  }
  std::uint64_t u64(const std::string& key, std::uint64_t def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      fail(at(key), "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }
  std::size_t size(const std::string& key, std::size_t def) { return std::size_t(u64(key, def)); }
  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(at(key), "expected true or false");
    return v.get<bool>();
  }
  std::string str(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_string()) fail(at(key), "expected a string");
    return v.get<std::string>();
  }
  template <class Parse>
  auto choice(const std::string& key, const std::string& def, Parse parse) {
    const std::string s = str(key, def);
    try {
      return parse(s);
    } catch (const std::exception& e) {
      fail(at(key), e.what());
    }
  }
  const json& array(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) fail(at(key), "expected an array");
    return v;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(at(k), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::size_t as_size(const json& v, const std::string& path) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    fail(path, "expected a non-negative integer");
  return v.get<std::size_t>();
}

ProjectorDims dims_of(const json& v, const std::string& path) {
  if (!v.is_array() || (v.size() != 2 && v.size() != 3)) fail(path, "expected [k_in, k_out] or [k_in, k_out, k_final]");
  ProjectorDims d{as_size(v[0], path + "[0]"), as_size(v[1], path + "[1]"), 0};
  if (v.size() == 3) d.k_final = as_size(v[2], path + "[2]");
  if (d.k_in == 0 || d.k_out == 0) fail(path, "projection sizes must be positive");
  return d;
}

Precision parse_precision(const std::string& s) {
  if (s == "f64") return Precision::f64;
  if (s == "f32") return Precision::f32;
  throw ConfigError("unknown precision '" + s + "' (f32 | f64)");
}

SecondMomentMode parse_moment_mode(const std::string& s) {
  if (s == "exact") return SecondMomentMode::exact;
  if (s == "hutchinson") return SecondMomentMode::hutchinson;
  throw ConfigError("unknown second-moment mode '" + s + "' (exact | hutchinson)");
}

void parse_model(Obj o, RunConfig& c) {
  const bool layers = o.has("layers"), widths = o.has("widths");
  if (layers == widths) fail(o.at("layers"), "give exactly one of 'layers' or 'widths'");
  if (widths) {
    const json& w = o.array("widths");
    if (w.size() < 2) fail(o.at("widths"), "needs at least two entries");
    for (std::size_t l = 0; l + 1 < w.size(); ++l)
      c.model.layers.push_back({LayerKind::dense, as_size(w[l], o.at("widths")), as_size(w[l + 1], o.at("widths")), 0});
  } else {
    const json& ls = o.array("layers");
    for (std::size_t l = 0; l < ls.size(); ++l) {
      Obj lo(ls[l], o.at("layers") + "[" + std::to_string(l) + "]");
      LayerSpec spec;
      spec.kind = lo.choice("kind", "dense", parse_layer_kind);
      spec.w_in = lo.size("w_in", 0);
      spec.w_out = lo.size("w_out", 0);
      spec.rank = lo.size("rank", 0);
      lo.finish();
      c.model.layers.push_back(spec);
    }
  }
  c.model.activation = o.choice("activation", "tanh", parse_activation);
  c.model.loss = o.choice("loss", "squared", parse_loss);
  c.model.tokens = o.size("tokens", 1);
  if (o.has("init")) {
    Obj io(o.raw("init"), o.at("init"));
    c.init.scale = io.num("scale", c.init.scale);
    c.init.lora_b_scale = io.num("lora_b_scale", c.init.lora_b_scale);
    io.finish();
  }
  if (o.has("seed")) {
    c.model_seed = o.u64("seed", 0);
    c.model_seed_set = true;
  }
  o.finish();
  try {
    c.model.validate();
  } catch (const ConfigError& e) {
    fail(o.at("model"), e.what());
  }
}

void parse_task(Obj o, RunConfig& c) {
  TaskSpec& t = c.task;
  t.train_pool = o.size("train_pool", t.train_pool);
  t.target_pool = o.size("target_pool", t.target_pool);
  t.eval_pool = o.size("eval_pool", t.eval_pool);
  t.mismatch = o.num("mismatch", t.mismatch);
  t.clean_fraction = o.num("clean_fraction", t.clean_fraction);
  t.sources = o.size("sources", t.sources);
  t.noise = o.num("noise", t.noise);
  t.input_scale = o.num("input_scale", t.input_scale);
  t.input_shift = o.num("input_shift", t.input_shift);
  o.finish();
}

void parse_step(Obj o, RunConfig& c) {
  StepConfig& s = c.step;
  s.lr = o.num("lr", s.lr);
  s.spec.mode = o.choice("mode", "subset", parse_update_mode);
  if (o.has("rule")) {
    Obj r(o.raw("rule"), o.at("rule"));
    SelectionRule& rule = s.spec.rule;
    rule.kind = r.choice("kind", "topk", parse_rule_kind);
    rule.k = r.size("k", rule.k);
    rule.threshold = r.num("threshold", rule.threshold);
    rule.empty_policy = r.choice("empty_policy", "full_batch", parse_empty_policy);
    rule.greedy_divisor = r.choice("greedy_divisor", "running", parse_greedy_divisor);
    rule.enumeration_cap = r.u64("enumeration_cap", rule.enumeration_cap);
    r.finish();
  }
  if (o.has("partition")) {
    const json& p = o.raw("partition");
    if (p.is_string()) {
      c.partition.kind = p.get<std::string>();
    } else {
      Obj po(p, o.at("partition"));
      c.partition.kind = po.str("kind", "blocks");
      c.partition.block_layers = po.size("layers", 1);
      po.finish();
    }
    if (c.partition.kind != "global" && c.partition.kind != "layer_wise" && c.partition.kind != "blocks")
      fail(o.at("partition"), "unknown partition '" + c.partition.kind + "' (global | layer_wise | blocks)");
  }
  s.method = o.choice("method", "direct", parse_score_method);
  if (o.has("score_dims")) s.score_dims = dims_of(o.raw("score_dims"), o.at("score_dims"));
  s.projector_seed = o.u64("projector_seed", s.projector_seed);
  s.optimizer = o.choice("optimizer", "sgd", parse_optimizer);
  s.schedule = o.choice("schedule", "one_pass", parse_schedule);
  s.micro_batch = o.size("micro_batch", s.micro_batch);
  if (o.has("checkpoint_per_segment")) c.checkpoint_per_segment = o.size("checkpoint_per_segment", 1);
  s.precision = o.choice("precision", "f64", parse_precision);
  if (o.has("meso")) {
    Obj mo(o.raw("meso"), o.at("meso"));
    MesoConfig& m = s.meso;
    if (mo.has("dims")) m.dims = dims_of(mo.raw("dims"), mo.at("dims"));
    m.seed = mo.u64("seed", m.seed);
    m.identity = mo.boolean("identity", m.identity);
    m.refresh_every = mo.size("refresh_every", m.refresh_every);
    if (mo.has("adam")) {
      Obj ao(mo.raw("adam"), mo.at("adam"));
      m.adam.beta1 = ao.num("beta1", m.adam.beta1);
      m.adam.beta2 = ao.num("beta2", m.adam.beta2);
      m.adam.eps = ao.num("eps", m.adam.eps);
      m.adam.weight_decay = ao.num("weight_decay", m.adam.weight_decay);
      ao.finish();
    }
    if (mo.has("second_moment")) {
      Obj so(mo.raw("second_moment"), mo.at("second_moment"));
      m.second_moment.mode = so.choice("mode", "exact", parse_moment_mode);
      m.second_moment.probes = so.size("probes", m.second_moment.probes);
      so.finish();
    }
    mo.finish();
  }
  o.finish();
}

void parse_train(Obj o, RunConfig& c) {
  c.steps = o.size("steps", c.steps);
  c.n = o.size("n", c.n);
  c.m = o.size("m", c.m);
  c.eval_every = o.size("eval_every", c.eval_every);
  c.trace = o.boolean("trace", c.trace);
  o.finish();
}

void parse_bench(Obj o, RunConfig& c) {
  if (o.has("cells")) {
    const json& cells = o.array("cells");
    c.bench.cells.clear();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string p = o.at("cells") + "[" + std::to_string(i) + "]";
      if (!cells[i].is_array() || cells[i].size() != 4) fail(p, "expected [n, m, T, w]");
      std::array<std::size_t, 4> cell{};
      for (std::size_t k = 0; k < 4; ++k) cell[k] = as_size(cells[i][k], p);
      if (cell[0] == 0 || cell[1] == 0 || cell[2] == 0 || cell[3] == 0) fail(p, "all entries must be positive");
      c.bench.cells.push_back(cell);
    }
  }
  if (o.has("compressed_dims")) c.bench.compressed_dims = dims_of(o.raw("compressed_dims"), o.at("compressed_dims"));
  c.bench.repeats = o.size("repeats", c.bench.repeats);
  if (c.bench.repeats == 0) fail(o.at("repeats"), "must be positive");
  o.finish();
}

void parse_simulate(Obj o, RunConfig& c) {
  SimulateConfig& s = c.simulate;
  s.dim = o.size("dim", s.dim);
  s.n = o.size("n", s.n);
  s.k = o.size("k", s.k);
  s.groups = o.size("groups", s.groups);
  s.target_mean = o.num("target_mean", s.target_mean);
  s.target_var = o.num("target_var", s.target_var);
  s.train_var = o.num("train_var", s.train_var);
  if (o.has("mismatch")) {
    s.mismatch.clear();
    for (const json& v : o.array("mismatch")) {
      if (!v.is_number()) fail(o.at("mismatch"), "expected numbers");
      s.mismatch.push_back(v.get<double>());
    }
  }
  if (o.has("m")) {
    s.m.clear();
    for (const json& v : o.array("m")) s.m.push_back(as_size(v, o.at("m")));
  }
  s.trials = o.size("trials", s.trials);
  if (o.has("clip")) s.clip = o.num("clip", 0.0);
  if (o.has("methods")) {
    const json& ms = o.array("methods");
    for (std::size_t i = 0; i < ms.size(); ++i) {
      Obj mo(ms[i], o.at("methods") + "[" + std::to_string(i) + "]");
      SimMethodSpec spec;
      spec.kind = mo.choice("kind", "global", parse_sim_method);
      spec.k = mo.size("k", s.k);
      spec.groups = mo.size("groups", 1);
      mo.finish();
      s.methods.push_back(spec);
    }
  }
  o.finish();
  if (s.dim == 0 || s.n == 0 || s.trials == 0 || s.m.empty() || s.mismatch.empty())
    fail("simulate", "dim, n, trials, m and mismatch must be non-empty and positive");
  if (s.k == 0 || s.k > s.n) fail("simulate.k", "must lie in [1, n]");
  if (s.groups == 0 || s.groups > s.dim) fail("simulate.groups", "must lie in [1, dim]");
  if (s.methods.empty())
    s.methods = {{SimMethod::full_training, s.n, 1},
                 {SimMethod::global, s.k, 1},
                 {SimMethod::groupwise, s.k, s.groups},
                 {SimMethod::target_only, 1, 1}};
}

void parse_case_study(Obj o, RunConfig& c) {
  CaseStudyConfig& cs = c.case_study;
  cs.batches = o.size("batches", cs.batches);
  cs.n = o.size("n", cs.n);
  cs.m = o.size("m", cs.m);
  cs.method = o.choice("method", "direct", parse_score_method);
  if (o.has("rescale")) {
    Obj ro(o.raw("rescale"), o.at("rescale"));
    cs.rescale_from = ro.size("from", 0);
    cs.rescale_factor = ro.num("factor", cs.rescale_factor);
    ro.finish();
  }
  o.finish();
}

}  // namespace

Partition RunConfig::build_partition() const {
  if (partition.kind == "global") return Partition::global(model);
  if (partition.kind == "blocks") return Partition::blocks(model, partition.block_layers);
  return Partition::layer_wise(model);
}

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.steps = steps;
  o.n = n;
  o.m = m;
  o.eval_every = eval_every;
  o.seed = seed;
  o.step = step;
  return o;
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  c.source = j;
  Obj root(j, "");
  c.seed = root.u64("seed", 0);
  c.output_dir = root.str("output_dir", c.output_dir);
  if (!root.has("model")) fail("model", "missing");
  parse_model(Obj(root.raw("model"), "model"), c);
  if (root.has("task")) parse_task(Obj(root.raw("task"), "task"), c);
  c.task.seed = c.seed;
  if (root.has("train")) parse_train(Obj(root.raw("train"), "train"), c);
  if (root.has("step")) parse_step(Obj(root.raw("step"), "step"), c);
  if (root.has("bench")) parse_bench(Obj(root.raw("bench"), "bench"), c);
  if (root.has("simulate")) {
    parse_simulate(Obj(root.raw("simulate"), "simulate"), c);
  } else {
    parse_simulate(Obj(json::object(), "simulate"), c);
  }
  if (root.has("case_study")) parse_case_study(Obj(root.raw("case_study"), "case_study"), c);
  root.finish();

  // Cross-section checks, so a run never starts on an invalid combination.
  try {
    c.task.validate();
    c.step.spec.partition = c.build_partition();
    c.step.spec.partition.validate(c.model);
    if (c.step.spec.mode == UpdateMode::subset) c.step.spec.rule.validate(c.n);
    if (c.checkpoint_per_segment) {
      c.step.checkpoint = SegmentPlan::uniform(c.model.num_layers(), *c.checkpoint_per_segment);
      c.step.checkpoint->validate(c.model.num_layers());
    }
  } catch (const Error& e) {
    fail("", e.what());
  }
  if (c.n == 0 || c.steps == 0) fail("train", "steps and n must be positive");
  if (c.m == 0) fail("train.m", "must be positive");
  if (c.step.schedule == Schedule::grad_accum && c.step.micro_batch == 0)
    fail("step.micro_batch", "grad_accum needs a positive micro batch");
  return c;
}

json read_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
}

RunConfig load_config(const std::string& path) { return parse_config(read_config_json(path)); }

json default_config() {
  return json{{"seed", 0},
              {"model", {{"widths", {8, 16, 16, 4}}, {"activation", "tanh"}, {"loss", "squared"}, {"tokens", 1}}},
              {"task", {{"mismatch", 2.0}}},
              {"train", {{"steps", 300}, {"n", 8}, {"m", 8}, {"eval_every", 10}}},
              {"step", {{"lr", 0.05}, {"rule", {{"kind", "bruteforce"}, {"k", 2}}}, {"partition", "layer_wise"}}}};
}

std::uint64_t config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[std::size_t(i)] = digits[v & 15];
  return s;
}

}  // namespace datareg::app
