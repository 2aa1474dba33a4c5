// Batch command-line front end: data generation, training, inference, shift
// simulation and evaluation, mask-ratio sweeps, ablations, gradient checks.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "imac/error.hpp"
#include "imac/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace imac;

namespace {

constexpr const char* kOutputEnv = "IMAC_OUTPUT_DIR";
constexpr const char* kDefaultOutput = "imac_runs";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Tab-separated table with a header row.
class Table {
 public:
  explicit Table(std::vector<std::string> header) : header_(std::move(header)) {}
  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw ContractError("table row width mismatch");
    rows_.push_back(std::move(row));
  }
  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "\t" : "") << cells[i];
      out << '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// ---- configuration ----------------------------------------------------------

json train_keys() {
  const TrainConfig d;
  return json{{"learning_rate", d.learning_rate}, {"momentum", d.momentum},   {"epochs", d.epochs},
              {"batch_size", d.batch_size},       {"mask_ratio", d.mask_ratio}, {"lambda_cons", d.lambda_cons},
              {"seed", d.seed},                   {"variant", variant_name(d.variant)},
              {"w_dec", d.w_dec},                 {"w_imp", d.w_imp},         {"w_cls", d.w_cls},
              {"clip_norm", d.clip_norm},         {"cosine", d.cosine}};
}

json with_train_keys(json j) {
  const json keys = train_keys();
  for (auto& [k, v] : keys.items()) j[k] = v;
  return j;
}

// Converts a flag string to the type of the key's default value.
json coerce(const std::string& key, const json& like, const std::string& text) {
  try {
    std::size_t used = 0;
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError("");
    }
    if (like.is_number_unsigned()) {
      if (!text.empty() && text[0] == '-') throw ConfigError("");
      const unsigned long long v = std::stoull(text, &used);
      if (used != text.size()) throw ConfigError("");
      return v;
    }
    if (like.is_number()) {
      const double v = std::stod(text, &used);
      if (used != text.size()) throw ConfigError("");
      return v;
    }
    return text;
  } catch (const std::exception&) {
    throw ConfigError("bad value '" + text + "' for --" + key);
  }
}

void check_type(const std::string& key, const json& like, const json& v) {
  const bool ok = like.is_boolean()           ? v.is_boolean()
                  : like.is_number_unsigned() ? v.is_number_unsigned()
                  : like.is_number()          ? v.is_number()
                                              : v.is_string();
  if (!ok) throw ConfigError("config key '" + key + "' has the wrong type");
}

TrainConfig train_config(const json& c) {
  TrainConfig t;
  t.learning_rate = c["learning_rate"].get<double>();
  t.momentum = c["momentum"].get<double>();
  t.epochs = c["epochs"].get<std::size_t>();
  t.batch_size = c["batch_size"].get<std::size_t>();
  t.mask_ratio = c["mask_ratio"].get<double>();
  t.lambda_cons = c["lambda_cons"].get<double>();
  t.seed = c["seed"].get<std::uint64_t>();
  t.variant = parse_variant(c["variant"].get<std::string>());
  t.w_dec = c["w_dec"].get<double>();
  t.w_imp = c["w_imp"].get<double>();
  t.w_cls = c["w_cls"].get<double>();
  t.clip_norm = c["clip_norm"].get<double>();
  t.cosine = c["cosine"].get<bool>();
  t.validate();
  return t;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) {
    const double r = coerce("ratios", 0.0, item).get<double>();
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("mask ratio " + item + " outside [0, 1]");
    out.push_back(r);
  }
  if (out.empty()) throw ConfigError("--ratios is empty");
  return out;
}

std::string ratio_list(const std::vector<double>& ratios) {
  std::string s;
  for (double r : ratios) s += (s.empty() ? "" : ",") + fmt(r);
  return s;
}

const std::string& require(const json& c, const std::string& key) {
  const std::string& v = c[key].get_ref<const std::string&>();
  if (v.empty()) throw ConfigError("--" + key + " is required");
  return v;
}

// ---- run context --------------------------------------------------------------

struct Run {
  std::string command;
  json config;
  fs::path out;
  std::vector<std::string> outputs;

  fs::path file(const std::string& key, const std::string& fallback) {
    const std::string& v = config[key].get_ref<const std::string&>();
    fs::path p = v.empty() ? out / fallback : fs::path(v);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
  }
  void wrote(const fs::path& p) {
    outputs.push_back(p.string());
    std::cerr << "wrote " << p.string() << '\n';
  }
  void table(const Table& t, const std::string& name) {
    const fs::path p = out / name;
    t.write(p);
    wrote(p);
  }
  void manifest(const json& results) const {
    json m{{"command", command}, {"config", config}, {"outputs", outputs}, {"results", results}};
    const fs::path p = out / (command + ".manifest.json");
    std::ofstream f(p);
    if (!f) throw ConfigError("cannot write " + p.string());
    f << m.dump(2) << '\n';
  }
};

Dataset dataset_domain(const Dataset& ds, const std::string& domain) {
  if (domain.empty()) return ds;
  Dataset sub = select_domain(ds, domain, true);
  if (sub.recordings.empty()) throw ConfigError("no recordings in domain '" + domain + "'");
  return sub;
}

Dataset training_part(const Dataset& ds, const std::string& held_out) {
  if (held_out.empty()) return ds;
  return split_domain(ds, held_out).train;
}

json metrics_json(const ClassificationMetrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"kappa", m.kappa}};
}

// ---- commands -----------------------------------------------------------------

int cmd_gendata(Run& run) {
  const json& c = run.config;
  SyntheticSpec spec = SyntheticSpec::benchmark(c["train"].get<std::size_t>(), c["test"].get<std::size_t>(),
                                                c["seed"].get<std::uint64_t>());
  spec.noise = c["noise"].get<double>();
  spec.roughness = c["roughness"].get<double>();
  spec.distractor_gain = c["distractor_gain"].get<double>();
  spec.rank = c["rank"].get<std::size_t>();
  const Dataset ds = generate_synthetic(spec).dataset;
  const fs::path p = run.file("dataset", "synthetic.imds");
  save_dataset(p.string(), ds);
  run.wrote(p);
  run.manifest({{"recordings", ds.recordings.size()}});
  return 0;
}

int cmd_train(Run& run) {
  const json& c = run.config;
  const TrainConfig tc = train_config(c);
  const Dataset ds = training_part(load_dataset(require(c, "dataset")), c["held_out"].get<std::string>());
  Table log({"step", "learning_rate", "dec", "fid", "cons", "cls", "total"});
  const TrainerState st = fit(ds, tc, [&](std::uint64_t step, const LossBreakdown& l) {
    log.add({std::to_string(step), fmt(learning_rate_at(tc, ds.recordings.size(), step)), fmt(l.dec), fmt(l.fid),
             fmt(l.cons), fmt(l.cls), fmt(l.total)});
  });
  run.table(log, "train_log.tsv");
  const fs::path p = run.file("checkpoint", "model.ckpt");
  save_checkpoint(p.string(), st);
  run.wrote(p);
  run.manifest({{"steps", st.step}, {"train_recordings", ds.recordings.size()}});
  return 0;
}

int cmd_infer(Run& run) {
  const json& c = run.config;
  const TrainerState st = load_checkpoint(require(c, "checkpoint"));
  const Dataset ds = dataset_domain(load_dataset(require(c, "dataset")), c["domain"].get<std::string>());
  const Evaluation ev = evaluate(st.model, ds);
  std::vector<std::string> header{"index", "subject", "domain", "label", "predicted"};
  for (std::size_t k = 0; k < st.model.config.num_classes; ++k) header.push_back("p" + std::to_string(k));
  Table preds(header);
  for (std::size_t i = 0; i < ds.recordings.size(); ++i) {
    const auto& r = ds.recordings[i];
    std::vector<std::string> row{std::to_string(i), r.subject_id, r.domain_id, std::to_string(r.label),
                                 std::to_string(ev.predictions[i].label)};
    for (double p : ev.predictions[i].probs) row.push_back(fmt(p));
    preds.add(row);
  }
  run.table(preds, "predictions.tsv");
  Table metrics({"metric", "value"});
  const json m = metrics_json(ev.metrics);
  for (auto& [k, v] : m.items()) metrics.add({k, fmt(v.get<double>())});
  run.table(metrics, "metrics.tsv");
  run.manifest(metrics_json(ev.metrics));
  return 0;
}

int cmd_shift(Run& run) {
  const json& c = run.config;
  ShiftSpec spec = ShiftSpec::parse(c["shift"].get<std::string>());
  const Dataset ds = load_dataset(require(c, "dataset"));
  const Dataset shifted = shift_dataset(ds, spec);
  const fs::path p = run.file("output", "shifted.imds");
  save_dataset(p.string(), shifted);
  run.wrote(p);
  run.manifest({{"shift", spec.label()}, {"recordings", shifted.recordings.size()}});
  return 0;
}

std::vector<ShiftSpec> parse_shifts(const std::string& text, std::uint64_t seed) {
  if (text == "battery") return shift_battery(seed);
  std::vector<ShiftSpec> out;
  if (text == "none") return out;
  for (const auto& item : split_list(text)) out.push_back(ShiftSpec::parse(item));
  return out;
}

int cmd_evaluate_shift(Run& run) {
  const json& c = run.config;
  const TrainerState st = load_checkpoint(require(c, "checkpoint"));
  const Dataset ds = dataset_domain(load_dataset(require(c, "dataset")), c["domain"].get<std::string>());
  const auto rows = evaluate_shift(st.model, ds, parse_shifts(c["shifts"].get<std::string>(),
                                                              c["seed"].get<std::uint64_t>()));
  Table t({"shift", "accuracy", "delta", "integrity"});
  json res = json::array();
  for (const auto& r : rows) {
    t.add({r.shift, fmt(r.accuracy), fmt(r.delta), fmt(r.integrity)});
    res.push_back({{"shift", r.shift}, {"accuracy", r.accuracy}, {"delta", r.delta}, {"integrity", r.integrity}});
  }
  run.table(t, "shift_report.tsv");
  run.manifest(res);
  return 0;
}

int cmd_masksweep(Run& run) {
  const json& c = run.config;
  const TrainConfig tc = train_config(c);
  const Split split = split_domain(load_dataset(require(c, "dataset")), require(c, "held_out"));
  const auto rows = mask_sweep(split.train, split.test, tc, parse_ratios(c["ratios"].get<std::string>()));
  Table t({"ratio", "accuracy"});
  json res = json::array();
  for (const auto& r : rows) {
    t.add({fmt(r.ratio), fmt(r.accuracy)});
    res.push_back({{"ratio", r.ratio}, {"accuracy", r.accuracy}});
  }
  run.table(t, "masksweep.tsv");
  run.manifest(res);
  return 0;
}

int cmd_ablate(Run& run) {
  const json& c = run.config;
  const TrainConfig base = train_config(c);
  const Split split = split_domain(load_dataset(require(c, "dataset")), require(c, "held_out"));
  Table t({"variant", "accuracy", "precision", "recall", "f1", "kappa"});
  json res = json::object();
  for (const auto& name : split_list(c["variants"].get<std::string>())) {
    TrainConfig tc = base;
    tc.variant = parse_variant(name);
    const Evaluation ev = evaluate(fit(split.train, tc).model, split.test);
    const auto& m = ev.metrics;
    t.add({variant_name(tc.variant), fmt(m.accuracy), fmt(m.precision), fmt(m.recall), fmt(m.f1), fmt(m.kappa)});
    res[variant_name(tc.variant)] = metrics_json(m);
    std::cerr << variant_name(tc.variant) << " accuracy " << fmt(m.accuracy) << '\n';
  }
  run.table(t, "ablation.tsv");
  run.manifest(res);
  return 0;
}

int cmd_gradcheck(Run& run) {
  const json& c = run.config;
  const double tol = c["tolerance"].get<double>();
  Table t({"variant", "coords", "max_rel_error", "worst"});
  json res = json::object();
  bool ok = true;
  for (const auto& name : split_list(c["variants"].get<std::string>())) {
    const Variant v = parse_variant(name);
    const GradCheckReport r = joint_gradcheck(v, c["seed"].get<std::uint64_t>());
    t.add({variant_name(v), std::to_string(r.coords), fmt(r.max_rel_error), r.worst});
    res[variant_name(v)] = r.max_rel_error;
    ok = ok && r.max_rel_error < tol;
  }
  run.table(t, "gradcheck.tsv");
  run.manifest(res);
  if (!ok) throw NumericalError("gradient check above tolerance " + fmt(tol));
  return 0;
}

struct Command {
  std::string name;
  std::string help;
  json defaults;
  std::function<int(Run&)> run;
};

std::vector<Command> commands() {
  const SyntheticSpec syn;
  const std::string all_variants = "full,imp,dec,uni,baseline";
  return {
      {"gendata", "Generate the seeded synthetic benchmark dataset",
       {{"dataset", ""}, {"train", 400u}, {"test", 100u}, {"seed", 1u}, {"noise", syn.noise},
        {"roughness", 1.0}, {"distractor_gain", syn.distractor_gain}, {"rank", syn.rank}},
       cmd_gendata},
      {"train", "Train a model and write a checkpoint plus loss trace",
       with_train_keys({{"dataset", ""}, {"held_out", kHeldOutDomain}, {"checkpoint", ""}}), cmd_train},
      {"infer", "Predict with a checkpoint and score the predictions",
       {{"checkpoint", ""}, {"dataset", ""}, {"domain", ""}}, cmd_infer},
      {"shift", "Write a shifted copy of a dataset",
       {{"dataset", ""}, {"shift", "bandpass:1:25"}, {"output", ""}}, cmd_shift},
      {"evaluate-shift", "Accuracy and feature integrity under shifts",
       {{"checkpoint", ""}, {"dataset", ""}, {"domain", ""}, {"shifts", "battery"}, {"seed", 1u}},
       cmd_evaluate_shift},
      {"masksweep", "Train one model per mask ratio and score the held-out domain",
       with_train_keys({{"dataset", ""}, {"held_out", kHeldOutDomain}, {"ratios", ratio_list(kDefaultMaskRatios)}}),
       cmd_masksweep},
      {"ablate", "Train and score each variant on the held-out domain",
       with_train_keys({{"dataset", ""}, {"held_out", kHeldOutDomain}, {"variants", all_variants}}), cmd_ablate},
      {"gradcheck", "Finite-difference check of the joint loss on a tiny model",
       {{"variants", all_variants}, {"seed", 1u}, {"tolerance", 1e-4}}, cmd_gradcheck},
  };
}

// defaults, then the --config file, then flags.
json resolve(const Command& cmd, const std::string& config_path, const std::map<std::string, std::string>& flags) {
  json c = cmd.defaults;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read config " + config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + config_path + ": " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config " + config_path + " must be a JSON object");
    for (auto& [k, v] : file.items()) {
      if (!c.contains(k)) throw ConfigError("unknown config key '" + k + "' for " + cmd.name);
      check_type(k, c[k], v);
      c[k] = v;
    }
  }
  for (const auto& [k, v] : flags) c[k] = coerce(k, c[k], v);
  return c;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return 2;
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const ContractError*>(&e) || dynamic_cast<const DimensionError*>(&e))
    return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IMAC: EEG channel imputation, training and shift evaluation"};
  app.require_subcommand(1);
  const char* env_out = std::getenv(kOutputEnv);
  std::vector<Command> cmds = commands();
  for (auto& cmd : cmds) cmd.defaults["out"] = env_out && *env_out ? env_out : kDefaultOutput;

  struct Slot {
    std::string config;
    std::map<std::string, std::string> values;
  };
  std::map<std::string, Slot> slots;
  std::map<std::string, CLI::App*> subs;
  for (const auto& cmd : cmds) {
    Slot& s = slots[cmd.name];
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", s.config, "JSON file of key/value settings");
    for (auto& [k, v] : cmd.defaults.items()) {
      const std::string def = v.is_string() ? v.get<std::string>() : v.dump();
      sub->add_option("--" + k, s.values[k], "default: " + (def.empty() ? std::string("none") : def));
    }
    subs[cmd.name] = sub;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (const auto& cmd : cmds) {
    CLI::App* sub = subs[cmd.name];
    if (!sub->parsed()) continue;
    const Slot& s = slots[cmd.name];
    std::map<std::string, std::string> flags;
    for (const auto& [k, v] : s.values)
      if (sub->get_option("--" + k)->count() > 0) flags[k] = v;
    try {
      json config = resolve(cmd, s.config, flags);
      const fs::path out = require(config, "out");
      Run run{cmd.name, std::move(config), out, {}};
      fs::create_directories(run.out);
      std::cerr << "config " << run.config.dump() << '\n';
      return cmd.run(run);
    } catch (const std::exception& e) {
      std::cerr << "imac " << cmd.name << ": " << e.what() << '\n';
      return exit_code(e);
    }
  }
  return 2;
}
