// Copyright 2026 The amend Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Stage-per-command orchestration. Every command reads its predecessors'
// artifacts from the output directory, writes its own under <out>/<stage>/
// together with a manifest, and records a fingerprint that chains the
// fingerprints of everything upstream. A command refuses to run on missing or
// stale inputs.

#ifndef AMEND_PIPELINE_HPP_
#define AMEND_PIPELINE_HPP_

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amend/baseline_net.hpp"
#include "amend/clustering.hpp"
#include "amend/common.hpp"
#include "amend/data.hpp"
#include "amend/difficulty.hpp"
#include "amend/evaluation.hpp"
#include "amend/experts.hpp"
#include "amend/metrics.hpp"
#include "amend/routing.hpp"

namespace amend::pipeline
{

namespace fs = std::filesystem;
using nlohmann::json;

/// Upstream artifact whose fingerprint no longer matches the current config.
class StaleArtifactError : public MissingArtifactError
{
public:
  using MissingArtifactError::MissingArtifactError;
};

// ---------------------------------------------------------------------------
// Config

/// Flat dotted-key configuration. Every key has a default; unknown keys are
/// rejected. `null` marks an optional key with no value.
class Config
{
public:
  Config() : values_(defaults()) {}

  static json defaults()
  {
    return {
        {"seed", 0},
        {"out", "runs/amend"},
        {"data.source", "synth"},
        {"data.train", nullptr},
        {"data.val", nullptr},
        {"data.test", nullptr},
        {"data.stride", 10},
        {"data.train_fraction", 0.7},
        {"data.val_fraction", 0.1},
        {"synth.spec", nullptr},
        {"synth.spec_file", nullptr},
        {"net.t_hist", 8},
        {"net.t_pred", 12},
        {"net.K_max", 20},
        {"net.latent_dim", 32},
        {"net.encoder_hidden", json::array({64, 64})},
        {"net.decoder_hidden", json::array({64})},
        {"net.neighbor_feature_dim", 16},
        {"net.max_neighbors", 8},
        {"net.activation", "tanh"},
        {"train.epochs", 300},
        {"train.batch_size", 64},
        {"train.learning_rate", 1e-3},
        {"ewta.decay_factor", 0.8},
        {"ewta.patience", 5},
        {"cluster.C", 3},
        {"cluster.basis", "latent"},
        {"cluster.n_init", 10},
        {"cluster.max_iter", 300},
        {"cluster.tol", 1e-6},
        {"experts.alpha", 0.5},
        {"experts.epochs", nullptr},
        {"rank.trials", 1},
        {"router.hidden_dim", 232},
        {"router.temperature", 1.0},
        {"router.warm_start", false},
        {"router.epochs", nullptr},
        {"difficulty.dt", 0.4},
        {"difficulty.q", 0.1},
        {"difficulty.r", 0.1},
        {"eval.var_alpha", 0.97},
        {"eval.policies", nullptr},
    };
  }

  static Config from_file(const fs::path & path)
  {
    std::ifstream in(path);
    if (!in) {
      throw ConfigError("cannot open config file " + path.string());
    }
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error & e) {
      throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    Config c;
    c.merge(j);
    return c;
  }

  void merge(const json & flat)
  {
    if (!flat.is_object()) {
      throw ConfigError("config must be a JSON object of dotted keys");
    }
    for (const auto & [key, value] : flat.items()) {
      set_value(key, value);
    }
  }

  void set_value(const std::string & key, const json & value)
  {
    const auto defaults_ = defaults();
    const auto it = defaults_.find(key);
    if (it == defaults_.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    if (!value.is_null() && !it->is_null() && !compatible(*it, value)) {
      throw ConfigError("config key '" + key + "' expects a value like " + it->dump() +
                        ", got " + value.dump());
    }
    values_[key] = value;
  }

  /// Applies a `key=value` override. The value is parsed as JSON when
  /// possible and taken as a string otherwise.
  void set(const std::string & assignment)
  {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    set_value(key, value);
  }

  bool has(const std::string & key) const { return !values_.at(key).is_null(); }

  template <typename T>
  T get(const std::string & key) const
  {
    const json & v = values_.at(key);
    if (v.is_null()) {
      throw ConfigError("config key '" + key + "' is required");
    }
    try {
      return v.get<T>();
    } catch (const json::exception &) {
      throw ConfigError("config key '" + key + "' has the wrong type: " + v.dump());
    }
  }

  template <typename T>
  T get_or(const std::string & key, const T & fallback) const
  {
    return has(key) ? get<T>(key) : fallback;
  }

  const json & values() const { return values_; }

  /// Keys equal to an entry of `prefixes`, or under one ending in '.'.
  json subset(const std::vector<std::string> & prefixes) const
  {
    json out = json::object();
    for (const auto & [key, value] : values_.items()) {
      for (const auto & p : prefixes) {
        const bool match = p.back() == '.' ? key.rfind(p, 0) == 0 : key == p;
        if (match) {
          out[key] = value;
          break;
        }
      }
    }
    return out;
  }

private:
  static bool compatible(const json & reference, const json & value)
  {
    if (reference.is_number_integer()) {
      return value.is_number_integer() ||
             (value.is_number_float() && value.get<double>() == static_cast<double>(
                                                                    value.get<std::int64_t>()));
    }
    if (reference.is_number()) return value.is_number();
    return reference.type() == value.type();
  }

  json values_;
};

inline NetConfig net_config(const Config & c)
{
  NetConfig n;
  n.t_hist = c.get<int>("net.t_hist");
  n.t_pred = c.get<int>("net.t_pred");
  n.k_max = c.get<int>("net.K_max");
  n.latent_dim = c.get<int>("net.latent_dim");
  n.encoder_hidden_dims = c.get<std::vector<int>>("net.encoder_hidden");
  n.decoder_hidden_dims = c.get<std::vector<int>>("net.decoder_hidden");
  n.neighbor_feature_dim = c.get<int>("net.neighbor_feature_dim");
  n.max_neighbors = c.get<int>("net.max_neighbors");
  n.hidden_activation = nn::activation_from_string(c.get<std::string>("net.activation"));
  n.validate();
  return n;
}

inline TrainOptions train_options(const Config & c, const std::string & epochs_key = "")
{
  TrainOptions o;
  o.epochs = c.get<int>("train.epochs");
  if (!epochs_key.empty() && c.has(epochs_key)) o.epochs = c.get<int>(epochs_key);
  o.batch_size = c.get<int>("train.batch_size");
  o.learning_rate = c.get<double>("train.learning_rate");
  o.decay_factor = c.get<double>("ewta.decay_factor");
  o.patience_epochs = c.get<int>("ewta.patience");
  if (o.epochs < 1 || o.batch_size < 1 || !(o.learning_rate > 0.0) || o.patience_epochs < 1 ||
      !(o.decay_factor > 0.0 && o.decay_factor < 1.0)) {
    throw ConfigError("invalid training options");
  }
  return o;
}

// ---------------------------------------------------------------------------
// Stages

inline const std::vector<std::string> & commands()
{
  static const std::vector<std::string> kCommands{
      "synth",         "prepare", "train-baseline", "embed",   "cluster",
      "train-experts", "rank",    "train-router",   "evaluate"};
  return kCommands;
}

inline std::string stage_dir(const std::string & command)
{
  if (command == "train-baseline") return "baseline";
  if (command == "train-experts") return "experts";
  if (command == "train-router") return "router";
  return command;
}

inline bool is_command(const std::string & command)
{
  const auto & all = commands();
  return std::find(all.begin(), all.end(), command) != all.end();
}

inline ClusterBasis cluster_basis(const Config & c)
{
  return basis_from_string(c.get<std::string>("cluster.basis"));
}

/// Routing policies evaluated by `evaluate`. Cluster routing needs a latent basis.
inline std::vector<RoutingPolicy> eval_policies(const Config & c)
{
  if (c.has("eval.policies")) {
    std::vector<RoutingPolicy> out;
    for (const auto & name : c.get<std::vector<std::string>>("eval.policies")) {
      out.push_back(policy_from_string(name));
    }
    if (out.empty()) throw ConfigError("eval.policies must not be empty");
    if (std::count(out.begin(), out.end(), RoutingPolicy::kCluster) &&
        cluster_basis(c) != ClusterBasis::kLatent) {
      throw ConfigError("the cluster routing policy needs cluster.basis=latent");
    }
    return out;
  }
  std::vector<RoutingPolicy> out{RoutingPolicy::kRouter};
  if (cluster_basis(c) == ClusterBasis::kLatent) out.push_back(RoutingPolicy::kCluster);
  out.push_back(RoutingPolicy::kRandom);
  out.push_back(RoutingPolicy::kOracle);
  return out;
}

inline bool uses_policy(const Config & c, RoutingPolicy p)
{
  const auto policies = eval_policies(c);
  return std::find(policies.begin(), policies.end(), p) != policies.end();
}

inline std::vector<std::string> upstream(const Config & c, const std::string & command)
{
  if (command == "synth") return {};
  if (command == "prepare") {
    return c.get<std::string>("data.source") == "synth" ? std::vector<std::string>{"synth"}
                                                        : std::vector<std::string>{};
  }
  if (command == "train-baseline") return {"prepare"};
  if (command == "embed") return {"prepare", "train-baseline"};
  if (command == "cluster") {
    return cluster_basis(c) == ClusterBasis::kLatent ? std::vector<std::string>{"prepare", "embed"}
                                                     : std::vector<std::string>{"prepare"};
  }
  if (command == "train-experts") return {"prepare", "cluster"};
  if (command == "rank") return {"prepare", "train-experts"};
  if (command == "train-router") {
    std::vector<std::string> out{"prepare", "rank"};
    if (c.get<bool>("router.warm_start")) out.push_back("train-baseline");
    return out;
  }
  if (command == "evaluate") {
    std::vector<std::string> out{"prepare", "train-baseline", "train-experts"};
    if (uses_policy(c, RoutingPolicy::kRouter)) out.push_back("train-router");
    return out;
  }
  throw ConfigError("unknown command '" + command + "'");
}

inline std::vector<std::string> relevant_keys(const std::string & command)
{
  if (command == "synth") return {"synth."};
  if (command == "prepare") return {"data.", "net.t_hist", "net.t_pred"};
  if (command == "train-baseline") return {"net.", "train.", "ewta.", "seed"};
  if (command == "embed") return {};
  if (command == "cluster") return {"cluster.", "seed"};
  if (command == "train-experts") return {"experts.", "net.", "train.", "ewta.", "seed"};
  if (command == "rank") return {"rank."};
  if (command == "train-router") return {"router.", "train.", "seed"};
  if (command == "evaluate") return {"eval.", "difficulty.", "seed"};
  throw ConfigError("unknown command '" + command + "'");
}

inline std::uint64_t input_file_hash(const Config & c);

/// Stable hash of the stage's config keys and every upstream fingerprint.
inline std::string fingerprint(const Config & c, const std::string & command)
{
  std::string text = command + "\n" + c.subset(relevant_keys(command)).dump() + "\n";
  if (command == "prepare" && c.get<std::string>("data.source") == "files") {
    text += to_hex(input_file_hash(c)) + "\n";
  }
  for (const auto & u : upstream(c, command)) {
    text += u + "=" + fingerprint(c, u) + "\n";
  }
  return to_hex(fnv1a(text));
}

// ---------------------------------------------------------------------------
// Files

inline void write_text(const fs::path & path, const std::string & text)
{
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

inline std::string read_text(const fs::path & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("missing artifact " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json(const fs::path & path, const json & j) { write_text(path, j.dump(1) + "\n"); }

inline json read_json(const fs::path & path)
{
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error & e) {
    throw Error("corrupt artifact " + path.string() + ": " + e.what());
  }
}

/// Trajectory files of a `data.*` entry: a file, a directory of files, or a list of either.
inline std::vector<fs::path> data_files(const Config & c, const std::string & key)
{
  if (!c.has(key)) return {};
  const json & v = c.values().at(key);
  std::vector<std::string> entries;
  if (v.is_string()) {
    entries.push_back(v.get<std::string>());
  } else {
    entries = c.get<std::vector<std::string>>(key);
  }
  std::vector<fs::path> out;
  for (const auto & e : entries) {
    const fs::path p(e);
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto & f : fs::directory_iterator(p)) {
        if (f.is_regular_file()) files.push_back(f.path());
      }
      std::sort(files.begin(), files.end());
      out.insert(out.end(), files.begin(), files.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw MissingArtifactError("data file " + p.string() + " (" + key + ") does not exist");
    }
  }
  return out;
}

inline std::uint64_t input_file_hash(const Config & c)
{
  std::uint64_t h = fnv1a("");
  for (const char * key : {"data.train", "data.val", "data.test"}) {
    for (const auto & f : data_files(c, key)) {
      h = fnv1a(f.string(), h);
      h = fnv1a(read_text(f), h);
    }
  }
  return h;
}

// ---------------------------------------------------------------------------
// Run context

struct Context
{
  Config config;
  fs::path out;
  std::ostream * log = nullptr;

  explicit Context(Config c) : config(std::move(c)), out(config.get<std::string>("out")) {}

  fs::path path(const std::string & command, const std::string & file) const
  {
    return out / stage_dir(command) / file;
  }

  std::uint64_t seed() const { return config.get<std::uint64_t>("seed"); }

  void info(const std::string & msg) const
  {
    if (log) *log << msg << '\n';
  }
};

struct Manifest
{
  std::string command;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string fingerprint;
  double wall_time = 0.0;
};

inline json to_json(const Manifest & m)
{
  return {{"command", m.command},
          {"inputs", m.inputs},
          {"outputs", m.outputs},
          {"fingerprint", m.fingerprint},
          {"wall_time", m.wall_time}};
}

inline std::string artifact_name(const std::string & command)
{
  if (command == "synth") return "synthetic samples";
  if (command == "prepare") return "prepared splits";
  if (command == "train-baseline") return "baseline model";
  if (command == "embed") return "latent embeddings";
  if (command == "cluster") return "cluster model";
  if (command == "train-experts") return "expert ensemble";
  if (command == "rank") return "expert rankings";
  if (command == "train-router") return "router model";
  return "evaluation report";
}

/// Verifies that an upstream stage ran with the current configuration.
inline Manifest require_stage(const Context & ctx, const std::string & command)
{
  const fs::path mpath = ctx.path(command, "manifest.json");
  if (!fs::exists(mpath)) {
    throw MissingArtifactError("missing " + artifact_name(command) + " " + mpath.string() +
                               " (run `amend " + command + "` first)");
  }
  const json j = read_json(mpath);
  Manifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.fingerprint = j.at("fingerprint").get<std::string>();
  } catch (const json::exception & e) {
    throw Error("corrupt manifest " + mpath.string() + ": " + e.what());
  }
  for (const auto & o : m.outputs) {
    if (!fs::exists(ctx.out / o)) {
      throw MissingArtifactError("missing artifact " + (ctx.out / o).string() + " (run `amend " +
                                 command + "` again)");
    }
  }
  const std::string expected = fingerprint(ctx.config, command);
  if (m.fingerprint != expected) {
    throw StaleArtifactError("stale artifact " + mpath.string() + ": fingerprint " +
                             m.fingerprint + " does not match the current config (" + expected +
                             "); rerun `amend " + command + "`");
  }
  return m;
}

/// Collects outputs of a running command and writes its manifest.
class StageWriter
{
public:
  StageWriter(const Context & ctx, std::string command)
  : ctx_(ctx), command_(std::move(command)), start_(std::chrono::steady_clock::now())
  {
    // Nearest dependency first, so the error names the stage to run next.
    const auto deps = upstream(ctx.config, command_);
    for (auto it = deps.rbegin(); it != deps.rend(); ++it) {
      const Manifest m = require_stage(ctx, *it);
      inputs_.insert(inputs_.begin(), m.outputs.begin(), m.outputs.end());
    }
  }

  fs::path output(const std::string & file)
  {
    outputs_.push_back((fs::path(stage_dir(command_)) / file).generic_string());
    return ctx_.path(command_, file);
  }

  void finish()
  {
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start_;
    Manifest m{command_, inputs_, outputs_, fingerprint(ctx_.config, command_), elapsed.count()};
    write_json(ctx_.path(command_, "manifest.json"), to_json(m));
    ctx_.info("[" + command_ + "] done in " + std::to_string(elapsed.count()) + " s");
  }

private:
  const Context & ctx_;
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------------------
// Artifact readers

inline json samples_to_json(const std::vector<TrajectorySample> & samples)
{
  json out = json::array();
  for (const auto & s : samples) out.push_back(s);
  return out;
}

inline std::vector<TrajectorySample> samples_from_json(const json & j)
{
  try {
    return j.get<std::vector<TrajectorySample>>();
  } catch (const json::exception & e) {
    throw Error(std::string("malformed sample file: ") + e.what());
  }
}

inline NormalizationParams load_normalization(const Context & ctx)
{
  const json j = read_json(ctx.path("prepare", "normalization.json"));
  return NormalizationParams{j.at("scale").get<double>()};
}

inline std::vector<TrajectorySample> load_split(const Context & ctx, const std::string & split)
{
  return samples_from_json(read_json(ctx.path("prepare", split + ".json")));
}

inline std::vector<CanonicalSample> load_canonical(const Context & ctx, const std::string & split)
{
  return canonicalize_all(load_split(ctx, split), load_normalization(ctx));
}

inline TrajectoryModel load_baseline(const Context & ctx)
{
  return model_from_json(read_json(ctx.path("train-baseline", "model.json")));
}

inline std::map<std::int64_t, int> load_assignments(const fs::path & path)
{
  std::istringstream in(read_text(path));
  return read_assignments(in);
}

inline ClusterModel load_cluster(const Context & ctx)
{
  ClusterModel m = cluster_from_json(read_json(ctx.path("cluster", "model.json")));
  m.assignment = load_assignments(ctx.path("cluster", "assignments.tsv"));
  return m;
}

inline std::string expert_file(int c) { return "expert_" + std::to_string(c) + ".json"; }

/// Index document of an ensemble directory; experts live in expert_<c>.json.
inline json ensemble_index(const ExpertEnsemble & e, const std::string & cluster_file)
{
  json files = json::array();
  for (int c = 0; c < e.C(); ++c) files.push_back(expert_file(c));
  return {{"format_version", 1},
          {"C", e.C()},
          {"alpha", e.alpha},
          {"cluster_file", cluster_file},
          {"net_config", e.net_config},
          {"normalization", {{"scale", e.normalization.scale}}},
          {"expert_files", files}};
}

/// Reads an ensemble directory. `root` resolves the index's cluster_file.
inline ExpertEnsemble load_ensemble(const fs::path & dir, const fs::path & root)
{
  const json j = read_json(dir / "ensemble.json");
  ExpertEnsemble e;
  try {
    e.alpha = j.at("alpha").get<double>();
    e.normalization.scale = j.at("normalization").at("scale").get<double>();
    e.net_config = j.at("net_config").get<NetConfig>();
    e.cluster_model = cluster_from_json(read_json(root / j.at("cluster_file").get<std::string>()));
    for (const auto & f : j.at("expert_files")) {
      TrajectoryModel m = model_from_json(read_json(dir / f.get<std::string>()));
      if (!(m.config == e.net_config)) {
        throw ConfigError("expert " + f.get<std::string>() + " has a different architecture");
      }
      e.experts.push_back(std::move(m));
    }
    if (e.C() != j.at("C").get<int>() || e.C() != e.cluster_model.C) {
      throw ConfigError("ensemble expert count does not match C");
    }
  } catch (const json::exception & ex) {
    throw Error(std::string("malformed ensemble index: ") + ex.what());
  }
  return e;
}

inline ExpertEnsemble load_ensemble(const Context & ctx)
{
  ExpertEnsemble e = load_ensemble(ctx.out / stage_dir("train-experts"), ctx.out);
  e.cluster_model.assignment = load_assignments(ctx.path("cluster", "assignments.tsv"));
  return e;
}

inline std::vector<ExpertRanking> load_rankings(const fs::path & path)
{
  std::istringstream in(read_text(path));
  return read_rankings(in);
}

inline std::string rankings_text(const std::vector<ExpertRanking> & r)
{
  std::ostringstream out;
  write_rankings(out, r);
  return out.str();
}

inline std::string assignments_text(const std::map<std::int64_t, int> & a)
{
  std::ostringstream out;
  write_assignments(out, a);
  return out.str();
}

inline json history_to_json(const std::vector<EpochRecord> & h)
{
  json out = json::array();
  for (const auto & e : h) {
    out.push_back({{"epoch", e.epoch},
                   {"k", e.k},
                   {"train_loss", e.train_loss},
                   {"val_min_ade", e.val_min_ade}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

inline SynthSpec synth_spec(const Config & c)
{
  if (c.has("synth.spec")) return synth_spec_from_json(c.values().at("synth.spec"));
  if (c.has("synth.spec_file")) {
    const fs::path p(c.get<std::string>("synth.spec_file"));
    std::ifstream in(p);
    if (!in) throw ConfigError("cannot open synth spec " + p.string());
    const json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("synth spec " + p.string() + " is not valid JSON");
    return synth_spec_from_json(j);
  }
  throw ConfigError("synth needs synth.spec or synth.spec_file");
}

inline void cmd_synth(const Context & ctx)
{
  StageWriter stage(ctx, "synth");
  const SynthSpec spec = synth_spec(ctx.config);
  const auto samples = synthesize_dataset(spec, spec.seed);
  write_json(stage.output("samples.json"), samples_to_json(samples));
  write_json(stage.output("spec.json"), to_json(spec));
  ctx.info("[synth] " + std::to_string(samples.size()) + " samples");
  stage.finish();
}

inline std::vector<TrajectorySample> load_files(const Context & ctx, const std::string & key)
{
  std::vector<RawTrack> tracks;
  for (const auto & f : data_files(ctx.config, key)) {
    auto t = load_dataset(f, ctx.config.get<std::int64_t>("data.stride"));
    tracks.insert(tracks.end(), t.begin(), t.end());
  }
  return window_samples(tracks, ctx.config.get<int>("net.t_hist"),
                        ctx.config.get<int>("net.t_pred"));
}

inline void cmd_prepare(const Context & ctx)
{
  StageWriter stage(ctx, "prepare");
  const Config & c = ctx.config;
  const int t_hist = c.get<int>("net.t_hist");
  const int t_pred = c.get<int>("net.t_pred");
  std::vector<TrajectorySample> train_set;
  std::vector<TrajectorySample> val_set;
  std::vector<TrajectorySample> test_set;
  const std::string source = c.get<std::string>("data.source");
  if (source == "synth") {
    const auto all = samples_from_json(read_json(ctx.path("synth", "samples.json")));
    const double f_train = c.get<double>("data.train_fraction");
    const double f_val = c.get<double>("data.val_fraction");
    if (!(f_train > 0.0) || f_val < 0.0 || f_train + f_val >= 1.0) {
      throw ConfigError("data.train_fraction and data.val_fraction must leave a test split");
    }
    const auto n = all.size();
    const auto n_train = static_cast<std::size_t>(f_train * static_cast<double>(n));
    const auto n_val = static_cast<std::size_t>(f_val * static_cast<double>(n));
    train_set.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
    val_set.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                   all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    test_set.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), all.end());
  } else if (source == "files") {
    if (!c.has("data.train") || !c.has("data.test")) {
      throw ConfigError("data.source=files needs data.train and data.test");
    }
    train_set = load_files(ctx, "data.train");
    val_set = load_files(ctx, "data.val");
    test_set = load_files(ctx, "data.test");
  } else {
    throw ConfigError("data.source must be 'synth' or 'files'");
  }
  if (train_set.empty() || test_set.empty()) {
    throw Error("prepare: train and test splits must both contain samples");
  }
  for (const auto * split : {&train_set, &val_set, &test_set}) {
    for (const auto & s : *split) {
      if (static_cast<int>(s.ego_history.size()) != t_hist ||
          static_cast<int>(s.ego_future.size()) != t_pred) {
        throw ConfigError("sample lengths do not match net.t_hist / net.t_pred");
      }
    }
  }
  const NormalizationParams norm = fit_normalization(train_set);
  write_json(stage.output("train.json"), samples_to_json(train_set));
  write_json(stage.output("val.json"), samples_to_json(val_set));
  write_json(stage.output("test.json"), samples_to_json(test_set));
  write_json(stage.output("normalization.json"), {{"scale", norm.scale}});
  ctx.info("[prepare] train " + std::to_string(train_set.size()) + ", val " +
           std::to_string(val_set.size()) + ", test " + std::to_string(test_set.size()));
  stage.finish();
}

inline void cmd_train_baseline(const Context & ctx)
{
  StageWriter stage(ctx, "train-baseline");
  const auto train_set = load_canonical(ctx, "train");
  const auto val_set = load_canonical(ctx, "val");
  const auto result =
      train(train_set, val_set, net_config(ctx.config), train_options(ctx.config), ctx.seed());
  write_json(stage.output("model.json"), model_to_json(result.model));
  write_json(stage.output("history.json"), {{"best_epoch", result.best_epoch},
                                            {"best_val_min_ade", result.best_val_min_ade},
                                            {"epochs", history_to_json(result.history)}});
  ctx.info("[train-baseline] best epoch " + std::to_string(result.best_epoch));
  stage.finish();
}

inline json latents_to_json(std::span<const CanonicalSample> samples,
                            const std::vector<nn::Vector> & latents)
{
  json out = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back({{"sample_id", samples[i].sample.sample_id},
                   {"z", std::vector<double>(latents[i].data(),
                                             latents[i].data() + latents[i].size())}});
  }
  return out;
}

inline std::vector<nn::Vector> latents_from_json(const json & j)
{
  std::vector<nn::Vector> out;
  for (const auto & row : j) {
    const auto z = row.at("z").get<std::vector<double>>();
    out.push_back(Eigen::Map<const nn::Vector>(z.data(), static_cast<Eigen::Index>(z.size())));
  }
  return out;
}

inline void cmd_embed(const Context & ctx)
{
  StageWriter stage(ctx, "embed");
  const TrajectoryModel baseline = load_baseline(ctx);
  for (const std::string split : {"train", "val"}) {
    const auto samples = load_canonical(ctx, split);
    const auto latents =
        samples.empty() ? std::vector<nn::Vector>{} : latent_basis(samples, baseline);
    write_json(stage.output(split + "_latents.json"), latents_to_json(samples, latents));
  }
  stage.finish();
}

inline std::vector<nn::Vector> cluster_points(const Context & ctx, const std::string & split,
                                              std::span<const CanonicalSample> samples)
{
  if (cluster_basis(ctx.config) == ClusterBasis::kEndpoint) return endpoint_basis(samples);
  auto points = latents_from_json(read_json(ctx.path("embed", split + "_latents.json")));
  if (points.size() != samples.size()) {
    throw StaleArtifactError("latents do not match the " + split + " split; rerun `amend embed`");
  }
  return points;
}

inline void cmd_cluster(const Context & ctx)
{
  StageWriter stage(ctx, "cluster");
  const Config & c = ctx.config;
  const auto train_set = load_canonical(ctx, "train");
  const auto val_set = load_canonical(ctx, "val");
  const auto points = cluster_points(ctx, "train", train_set);
  std::vector<std::int64_t> ids;
  for (const auto & s : train_set) ids.push_back(s.sample.sample_id);
  KMeansOptions options;
  options.n_init = c.get<int>("cluster.n_init");
  options.max_iter = c.get<int>("cluster.max_iter");
  options.tol = c.get<double>("cluster.tol");
  ClusterModel model = fit_kmeans(points, c.get<int>("cluster.C"), ctx.seed(), options, ids);
  model.basis = cluster_basis(c);

  std::map<std::int64_t, int> val_assignment;
  if (!val_set.empty()) {
    const auto val_points = cluster_points(ctx, "val", val_set);
    for (std::size_t i = 0; i < val_set.size(); ++i) {
      val_assignment[val_set[i].sample.sample_id] = assign(val_points[i], model);
    }
  }
  write_json(stage.output("model.json"), cluster_to_json(model));
  write_text(stage.output("assignments.tsv"), assignments_text(model.assignment));
  write_text(stage.output("val_assignments.tsv"), assignments_text(val_assignment));
  std::vector<int> sizes(static_cast<std::size_t>(model.C), 0);
  for (const auto & [id, k] : model.assignment) ++sizes[static_cast<std::size_t>(k)];
  std::string msg = "[cluster] sizes";
  for (const int s : sizes) msg += " " + std::to_string(s);
  ctx.info(msg);
  stage.finish();
}

inline void cmd_train_experts(const Context & ctx)
{
  StageWriter stage(ctx, "train-experts");
  const Config & c = ctx.config;
  const auto train_set = load_canonical(ctx, "train");
  const auto val_set = load_canonical(ctx, "val");
  const ClusterModel cluster = load_cluster(ctx);
  const auto val_assignment = load_assignments(ctx.path("cluster", "val_assignments.tsv"));
  std::vector<int> val_clusters;
  for (const auto & s : val_set) val_clusters.push_back(val_assignment.at(s.sample.sample_id));

  ExpertOptions options;
  options.alpha = c.get<double>("experts.alpha");
  auto result = train_experts(train_set, val_set, val_clusters, cluster, net_config(c),
                              train_options(c, "experts.epochs"), options, ctx.seed());
  result.ensemble.normalization = load_normalization(ctx);
  for (int k = 0; k < result.ensemble.C(); ++k) {
    write_json(stage.output(expert_file(k)),
               model_to_json(result.ensemble.experts[static_cast<std::size_t>(k)]));
  }
  write_json(stage.output("ensemble.json"),
             ensemble_index(result.ensemble, stage_dir("cluster") + "/model.json"));
  json histories = json::array();
  for (const auto & h : result.histories) histories.push_back(history_to_json(h));
  write_json(stage.output("history.json"), histories);
  stage.finish();
}

inline void cmd_rank(const Context & ctx)
{
  StageWriter stage(ctx, "rank");
  const ExpertEnsemble ensemble = load_ensemble(ctx);
  const int trials = ctx.config.get<int>("rank.trials");
  for (const std::string split : {"train", "val"}) {
    const auto samples = load_canonical(ctx, split);
    write_text(stage.output(split + "_rankings.tsv"),
               rankings_text(rank_all(samples, ensemble, trials)));
  }
  stage.finish();
}

inline std::vector<int> labels_for(std::span<const CanonicalSample> samples,
                                   const std::vector<ExpertRanking> & rankings)
{
  std::map<std::int64_t, int> by_id;
  for (const auto & r : rankings) by_id[r.sample_id] = r.c_best;
  std::vector<int> out;
  for (const auto & s : samples) {
    const auto it = by_id.find(s.sample.sample_id);
    if (it == by_id.end()) {
      throw StaleArtifactError("no ranking for sample " + std::to_string(s.sample.sample_id) +
                               "; rerun `amend rank`");
    }
    out.push_back(it->second);
  }
  return out;
}

inline void cmd_train_router(const Context & ctx)
{
  StageWriter stage(ctx, "train-router");
  const Config & c = ctx.config;
  const auto train_set = load_canonical(ctx, "train");
  const auto val_set = load_canonical(ctx, "val");
  const auto labels = labels_for(train_set, load_rankings(ctx.path("rank", "train_rankings.tsv")));
  const auto val_labels = labels_for(val_set, load_rankings(ctx.path("rank", "val_rankings.tsv")));
  const int C = load_cluster(ctx).C;

  RouterConfig rc;
  rc.hidden_dim = c.get<int>("router.hidden_dim");
  rc.temperature = c.get<double>("router.temperature");
  rc.warm_start = c.get<bool>("router.warm_start");
  TrajectoryModel baseline;
  if (rc.warm_start) baseline = load_baseline(ctx);
  const auto result = train_router(train_set, labels, val_set, val_labels, net_config(c), C, rc,
                                   train_options(c, "router.epochs"), ctx.seed() + 1000,
                                   rc.warm_start ? &baseline.params : nullptr);
  write_json(stage.output("model.json"), router_to_json(result.router));
  json history = json::array();
  for (const auto & e : result.history) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  write_json(stage.output("history.json"), {{"best_epoch", result.best_epoch}, {"epochs", history}});
  stage.finish();
}

inline std::string report_file(const std::string & name) { return "report_" + name + ".json"; }

inline void cmd_evaluate(const Context & ctx)
{
  StageWriter stage(ctx, "evaluate");
  const Config & c = ctx.config;
  const auto raw_test = load_split(ctx, "test");
  const auto test = canonicalize_all(raw_test, load_normalization(ctx));
  const ExpertEnsemble ensemble = load_ensemble(ctx);
  const TrajectoryModel baseline = load_baseline(ctx);
  const auto policies = eval_policies(c);
  const std::string fp = fingerprint(c, "evaluate");
  const double var_level = c.get<double>("eval.var_alpha");

  KalmanParams kp{c.get<double>("difficulty.dt"), c.get<double>("difficulty.q"),
                  c.get<double>("difficulty.r")};
  const auto scores = kalman_scores(raw_test, kp);
  std::ostringstream scores_text;
  write_scores(scores_text, scores);
  write_text(stage.output("scores.tsv"), scores_text.str());
  const auto splits = difficulty_splits(scores);

  const auto errors = expert_errors(test, ensemble);
  std::vector<ExpertRanking> rankings;
  for (std::size_t i = 0; i < test.size(); ++i) {
    rankings.push_back(rank_from_metrics(test[i].sample.sample_id, errors[i].min_ade,
                                         errors[i].min_fde));
  }
  const auto features = extract_features(test, ensemble.net_config);

  std::map<RoutingPolicy, std::vector<int>> choices;
  for (const auto policy : policies) {
    std::vector<int> & chosen = choices[policy];
    switch (policy) {
      case RoutingPolicy::kRouter: {
        const RouterNet router = router_from_json(read_json(ctx.path("train-router", "model.json")));
        if (router.C != ensemble.C()) {
          throw StaleArtifactError("router and ensemble disagree on C");
        }
        for (const auto & p : route_confidence_all(features, router)) {
          chosen.push_back(select_expert(p));
        }
        break;
      }
      case RoutingPolicy::kCluster: {
        const auto latents = latent_basis(test, baseline);
        for (const auto & z : latents) {
          chosen.push_back(select_expert(cluster_confidence(z, ensemble.cluster_model)));
        }
        break;
      }
      case RoutingPolicy::kRandom:
        for (const auto & s : test) {
          chosen.push_back(random_route(ensemble.C(), sample_seed(ctx.seed() + 2000,
                                                                  s.sample.sample_id)));
        }
        break;
      case RoutingPolicy::kOracle:
        for (const auto & r : rankings) chosen.push_back(r.c_best);
        break;
    }
  }

  std::vector<RoutingStats> routing;
  for (const auto policy : policies) {
    std::map<std::int64_t, int> selections;
    for (std::size_t i = 0; i < test.size(); ++i) {
      selections[test[i].sample.sample_id] = choices[policy][i];
    }
    const auto [acc_ade, acc_fde] = routing_accuracy(selections, rankings);
    routing.push_back({to_string(policy), acc_ade, acc_fde});
  }

  std::vector<SampleError> all_errors;
  std::string main_json;
  std::string main_text;
  for (const auto policy : policies) {
    std::vector<SampleError> errs;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto k = static_cast<std::size_t>(choices[policy][i]);
      errs.push_back({test[i].sample.sample_id, errors[i].min_ade[k], errors[i].min_fde[k],
                      to_string(policy)});
    }
    const EvalReport report = build_report(errs, splits, routing, var_level, fp);
    const std::string text = report_to_json(report).dump(2) + "\n";
    write_text(stage.output(report_file(to_string(policy))), text);
    if (main_json.empty()) {
      main_json = text;
      main_text = report_to_text(report);
    }
    all_errors.insert(all_errors.end(), errs.begin(), errs.end());
  }

  std::vector<SampleError> base_errs;
  const auto base_preds = predict_all(features, baseline, baseline.config.k_max);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const PredictionSet world = decanonicalize(base_preds[i], test[i].transform);
    base_errs.push_back({test[i].sample.sample_id, min_ade(world, raw_test[i].ego_future),
                         min_fde(world, raw_test[i].ego_future), "baseline"});
  }
  const EvalReport base_report = build_report(base_errs, splits, {}, var_level, fp);
  write_text(stage.output(report_file("baseline")), report_to_json(base_report).dump(2) + "\n");
  all_errors.insert(all_errors.end(), base_errs.begin(), base_errs.end());

  write_text(stage.output("report.json"), main_json);
  write_text(stage.output("report.txt"),
             "policy " + to_string(policies.front()) + "\n" + main_text + "\nbaseline\n" +
                 report_to_text(base_report));
  std::ostringstream csv;
  write_errors_csv(csv, all_errors);
  write_text(stage.output("errors.csv"), csv.str());
  ctx.info(main_text);
  stage.finish();
}

inline void run_command(const Context & ctx, const std::string & command)
{
  if (command == "synth") return cmd_synth(ctx);
  if (command == "prepare") return cmd_prepare(ctx);
  if (command == "train-baseline") return cmd_train_baseline(ctx);
  if (command == "embed") return cmd_embed(ctx);
  if (command == "cluster") return cmd_cluster(ctx);
  if (command == "train-experts") return cmd_train_experts(ctx);
  if (command == "rank") return cmd_rank(ctx);
  if (command == "train-router") return cmd_train_router(ctx);
  if (command == "evaluate") return cmd_evaluate(ctx);
  throw ConfigError("unknown command '" + command + "'");
}

/// Every stage in order; synth only when the data source is synthetic.
inline void run_all(const Context & ctx)
{
  for (const auto & command : commands()) {
    if (command == "synth" && ctx.config.get<std::string>("data.source") != "synth") continue;
    if (command == "train-router" && !uses_policy(ctx.config, RoutingPolicy::kRouter)) continue;
    run_command(ctx, command);
  }
}

}  // namespace amend::pipeline

#endif  // AMEND_PIPELINE_HPP_
