#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "thorn/io.hpp"
#include "thorn/model.hpp"
#include "thorn/synthdata.hpp"

namespace thorn {

/// Flat `key = value` text: one entry per line, `#` comments, optional
/// double quotes around strings. Duplicate keys are errors.
class FlatConfig {
 public:
  static FlatConfig parse(const std::string& text, const std::string& source = "config") {
    FlatConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      bool quoted = false;
      for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) {
          line.resize(i);
          break;
        }
      }
      line = io::trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') throw ConfigError(source + ":" + std::to_string(lineno) + ": tables are not supported");
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = io::trim(line.substr(0, eq)), val = io::trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
      if (val.size() >= 2 && val.front() == '"' && val.back() == '"') val = val.substr(1, val.size() - 2);
      if (!c.values_.emplace(key, val).second)
        throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      c.lines_[key] = lineno;
    }
    c.source_ = source;
    return c;
  }

  static FlatConfig load(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw ConfigError("config file not found: " + p.string());
    return parse(io::read_text(p), p.string());
  }

  bool has(const std::string& k) const { return values_.count(k) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Reads `key` into `out` if present, marking it consumed.
  void get(const std::string& k, int& out) { with(k, [&](const std::string& v) { out = io::parse_int(v, where(k)); }); }
  void get(const std::string& k, std::uint64_t& out) {
    with(k, [&](const std::string& v) {
      const long long x = io::parse_int(v, where(k));
      if (x < 0) throw ConfigError(where(k) + ": must be non-negative");
      out = static_cast<std::uint64_t>(x);
    });
  }
  void get(const std::string& k, double& out) { with(k, [&](const std::string& v) { out = io::parse_real(v, where(k)); }); }
  void get(const std::string& k, bool& out) {
    with(k, [&](const std::string& v) {
      if (v == "true") out = true;
      else if (v == "false") out = false;
      else throw ConfigError(where(k) + ": expected true or false, got '" + v + "'");
    });
  }
  void get(const std::string& k, std::string& out) { with(k, [&](const std::string& v) { out = v; }); }

  /// Every key must have been consumed by a get() call.
  void reject_unknown() const {
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) throw ConfigError(where(k) + ": unknown key '" + k + "'");
  }

 private:
  template <typename F>
  void with(const std::string& k, F&& f) {
    const auto it = values_.find(k);
    if (it == values_.end()) return;
    used_.insert(k);
    try {
      f(it->second);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  std::string where(const std::string& k) const {
    const auto it = lines_.find(k);
    return source_ + (it != lines_.end() ? ":" + std::to_string(it->second) : "");
  }

  std::string source_;
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
  std::set<std::string> used_;
};

/// Model, optimisation and evaluation settings for one run. Class counts and
/// input size of 0 are filled from the dataset.
struct ExperimentConfig {
  ModelConfig model;
  double learning_rate = 0.00005;
  double scheduler_factor = 0.1;
  int scheduler_patience = 5;
  int epochs = 30;
  int batch_size = 8;
  int max_steps = 0;  // 0: no cap
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  std::uint64_t seed = 0;
  double fusion_threshold = 0.3;
  bool eval_train = true;  // eval-mode pass over the training split every epoch
  bool augment = false;    // random flips (and transposes of square clips) per training pass

  void validate() const {
    const auto& m = model;
    auto pos = [](int v, const char* k) {
      if (v < 1) throw ConfigError(std::string(k) + " must be positive");
    };
    pos(m.d1, "d1");
    pos(m.d_g, "d_g");
    pos(m.d2, "d2");
    pos(m.d_e, "d_e");
    pos(m.heads, "heads");
    pos(m.blocks, "n_blocks");
    pos(m.kernel, "tcn_kernel");
    pos(m.encoder_width, "encoder_width");
    pos(epochs, "epochs");
    pos(batch_size, "batch_size");
    pos(scheduler_patience, "scheduler_patience");
    if (m.d1 < 8) throw ConfigError("d1 must be >= 8");
    if (m.kernel % 2 == 0) throw ConfigError("tcn_kernel must be odd");
    if (!(m.dropout >= 0.0 && m.dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (!(scheduler_factor > 0.0 && scheduler_factor <= 1.0)) throw ConfigError("scheduler_factor must lie in (0, 1]");
    if (!(fusion_threshold >= 0.0 && fusion_threshold <= 1.0)) throw ConfigError("fusion_threshold must lie in [0, 1]");
    if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
    if (weight_decay < 0.0 || grad_clip < 0.0) throw ConfigError("weight_decay and grad_clip must be non-negative");
  }
};

inline void read_model_keys(FlatConfig& f, ModelConfig& m) {
  std::string arch = to_string(m.arch), mode = to_string(m.node_mode),
              verb_head = m.verb_from_nodes ? "nodes" : "adjacency";
  f.get("architecture", arch);
  f.get("node_mode", mode);
  f.get("verb_head", verb_head);
  if (arch == "thorn") m.arch = Architecture::thorn;
  else if (arch == "baseline") m.arch = Architecture::baseline;
  else throw ConfigError("architecture must be thorn or baseline, got '" + arch + "'");
  if (mode == "spatio_temporal") m.node_mode = NodeMode::spatio_temporal;
  else if (mode == "temporal") m.node_mode = NodeMode::temporal;
  else throw ConfigError("node_mode must be temporal or spatio_temporal, got '" + mode + "'");
  if (verb_head == "adjacency") m.verb_from_nodes = false;
  else if (verb_head == "nodes") m.verb_from_nodes = true;
  else throw ConfigError("verb_head must be adjacency or nodes, got '" + verb_head + "'");
  f.get("num_objects", m.num_classes);
  f.get("num_verbs", m.num_verbs);
  f.get("height", m.height);
  f.get("width", m.width);
  f.get("grid", m.grid);
  f.get("encoder_width", m.encoder_width);
  f.get("d1", m.d1);
  f.get("d_g", m.d_g);
  f.get("d2", m.d2);
  f.get("d_e", m.d_e);
  f.get("heads", m.heads);
  f.get("n_blocks", m.blocks);
  f.get("tcn_kernel", m.kernel);
  f.get("dropout", m.dropout);
  f.get("attention_scale", m.attention_scale);
  f.get("block_norm", m.block_norm);
  f.get("relu_presence", m.relu_presence);
  f.get("shared_classifier", m.shared_classifier);
  f.get("shared_base_adjacency", m.shared_base);
}

inline std::string model_config_text(const ModelConfig& m) {
  std::string s;
  auto kv = [&](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  kv("architecture", to_string(m.arch));
  kv("node_mode", to_string(m.node_mode));
  kv("verb_head", m.verb_from_nodes ? "nodes" : "adjacency");
  kv("num_objects", std::to_string(m.num_classes));
  kv("num_verbs", std::to_string(m.num_verbs));
  kv("height", std::to_string(m.height));
  kv("width", std::to_string(m.width));
  kv("grid", std::to_string(m.grid));
  kv("encoder_width", std::to_string(m.encoder_width));
  kv("d1", std::to_string(m.d1));
  kv("d_g", std::to_string(m.d_g));
  kv("d2", std::to_string(m.d2));
  kv("d_e", std::to_string(m.d_e));
  kv("heads", std::to_string(m.heads));
  kv("n_blocks", std::to_string(m.blocks));
  kv("tcn_kernel", std::to_string(m.kernel));
  kv("dropout", io::format_real(m.dropout));
  kv("attention_scale", io::format_real(m.attention_scale));
  kv("block_norm", m.block_norm ? "true" : "false");
  kv("relu_presence", b(m.relu_presence));
  kv("shared_classifier", b(m.shared_classifier));
  kv("shared_base_adjacency", b(m.shared_base));
  return s;
}

inline ModelConfig parse_model_config(const std::string& text, const std::string& source) {
  auto f = FlatConfig::parse(text, source);
  ModelConfig m;
  read_model_keys(f, m);
  f.reject_unknown();
  return m;
}

/// Experiment defaults with class counts and resolution left for the dataset.
inline ExperimentConfig default_experiment() {
  ExperimentConfig e;
  e.model.num_classes = 0;
  e.model.num_verbs = 0;
  e.model.height = 0;
  e.model.width = 0;
  return e;
}

/// THORN_SEED, when set, overrides the configured seed.
inline void apply_seed_env(std::uint64_t& seed) {
  if (const char* s = std::getenv("THORN_SEED"); s && *s) {
    const long long v = io::parse_int(s, "THORN_SEED");
    if (v < 0) throw ConfigError("THORN_SEED must be non-negative");
    seed = static_cast<std::uint64_t>(v);
  }
}

inline ExperimentConfig parse_experiment(FlatConfig f) {
  ExperimentConfig e = default_experiment();
  read_model_keys(f, e.model);
  f.get("learning_rate", e.learning_rate);
  f.get("scheduler_factor", e.scheduler_factor);
  f.get("scheduler_patience", e.scheduler_patience);
  f.get("epochs", e.epochs);
  f.get("batch_size", e.batch_size);
  f.get("max_steps", e.max_steps);
  f.get("weight_decay", e.weight_decay);
  f.get("grad_clip", e.grad_clip);
  f.get("seed", e.seed);
  f.get("fusion_threshold", e.fusion_threshold);
  f.get("eval_train", e.eval_train);
  f.get("augment", e.augment);
  f.reject_unknown();
  apply_seed_env(e.seed);
  e.validate();
  return e;
}

inline std::string experiment_text(const ExperimentConfig& e) {
  std::string s = model_config_text(e.model);
  auto kv = [&](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
  kv("learning_rate", io::format_real(e.learning_rate));
  kv("scheduler_factor", io::format_real(e.scheduler_factor));
  kv("scheduler_patience", std::to_string(e.scheduler_patience));
  kv("epochs", std::to_string(e.epochs));
  kv("batch_size", std::to_string(e.batch_size));
  kv("max_steps", std::to_string(e.max_steps));
  kv("weight_decay", io::format_real(e.weight_decay));
  kv("grad_clip", io::format_real(e.grad_clip));
  kv("seed", std::to_string(e.seed));
  kv("fusion_threshold", io::format_real(e.fusion_threshold));
  kv("eval_train", e.eval_train ? "true" : "false");
  kv("augment", e.augment ? "true" : "false");
  return s;
}

inline SynthConfig parse_synth(FlatConfig f) {
  SynthConfig c;
  f.get("num_objects", c.num_objects);
  f.get("num_verbs", c.num_verbs);
  f.get("frames", c.frames);
  f.get("height", c.height);
  f.get("width", c.width);
  f.get("clips_per_class", c.clips_per_class);
  f.get("noise_level", c.noise_level);
  f.get("detector_noise", c.detector_noise);
  f.get("object_radius", c.object_radius);
  f.get("seed", c.seed);
  f.reject_unknown();
  apply_seed_env(c.seed);
  synth::validate(c);
  return c;
}

}  // namespace thorn
