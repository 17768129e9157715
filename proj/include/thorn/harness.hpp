#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "thorn/checkpoint.hpp"
#include "thorn/config.hpp"
#include "thorn/metrics.hpp"
#include "thorn/model.hpp"
#include "thorn/optim.hpp"
#include "thorn/synthdata.hpp"

namespace thorn {

namespace fs = std::filesystem;

using Real = float;  // training precision
using Model = ActionModel<Real>;

struct Sample {
  ClipAnnotation annotation;
  ClipTensor<Real> clip;
};

struct Dataset {
  std::vector<Sample> samples;
  DatasetInfo info;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

using Logger = std::function<void(const std::string&)>;

/// Applies one of the eight symmetries of the square to every frame: bit 0
/// flips x, bit 1 flips y, bit 2 transposes (square frames only). Motion
/// patterns and class appearance are unchanged by these, so labels carry over.
template <typename S>
ClipTensor<S> transform_clip(const ClipTensor<S>& clip, int code) {
  const int T = clip.frames(), H = clip.height(), W = clip.width(), C = clip.data.dim(3);
  if ((code & 4) && H != W) throw Error("transform_clip: transpose needs square frames");
  if (code == 0) return clip;
  ClipTensor<S> out{Tensor<S>(clip.data.shape())};
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        int sx = code & 1 ? W - 1 - x : x, sy = code & 2 ? H - 1 - y : y;
        if (code & 4) std::swap(sx, sy);
        for (int c = 0; c < C; ++c) out.data.at(t, y, x, c) = clip.data.at(t, sy, sx, c);
      }
  return out;
}

inline Logger stderr_logger() {
  return [](const std::string& s) { std::cerr << s << '\n'; };
}

/// Class counts and resolution from the info file, else from the data itself.
inline DatasetInfo infer_info(const fs::path& manifest, const std::vector<Sample>& samples) {
  DatasetInfo info = read_dataset_info(manifest).value_or(DatasetInfo{});
  if (!samples.empty()) {
    const auto& s = samples.front();
    if (info.num_objects == 0) info.num_objects = s.annotation.presence.dim(1);
    if (info.frames == 0) info.frames = s.clip.frames();
    if (info.height == 0) info.height = s.clip.height();
    if (info.width == 0) info.width = s.clip.width();
    if (info.num_verbs == 0)
      for (const auto& x : samples) info.num_verbs = std::max(info.num_verbs, x.annotation.verb + 1);
  }
  for (int c = static_cast<int>(info.object_names.size()); c < info.num_objects; ++c)
    info.object_names.push_back("object" + std::to_string(c));
  for (int v = static_cast<int>(info.verb_names.size()); v < info.num_verbs; ++v)
    info.verb_names.push_back("verb" + std::to_string(v));
  return info;
}

inline Dataset load_dataset(const fs::path& manifest) {
  Dataset d;
  for (auto& a : load_annotations(manifest)) {
    auto clip = load_clip(manifest, a);
    if (clip.frames() != a.presence.dim(0))
      throw Error(manifest.string() + ": clip " + a.clip_id + " has " + std::to_string(clip.frames()) +
                  " frames but presence has " + std::to_string(a.presence.dim(0)) + " rows");
    d.samples.push_back({std::move(a), std::move(clip)});
  }
  d.info = infer_info(manifest, d.samples);
  return d;
}

/// Loads one split of a dataset. Sibling `<split>.csv` manifests written by
/// the generator are used when present; otherwise clips are assigned 70/15/15
/// by a hash of their id. `split == "all"` loads the manifest as is.
inline Dataset load_split(const fs::path& manifest, const std::string& split) {
  if (split == "all") return load_dataset(manifest);
  if (split != "train" && split != "val" && split != "test") throw ConfigError("unknown split '" + split + "'");
  const fs::path sibling = manifest.parent_path() / (split + ".csv");
  if (fs::exists(sibling) && fs::absolute(sibling) != fs::absolute(manifest)) {
    Dataset d = load_dataset(sibling);
    d.info = infer_info(manifest, d.samples);
    return d;
  }
  Dataset all = load_dataset(manifest);
  Dataset out;
  out.info = all.info;
  for (auto& s : all.samples) {
    const auto bucket = io::fnv1a(s.annotation.clip_id) % 100;
    const std::string which = bucket < 70 ? "train" : bucket < 85 ? "val" : "test";
    if (which == split) out.samples.push_back(std::move(s));
  }
  return out;
}

/// Fills dataset-derived fields of the model config; explicit values must agree.
inline ModelConfig resolve_model_config(ModelConfig m, const DatasetInfo& info) {
  auto fill = [](int& field, int value, const char* key) {
    if (value <= 0) return;
    if (field == 0) field = value;
    else if (field != value)
      throw ConfigError(std::string("config ") + key + " = " + std::to_string(field) + " but the dataset has " +
                        std::to_string(value));
  };
  fill(m.num_classes, info.num_objects, "num_objects");
  fill(m.num_verbs, info.num_verbs, "num_verbs");
  fill(m.height, info.height, "height");
  fill(m.width, info.width, "width");
  if (m.num_classes <= 0 || m.num_verbs <= 0 || m.height <= 0 || m.width <= 0)
    throw ConfigError("class counts and input size could not be determined from config or dataset");
  return m;
}

inline void check_compatible(const ModelConfig& m, const Dataset& d) {
  resolve_model_config(m, d.info);
  for (const auto& s : d.samples) {
    if (s.annotation.verb >= m.num_verbs || s.annotation.noun >= m.num_classes)
      throw ConfigError("clip " + s.annotation.clip_id + " has labels outside the model's class range");
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct ClipPrediction {
  std::string clip_id;
  int verb_gt = 0, noun_gt = 0;
  std::vector<double> verb_probs, noun_probs;
  std::optional<std::vector<double>> fused_noun;
  ActionPrediction model;
  std::optional<ActionPrediction> fused;
};

struct EvalOutput {
  MetricsReport report;
  std::vector<ClipPrediction> predictions;
  bool fusion_used = false;
};

/// Eval-mode pass over a split. With `fusion` set and detector scores present
/// for every clip, fused noun metrics are added; otherwise fusion is skipped
/// with a warning and model-only metrics are reported.
inline EvalOutput evaluate(const Model& model, const Dataset& data, bool fusion, double threshold,
                           const Logger& warn = stderr_logger(), bool keep_predictions = true) {
  const auto& cfg = model.config();
  bool can_fuse = fusion;
  if (fusion) {
    for (const auto& s : data.samples)
      if (!s.annotation.detector_scores) {
        warn("warning: clip " + s.annotation.clip_id + " has no detector scores; reporting model-only metrics");
        can_fuse = false;
        break;
      }
  }
  MetricsAccumulator acc(cfg.num_verbs, cfg.num_classes);
  EvalOutput out;
  out.fusion_used = can_fuse && !data.empty();
  for (const auto& s : data.samples) {
    const auto& a = s.annotation;
    const auto pred = model.predict(s.clip);
    const auto loss = joint_loss(pred.bundle, a.verb, a.noun, a.presence);
    ClipPrediction cp;
    cp.clip_id = a.clip_id;
    cp.verb_gt = a.verb;
    cp.noun_gt = a.noun;
    cp.verb_probs = softmax(to_doubles(pred.bundle.verb_logits));
    cp.noun_probs = softmax(to_doubles(pred.bundle.noun_logits));
    cp.model = action_prediction(cp.verb_probs, cp.noun_probs);
    acc.add(cp.model, a.verb, a.noun, loss);
    if (out.fusion_used) {
      cp.fused_noun = fuse_noun_scores(pred.bundle.noun_logits, *a.detector_scores, threshold);
      cp.fused = action_prediction(cp.verb_probs, *cp.fused_noun);
      const auto det = detector_clip_scores(*a.detector_scores, threshold);
      acc.add_fused(*cp.fused, argmax(det), a.verb, a.noun);
    }
    if (keep_predictions) out.predictions.push_back(std::move(cp));
  }
  out.report = acc.report();
  return out;
}

/// One row per clip: top-5 ids and probabilities (model-only and fused) plus
/// action correctness flags. Lists are ';'-separated.
inline std::string prediction_dump_csv(const std::vector<ClipPrediction>& preds) {
  auto ids = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
    return s;
  };
  auto scores = [](const std::vector<int>& v, const std::vector<double>& p) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + io::format_real(p[v[i]]);
    return s;
  };
  std::string s =
      "clip_id,verb_gt,noun_gt,verb_top5,verb_scores,noun_top5,noun_scores,fused_noun_top5,fused_noun_scores,"
      "action_top1_correct,action_top5_correct,fused_action_top1_correct,fused_action_top5_correct\n";
  for (const auto& c : preds) {
    s += c.clip_id + "," + std::to_string(c.verb_gt) + "," + std::to_string(c.noun_gt) + ",";
    s += ids(c.model.verb_top5) + "," + scores(c.model.verb_top5, c.verb_probs) + ",";
    s += ids(c.model.noun_top5) + "," + scores(c.model.noun_top5, c.noun_probs) + ",";
    if (c.fused) s += ids(c.fused->noun_top5) + "," + scores(c.fused->noun_top5, *c.fused_noun) + ",";
    else s += ",,";
    s += std::to_string(c.model.action_correct(c.verb_gt, c.noun_gt, 1)) + "," +
         std::to_string(c.model.action_correct(c.verb_gt, c.noun_gt, 5)) + ",";
    if (c.fused)
      s += std::to_string(c.fused->action_correct(c.verb_gt, c.noun_gt, 1)) + "," +
           std::to_string(c.fused->action_correct(c.verb_gt, c.noun_gt, 5));
    else s += ",";
    s += "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;
  long steps = 0;
  double lr = 0.0;
  LossBreakdown train_loss;  // running mean over the epoch's training-mode passes
  std::optional<MetricsReport> train_eval;
  MetricsReport val;
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  Model final_model;
  Model best_model;
  long steps = 0;
};

inline std::string history_csv(const std::vector<EpochRecord>& h) {
  const std::vector<std::string> metrics{"loss", "verb_loss", "noun_loss", "object_loss", "verb_top1", "verb_top5",
                                         "noun_top1", "noun_top5", "action_top1", "action_top5"};
  std::string s = "epoch,steps,lr,running_loss,running_verb_loss,running_noun_loss,running_object_loss";
  for (const char* split : {"train", "val"})
    for (const auto& m : metrics) s += std::string(",") + split + "_" + m;
  s += ",improved\n";
  auto values = [&](const MetricsReport& r) {
    std::string o;
    const auto f = metric_fields(r);
    for (const auto& m : metrics)
      for (const auto& [k, v] : f)
        if (k == m) o += "," + io::format_real(v);
    return o;
  };
  for (const auto& e : h) {
    s += std::to_string(e.epoch) + "," + std::to_string(e.steps) + "," + io::format_real(e.lr) + "," +
         io::format_real(e.train_loss.total) + "," + io::format_real(e.train_loss.verbs) + "," +
         io::format_real(e.train_loss.nouns) + "," + io::format_real(e.train_loss.objects);
    if (e.train_eval) s += values(*e.train_eval);
    else for (std::size_t i = 0; i < metrics.size(); ++i) s += ",";
    s += values(e.val);
    s += std::string(",") + (e.improved ? "1" : "0") + "\n";
  }
  return s;
}

/// End-to-end joint training with Adam and a validation-loss plateau
/// scheduler. When `out_dir` is non-empty, writes config.toml, metrics.csv
/// (rewritten every epoch), `best` and `last` checkpoints.
inline TrainResult train(ExperimentConfig cfg, const Dataset& train_set, const Dataset& val_set,
                         const fs::path& out_dir = {}, const Logger& log = stderr_logger()) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training split is empty");
  cfg.model = resolve_model_config(cfg.model, train_set.info);
  check_compatible(cfg.model, train_set);
  if (!val_set.empty()) check_compatible(cfg.model, val_set);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    io::write_text(out_dir / "config.toml", experiment_text(cfg));
  }

  TrainResult result;
  Model model = Model::create(cfg.model, cfg.seed);
  Adam<Real> adam;
  adam.weight_decay = cfg.weight_decay;
  PlateauScheduler scheduler(cfg.scheduler_factor, cfg.scheduler_patience);
  Rng order_rng = make_rng(cfg.seed, 0x0DE2);
  Rng dropout_rng = make_rng(cfg.seed, 0xD209);
  Rng augment_rng = make_rng(cfg.seed, 0xA06E);
  const bool square = train_set.info.height == train_set.info.width;
  double lr = cfg.learning_rate;
  result.best_model = model;
  const Dataset& monitor = val_set.empty() ? train_set : val_set;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  bool stop = false;
  for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    shuffle(order, order_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    LossBreakdown running;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size() && !stop; start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Real weight = Real(1) / static_cast<Real>(end - start);
      model.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = train_set.samples[order[i]];
        const auto& a = s.annotation;
        if (cfg.augment) {
          const auto clip = transform_clip(s.clip, uniform_int(augment_rng, 0, square ? 7 : 3));
          running += model.accumulate(clip, a.verb, a.noun, a.presence, true, &dropout_rng, weight);
        } else {
          running += model.accumulate(s.clip, a.verb, a.noun, a.presence, true, &dropout_rng, weight);
        }
        ++seen;
      }
      if (cfg.grad_clip > 0.0) clip_grad_norm(model, cfg.grad_clip);
      adam.step(model, lr);
      ++result.steps;
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) stop = true;
    }
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(seen, 1));
    rec.train_loss = {running.verbs * inv, running.nouns * inv, running.objects * inv, running.total * inv};
    rec.steps = result.steps;
    if (cfg.eval_train) rec.train_eval = evaluate(model, train_set, false, cfg.fusion_threshold, log, false).report;
    rec.val = &monitor == &train_set && rec.train_eval
                  ? *rec.train_eval
                  : evaluate(model, monitor, false, cfg.fusion_threshold, log, false).report;
    rec.improved = rec.val.loss.total < scheduler.best();
    lr = scheduler.step(rec.val.loss.total, lr);
    if (rec.improved) {
      result.best_model = model;
      if (!out_dir.empty()) save_checkpoint(model, out_dir / "best");
    }
    result.history.push_back(rec);
    if (!out_dir.empty()) io::write_text(out_dir / "metrics.csv", history_csv(result.history));
    std::string line = "epoch " + std::to_string(epoch) + " steps " + std::to_string(rec.steps) + " lr " +
                       io::format_real(rec.lr) + " loss " + io::format_real(rec.train_loss.total);
    if (rec.train_eval)
      line += " | train verb " + io::format_real(rec.train_eval->verb_top1) + " noun " +
              io::format_real(rec.train_eval->noun_top1) + " action " + io::format_real(rec.train_eval->action_top1);
    line += " | val loss " + io::format_real(rec.val.loss.total) + " verb " + io::format_real(rec.val.verb_top1) +
            " noun " + io::format_real(rec.val.noun_top1);
    log(line);
  }
  if (!out_dir.empty()) save_checkpoint(model, out_dir / "last");
  result.final_model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  std::string setting;
  double verb_top1 = 0, verb_top5 = 0, noun_top1 = 0, noun_top5 = 0, action_top1 = 0, action_top5 = 0;

  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

inline constexpr const char* kAblationHeader = "setting,verb_top1,verb_top5,noun_top1,noun_top5,action_top1,action_top5";

/// The four compared settings: encoder-only baseline, temporal nodes with the
/// node verb head, temporal nodes with the adjacency verb head, and
/// spatio-temporal nodes with the adjacency verb head.
inline std::vector<std::pair<std::string, ExperimentConfig>> ablation_settings(const ExperimentConfig& base) {
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  auto make = [&](const char* name, Architecture a, NodeMode m, bool verb_nodes) {
    ExperimentConfig c = base;
    c.model.arch = a;
    c.model.node_mode = m;
    c.model.verb_from_nodes = verb_nodes;
    out.emplace_back(name, c);
  };
  make("encoder_baseline", Architecture::baseline, NodeMode::spatio_temporal, false);
  make("temporal_nodes", Architecture::thorn, NodeMode::temporal, true);
  make("temporal_nodes+adj_verbs", Architecture::thorn, NodeMode::temporal, false);
  make("spatio_temporal_nodes+adj_verbs", Architecture::thorn, NodeMode::spatio_temporal, false);
  return out;
}

struct AblationResult {
  std::vector<AblationRow> grid;                   // averaged over seeds
  std::vector<std::vector<AblationRow>> per_seed;  // [seed][setting]
  std::vector<MetricsReport> reports;              // last seed, per setting
};

inline AblationRow row_from(const std::string& name, const MetricsReport& r) {
  return {name, r.verb_top1, r.verb_top5, r.noun_top1, r.noun_top5, r.action_top1, r.action_top5};
}

/// Trains every setting on identical splits for each seed and reports
/// held-out (test split) accuracies.
inline AblationResult ablate(const ExperimentConfig& base, const Dataset& train_set, const Dataset& val_set,
                             const Dataset& test_set, const std::vector<std::uint64_t>& seeds,
                             const fs::path& out_dir = {}, const Logger& log = stderr_logger()) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  const auto settings = ablation_settings(base);
  AblationResult res;
  res.grid.resize(settings.size());
  for (std::size_t i = 0; i < settings.size(); ++i) res.grid[i].setting = settings[i].first;
  for (auto seed : seeds) {
    std::vector<AblationRow> rows;
    res.reports.clear();
    for (const auto& [name, cfg0] : settings) {
      ExperimentConfig cfg = cfg0;
      cfg.seed = seed;
      log("ablation: " + name + " seed " + std::to_string(seed));
      const fs::path dir = out_dir.empty() ? fs::path{} : out_dir / (name + "_seed" + std::to_string(seed));
      auto tr = train(cfg, train_set, val_set, dir, log);
      const auto ev = evaluate(tr.best_model, test_set, false, cfg.fusion_threshold, log, false);
      rows.push_back(row_from(name, ev.report));
      res.reports.push_back(ev.report);
    }
    res.per_seed.push_back(rows);
  }
  const double inv = 1.0 / static_cast<double>(seeds.size());
  for (const auto& rows : res.per_seed)
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto& g = res.grid[i];
      g.verb_top1 += rows[i].verb_top1 * inv;
      g.verb_top5 += rows[i].verb_top5 * inv;
      g.noun_top1 += rows[i].noun_top1 * inv;
      g.noun_top5 += rows[i].noun_top5 * inv;
      g.action_top1 += rows[i].action_top1 * inv;
      g.action_top5 += rows[i].action_top5 * inv;
    }
  return res;
}

inline std::string ablation_csv(const std::vector<AblationRow>& grid) {
  std::string s = std::string(kAblationHeader) + "\n";
  for (const auto& r : grid)
    s += r.setting + "," + io::format_real(r.verb_top1) + "," + io::format_real(r.verb_top5) + "," +
         io::format_real(r.noun_top1) + "," + io::format_real(r.noun_top5) + "," + io::format_real(r.action_top1) +
         "," + io::format_real(r.action_top5) + "\n";
  return s;
}

inline std::vector<AblationRow> parse_ablation_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<AblationRow> out;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != kAblationHeader) throw Error("ablation grid: unexpected header");
      continue;
    }
    if (io::trim(line).empty()) continue;
    const auto f = io::split(line);
    if (f.size() != 7) throw Error("ablation grid line " + std::to_string(lineno) + ": expected 7 fields");
    const std::string w = "ablation grid line " + std::to_string(lineno);
    out.push_back({f[0], io::parse_real(f[1], w), io::parse_real(f[2], w), io::parse_real(f[3], w),
                   io::parse_real(f[4], w), io::parse_real(f[5], w), io::parse_real(f[6], w)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Class activation maps and adjacency export

struct CamResult {
  Tensor<Real> maps;  // (C_o, T, H', W'), each frame max-normalised into [0, 1]
  bool degenerate = false;
};

/// Gradient-times-activation map of every class's presence logit over the
/// encoder grid, summed over channels, rectified and max-normalised per
/// frame. Spatially uniform clips (or all-zero maps) are flagged degenerate
/// and yield zeros.
inline CamResult export_cam(const Model& model, const ClipTensor<Real>& clip) {
  const auto& cfg = model.config();
  if (cfg.arch != Architecture::thorn || cfg.node_mode != NodeMode::spatio_temporal)
    throw Error("export_cam needs a spatio-temporal THORN checkpoint (temporal nodes have no spatial axis)");
  const int T = clip.frames(), g = cfg.grid, D = cfg.d1, C = cfg.num_classes;
  CamResult res;
  res.maps = Tensor<Real>({C, T, g, g});

  bool uniform = true;
  const auto& px = clip.data;
  const std::size_t frame_size = static_cast<std::size_t>(clip.height()) * clip.width() * 3;
  for (int t = 0; t < T && uniform; ++t)
    for (std::size_t i = 3; i < frame_size && uniform; ++i)
      uniform = px[t * frame_size + i] == px[t * frame_size + i % 3];
  if (uniform) {
    res.degenerate = true;
    return res;
  }

  typename ReferenceEncoder<Real>::Cache ecache;
  const auto scene = model.encoder().forward(clip, NodeMode::spatio_temporal, ecache);
  typename ObjectFilter<Real>::Cache fcache;
  model.orf().filter(scene, false, nullptr, fcache);
  bool any = false;
  for (int c = 0; c < C; ++c) {
    const auto grad = model.orf().presence_input_gradient(fcache, c);  // (T, g*g*D)
    for (int t = 0; t < T; ++t) {
      Real* m = res.maps.data() + (static_cast<std::size_t>(c) * T + t) * g * g;
      Real mx = 0;
      for (int cell = 0; cell < g * g; ++cell) {
        double acc = 0.0;
        const std::size_t off = static_cast<std::size_t>(t) * g * g * D + static_cast<std::size_t>(cell) * D;
        for (int d = 0; d < D; ++d) acc += static_cast<double>(grad[off + d]) * scene.features[off + d];
        m[cell] = static_cast<Real>(std::max(acc, 0.0));
        mx = std::max(mx, m[cell]);
      }
      if (mx > 0) {
        any = true;
        for (int cell = 0; cell < g * g; ++cell) m[cell] /= mx;
      }
    }
  }
  res.degenerate = !any;
  return res;
}

/// Writes one g x g grid per (class, frame): cam_<class>_f<frame>.csv.
inline void write_cam(const fs::path& dir, const CamResult& cam, const std::vector<std::string>& names) {
  const int C = cam.maps.dim(0), T = cam.maps.dim(1), g = cam.maps.dim(2);
  for (int c = 0; c < C; ++c)
    for (int t = 0; t < T; ++t) {
      Tensor<Real> grid({g, g});
      std::copy_n(cam.maps.data() + (static_cast<std::size_t>(c) * T + t) * g * g, g * g, grid.data());
      const std::string cname = c < static_cast<int>(names.size()) ? names[c] : std::to_string(c);
      io::write_grid(dir / ("cam_" + std::to_string(c) + "_" + cname + "_f" + std::to_string(t) + ".csv"), grid);
    }
  if (cam.degenerate) io::write_text(dir / "DEGENERATE", "all-zero class activation maps\n");
}

/// Centroid (x, y) in pixel coordinates of a class's CAM summed over frames.
inline std::optional<std::pair<double, double>> cam_centroid(const CamResult& cam, int cls, int height, int width) {
  const int T = cam.maps.dim(1), g = cam.maps.dim(2);
  double sx = 0, sy = 0, sw = 0;
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < g; ++y)
      for (int x = 0; x < g; ++x) {
        const double w = cam.maps.at(cls, t, y, x);
        sx += w * (x + 0.5) * width / g;
        sy += w * (y + 0.5) * height / g;
        sw += w;
      }
  if (sw <= 0) return std::nullopt;
  return std::make_pair(sx / sw, sy / sw);
}

/// One CSV per (block, head): header of class names, then C_o rows.
template <typename S>
void export_adjacency(const fs::path& dir, const AdjacencyState<S>& adj, const std::vector<std::string>& names) {
  const int B = adj.blocks(), H = adj.heads(), C = adj.classes();
  std::string header;
  for (int c = 0; c < C; ++c) header += (c ? "," : "") + (c < static_cast<int>(names.size()) ? names[c] : std::to_string(c));
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h) {
      std::string s = header + "\n";
      const S* m = adj.superimposed.data() + (static_cast<std::size_t>(b) * H + h) * C * C;
      for (int i = 0; i < C; ++i) {
        for (int j = 0; j < C; ++j) s += (j ? "," : "") + io::format_real(static_cast<double>(m[i * C + j]));
        s += "\n";
      }
      io::write_text(dir / ("adjacency_block" + std::to_string(b + 1) + "_head" + std::to_string(h + 1) + ".csv"), s);
    }
}

}  // namespace thorn
