// thorn: generate synthetic data, train, evaluate, ablate and export artifacts.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "thorn/thorn.hpp"

namespace {

using namespace thorn;

struct Options {
  std::string config, out, data, checkpoint, clip, split, baseline;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool fusion = false;
  std::optional<double> threshold;
  std::optional<int> epochs;
};

// --seed replaces the configured seed; THORN_SEED overrides both.
std::uint64_t resolve_seed(std::uint64_t configured, const Options& o) {
  std::uint64_t s = o.seed.value_or(configured);
  apply_seed_env(s);
  return s;
}

ExperimentConfig load_experiment(const Options& o) {
  ExperimentConfig e = o.config.empty() ? default_experiment() : parse_experiment(FlatConfig::load(o.config));
  e.seed = resolve_seed(e.seed, o);
  if (o.epochs) e.epochs = *o.epochs;
  if (o.threshold) e.fusion_threshold = *o.threshold;
  e.validate();
  return e;
}

const Sample& find_clip(const Dataset& d, const std::string& id) {
  for (const auto& s : d.samples)
    if (s.annotation.clip_id == id) return s;
  throw Error("clip '" + id + "' not found in the dataset");
}

void print_metrics(const MetricsReport& r) {
  for (const auto& [k, v] : metric_fields(r)) std::cout << k << " = " << io::format_real(v) << '\n';
}

int cmd_generate(const Options& o) {
  SynthConfig c = o.config.empty() ? SynthConfig{} : parse_synth(FlatConfig::load(o.config));
  c.seed = resolve_seed(c.seed, o);
  synth::validate(c);
  const auto splits = generate_dataset(c, o.out);
  std::cout << "wrote " << splits.manifest.string() << " (" << splits.train.size() << " train, " << splits.val.size()
            << " val, " << splits.test.size() << " test)\n";
  return 0;
}

int cmd_train(const Options& o) {
  const auto cfg = load_experiment(o);
  const auto train_set = load_split(o.data, "train");
  const auto val_set = load_split(o.data, "val");
  const auto res = train(cfg, train_set, val_set, o.out);
  std::cout << "best checkpoint: " << (fs::path(o.out) / "best").string() << "\n";
  if (!res.history.empty()) print_metrics(res.history.back().val);
  return 0;
}

int cmd_eval(const Options& o) {
  const auto model = load_checkpoint<Real>(o.checkpoint);
  const auto data = load_split(o.data, o.split);
  check_compatible(model.config(), data);
  const double thr = o.threshold.value_or(0.3);
  if (thr < 0.0 || thr > 1.0) throw ConfigError("--threshold must lie in [0, 1]");
  const auto ev = evaluate(model, data, o.fusion, thr);
  print_metrics(ev.report);
  if (!o.out.empty()) {
    const fs::path out = o.out;
    io::write_text(out / "metrics.csv", metrics_csv(ev.report));
    io::write_text(out / "predictions.csv", prediction_dump_csv(ev.predictions));
    std::optional<MetricsReport> base;
    if (!o.baseline.empty()) base = evaluate(load_checkpoint<Real>(o.baseline), data, false, thr).report;
    io::write_text(out / "per_class.csv",
                   per_class_csv(ev.report, data.info.object_names, data.info.verb_names, base ? &*base : nullptr));
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  const auto cfg = load_experiment(o);
  std::vector<std::uint64_t> seeds = o.seeds;
  if (o.seed || std::getenv("THORN_SEED")) seeds = {cfg.seed};
  const auto train_set = load_split(o.data, "train");
  const auto val_set = load_split(o.data, "val");
  const auto test_set = load_split(o.data, "test");
  const auto res = ablate(cfg, train_set, val_set, test_set, seeds, o.out);
  const std::string grid = ablation_csv(res.grid);
  std::cout << grid;
  if (!o.out.empty()) io::write_text(fs::path(o.out) / "ablation.csv", grid);
  return 0;
}

int cmd_cam(const Options& o) {
  const auto model = load_checkpoint<Real>(o.checkpoint);
  const auto data = load_split(o.data, "all");
  const auto& s = find_clip(data, o.clip);
  const auto cam = export_cam(model, s.clip);
  write_cam(o.out, cam, data.info.object_names);
  if (cam.degenerate) std::cerr << "warning: degenerate activation maps for " << o.clip << '\n';
  std::cout << "wrote " << cam.maps.dim(0) * cam.maps.dim(1) << " grids to " << o.out << '\n';
  return 0;
}

int cmd_export_adjacency(const Options& o) {
  const auto model = load_checkpoint<Real>(o.checkpoint);
  if (model.config().arch != Architecture::thorn) throw Error("baseline checkpoints have no adjacency");
  const auto data = load_split(o.data, "all");
  const auto& s = find_clip(data, o.clip);
  const auto pred = model.predict(s.clip);
  export_adjacency(o.out, pred.adjacency, data.info.object_names);
  std::cout << "wrote adjacency grids to " << o.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thorn: object-relation action recognition on synthetic clips"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("generate", "Render a synthetic dataset");
  gen->add_option("--config", o.config, "synthetic data config file");
  gen->add_option("--out", o.out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", o.config, "experiment config file");
  tr->add_option("--data", o.data, "dataset manifest")->required();
  tr->add_option("--out", o.out, "run directory")->required();
  tr->add_option("--epochs", o.epochs, "override the configured epoch count");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  ev->add_option("--data", o.data, "dataset manifest")->required();
  ev->add_option("--split", o.split, "train, val, test or all")->default_val("test");
  ev->add_flag("--fusion", o.fusion, "fuse noun scores with detector scores");
  ev->add_option("--threshold", o.threshold, "detector score threshold");
  ev->add_option("--out", o.out, "directory for metrics, predictions and per-class CSVs");
  ev->add_option("--baseline", o.baseline, "checkpoint to compare per-class accuracy against");

  auto* ab = app.add_subcommand("ablate", "Train and compare the four ablation settings");
  ab->add_option("--config", o.config, "experiment config file");
  ab->add_option("--data", o.data, "dataset manifest")->required();
  ab->add_option("--out", o.out, "output directory");
  ab->add_option("--seeds", o.seeds, "seeds to average over")->delimiter(',');
  ab->add_option("--epochs", o.epochs, "override the configured epoch count");

  auto* cam = app.add_subcommand("cam", "Export class activation maps for one clip");
  cam->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  cam->add_option("--data", o.data, "dataset manifest")->required();
  cam->add_option("--clip", o.clip, "clip id")->required();
  cam->add_option("--out", o.out, "output directory")->required();

  auto* adj = app.add_subcommand("export-adjacency", "Export superimposed adjacency matrices for one clip");
  adj->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  adj->add_option("--data", o.data, "dataset manifest")->required();
  adj->add_option("--clip", o.clip, "clip id")->required();
  adj->add_option("--out", o.out, "output directory")->required();

  for (auto* sub : {gen, tr, ev, ab, cam, adj}) sub->add_option("--seed", o.seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*gen) return cmd_generate(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*ab) return cmd_ablate(o);
    if (*cam) return cmd_cam(o);
    if (*adj) return cmd_export_adjacency(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
