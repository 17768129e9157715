#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "thorn/encoder.hpp"
#include "thorn/io.hpp"
#include "thorn/tensor.hpp"

namespace thorn {

/// Supervision targets for one clip.
struct ClipAnnotation {
  std::string clip_id;
  int verb = 0;
  int noun = 0;
  Tensor<float> presence;                       // (T, C_o) multi-hot
  std::optional<Tensor<float>> detector_scores; // (T, C_o) in [0, 1]
  std::string frames_path;                      // relative to the manifest
};

inline bool operator==(const ClipAnnotation& a, const ClipAnnotation& b) {
  return a.clip_id == b.clip_id && a.verb == b.verb && a.noun == b.noun && a.presence == b.presence &&
         a.detector_scores == b.detector_scores && a.frames_path == b.frames_path;
}

struct SynthConfig {
  int num_objects = 10;
  int num_verbs = 6;
  int frames = 16;
  int height = 56;
  int width = 56;
  int clips_per_class = 5;  // per (verb, noun) pair
  double noise_level = 0.05;
  double detector_noise = 0.1;
  int object_radius = 0;    // 0 picks a tenth of the shorter side
  std::uint64_t seed = 0;

  int radius() const { return object_radius > 0 ? object_radius : std::max(3, std::min(height, width) / 10); }
};

namespace synth {

enum class Motion { approach, shake, rotate_around, merge, split, static_hold };
inline constexpr int kNumMotions = 6;
inline constexpr std::array<const char*, kNumMotions> kVerbNames{"approach", "shake", "rotate-around",
                                                                "merge",    "split", "static-hold"};

enum class Glyph { disk, square, triangle, diamond, cross, ring, hbar, vbar };

struct ClassStyle {
  const char* name;
  std::array<float, 3> color;
  Glyph glyph;
};

/// Class 0 is the hand; every class has a distinct color and glyph pair.
inline constexpr std::array<ClassStyle, 12> kPalette{{
    {"hand", {0.96f, 0.76f, 0.62f}, Glyph::disk},
    {"red-square", {0.90f, 0.10f, 0.10f}, Glyph::square},
    {"green-triangle", {0.10f, 0.80f, 0.20f}, Glyph::triangle},
    {"blue-diamond", {0.15f, 0.25f, 0.95f}, Glyph::diamond},
    {"yellow-cross", {0.95f, 0.90f, 0.10f}, Glyph::cross},
    {"magenta-ring", {0.90f, 0.10f, 0.85f}, Glyph::ring},
    {"cyan-hbar", {0.10f, 0.90f, 0.90f}, Glyph::hbar},
    {"orange-vbar", {1.00f, 0.55f, 0.05f}, Glyph::vbar},
    {"white-triangle", {1.00f, 1.00f, 1.00f}, Glyph::triangle},
    {"black-diamond", {0.05f, 0.05f, 0.05f}, Glyph::diamond},
    {"lime-ring", {0.60f, 1.00f, 0.30f}, Glyph::ring},
    {"brown-cross", {0.50f, 0.28f, 0.10f}, Glyph::cross},
}};

inline bool covers(Glyph g, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy), d2 = dx * dx + dy * dy;
  switch (g) {
    case Glyph::disk: return d2 <= r * r;
    case Glyph::square: return ax <= 0.85 * r && ay <= 0.85 * r;
    case Glyph::triangle: return dy >= -r && dy <= r && ax <= (dy + r) / 2.0;
    case Glyph::diamond: return ax + ay <= r;
    case Glyph::cross: return (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r);
    case Glyph::ring: return d2 <= r * r && d2 >= 0.3 * r * r;
    case Glyph::hbar: return ax <= r && ay <= 0.45 * r;
    case Glyph::vbar: return ay <= r && ax <= 0.45 * r;
  }
  return false;
}

struct Point {
  double x = 0, y = 0;
};

/// Centre trajectories (T points) of the noun object and the hand.
struct Trajectories {
  std::vector<Point> noun;
  std::vector<Point> hand;
};

inline Trajectories motion_paths(Motion m, Point anchor, double angle, int T, double extent, double radius) {
  const double contact = 2.0 * radius + 1.0;
  const double far = std::max(0.4 * extent, contact + 4.0);
  const double drift = 0.12 * extent;
  const double wobble = 0.06 * extent;
  const double orbit = std::max(0.3 * extent, contact);
  const Point u{std::cos(angle), std::sin(angle)};
  Trajectories tr;
  for (int t = 0; t < T; ++t) {
    const double s = T > 1 ? static_cast<double>(t) / (T - 1) : 0.0;
    Point n = anchor, h;
    auto at = [&](Point base, double d) { return Point{base.x + u.x * d, base.y + u.y * d}; };
    switch (m) {
      case Motion::approach: h = at(n, far + (contact - far) * s); break;
      case Motion::shake:
        n.x += (t % 2 ? wobble : -wobble);
        h = at(n, contact);
        break;
      case Motion::rotate_around: {
        const double a = angle + 6.283185307179586 * s;
        h = {n.x + orbit * std::cos(a), n.y + orbit * std::sin(a)};
        break;
      }
      case Motion::merge:
      case Motion::split: {
        const double q = m == Motion::merge ? s : 1.0 - s;
        n = at(anchor, drift * q);
        h = at(anchor, far - (far - contact - drift) * q);
        break;
      }
      case Motion::static_hold: h = at(n, contact); break;
    }
    tr.noun.push_back(n);
    tr.hand.push_back(h);
  }
  return tr;
}

/// Maximum displacement of the noun centre from its anchor for a motion.
inline double noun_excursion(Motion m, double extent) {
  switch (m) {
    case Motion::shake: return 0.06 * extent;
    case Motion::merge:
    case Motion::split: return 0.12 * extent;
    default: return 0.0;
  }
}

struct RenderedClip {
  ClipTensor<float> clip;
  ClipAnnotation annotation;
  Trajectories paths;  // renderer ground truth, used for localisation checks
};

inline std::string class_name(int c) { return kPalette.at(c).name; }

inline void validate(const SynthConfig& c) {
  if (c.num_objects < 2 || c.num_objects > static_cast<int>(kPalette.size()))
    throw ConfigError("synth: num_objects must lie in [2, " + std::to_string(kPalette.size()) + "]");
  if (c.num_verbs < 1 || c.num_verbs > kNumMotions)
    throw ConfigError("synth: num_verbs must lie in [1, " + std::to_string(kNumMotions) + "]");
  if (c.frames < 1) throw ConfigError("synth: frames must be >= 1");
  if (c.height < 8 || c.width < 8) throw ConfigError("synth: frames must be at least 8x8");
  if (!(c.noise_level >= 0.0 && c.noise_level < 1.0)) throw ConfigError("synth: noise_level must lie in [0, 1)");
  if (!(c.detector_noise >= 0.0 && c.detector_noise <= 1.0))
    throw ConfigError("synth: detector_noise must lie in [0, 1]");
  const int r = c.radius();
  if (2 * r + 1 > std::min(c.height, c.width))
    throw ConfigError("synth: object of radius " + std::to_string(r) + " does not fit a " + std::to_string(c.height) +
                      "x" + std::to_string(c.width) + " frame");
}

}  // namespace synth

/// Renders one clip. `quadrant` in {0: top-left, 1: top-right, 2: bottom-left,
/// 3: bottom-right} keeps the noun object's centre inside that quadrant; -1 places it anywhere.
inline synth::RenderedClip generate_clip(const SynthConfig& cfg, int verb, int noun, Rng& rng, int quadrant = -1) {
  using namespace synth;
  validate(cfg);
  if (verb < 0 || verb >= cfg.num_verbs) throw Error("generate_clip: verb " + std::to_string(verb) + " out of range");
  if (noun < 0 || noun >= cfg.num_objects) throw Error("generate_clip: noun " + std::to_string(noun) + " out of range");
  if (quadrant < -1 || quadrant > 3) throw Error("generate_clip: quadrant must be -1..3");
  const int T = cfg.frames, H = cfg.height, W = cfg.width, C = cfg.num_objects;
  const double r = cfg.radius();
  const double extent = std::min(H, W);
  const auto motion = static_cast<Motion>(verb);

  auto inside = [&](Point p) { return p.x >= r && p.x <= W - 1 - r && p.y >= r && p.y <= H - 1 - r; };
  Trajectories paths;
  bool placed = false;
  for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
    double x0 = r, x1 = W - 1 - r, y0 = r, y1 = H - 1 - r;
    if (quadrant >= 0) {
      const double ex = noun_excursion(motion, extent) + 1.0;
      x0 = (quadrant % 2 ? W / 2.0 : 0.0) + ex;
      x1 = (quadrant % 2 ? W : W / 2.0) - 1.0 - ex;
      y0 = (quadrant / 2 ? H / 2.0 : 0.0) + ex;
      y1 = (quadrant / 2 ? H : H / 2.0) - 1.0 - ex;
    }
    const Point anchor{uniform(rng, x0, x1), uniform(rng, y0, y1)};
    const double angle = uniform(rng, 0.0, 6.283185307179586);
    paths = motion_paths(motion, anchor, angle, T, extent, r);
    placed = true;
    for (int t = 0; t < T && placed; ++t) placed = inside(paths.noun[t]) && inside(paths.hand[t]);
  }
  if (!placed) throw ConfigError("synth: cannot place the interaction inside a " + std::to_string(H) + "x" +
                                 std::to_string(W) + " frame with object radius " + std::to_string(cfg.radius()));

  // Distractors: 0-2 other classes drifting with reflection at the borders.
  std::vector<int> pool;
  for (int c = 1; c < C; ++c)
    if (c != noun) pool.push_back(c);
  shuffle(pool, rng);
  const int n_distract = std::min<int>(uniform_int(rng, 0, 2), static_cast<int>(pool.size()));
  struct Drifter {
    int cls;
    Point p, v;
  };
  std::vector<Drifter> drifters;
  for (int i = 0; i < n_distract; ++i) {
    const double speed = uniform(rng, 0.005, 0.03) * extent, a = uniform(rng, 0.0, 6.283185307179586);
    drifters.push_back({pool[i], {uniform(rng, r, W - 1 - r), uniform(rng, r, H - 1 - r)},
                        {speed * std::cos(a), speed * std::sin(a)}});
  }

  // Static textured background.
  const double base = uniform(rng, 0.35, 0.55);
  const double fx = uniform(rng, 0.2, 0.6), fy = uniform(rng, 0.2, 0.6);
  const double px = uniform(rng, 0.0, 6.3), py = uniform(rng, 0.0, 6.3);
  const std::array<double, 3> tint{uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05)};

  synth::RenderedClip out;
  out.paths = paths;
  Tensor<float> frames({T, H, W, 3});
  Tensor<float> presence({T, C});
  std::vector<int> owner(static_cast<std::size_t>(H) * W);
  for (int t = 0; t < T; ++t) {
    std::fill(owner.begin(), owner.end(), -1);
    auto stamp = [&](int cls, Point c) {
      const Glyph g = kPalette[cls].glyph;
      for (int y = std::max(0, static_cast<int>(c.y - r - 1)); y <= std::min(H - 1, static_cast<int>(c.y + r + 1)); ++y)
        for (int x = std::max(0, static_cast<int>(c.x - r - 1)); x <= std::min(W - 1, static_cast<int>(c.x + r + 1)); ++x)
          if (covers(g, x - c.x, y - c.y, r)) owner[static_cast<std::size_t>(y) * W + x] = cls;
    };
    for (auto& d : drifters) {
      stamp(d.cls, d.p);
      d.p.x += d.v.x;
      d.p.y += d.v.y;
      if (d.p.x < r || d.p.x > W - 1 - r) d.v.x = -d.v.x, d.p.x = std::clamp(d.p.x, r, W - 1 - r);
      if (d.p.y < r || d.p.y > H - 1 - r) d.v.y = -d.v.y, d.p.y = std::clamp(d.p.y, r, H - 1 - r);
    }
    stamp(noun, paths.noun[t]);
    stamp(0, paths.hand[t]);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int o = owner[static_cast<std::size_t>(y) * W + x];
        if (o >= 0) presence.at(t, o) = 1.0f;
        const double bg = base + 0.08 * std::sin(fx * x + px) * std::sin(fy * y + py);
        for (int ch = 0; ch < 3; ++ch) {
          double v = o >= 0 ? kPalette[o].color[ch] : bg + tint[ch];
          if (cfg.noise_level > 0.0) v += cfg.noise_level * normal(rng);
          frames.at(t, y, x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
  }

  // Detector-like scores: presence attenuated by noise and occasionally flipped.
  Tensor<float> scores = presence;
  if (cfg.detector_noise > 0.0) {
    for (auto& s : scores.storage()) {
      const double u = uniform01(rng);
      double v = s > 0.5f ? 1.0 - cfg.detector_noise * u : cfg.detector_noise * u;
      if (uniform01(rng) < 0.25 * cfg.detector_noise) v = 1.0 - v;
      s = static_cast<float>(v);
    }
  }

  out.clip.data = std::move(frames);
  out.annotation.verb = verb;
  out.annotation.noun = noun;
  out.annotation.presence = std::move(presence);
  out.annotation.detector_scores = std::move(scores);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files

struct DatasetInfo {
  int num_objects = 0;
  int num_verbs = 0;
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<std::string> object_names;
  std::vector<std::string> verb_names;
};

inline constexpr const char* kManifestHeader = "clip_id,verb,noun,frames_path,presence_path,scores_path";
inline constexpr const char* kInfoFile = "dataset_info.txt";

inline std::string info_text(const DatasetInfo& d) {
  std::string s;
  s += "num_objects = " + std::to_string(d.num_objects) + "\n";
  s += "num_verbs = " + std::to_string(d.num_verbs) + "\n";
  s += "frames = " + std::to_string(d.frames) + "\n";
  s += "height = " + std::to_string(d.height) + "\n";
  s += "width = " + std::to_string(d.width) + "\n";
  auto join = [](const std::vector<std::string>& v) {
    std::string o;
    for (std::size_t i = 0; i < v.size(); ++i) o += (i ? "," : "") + v[i];
    return o;
  };
  s += "object_names = " + join(d.object_names) + "\n";
  s += "verb_names = " + join(d.verb_names) + "\n";
  return s;
}

/// Reads the dataset_info.txt next to a manifest, if present.
inline std::optional<DatasetInfo> read_dataset_info(const std::filesystem::path& manifest) {
  const auto p = manifest.parent_path() / kInfoFile;
  if (!std::filesystem::exists(p)) return std::nullopt;
  DatasetInfo d;
  std::istringstream in(io::read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const auto key = io::trim(line.substr(0, eq)), val = io::trim(line.substr(eq + 1));
    if (key == "num_objects") d.num_objects = io::parse_int(val, key);
    else if (key == "num_verbs") d.num_verbs = io::parse_int(val, key);
    else if (key == "frames") d.frames = io::parse_int(val, key);
    else if (key == "height") d.height = io::parse_int(val, key);
    else if (key == "width") d.width = io::parse_int(val, key);
    else if (key == "object_names") d.object_names = io::split(val);
    else if (key == "verb_names") d.verb_names = io::split(val);
  }
  return d;
}

inline std::string manifest_text(const std::vector<ClipAnnotation>& anns) {
  std::string s = std::string(kManifestHeader) + "\n";
  for (const auto& a : anns) {
    const std::string scores = a.detector_scores ? "scores/" + a.clip_id + ".csv" : "";
    s += a.clip_id + "," + std::to_string(a.verb) + "," + std::to_string(a.noun) + "," + a.frames_path +
         ",presence/" + a.clip_id + ".csv," + scores + "\n";
  }
  return s;
}

/// Parses a manifest; class counts of 0 are taken from dataset_info.txt when
/// present. Missing score files leave `detector_scores` empty.
inline std::vector<ClipAnnotation> load_annotations(const std::filesystem::path& manifest, int num_objects = 0,
                                                    int num_verbs = 0) {
  namespace fs = std::filesystem;
  if (!fs::exists(manifest)) throw Error("manifest not found: " + manifest.string());
  if (const auto info = read_dataset_info(manifest)) {
    if (num_objects == 0) num_objects = info->num_objects;
    if (num_verbs == 0) num_verbs = info->num_verbs;
  }
  const fs::path root = manifest.parent_path();
  std::istringstream in(io::read_text(manifest));
  std::string line;
  int lineno = 0;
  std::vector<ClipAnnotation> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = manifest.string() + ":" + std::to_string(lineno);
    if (lineno == 1) {
      if (line != kManifestHeader) throw Error(where + ": expected header '" + std::string(kManifestHeader) + "'");
      continue;
    }
    if (io::trim(line).empty()) continue;
    const auto f = io::split(line);
    if (f.size() != 6) throw Error(where + ": expected 6 fields, got " + std::to_string(f.size()));
    ClipAnnotation a;
    a.clip_id = io::trim(f[0]);
    if (a.clip_id.empty()) throw Error(where + ": empty clip_id");
    a.verb = io::parse_int(f[1], where + ": verb");
    a.noun = io::parse_int(f[2], where + ": noun");
    if (a.verb < 0 || (num_verbs > 0 && a.verb >= num_verbs))
      throw Error(where + ": clip " + a.clip_id + ": verb " + std::to_string(a.verb) + " out of range");
    if (a.noun < 0 || (num_objects > 0 && a.noun >= num_objects))
      throw Error(where + ": clip " + a.clip_id + ": noun " + std::to_string(a.noun) + " out of range");
    a.frames_path = io::trim(f[3]);
    const std::string presence_path = io::trim(f[4]), scores_path = io::trim(f[5]);
    if (presence_path.empty()) throw Error(where + ": clip " + a.clip_id + ": missing presence_path");
    a.presence = io::read_grid<float>(root / presence_path);
    const int C = a.presence.dim(1);
    if (num_objects > 0 && C != num_objects)
      throw Error(where + ": clip " + a.clip_id + ": presence has " + std::to_string(C) + " classes, expected " +
                  std::to_string(num_objects));
    if (num_objects == 0 && a.noun >= C)
      throw Error(where + ": clip " + a.clip_id + ": noun " + std::to_string(a.noun) + " out of range");
    for (auto v : a.presence.storage())
      if (v != 0.0f && v != 1.0f) throw Error(where + ": clip " + a.clip_id + ": presence entries must be 0 or 1");
    if (!scores_path.empty() && fs::exists(root / scores_path)) {
      auto s = io::read_grid<float>(root / scores_path);
      if (s.shape() != a.presence.shape())
        throw Error(where + ": clip " + a.clip_id + ": detector scores shape " + shape_str(s.shape()) +
                    " differs from presence " + shape_str(a.presence.shape()));
      for (auto v : s.storage())
        if (!(v >= 0.0f && v <= 1.0f)) throw Error(where + ": clip " + a.clip_id + ": detector scores outside [0, 1]");
      a.detector_scores = std::move(s);
    }
    out.push_back(std::move(a));
  }
  if (lineno == 0) throw Error(manifest.string() + ": empty manifest");
  return out;
}

inline ClipTensor<float> load_clip(const std::filesystem::path& manifest, const ClipAnnotation& a) {
  return {io::read_clip<float>(manifest.parent_path() / a.frames_path)};
}

struct DatasetSplits {
  std::vector<ClipAnnotation> train, val, test;
  std::filesystem::path manifest;
};

inline std::string clip_id_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%05d", index);
  return buf;
}

/// Renders every (verb, noun) pair `clips_per_class` times into `out_dir`
/// and writes manifest.csv plus train/val/test manifests (70/15/15, each
/// pair represented in train). Clip i draws from its own RNG stream.
inline DatasetSplits generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  synth::validate(cfg);
  if (cfg.clips_per_class < 3) throw ConfigError("synth: clips_per_class must be >= 3");
  const int pairs = cfg.num_verbs * cfg.num_objects, per = cfg.clips_per_class;
  const int total = pairs * per;
  const int n_val = total * 15 / 100, n_test = total * 15 / 100;
  if (n_val < 1 || n_test < 1 || total - pairs < n_val + n_test)
    throw ConfigError("synth: " + std::to_string(total) + " clips are not enough for a 70/15/15 split");

  fs::create_directories(out_dir / "clips");
  std::vector<ClipAnnotation> all;
  for (int v = 0; v < cfg.num_verbs; ++v)
    for (int n = 0; n < cfg.num_objects; ++n)
      for (int k = 0; k < per; ++k) {
        const int index = (v * cfg.num_objects + n) * per + k;
        Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(index) + 1);
        auto r = generate_clip(cfg, v, n, rng);
        r.annotation.clip_id = clip_id_for(index);
        r.annotation.frames_path = "clips/" + r.annotation.clip_id + ".bin";
        io::write_clip(out_dir / r.annotation.frames_path, r.clip.data);
        io::write_grid(out_dir / "presence" / (r.annotation.clip_id + ".csv"), r.annotation.presence);
        io::write_grid(out_dir / "scores" / (r.annotation.clip_id + ".csv"), *r.annotation.detector_scores);
        all.push_back(std::move(r.annotation));
      }

  Rng split_rng = make_rng(cfg.seed, 0x5B117);
  std::vector<int> split_of(total, 0);  // 0 train, 1 val, 2 test
  std::vector<int> pool;
  for (int p = 0; p < pairs; ++p) {
    std::vector<int> ids(per);
    for (int k = 0; k < per; ++k) ids[k] = p * per + k;
    shuffle(ids, split_rng);
    pool.insert(pool.end(), ids.begin() + 1, ids.end());
  }
  shuffle(pool, split_rng);
  for (int i = 0; i < n_val; ++i) split_of[pool[i]] = 1;
  for (int i = n_val; i < n_val + n_test; ++i) split_of[pool[i]] = 2;

  DatasetSplits s;
  for (int i = 0; i < total; ++i) (split_of[i] == 0 ? s.train : split_of[i] == 1 ? s.val : s.test).push_back(all[i]);

  DatasetInfo info{cfg.num_objects, cfg.num_verbs, cfg.frames, cfg.height, cfg.width, {}, {}};
  for (int c = 0; c < cfg.num_objects; ++c) info.object_names.push_back(synth::class_name(c));
  for (int v = 0; v < cfg.num_verbs; ++v) info.verb_names.push_back(synth::kVerbNames[v]);
  io::write_text(out_dir / kInfoFile, info_text(info));
  io::write_text(out_dir / "manifest.csv", manifest_text(all));
  io::write_text(out_dir / "train.csv", manifest_text(s.train));
  io::write_text(out_dir / "val.csv", manifest_text(s.val));
  io::write_text(out_dir / "test.csv", manifest_text(s.test));
  s.manifest = out_dir / "manifest.csv";
  return s;
}

}  // namespace thorn
