#pragma once

// Synthetic egocentric-style clips, segment frame sampling, augmentation and
// the on-disk dataset layout (JSON-lines manifest + one tensor file per clip).

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gsnaco/checkpoint.hpp"
#include "gsnaco/classifier.hpp"

namespace gsnaco {

enum class Split { train, test_s1, test_s2 };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_s1: return "test_s1";
    case Split::test_s2: return "test_s2";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test_s1") return Split::test_s1;
  if (s == "test_s2") return Split::test_s2;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, test_s1 or test_s2)");
}

inline constexpr std::array<const char*, 5> kVerbNames{"left", "right", "up", "down", "static"};
inline constexpr std::array<const char*, 3> kNounNames{"square", "cross", "bar"};
inline constexpr int kVerbLeft = 0, kVerbRight = 1;

/// Frames are T_raw×3×H×W, values in [0,1].
struct VideoClip {
  std::string clip_id;
  Split split = Split::train;
  int verb = 0, noun = 0, action = 0;
  std::size_t frames = 0, height = 0, width = 0;
  std::vector<float> pixels;

  std::size_t frame_size() const { return 3 * height * width; }
  std::span<const float> frame(std::size_t t) const {
    return std::span<const float>(pixels).subspan(t * frame_size(), frame_size());
  }
};

/// Action classes are (verb, noun) pairs indexed by first appearance.
class ActionVocab {
 public:
  int index_or_add(int verb, int noun) {
    auto key = std::make_pair(verb, noun);
    auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(pairs_.size());
    index_.emplace(key, id);
    pairs_.push_back(key);
    return id;
  }
  int index(int verb, int noun) const {
    auto it = index_.find({verb, noun});
    if (it == index_.end()) {
      throw std::out_of_range("no action class for verb " + std::to_string(verb) + ", noun " + std::to_string(noun));
    }
    return it->second;
  }
  bool contains(int verb, int noun) const { return index_.count({verb, noun}) > 0; }
  std::size_t size() const { return pairs_.size(); }
  const std::vector<std::pair<int, int>>& pairs() const { return pairs_; }

 private:
  std::vector<std::pair<int, int>> pairs_;
  std::map<std::pair<int, int>, int> index_;
};

struct SynthConfig {
  std::size_t height = 32, width = 32, frames = 40;
  std::size_t verbs = 5, nouns = 3;
  double test_s1_fraction = 0.2;
  double test_s2_fraction = 0.1;
  std::size_t seen_backgrounds = 8;
  std::size_t unseen_backgrounds = 4;
  double speed = 1.0;   // pixels per raw frame
  double noise = 0.02;  // per-frame pixel noise σ
};

struct SplitCounts {
  std::size_t train = 0, test_s1 = 0, test_s2 = 0;
};

inline SplitCounts split_counts(std::size_t n, const SynthConfig& cfg) {
  SplitCounts c;
  c.test_s1 = static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.test_s1_fraction));
  c.test_s2 = static_cast<std::size_t>(std::llround(static_cast<double>(n) * cfg.test_s2_fraction));
  if (c.test_s1 + c.test_s2 > n) throw std::invalid_argument("split fractions exceed 1");
  c.train = n - c.test_s1 - c.test_s2;
  return c;
}

namespace detail {

struct Texture {
  std::array<double, 3> fx, fy, phase;
  std::array<std::array<double, 3>, 3> color;  // per wave, per channel
};

inline Texture make_texture(std::uint64_t seed, std::size_t id) {
  std::seed_seq seq{seed, std::uint64_t{0x7e47}, static_cast<std::uint64_t>(id)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> freq(0.5, 3.5), ph(0.0, 2 * M_PI), col(0.0, 1.0);
  Texture t{};
  for (int k = 0; k < 3; ++k) {
    t.fx[k] = std::round(freq(rng));
    t.fy[k] = std::round(freq(rng));
    t.phase[k] = ph(rng);
    for (int c = 0; c < 3; ++c) t.color[k][c] = col(rng);
  }
  return t;
}

// Shape masks on a 9×9 grid centred on the object position.
inline bool shape_covers(int noun, int dy, int dx) {
  const int ay = std::abs(dy), ax = std::abs(dx);
  switch (noun) {
    case 0: return ay <= 3 && ax <= 3;                          // square 7×7
    case 1: return (ay <= 1 && ax <= 4) || (ax <= 1 && ay <= 4);  // cross
    case 2: return ay <= 1 && ax <= 4;                          // bar 3×9
    default: return false;
  }
}

inline std::pair<double, double> verb_velocity(int verb, double speed) {
  switch (verb) {
    case 0: return {0.0, -speed};  // left
    case 1: return {0.0, speed};   // right
    case 2: return {-speed, 0.0};  // up
    case 3: return {speed, 0.0};   // down
    default: return {0.0, 0.0};    // static
  }
}

inline int wrap(long v, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<int>(((v % m) + m) % m);
}

}  // namespace detail

/// Indexes actions by first appearance among training clips, then among the
/// remaining clips, and writes action labels.
inline ActionVocab assign_actions(std::vector<VideoClip>& clips) {
  ActionVocab vocab;
  for (const auto& c : clips)
    if (c.split == Split::train) vocab.index_or_add(c.verb, c.noun);
  for (auto& c : clips) c.action = vocab.index_or_add(c.verb, c.noun);
  return vocab;
}

inline ActionVocab vocab_of(const std::vector<VideoClip>& clips) {
  ActionVocab vocab;
  for (const auto& c : clips)
    if (c.split == Split::train) vocab.index_or_add(c.verb, c.noun);
  for (const auto& c : clips) vocab.index_or_add(c.verb, c.noun);
  return vocab;
}

/// Renders one clip: a shape (noun) translating with a motion pattern (verb)
/// over a textured, noisy background. Positions wrap around the frame, and
/// start positions are uniform over the frame for every verb, so a single
/// frame carries no information about the direction of motion.
inline VideoClip render_clip(std::uint64_t seed, std::size_t index, int verb, int noun, std::size_t texture_id,
                             const SynthConfig& cfg) {
  std::seed_seq seq{seed, std::uint64_t{0xc11b}, static_cast<std::uint64_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> uy(0.0, static_cast<double>(cfg.height)),
      ux(0.0, static_cast<double>(cfg.width)), bright(0.85, 1.0), tint(0.0, 0.3), gain(0.25, 0.45);
  std::normal_distribution<double> noise(0.0, cfg.noise);

  const auto tex = detail::make_texture(seed, texture_id);
  const double y0 = uy(rng), x0 = ux(rng);
  const double g = gain(rng);
  const std::array<double, 3> shape_color{bright(rng) - tint(rng), bright(rng) - tint(rng), bright(rng) - tint(rng)};
  const auto [vy, vx] = detail::verb_velocity(verb, cfg.speed);

  VideoClip clip;
  clip.verb = verb;
  clip.noun = noun;
  clip.frames = cfg.frames;
  clip.height = cfg.height;
  clip.width = cfg.width;
  clip.pixels.resize(cfg.frames * 3 * cfg.height * cfg.width);

  std::vector<double> background(3 * cfg.height * cfg.width);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        double v = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double arg = 2 * M_PI * (tex.fx[k] * x / cfg.width + tex.fy[k] * y / cfg.height) + tex.phase[k];
          v += tex.color[k][c] * std::sin(arg);
        }
        background[(c * cfg.height + y) * cfg.width + x] = 0.4 + g * v / 3.0;
      }

  for (std::size_t t = 0; t < cfg.frames; ++t) {
    float* frame = clip.pixels.data() + t * 3 * cfg.height * cfg.width;
    std::vector<double> img(background);
    const long cy = std::lround(y0 + vy * static_cast<double>(t));
    const long cx = std::lround(x0 + vx * static_cast<double>(t));
    for (int dy = -4; dy <= 4; ++dy)
      for (int dx = -4; dx <= 4; ++dx) {
        if (!detail::shape_covers(noun, dy, dx)) continue;
        const int py = detail::wrap(cy + dy, cfg.height), px = detail::wrap(cx + dx, cfg.width);
        for (std::size_t c = 0; c < 3; ++c) img[(c * cfg.height + py) * cfg.width + px] = shape_color[c];
      }
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double v = img[i] + (cfg.noise > 0 ? noise(rng) : 0.0);
      frame[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return clip;
}

/// Deterministic synthetic dataset. Each split cycles through all
/// (verb, noun) pairs before the clip order is shuffled, so labels are
/// balanced. test_s2 clips use background textures never used elsewhere.
inline std::vector<VideoClip> generate_synthetic(std::uint64_t seed, std::size_t n_clips, const SynthConfig& cfg) {
  if (n_clips < 1) throw std::invalid_argument("generate_synthetic: need at least one clip");
  if (cfg.verbs < 2 || cfg.nouns < 2) throw std::invalid_argument("generate_synthetic: vocabulary sizes must be >= 2");
  if (cfg.verbs > kVerbNames.size() || cfg.nouns > kNounNames.size()) {
    throw std::invalid_argument("generate_synthetic: at most 5 verbs and 3 nouns are renderable");
  }
  if (cfg.height < 9 || cfg.width < 9 || cfg.frames < 1) throw std::invalid_argument("generate_synthetic: frames too small");
  if (cfg.seen_backgrounds < 1 || cfg.unseen_backgrounds < 1) throw std::invalid_argument("generate_synthetic: empty texture pool");

  const auto counts = split_counts(n_clips, cfg);
  const std::size_t pairs = cfg.verbs * cfg.nouns;
  struct Plan {
    Split split;
    int verb, noun;
  };
  std::vector<Plan> plan;
  auto add_split = [&](Split s, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t p = j % pairs;
      plan.push_back({s, static_cast<int>(p / cfg.nouns), static_cast<int>(p % cfg.nouns)});
    }
  };
  add_split(Split::train, counts.train);
  add_split(Split::test_s1, counts.test_s1);
  add_split(Split::test_s2, counts.test_s2);

  std::mt19937_64 rng(seed);
  std::shuffle(plan.begin(), plan.end(), rng);

  std::vector<VideoClip> clips;
  clips.reserve(n_clips);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    std::uniform_int_distribution<std::size_t> seen(0, cfg.seen_backgrounds - 1),
        unseen(cfg.seen_backgrounds, cfg.seen_backgrounds + cfg.unseen_backgrounds - 1);
    const std::size_t tex = plan[i].split == Split::test_s2 ? unseen(rng) : seen(rng);
    auto clip = render_clip(seed, i, plan[i].verb, plan[i].noun, tex, cfg);
    char id[32];
    std::snprintf(id, sizeof id, "clip_%06zu", i);
    clip.clip_id = id;
    clip.split = plan[i].split;
    clips.push_back(std::move(clip));
  }
  assign_actions(clips);
  return clips;
}

/// Spread of the (verb, noun) pair counts around the uniform count n/(V·N).
struct BalanceReport {
  double expected = 0;
  std::size_t min_count = 0, max_count = 0;
  double max_deviation = 0;  // max |count − expected| / expected
};

inline BalanceReport label_balance(const std::vector<VideoClip>& clips, std::size_t verbs, std::size_t nouns) {
  std::vector<std::size_t> counts(verbs * nouns, 0);
  for (const auto& c : clips) {
    if (c.verb < 0 || c.noun < 0 || static_cast<std::size_t>(c.verb) >= verbs ||
        static_cast<std::size_t>(c.noun) >= nouns) {
      throw std::out_of_range("label_balance: clip " + c.clip_id + " has labels outside the vocabulary");
    }
    ++counts[static_cast<std::size_t>(c.verb) * nouns + static_cast<std::size_t>(c.noun)];
  }
  BalanceReport r;
  r.expected = static_cast<double>(clips.size()) / static_cast<double>(counts.size());
  r.min_count = *std::min_element(counts.begin(), counts.end());
  r.max_count = *std::max_element(counts.begin(), counts.end());
  for (auto n : counts) r.max_deviation = std::max(r.max_deviation, std::abs(static_cast<double>(n) - r.expected) / r.expected);
  return r;
}

// ---------------------------------------------------------------------------
// Segment sampling

enum class SampleMode { random_per_segment, center_per_segment };

struct SamplerConfig {
  std::size_t num_frames = 16;
  SampleMode mode = SampleMode::center_per_segment;
};

/// Splits [0, frames) into K equal segments [⌊iT/K⌋, ⌊(i+1)T/K⌋) and picks one
/// index per segment: uniformly at random, or the segment midpoint
/// ⌊(start+end)/2⌋.
inline std::vector<std::size_t> sample_indices(std::size_t frames, const SamplerConfig& cfg, std::mt19937_64* rng) {
  const std::size_t k = cfg.num_frames;
  if (k == 0) throw std::invalid_argument("sample_frames: need at least one frame");
  if (k > frames) {
    throw std::invalid_argument("sample_frames: cannot sample " + std::to_string(k) + " frames from a clip of " +
                                std::to_string(frames));
  }
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t start = i * frames / k, end = (i + 1) * frames / k;
    if (cfg.mode == SampleMode::center_per_segment) {
      idx[i] = (start + end) / 2;
    } else {
      if (!rng) throw std::invalid_argument("sample_frames: random mode needs an rng");
      std::uniform_int_distribution<std::size_t> u(start, end - 1);
      idx[i] = u(*rng);
    }
  }
  return idx;
}

/// Gathers the sampled frames of a clip into a K×3×H×W buffer.
inline std::vector<float> sample_frames(const VideoClip& clip, const SamplerConfig& cfg, std::mt19937_64* rng,
                                        std::size_t first = 0, std::size_t count = 0) {
  if (count == 0) count = clip.frames - first;
  auto idx = sample_indices(count, cfg, rng);
  std::vector<float> out;
  out.reserve(idx.size() * clip.frame_size());
  for (auto i : idx) {
    auto f = clip.frame(first + i);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double flip_probability = 0.5;
  double min_scale = 0.8, max_scale = 1.25;
};

struct AugmentParams {
  bool flip = false;
  double scale = 1.0;
  double offset_y = 0.0, offset_x = 0.0;  // crop origin in scaled coordinates
};

/// Samples an image at fractional source coordinates with edge clamping.
inline float bilinear_at(std::span<const float> plane, std::size_t h, std::size_t w, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const std::size_t y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  if (fy == 0.0 && fx == 0.0) return plane[y0 * w + x0];
  const double top = (1 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
  const double bottom = (1 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

/// Bilinear resize of a C×H×W image to C×out_h×out_w (pixel-centre aligned).
inline std::vector<float> resize_bilinear(std::span<const float> img, std::size_t channels, std::size_t h,
                                          std::size_t w, std::size_t out_h, std::size_t out_w) {
  std::vector<float> out(channels * out_h * out_w);
  const double ry = static_cast<double>(h) / out_h, rx = static_cast<double>(w) / out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    auto plane = img.subspan(c * h * w, h * w);
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x)
        out[(c * out_h + y) * out_w + x] = bilinear_at(plane, h, w, (y + 0.5) * ry - 0.5, (x + 0.5) * rx - 0.5);
  }
  return out;
}

inline AugmentParams draw_augment(std::mt19937_64& rng, std::size_t h, std::size_t w, const AugmentConfig& cfg) {
  std::bernoulli_distribution flip(cfg.flip_probability);
  std::uniform_real_distribution<double> scale(cfg.min_scale, cfg.max_scale);
  AugmentParams p;
  p.flip = flip(rng);
  p.scale = scale(rng);
  // Crop window of the original size inside the scaled image; when zooming
  // out the window extends past the image and edges are replicated.
  auto offset = [&](std::size_t n) {
    const double slack = static_cast<double>(n) * p.scale - static_cast<double>(n);
    std::uniform_real_distribution<double> u(std::min(0.0, slack), std::max(0.0, slack));
    return std::round(u(rng));
  };
  p.offset_y = offset(h);
  p.offset_x = offset(w);
  return p;
}

/// Applies one transform to a single 3×H×W frame.
inline std::vector<float> apply_augment(std::span<const float> frame, std::size_t h, std::size_t w,
                                        const AugmentParams& p) {
  std::vector<float> out(frame.size());
  for (std::size_t c = 0; c < 3; ++c) {
    auto plane = frame.subspan(c * h * w, h * w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double sy = (y + p.offset_y + 0.5) / p.scale - 0.5;
        const double sx = (x + p.offset_x + 0.5) / p.scale - 0.5;
        const std::size_t ox = p.flip ? w - 1 - x : x;
        out[(c * h + y) * w + ox] = std::clamp(bilinear_at(plane, h, w, sy, sx), 0.0f, 1.0f);
      }
  }
  return out;
}

/// Transforms every frame of a K×3×H×W buffer with one shared parameter draw.
inline std::pair<std::vector<float>, AugmentParams> augment(std::span<const float> frames, std::size_t h,
                                                            std::size_t w, std::mt19937_64& rng,
                                                            const AugmentConfig& cfg) {
  const auto p = draw_augment(rng, h, w, cfg);
  const std::size_t fs = 3 * h * w;
  std::vector<float> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t * fs < frames.size(); ++t) {
    auto f = apply_augment(frames.subspan(t * fs, fs), h, w, p);
    out.insert(out.end(), f.begin(), f.end());
  }
  return {std::move(out), p};
}

/// Mirror image of a verb: left and right swap, other verbs are unchanged.
inline int flip_verb(int verb) {
  if (verb == kVerbLeft) return kVerbRight;
  if (verb == kVerbRight) return kVerbLeft;
  return verb;
}

// ---------------------------------------------------------------------------
// Batches

/// Pixel standardization applied whenever frames become network input:
/// x' = (x − kPixelMean) / kPixelStd.
inline constexpr double kPixelMean = 0.45;
inline constexpr double kPixelStd = 0.25;

template <class T>
T standardize_pixel(float v) {
  return static_cast<T>((static_cast<double>(v) - kPixelMean) / kPixelStd);
}

template <class T>
struct Batch {
  BasicTensor<T> clips;  // B×K×3×H×W
  ClipLabels labels;
};

struct BatchOptions {
  SamplerConfig sampler;
  bool augment = false;
  AugmentConfig augment_cfg;
};

template <class T>
Batch<T> make_batch(const std::vector<VideoClip>& clips, std::span<const std::size_t> which, const BatchOptions& opt,
                    const ActionVocab& vocab, std::mt19937_64& rng) {
  if (which.empty()) throw std::invalid_argument("make_batch: empty batch");
  const auto& first = clips[which[0]];
  const std::size_t k = opt.sampler.num_frames, h = first.height, w = first.width;
  std::vector<T> data;
  data.reserve(which.size() * k * 3 * h * w);
  Batch<T> b;
  for (auto i : which) {
    const auto& c = clips[i];
    if (c.height != h || c.width != w) throw std::invalid_argument("make_batch: clips differ in frame size");
    auto frames = sample_frames(c, opt.sampler, &rng);
    int verb = c.verb;
    if (opt.augment) {
      auto [aug, params] = augment(frames, h, w, rng, opt.augment_cfg);
      frames = std::move(aug);
      if (params.flip) verb = flip_verb(verb);
    }
    for (float v : frames) data.push_back(standardize_pixel<T>(v));
    b.labels.verb.push_back(verb);
    b.labels.noun.push_back(c.noun);
    b.labels.action.push_back(verb == c.verb ? c.action : vocab.index(verb, c.noun));
  }
  b.clips = BasicTensor<T>(Shape{which.size(), k, 3, h, w}, std::move(data));
  return b;
}

/// Wraps a K×3×H×W frame buffer as a standardized 1×K×3×H×W tensor.
template <class T>
BasicTensor<T> clip_tensor(std::span<const float> frames, std::size_t k, std::size_t h, std::size_t w) {
  std::vector<T> data;
  data.reserve(frames.size());
  for (float v : frames) data.push_back(standardize_pixel<T>(v));
  return BasicTensor<T>(Shape{1, k, 3, h, w}, std::move(data));
}

// ---------------------------------------------------------------------------
// Disk layout

struct ManifestEntry {
  std::string clip_id, path;
  int verb = 0, noun = 0, action = 0;
  Split split = Split::train;
};

inline nlohmann::json to_json(const ManifestEntry& e) {
  return {{"clip_id", e.clip_id}, {"path", e.path}, {"verb", e.verb},
          {"noun", e.noun},       {"action", e.action}, {"split", to_string(e.split)}};
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open manifest " + file.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.clip_id = j.at("clip_id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      e.verb = j.at("verb").get<int>();
      e.noun = j.at("noun").get<int>();
      e.action = j.at("action").get<int>();
      e.split = parse_split(j.at("split").get<std::string>());
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw FormatError(file.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

/// Writes manifest.jsonl and clips/<id>.tensor under `dir`.
inline void write_dataset(const std::filesystem::path& dir, const std::vector<VideoClip>& clips) {
  std::filesystem::create_directories(dir / "clips");
  std::ofstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (const auto& c : clips) {
    const std::string rel = "clips/" + c.clip_id + ".tensor";
    std::ofstream os(dir / rel, std::ios::binary);
    write_tensor_f32(os, Shape{c.frames, 3, c.height, c.width}, c.pixels);
    if (!os) throw std::runtime_error("failed writing " + (dir / rel).string());
    manifest << to_json(ManifestEntry{c.clip_id, rel, c.verb, c.noun, c.action, c.split}).dump() << '\n';
  }
}

inline std::vector<VideoClip> read_dataset(const std::filesystem::path& dir) {
  std::vector<VideoClip> clips;
  for (const auto& e : read_manifest(dir / "manifest.jsonl")) {
    std::ifstream is(dir / e.path, std::ios::binary);
    if (!is) throw std::runtime_error("missing clip file " + (dir / e.path).string());
    auto [shape, values] = read_tensor_f32(is);
    if (shape.size() != 4 || shape[1] != 3) throw FormatError(e.path + ": expected T×3×H×W frames");
    VideoClip c;
    c.clip_id = e.clip_id;
    c.split = e.split;
    c.verb = e.verb;
    c.noun = e.noun;
    c.action = e.action;
    c.frames = shape[0];
    c.height = shape[2];
    c.width = shape[3];
    c.pixels = std::move(values);
    clips.push_back(std::move(c));
  }
  return clips;
}

}  // namespace gsnaco
