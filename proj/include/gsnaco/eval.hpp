#pragma once

// Inference protocols, score files, score-averaging ensembles and
// top-k / macro precision-recall metrics.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsnaco/training.hpp"

namespace gsnaco {

/// Pre-softmax scores of one clip.
struct ScoreRecord {
  std::string clip_id;
  std::vector<double> verb, noun, action;
  bool operator==(const ScoreRecord&) const = default;
};

using ScoreSet = std::vector<ScoreRecord>;

// ---------------------------------------------------------------------------
// Score files: one JSON object per line,
//   {"clip_id": "...", "verb": [...], "noun": [...], "action": [...]}
// with every float printed to 17 significant digits.

namespace detail {

inline void write_vector(std::ostream& os, const std::vector<double>& v, const std::string& clip) {
  os << '[';
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw std::invalid_argument("non-finite score in clip " + clip);
    std::snprintf(buf, sizeof buf, "%.17g", v[i]);
    // "-0" would read back as the integer 0 and lose its sign.
    os << (i ? "," : "") << (v[i] == 0.0 && std::signbit(v[i]) ? "-0.0" : buf);
  }
  os << ']';
}

}  // namespace detail

inline void write_scores(std::ostream& os, const ScoreSet& set) {
  for (const auto& r : set) {
    os << "{\"clip_id\":" << nlohmann::json(r.clip_id).dump() << ",\"verb\":";
    detail::write_vector(os, r.verb, r.clip_id);
    os << ",\"noun\":";
    detail::write_vector(os, r.noun, r.clip_id);
    os << ",\"action\":";
    detail::write_vector(os, r.action, r.clip_id);
    os << "}\n";
  }
}

inline ScoreSet read_scores(std::istream& is, const std::string& source = "scores") {
  ScoreSet out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  std::size_t v = 0, n = 0, a = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    ScoreRecord r;
    try {
      auto j = nlohmann::json::parse(line);
      r.clip_id = j.at("clip_id").get<std::string>();
      r.verb = j.at("verb").get<std::vector<double>>();
      r.noun = j.at("noun").get<std::vector<double>>();
      r.action = j.at("action").get<std::vector<double>>();
    } catch (const std::exception& e) {
      throw FormatError(where + "malformed score record: " + e.what());
    }
    if (!ids.insert(r.clip_id).second) throw FormatError(where + "duplicate clip_id " + r.clip_id);
    if (out.empty()) {
      v = r.verb.size();
      n = r.noun.size();
      a = r.action.size();
    } else if (r.verb.size() != v || r.noun.size() != n || r.action.size() != a) {
      throw FormatError(where + "score vector lengths differ from the first record");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_scores(const std::string& path, const ScoreSet& set) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_scores(os, set);
}

inline ScoreSet read_scores(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open score file " + path);
  return read_scores(is, path);
}

// ---------------------------------------------------------------------------
// Averaging

namespace detail {

// Mean of the values at one position across members. Values are summed in
// ascending order so the result does not depend on member order.
inline double order_free_mean(std::vector<double>& vals) {
  std::sort(vals.begin(), vals.end());
  double s = 0.0;
  for (double x : vals) s += x;
  return s / static_cast<double>(vals.size());
}

inline std::vector<double> mean_vectors(const std::vector<const std::vector<double>*>& vs, const std::string& clip,
                                        const char* task) {
  const std::size_t len = vs[0]->size();
  for (const auto* v : vs) {
    if (v->size() != len) {
      throw std::invalid_argument(std::string("clip ") + clip + ": " + task + " score lengths differ across members");
    }
  }
  std::vector<double> out(len), vals(vs.size());
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t m = 0; m < vs.size(); ++m) vals[m] = (*vs[m])[i];
    out[i] = order_free_mean(vals);
  }
  return out;
}

inline ScoreRecord mean_records(const std::vector<const ScoreRecord*>& rs) {
  ScoreRecord out;
  out.clip_id = rs[0]->clip_id;
  std::vector<const std::vector<double>*> v, n, a;
  for (const auto* r : rs) {
    v.push_back(&r->verb);
    n.push_back(&r->noun);
    a.push_back(&r->action);
  }
  out.verb = mean_vectors(v, out.clip_id, "verb");
  out.noun = mean_vectors(n, out.clip_id, "noun");
  out.action = mean_vectors(a, out.clip_id, "action");
  return out;
}

}  // namespace detail

/// Elementwise mean of two records of the same clip.
inline ScoreRecord average_records(const ScoreRecord& a, const ScoreRecord& b) {
  return detail::mean_records({&a, &b});
}

/// Per clip and task, the elementwise arithmetic mean across members. Output
/// follows the clip order of the first member.
inline ScoreSet ensemble(const std::vector<ScoreSet>& members) {
  if (members.empty()) throw std::invalid_argument("ensemble: no members");
  std::vector<std::map<std::string, const ScoreRecord*>> lookup(members.size());
  for (std::size_t m = 0; m < members.size(); ++m) {
    for (const auto& r : members[m]) {
      if (!lookup[m].emplace(r.clip_id, &r).second) {
        throw std::invalid_argument("ensemble: member " + std::to_string(m) + " repeats clip " + r.clip_id);
      }
    }
    if (members[m].size() != members[0].size()) {
      throw std::invalid_argument("ensemble: member " + std::to_string(m) + " covers " +
                                  std::to_string(members[m].size()) + " clips, member 0 covers " +
                                  std::to_string(members[0].size()));
    }
  }
  ScoreSet out;
  out.reserve(members[0].size());
  for (const auto& r : members[0]) {
    std::vector<const ScoreRecord*> rs;
    for (std::size_t m = 0; m < members.size(); ++m) {
      auto it = lookup[m].find(r.clip_id);
      if (it == lookup[m].end()) {
        throw std::invalid_argument("ensemble: clip " + r.clip_id + " missing from member " + std::to_string(m));
      }
      rs.push_back(it->second);
    }
    out.push_back(detail::mean_records(rs));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference

template <class T>
ScoreRecord to_record(const std::string& clip_id, const Scores<T>& s) {
  auto row = [](const BasicTensor<T>& t) {
    if (t.size(0) != 1) throw ShapeError("to_record: expected a single-clip batch");
    return std::vector<double>(t.values().begin(), t.values().end());
  };
  return {clip_id, row(s.verb), row(s.noun), row(s.action)};
}

struct InferOptions {
  SamplerConfig sampler{16, SampleMode::center_per_segment};
  bool two_clip = true;
  bool fully_conv = false;
  std::size_t short_side = 0;  // 0: keep the stored resolution
};

/// Presets of the full-scale recipes for the fully-convolutional short side.
inline constexpr std::size_t kShortSideBnInception = 256;
inline constexpr std::size_t kShortSideInceptionV3 = 261;

/// Rescales the frames so that min(H, W) == short_side, preserving aspect.
inline std::vector<float> rescale_short_side(std::span<const float> frames, std::size_t k, std::size_t h, std::size_t w,
                                             std::size_t short_side, std::size_t& out_h, std::size_t& out_w) {
  const double f = static_cast<double>(short_side) / static_cast<double>(std::min(h, w));
  out_h = h <= w ? short_side : static_cast<std::size_t>(std::lround(h * f));
  out_w = w < h ? short_side : static_cast<std::size_t>(std::lround(w * f));
  if (out_h == h && out_w == w) return {frames.begin(), frames.end()};
  std::vector<float> out;
  out.reserve(k * 3 * out_h * out_w);
  for (std::size_t t = 0; t < k; ++t) {
    auto r = resize_bilinear(frames.subspan(t * 3 * h * w, 3 * h * w), 3, h, w, out_h, out_w);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

/// Scores a K×3×H×W frame buffer with the classifier applied at every
/// position of the final feature map, after rescaling to `short_side`.
template <class T>
ScoreRecord fully_conv_infer(const VideoModel<T>& model, const std::string& clip_id, std::span<const float> frames,
                             std::size_t k, std::size_t h, std::size_t w, std::size_t short_side) {
  if (short_side == 0) short_side = std::min(h, w);
  if (short_side < model.min_input_side()) {
    throw std::invalid_argument("fully_conv_infer: short side " + std::to_string(short_side) +
                                " is below the network minimum " + std::to_string(model.min_input_side()));
  }
  std::size_t oh = 0, ow = 0;
  auto scaled = rescale_short_side(frames, k, h, w, short_side, oh, ow);
  NoGradGuard guard;
  return to_record(clip_id, model.forward_fully_conv(clip_tensor<T>(scaled, k, oh, ow)));
}

/// Standard (non fully-convolutional) evaluation-mode forward of one clip.
template <class T>
ScoreRecord standard_infer(const VideoModel<T>& model, const std::string& clip_id, std::span<const float> frames,
                           std::size_t k, std::size_t h, std::size_t w) {
  NoGradGuard guard;
  return to_record(clip_id, model.forward(clip_tensor<T>(frames, k, h, w), {}));
}

template <class T>
ScoreRecord score_frames(const VideoModel<T>& model, const std::string& clip_id, std::span<const float> frames,
                         std::size_t h, std::size_t w, const InferOptions& opt) {
  const std::size_t k = opt.sampler.num_frames;
  if (opt.fully_conv) return fully_conv_infer(model, clip_id, frames, k, h, w, opt.short_side);
  return standard_infer(model, clip_id, frames, k, h, w);
}

/// Two deterministic clips, segment-centre sampled over the first and second
/// temporal halves of the video; their scores are averaged elementwise.
template <class T>
ScoreRecord two_clip_infer(const VideoModel<T>& model, const VideoClip& video, const InferOptions& opt) {
  const std::size_t half = video.frames / 2;
  if (half < opt.sampler.num_frames) {
    throw std::invalid_argument("two_clip_infer: video " + video.clip_id + " has " + std::to_string(video.frames) +
                                " frames, too short for two clips of " + std::to_string(opt.sampler.num_frames));
  }
  SamplerConfig centre{opt.sampler.num_frames, SampleMode::center_per_segment};
  auto first = sample_frames(video, centre, nullptr, 0, half);
  auto second = sample_frames(video, centre, nullptr, half, video.frames - half);
  return average_records(score_frames(model, video.clip_id, first, video.height, video.width, opt),
                         score_frames(model, video.clip_id, second, video.height, video.width, opt));
}

template <class T>
ScoreRecord infer_clip(const VideoModel<T>& model, const VideoClip& video, const InferOptions& opt) {
  if (opt.two_clip) return two_clip_infer(model, video, opt);
  SamplerConfig centre{opt.sampler.num_frames, SampleMode::center_per_segment};
  auto frames = sample_frames(video, centre, nullptr);
  return score_frames(model, video.clip_id, frames, video.height, video.width, opt);
}

template <class T>
ScoreSet infer_split(const VideoModel<T>& model, const std::vector<VideoClip>& clips, Split split,
                     const InferOptions& opt) {
  ScoreSet out;
  for (const auto& c : clips)
    if (c.split == split) out.push_back(infer_clip(model, c, opt));
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

struct TaskMetrics {
  double top1 = 0, top5 = 0, precision = 0, recall = 0;  // percentages
  bool operator==(const TaskMetrics&) const = default;
};

struct MetricsReport {
  std::string split;
  std::size_t clips = 0;
  TaskMetrics verb, noun, action;
};

struct LabelTriple {
  int verb = 0, noun = 0, action = 0;
};

/// Rank of the true class: classes with a higher score, plus classes with an
/// equal score and a lower index, come first.
inline std::size_t rank_of(const std::vector<double>& scores, std::size_t truth) {
  std::size_t r = 0;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > scores[truth] || (scores[j] == scores[truth] && j < truth)) ++r;
  return r;
}

/// Top-1/top-5 accuracy and macro precision/recall. The macro mean runs over
/// classes present in the ground truth; a class never predicted has
/// precision 0.
inline TaskMetrics task_metrics(const std::vector<const std::vector<double>*>& scores, const std::vector<int>& truth) {
  TaskMetrics m;
  const std::size_t n = truth.size();
  if (n == 0) return m;
  const std::size_t k = scores[0]->size();
  std::vector<std::size_t> tp(k, 0), predicted(k, 0), actual(k, 0);
  std::size_t hit1 = 0, hit5 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = *scores[i];
    if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= s.size()) {
      throw std::out_of_range("label " + std::to_string(truth[i]) + " outside score vector of length " +
                              std::to_string(s.size()));
    }
    const std::size_t t = static_cast<std::size_t>(truth[i]);
    const std::size_t r = rank_of(s, t);
    hit1 += r < 1;
    hit5 += r < 5;
    const std::size_t pred = argmax<double>(s);
    ++predicted[pred];
    ++actual[t];
    if (pred == t) ++tp[t];
  }
  m.top1 = 100.0 * static_cast<double>(hit1) / static_cast<double>(n);
  m.top5 = 100.0 * static_cast<double>(hit5) / static_cast<double>(n);
  double psum = 0, rsum = 0;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (actual[c] == 0) continue;
    ++classes;
    psum += predicted[c] ? 100.0 * static_cast<double>(tp[c]) / static_cast<double>(predicted[c]) : 0.0;
    rsum += 100.0 * static_cast<double>(tp[c]) / static_cast<double>(actual[c]);
  }
  m.precision = psum / static_cast<double>(classes);
  m.recall = rsum / static_cast<double>(classes);
  return m;
}

inline MetricsReport compute_metrics(const ScoreSet& records, const std::map<std::string, LabelTriple>& labels,
                                     const std::string& split = "") {
  MetricsReport rep;
  rep.split = split;
  rep.clips = records.size();
  std::vector<const std::vector<double>*> v, n, a;
  std::vector<int> tv, tn, ta;
  for (const auto& r : records) {
    auto it = labels.find(r.clip_id);
    if (it == labels.end()) throw std::invalid_argument("compute_metrics: no label for clip " + r.clip_id);
    v.push_back(&r.verb);
    n.push_back(&r.noun);
    a.push_back(&r.action);
    tv.push_back(it->second.verb);
    tn.push_back(it->second.noun);
    ta.push_back(it->second.action);
  }
  rep.verb = task_metrics(v, tv);
  rep.noun = task_metrics(n, tn);
  rep.action = task_metrics(a, ta);
  return rep;
}

inline std::map<std::string, LabelTriple> labels_of(const std::vector<VideoClip>& clips) {
  std::map<std::string, LabelTriple> out;
  for (const auto& c : clips) out[c.clip_id] = {c.verb, c.noun, c.action};
  return out;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  auto task = [](const TaskMetrics& m) {
    return nlohmann::json{{"top1", m.top1}, {"top5", m.top5}, {"precision", m.precision}, {"recall", m.recall}};
  };
  return {{"split", r.split}, {"clips", r.clips}, {"verb", task(r.verb)}, {"noun", task(r.noun)},
          {"action", task(r.action)}};
}

/// Rows grouped by split, columns Top-1 / Top-5 / Precision / Recall, each
/// split into Verb / Noun / Action.
inline std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream os;
  const std::array<const char*, 4> groups{"Top-1 Accuracy (%)", "Top-5 Accuracy (%)", "Precision (%)", "Recall (%)"};
  os << std::left << std::setw(8) << "Split" << std::setw(16) << "Method";
  for (const char* g : groups) os << "| " << std::setw(22) << g;
  os << '\n' << std::setw(8) << "" << std::setw(16) << "";
  for (std::size_t i = 0; i < groups.size(); ++i) os << "| " << std::setw(7) << "Verb" << std::setw(7) << "Noun" << std::setw(8) << "Action";
  os << '\n' << std::string(8 + 16 + 4 * 24, '-') << '\n';
  std::string last_split;
  for (const auto& [method, r] : rows) {
    os << std::setw(8) << (r.split == last_split ? "" : r.split) << std::setw(16) << method;
    last_split = r.split;
    auto cell = [&](double v, int width) {
      std::ostringstream c;
      c << std::fixed << std::setprecision(2) << v;
      os << std::setw(width) << c.str();
    };
    const std::array<double TaskMetrics::*, 4> fields{&TaskMetrics::top1, &TaskMetrics::top5, &TaskMetrics::precision,
                                                      &TaskMetrics::recall};
    for (auto f : fields) {
      os << "| ";
      cell(r.verb.*f, 7);
      cell(r.noun.*f, 7);
      cell(r.action.*f, 8);
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace gsnaco
