// gsnaco command-line tool: synth, train, infer, ensemble, eval, gradcheck.
//
// Exit codes: 0 success, 2 invalid input or configuration, 3 non-finite
// loss during training, 1 any other failure (including failed gradchecks).

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "gsnaco/gsnaco.hpp"

namespace fs = std::filesystem;
using namespace gsnaco;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitInvalid = 2;
constexpr int kExitNumeric = 3;

void apply_thread_override() {
  const char* env = std::getenv("GSNACO_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw std::invalid_argument(std::string("GSNACO_THREADS must be a positive integer, got '") + env + "'");
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
}

bool non_empty_dir(const fs::path& p) { return fs::exists(p) && (!fs::is_directory(p) || !fs::is_empty(p)); }

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::uint64_t seed = 0;
  std::size_t n = 500;
  std::string out;
  bool force = false;
  SynthConfig cfg;
};

int cmd_synth(const SynthArgs& a) {
  if (non_empty_dir(a.out) && !a.force) {
    throw std::invalid_argument("output directory " + a.out + " is not empty (use --force to overwrite)");
  }
  auto clips = generate_synthetic(a.seed, a.n, a.cfg);
  if (a.force) {
    fs::remove(fs::path(a.out) / "manifest.jsonl");
    fs::remove_all(fs::path(a.out) / "clips");
  }
  write_dataset(a.out, clips);
  std::size_t tr = 0, s1 = 0, s2 = 0;
  for (const auto& c : clips) (c.split == Split::train ? tr : c.split == Split::test_s1 ? s1 : s2)++;
  std::printf("wrote %zu clips to %s\n", clips.size(), a.out.c_str());
  std::printf("  train   %zu\n  test_s1 %zu\n  test_s2 %zu\n", tr, s1, s2);
  const auto b = label_balance(clips, a.cfg.verbs, a.cfg.nouns);
  std::printf("label balance: %zu..%zu clips per (verb, noun) pair, uniform %.2f, max deviation %.1f%%\n",
              b.min_count, b.max_count, b.expected, 100.0 * b.max_deviation);
  return 0;
}

// ---------------------------------------------------------------------------
// train

void check_labels(const std::vector<VideoClip>& clips, const VocabSizes& v, const std::string& what) {
  for (const auto& c : clips) {
    if (c.verb < 0 || c.noun < 0 || c.action < 0 || static_cast<std::size_t>(c.verb) >= v.verbs ||
        static_cast<std::size_t>(c.noun) >= v.nouns || static_cast<std::size_t>(c.action) >= v.actions) {
      throw std::invalid_argument("vocabulary mismatch: clip " + c.clip_id + " has labels (" + std::to_string(c.verb) +
                                  ", " + std::to_string(c.noun) + ", " + std::to_string(c.action) + ") but the " +
                                  what + " has sizes (" + std::to_string(v.verbs) + ", " + std::to_string(v.nouns) +
                                  ", " + std::to_string(v.actions) + ")");
    }
  }
}

std::string checkpoint_name(int stage, std::size_t epoch) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "stage%d_epoch%03zu.ckpt", stage, epoch);
  return buf;
}

template <class T>
int train_impl(const RunConfig& cfg, const std::vector<VideoClip>& clips, const fs::path& out) {
  auto model = build_model<T>(cfg);
  std::mt19937_64 rng(cfg.seed);
  const auto train = indices_of(clips, Split::train);
  const auto opt = train_options(cfg);
  std::ofstream log(out / "train_log.jsonl");
  auto on_epoch = [&](const EpochLog& e) {
    log << to_json(e).dump() << '\n';
    log.flush();
    std::printf("stage %d epoch %3zu  lr %.6f  loss %.4f  verb %.1f  noun %.1f  action %.1f\n", e.stage, e.epoch + 1,
                e.lr, e.loss, e.verb_acc, e.noun_acc, e.action_acc);
    std::fflush(stdout);
    return false;
  };
  fs::path final_ckpt;
  if (cfg.family == "gsn") {
    StagePlan plan = gsn_plan(cfg.stages[0].epochs, cfg.stages[0].base_lr);
    plan.schedule.warmup_epochs = cfg.stages[0].warmup;
    run_stage<T>(*model, clips, train, plan, opt, rng, on_epoch);
    final_ckpt = out / checkpoint_name(1, plan.schedule.total_epochs);
    save_checkpoint(final_ckpt.string(), model->parameters());
  } else {
    auto& ego = dynamic_cast<EgoAcoModel<T>&>(*model);
    ThreeStageConfig tc;
    for (std::size_t s = 0; s < 3; ++s) {
      tc.epochs[s] = cfg.stages[s].epochs;
      tc.base_lr[s] = cfg.stages[s].base_lr;
      tc.warmup[s] = cfg.stages[s].warmup;
    }
    three_stage_protocol<T>(
        ego, clips, train, tc, opt, rng,
        [&](const StagePlan& plan, const std::vector<EpochLog>&, const VideoModel<T>& m) {
          final_ckpt = out / checkpoint_name(plan.stage, plan.schedule.total_epochs);
          save_checkpoint(final_ckpt.string(), m.parameters());
        },
        on_epoch);
  }
  fs::copy_file(final_ckpt, out / "final.ckpt", fs::copy_options::overwrite_existing);
  std::printf("final checkpoint %s\n", final_ckpt.string().c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out, const std::string& data_override) {
  RunConfig cfg = load_config(config_path);
  if (!data_override.empty()) cfg.data_dir = data_override;
  if (cfg.data_dir.empty()) throw ConfigError({"config.data: no dataset directory (set it or pass --data)"});
  auto clips = read_dataset(cfg.data_dir);
  check_labels(clips, cfg.vocab, "configured model");
  if (indices_of(clips, Split::train).empty()) throw std::invalid_argument("dataset has no training clips");
  for (const auto& c : clips) {
    if (c.frames < cfg.train_frames) {
      throw std::invalid_argument("clip " + c.clip_id + " has " + std::to_string(c.frames) +
                                  " frames, fewer than sampler.train_frames");
    }
  }
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "config.json") << to_json(cfg).dump(2) << '\n';
  return cfg.float64 ? train_impl<double>(cfg, clips, out) : train_impl<float>(cfg, clips, out);
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
  std::string checkpoint, config, data, split = "test_s1", out;
  std::string two_clip;  // "", "on", "off"
  bool fully_conv = false;
  std::size_t short_side = 0;
};

template <class T>
int infer_impl(const RunConfig& cfg, const InferArgs& a, const std::vector<VideoClip>& clips, Split split) {
  auto model = build_model<T>(cfg);
  load_checkpoint(a.checkpoint, model->parameters());
  auto opt = infer_options(cfg);
  if (a.two_clip == "on") opt.two_clip = true;
  if (a.two_clip == "off") opt.two_clip = false;
  if (a.fully_conv) opt.fully_conv = true;
  if (a.short_side) opt.short_side = a.short_side;
  auto scores = infer_split(*model, clips, split, opt);
  write_scores(a.out, scores);
  std::printf("wrote %zu score records to %s\n", scores.size(), a.out.c_str());
  return 0;
}

int cmd_infer(const InferArgs& a) {
  const std::string cfg_path =
      a.config.empty() ? (fs::path(a.checkpoint).parent_path() / "config.json").string() : a.config;
  RunConfig cfg = load_config(cfg_path);
  const Split split = parse_split(a.split);
  const std::string data = a.data.empty() ? cfg.data_dir : a.data;
  if (data.empty()) throw ConfigError({"no dataset directory (set config.data or pass --data)"});
  auto clips = read_dataset(data);
  check_labels(clips, cfg.vocab, "checkpoint's model");
  return cfg.float64 ? infer_impl<double>(cfg, a, clips, split) : infer_impl<float>(cfg, a, clips, split);
}

// ---------------------------------------------------------------------------
// ensemble / eval

int cmd_ensemble(const std::vector<std::string>& files, const std::string& out) {
  std::vector<ScoreSet> members;
  for (const auto& f : files) members.push_back(read_scores(f));
  auto merged = ensemble(members);
  write_scores(out, merged);
  std::printf("averaged %zu score files over %zu clips into %s\n", files.size(), merged.size(), out.c_str());
  return 0;
}

int cmd_eval(const std::vector<std::string>& files, const std::string& data, const std::vector<std::string>& splits,
             const std::string& json_out) {
  auto clips = read_dataset(data);
  const auto labels = labels_of(clips);
  std::map<std::string, Split> split_of;
  for (const auto& c : clips) split_of[c.clip_id] = c.split;
  std::vector<std::pair<std::string, MetricsReport>> rows;
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& s : splits) {
    const Split split = parse_split(s);
    for (const auto& f : files) {
      ScoreSet subset;
      for (auto& r : read_scores(f)) {
        auto it = split_of.find(r.clip_id);
        if (it == split_of.end()) throw std::invalid_argument(f + ": clip " + r.clip_id + " is not in the manifest");
        if (it->second == split) subset.push_back(std::move(r));
      }
      if (subset.empty()) throw std::invalid_argument(f + ": no clips of split " + s);
      auto rep = compute_metrics(subset, labels, s);
      auto j = to_json(rep);
      j["scores"] = f;
      doc.push_back(j);
      rows.emplace_back(fs::path(f).stem().string(), rep);
    }
  }
  std::cout << format_metrics_table(rows);
  if (!json_out.empty()) std::ofstream(json_out) << doc.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const std::string& family, std::uint64_t seed, const std::string& corrupt) {
  detail::corrupted_adjoint_op() = corrupt;
  const auto results = run_gradcheck_suite(family, seed);
  bool ok = true;
  double total = 0;
  for (const auto& r : results) {
    std::printf("%-4s %-22s checked %4zu  skipped %2zu  max rel err %.3e  %.2fs\n", r.passed ? "ok" : "FAIL",
                r.name.c_str(), r.checked, r.skipped, r.max_rel_error, r.seconds);
    ok = ok && r.passed;
    total += r.seconds;
  }
  std::printf("%zu checks, %s, %.2fs\n", results.size(), ok ? "all passed" : "FAILURES", total);
  return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gate-Shift Networks and EgoACO at desk scale"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic video dataset");
  synth->add_option("--seed", sa.seed, "generator seed");
  synth->add_option("--n", sa.n, "number of clips")->check(CLI::PositiveNumber);
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_flag("--force", sa.force, "overwrite a non-empty output directory");
  synth->add_option("--frames", sa.cfg.frames, "raw frames per clip");
  synth->add_option("--test-s1-fraction", sa.cfg.test_s1_fraction, "fraction of clips in test_s1");
  synth->add_option("--test-s2-fraction", sa.cfg.test_s2_fraction, "fraction of clips in test_s2");

  std::string config_path, train_out, train_data;
  auto* train = app.add_subcommand("train", "train a model from a run configuration");
  train->add_option("--config", config_path, "run configuration (JSON)")->required();
  train->add_option("--out", train_out, "run directory for checkpoints and logs")->required();
  train->add_option("--data", train_data, "dataset directory (overrides config.data)");

  InferArgs ia;
  auto* infer = app.add_subcommand("infer", "score the clips of one split");
  infer->add_option("--checkpoint", ia.checkpoint, "checkpoint file")->required();
  infer->add_option("--config", ia.config, "run configuration (default: config.json next to the checkpoint)");
  infer->add_option("--data", ia.data, "dataset directory (overrides config.data)");
  infer->add_option("--split", ia.split, "train, test_s1 or test_s2");
  infer->add_option("--two-clip", ia.two_clip, "average two clips (on/off, default from config)")
      ->check(CLI::IsMember({"on", "off"}));
  infer->add_flag("--fully-conv", ia.fully_conv, "spatially fully-convolutional inference");
  infer->add_option("--short-side", ia.short_side, "rescale frames so the shorter side has this length");
  infer->add_option("--out", ia.out, "score file to write")->required();

  std::vector<std::string> ens_files;
  std::string ens_out;
  auto* ens = app.add_subcommand("ensemble", "average the scores of several models");
  ens->add_option("--scores", ens_files, "score files")->required()->expected(1, -1);
  ens->add_option("--out", ens_out, "averaged score file")->required();

  std::vector<std::string> eval_files, eval_splits{"test_s1"};
  std::string eval_data, eval_json;
  auto* eval = app.add_subcommand("eval", "top-k accuracy and macro precision/recall");
  eval->add_option("--scores", eval_files, "score files, one table row each")->required()->expected(1, -1);
  eval->add_option("--data,--manifest", eval_data, "dataset directory holding manifest.jsonl")->required();
  eval->add_option("--split", eval_splits, "splits to report")->expected(1, -1);
  eval->add_option("--json", eval_json, "also write the report as JSON");

  std::string gc_family = "all", gc_corrupt;
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--family", gc_family, "all, layers, gsn, egoaco or gsn+egoaco")
      ->check(CLI::IsMember({"all", "layers", "gsn", "egoaco", "gsn+egoaco"}));
  gc->add_option("--seed", gc_seed, "seed for inputs and probed entries");
  gc->add_option("--corrupt-adjoint", gc_corrupt, "test hook: perturb the adjoint of the named op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    apply_thread_override();
    if (*synth) return cmd_synth(sa);
    if (*train) return cmd_train(config_path, train_out, train_data);
    if (*infer) return cmd_infer(ia);
    if (*ens) return cmd_ensemble(ens_files, ens_out);
    if (*eval) return cmd_eval(eval_files, eval_data, eval_splits, eval_json);
    if (*gc) return cmd_gradcheck(gc_family, gc_seed, gc_corrupt);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::out_of_range& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
