#include "cli.hpp"

#include "config.hpp"

#include "martvae/checkpoint.hpp"
#include "martvae/classifier.hpp"
#include "martvae/errors.hpp"
#include "martvae/evaluation.hpp"
#include "martvae/preprocess.hpp"
#include "martvae/sequence_io.hpp"
#include "martvae/synthetic.hpp"
#include "martvae/training.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#ifndef MARTVAE_VERSION
#define MARTVAE_VERSION "0.0.0"
#endif

namespace martvae::cli {
namespace fs = std::filesystem;

namespace {

/// Accumulates what a command read and wrote; written next to every output.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  json config = json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  json results = json::object();
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  json to_json() const {
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return {{"tool", "martvae"},  {"version", MARTVAE_VERSION}, {"command", command}, {"argv", argv},
            {"seed", seed},       {"config", config},          {"inputs", inputs},   {"outputs", outputs},
            {"results", results}, {"wall_time_ms", ms}};
  }

  void write() const {
    const std::string text = to_json().dump(2) + "\n";
    for (const auto& out : outputs) write_file_atomic(manifest_path(out), text);
  }

  static fs::path manifest_path(const fs::path& output) {
    fs::path p = output;
    if (!p.has_filename()) p = p.parent_path();
    return p.string() + ".manifest.json";
  }
};

struct Common {
  std::uint64_t seed = 0;
  std::string config_path;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool out_required) {
  sub->add_option("--seed", c.seed, "Seed for every random draw");
  sub->add_option("--config", c.config_path, "JSON file overriding defaults")->check(CLI::ExistingFile);
  auto* o = sub->add_option("--out", c.out, "Output path");
  if (out_required) o->required();
}

json config_or_empty(const Common& c) { return c.config_path.empty() ? json::object() : load_config(c.config_path); }

const json& section(const json& doc, const char* name) {
  static const json null_json;
  return doc.contains(name) ? doc.at(name) : null_json;
}

std::vector<int> parse_int_list(const std::string& text, const char* flag) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int v = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size())
      throw CLI::ValidationError(flag, "expected a comma-separated integer list, got '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw CLI::ValidationError(flag, "empty list");
  return out;
}

std::string replace_extension(const std::string& path, const std::string& ext) {
  return fs::path(path).replace_extension(ext).string();
}

// ---- synth-data ----

struct SynthArgs {
  Common common;
  int num_sequences = -1;
  std::string fixed_actions;
  std::string frames;
};

int cmd_synth(const SynthArgs& a, RunManifest& m, std::ostream& out) {
  const json doc = config_or_empty(a.common);
  SyntheticDatasetConfig cfg;
  apply(section(doc, "synthetic"), cfg);
  cfg.seed = a.common.seed;
  if (a.num_sequences >= 0) cfg.num_sequences = a.num_sequences;
  cfg.validate();
  std::vector<PoseSequence> data;
  if (a.fixed_actions.empty() != a.frames.empty())
    throw CLI::ValidationError("--fixed-actions/--frames", "must be given together");
  if (a.fixed_actions.empty()) {
    data = make_synthetic_dataset(cfg);
  } else {
    for (int k : parse_int_list(a.fixed_actions, "--fixed-actions"))
      for (int T : parse_int_list(a.frames, "--frames")) {
        SyntheticDatasetConfig c = cfg;
        c.seed = cfg.seed ^ (static_cast<std::uint64_t>(k) << 32 | static_cast<std::uint64_t>(T));
        auto part = make_fixed_length_dataset(c, k, T);
        data.insert(data.end(), part.begin(), part.end());
      }
  }
  write_dataset(data, a.common.out);
  m.config["synthetic"] = to_json(cfg);
  m.outputs.push_back(a.common.out);
  m.results["sequences"] = data.size();
  out << "wrote " << data.size() << " sequences to " << a.common.out << "\n";
  return kExitOk;
}

// ---- preprocess ----

struct PreprocessArgs {
  Common common;
  std::string data, keypoints, camera;
  double head_scale = 0.0;
  std::string head_neck;
};

int cmd_preprocess(const PreprocessArgs& a, RunManifest& m, std::ostream& out) {
  const json doc = config_or_empty(a.common);
  FilterParams params;
  apply(section(doc, "filter"), params);
  params.validate();
  if ((a.head_scale > 0.0) == !a.head_neck.empty())
    throw CLI::ValidationError("--head-scale/--head-neck", "give exactly one of them");
  std::optional<std::pair<int, int>> head_neck;
  if (!a.head_neck.empty()) {
    const auto hn = parse_int_list(a.head_neck, "--head-neck");
    if (hn.size() != 2) throw CLI::ValidationError("--head-neck", "expected two joint indices");
    head_neck = std::make_pair(hn[0], hn[1]);
  }
  const Camera camera = read_camera(a.camera);
  m.inputs = {a.data, a.keypoints, a.camera};

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.data))
    if (e.path().extension() == ".json" && e.path().filename().string().find(".manifest") == std::string::npos)
      files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<PoseSequence> kept;
  long total_frames = 0, bad_frames = 0, discarded = 0;
  for (const auto& file : files) {
    const PoseSequence seq = read_sequence(file);
    const auto kp = read_keypoints(fs::path(a.keypoints) / file.filename());
    if (static_cast<int>(kp.size()) != seq.num_frames())
      throw InputError(file.filename().string() + ": keypoint file has " + std::to_string(kp.size()) +
                       " frames, sequence has " + std::to_string(seq.num_frames()));
    std::vector<bool> bad(static_cast<std::size_t>(seq.num_frames()));
    for (int t = 0; t < seq.num_frames(); ++t) {
      const HeadScale s = head_neck ? head_scale_from_keypoints(kp[static_cast<std::size_t>(t)], head_neck->first,
                                                                head_neck->second)
                                    : HeadScale{a.head_scale};
      bad[static_cast<std::size_t>(t)] =
          flag_bad_frame(frame_as_joints(seq, t), kp[static_cast<std::size_t>(t)], camera, s, params).is_bad;
    }
    const auto split = split_on_mask_detailed(seq, bad, params.min_subsequence_len);
    total_frames += seq.num_frames();
    bad_frames += std::count(bad.begin(), bad.end(), true);
    discarded += split.discarded_frames;
    kept.insert(kept.end(), split.kept.begin(), split.kept.end());
  }
  if (kept.empty()) throw InputError("preprocess: no subsequence of at least " +
                                     std::to_string(params.min_subsequence_len) + " good frames survived");
  write_dataset(kept, a.common.out);
  const auto weights = balanced_weights(kept);
  std::string csv = "file,weight\n";
  for (std::size_t i = 0; i < weights.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "seq_%05zu.json", i);
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, weights[i]);
    csv += std::string(name) + "," + std::string(buf, res.ptr) + "\n";
  }
  const std::string weights_path = (fs::path(a.common.out) / "weights.csv").string();
  write_file_atomic(weights_path, csv);
  m.config["filter"] = to_json(params);
  m.config["head_scale"] = a.head_scale;
  m.config["head_neck"] = a.head_neck;
  m.outputs = {a.common.out};
  m.results = {{"input_frames", total_frames}, {"bad_frames", bad_frames}, {"discarded_frames", discarded},
               {"sequences", kept.size()}};
  out << "frames " << total_frames << ", bad " << bad_frames << ", discarded " << discarded << ", kept "
      << kept.size() << " subsequences\n";
  return kExitOk;
}

// ---- train ----

struct TrainArgs {
  Common common;
  std::string data;
  std::string variant;
  int epochs = -1;
  double kl_weight = -1.0;
  double lr = -1.0;
  int batch_size = -1;
  std::string log;
  std::string target = "model";
  bool balanced = false;
};

int cmd_train(const TrainArgs& a, RunManifest& m, std::ostream& out) {
  const json doc = config_or_empty(a.common);
  const auto data = read_dataset(a.data);
  if (data.empty()) throw InputError(a.data + ": no sequences found");
  m.inputs = {a.data};

  if (a.target == "classifier") {
    ClassifierConfig cc;
    apply(section(doc, "classifier"), cc);
    cc.seed = a.common.seed;
    if (a.epochs > 0) cc.epochs = a.epochs;
    int classes = 0;
    for (const auto& s : data)
      for (int l : s.script.labels()) classes = std::max(classes, l + 1);
    if (doc.contains("model") && doc["model"].contains("num_actions")) classes = doc["model"]["num_actions"].get<int>();
    ClassifierReport report;
    auto clf = train_classifier(data, classes, cc, &report);
    clf.save(a.common.out);
    m.config["classifier"] = to_json(cc);
    m.outputs = {a.common.out};
    m.results = {{"holdout_accuracy", report.holdout_accuracy},
                 {"train_segments", report.train_segments},
                 {"holdout_segments", report.holdout_segments}};
    out << "classifier held-out accuracy " << report.holdout_accuracy << " over " << report.holdout_segments
        << " segments\n";
    return kExitOk;
  }

  ModelConfig cfg;
  cfg.pose_dim = data.front().pose_dim();
  cfg.joints = data.front().skeleton.joints;
  cfg.fps = data.front().skeleton.fps;
  apply(section(doc, "model"), cfg);
  if (!a.variant.empty()) {
    const auto [variant, slots] = parse_variant(a.variant);
    cfg.variant = variant;
    cfg.baseline_slots = slots;
  }
  TrainConfig tc;
  LossWeights w;
  apply(section(doc, "train"), tc);
  apply(section(doc, "loss"), w);
  tc.seed = a.common.seed;
  if (a.epochs > 0) tc.epochs = a.epochs;
  if (a.kl_weight >= 0.0) w.kl_weight = a.kl_weight;
  if (a.lr > 0.0) tc.learning_rate = a.lr;
  if (a.batch_size > 0) tc.batch_size = a.batch_size;
  if (a.balanced) tc.balanced_sampling = true;
  cfg.validate();
  tc.validate();
  w.validate();

  ModelParams params = ModelParams::init(cfg, a.common.seed);
  const std::string log_path = a.log.empty() ? a.common.out + ".log.csv" : a.log;
  std::string log = training_log_header() + "\n";
  StepLosses last;
  train_model(params, cfg, data, tc, w, [&](const StepRecord& r) {
    log += training_log_row(r) + "\n";
    last = r.losses;
  });
  save_checkpoint(cfg, params, a.common.out);
  write_file_atomic(log_path, log);
  m.config["model"] = to_json(cfg);
  m.config["train"] = to_json(tc);
  m.config["loss"] = to_json(w);
  m.outputs = {a.common.out, log_path};
  m.results = {{"final_reconstruction", last.reconstruction}, {"final_kl", last.kl}, {"final_total", last.total}};
  out << "trained " << variant_name(cfg.variant, cfg.baseline_slots) << " (" << params.parameter_count()
      << " parameters); final recon " << last.reconstruction << ", kl " << last.kl << "\n";
  return kExitOk;
}

// ---- generate ----

struct GenerateArgs {
  Common common;
  std::string model;
  std::string actions;
  int frames = 0;
};

int cmd_generate(const GenerateArgs& a, RunManifest& m, std::ostream& out) {
  const auto labels = parse_int_list(a.actions, "--actions");
  Checkpoint ck = load_checkpoint(a.model);
  for (int l : labels)
    if (l < 0 || l >= ck.config.num_actions)
      throw InputError("--actions: label " + std::to_string(l) + " is not in the model's vocabulary of " +
                       std::to_string(ck.config.num_actions) + " actions");
  if (a.frames < static_cast<int>(labels.size()))
    throw InputError("--frames must be at least the number of actions");
  std::mt19937_64 rng(a.common.seed);
  const PoseSequence seq = generate(ck.params, ck.config, labels, a.frames, rng);
  write_sequence(seq, a.common.out);
  m.inputs = {a.model};
  m.outputs = {a.common.out};
  m.config = {{"actions", labels}, {"frames", a.frames}};
  out << "generated " << a.frames << " frames for " << labels.size() << " action(s)\n";
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  Common common;
  std::string model, classifier, gt;
  int num_samples = -1;
  int repeats = -1;
  std::string lengths, actions;
};

int cmd_eval(const EvalArgs& a, RunManifest& m, std::ostream& out, std::ostream& err) {
  const json doc = config_or_empty(a.common);
  EvalConfig ec;
  apply(section(doc, "eval"), ec);
  ec.seed = a.common.seed;
  if (a.num_samples > 0) ec.num_samples = a.num_samples;
  if (a.repeats > 0) ec.repeats = a.repeats;
  if (!a.lengths.empty()) ec.lengths = parse_int_list(a.lengths, "--lengths");
  if (!a.actions.empty()) ec.actions_per_sequence = parse_int_list(a.actions, "--actions-per-seq");
  ec.validate();

  Checkpoint ck = load_checkpoint(a.model);
  const SequenceClassifier clf = SequenceClassifier::load(a.classifier);
  const auto gt = read_dataset(a.gt);
  const EvalResult result = evaluate_model(ck.params, ck.config, clf, gt, ec);
  for (const auto& w : result.warnings) err << "warning: " << w << "\n";

  const std::string csv_path = replace_extension(a.common.out, ".csv");
  const std::string rows_path = replace_extension(a.common.out, ".results.csv");
  write_file_atomic(a.common.out, result.report.to_json());
  write_file_atomic(csv_path, result.report.to_csv());
  write_file_atomic(rows_path, eval_rows_csv(result.rows));
  m.inputs = {a.model, a.classifier, a.gt};
  m.outputs = {a.common.out, csv_path, rows_path};
  m.config["eval"] = to_json(ec);
  out << result.report.to_csv();
  return kExitOk;
}

// ---- plot-data ----

struct PlotArgs {
  Common common;
  std::string results;
  std::string x = "frames";
  std::string metric;
  std::vector<std::string> where;
};

int cmd_plot(const PlotArgs& a, RunManifest& m, std::ostream& out) {
  const auto rows = eval_rows_from_csv(read_file(a.results));
  std::map<std::string, int> filters;
  for (const auto& w : a.where) {
    const auto eq = w.find('=');
    const std::string key = w.substr(0, eq);
    if (eq == std::string::npos || (key != "frames" && key != "actions"))
      throw CLI::ValidationError("--where", "expected frames=N or actions=N, got '" + w + "'");
    filters[key] = parse_int_list(w.substr(eq + 1), "--where").front();
  }
  std::vector<PlotPoint> points;
  for (const auto& r : rows) {
    if (filters.count("frames") && r.frames != filters["frames"]) continue;
    if (filters.count("actions") && r.actions != filters["actions"]) continue;
    points.push_back({static_cast<double>(a.x == "frames" ? r.frames : r.actions), r.metric, r.value, 0.0});
  }
  const auto agg = aggregate_plot_points(points, a.metric);
  const std::string csv = plot_csv(agg);
  write_file_atomic(a.common.out, csv);
  m.inputs = {a.results};
  m.outputs = {a.common.out};
  m.config = {{"x", a.x}, {"metric", a.metric}, {"where", a.where}};
  out << csv;
  return kExitOk;
}

// ---- gradcheck ----

struct GradcheckArgs {
  Common common;
  std::string data;
  std::string variant = "full";
  double eps = 1e-4;
  int coords = 200;
  int batch = 2;
  double tolerance = 1e-3;
};

int cmd_gradcheck(const GradcheckArgs& a, RunManifest& m, std::ostream& out) {
  const json doc = config_or_empty(a.common);
  std::vector<PoseSequence> data;
  if (a.data.empty()) {
    SyntheticDatasetConfig sc;
    apply(section(doc, "synthetic"), sc);
    sc.seed = a.common.seed;
    sc.num_sequences = a.batch;
    data = make_synthetic_dataset(sc);
  } else {
    data = read_dataset(a.data);
    m.inputs = {a.data};
    if (static_cast<int>(data.size()) > a.batch) data.resize(static_cast<std::size_t>(a.batch));
  }
  if (data.empty()) throw InputError("gradcheck: no sequences");
  ModelConfig cfg;
  cfg.pose_dim = data.front().pose_dim();
  cfg.joints = data.front().skeleton.joints;
  apply(section(doc, "model"), cfg);
  const auto [variant, slots] = parse_variant(a.variant);
  cfg.variant = variant;
  cfg.baseline_slots = slots;
  cfg.validate();
  LossWeights w;
  apply(section(doc, "loss"), w);
  ModelParams params = ModelParams::init(cfg, a.common.seed);
  const auto report = gradcheck(params, cfg, data, w, a.eps, a.coords, a.common.seed);
  m.config["model"] = to_json(cfg);
  m.config["loss"] = to_json(w);
  m.config["eps"] = a.eps;
  m.config["coordinates"] = a.coords;
  m.results = {{"max_relative_error", report.max_relative_error}, {"coordinates", report.coordinates}};
  if (!a.common.out.empty()) {
    write_file_atomic(a.common.out, m.results.dump(2) + "\n");
    m.outputs = {a.common.out};
  }
  const bool ok = report.max_relative_error <= a.tolerance;
  out << variant_name(cfg.variant, cfg.baseline_slots) << " max_relative_error " << report.max_relative_error
      << " over " << report.coordinates << " coordinates: " << (ok ? "ok" : "FAILED") << "\n";
  return ok ? kExitOk : kExitData;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-action motion synthesis with a recurrent-transformer VAE", "martvae"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MARTVAE_VERSION);

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth-data", "Write a synthetic labelled pose dataset");
  add_common(s_synth, synth.common, true);
  s_synth->add_option("--num-sequences", synth.num_sequences, "Sequences (per condition with --fixed-actions)");
  s_synth->add_option("--fixed-actions", synth.fixed_actions, "Comma list of action counts for fixed-length sets");
  s_synth->add_option("--frames", synth.frames, "Comma list of sequence lengths for fixed-length sets");

  PreprocessArgs prep;
  auto* s_prep = app.add_subcommand("preprocess", "Filter frames by 2D keypoint agreement and split sequences");
  add_common(s_prep, prep.common, true);
  s_prep->add_option("--data", prep.data, "Directory of sequences (pose = J x 3 camera-space joints)")
      ->required()->check(CLI::ExistingDirectory);
  s_prep->add_option("--keypoints", prep.keypoints, "Directory of keypoint files named like the sequences")
      ->required()->check(CLI::ExistingDirectory);
  s_prep->add_option("--camera", prep.camera, "Camera JSON {fx, fy, cx, cy}")->required()->check(CLI::ExistingFile);
  s_prep->add_option("--head-scale", prep.head_scale, "Head scale in pixels");
  s_prep->add_option("--head-neck", prep.head_neck, "Head and neck keypoint indices, e.g. 0,1");

  TrainArgs train;
  auto* s_train = app.add_subcommand("train", "Train a model (or the evaluation classifier)");
  add_common(s_train, train.common, true);
  s_train->add_option("--data", train.data, "Training sequence directory")->required()->check(CLI::ExistingDirectory);
  s_train->add_option("--variant", train.variant, "full|avg-stats|all-diff-latent|single-latent|no-lba|baseline:M");
  s_train->add_option("--epochs", train.epochs);
  s_train->add_option("--kl-weight", train.kl_weight);
  s_train->add_option("--lr", train.lr);
  s_train->add_option("--batch-size", train.batch_size);
  s_train->add_option("--log", train.log, "Training log CSV (default <out>.log.csv)");
  s_train->add_option("--target", train.target)->check(CLI::IsMember({"model", "classifier"}));
  s_train->add_flag("--balanced", train.balanced, "Class-balanced sequence sampling");

  GenerateArgs gen;
  auto* s_gen = app.add_subcommand("generate", "Generate a sequence for an ordered action list");
  add_common(s_gen, gen.common, true);
  s_gen->add_option("--model", gen.model)->required()->check(CLI::ExistingFile);
  s_gen->add_option("--actions", gen.actions, "Comma list of action labels")->required();
  s_gen->add_option("--frames", gen.frames)->required();

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Evaluate generated sequences against a GT set");
  add_common(s_eval, ev.common, true);
  s_eval->add_option("--model", ev.model)->required()->check(CLI::ExistingFile);
  s_eval->add_option("--classifier", ev.classifier)->required()->check(CLI::ExistingFile);
  s_eval->add_option("--gt", ev.gt)->required()->check(CLI::ExistingDirectory);
  s_eval->add_option("--num-samples", ev.num_samples);
  s_eval->add_option("--lengths", ev.lengths, "Comma list, e.g. 60,80,120");
  s_eval->add_option("--actions-per-seq", ev.actions, "Comma list, e.g. 1,2,3");
  s_eval->add_option("--repeats", ev.repeats);

  PlotArgs plot;
  auto* s_plot = app.add_subcommand("plot-data", "Emit x,metric,value,stderr curves from eval results");
  add_common(s_plot, plot.common, true);
  s_plot->add_option("--results", plot.results, "eval *.results.csv")->required()->check(CLI::ExistingFile);
  s_plot->add_option("--x", plot.x)->check(CLI::IsMember({"frames", "actions"}));
  s_plot->add_option("--metric", plot.metric)->required();
  s_plot->add_option("--where", plot.where, "Filter such as actions=3");

  GradcheckArgs gc;
  auto* s_gc = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  add_common(s_gc, gc.common, false);
  s_gc->add_option("--data", gc.data)->check(CLI::ExistingDirectory);
  s_gc->add_option("--variant", gc.variant);
  s_gc->add_option("--eps", gc.eps);
  s_gc->add_option("--coords", gc.coords);
  s_gc->add_option("--batch", gc.batch);
  s_gc->add_option("--tolerance", gc.tolerance);

  std::string replay_manifest, replay_out;
  auto* s_replay = app.add_subcommand("replay", "Re-run the command recorded in a run manifest");
  s_replay->add_option("--manifest", replay_manifest)->required()->check(CLI::ExistingFile);
  s_replay->add_option("--out", replay_out, "Write to this path instead of the recorded one");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << MARTVAE_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitUsage;
  }

  RunManifest manifest;
  manifest.argv = args;
  try {
    if (s_replay->parsed()) {
      const json doc = json::parse(read_file(replay_manifest));
      auto argv = doc.at("argv").get<std::vector<std::string>>();
      if (!replay_out.empty()) {
        auto it = std::find(argv.begin(), argv.end(), "--out");
        if (it == argv.end() || std::next(it) == argv.end())
          throw InputError("replay: recorded command has no --out to redirect");
        *std::next(it) = replay_out;
      }
      return run(argv, out, err);
    }
    int code = kExitOk;
    auto* sub = app.get_subcommands().front();
    manifest.command = sub->get_name();
    if (sub == s_synth) manifest.seed = synth.common.seed, code = cmd_synth(synth, manifest, out);
    else if (sub == s_prep) manifest.seed = prep.common.seed, code = cmd_preprocess(prep, manifest, out);
    else if (sub == s_train) manifest.seed = train.common.seed, code = cmd_train(train, manifest, out);
    else if (sub == s_gen) manifest.seed = gen.common.seed, code = cmd_generate(gen, manifest, out);
    else if (sub == s_eval) manifest.seed = ev.common.seed, code = cmd_eval(ev, manifest, out, err);
    else if (sub == s_plot) manifest.seed = plot.common.seed, code = cmd_plot(plot, manifest, out);
    else if (sub == s_gc) manifest.seed = gc.common.seed, code = cmd_gradcheck(gc, manifest, out);
    manifest.write();
    return code;
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {  // ConfigError, InputError
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::runtime_error& e) {  // ParseError, TrainingError, filesystem, JSON
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::logic_error& e) {  // ProjectionError and other domain failures
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace martvae::cli
