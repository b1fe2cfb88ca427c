#include "martvae/evaluation.hpp"

#include "martvae/errors.hpp"

#include <charconv>
#include <map>
#include <sstream>
#include <tuple>

namespace martvae {

void EvalConfig::validate() const {
  if (num_samples < 2) throw ConfigError("eval: num_samples must be >= 2");
  if (lengths.empty() || actions_per_sequence.empty()) throw ConfigError("eval: lengths and actions must be non-empty");
  for (int t : lengths)
    if (t < 1) throw ConfigError("eval: lengths must be >= 1");
  for (int k : actions_per_sequence)
    if (k < 1) throw ConfigError("eval: actions per sequence must be >= 1");
  if (repeats < 1) throw ConfigError("eval: repeats must be >= 1");
  if (pairs < 1) throw ConfigError("eval: pairs must be >= 1");
}

std::vector<PoseSequence> reference_subset(const std::vector<PoseSequence>& gt, int frames, int actions,
                                           bool* fell_back) {
  std::vector<PoseSequence> out;
  for (const auto& s : gt)
    if (s.num_frames() == frames && static_cast<int>(s.script.size()) == actions) out.push_back(s);
  if (fell_back) *fell_back = out.empty();
  return out.empty() ? gt : out;
}

namespace {

std::mt19937_64 condition_engine(std::uint64_t seed, int frames, int actions, int repeat) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(frames), static_cast<std::uint32_t>(actions),
                    static_cast<std::uint32_t>(repeat)};
  return std::mt19937_64(seq);
}

std::string condition_name(const std::string& metric, int frames, int actions) {
  return metric + "@T=" + std::to_string(frames) + ",k=" + std::to_string(actions);
}

}  // namespace

EvalResult evaluate_model(const ModelParams& params, const ModelConfig& cfg, const SequenceClassifier& clf,
                          const std::vector<PoseSequence>& gt, const EvalConfig& eval) {
  eval.validate();
  if (gt.empty()) throw InputError("eval: empty GT set");
  EvalResult result;
  std::map<std::tuple<int, int, std::string>, std::vector<double>> grouped;
  std::vector<std::tuple<int, int, std::string>> order;
  auto record = [&](int frames, int actions, int repeat, const std::string& metric, double value) {
    result.rows.push_back({frames, actions, repeat, metric, value});
    auto key = std::make_tuple(frames, actions, metric);
    if (!grouped.count(key)) order.push_back(key);
    grouped[key].push_back(value);
  };

  for (int k : eval.actions_per_sequence) {
    for (int T : eval.lengths) {
      bool fell_back = false;
      const auto reference = reference_subset(gt, T, k, &fell_back);
      if (fell_back)
        result.warnings.push_back("no GT sequence with T=" + std::to_string(T) + ", k=" + std::to_string(k) +
                                  "; using the whole GT set as reference");
      std::vector<std::vector<int>> scripts;
      for (const auto& s : reference)
        if (static_cast<int>(s.script.size()) == k) scripts.push_back(s.script.labels());
      if (scripts.empty()) throw InputError("eval: GT set has no label list with " + std::to_string(k) + " actions");
      const FeatureSet ref_features = extract_features(clf, reference);
      const double gt_accuracy = segment_accuracy(clf, reference);

      for (int r = 0; r < eval.repeats; ++r) {
        auto rng = condition_engine(eval.seed, T, k, r);
        std::uniform_int_distribution<std::size_t> pick(0, scripts.size() - 1);
        std::vector<PoseSequence> generated;
        for (int i = 0; i < eval.num_samples; ++i) generated.push_back(generate(params, cfg, scripts[pick(rng)], T, rng));

        const auto acc = per_action_accuracy(clf, generated);
        if (acc.skipped > 0)
          result.warnings.push_back(std::to_string(acc.skipped) + " span(s) shorter than the classifier crop skipped at T=" +
                                    std::to_string(T) + ", k=" + std::to_string(k));
        record(T, k, r, "accuracy_gen", acc.accuracy);
        record(T, k, r, "accuracy_gt", gt_accuracy);
        const FeatureSet gen_features = extract_features(clf, generated);
        if (gen_features.features.rows() >= 2 && ref_features.features.rows() >= 2) {
          record(T, k, r, "fid", fid(gen_features, ref_features));
          record(T, k, r, "diversity", diversity(gen_features.features, eval.pairs, rng));
          const auto mm = multimodality(gen_features, eval.pairs, rng);
          for (int c : mm.excluded_classes)
            result.warnings.push_back("class " + std::to_string(c) + " has fewer than two generated segments; excluded from multimodality");
          record(T, k, r, "multimodality", mm.value);
        }
        record(T, k, r, "match_rate", semantic_consistency(generated, reference, LabelMatch::Ordered).rate);
        record(T, k, r, "match_rate_multiset", semantic_consistency(generated, reference, LabelMatch::Multiset).rate);
      }
    }
  }
  for (const auto& key : order) {
    const auto ms = mean_stderr(grouped[key]);
    result.report.add(condition_name(std::get<2>(key), std::get<0>(key), std::get<1>(key)), ms.mean, ms.stderr_of_mean);
  }
  return result;
}

std::string eval_rows_csv(const std::vector<EvalRow>& rows) {
  std::string out = "frames,actions,repeat,metric,value\n";
  for (const auto& r : rows) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, r.value);
    out += std::to_string(r.frames) + "," + std::to_string(r.actions) + "," + std::to_string(r.repeat) + "," + r.metric +
           "," + std::string(buf, res.ptr) + "\n";
  }
  return out;
}

std::vector<EvalRow> eval_rows_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "frames,actions,repeat,metric,value")
    throw ParseError("eval results: missing header 'frames,actions,repeat,metric,value'");
  std::vector<EvalRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw ParseError("eval results line " + std::to_string(lineno) + ": expected 5 fields");
    try {
      rows.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stoi(f[2]), f[3], std::stod(f[4])});
    } catch (const std::exception&) {
      throw ParseError("eval results line " + std::to_string(lineno) + ": bad number");
    }
  }
  return rows;
}

}  // namespace martvae
