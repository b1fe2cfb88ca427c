#pragma once

#include "martvae/classifier.hpp"
#include "martvae/metrics.hpp"
#include "martvae/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace martvae {

struct EvalConfig {
  int num_samples = 50;
  std::vector<int> lengths{60, 80, 120};
  std::vector<int> actions_per_sequence{1, 2, 3};
  int repeats = 5;
  int pairs = 200;  // S_d = S_m
  std::uint64_t seed = 0;

  void validate() const;
};

/// One measurement: condition (frames, actions), repeat index, metric name, value.
struct EvalRow {
  int frames = 0;
  int actions = 0;
  int repeat = 0;
  std::string metric;
  double value = 0.0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  MetricReport report;              // mean and stderr over repeats, named metric@T=..,k=..
  std::vector<std::string> warnings;
};

/// GT sequences with exactly `actions` segments and `frames` frames; the whole set if none match.
std::vector<PoseSequence> reference_subset(const std::vector<PoseSequence>& gt, int frames, int actions,
                                           bool* fell_back = nullptr);

/// For every (length, action count) condition and repeat: draws conditioning label lists from
/// the matching GT reference, generates sequences, and measures accuracy, FID, diversity,
/// multimodality and semantic consistency (ordered and multiset).
EvalResult evaluate_model(const ModelParams& params, const ModelConfig& cfg, const SequenceClassifier& clf,
                          const std::vector<PoseSequence>& gt, const EvalConfig& eval);

std::string eval_rows_csv(const std::vector<EvalRow>& rows);  // frames,actions,repeat,metric,value
std::vector<EvalRow> eval_rows_from_csv(const std::string& text);

}  // namespace martvae
