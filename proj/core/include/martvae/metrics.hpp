#pragma once

#include "martvae/classifier.hpp"
#include "martvae/motion.hpp"

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace martvae {

/// n x F penultimate-layer features with one class label per row.
struct FeatureSet {
  Matrix features;
  std::vector<int> labels;
};

/// Features of the centre crop of every segment long enough for the classifier.
FeatureSet extract_features(const SequenceClassifier& clf, std::span<const PoseSequence> data);

struct Moments {
  RowVector mean;
  Matrix covariance;  // sample covariance (n - 1)
};

Moments feature_moments(const Matrix& features);

/// Frechet distance between Gaussian fits. Throws InputError on non-finite input.
double fid(const Matrix& a, const Matrix& b);
double fid(const FeatureSet& a, const FeatureSet& b);
double fid_from_moments(const Moments& a, const Moments& b);

/// Mean distance between `pairs` uniformly drawn row pairs (i != j).
double diversity(const Matrix& features, int pairs, std::mt19937_64& rng);

struct MultimodalityResult {
  double value = 0.0;
  std::vector<int> excluded_classes;  // classes with fewer than two rows
};

/// Mean over classes of the mean distance of `pairs` within-class row pairs.
MultimodalityResult multimodality(const FeatureSet& set, int pairs, std::mt19937_64& rng);

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (row, column), sorted by row
  double cost = 0.0;
};

/// Minimum-cost assignment of min(R, C) pairs. Throws InputError on an empty or non-finite matrix.
Assignment hungarian(const Matrix& cost);

/// Pairwise Euclidean distances between the rows of a and b.
Matrix pose_distance_matrix(const Matrix& a, const Matrix& b);

/// Hungarian cost over frame distances divided by min(Tg, Tt).
double sequence_distance(const Matrix& generated, const Matrix& gt);

enum class LabelMatch { Ordered, Multiset };

struct SemanticResult {
  double rate = 0.0;
  std::vector<std::size_t> nearest;  // GT index per generated sequence
  std::vector<char> matched;
};

/// Nearest GT sequence (lowest index on ties) per generated sequence; match on label lists.
SemanticResult semantic_consistency(std::span<const PoseSequence> generated, std::span<const PoseSequence> gt,
                                    LabelMatch mode = LabelMatch::Ordered);

bool labels_match(const ActionScript& a, const ActionScript& b, LabelMatch mode);

struct SpanAccuracy {
  double accuracy = 0.0;
  int evaluated = 0;
  int skipped = 0;  // spans shorter than the classifier minimum
};

SpanAccuracy per_action_accuracy(const SpanClassifier& clf, std::span<const PoseSequence> generated);

struct MeanStderr {
  double mean = 0.0;
  double stderr_of_mean = 0.0;  // sample sd / sqrt(n); 0 for n = 1
};

MeanStderr mean_stderr(std::span<const double> values);

struct MetricEntry {
  std::string metric;
  double value = 0.0;
  double std_error = 0.0;
};

struct MetricReport {
  std::vector<MetricEntry> entries;

  void add(std::string metric, double value, double std_error);
  const MetricEntry* find(const std::string& metric) const;
  std::string to_csv() const;   // metric,value,stderr
  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

struct PlotPoint {
  double x = 0.0;
  std::string metric;
  double value = 0.0;
  double std_error = 0.0;
};

/// Rows for `metric`, duplicates at equal x aggregated (mean, stderr over repeats), sorted by x.
/// Throws InputError if there are no rows or the metric is absent.
std::vector<PlotPoint> aggregate_plot_points(std::span<const PlotPoint> points, const std::string& metric);

std::string plot_csv(std::span<const PlotPoint> rows);  // x,metric,value,stderr

}  // namespace martvae
