#include "martvae/metrics.hpp"

#include "martvae/errors.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace martvae {

namespace {

std::string number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InputError(std::string(what) + ": non-finite feature value");
}

}  // namespace

FeatureSet extract_features(const SequenceClassifier& clf, std::span<const PoseSequence> data) {
  std::vector<RowVector> rows;
  FeatureSet out;
  for (const auto& seq : data)
    for (const auto& seg : seq.script.segments) {
      if (seg.length() < clf.min_frames()) continue;
      rows.push_back(clf.features(seq.frames.middleRows(seg.start, seg.length())));
      out.labels.push_back(seg.label);
    }
  out.features.resize(static_cast<Eigen::Index>(rows.size()), clf.feature_dim());
  for (std::size_t i = 0; i < rows.size(); ++i) out.features.row(static_cast<Eigen::Index>(i)) = rows[i];
  return out;
}

Moments feature_moments(const Matrix& features) {
  if (features.rows() < 2) throw InputError("fid: need at least two feature rows");
  Moments m;
  m.mean = features.colwise().mean();
  const Matrix centered = features.rowwise() - m.mean;
  m.covariance = centered.transpose() * centered / static_cast<double>(features.rows() - 1);
  return m;
}

double fid_from_moments(const Moments& a, const Moments& b) {
  if (a.mean.size() != b.mean.size()) throw InputError("fid: feature dimensions differ");
  // sqrt(A) via eigendecomposition, then Tr((sA B sA)^{1/2}) = Tr((A B)^{1/2}).
  Eigen::SelfAdjointEigenSolver<Matrix> ea(a.covariance);
  const Vector la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Matrix sqrt_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Matrix inner = sqrt_a * b.covariance * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> ei(inner, Eigen::EigenvaluesOnly);
  double trace_sqrt = 0.0;
  for (Eigen::Index i = 0; i < ei.eigenvalues().size(); ++i) {
    const double lambda = ei.eigenvalues()(i);
    if (lambda < -1e-8) throw InputError("fid: covariance product has a negative eigenvalue " + number(lambda));
    trace_sqrt += std::sqrt(std::max(lambda, 0.0));
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double value = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * trace_sqrt;
  return std::max(value, 0.0);
}

double fid(const Matrix& a, const Matrix& b) {
  require_finite(a, "fid");
  require_finite(b, "fid");
  return fid_from_moments(feature_moments(a), feature_moments(b));
}

double fid(const FeatureSet& a, const FeatureSet& b) { return fid(a.features, b.features); }

namespace {

double mean_pair_distance(const Matrix& f, std::span<const Eigen::Index> rows, int pairs, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
  double total = 0.0;
  for (int p = 0; p < pairs; ++p) {
    const std::size_t i = pick(rng);
    std::size_t j = pick(rng);
    while (j == i) j = pick(rng);
    total += (f.row(rows[i]) - f.row(rows[j])).norm();
  }
  return total / pairs;
}

}  // namespace

double diversity(const Matrix& features, int pairs, std::mt19937_64& rng) {
  require_finite(features, "diversity");
  if (features.rows() < 2) throw InputError("diversity: need at least two feature rows");
  if (pairs < 1) throw InputError("diversity: pairs must be >= 1");
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(features.rows()));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  return mean_pair_distance(features, rows, pairs, rng);
}

MultimodalityResult multimodality(const FeatureSet& set, int pairs, std::mt19937_64& rng) {
  require_finite(set.features, "multimodality");
  if (static_cast<Eigen::Index>(set.labels.size()) != set.features.rows())
    throw InputError("multimodality: label count does not match feature rows");
  if (pairs < 1) throw InputError("multimodality: pairs must be >= 1");
  std::map<int, std::vector<Eigen::Index>> by_class;
  for (std::size_t i = 0; i < set.labels.size(); ++i) by_class[set.labels[i]].push_back(static_cast<Eigen::Index>(i));
  MultimodalityResult out;
  double total = 0.0;
  int used = 0;
  for (const auto& [label, rows] : by_class) {
    if (rows.size() < 2) {
      out.excluded_classes.push_back(label);
      continue;
    }
    total += mean_pair_distance(set.features, rows, pairs, rng);
    ++used;
  }
  out.value = used == 0 ? 0.0 : total / used;
  return out;
}

Assignment hungarian(const Matrix& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) throw InputError("hungarian: empty cost matrix");
  if (!cost.allFinite()) throw InputError("hungarian: non-finite cost");
  const bool transposed = cost.rows() > cost.cols();
  const Matrix a = transposed ? Matrix(cost.transpose()) : cost;
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(a.cols());
  constexpr double inf = std::numeric_limits<double>::infinity();

  // Shortest augmenting path with potentials; 1-based, column 0 is a sentinel.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment out;
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const int r = p[j] - 1, c = j - 1;
    out.pairs.emplace_back(transposed ? c : r, transposed ? r : c);
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  for (const auto& [r, c] : out.pairs) out.cost += cost(r, c);
  return out;
}

Matrix pose_distance_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw InputError("sequence_distance: pose dimension mismatch (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()) + ")");
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) d(i, j) = (a.row(i) - b.row(j)).norm();
  return d;
}

double sequence_distance(const Matrix& generated, const Matrix& gt) {
  if (generated.rows() == 0 || gt.rows() == 0) throw InputError("sequence_distance: empty sequence");
  const Matrix d = pose_distance_matrix(generated, gt);
  return hungarian(d).cost / static_cast<double>(std::min(generated.rows(), gt.rows()));
}

bool labels_match(const ActionScript& a, const ActionScript& b, LabelMatch mode) {
  auto la = a.labels();
  auto lb = b.labels();
  if (mode == LabelMatch::Multiset) {
    std::sort(la.begin(), la.end());
    std::sort(lb.begin(), lb.end());
  }
  return la == lb;
}

namespace {

// Each of the min(R, C) assigned rows (or columns) costs at least its own minimum.
double assignment_lower_bound(const Matrix& d) {
  if (d.rows() <= d.cols()) return d.rowwise().minCoeff().sum();
  return d.colwise().minCoeff().sum();
}

}  // namespace

SemanticResult semantic_consistency(std::span<const PoseSequence> generated, std::span<const PoseSequence> gt,
                                    LabelMatch mode) {
  if (generated.empty() || gt.empty()) throw InputError("semantic_consistency: empty set");
  SemanticResult out;
  int matches = 0;
  for (const auto& g : generated) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_index = 0;
    for (std::size_t j = 0; j < gt.size(); ++j) {
      const Matrix d = pose_distance_matrix(g.frames, gt[j].frames);
      const double norm = static_cast<double>(std::min(d.rows(), d.cols()));
      if (assignment_lower_bound(d) / norm > best) continue;
      const double dist = hungarian(d).cost / norm;
      if (dist < best) {
        best = dist;
        best_index = j;
      }
    }
    const bool ok = labels_match(g.script, gt[best_index].script, mode);
    out.nearest.push_back(best_index);
    out.matched.push_back(ok ? 1 : 0);
    matches += ok ? 1 : 0;
  }
  out.rate = static_cast<double>(matches) / static_cast<double>(generated.size());
  return out;
}

SpanAccuracy per_action_accuracy(const SpanClassifier& clf, std::span<const PoseSequence> generated) {
  SpanAccuracy out;
  int correct = 0;
  for (const auto& seq : generated)
    for (const auto& seg : seq.script.segments) {
      if (seg.length() < clf.min_frames()) {
        ++out.skipped;
        continue;
      }
      ++out.evaluated;
      correct += clf.predict(seq.frames.middleRows(seg.start, seg.length())) == seg.label ? 1 : 0;
    }
  out.accuracy = out.evaluated == 0 ? 0.0 : static_cast<double>(correct) / out.evaluated;
  return out;
}

MeanStderr mean_stderr(std::span<const double> values) {
  MeanStderr out;
  if (values.empty()) return out;
  const double n = static_cast<double>(values.size());
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stderr_of_mean = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

void MetricReport::add(std::string metric, double value, double std_error) {
  entries.push_back({std::move(metric), value, std_error});
}

const MetricEntry* MetricReport::find(const std::string& metric) const {
  for (const auto& e : entries)
    if (e.metric == metric) return &e;
  return nullptr;
}

std::string MetricReport::to_csv() const {
  std::string out = "metric,value,stderr\n";
  for (const auto& e : entries) out += e.metric + "," + number(e.value) + "," + number(e.std_error) + "\n";
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& e : entries) doc.push_back({{"metric", e.metric}, {"value", e.value}, {"stderr", e.std_error}});
  return nlohmann::json{{"metrics", doc}}.dump(2) + "\n";
}

MetricReport MetricReport::from_json(const std::string& text) {
  MetricReport out;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& e : doc.at("metrics"))
      out.add(e.at("metric").get<std::string>(), e.at("value").get<double>(), e.at("stderr").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metric report: ") + e.what());
  }
  return out;
}

std::vector<PlotPoint> aggregate_plot_points(std::span<const PlotPoint> points, const std::string& metric) {
  if (points.empty()) throw InputError("plot-data: no result rows");
  std::map<double, std::vector<const PlotPoint*>> by_x;
  for (const auto& p : points)
    if (p.metric == metric) by_x[p.x].push_back(&p);
  if (by_x.empty()) throw InputError("plot-data: metric '" + metric + "' not present in results");
  std::vector<PlotPoint> out;
  for (const auto& [x, group] : by_x) {
    if (group.size() == 1) {
      out.push_back(*group.front());
      continue;
    }
    std::vector<double> values;
    for (const auto* p : group) values.push_back(p->value);
    const auto ms = mean_stderr(values);
    out.push_back({x, metric, ms.mean, ms.stderr_of_mean});
  }
  return out;
}

std::string plot_csv(std::span<const PlotPoint> rows) {
  std::string out = "x,metric,value,stderr\n";
  for (const auto& r : rows) out += number(r.x) + "," + r.metric + "," + number(r.value) + "," + number(r.std_error) + "\n";
  return out;
}

}  // namespace martvae
