#include "martvae/classifier.hpp"
#include "martvae/errors.hpp"
#include "martvae/metrics.hpp"
#include "martvae/model.hpp"
#include "martvae/synthetic.hpp"

#include "oracles.hpp"

#include <doctest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <functional>
#include <map>
#include <numeric>

using namespace martvae;

namespace {

Matrix formula_features(int n, int f, double a, double b) {
  Matrix m(n, f);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < f; ++j) m(i, j) = std::sin(a * i + 0.7 * j + 0.1 * i * j) + b * std::cos(0.3 * i * j + j);
  return m;
}

// Frechet distance with the non-symmetric square root of Sa*Sb from Eigen's matrix functions.
double fid_sqrtm_oracle(const Matrix& a, const Matrix& b) {
  auto moments = [](const Matrix& x, RowVector& mean, Matrix& cov) {
    mean = x.colwise().mean();
    const Matrix c = x.rowwise() - mean;
    cov = c.transpose() * c / static_cast<double>(x.rows() - 1);
  };
  RowVector ma, mb;
  Matrix sa, sb;
  moments(a, ma, sa);
  moments(b, mb, sb);
  const Matrix prod = sa * sb;
  const Eigen::MatrixXcd root = prod.cast<std::complex<double>>().sqrt();
  return (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * root.trace().real();
}

struct FixedClassifier : SpanClassifier {
  std::function<int(const Matrix&)> fn;
  int min_frames() const override { return 1; }
  int predict(const Matrix& span) const override { return fn(span); }
};

PoseSequence labelled(const Matrix& frames, std::vector<int> labels) {
  PoseSequence s;
  s.skeleton = {1, static_cast<int>(frames.cols()), 30.0};
  s.frames = frames;
  s.script = equal_partition(labels, static_cast<int>(frames.rows()));
  return s;
}

std::vector<PoseSequence> short_dataset(int n, std::uint64_t seed) {
  SyntheticDatasetConfig sc;
  sc.num_sequences = n;
  sc.seed = seed;
  sc.min_segment_frames = 6;
  sc.max_segment_frames = 8;
  return make_synthetic_dataset(sc);
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("FID closed forms") {
  std::mt19937_64 rng(1);
  const Matrix a = oracle::random_matrix(30, 4, rng);
  CHECK(std::abs(fid(a, a)) < 1e-8);
  Moments m0{RowVector::Zero(1), Matrix::Ones(1, 1)}, m1{RowVector::Ones(1), Matrix::Ones(1, 1)};
  CHECK(std::abs(fid_from_moments(m0, m1) - 1.0) < 1e-8);
}

TEST_CASE("FID matches an independent square-root formulation and a frozen reference") {
  const Matrix a = formula_features(40, 4, 1.3, 0.5);
  const Matrix b = (formula_features(35, 4, 0.9, 0.8).array() + 0.25).matrix();
  // numpy/scipy: cov(rowvar=False), scipy.linalg.sqrtm(Sa @ Sb).real
  const double frozen = 0.4815147681391867;
  CHECK(std::abs(fid(a, b) - frozen) < 1e-6);
  CHECK(std::abs(fid(a, b) - fid_sqrtm_oracle(a, b)) < 1e-6);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = oracle::random_matrix(25, 4, rng);
    const Matrix y = oracle::random_matrix(30, 4, rng, 1.5);
    CHECK(std::abs(fid(x, y) - fid_sqrtm_oracle(x, y)) < 1e-6);
    CHECK(fid(x, y) >= 0.0);
    CHECK(std::abs(fid(x, y) - fid(y, x)) < 1e-8);
  }
}

TEST_CASE("FID is invariant to row permutations") {
  std::mt19937_64 rng(3);
  const Matrix a = oracle::random_matrix(30, 5, rng), b = oracle::random_matrix(30, 5, rng, 2.0);
  Eigen::PermutationMatrix<Eigen::Dynamic> p(30);
  p.setIdentity();
  std::shuffle(p.indices().data(), p.indices().data() + 30, rng);
  CHECK(std::abs(fid(a, b) - fid(p * a, p * b)) < 1e-9);
}

TEST_CASE("FID rejects non-finite features") {
  Matrix a = Matrix::Ones(5, 2);
  a(2, 1) = std::nan("");
  CHECK_THROWS_AS(fid(a, Matrix::Ones(5, 2)), InputError);
}

TEST_CASE("diversity and multimodality of identical features are zero") {
  std::mt19937_64 rng(4);
  FeatureSet s{Matrix::Constant(10, 3, 2.5), {0, 0, 0, 0, 0, 1, 1, 1, 1, 1}};
  CHECK(diversity(s.features, 200, rng) == 0.0);
  CHECK(multimodality(s, 200, rng).value == 0.0);
}

TEST_CASE("multimodality of two clusters per class") {
  const int m = 50;
  FeatureSet s;
  s.features = Matrix::Zero(4 * m, 2);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 2 * m; ++i) {
      s.labels.push_back(c);
      s.features(c * 2 * m + i, 0) = i < m ? 0.0 : 10.0;
    }
  std::mt19937_64 rng(5);
  const auto r = multimodality(s, 200, rng);
  const double expected = 10.0 * m / (2.0 * m - 1.0);
  const double se = 10.0 * std::sqrt(0.25 / 400.0);
  CHECK(std::abs(r.value - expected) <= 3.0 * se);
  CHECK(r.excluded_classes.empty());

  s.labels.back() = 7;
  s.labels[0] = 7;
  s.labels[1] = 8;
  const auto ex = multimodality(s, 50, rng);
  CHECK(ex.excluded_classes == std::vector<int>{8});
}

TEST_CASE("Monte-Carlo diversity converges to the all-pairs mean") {
  std::mt19937_64 rng(6);
  const Matrix f = oracle::random_matrix(20, 3, rng);
  std::vector<double> all;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j)
      if (i != j) all.push_back(oracle::euclid(f, i, f, j));
  const double exact = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
  double var = 0.0;
  for (double x : all) var += (x - exact) * (x - exact);
  var /= static_cast<double>(all.size());
  const int pairs = 20000;
  CHECK(std::abs(diversity(f, pairs, rng) - exact) <= 3.0 * std::sqrt(var / pairs));
}

TEST_CASE("Hungarian examples") {
  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  const auto a = hungarian(c);
  CHECK(a.cost == 0.0);
  CHECK(a.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
  CHECK_THROWS_AS(hungarian(Matrix(0, 3)), InputError);
  Matrix bad = Matrix::Zero(2, 2);
  bad(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hungarian(bad), InputError);
}

TEST_CASE("Hungarian equals brute force on every 3x3 matrix over {0,1,2}") {
  Matrix c(3, 3);
  for (int code = 0; code < 19683; ++code) {
    int x = code;
    for (int i = 0; i < 9; ++i) {
      c(i / 3, i % 3) = x % 3;
      x /= 3;
    }
    REQUIRE(hungarian(c).cost == oracle::brute_force_assignment(c));
  }
}

TEST_CASE("Hungarian equals brute force on random rectangular matrices") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> size(1, 6);
  for (int trial = 0; trial < 1000; ++trial) {
    const int r = size(rng), c = size(rng);
    const Matrix cost = oracle::random_matrix(r, c, rng).cwiseAbs();
    const auto a = hungarian(cost);
    CAPTURE(r);
    CAPTURE(c);
    REQUIRE(static_cast<int>(a.pairs.size()) == std::min(r, c));
    std::vector<char> row(6, 0), col(6, 0);
    double sum = 0.0;
    for (auto [i, j] : a.pairs) {
      CHECK(!row[static_cast<std::size_t>(i)]);
      CHECK(!col[static_cast<std::size_t>(j)]);
      row[static_cast<std::size_t>(i)] = col[static_cast<std::size_t>(j)] = 1;
      sum += cost(i, j);
    }
    CHECK(std::abs(sum - a.cost) < 1e-12);
    CHECK(std::abs(a.cost - oracle::brute_force_assignment(cost)) < 1e-12);
  }
}

TEST_CASE("sequence distance") {
  std::mt19937_64 rng(8);
  for (int tg = 1; tg <= 5; ++tg)
    for (int tt = 1; tt <= 5; ++tt) {
      const Matrix g = oracle::random_matrix(tg, 3, rng), t = oracle::random_matrix(tt, 3, rng);
      Matrix d(tg, tt);
      for (int i = 0; i < tg; ++i)
        for (int j = 0; j < tt; ++j) d(i, j) = oracle::euclid(g, i, t, j);
      const double expected = oracle::brute_force_assignment(d) / std::min(tg, tt);
      CHECK(std::abs(sequence_distance(g, t) - expected) < 1e-12);
      CHECK(std::abs(sequence_distance(g, t) - sequence_distance(t, g)) < 1e-12);
    }
  const Matrix a = oracle::random_matrix(9, 3, rng);
  CHECK(sequence_distance(a, a) == 0.0);
  CHECK_THROWS_AS(sequence_distance(a, Matrix::Zero(4, 2)), InputError);
}

TEST_CASE("label matching modes") {
  const auto a = equal_partition({0, 1, 2}, 30), b = equal_partition({2, 1, 0}, 30);
  CHECK(labels_match(a, a, LabelMatch::Ordered));
  CHECK(!labels_match(a, b, LabelMatch::Ordered));
  CHECK(labels_match(a, b, LabelMatch::Multiset));
  CHECK(!labels_match(a, equal_partition({0, 1}, 30), LabelMatch::Multiset));
}

TEST_CASE("semantic consistency of a set with itself is one") {
  const auto gt = short_dataset(30, 9);
  const auto r = semantic_consistency(gt, gt);
  CHECK(r.rate == 1.0);
  for (std::size_t i = 0; i < gt.size(); ++i) CHECK(r.nearest[i] == i);
}

TEST_CASE("semantic consistency breaks ties toward the lowest GT index") {
  const Matrix f = Matrix::Ones(6, 2);
  const std::vector<PoseSequence> gt{labelled(f, {1}), labelled(f, {2})};
  const std::vector<PoseSequence> gen{labelled(f, {2})};
  const auto r = semantic_consistency(gen, gt);
  CHECK(r.nearest[0] == 0);
  CHECK(r.rate == 0.0);
}

TEST_CASE("shuffled label lists match at the collision rate") {
  const auto gt = short_dataset(40, 10);
  std::map<std::vector<int>, int> counts;
  for (const auto& s : gt) ++counts[s.script.labels()];
  double expected = 0.0;
  for (const auto& [k, n] : counts) expected += static_cast<double>(n) * n;
  expected /= 40.0 * 40.0;

  std::mt19937_64 rng(11);
  std::vector<std::size_t> perm(gt.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double total = 0.0;
  const int reps = 50;
  for (int r = 0; r < reps; ++r) {
    std::shuffle(perm.begin(), perm.end(), rng);
    auto gen = gt;
    for (std::size_t i = 0; i < gt.size(); ++i) gen[i].script = gt[perm[i]].script;
    total += semantic_consistency(gen, gt).rate;
  }
  const double se = std::sqrt(expected * (1.0 - expected) / (40.0 * reps));
  MESSAGE("shuffled rate " << total / reps << " vs collision chance " << expected);
  CHECK(std::abs(total / reps - expected) <= 3.0 * se);
}

TEST_CASE("per-action accuracy with stub classifiers") {
  const auto data = short_dataset(10, 12);
  auto key = [](const Matrix& m, int row) {
    std::vector<double> k(static_cast<std::size_t>(m.cols()));
    for (int c = 0; c < m.cols(); ++c) k[static_cast<std::size_t>(c)] = m(row, c);
    return k;
  };
  std::map<std::vector<double>, int> truth;
  for (const auto& s : data)
    for (const auto& seg : s.script.segments) truth[key(s.frames, seg.start)] = seg.label;
  FixedClassifier oracle_clf, wrong;
  oracle_clf.fn = [&](const Matrix& span) { return truth.at(key(span, 0)); };
  wrong.fn = [](const Matrix&) { return 99; };
  CHECK(per_action_accuracy(wrong, data).accuracy == 0.0);
  const auto r = per_action_accuracy(oracle_clf, data);
  CHECK(r.accuracy == 1.0);
  CHECK(r.skipped == 0);
}

TEST_CASE("mean and standard error") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto m = mean_stderr(v);
  CHECK(m.mean == 2.5);
  CHECK(m.stderr_of_mean == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
  CHECK(mean_stderr(std::vector<double>{7.0}).stderr_of_mean == 0.0);
}

TEST_CASE("metric report serialization") {
  MetricReport r;
  r.add("fid", 1.25, 0.5);
  r.add("accuracy_gen", 0.75, 0.0);
  CHECK(r.to_csv() == "metric,value,stderr\nfid,1.25,0.5\naccuracy_gen,0.75,0\n");
  const auto back = MetricReport::from_json(r.to_json());
  REQUIRE(back.find("fid") != nullptr);
  CHECK(back.find("fid")->std_error == 0.5);
  CHECK(back.find("missing") == nullptr);
}

TEST_CASE("plot aggregation") {
  const std::vector<PlotPoint> pts{{80, "acc", 0.5, 0}, {60, "acc", 0.8, 0}, {60, "acc", 0.6, 0}, {60, "fid", 3, 0}};
  const auto agg = aggregate_plot_points(pts, "acc");
  REQUIRE(agg.size() == 2);
  CHECK(agg[0].x == 60);
  CHECK(agg[0].value == doctest::Approx(0.7));
  CHECK(agg[0].std_error == doctest::Approx(0.1));
  CHECK(agg[1].value == 0.5);
  CHECK(plot_csv(agg).rfind("x,metric,value,stderr\n", 0) == 0);
  CHECK_THROWS_AS(aggregate_plot_points(pts, "diversity"), InputError);
  CHECK_THROWS_AS(aggregate_plot_points(std::vector<PlotPoint>{}, "acc"), InputError);
}

TEST_CASE("classifier separates the toy classes") {
  SyntheticDatasetConfig sc;
  sc.num_sequences = 128;
  sc.seed = 13;
  const auto data = make_synthetic_dataset(sc);
  ClassifierConfig cc;
  cc.epochs = 10;
  ClassifierReport rep;
  const auto clf = train_classifier(data, 4, cc, &rep);
  MESSAGE("held-out accuracy " << rep.holdout_accuracy << " on " << rep.holdout_segments << " segments");
  CHECK(rep.holdout_accuracy >= 0.95);
  sc.seed = 14;
  sc.num_sequences = 64;
  CHECK(segment_accuracy(clf, make_synthetic_dataset(sc)) >= 0.95);

  const auto again = train_classifier(data, 4, cc);
  auto a = const_cast<SequenceClassifier&>(clf).tensors();
  auto b = const_cast<SequenceClassifier&>(again).tensors();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
}

TEST_CASE("classifier trained on shuffled labels is at chance") {
  SyntheticDatasetConfig sc;
  sc.num_sequences = 128;
  sc.seed = 15;
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<int> label(0, 3);
  auto shuffled = [&](std::vector<PoseSequence> data) {
    for (auto& s : data)
      for (auto& seg : s.script.segments) seg.label = label(rng);
    return data;
  };
  ClassifierConfig cc;
  cc.epochs = 10;
  const auto clf = train_classifier(shuffled(make_synthetic_dataset(sc)), 4, cc);
  sc.seed = 17;
  sc.num_sequences = 1500;
  const double acc = segment_accuracy(clf, shuffled(make_synthetic_dataset(sc)));
  MESSAGE("accuracy after label shuffling " << acc);
  CHECK(std::abs(acc - 0.25) <= 0.05);
}

TEST_CASE("classifier configuration errors") {
  SyntheticDatasetConfig sc;
  sc.num_sequences = 8;
  sc.max_actions = 1;
  auto data = make_synthetic_dataset(sc);
  for (auto& s : data) s.script.segments[0].label = 2;
  CHECK_THROWS_AS(train_classifier(data, 4, {}), ConfigError);
  ClassifierConfig bad;
  bad.kernel = 20;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("im2col windows") {
  Matrix crop(4, 2);
  crop << 1, 2, 3, 4, 5, 6, 7, 8;
  const Matrix w = im2col(crop, 3);
  REQUIRE(w.rows() == 2);
  REQUIRE(w.cols() == 6);
  CHECK(w.row(1) == (RowVector(6) << 3, 4, 5, 6, 7, 8).finished());
}

}  // TEST_SUITE
