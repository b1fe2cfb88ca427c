#include "martvae/errors.hpp"
#include "martvae/synthetic.hpp"
#include "martvae/training.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace martvae;

namespace {

ModelConfig tiny(Variant v = Variant::kFull, int slots = 0) {
  ModelConfig c;
  c.latent_dim = 8;
  c.action_embed_dim = 4;
  c.encoder.model_dim = 16;
  c.encoder.heads = 2;
  c.encoder.ffn_dim = 16;
  c.decoder = c.encoder;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.variant = v;
  c.baseline_slots = slots;
  return c;
}

std::vector<PoseSequence> toy_data(int n, std::uint64_t seed = 3) {
  SyntheticDatasetConfig sc;
  sc.num_sequences = n;
  sc.seed = seed;
  sc.min_segment_frames = 12;
  sc.max_segment_frames = 16;
  return make_synthetic_dataset(sc);
}

double mean_abs(const std::vector<DistParams>& d, bool logvar) {
  double s = 0.0;
  long n = 0;
  for (const auto& p : d) {
    s += (logvar ? p.logvar : p.mu).cwiseAbs().sum();
    n += p.mu.size();
  }
  return s / static_cast<double>(n);
}

std::vector<DistParams> encode_all(const ModelParams& p, const ModelConfig& cfg, const std::vector<PoseSequence>& d) {
  std::vector<DistParams> out;
  for (const auto& s : d)
    for (auto& x : encode_sequence(p, cfg, s)) out.push_back(x);
  return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("KL closed forms") {
  for (int d : {1, 4, 32}) CHECK(kl_divergence(Vector::Zero(d), Vector::Zero(d)) == 0.0);
  CHECK(kl_divergence(Vector::Ones(1), Vector::Zero(1)) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::abs(kl_divergence(Vector::Zero(1), Vector::Ones(1)) - (std::exp(1.0) - 2.0) / 2.0) < 1e-12);
  CHECK_THROWS_AS(kl_divergence(Vector::Zero(2), Vector::Zero(3)), InputError);
}

TEST_CASE("KL is non-negative") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    const Matrix mu = oracle::random_matrix(6, 1, rng) * 3.0;
    const Matrix lv = oracle::random_matrix(6, 1, rng) * 3.0;
    CHECK(kl_divergence(mu, lv) >= 0.0);
  }
}

TEST_CASE("reconstruction loss") {
  std::mt19937_64 rng(2);
  const Matrix a = oracle::random_matrix(7, 5, rng), b = oracle::random_matrix(7, 5, rng);
  CHECK(reconstruction_loss(a, a) == 0.0);
  CHECK(reconstruction_loss(Matrix(a.array() + 1.0), a) == doctest::Approx(1.0).epsilon(1e-14));
  double s = 0.0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 5; ++j) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  CHECK(std::abs(reconstruction_loss(a, b) - s / 35.0) < 1e-12);
  CHECK_THROWS_AS(reconstruction_loss(a, Matrix(a.leftCols(4))), InputError);
}

TEST_CASE("reported total equals reconstruction plus weighted KL") {
  const auto cfg = tiny();
  auto p = ModelParams::init(cfg, 1);
  const auto data = toy_data(4);
  std::mt19937_64 rng(4);
  std::vector<Matrix> noise;
  for (const auto& s : data) noise.push_back(draw_training_noise(cfg, s, rng));
  for (double lambda : {0.0, 1e-5, 0.37, 10.0}) {
    LossWeights w;
    w.kl_weight = lambda;
    const auto e = evaluate_batch(p, cfg, data, noise, w, false);
    CHECK(std::abs(e.losses.total - (e.losses.reconstruction + lambda * e.losses.kl)) < 1e-12);
  }
}

TEST_CASE("invalid configs are rejected") {
  LossWeights w;
  w.kl_weight = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  TrainConfig t;
  t.learning_rate = 0.0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = {};
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const auto cfg = tiny();
  const auto data = toy_data(6);
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 3;
  t.learning_rate = 1e-3;
  t.seed = 9;
  auto run = [&] {
    auto p = ModelParams::init(cfg, 2);
    std::vector<double> trace;
    for (const auto& r : train_model(p, cfg, data, t, {})) trace.push_back(r.losses.total);
    return trace;
  };
  const auto a = run();
  CHECK(a.size() == 4);
  CHECK(a == run());
}

TEST_CASE("a single two-action sequence can be overfit") {
  const auto cfg = tiny();
  auto p = ModelParams::init(cfg, 3);
  const std::vector<PoseSequence> one{make_synthetic_sequence({}, {0, 2}, 17)};
  TrainConfig t;
  t.epochs = 200;
  t.batch_size = 1;
  t.learning_rate = 3e-3;
  LossWeights w;
  const auto rec = train_model(p, cfg, one, t, w);
  const double first = rec.front().losses.reconstruction, last = rec.back().losses.reconstruction;
  MESSAGE("reconstruction " << first << " -> " << last);
  CHECK(last <= 0.1 * first);
}

TEST_CASE("the KL weight regularizes posterior means toward zero") {
  const auto cfg = tiny();
  const auto data = toy_data(8);
  TrainConfig t;
  t.epochs = 40;
  t.batch_size = 4;
  t.learning_rate = 3e-3;
  auto fit = [&](double lambda, const TrainConfig& tc) {
    auto p = ModelParams::init(cfg, 4);
    LossWeights w;
    w.kl_weight = lambda;
    train_model(p, cfg, data, tc, w);
    return encode_all(p, cfg, data);
  };
  // The collapse is slow while the decoder is still fitting; give it 2000 steps.
  TrainConfig slow = t;
  slow.learning_rate = 1e-3;
  slow.epochs = 1000;
  const auto free = fit(0.0, t), tight = fit(10.0, t), huge = fit(1e4, slow);
  MESSAGE("mean |mu|: lambda=0 " << mean_abs(free, false) << ", lambda=10 " << mean_abs(tight, false)
                                 << ", lambda=1e4 " << mean_abs(huge, false));
  CHECK(mean_abs(free, false) > mean_abs(tight, false));
  CHECK(mean_abs(huge, false) < 1e-2);
  CHECK(mean_abs(huge, true) < 1e-2);
}

TEST_CASE("gradcheck is exact on a quadratic") {
  std::mt19937_64 rng(5);
  Matrix x = oracle::random_matrix(4, 3, rng);
  const Matrix a = oracle::random_matrix(4, 3, rng).cwiseAbs();
  auto loss = [&] { return 0.5 * (a.array() * x.array().square()).sum(); };
  const Matrix grad = a.cwiseProduct(x);
  std::vector<Matrix*> ts{&x};
  std::vector<Matrix> gs{grad};
  const auto r = gradcheck_function(ts, gs, loss, 1e-3, 1000, 1);
  CHECK(r.coordinates == 12);
  CHECK(r.max_relative_error <= 1e-9);
}

TEST_CASE("full-model gradients match central differences for every variant") {
  const auto data = toy_data(2, 8);
  LossWeights w;
  w.kl_weight = 0.1;
  for (auto [v, m] : std::vector<std::pair<Variant, int>>{{Variant::kFull, 0},
                                                           {Variant::kAverageStats, 0},
                                                           {Variant::kAllDiffLatent, 0},
                                                           {Variant::kSingleLatent, 0},
                                                           {Variant::kNoLookBackAhead, 0},
                                                           {Variant::kBaselineSplit, 4}}) {
    CAPTURE(variant_name(v, m));
    const auto cfg = tiny(v, m);
    auto p = ModelParams::init(cfg, 6);
    const auto r = gradcheck(p, cfg, data, w, 1e-4, 200, 7);
    CHECK(r.coordinates == 200);
    CHECK(r.max_relative_error <= 1e-3);
  }
}

TEST_CASE("a larger finite-difference step does not improve the check") {
  const auto cfg = tiny();
  const auto data = toy_data(2, 8);
  auto p = ModelParams::init(cfg, 6);
  const auto fine = gradcheck(p, cfg, data, {}, 1e-4, 200, 7);
  const auto coarse = gradcheck(p, cfg, data, {}, 1e-2, 200, 7);
  MESSAGE("eps 1e-4: " << fine.max_relative_error << ", eps 1e-2: " << coarse.max_relative_error);
  CHECK(coarse.max_relative_error >= fine.max_relative_error);
}

TEST_CASE("balanced sampling does not change the loss of a fixed batch") {
  const auto cfg = tiny();
  auto p = ModelParams::init(cfg, 7);
  const auto data = toy_data(4);
  std::mt19937_64 rng(1);
  std::vector<Matrix> noise;
  for (const auto& s : data) noise.push_back(draw_training_noise(cfg, s, rng));
  TrainConfig a, b;
  b.balanced_sampling = true;
  const auto la = evaluate_batch(p, cfg, data, noise, {}, false).losses;
  const auto lb = evaluate_batch(p, cfg, data, noise, {}, false).losses;
  CHECK(la.total == lb.total);

  a.epochs = b.epochs = 1;
  a.batch_size = b.batch_size = 4;
  auto pa = ModelParams::init(cfg, 7), pb = ModelParams::init(cfg, 7);
  CHECK(train_model(pa, cfg, data, a, {}).size() == train_model(pb, cfg, data, b, {}).size());
}

TEST_CASE("non-finite loss raises a training error") {
  const auto cfg = tiny();
  auto p = ModelParams::init(cfg, 8);
  auto data = toy_data(2);
  data[1].frames(3, 2) = std::numeric_limits<double>::infinity();
  AdamOptimizer opt;
  std::mt19937_64 rng(1);
  try {
    train_step(p, cfg, data, {}, opt, {}, rng);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
  }
}

TEST_CASE("clipping bounds the global norm") {
  std::vector<Matrix> g{Matrix::Constant(2, 2, 3.0), Matrix::Constant(1, 3, 4.0)};
  const double before = std::sqrt(4 * 9.0 + 3 * 16.0);
  CHECK(clip_global_norm(g, 1.0) == doctest::Approx(before));
  double after = 0.0;
  for (const auto& m : g) after += m.squaredNorm();
  CHECK(std::sqrt(after) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("training log rows") {
  StepRecord r{3, {0.5, 0.25, 0.75}, 1.5};
  CHECK(training_log_header() == "step,recon,kl,total,wall_ms");
  CHECK(training_log_row(r) == "3,0.5,0.25,0.75,1.500");
}

}  // TEST_SUITE
