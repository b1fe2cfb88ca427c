#include "martvae/training.hpp"

#include "martvae/errors.hpp"
#include "martvae/preprocess.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>

namespace martvae {

void LossWeights::validate() const {
  if (!(kl_weight >= 0.0) || !(reconstruction_weight >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("train: epochs and batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be > 0");
}

double kl_divergence(const Vector& mu, const Vector& logvar) {
  if (mu.size() != logvar.size()) throw InputError("kl_divergence: size mismatch");
  return 0.5 * (mu.array().square() + logvar.array().exp() - 1.0 - logvar.array()).sum();
}

double reconstruction_loss(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw InputError("reconstruction_loss: shape " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     " vs " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
  if (pred.size() == 0) throw InputError("reconstruction_loss: empty input");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

AdamOptimizer::AdamOptimizer(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamOptimizer::step(std::span<Matrix* const> params, std::span<const Matrix> grads, double learning_rate) {
  if (params.size() != grads.size()) throw InputError("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    params[i]->array() -= learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

BatchEvaluation evaluate_batch(ModelParams& params, const ModelConfig& cfg, std::span<const PoseSequence> batch,
                               std::span<const Matrix> noise, const LossWeights& weights, bool with_gradients) {
  if (batch.empty()) throw InputError("evaluate_batch: empty batch");
  if (noise.size() != batch.size()) throw InputError("evaluate_batch: one noise matrix per sequence required");
  const auto tensors = params.tensors();
  BatchEvaluation out;
  if (with_gradients)
    for (const Matrix* m : tensors) out.gradients.push_back(Matrix::Zero(m->rows(), m->cols()));
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ad::Tape tape;
    const ForwardGraph g = forward_graph(tape, params, cfg, batch[i], noise[i]);
    ad::Var loss = ad::add(ad::scale(g.recon_loss, weights.reconstruction_weight),
                           ad::scale(g.kl_loss, weights.kl_weight));
    out.losses.reconstruction += g.recon_loss.scalar() * inv_n;
    out.losses.kl += g.kl_loss.scalar() * inv_n;
    if (with_gradients) {
      tape.backward(ad::scale(loss, inv_n));
      for (std::size_t j = 0; j < tensors.size(); ++j) out.gradients[j] += tape.parameter_grad(*tensors[j]);
    }
  }
  out.losses.total = weights.reconstruction_weight * out.losses.reconstruction + weights.kl_weight * out.losses.kl;
  return out;
}

double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

StepLosses train_step(ModelParams& params, const ModelConfig& cfg, std::span<const PoseSequence> batch,
                      const LossWeights& weights, AdamOptimizer& optimizer, const TrainConfig& train,
                      std::mt19937_64& rng) {
  std::vector<Matrix> noise;
  noise.reserve(batch.size());
  for (const auto& seq : batch) noise.push_back(draw_training_noise(cfg, seq, rng));
  BatchEvaluation eval = evaluate_batch(params, cfg, batch, noise, weights, true);
  if (!std::isfinite(eval.losses.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at optimizer step " << optimizer.steps() + 1 << ": recon=" << eval.losses.reconstruction
        << " kl=" << eval.losses.kl << " total=" << eval.losses.total << " (batch of " << batch.size()
        << ", first sequence T=" << batch.front().num_frames() << ")";
    throw TrainingError(msg.str());
  }
  const double norm = clip_global_norm(eval.gradients, train.clip_norm);
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm at step " + std::to_string(optimizer.steps() + 1));
  const auto tensors = params.tensors();
  optimizer.step(tensors, eval.gradients, train.learning_rate);
  return eval.losses;
}

std::vector<StepRecord> train_model(ModelParams& params, const ModelConfig& cfg, const std::vector<PoseSequence>& data,
                                    const TrainConfig& train, const LossWeights& weights,
                                    const std::function<void(const StepRecord&)>& on_step) {
  train.validate();
  weights.validate();
  cfg.validate();
  if (data.empty()) throw InputError("train: empty dataset");
  std::mt19937_64 rng(train.seed);
  AdamOptimizer optimizer;
  std::vector<StepRecord> records;
  std::vector<std::size_t> order(data.size());
  std::optional<WeightedSampler> sampler;
  if (train.balanced_sampling) sampler.emplace(balanced_weights(data));

  long step = 0;
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    if (sampler) {
      for (auto& i : order) i = (*sampler)(rng);
    } else {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(train.batch_size)) {
      const auto start = std::chrono::steady_clock::now();
      std::vector<PoseSequence> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(train.batch_size)); ++i)
        batch.push_back(data[order[i]]);
      StepRecord rec;
      rec.step = ++step;
      rec.losses = train_step(params, cfg, batch, weights, optimizer, train, rng);
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      records.push_back(rec);
      if (on_step) on_step(rec);
    }
  }
  return records;
}

std::string training_log_header() { return "step,recon,kl,total,wall_ms"; }

std::string training_log_row(const StepRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.3f", r.step, r.losses.reconstruction, r.losses.kl,
                r.losses.total, r.wall_ms);
  return buf;
}

GradcheckReport gradcheck_function(std::span<Matrix* const> tensors, std::span<const Matrix> analytic,
                                   const std::function<double()>& loss, double eps, int coordinates,
                                   std::uint64_t seed, double floor) {
  if (tensors.size() != analytic.size()) throw InputError("gradcheck: tensor/gradient count mismatch");
  std::vector<long> offsets{0};
  for (const Matrix* m : tensors) offsets.push_back(offsets.back() + static_cast<long>(m->size()));
  const long total = offsets.back();
  if (total == 0) throw InputError("gradcheck: no parameters");

  std::mt19937_64 rng(seed);
  std::vector<long> picks;
  if (coordinates >= total) {
    picks.resize(static_cast<std::size_t>(total));
    std::iota(picks.begin(), picks.end(), 0L);
  } else {
    std::uniform_int_distribution<long> pick(0, total - 1);
    for (int i = 0; i < coordinates; ++i) picks.push_back(pick(rng));
  }

  GradcheckReport report;
  for (long flat : picks) {
    const auto it = std::upper_bound(offsets.begin(), offsets.end(), flat) - 1;
    const auto ti = static_cast<std::size_t>(it - offsets.begin());
    const long local = flat - *it;
    double& x = tensors[ti]->data()[local];
    const double saved = x;
    x = saved + eps;
    const double up = loss();
    x = saved - eps;
    const double down = loss();
    x = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[ti].data()[local];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    report.max_relative_error = std::max(report.max_relative_error, std::abs(a - numeric) / denom);
    ++report.coordinates;
  }
  return report;
}

GradcheckReport gradcheck(ModelParams& params, const ModelConfig& cfg, std::span<const PoseSequence> batch,
                          const LossWeights& weights, double eps, int coordinates, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Matrix> noise;
  for (const auto& seq : batch) noise.push_back(draw_training_noise(cfg, seq, rng));
  const BatchEvaluation eval = evaluate_batch(params, cfg, batch, noise, weights, true);
  const auto tensors = params.tensors();
  auto loss = [&] { return evaluate_batch(params, cfg, batch, noise, weights, false).losses.total; };
  return gradcheck_function(tensors, eval.gradients, loss, eps, coordinates, seed ^ 0xabcdefULL);
}

}  // namespace martvae
