#pragma once

#include "martvae/model.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace martvae {

struct LossWeights {
  double kl_weight = 1e-5;
  double reconstruction_weight = 1.0;

  void validate() const;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  bool balanced_sampling = false;

  void validate() const;
};

/// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar).
double kl_divergence(const Vector& mu, const Vector& logvar);

/// Mean squared error over all T*D entries. Throws InputError on shape mismatch.
double reconstruction_loss(const Matrix& pred, const Matrix& target);

struct StepLosses {
  double reconstruction = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

/// Adam with bias correction, one moment pair per parameter tensor.
class AdamOptimizer {
 public:
  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<Matrix* const> params, std::span<const Matrix> grads, double learning_rate);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct BatchEvaluation {
  StepLosses losses;
  std::vector<Matrix> gradients;  // aligned with ModelParams::tensors()
};

/// Mean loss over the batch at fixed noise (one noise matrix per sequence), with
/// gradients when requested.
BatchEvaluation evaluate_batch(ModelParams& params, const ModelConfig& cfg, std::span<const PoseSequence> batch,
                               std::span<const Matrix> noise, const LossWeights& weights, bool with_gradients);

/// Scales gradients in place so their global L2 norm is at most `max_norm`. Returns the pre-clip norm.
double clip_global_norm(std::vector<Matrix>& grads, double max_norm);

/// One optimizer step on the batch. Throws TrainingError on a non-finite loss.
StepLosses train_step(ModelParams& params, const ModelConfig& cfg, std::span<const PoseSequence> batch,
                      const LossWeights& weights, AdamOptimizer& optimizer, const TrainConfig& train,
                      std::mt19937_64& rng);

struct StepRecord {
  long step = 0;
  StepLosses losses;
  double wall_ms = 0.0;
};

/// Epoch loop: shuffled (or class-balanced) batches, one train_step each.
std::vector<StepRecord> train_model(ModelParams& params, const ModelConfig& cfg, const std::vector<PoseSequence>& data,
                                    const TrainConfig& train, const LossWeights& weights,
                                    const std::function<void(const StepRecord&)>& on_step = {});

/// CSV line `step,recon,kl,total,wall_ms` (header via training_log_header()).
std::string training_log_header();
std::string training_log_row(const StepRecord& r);

struct GradcheckReport {
  double max_relative_error = 0.0;
  int coordinates = 0;
};

/// Compares `analytic` against central differences of `loss` on `coordinates` randomly
/// chosen entries of `tensors`. Relative error is |a - n| / max(|a|, |n|, floor).
GradcheckReport gradcheck_function(std::span<Matrix* const> tensors, std::span<const Matrix> analytic,
                                   const std::function<double()>& loss, double eps, int coordinates,
                                   std::uint64_t seed, double floor = 1e-6);

/// Full-model check: analytic gradient of the batch loss versus central differences.
GradcheckReport gradcheck(ModelParams& params, const ModelConfig& cfg, std::span<const PoseSequence> batch,
                          const LossWeights& weights, double eps, int coordinates = 200, std::uint64_t seed = 0);

}  // namespace martvae
