#pragma once

#include "martvae/autograd.hpp"
#include "martvae/linear_attention.hpp"
#include "martvae/motion.hpp"

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace martvae {

enum class Variant {
  kFull,
  kAverageStats,     // posterior averaged over the segment instead of read at its end
  kAllDiffLatent,    // fresh noise for every decoded frame
  kSingleLatent,     // one noise draw shared by all actions
  kNoLookBackAhead,  // decoder frame t attends only to the latent of its own action
  kBaselineSplit,    // one sequence-level latent cut into M sub-vectors
};

std::string variant_name(Variant v, int baseline_slots = 0);
/// Accepts full | avg-stats | all-diff-latent | single-latent | no-lba | baseline:M.
std::pair<Variant, int> parse_variant(const std::string& text);

struct ModelConfig {
  int latent_dim = 32;
  int num_actions = 4;
  int pose_dim = 24;
  int joints = 8;     // skeleton metadata echoed into generated sequences
  double fps = 30.0;
  int action_embed_dim = 16;
  AttentionConfig encoder{};
  AttentionConfig decoder{};
  int encoder_layers = 2;
  int decoder_layers = 2;
  int max_position = 100000;
  Variant variant = Variant::kFull;
  int baseline_slots = 0;  // M, only for kBaselineSplit

  void validate() const;
};

/// Posterior of one action: N(mu, exp(logvar)).
struct DistParams {
  Vector mu;
  Vector logvar;
  int action_label = 0;
  int end_frame = 0;

  Vector sigma() const { return (0.5 * logvar.array()).exp(); }
};

/// k x d stacked latents (one row per action, script order) plus what is needed to
/// resample them per frame.
struct LatentSet {
  Matrix z;
  std::vector<int> labels;
  Matrix mu;     // k x d, zero for prior samples
  Matrix sigma;  // k x d, one for prior samples

  int size() const { return static_cast<int>(z.rows()); }
};

/// Pre-norm decoder block: causal linear self-attention over the query stream,
/// softmax cross-attention over the stacked latents, feed-forward.
struct DecoderBlockParams {
  LayerNormParams norm1;
  Matrix wq, wk, wv;
  Linear self_out;
  LayerNormParams norm2;
  Matrix cq, ck, cv;
  Linear cross_out;
  LayerNormParams norm3;
  Linear ffn1, ffn2;

  static DecoderBlockParams init(const AttentionConfig& cfg, std::mt19937_64& rng);
  void visit(const ParamVisitor& f, const std::string& prefix);
};

struct ModelParams {
  Matrix encoder_action_embedding;  // C x e
  Linear encoder_input;             // (D + e) -> d_m
  std::vector<BlockParams> encoder_blocks;
  LayerNormParams encoder_norm;
  Linear mu_head;                   // d_m -> d
  Linear logvar_head;               // d_m -> d
  Matrix latent_action_embedding;   // C x d
  Linear baseline_projection;       // floor(d/M) -> d, baseline only
  Linear memory_projection;         // d -> d_m (decoder), plus sinusoidal slot index
  Linear query_projection;          // d_m -> d_m (decoder)
  std::vector<DecoderBlockParams> decoder_blocks;
  LayerNormParams decoder_norm;
  Linear pose_head;                 // d_m -> D

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);
  /// Visits every tensor in a fixed order with a stable dotted name.
  void visit(const ParamVisitor& f);
  std::vector<Matrix*> tensors();
  std::size_t parameter_count();
};

/// Sinusoidal positional embedding of frame t, width `dim`.
RowVector positional_embedding(int t, int dim);
Matrix positional_embeddings(int frames, int dim);

/// Per-frame encoder conditioning weights (T x C): the mean over segments active at t.
Matrix action_activity(const ActionScript& script, int frames, int num_actions);

/// Index of the segment that owns frame t: the latest-starting segment with start <= t
/// (segment 0 before the first start).
int frame_owner(const ActionScript& script, int t);

/// Streams per-frame posterior heads and keeps, per segment, the value at its end frame
/// (or the running mean over the segment for kAverageStats, or the final frame for the
/// baseline).
class PosteriorCapture {
 public:
  PosteriorCapture(const ActionScript& script, int frames, Variant variant);
  void observe(int t, const Vector& mu, const Vector& logvar);
  std::vector<DistParams> result() const;

 private:
  ActionScript script_;
  int frames_;
  Variant variant_;
  std::vector<DistParams> captured_;
  std::vector<int> seen_;
};

/// Recurrent (constant-memory) encoder pass. Throws InputError for out-of-vocabulary labels.
std::vector<DistParams> encode_sequence(const ModelParams& params, const ModelConfig& cfg, const PoseSequence& seq);

/// Splits z into M contiguous chunks of floor(d/M); trailing entries are unused.
std::vector<Vector> baseline_split_latent(const Vector& z, int slots);

/// Reparameterised draw z_i = mu_i + sigma_i * eps_i plus the latent action embedding.
/// `eps` overrides the random draw (k x d, or 1 x d for single-latent / baseline).
LatentSet sample_latents(const std::vector<DistParams>& dist, const ModelParams& params, const ModelConfig& cfg,
                         std::mt19937_64& rng, const Matrix* eps = nullptr);

/// Latents drawn from the N(0, I) prior for the given labels.
LatentSet sample_prior_latents(const std::vector<int>& labels, const ModelParams& params, const ModelConfig& cfg,
                               std::mt19937_64& rng);

/// Per-frame noise for kAllDiffLatent decoding: returns the k x d eps used at frame t.
using FrameNoise = std::function<Matrix(int frame)>;

/// Frame-by-frame decoder with constant per-frame state.
class DecoderStream {
 public:
  DecoderStream(const ModelParams& params, const ModelConfig& cfg, LatentSet latents,
                std::optional<ActionScript> boundaries, FrameNoise frame_noise = {});
  /// Emits the pose for the next frame.
  RowVector next();
  int frame() const { return t_; }
  std::size_t state_bytes() const { return state_.byte_size(); }

 private:
  Matrix memory_for_frame(int t) const;

  const ModelParams& params_;
  const ModelConfig& cfg_;
  LatentSet latents_;
  std::optional<ActionScript> boundaries_;
  FrameNoise frame_noise_;
  Matrix memory_keys_;  // per block, stacked; only for shared memory
  Matrix memory_;       // projected latents (k x d_m)
  RecurrentState state_;
  int t_ = 0;
};

/// Decodes T frames. kNoLookBackAhead requires boundaries; kAllDiffLatent requires frame noise.
Matrix decode_sequence(const ModelParams& params, const ModelConfig& cfg, const LatentSet& latents, int frames,
                       const ActionScript* boundaries = nullptr, FrameNoise frame_noise = {});

/// Equal partition of T frames over k labels; segment i is [floor(iT/k), floor((i+1)T/k) - 1].
ActionScript equal_partition(const std::vector<int>& labels, int frames);

/// Samples from the prior, decodes T frames, and records the equal-partition spans.
PoseSequence generate(const ModelParams& params, const ModelConfig& cfg, const std::vector<int>& labels, int frames,
                      std::mt19937_64& rng);

// ---- differentiable training path ----

/// Standard-normal noise used by one training forward pass. Shape depends on the variant:
/// k x d (full, avg-stats, no-lba), 1 x d (single-latent, baseline), (T*k) x d (all-diff-latent).
Matrix draw_training_noise(const ModelConfig& cfg, const PoseSequence& seq, std::mt19937_64& rng);

struct ForwardGraph {
  ad::Var reconstruction;  // T x D
  ad::Var mu;              // posterior rows
  ad::Var logvar;
  ad::Var recon_loss;      // 1 x 1
  ad::Var kl_loss;         // 1 x 1, mean KL per posterior row
};

/// Parallel-form forward pass over one sequence, recorded on `tape`.
ForwardGraph forward_graph(ad::Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                           const PoseSequence& seq, const Matrix& noise);

}  // namespace martvae
