#include "martvae/model.hpp"

#include "martvae/errors.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace martvae {

std::string variant_name(Variant v, int baseline_slots) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kAverageStats: return "avg-stats";
    case Variant::kAllDiffLatent: return "all-diff-latent";
    case Variant::kSingleLatent: return "single-latent";
    case Variant::kNoLookBackAhead: return "no-lba";
    case Variant::kBaselineSplit: return "baseline:" + std::to_string(baseline_slots);
  }
  return "unknown";
}

std::pair<Variant, int> parse_variant(const std::string& text) {
  if (text == "full") return {Variant::kFull, 0};
  if (text == "avg-stats") return {Variant::kAverageStats, 0};
  if (text == "all-diff-latent") return {Variant::kAllDiffLatent, 0};
  if (text == "single-latent") return {Variant::kSingleLatent, 0};
  if (text == "no-lba") return {Variant::kNoLookBackAhead, 0};
  if (text.rfind("baseline:", 0) == 0) {
    const std::string m = text.substr(9);
    std::size_t used = 0;
    int slots = 0;
    try {
      slots = std::stoi(m, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != m.size() || slots < 1) throw ConfigError("variant: bad baseline slot count '" + m + "'");
    return {Variant::kBaselineSplit, slots};
  }
  throw ConfigError("unknown variant '" + text + "'");
}

void ModelConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("model: latent_dim must be >= 1");
  if (num_actions < 1) throw ConfigError("model: num_actions must be >= 1");
  if (pose_dim < 1) throw ConfigError("model: pose_dim must be >= 1");
  if (action_embed_dim < 1) throw ConfigError("model: action_embed_dim must be >= 1");
  if (encoder_layers < 1 || decoder_layers < 1) throw ConfigError("model: layer counts must be >= 1");
  if (max_position < 1) throw ConfigError("model: max_position must be >= 1");
  encoder.validate();
  decoder.validate();
  if (variant == Variant::kBaselineSplit) {
    if (baseline_slots < 1) throw ConfigError("model: baseline needs M >= 1");
    if (latent_dim < baseline_slots) throw ConfigError("model: baseline needs latent_dim >= M");
  }
}

DecoderBlockParams DecoderBlockParams::init(const AttentionConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const int d = cfg.model_dim;
  DecoderBlockParams b;
  b.norm1 = LayerNormParams::init(d);
  b.wq = Linear::init(d, d, rng, false).weight;
  b.wk = Linear::init(d, d, rng, false).weight;
  b.wv = Linear::init(d, d, rng, false).weight;
  b.self_out = Linear::init(d, d, rng);
  b.norm2 = LayerNormParams::init(d);
  b.cq = Linear::init(d, d, rng, false).weight;
  b.ck = Linear::init(d, d, rng, false).weight;
  b.cv = Linear::init(d, d, rng, false).weight;
  b.cross_out = Linear::init(d, d, rng);
  b.norm3 = LayerNormParams::init(d);
  b.ffn1 = Linear::init(d, cfg.ffn_dim, rng);
  b.ffn2 = Linear::init(cfg.ffn_dim, d, rng);
  return b;
}

void DecoderBlockParams::visit(const ParamVisitor& f, const std::string& prefix) {
  norm1.visit(f, prefix + ".norm1");
  f(prefix + ".wq", wq);
  f(prefix + ".wk", wk);
  f(prefix + ".wv", wv);
  self_out.visit(f, prefix + ".self_out");
  norm2.visit(f, prefix + ".norm2");
  f(prefix + ".cq", cq);
  f(prefix + ".ck", ck);
  f(prefix + ".cv", cv);
  cross_out.visit(f, prefix + ".cross_out");
  norm3.visit(f, prefix + ".norm3");
  ffn1.visit(f, prefix + ".ffn1");
  ffn2.visit(f, prefix + ".ffn2");
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  ModelParams p;
  p.encoder_action_embedding = Matrix::NullaryExpr(cfg.num_actions, cfg.action_embed_dim, [&] { return unit(rng); });
  p.encoder_input = Linear::init(cfg.pose_dim + cfg.action_embed_dim, cfg.encoder.model_dim, rng);
  for (int l = 0; l < cfg.encoder_layers; ++l) p.encoder_blocks.push_back(BlockParams::init(cfg.encoder, rng));
  p.encoder_norm = LayerNormParams::init(cfg.encoder.model_dim);
  p.mu_head = Linear::init(cfg.encoder.model_dim, cfg.latent_dim, rng);
  p.logvar_head = Linear::init(cfg.encoder.model_dim, cfg.latent_dim, rng);
  p.latent_action_embedding = Matrix::NullaryExpr(cfg.num_actions, cfg.latent_dim, [&] { return unit(rng); });
  if (cfg.variant == Variant::kBaselineSplit)
    p.baseline_projection = Linear::init(cfg.latent_dim / cfg.baseline_slots, cfg.latent_dim, rng);
  p.memory_projection = Linear::init(cfg.latent_dim, cfg.decoder.model_dim, rng);
  p.query_projection = Linear::init(cfg.decoder.model_dim, cfg.decoder.model_dim, rng);
  for (int l = 0; l < cfg.decoder_layers; ++l) p.decoder_blocks.push_back(DecoderBlockParams::init(cfg.decoder, rng));
  p.decoder_norm = LayerNormParams::init(cfg.decoder.model_dim);
  p.pose_head = Linear::init(cfg.decoder.model_dim, cfg.pose_dim, rng);
  return p;
}

void ModelParams::visit(const ParamVisitor& f) {
  f("encoder.action_embedding", encoder_action_embedding);
  encoder_input.visit(f, "encoder.input");
  for (std::size_t l = 0; l < encoder_blocks.size(); ++l)
    encoder_blocks[l].visit(f, "encoder.block" + std::to_string(l));
  encoder_norm.visit(f, "encoder.norm");
  mu_head.visit(f, "posterior.mu");
  logvar_head.visit(f, "posterior.logvar");
  f("latent.action_embedding", latent_action_embedding);
  if (baseline_projection.weight.size() != 0) baseline_projection.visit(f, "latent.baseline_projection");
  memory_projection.visit(f, "decoder.memory");
  query_projection.visit(f, "decoder.query");
  for (std::size_t l = 0; l < decoder_blocks.size(); ++l)
    decoder_blocks[l].visit(f, "decoder.block" + std::to_string(l));
  decoder_norm.visit(f, "decoder.norm");
  pose_head.visit(f, "decoder.pose_head");
}

std::vector<Matrix*> ModelParams::tensors() {
  std::vector<Matrix*> out;
  visit([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

std::size_t ModelParams::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

RowVector positional_embedding(int t, int dim) {
  RowVector pe(dim);
  for (int i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
    pe[i] = std::sin(t * freq);
    if (i + 1 < dim) pe[i + 1] = std::cos(t * freq);
  }
  return pe;
}

Matrix positional_embeddings(int frames, int dim) {
  Matrix pe(frames, dim);
  for (int t = 0; t < frames; ++t) pe.row(t) = positional_embedding(t, dim);
  return pe;
}

namespace {

RowVector activity_row(const ActionScript& script, int t, int num_actions) {
  RowVector a = RowVector::Zero(num_actions);
  const auto labels = active_labels(script, t);
  for (int l : labels) a[l] += 1.0 / static_cast<double>(labels.size());
  return a;
}

void check_labels(const std::vector<int>& labels, int num_actions) {
  for (int l : labels)
    if (l < 0 || l >= num_actions)
      throw InputError("action label " + std::to_string(l) + " outside vocabulary of " + std::to_string(num_actions));
}

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = nd(rng);
  return m;
}

Matrix embedding_rows(const Matrix& table, const std::vector<int>& labels) {
  Matrix out(static_cast<Eigen::Index>(labels.size()), table.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = table.row(labels[i]);
  return out;
}

}  // namespace

Matrix action_activity(const ActionScript& script, int frames, int num_actions) {
  Matrix a(frames, num_actions);
  for (int t = 0; t < frames; ++t) a.row(t) = activity_row(script, t, num_actions);
  return a;
}

int frame_owner(const ActionScript& script, int t) {
  int owner = 0;
  int best_start = std::numeric_limits<int>::min();
  for (std::size_t i = 0; i < script.size(); ++i) {
    const int s = script.segments[i].start;
    if (s <= t && s >= best_start) {
      best_start = s;
      owner = static_cast<int>(i);
    }
  }
  return owner;
}

PosteriorCapture::PosteriorCapture(const ActionScript& script, int frames, Variant variant)
    : script_(script), frames_(frames), variant_(variant) {
  captured_.resize(script.size());
  seen_.assign(script.size(), 0);
  for (std::size_t i = 0; i < script.size(); ++i) {
    captured_[i].action_label = script.segments[i].label;
    captured_[i].end_frame = variant == Variant::kBaselineSplit ? frames - 1 : script.segments[i].end;
  }
}

void PosteriorCapture::observe(int t, const Vector& mu, const Vector& logvar) {
  for (std::size_t i = 0; i < script_.size(); ++i) {
    const auto& seg = script_.segments[i];
    auto& c = captured_[i];
    switch (variant_) {
      case Variant::kBaselineSplit:
        if (t == frames_ - 1) {
          c.mu = mu;
          c.logvar = logvar;
          seen_[i] = 1;
        }
        break;
      case Variant::kAverageStats:
        if (seg.contains(t)) {
          if (seen_[i] == 0) {
            c.mu = mu;
            c.logvar = logvar;
          } else {
            c.mu += mu;
            c.logvar += logvar;
          }
          ++seen_[i];
          if (t == seg.end) {
            c.mu /= static_cast<double>(seen_[i]);
            c.logvar /= static_cast<double>(seen_[i]);
          }
        }
        break;
      default:
        if (t == seg.end) {
          c.mu = mu;
          c.logvar = logvar;
          seen_[i] = 1;
        }
        break;
    }
  }
}

std::vector<DistParams> PosteriorCapture::result() const {
  for (std::size_t i = 0; i < captured_.size(); ++i)
    if (seen_[i] == 0) throw InputError("posterior for segment " + std::to_string(i) + " was never observed");
  return captured_;
}

std::vector<DistParams> encode_sequence(const ModelParams& params, const ModelConfig& cfg, const PoseSequence& seq) {
  const int T = seq.num_frames();
  if (T < 1 || seq.script.empty()) throw InputError("encode_sequence: empty sequence or script");
  if (seq.pose_dim() != cfg.pose_dim)
    throw InputError("encode_sequence: pose dim " + std::to_string(seq.pose_dim()) + " != model " +
                     std::to_string(cfg.pose_dim));
  check_labels(seq.script.labels(), cfg.num_actions);
  for (const auto& s : seq.script.segments)
    if (s.start < 0 || s.end >= T || s.start > s.end) throw InputError("encode_sequence: segment outside sequence");

  RecurrentState state = RecurrentState::zeros(cfg.encoder_layers, cfg.encoder);
  PosteriorCapture capture(seq.script, T, cfg.variant);
  RowVector input(cfg.pose_dim + cfg.action_embed_dim);
  for (int t = 0; t < T; ++t) {
    input.head(cfg.pose_dim) = seq.frames.row(t);
    input.tail(cfg.action_embed_dim) = activity_row(seq.script, t, cfg.num_actions) * params.encoder_action_embedding;
    RowVector x = params.encoder_input.apply(input) + positional_embedding(t, cfg.encoder.model_dim);
    for (std::size_t l = 0; l < params.encoder_blocks.size(); ++l)
      x = block_step(state.layers[l], x, params.encoder_blocks[l], cfg.encoder);
    const Matrix h = params.encoder_norm.apply(x);
    capture.observe(t, params.mu_head.apply(h).row(0).transpose(), params.logvar_head.apply(h).row(0).transpose());
  }
  return capture.result();
}

std::vector<Vector> baseline_split_latent(const Vector& z, int slots) {
  if (slots < 1) throw ConfigError("baseline split: M must be >= 1");
  if (z.size() < slots)
    throw ConfigError("baseline split: latent dim " + std::to_string(z.size()) + " < M " + std::to_string(slots));
  const Eigen::Index chunk = z.size() / slots;
  std::vector<Vector> out;
  for (int i = 0; i < slots; ++i) out.push_back(z.segment(i * chunk, chunk));
  return out;
}

LatentSet sample_latents(const std::vector<DistParams>& dist, const ModelParams& params, const ModelConfig& cfg,
                         std::mt19937_64& rng, const Matrix* eps) {
  if (dist.empty()) throw InputError("sample_latents: no posteriors");
  const auto k = static_cast<Eigen::Index>(dist.size());
  const int d = cfg.latent_dim;
  LatentSet out;
  out.mu.resize(k, d);
  out.sigma.resize(k, d);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& p = dist[static_cast<std::size_t>(i)];
    if (p.mu.size() != d || p.logvar.size() != d) throw InputError("sample_latents: posterior width mismatch");
    out.labels.push_back(p.action_label);
    out.mu.row(i) = p.mu.transpose();
    out.sigma.row(i) = p.sigma().transpose();
  }
  check_labels(out.labels, cfg.num_actions);
  const Matrix embed = embedding_rows(params.latent_action_embedding, out.labels);

  const bool shared = cfg.variant == Variant::kSingleLatent || cfg.variant == Variant::kBaselineSplit;
  const Eigen::Index noise_rows = shared ? 1 : k;
  Matrix noise = eps ? *eps : normal_matrix(noise_rows, d, rng);
  if (noise.rows() != noise_rows || noise.cols() != d) throw InputError("sample_latents: noise shape mismatch");

  if (cfg.variant == Variant::kBaselineSplit) {
    if (k > cfg.baseline_slots)
      throw InputError("baseline: " + std::to_string(k) + " actions exceed M = " + std::to_string(cfg.baseline_slots));
    const Vector z = out.mu.row(0).transpose() + out.sigma.row(0).transpose().cwiseProduct(noise.row(0).transpose());
    const auto chunks = baseline_split_latent(z, cfg.baseline_slots);
    Matrix stacked(k, chunks[0].size());
    for (Eigen::Index i = 0; i < k; ++i) stacked.row(i) = chunks[static_cast<std::size_t>(i)].transpose();
    out.z = params.baseline_projection.apply(stacked) + embed;
    return out;
  }
  if (shared) noise = Matrix(noise.replicate(k, 1));
  out.z = out.mu + out.sigma.cwiseProduct(noise) + embed;
  return out;
}

LatentSet sample_prior_latents(const std::vector<int>& labels, const ModelParams& params, const ModelConfig& cfg,
                               std::mt19937_64& rng) {
  check_labels(labels, cfg.num_actions);
  std::vector<DistParams> prior;
  for (int l : labels)
    prior.push_back({Vector::Zero(cfg.latent_dim), Vector::Zero(cfg.latent_dim), l, 0});
  return sample_latents(prior, params, cfg, rng);
}

namespace {

// Softmax attention of one query row over the memory rows flagged in `allowed` (all if empty).
RowVector cross_attend(const RowVector& q, const Matrix& keys, const Matrix& values, int heads, int only_row) {
  const Eigen::Index dm = q.size();
  const Eigen::Index dh = dm / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  RowVector out = RowVector::Zero(dm);
  Vector w(keys.rows());
  for (int h = 0; h < heads; ++h) {
    if (only_row >= 0) {
      out.segment(h * dh, dh) = values.row(only_row).segment(h * dh, dh);
      continue;
    }
    for (Eigen::Index i = 0; i < keys.rows(); ++i) w[i] = sc * q.segment(h * dh, dh).dot(keys.row(i).segment(h * dh, dh));
    w = (w.array() - w.maxCoeff()).exp();
    w /= w.sum();
    for (Eigen::Index i = 0; i < keys.rows(); ++i) out.segment(h * dh, dh) += w[i] * values.row(i).segment(h * dh, dh);
  }
  return out;
}

}  // namespace

DecoderStream::DecoderStream(const ModelParams& params, const ModelConfig& cfg, LatentSet latents,
                             std::optional<ActionScript> boundaries, FrameNoise frame_noise)
    : params_(params),
      cfg_(cfg),
      latents_(std::move(latents)),
      boundaries_(std::move(boundaries)),
      frame_noise_(std::move(frame_noise)),
      state_(RecurrentState::zeros(cfg.decoder_layers, cfg.decoder)) {
  if (latents_.size() < 1) throw InputError("decode: empty latent set");
  if (cfg_.variant == Variant::kNoLookBackAhead) {
    if (!boundaries_) throw InputError("decode: no-lba variant requires segment boundaries");
    if (static_cast<int>(boundaries_->size()) != latents_.size())
      throw InputError("decode: boundary count differs from latent count");
  }
  if (cfg_.variant == Variant::kAllDiffLatent && !frame_noise_)
    throw InputError("decode: all-diff-latent variant requires per-frame noise");
  memory_ = params_.memory_projection.apply(latents_.z) + positional_embeddings(latents_.size(), cfg_.decoder.model_dim);
}

Matrix DecoderStream::memory_for_frame(int t) const {
  if (cfg_.variant != Variant::kAllDiffLatent) return memory_;
  const Matrix eps = frame_noise_(t);
  if (eps.rows() != latents_.mu.rows() || eps.cols() != latents_.mu.cols())
    throw InputError("decode: frame noise shape mismatch");
  const Matrix z = latents_.mu + latents_.sigma.cwiseProduct(eps) +
                   embedding_rows(params_.latent_action_embedding, latents_.labels);
  return params_.memory_projection.apply(z) + positional_embeddings(latents_.size(), cfg_.decoder.model_dim);
}

RowVector DecoderStream::next() {
  const int t = t_++;
  if (t >= cfg_.max_position) throw InputError("decode: frame index exceeds max_position");
  const Matrix memory = memory_for_frame(t);
  const int only = cfg_.variant == Variant::kNoLookBackAhead ? frame_owner(*boundaries_, t) : -1;
  RowVector x = params_.query_projection.apply(positional_embedding(t, cfg_.decoder.model_dim));
  for (std::size_t l = 0; l < params_.decoder_blocks.size(); ++l) {
    const auto& b = params_.decoder_blocks[l];
    const Matrix n1 = b.norm1.apply(x);
    x += b.self_out.apply(multihead_recurrent_step(state_.layers[l], n1 * b.wq, n1 * b.wk, n1 * b.wv,
                                                   cfg_.decoder.epsilon));
    const Matrix n2 = b.norm2.apply(x);
    // Keys are only needed when more than one memory row competes.
    const Matrix keys = only >= 0 ? Matrix() : Matrix(memory * b.ck);
    x += b.cross_out.apply(cross_attend(n2 * b.cq, keys, memory * b.cv, cfg_.decoder.heads, only));
    x += feed_forward(b.ffn1, b.ffn2, b.norm3.apply(x));
  }
  return params_.pose_head.apply(params_.decoder_norm.apply(x));
}

Matrix decode_sequence(const ModelParams& params, const ModelConfig& cfg, const LatentSet& latents, int frames,
                       const ActionScript* boundaries, FrameNoise frame_noise) {
  if (frames < 1) throw InputError("decode: T must be >= 1");
  DecoderStream stream(params, cfg, latents, boundaries ? std::optional<ActionScript>(*boundaries) : std::nullopt,
                       std::move(frame_noise));
  Matrix out(frames, cfg.pose_dim);
  for (int t = 0; t < frames; ++t) out.row(t) = stream.next();
  return out;
}

ActionScript equal_partition(const std::vector<int>& labels, int frames) {
  const auto k = static_cast<long>(labels.size());
  if (k < 1) throw InputError("equal_partition: no labels");
  if (frames < k) throw InputError("equal_partition: T must be >= number of labels");
  ActionScript script;
  for (long i = 0; i < k; ++i) {
    const int start = static_cast<int>(i * frames / k);
    const int end = static_cast<int>((i + 1) * frames / k) - 1;
    script.segments.push_back({labels[static_cast<std::size_t>(i)], start, end});
  }
  return script;
}

PoseSequence generate(const ModelParams& params, const ModelConfig& cfg, const std::vector<int>& labels, int frames,
                      std::mt19937_64& rng) {
  if (labels.empty()) throw InputError("generate: label list is empty");
  check_labels(labels, cfg.num_actions);
  if (frames < static_cast<int>(labels.size()))
    throw InputError("generate: T = " + std::to_string(frames) + " is shorter than the label list");
  const LatentSet latents = sample_prior_latents(labels, params, cfg, rng);
  PoseSequence seq;
  seq.script = equal_partition(labels, frames);
  seq.skeleton = {cfg.joints, cfg.pose_dim, cfg.fps};
  FrameNoise noise;
  if (cfg.variant == Variant::kAllDiffLatent) {
    const auto k = static_cast<Eigen::Index>(labels.size());
    const int d = cfg.latent_dim;
    noise = [&rng, k, d](int) { return normal_matrix(k, d, rng); };
  }
  seq.frames = decode_sequence(params, cfg, latents, frames, &seq.script, noise);
  return seq;
}

Matrix draw_training_noise(const ModelConfig& cfg, const PoseSequence& seq, std::mt19937_64& rng) {
  const auto k = static_cast<Eigen::Index>(seq.script.size());
  switch (cfg.variant) {
    case Variant::kSingleLatent:
    case Variant::kBaselineSplit:
      return normal_matrix(1, cfg.latent_dim, rng);
    case Variant::kAllDiffLatent:
      return normal_matrix(k * seq.num_frames(), cfg.latent_dim, rng);
    default:
      return normal_matrix(k, cfg.latent_dim, rng);
  }
}

ForwardGraph forward_graph(ad::Tape& tape, const ModelParams& params, const ModelConfig& cfg, const PoseSequence& seq,
                           const Matrix& noise) {
  const int T = seq.num_frames();
  const auto k = static_cast<int>(seq.script.size());
  if (T < 1 || k < 1) throw InputError("forward: empty sequence or script");
  if (seq.pose_dim() != cfg.pose_dim) throw InputError("forward: pose dim mismatch");
  const std::vector<int> labels = seq.script.labels();
  check_labels(labels, cfg.num_actions);

  // Encoder.
  ad::Var activity = tape.constant(action_activity(seq.script, T, cfg.num_actions));
  const std::array<ad::Var, 2> enc_parts{tape.constant(seq.frames),
                                         ad::matmul(activity, tape.parameter(params.encoder_action_embedding))};
  ad::Var h = ad::add(params.encoder_input.forward(tape, ad::concat_cols(enc_parts)),
                      tape.constant(positional_embeddings(T, cfg.encoder.model_dim)));
  for (const auto& block : params.encoder_blocks) h = block_forward(tape, h, block, cfg.encoder);
  h = params.encoder_norm.forward(tape, h);
  ad::Var mu_all = params.mu_head.forward(tape, h);
  ad::Var logvar_all = params.logvar_head.forward(tape, h);

  ForwardGraph g;
  if (cfg.variant == Variant::kAverageStats) {
    Matrix avg = Matrix::Zero(k, T);
    for (int i = 0; i < k; ++i) {
      const auto& s = seq.script.segments[static_cast<std::size_t>(i)];
      avg.row(i).segment(s.start, s.length()).setConstant(1.0 / s.length());
    }
    ad::Var a = tape.constant(std::move(avg));
    g.mu = ad::matmul(a, mu_all);
    g.logvar = ad::matmul(a, logvar_all);
  } else {
    std::vector<int> rows;
    if (cfg.variant == Variant::kBaselineSplit) rows.push_back(T - 1);
    else
      for (const auto& s : seq.script.segments) rows.push_back(s.end);
    g.mu = ad::gather_rows(mu_all, rows);
    g.logvar = ad::gather_rows(logvar_all, rows);
  }
  g.kl_loss = ad::scale(ad::kl_divergence(g.mu, g.logvar), 1.0 / static_cast<double>(g.mu.rows()));

  // Reparameterised latents.
  ad::Var sigma = ad::exp(ad::scale(g.logvar, 0.5));
  ad::Var embed_table = tape.parameter(params.latent_action_embedding);
  ad::Var z;
  bool shared_memory = true;
  switch (cfg.variant) {
    case Variant::kSingleLatent: {
      if (noise.rows() != 1) throw InputError("forward: single-latent noise must be 1 x d");
      ad::Var eps = tape.constant(noise.replicate(k, 1));
      z = ad::add(ad::add(g.mu, ad::hadamard(sigma, eps)), ad::gather_rows(embed_table, labels));
      break;
    }
    case Variant::kAllDiffLatent: {
      if (noise.rows() != static_cast<Eigen::Index>(T) * k) throw InputError("forward: all-diff noise must be (T*k) x d");
      std::vector<int> tile, tile_labels;
      for (int t = 0; t < T; ++t)
        for (int i = 0; i < k; ++i) {
          tile.push_back(i);
          tile_labels.push_back(labels[static_cast<std::size_t>(i)]);
        }
      z = ad::add(ad::add(ad::gather_rows(g.mu, tile), ad::hadamard(ad::gather_rows(sigma, tile), tape.constant(noise))),
                  ad::gather_rows(embed_table, tile_labels));
      shared_memory = false;
      break;
    }
    case Variant::kBaselineSplit: {
      if (k > cfg.baseline_slots)
        throw InputError("baseline: " + std::to_string(k) + " actions exceed M = " + std::to_string(cfg.baseline_slots));
      if (noise.rows() != 1) throw InputError("forward: baseline noise must be 1 x d");
      ad::Var zfull = ad::add(g.mu, ad::hadamard(sigma, tape.constant(noise)));
      const int chunk = cfg.latent_dim / cfg.baseline_slots;
      std::vector<ad::Var> chunks;
      for (int i = 0; i < k; ++i) chunks.push_back(ad::slice_cols(zfull, i * chunk, chunk));
      z = ad::add(params.baseline_projection.forward(tape, ad::concat_rows(chunks)),
                  ad::gather_rows(embed_table, labels));
      break;
    }
    default: {
      if (noise.rows() != k) throw InputError("forward: noise must be k x d");
      z = ad::add(ad::add(g.mu, ad::hadamard(sigma, tape.constant(noise))), ad::gather_rows(embed_table, labels));
      break;
    }
  }
  // Slot embeddings mark each latent's position in the script.
  const Matrix slots = positional_embeddings(k, cfg.decoder.model_dim);
  ad::Var memory = ad::add(params.memory_projection.forward(tape, z),
                           tape.constant(shared_memory ? slots : Matrix(slots.replicate(T, 1))));

  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> allowed;
  const bool masked = cfg.variant == Variant::kNoLookBackAhead;
  if (masked) {
    allowed.setConstant(T, k, false);
    for (int t = 0; t < T; ++t) allowed(t, frame_owner(seq.script, t)) = true;
  }

  // Decoder.
  ad::Var x = params.query_projection.forward(tape, tape.constant(positional_embeddings(T, cfg.decoder.model_dim)));
  for (const auto& b : params.decoder_blocks) {
    ad::Var n1 = b.norm1.forward(tape, x);
    ad::Var sa = ad::causal_linear_attention(ad::matmul(n1, tape.parameter(b.wq)), ad::matmul(n1, tape.parameter(b.wk)),
                                             ad::matmul(n1, tape.parameter(b.wv)), cfg.decoder.heads,
                                             cfg.decoder.epsilon);
    x = ad::add(x, b.self_out.forward(tape, sa));
    ad::Var n2 = b.norm2.forward(tape, x);
    ad::Var ca = ad::grouped_softmax_attention(ad::matmul(n2, tape.parameter(b.cq)),
                                               ad::matmul(memory, tape.parameter(b.ck)),
                                               ad::matmul(memory, tape.parameter(b.cv)), cfg.decoder.heads, k,
                                               shared_memory, masked ? &allowed : nullptr);
    x = ad::add(x, b.cross_out.forward(tape, ca));
    x = ad::add(x, feed_forward(tape, b.ffn1, b.ffn2, b.norm3.forward(tape, x)));
  }
  g.reconstruction = params.pose_head.forward(tape, params.decoder_norm.forward(tape, x));
  g.recon_loss = ad::mse(g.reconstruction, seq.frames);
  return g;
}

}  // namespace martvae
