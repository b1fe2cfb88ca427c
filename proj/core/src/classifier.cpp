#include "martvae/classifier.hpp"

#include "martvae/errors.hpp"
#include "martvae/sequence_io.hpp"
#include "martvae/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace martvae {

void ClassifierConfig::validate() const {
  if (crop_frames < 2 || kernel < 1 || kernel > crop_frames) throw ConfigError("classifier: need 1 <= kernel <= crop_frames");
  if (channels < 1 || feature_dim < 2) throw ConfigError("classifier: channels >= 1 and feature_dim >= 2 required");
  if (epochs < 1 || batch_size < 1) throw ConfigError("classifier: epochs and batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("classifier: learning_rate must be > 0");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("classifier: holdout_fraction in [0, 1)");
  if (crops_per_segment < 1) throw ConfigError("classifier: crops_per_segment must be >= 1");
}

SequenceClassifier::SequenceClassifier(const ClassifierConfig& cfg, int num_classes, int pose_dim)
    : config_(cfg), num_classes_(num_classes), pose_dim_(pose_dim) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  conv = Linear::init(cfg.kernel * pose_dim, cfg.channels, rng);
  feature = Linear::init(cfg.channels, cfg.feature_dim, rng);
  head = Linear::init(cfg.feature_dim, num_classes, rng);
}

Matrix im2col(const Matrix& crop, int kernel) {
  const Eigen::Index windows = crop.rows() - kernel + 1;
  const Eigen::Index d = crop.cols();
  Matrix out(windows, kernel * d);
  for (Eigen::Index w = 0; w < windows; ++w)
    for (int j = 0; j < kernel; ++j) out.row(w).segment(j * d, d) = crop.row(w + j);
  return out;
}

std::optional<Matrix> SequenceClassifier::center_crop(const Matrix& span_frames) const {
  const auto L = static_cast<Eigen::Index>(config_.crop_frames);
  if (span_frames.rows() < L) return std::nullopt;
  return Matrix(span_frames.middleRows((span_frames.rows() - L) / 2, L));
}

namespace {

RowVector crop_features(const SequenceClassifier& c, const Matrix& crop) {
  const Matrix hidden = gelu(c.conv.apply(im2col(crop, c.config().kernel)));
  return gelu(c.feature.apply(hidden.colwise().mean()));
}

ad::Var crop_features(ad::Tape& tape, const SequenceClassifier& c, const Matrix& crop) {
  const Matrix cols = im2col(crop, c.config().kernel);
  ad::Var hidden = ad::gelu(c.conv.forward(tape, tape.constant(cols)));
  ad::Var pooled = ad::matmul(tape.constant(Matrix::Constant(1, cols.rows(), 1.0 / static_cast<double>(cols.rows()))),
                              hidden);
  return ad::gelu(c.feature.forward(tape, pooled));
}

}  // namespace

RowVector SequenceClassifier::features(const Matrix& span_frames) const {
  auto crop = center_crop(span_frames);
  if (!crop) throw InputError("classifier: span shorter than crop length");
  return crop_features(*this, *crop);
}

RowVector SequenceClassifier::logits(const Matrix& span_frames) const { return head.apply(features(span_frames)); }

int SequenceClassifier::predict(const Matrix& span_frames) const {
  Eigen::Index best = 0;
  logits(span_frames).maxCoeff(&best);
  return static_cast<int>(best);
}

void SequenceClassifier::visit(const ParamVisitor& f) {
  conv.visit(f, "conv");
  feature.visit(f, "feature");
  head.visit(f, "head");
}

std::vector<Matrix*> SequenceClassifier::tensors() {
  std::vector<Matrix*> out;
  visit([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

void SequenceClassifier::save(const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["format"] = "martvae-classifier";
  doc["version"] = 1;
  doc["config"] = {{"crop_frames", config_.crop_frames}, {"kernel", config_.kernel}, {"channels", config_.channels},
                   {"feature_dim", config_.feature_dim}, {"num_classes", num_classes_}, {"pose_dim", pose_dim_}};
  nlohmann::json tensors = nlohmann::json::array();
  visit([&](const std::string& name, Matrix& m) {
    std::vector<double> data;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}});
  });
  doc["tensors"] = std::move(tensors);
  write_file_atomic(path, doc.dump() + "\n");
}

SequenceClassifier SequenceClassifier::load(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": invalid JSON: " + e.what());
  }
  if (doc.value("format", std::string()) != "martvae-classifier")
    throw ParseError(path.string() + ": field 'format' is not martvae-classifier");
  ClassifierConfig cfg;
  int classes = 0, pose_dim = 0;
  try {
    const auto& c = doc.at("config");
    cfg.crop_frames = c.at("crop_frames").get<int>();
    cfg.kernel = c.at("kernel").get<int>();
    cfg.channels = c.at("channels").get<int>();
    cfg.feature_dim = c.at("feature_dim").get<int>();
    classes = c.at("num_classes").get<int>();
    pose_dim = c.at("pose_dim").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad field in 'config': " + e.what());
  }
  SequenceClassifier clf(cfg, classes, pose_dim);
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& t : doc.at("tensors")) by_name[t.value("name", std::string())] = &t;
  clf.visit([&](const std::string& name, Matrix& m) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ParseError(path.string() + ": missing tensor '" + name + "'");
    const auto& data = it->second->at("data");
    if (static_cast<Eigen::Index>(data.size()) != m.size())
      throw ParseError(path.string() + ": tensor '" + name + "' has wrong size");
    std::size_t i = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[i++].get<double>();
  });
  return clf;
}

namespace {

struct LabelledSpan {
  const PoseSequence* seq;
  ActionSegment seg;
};

}  // namespace

SequenceClassifier train_classifier(const std::vector<PoseSequence>& dataset, int num_classes,
                                    const ClassifierConfig& cfg, ClassifierReport* report) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("classifier: empty dataset");
  std::set<int> present;
  for (const auto& s : dataset)
    for (const auto& seg : s.script.segments) present.insert(seg.label);
  if (present.size() < 2) throw ConfigError("classifier: need at least two classes, found " + std::to_string(present.size()));
  for (int l : present)
    if (l < 0 || l >= num_classes) throw InputError("classifier: label " + std::to_string(l) + " outside vocabulary");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto holdout = static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(dataset.size()));

  std::vector<LabelledSpan> train_spans, test_spans;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& seq = dataset[order[i]];
    for (const auto& seg : seq.script.segments) {
      if (seg.length() < cfg.crop_frames) continue;
      (i < holdout ? test_spans : train_spans).push_back({&seq, seg});
    }
  }
  if (train_spans.empty()) throw ConfigError("classifier: no training segment is long enough for a crop");

  SequenceClassifier clf(cfg, num_classes, dataset.front().pose_dim());
  AdamOptimizer adam;
  const auto tensors = clf.tensors();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Random crops: crops_per_segment per span and epoch.
    std::vector<std::pair<std::size_t, int>> items;
    for (std::size_t s = 0; s < train_spans.size(); ++s) {
      const int slack = train_spans[s].seg.length() - cfg.crop_frames;
      std::uniform_int_distribution<int> off(0, slack);
      for (int c = 0; c < cfg.crops_per_segment; ++c) items.emplace_back(s, off(rng));
    }
    std::shuffle(items.begin(), items.end(), rng);
    for (std::size_t b = 0; b < items.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(items.size(), b + static_cast<std::size_t>(cfg.batch_size));
      ad::Tape tape;
      std::vector<ad::Var> feats;
      std::vector<int> labels;
      for (std::size_t i = b; i < e; ++i) {
        const auto& span = train_spans[items[i].first];
        const Matrix crop = span.seq->frames.middleRows(span.seg.start + items[i].second, cfg.crop_frames);
        feats.push_back(crop_features(tape, clf, crop));
        labels.push_back(span.seg.label);
      }
      ad::Var logits = clf.head.forward(tape, ad::concat_rows(feats));
      tape.backward(ad::softmax_cross_entropy(logits, labels));
      std::vector<Matrix> grads;
      for (const Matrix* t : tensors) grads.push_back(tape.parameter_grad(*t));
      adam.step(tensors, grads, cfg.learning_rate);
    }
  }

  if (report) {
    report->train_segments = static_cast<int>(train_spans.size());
    report->holdout_segments = static_cast<int>(test_spans.size());
    int correct = 0;
    for (const auto& span : test_spans) {
      const Matrix frames = span.seq->frames.middleRows(span.seg.start, span.seg.length());
      correct += clf.predict(frames) == span.seg.label ? 1 : 0;
    }
    report->holdout_accuracy = test_spans.empty() ? 0.0 : static_cast<double>(correct) / test_spans.size();
  }
  return clf;
}

double segment_accuracy(const SpanClassifier& clf, const std::vector<PoseSequence>& data) {
  int correct = 0, total = 0;
  for (const auto& seq : data)
    for (const auto& seg : seq.script.segments) {
      if (seg.length() < clf.min_frames()) continue;
      ++total;
      correct += clf.predict(seq.frames.middleRows(seg.start, seg.length())) == seg.label ? 1 : 0;
    }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

}  // namespace martvae
