#include "mfcl/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "mfcl/text.hpp"
#include "mfcl/train.hpp"

namespace mfcl {

namespace fs = std::filesystem;
using ad::Tensor;
using ad::Var;
using ad::Shape;
using ad::Parameter;

std::vector<std::size_t> subclip_starts(std::size_t clip_len, std::size_t crop_len) {
  if (crop_len == 0) throw ConfigError("views.crop_len_s: crop must be at least one sample");
  if (clip_len < crop_len) {
    throw DataError("clip of " + std::to_string(clip_len) + " samples is shorter than the " +
                    std::to_string(crop_len) + "-sample crop");
  }
  const std::size_t stride = std::max<std::size_t>(1, crop_len / 2);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + crop_len <= clip_len; s += stride) starts.push_back(s);
  if (starts.back() + crop_len < clip_len) starts.push_back(clip_len - crop_len);
  return starts;
}

std::string_view eval_inputs_name(EvalInputs e) {
  switch (e) {
    case EvalInputs::kBranchA: return "a";
    case EvalInputs::kBranchB: return "b";
    case EvalInputs::kBoth: return "both";
  }
  return "both";
}

EvalInputs parse_eval_inputs(std::string_view s) {
  if (s == "a") return EvalInputs::kBranchA;
  if (s == "b") return EvalInputs::kBranchB;
  if (s == "both") return EvalInputs::kBoth;
  throw ConfigError("eval.inputs: expected a, b or both, got '" + std::string(s) + "'");
}

std::string_view probe_mode_name(ProbeMode m) { return m == ProbeMode::kSingleLabel ? "single" : "multi"; }

ProbeMode parse_probe_mode(std::string_view s) {
  if (s == "multi") return ProbeMode::kMultiLabel;
  if (s == "single") return ProbeMode::kSingleLabel;
  throw ConfigError("eval.mode: expected multi or single, got '" + std::string(s) + "'");
}

void ProbeConfig::validate() const {
  if (hidden == 0) throw ConfigError("eval.hidden: must be positive");
  if (steps == 0) throw ConfigError("eval.steps: must be positive");
  if (batch == 0) throw ConfigError("eval.batch: must be positive");
  if (!(lr > 0.0)) throw ConfigError("eval.lr: must be > 0");
}

// Feature extraction

template <typename T>
std::vector<std::vector<double>> extract_clip_features(const ContrastiveModel<T>& model, const Waveform& clip,
                                                       double crop_len_s, EvalInputs inputs,
                                                       const FeatureExtractor& fx) {
  const std::size_t crop = crop_samples(crop_len_s, clip.sample_rate);
  const std::vector<std::size_t> starts = subclip_starts(clip.size(), crop);
  const FormatSpec& formats = model.formats();

  struct Branch {
    Format format;
    const Encoder<T>* encoder;
  };
  std::vector<Branch> branches;
  const bool shared = model.shared_encoder();
  if (inputs != EvalInputs::kBranchB || shared) branches.push_back({formats.branch_a, &model.encoder_a()});
  if (inputs == EvalInputs::kBranchB && !shared) branches.push_back({formats.branch_b, &model.encoder_b()});
  if (inputs == EvalInputs::kBoth && !shared) branches.push_back({formats.branch_b, &model.encoder_b()});

  std::vector<std::vector<double>> rows(starts.size());
  for (const Branch& br : branches) {
    std::vector<View> views;
    views.reserve(starts.size());
    for (std::size_t s : starts) views.push_back(to_format(crop_at(clip, s, crop), br.format, fx));
    const auto feats = encode_batch<T>(views, *br.encoder);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].insert(rows[i].end(), feats[i].begin(), feats[i].end());
  }
  return rows;
}

template <typename T>
ClipFeatures extract_features(const ContrastiveModel<T>& model, const Dataset& data, double crop_len_s,
                              EvalInputs inputs, const FeatureExtractor& fx) {
  ClipFeatures out;
  out.clips.reserve(data.size());
  for (const Waveform& clip : data.clips) {
    out.clips.push_back(extract_clip_features(model, clip, crop_len_s, inputs, fx));
    out.dim = out.clips.back().front().size();
  }
  return out;
}

// Probe

Probe::Probe(std::size_t in_dim, std::size_t n_classes, const ProbeConfig& cfg)
    : in_dim_(in_dim), n_classes_(n_classes), cfg_(cfg), mean_(in_dim, 0.0), scale_(in_dim, 1.0) {
  cfg_.validate();
  if (in_dim == 0) throw ShapeError("probe input dimension must be positive");
  Rng rng = stream_rng(cfg_.seed, 0x9b0e);
  auto& w1 = params_.add("probe/hidden/weight", {cfg_.hidden, in_dim});
  ad::kaiming_uniform(w1.value, in_dim, rng);
  params_.add("probe/hidden/bias", {cfg_.hidden});
  auto& w2 = params_.add("probe/out/weight", {n_classes, cfg_.hidden});
  ad::kaiming_uniform(w2.value, cfg_.hidden, rng);
  params_.add("probe/out/bias", {n_classes});
}

namespace {

Var probe_forward(ad::Tape<double>& tape, ad::ParameterSet<double>& params, Var x) {
  Var h = ad::linear(tape, x, tape.parameter(params.at("probe/hidden/weight")),
                     tape.parameter(params.at("probe/hidden/bias")));
  h = ad::relu(tape, h);
  return ad::linear(tape, h, tape.parameter(params.at("probe/out/weight")), tape.parameter(params.at("probe/out/bias")));
}

}  // namespace

std::vector<double> Probe::logits(std::span<const double> features) const {
  if (features.size() != in_dim_) {
    throw ShapeError("probe expects " + std::to_string(in_dim_) + " features, got " + std::to_string(features.size()));
  }
  // Inference without a tape: h = relu(W1 x + b1), y = W2 h + b2.
  const auto* w1 = params_.find("probe/hidden/weight");
  const auto* b1 = params_.find("probe/hidden/bias");
  const auto* w2 = params_.find("probe/out/weight");
  const auto* b2 = params_.find("probe/out/bias");
  std::vector<double> x(in_dim_);
  for (std::size_t i = 0; i < in_dim_; ++i) x[i] = (features[i] - mean_[i]) * scale_[i];
  std::vector<double> h(cfg_.hidden);
  for (std::size_t j = 0; j < cfg_.hidden; ++j) {
    double acc = b1->value[j];
    for (std::size_t i = 0; i < in_dim_; ++i) acc += w1->value[j * in_dim_ + i] * x[i];
    h[j] = std::max(acc, 0.0);
  }
  std::vector<double> y(n_classes_);
  for (std::size_t c = 0; c < n_classes_; ++c) {
    double acc = b2->value[c];
    for (std::size_t j = 0; j < cfg_.hidden; ++j) acc += w2->value[c * cfg_.hidden + j] * h[j];
    y[c] = acc;
  }
  return y;
}

std::vector<double> Probe::predict_clip(const std::vector<std::vector<double>>& subclip_features) const {
  if (subclip_features.empty()) throw ShapeError("predict_clip: no subclips");
  std::vector<double> mean(n_classes_, 0.0);
  for (const auto& row : subclip_features) {
    const auto y = logits(row);
    for (std::size_t c = 0; c < n_classes_; ++c) mean[c] += y[c];
  }
  for (double& v : mean) v /= static_cast<double>(subclip_features.size());
  return mean;
}

Probe train_probe(const ClipFeatures& features, const std::vector<LabelVector>& labels, std::size_t n_classes,
                  const ProbeConfig& cfg) {
  if (features.clips.empty()) throw DataError("probe training set is empty");
  if (features.clips.size() != labels.size()) {
    throw ShapeError("probe training: " + std::to_string(features.clips.size()) + " feature sets for " +
                     std::to_string(labels.size()) + " label vectors");
  }
  std::vector<std::size_t> class_count(n_classes, 0);
  std::vector<std::size_t> single(labels.size(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].size() != n_classes) throw ShapeError("label vector width differs from the class count");
    for (std::size_t c = 0; c < n_classes; ++c) class_count[c] += labels[i].test(c);
    if (cfg.mode == ProbeMode::kSingleLabel) {
      if (labels[i].cardinality() != 1) {
        throw DataError("single-label probe: clip " + std::to_string(i) + " has " +
                        std::to_string(labels[i].cardinality()) + " labels");
      }
      for (std::size_t c = 0; c < n_classes; ++c) {
        if (labels[i].test(c)) single[i] = c;
      }
    }
  }
  const auto present = std::count_if(class_count.begin(), class_count.end(), [](std::size_t n) { return n > 0; });
  if (present < 2) {
    throw DataError("probe training set is degenerate: only " + std::to_string(present) + " class(es) occur");
  }

  Probe probe(features.dim, n_classes, cfg);

  // Standardize with statistics over every training subclip.
  std::vector<double> sum(features.dim, 0.0), sq(features.dim, 0.0);
  std::size_t rows = 0;
  for (const auto& clip : features.clips) {
    for (const auto& row : clip) {
      if (row.size() != features.dim) throw ShapeError("feature rows differ in width");
      for (std::size_t k = 0; k < features.dim; ++k) {
        sum[k] += row[k];
        sq[k] += row[k] * row[k];
      }
      ++rows;
    }
  }
  for (std::size_t k = 0; k < features.dim; ++k) {
    const double m = sum[k] / static_cast<double>(rows);
    const double var = std::max(0.0, sq[k] / static_cast<double>(rows) - m * m);
    probe.feature_mean()[k] = m;
    probe.feature_scale()[k] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
  }

  auto& params = probe.params();
  OptimState<double> optim = OptimState<double>::zeros_like(params);
  Rng rng = stream_rng(cfg.seed, 0x9b0f);
  const std::size_t d = features.dim;
  Tensor<double> x({cfg.batch, d});
  Tensor<double> targets({cfg.batch, n_classes});
  std::vector<std::size_t> target_idx(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto ci = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(features.clips.size()) - 1));
      const auto& clip = features.clips[ci];
      const auto si = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(clip.size()) - 1));
      for (std::size_t k = 0; k < d; ++k) {
        x[b * d + k] = (clip[si][k] - probe.feature_mean()[k]) * probe.feature_scale()[k];
      }
      for (std::size_t c = 0; c < n_classes; ++c) targets[b * n_classes + c] = labels[ci].test(c) ? 1.0 : 0.0;
      target_idx[b] = single[ci];
    }
    ad::Tape<double> tape;
    Var logits = probe_forward(tape, params, tape.constant(x));
    Var loss = cfg.mode == ProbeMode::kMultiLabel ? ad::bce_with_logits(tape, logits, targets)
                                                  : ad::softmax_cross_entropy(tape, logits, target_idx);
    params.zero_grad();
    tape.backward(loss);
    adam_step(params, optim, cfg.lr);
  }
  return probe;
}

template <typename T>
Probe train_probe_frozen(const ContrastiveModel<T>& frozen, const ClipFeatures& features,
                         const std::vector<LabelVector>& labels, std::size_t n_classes, const ProbeConfig& cfg) {
  const std::uint64_t before = frozen.params().checksum();
  Probe probe = train_probe(features, labels, n_classes, cfg);
  if (frozen.params().checksum() != before) {
    throw std::logic_error("encoder parameters changed during probe training");
  }
  return probe;
}

// Metrics

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw ShapeError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

ApResult mean_average_precision(const std::vector<std::vector<double>>& scores,
                                const std::vector<std::vector<int>>& labels) {
  if (scores.empty() || scores.front().empty()) throw DataError("mean_average_precision: empty input");
  if (labels.size() != scores.size()) throw ShapeError("mean_average_precision: score and label counts differ");
  const std::size_t n = scores.size(), c = scores.front().size();
  for (std::size_t i = 0; i < n; ++i) {
    if (scores[i].size() != c || labels[i].size() != c) throw ShapeError("mean_average_precision: ragged rows");
  }
  ApResult r;
  r.ap.assign(c, std::numeric_limits<double>::quiet_NaN());
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < c; ++k) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a][k] > scores[b][k]; });
    std::size_t hits = 0;
    double acc = 0.0;
    for (std::size_t rank = 0; rank < n; ++rank) {
      if (labels[order[rank]][k]) {
        ++hits;
        acc += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    if (hits == 0) {
      r.excluded.push_back(k);
      continue;
    }
    r.ap[k] = acc / static_cast<double>(hits);
    total += r.ap[k];
    ++counted;
  }
  if (counted == 0) throw DataError("mean_average_precision: no class has a positive example");
  r.map = total / static_cast<double>(counted);
  return r;
}

double accuracy(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("accuracy: score and label counts differ");
  if (scores.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) correct += argmax(scores[i]) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

std::vector<std::vector<double>> predict_all(const Probe& probe, const ClipFeatures& features) {
  std::vector<std::vector<double>> out;
  out.reserve(features.clips.size());
  for (const auto& clip : features.clips) out.push_back(probe.predict_clip(clip));
  return out;
}

EvalReport evaluate(const Probe& probe, const ClipFeatures& features, const std::vector<LabelVector>& labels) {
  if (features.clips.size() != labels.size()) throw ShapeError("evaluate: feature and label counts differ");
  const auto scores = predict_all(probe, features);
  std::vector<std::vector<int>> truth(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t c = 0; c < probe.n_classes(); ++c) truth[i].push_back(labels[i].test(c) ? 1 : 0);
  }
  EvalReport report;
  for (std::size_t c = 0; c < probe.n_classes(); ++c) {
    report.class_names.push_back(c < static_cast<std::size_t>(kNumClasses) ? std::string(class_name(static_cast<int>(c)))
                                                                           : "class" + std::to_string(c));
  }
  report.ap = mean_average_precision(scores, truth);
  if (probe.mode() == ProbeMode::kSingleLabel) {
    std::vector<std::size_t> single(labels.size(), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i].cardinality() != 1) {
        throw DataError("single-label evaluation: clip " + std::to_string(i) + " has " +
                        std::to_string(labels[i].cardinality()) + " labels");
      }
      for (std::size_t c = 0; c < probe.n_classes(); ++c) {
        if (labels[i].test(c)) single[i] = c;
      }
    }
    report.accuracy = accuracy(scores, single);
  }
  return report;
}

std::string eval_summary_line(const EvalReport& report) {
  std::string s = "# mAP=" + format_double(report.ap.map);
  if (report.accuracy >= 0.0) s += " accuracy=" + format_double(report.accuracy);
  s += " classes=" + std::to_string(report.ap.ap.size() - report.ap.excluded.size());
  s += " excluded=";
  for (std::size_t i = 0; i < report.ap.excluded.size(); ++i) {
    if (i) s += ';';
    s += report.class_names.at(report.ap.excluded[i]);
  }
  s += " config=" + report.config_hash + " checkpoint=" + report.checkpoint_id;
  return s;
}

void write_eval_report(const fs::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write eval report '" + path.string() + "'");
  out << "class,ap\n";
  for (std::size_t c = 0; c < report.ap.ap.size(); ++c) {
    if (std::isnan(report.ap.ap[c])) continue;
    out << report.class_names.at(c) << ',' << format_double(report.ap.ap[c]) << '\n';
  }
  out << eval_summary_line(report) << '\n';
}

std::string hash_text(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Probe files: text, one `name rank dims... values...` line per tensor.

namespace {

void put_vector(std::ostream& out, const std::string& name, const Shape& shape, std::span<const double> values) {
  out << name << ' ' << shape.size();
  for (std::size_t d : shape) out << ' ' << d;
  for (double v : values) out << ' ' << format_double(v);
  out << '\n';
}

}  // namespace

void save_probe(const std::filesystem::path& path, const Probe& probe) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write probe '" + path.string() + "'");
  out << "mfcl-probe 1 " << probe.in_dim() << ' ' << probe.n_classes() << ' ' << probe_mode_name(probe.mode())
      << '\n';
  auto& p = const_cast<Probe&>(probe);
  put_vector(out, "feature_mean", {probe.in_dim()}, p.feature_mean());
  put_vector(out, "feature_scale", {probe.in_dim()}, p.feature_scale());
  for (const Parameter<double>* param : probe.params().all()) {
    put_vector(out, param->name, param->value.shape(), param->value.values());
  }
  if (!out) throw DataError("failed writing probe '" + path.string() + "'");
}

Probe load_probe(const std::filesystem::path& path, ProbeConfig cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open probe '" + path.string() + "'");
  std::string magic, mode;
  int version = 0;
  std::size_t in_dim = 0, n_classes = 0;
  in >> magic >> version >> in_dim >> n_classes >> mode;
  if (!in || magic != "mfcl-probe" || version != 1) {
    throw DataError("'" + path.string() + "' is not a probe file");
  }
  cfg.mode = parse_probe_mode(mode);
  Probe probe(in_dim, n_classes, cfg);
  auto read_into = [&](const std::string& want, const Shape& shape, std::span<double> dst) {
    std::string name;
    std::size_t rank = 0;
    in >> name >> rank;
    Shape got(rank);
    for (auto& d : got) in >> d;
    if (!in || name != want || got != shape) {
      throw DataError("probe '" + path.string() + "': expected " + want + " " + ad::shape_str(shape));
    }
    for (double& v : dst) {
      std::string tok;
      in >> tok;
      if (!in) throw DataError("probe '" + path.string() + "' is truncated");
      v = std::stod(tok);
    }
  };
  read_into("feature_mean", {in_dim}, probe.feature_mean());
  read_into("feature_scale", {in_dim}, probe.feature_scale());
  for (Parameter<double>* param : probe.params().all()) {
    read_into(param->name, param->value.shape(), param->value.values());
  }
  return probe;
}

#define MFCL_INSTANTIATE(T)                                                                                     \
  template ClipFeatures extract_features<T>(const ContrastiveModel<T>&, const Dataset&, double, EvalInputs,     \
                                            const FeatureExtractor&);                                           \
  template std::vector<std::vector<double>> extract_clip_features<T>(const ContrastiveModel<T>&, const Waveform&, \
                                                                     double, EvalInputs, const FeatureExtractor&); \
  template Probe train_probe_frozen<T>(const ContrastiveModel<T>&, const ClipFeatures&,                          \
                                       const std::vector<LabelVector>&, std::size_t, const ProbeConfig&);

MFCL_INSTANTIATE(float)
MFCL_INSTANTIATE(double)

}  // namespace mfcl
