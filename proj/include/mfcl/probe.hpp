#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mfcl/encoders.hpp"

namespace mfcl {

/// Subclip start offsets: 0, crop/2, crop, ... while the window fits, plus a
/// final window flush with the clip end unless the last start already is.
std::vector<std::size_t> subclip_starts(std::size_t clip_len, std::size_t crop_len);

/// Which trained branches feed the probe.
enum class EvalInputs { kBranchA, kBranchB, kBoth };

std::string_view eval_inputs_name(EvalInputs e);
EvalInputs parse_eval_inputs(std::string_view s);

/// Per clip, one feature row per subclip.
struct ClipFeatures {
  std::vector<std::vector<std::vector<double>>> clips;
  std::size_t dim = 0;
};

/// Features of every subclip of every clip from the frozen encoders.
/// kBoth concatenates branch a then branch b; for single-format models the
/// shared encoder is used once.
template <typename T>
ClipFeatures extract_features(const ContrastiveModel<T>& model, const Dataset& data, double crop_len_s,
                              EvalInputs inputs, const FeatureExtractor& fx);

/// Same, for a single clip.
template <typename T>
std::vector<std::vector<double>> extract_clip_features(const ContrastiveModel<T>& model, const Waveform& clip,
                                                       double crop_len_s, EvalInputs inputs,
                                                       const FeatureExtractor& fx);

enum class ProbeMode { kMultiLabel, kSingleLabel };

std::string_view probe_mode_name(ProbeMode m);
ProbeMode parse_probe_mode(std::string_view s);

struct ProbeConfig {
  std::size_t hidden = 512;
  std::size_t steps = 2000;
  std::size_t batch = 256;
  double lr = 1e-3;
  ProbeMode mode = ProbeMode::kMultiLabel;
  std::uint64_t seed = 0;
  void validate() const;
};

/// One-hidden-layer MLP on standardized features.
class Probe {
 public:
  Probe(std::size_t in_dim, std::size_t n_classes, const ProbeConfig& cfg);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t n_classes() const { return n_classes_; }
  ProbeMode mode() const { return cfg_.mode; }

  /// Logits [C] of one feature row.
  std::vector<double> logits(std::span<const double> features) const;
  /// Mean of the per-subclip logits.
  std::vector<double> predict_clip(const std::vector<std::vector<double>>& subclip_features) const;

  ad::ParameterSet<double>& params() { return params_; }
  const ad::ParameterSet<double>& params() const { return params_; }
  std::vector<double>& feature_mean() { return mean_; }
  std::vector<double>& feature_scale() { return scale_; }

 private:
  std::size_t in_dim_;
  std::size_t n_classes_;
  ProbeConfig cfg_;
  ad::ParameterSet<double> params_;
  std::vector<double> mean_;
  std::vector<double> scale_;  // 1 / std
};

/// Trains a probe on per-subclip features, each labelled with its clip's
/// labels. Minibatches draw (clip, subclip) pairs uniformly at random.
/// Throws DataError when fewer than two classes occur, or when single-label
/// mode meets a clip without exactly one label.
Probe train_probe(const ClipFeatures& features, const std::vector<LabelVector>& labels, std::size_t n_classes,
                  const ProbeConfig& cfg);

/// Training with a frozen-encoder guard: throws if `frozen` changes.
template <typename T>
Probe train_probe_frozen(const ContrastiveModel<T>& frozen, const ClipFeatures& features,
                         const std::vector<LabelVector>& labels, std::size_t n_classes, const ProbeConfig& cfg);

struct ApResult {
  std::vector<double> ap;              // per class; NaN for excluded classes
  std::vector<std::size_t> excluded;   // classes without positives
  double map = 0.0;
};

/// Non-interpolated AP per class over descending scores (ties keep input
/// order), averaged over classes with at least one positive.
ApResult mean_average_precision(const std::vector<std::vector<double>>& scores,
                                const std::vector<std::vector<int>>& labels);

/// Argmax match rate; ties go to the lowest class index.
double accuracy(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& labels);

std::size_t argmax(std::span<const double> v);

struct EvalReport {
  std::vector<std::string> class_names;
  ApResult ap;
  double accuracy = -1.0;  // single-label mode only
  std::string config_hash;
  std::string checkpoint_id;
};

/// Clip-level logits of every clip in `features`.
std::vector<std::vector<double>> predict_all(const Probe& probe, const ClipFeatures& features);

EvalReport evaluate(const Probe& probe, const ClipFeatures& features, const std::vector<LabelVector>& labels);

/// CSV `class,ap` followed by a summary line.
void write_eval_report(const std::filesystem::path& path, const EvalReport& report);
std::string eval_summary_line(const EvalReport& report);

/// Trained probe with its feature standardization, as text.
void save_probe(const std::filesystem::path& path, const Probe& probe);
/// `cfg` supplies the hidden width; the mode comes from the file.
Probe load_probe(const std::filesystem::path& path, ProbeConfig cfg);

/// Hex FNV-1a hash of a string.
std::string hash_text(std::string_view text);

}  // namespace mfcl
