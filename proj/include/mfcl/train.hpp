#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfcl/encoders.hpp"

namespace mfcl {

struct LossConfig {
  double temperature = 0.1;
  void validate() const;
};

/// Plain NT-Xent value of latents [2N x D] (row-major), rows k and k+N paired.
double nt_xent_value(std::span<const double> latents, std::size_t rows, std::size_t dim, double temperature);

/// Reference NT-Xent by direct enumeration. `partner[i]` is the positive of
/// row i (an involution without fixed points).
double nt_xent_oracle(const std::vector<std::vector<double>>& latents, const std::vector<std::size_t>& partner,
                      double temperature);

/// Positive partner of each row for the k <-> k+N layout.
std::vector<std::size_t> half_pairing(std::size_t rows);

template <typename T>
struct OptimState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<ad::Tensor<T>> m;  // one per parameter, in parameter-set order
  std::vector<ad::Tensor<T>> v;

  /// Zeroed moment buffers shaped like `params`.
  static OptimState zeros_like(const ad::ParameterSet<T>& params);
};

/// One bias-corrected Adam update with learning rate `lr`; parameter
/// gradients are consumed and cleared. Throws NumericError naming the
/// parameter if any gradient is NaN or infinite.
template <typename T>
void adam_step(ad::ParameterSet<T>& params, OptimState<T>& state, double lr);

/// lr_min + (lr0 - lr_min)(1 + cos(pi step / total)) / 2; steps past total give lr_min.
double cosine_lr(std::size_t step, std::size_t total, double lr0, double lr_min);

enum class Precision { kF32, kF64 };

std::string_view precision_name(Precision p);
Precision parse_precision(std::string_view s);

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 128;
  double lr0 = 1e-4;
  double lr_min = 1e-6;
  LossConfig loss;
  BatchSettings views;
  std::uint64_t seed = 0;
  Precision precision = Precision::kF32;
  std::size_t val_every = 100;  // 0 disables validation

  void validate() const;
};

struct MetricRow {
  std::size_t step = 0;  // optimizer steps completed
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

inline constexpr const char* kMetricsHeader = "step,lr,train_loss,val_loss";

std::string format_metric_row(const MetricRow& row);
void write_metrics(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

struct CheckpointInfo {
  std::string config_text;  // run config plus checkpoint.* fields
  std::size_t step = 0;
  std::optional<double> best_val;
};

/// Writes params and optimizer buffers. The payload is f32 for float models
/// and f64 for double models; the dtype is recorded in the config text.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::string& config_text,
                     const ad::ParameterSet<T>& params, const OptimState<T>& optim, std::size_t step,
                     std::optional<double> best_val);

/// Loads into existing params and optimizer state. Throws DataError on a
/// bad magic, version, dtype or truncation, and ConfigError naming the first
/// parameter whose name or shape disagrees with `params`.
template <typename T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, ad::ParameterSet<T>& params,
                               OptimState<T>& optim);

/// Reads only the config text block.
std::string read_checkpoint_config(const std::filesystem::path& path);

/// Where a training run writes its artifacts; empty dir writes nothing.
struct RunOutputs {
  std::filesystem::path dir;
  std::string config_text;
  bool log_progress = false;
};

/// Pretraining loop over a fixed train/validation split. Batch k is a pure
/// function of (seed, k), so a resumed trainer replays the same batches.
template <typename T>
class Trainer {
 public:
  Trainer(ContrastiveModel<T>& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
          const FeatureExtractor& fx);

  /// Runs optimizer step number steps_done() + 1 and returns its training loss.
  double step();
  /// Mean NT-Xent over the validation clips with fixed augmentation draws;
  /// nullopt when there are fewer than two validation clips.
  std::optional<double> validation_loss() const;

  /// Steps until cfg.steps, logging metrics and keeping the best checkpoint.
  std::vector<MetricRow> run(const RunOutputs& out);

  std::size_t steps_done() const { return done_; }
  OptimState<T>& optim() { return optim_; }
  const OptimState<T>& optim() const { return optim_; }
  std::optional<double> best_val() const { return best_val_; }

  /// Restores from a checkpoint written by run().
  CheckpointInfo resume(const std::filesystem::path& path);

  /// Puts back the parameters of the best validation step seen by run();
  /// no-op when no validation ran.
  void restore_best();

 private:
  ContrastiveModel<T>& model_;
  const Dataset& train_;
  const Dataset& val_;
  TrainConfig cfg_;
  const FeatureExtractor& fx_;
  BatchSchedule schedule_;
  OptimState<T> optim_;
  std::size_t done_ = 0;
  std::optional<double> best_val_;
  std::vector<ad::Tensor<T>> best_params_;
};

/// Splits off a validation subset: `val_fraction` of the clips, chosen by a seeded shuffle.
void split_validation(const Dataset& all, double val_fraction, std::uint64_t seed, Dataset& train, Dataset& val);

}  // namespace mfcl
