#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mfcl/config.hpp"

namespace mfcl {

/// Loads a manifest; every clip must share one sample rate.
Dataset load_checked(const std::filesystem::path& manifest);

/// Sample rate of a nonempty dataset.
int dataset_sample_rate(const Dataset& data);

struct RunResult {
  std::vector<MetricRow> metrics;
  EvalReport report;
};

/// Frozen-encoder evaluation: features of `train` fit the probe, features of
/// `eval` are scored. The model is left untouched.
template <typename T>
EvalReport probe_and_evaluate(const ContrastiveModel<T>& model, const RunConfig& cfg, const Dataset& train,
                              const Dataset& eval, const FeatureExtractor& fx);

/// Pretraining on `train_all` (minus the validation share), then probe and
/// evaluation with the best checkpoint. Artifacts go to `dir` when it is not
/// empty. With `pretrain` false the randomly initialized encoders are probed.
RunResult pretrain_and_evaluate(const RunConfig& cfg, const Dataset& train_all, const Dataset& eval,
                                const std::filesystem::path& dir, bool pretrain = true, bool log = false);

/// Writes the effective config (text of `cfg`) to `<dir>/config.effective`.
void write_effective_config(const std::filesystem::path& dir, const RunConfig& cfg);

/// Rebuilds a run config from a checkpoint's config block.
RunConfig config_from_checkpoint(const std::filesystem::path& path);

/// 1 s reference clip for the DSP golden vectors.
Waveform golden_reference_clip();

struct GoldenCheck {
  std::string name;  // spectrogram, logmel or mfcc
  double max_abs_diff = 0.0;
  bool shape_ok = true;
};

inline constexpr double kGoldenTolerance = 1e-5;

/// Writes ref.wav plus spectrogram.txt, logmel.txt and mfcc.txt (default DSP settings).
void emit_golden(const std::filesystem::path& dir);
/// Recomputes the three matrices from `<dir>/ref.wav` and compares.
std::vector<GoldenCheck> verify_golden(const std::filesystem::path& dir);

}  // namespace mfcl
