#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mfcl/probe.hpp"
#include "mfcl/train.hpp"

namespace mfcl {

struct DataSection {
  std::string dir = "data";  // synth output; manifests live here
  std::string train_manifest = "data/train.csv";
  std::string eval_manifest = "data/eval.csv";
  double eval_fraction = 0.2;
  std::uint64_t split_seed = 0;
  double val_fraction = 0.05;  // of the train manifest, for validation loss
};

struct EvalSection {
  EvalInputs inputs = EvalInputs::kBoth;
  ProbeConfig probe;
  std::string checkpoint = "ckpt.best";  // relative to the run directory
};

enum class AblationAxis { kFormats, kCropSize, kFreqShift, kTemperature, kLatentSize, kBatchSize, kConvDepth };

std::string_view axis_name(AblationAxis a);
AblationAxis parse_axis(std::string_view s);

struct AblationGrid {
  AblationAxis axis = AblationAxis::kFormats;
  std::vector<std::string> values = {"wave+wave", "logmel+logmel", "wave+logmel"};
  std::vector<std::uint64_t> seeds = {0, 1, 2};
};

struct RunConfig {
  SynthSpec synth;
  DataSection data;
  DspConfig dsp;
  ModelConfig model;
  TrainConfig train;  // also holds the views and augment sections
  EvalSection eval;
  AblationGrid ablate;

  RunConfig();

  /// Cross-field checks; throws ConfigError naming the field path.
  void validate() const;

  /// Every key with its current value, one `section.key = value` per line.
  std::string to_text() const;

  /// Sets one key from text. Throws ConfigError for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static std::vector<std::string> keys();

  /// Applies one ablation value, e.g. (kFormats, "wave+logmel").
  void apply_axis(AblationAxis axis, std::string_view value);
};

/// Parses `section.key = value` lines; `#` starts a comment. Unknown keys
/// are errors in strict mode and are collected into `warnings` otherwise.
RunConfig parse_config_text(std::string_view text, bool strict, std::vector<std::string>* warnings = nullptr);
RunConfig parse_config(const std::filesystem::path& path, bool strict, std::vector<std::string>* warnings = nullptr);

/// Splits "wave+logmel" into a FormatSpec.
FormatSpec parse_format_pair(std::string_view s);
std::string format_pair_name(const FormatSpec& f);

}  // namespace mfcl
