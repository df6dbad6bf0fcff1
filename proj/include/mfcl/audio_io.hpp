#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mfcl/random.hpp"

namespace mfcl {

/// Mono PCM audio. Samples are stored as float so that float32 WAV files
/// round-trip bit-exactly.
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }

  /// Throws DataError unless sample_rate > 0, length > 0 and every sample is finite.
  void validate() const;
};

/// The fixed synthetic event palette.
enum class EventClass : int {
  kLowTone = 0,
  kHighTone,
  kHarmonicStack,
  kChirpUp,
  kChirpDown,
  kAmTone,
  kNoiseBurst,
  kSquareWave,
};

inline constexpr int kNumClasses = 8;

std::string_view class_name(int class_id);

/// Multi-hot label vector over the event classes.
struct LabelVector {
  std::vector<std::uint8_t> bits;

  LabelVector() : bits(kNumClasses, 0) {}
  explicit LabelVector(std::size_t n) : bits(n, 0) {}

  std::size_t size() const { return bits.size(); }
  bool test(std::size_t k) const { return bits.at(k) != 0; }
  void set(std::size_t k) { bits.at(k) = 1; }
  std::size_t cardinality() const;

  /// "01001000" style string, one character per class.
  std::string to_string() const;
  static LabelVector parse(std::string_view text);

  friend bool operator==(const LabelVector&, const LabelVector&) = default;
};

struct ClipRecord {
  std::string path;  // relative to the manifest's directory
  LabelVector labels;
  double duration_s = 0.0;

  friend bool operator==(const ClipRecord&, const ClipRecord&) = default;
};

struct SynthSpec {
  std::size_t n_clips = 2500;
  double clip_len_s = 10.0;
  int sample_rate = 16000;
  int events_min = 1;
  int events_max = 3;
  // Event lengths are kept well below the clip length so that most crops
  // contain only part of a clip's events.
  double event_len_min_s = 0.5;
  double event_len_max_s = 2.5;
  double snr_db_min = 10.0;
  double snr_db_max = 30.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct EventPlacement {
  int class_id = 0;
  std::size_t onset = 0;   // samples
  std::size_t length = 0;  // samples
};

struct SynthClip {
  Waveform wave;
  LabelVector labels;
  std::vector<EventPlacement> events;
};

// ---------------------------------------------------------------------------
// WAV files

enum class WavEncoding { kPcm16, kFloat32 };

struct WavInfo {
  int channels = 0;
  int sample_rate = 0;
  int bits_per_sample = 0;
  WavEncoding encoding = WavEncoding::kFloat32;
  std::size_t num_samples = 0;
  double duration_s = 0.0;  // derived from data size and byte rate
};

/// Parses the RIFF header only.
WavInfo read_wav_info(const std::filesystem::path& path);

/// Reads a mono PCM16 or float32 WAV. PCM16 value v maps to v / 32768.
Waveform read_wav(const std::filesystem::path& path);

void write_wav(const std::filesystem::path& path, const Waveform& wave,
               WavEncoding encoding = WavEncoding::kFloat32);

// ---------------------------------------------------------------------------
// Synthesis

/// One isolated event of the given class with peak amplitude <= 0.9.
Waveform synth_event(int class_id, double duration_s, int sample_rate, Rng& rng);

SynthClip synth_clip(const SynthSpec& spec, Rng& rng);

/// Clip `index` of the dataset described by `spec`; pure in (spec, index).
SynthClip synth_clip_at(const SynthSpec& spec, std::size_t index);

// ---------------------------------------------------------------------------
// Manifests

inline constexpr std::string_view kManifestHeader = "path,labels,duration_s";

void write_manifest(const std::filesystem::path& path, const std::vector<ClipRecord>& records);
std::vector<ClipRecord> read_manifest(const std::filesystem::path& path);

struct ManifestSplit {
  std::vector<ClipRecord> train;
  std::vector<ClipRecord> holdout;
};

/// Deterministic split: round(n * train_fraction) records go to `train`.
/// Both parts keep the input order.
ManifestSplit split_records(const std::vector<ClipRecord>& records, double train_fraction,
                            std::uint64_t seed);

/// Writes `<out_dir>/<name>.csv` for each part of the split. With
/// train_fraction >= 1 only the train manifest is written.
void build_manifest(const std::filesystem::path& out_dir, const std::vector<ClipRecord>& records,
                    double train_fraction = 1.0, std::uint64_t split_seed = 0,
                    std::string_view train_name = "train", std::string_view holdout_name = "val");

/// Synthesizes `spec.n_clips` clips as float32 WAVs under `<out_dir>/clips/`
/// and returns their records in index order.
std::vector<ClipRecord> synthesize_dataset(const SynthSpec& spec,
                                           const std::filesystem::path& out_dir);

/// In-memory dataset loaded from a manifest.
struct Dataset {
  std::vector<Waveform> clips;
  std::vector<LabelVector> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return clips.size(); }
};

Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Builds the dataset directly from the generator without touching disk.
Dataset synthesize_in_memory(const SynthSpec& spec, std::size_t first, std::size_t count);

}  // namespace mfcl
