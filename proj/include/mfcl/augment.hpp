#pragma once

#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "mfcl/audio_io.hpp"
#include "mfcl/dsp.hpp"
#include "mfcl/random.hpp"

namespace mfcl {

enum class Format { kWaveform, kSpectrogram, kLogMel, kMfcc };

std::string_view format_name(Format f);
Format parse_format(std::string_view name);
inline bool is_spectral(Format f) { return f != Format::kWaveform; }

/// A time x frequency view together with the per-bin value that represents
/// zero energy in its domain (0 for power, log(eps) for log-mel, the
/// cepstrum of a silent frame for MFCC). Masks and shifts fill with it.
struct Spectral {
  Format format = Format::kLogMel;
  Matrix values;
  std::vector<double> silence;
};

Spectral make_spectral(Format format, Matrix values, const DspConfig& cfg);

using View = std::variant<Waveform, Spectral>;

Format view_format(const View& v);

struct AugmentPolicy {
  bool mix_enabled = true;
  double mix_beta_a = 5.0;
  double mix_beta_b = 2.0;
  double time_mask_max = 0.0;  // T_max, fraction of frames or samples; 0 disables
  int freq_mask_max = 0;       // f_max bins; 0 disables
  int freq_shift_max = 40;     // F bins; 0 disables

  /// `n_bins` is the frequency size of the spectral branch (n_mels for log-mel).
  void validate(std::size_t n_bins) const;
};

/// alpha ~ Beta(a, b), strictly inside (0, 1).
double sample_alpha(Rng& rng, double a = 5.0, double b = 2.0);

/// alpha * x1 + (1 - alpha) * x2.
Waveform mix(const Waveform& x1, const Waveform& x2, double alpha);

/// Zeroes samples [t0, t0 + t).
Waveform time_mask(const Waveform& wave, std::size_t t, std::size_t t0);
/// Sets frames [t0, t0 + t) to silence.
Spectral time_mask(const Spectral& spec, std::size_t t, std::size_t t0);
View time_mask(const View& view, std::size_t t, std::size_t t0);

/// Sets bins [f0, f0 + f) of every frame to silence.
Spectral freq_mask(const Spectral& spec, std::size_t f, std::size_t f0);
View freq_mask(const View& view, std::size_t f, std::size_t f0);

/// out[:, b] = in[:, b - shift]; vacated bins become silence.
Spectral freq_shift(const Spectral& spec, long shift);
View freq_shift(const View& view, long shift);

/// Converts a waveform crop into `format`.
View to_format(const Waveform& crop, Format format, const FeatureExtractor& fx);

/// Mixing happens on the waveform before any transform; spectral
/// augmentations follow in the order shift, frequency mask, time mask.
/// Frequency shift and frequency mask are skipped for MFCC views, whose
/// coefficient axis is not a frequency axis.
View apply_policy(const Waveform& crop, Format format, const AugmentPolicy& policy,
                  const Waveform* partner, Rng& rng, const FeatureExtractor& fx);

}  // namespace mfcl
