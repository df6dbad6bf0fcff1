#include "mfcl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mfcl/error.hpp"

namespace mfcl {

std::string_view format_name(Format f) {
  switch (f) {
    case Format::kWaveform: return "waveform";
    case Format::kSpectrogram: return "spectrogram";
    case Format::kLogMel: return "logmel";
    case Format::kMfcc: return "mfcc";
  }
  return "?";
}

Format parse_format(std::string_view name) {
  if (name == "waveform" || name == "wave") return Format::kWaveform;
  if (name == "spectrogram") return Format::kSpectrogram;
  if (name == "logmel") return Format::kLogMel;
  if (name == "mfcc") return Format::kMfcc;
  throw ConfigError("unknown format '" + std::string(name) +
                    "' (expected waveform, spectrogram, logmel or mfcc)");
}

Spectral make_spectral(Format format, Matrix values, const DspConfig& cfg) {
  Spectral s;
  s.format = format;
  s.silence.assign(values.cols, 0.0);
  switch (format) {
    case Format::kSpectrogram: break;
    case Format::kLogMel: std::fill(s.silence.begin(), s.silence.end(), std::log(cfg.log_eps)); break;
    case Format::kMfcc:
      // DCT-II of a constant log(eps) frame: only c0 survives.
      if (!s.silence.empty()) s.silence[0] = std::log(cfg.log_eps) * std::sqrt(static_cast<double>(cfg.n_mels));
      break;
    case Format::kWaveform: throw ConfigError("waveform is not a spectral format");
  }
  s.values = std::move(values);
  return s;
}

Format view_format(const View& v) {
  if (const auto* s = std::get_if<Spectral>(&v)) return s->format;
  return Format::kWaveform;
}

void AugmentPolicy::validate(std::size_t n_bins) const {
  if (!(mix_beta_a > 0.0) || !(mix_beta_b > 0.0)) throw ConfigError("augment.mix_beta must be positive");
  if (!(time_mask_max >= 0.0 && time_mask_max <= 1.0)) {
    throw ConfigError("augment.time_mask_max must lie in [0, 1]");
  }
  if (freq_mask_max < 0 || static_cast<std::size_t>(freq_mask_max) > n_bins) {
    throw ConfigError("augment.freq_mask_max must lie in [0, " + std::to_string(n_bins) + "]");
  }
  if (freq_shift_max < 0) throw ConfigError("augment.freq_shift_max must be >= 0");
  if (static_cast<std::size_t>(freq_shift_max) > n_bins) {
    throw ConfigError("augment.freq_shift_max must not exceed the " + std::to_string(n_bins) +
                      " frequency bins");
  }
}

double sample_alpha(Rng& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  for (;;) {
    const double x = ga(rng);
    const double y = gb(rng);
    const double alpha = x / (x + y);
    if (alpha > 0.0 && alpha < 1.0) return alpha;
  }
}

Waveform mix(const Waveform& x1, const Waveform& x2, double alpha) {
  if (x1.size() != x2.size()) {
    throw ShapeError("cannot mix waveforms of " + std::to_string(x1.size()) + " and " +
                     std::to_string(x2.size()) + " samples");
  }
  if (x1.sample_rate != x2.sample_rate) throw ShapeError("cannot mix waveforms with different sample rates");
  Waveform out;
  out.sample_rate = x1.sample_rate;
  out.samples.resize(x1.size());
  const double beta = 1.0 - alpha;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    out.samples[i] = static_cast<float>(alpha * x1.samples[i] + beta * x2.samples[i]);
  }
  return out;
}

namespace {

void check_window(std::size_t start, std::size_t width, std::size_t extent, const char* what) {
  if (start > extent || width > extent - start) {
    throw ShapeError(std::string(what) + " window [" + std::to_string(start) + ", " +
                     std::to_string(start + width) + ") exceeds extent " + std::to_string(extent));
  }
}

const Spectral& require_spectral(const View& view, const char* op) {
  const auto* s = std::get_if<Spectral>(&view);
  if (!s) throw ShapeError(std::string(op) + " needs a spectral view; waveforms have no frequency axis");
  return *s;
}

}  // namespace

Waveform time_mask(const Waveform& wave, std::size_t t, std::size_t t0) {
  check_window(t0, t, wave.size(), "time mask");
  Waveform out = wave;
  std::fill(out.samples.begin() + static_cast<long>(t0), out.samples.begin() + static_cast<long>(t0 + t), 0.0f);
  return out;
}

Spectral time_mask(const Spectral& spec, std::size_t t, std::size_t t0) {
  check_window(t0, t, spec.values.rows, "time mask");
  Spectral out = spec;
  for (std::size_t r = t0; r < t0 + t; ++r) std::copy(spec.silence.begin(), spec.silence.end(), out.values.row(r).begin());
  return out;
}

View time_mask(const View& view, std::size_t t, std::size_t t0) {
  return std::visit([&](const auto& v) -> View { return time_mask(v, t, t0); }, view);
}

Spectral freq_mask(const Spectral& spec, std::size_t f, std::size_t f0) {
  check_window(f0, f, spec.values.cols, "frequency mask");
  Spectral out = spec;
  for (std::size_t r = 0; r < out.values.rows; ++r) {
    auto row = out.values.row(r);
    for (std::size_t c = f0; c < f0 + f; ++c) row[c] = spec.silence[c];
  }
  return out;
}

View freq_mask(const View& view, std::size_t f, std::size_t f0) {
  return freq_mask(require_spectral(view, "frequency mask"), f, f0);
}

Spectral freq_shift(const Spectral& spec, long shift) {
  Spectral out = spec;
  const long bins = static_cast<long>(spec.values.cols);
  for (std::size_t r = 0; r < spec.values.rows; ++r) {
    const auto src = spec.values.row(r);
    auto dst = out.values.row(r);
    for (long b = 0; b < bins; ++b) {
      const long from = b - shift;
      dst[static_cast<std::size_t>(b)] =
          from >= 0 && from < bins ? src[static_cast<std::size_t>(from)] : spec.silence[static_cast<std::size_t>(b)];
    }
  }
  return out;
}

View freq_shift(const View& view, long shift) {
  return freq_shift(require_spectral(view, "frequency shift"), shift);
}

View to_format(const Waveform& crop, Format format, const FeatureExtractor& fx) {
  if (crop.sample_rate != fx.sample_rate()) {
    throw ConfigError("crop sample rate " + std::to_string(crop.sample_rate) +
                      " differs from the feature extractor's " + std::to_string(fx.sample_rate()));
  }
  switch (format) {
    case Format::kWaveform: return crop;
    case Format::kSpectrogram: return make_spectral(format, fx.spectrogram(crop.samples), fx.config());
    case Format::kLogMel: return make_spectral(format, fx.log_mel(crop.samples), fx.config());
    case Format::kMfcc: return make_spectral(format, fx.mfcc(crop.samples), fx.config());
  }
  throw ConfigError("unknown format");
}

View apply_policy(const Waveform& crop, Format format, const AugmentPolicy& policy, const Waveform* partner,
                  Rng& rng, const FeatureExtractor& fx) {
  Waveform source = crop;
  if (policy.mix_enabled) {
    if (!partner) throw ConfigError("audio mixing is enabled but no partner waveform was supplied");
    source = mix(crop, *partner, sample_alpha(rng, policy.mix_beta_a, policy.mix_beta_b));
  }
  View view = to_format(source, format, fx);

  if (auto* s = std::get_if<Spectral>(&view)) {
    const long bins = static_cast<long>(s->values.cols);
    if (format != Format::kMfcc) {
      if (policy.freq_shift_max > 0) {
        const long shift = uniform_int(rng, -policy.freq_shift_max, policy.freq_shift_max);
        *s = freq_shift(*s, shift);
      }
      if (policy.freq_mask_max > 0) {
        const long f = uniform_int(rng, 0, std::min<long>(policy.freq_mask_max, bins));
        const long f0 = uniform_int(rng, 0, bins - f);
        *s = freq_mask(*s, static_cast<std::size_t>(f), static_cast<std::size_t>(f0));
      }
    }
    if (policy.time_mask_max > 0.0) {
      const long frames = static_cast<long>(s->values.rows);
      const long t = uniform_int(rng, 0, static_cast<long>(std::floor(policy.time_mask_max * frames)));
      const long t0 = uniform_int(rng, 0, frames - t);
      *s = time_mask(*s, static_cast<std::size_t>(t), static_cast<std::size_t>(t0));
    }
  } else if (policy.time_mask_max > 0.0) {
    auto& w = std::get<Waveform>(view);
    const long len = static_cast<long>(w.size());
    const long t = uniform_int(rng, 0, static_cast<long>(std::floor(policy.time_mask_max * len)));
    const long t0 = uniform_int(rng, 0, len - t);
    w = time_mask(w, static_cast<std::size_t>(t), static_cast<std::size_t>(t0));
  }
  return view;
}

}  // namespace mfcl
