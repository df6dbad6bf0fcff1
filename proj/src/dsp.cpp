#include "mfcl/dsp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "mfcl/error.hpp"

namespace mfcl {

std::size_t DspConfig::win_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::llround(win_ms * sample_rate / 1000.0));
}

std::size_t DspConfig::hop_samples(int sample_rate) const {
  return static_cast<std::size_t>(std::llround(hop_ms * sample_rate / 1000.0));
}

std::size_t DspConfig::fft_size(int sample_rate) const {
  if (n_fft > 0) return static_cast<std::size_t>(n_fft);
  return std::bit_ceil(std::max<std::size_t>(win_samples(sample_rate), 1));
}

void DspConfig::validate(int sample_rate) const {
  if (sample_rate <= 0) throw ConfigError("sample rate must be > 0");
  const std::size_t win = win_samples(sample_rate);
  const std::size_t hop = hop_samples(sample_rate);
  if (win == 0) throw ConfigError("dsp.win_ms yields an empty window");
  if (hop == 0 || hop > win) throw ConfigError("dsp.hop_ms must satisfy 0 < hop <= win");
  const std::size_t nfft = fft_size(sample_rate);
  if (!std::has_single_bit(nfft)) throw ConfigError("dsp.n_fft must be a power of two");
  if (nfft < win) throw ConfigError("dsp.n_fft must be at least the window length");
  if (n_mels <= 0 || static_cast<std::size_t>(n_mels) >= nfft / 2 + 1) {
    throw ConfigError("dsp.n_mels must satisfy 0 < n_mels < n_fft/2+1");
  }
  if (n_mfcc <= 0 || n_mfcc > n_mels) throw ConfigError("dsp.n_mfcc must satisfy 0 < n_mfcc <= n_mels");
  const double top = upper_hz(sample_rate);
  if (fmin < 0.0 || !(fmin < top) || top > sample_rate / 2.0) {
    throw ConfigError("dsp.fmin/dsp.fmax must satisfy 0 <= fmin < fmax <= sample_rate/2");
  }
  if (!(log_eps > 0.0)) throw ConfigError("dsp.log_eps must be > 0");
}

std::vector<double> hann_window(std::size_t n) {
  // Periodic Hann, the usual STFT analysis window.
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

std::size_t frame_count(std::size_t length, std::size_t win, std::size_t hop) {
  if (win == 0 || hop == 0) throw ConfigError("window and hop must be positive");
  if (length < win) {
    throw ShapeError("signal of " + std::to_string(length) + " samples is shorter than one " +
                     std::to_string(win) + "-sample window");
  }
  return (length - win) / hop + 1;
}

Matrix frame(std::span<const float> samples, int sample_rate, const DspConfig& cfg, WindowKind window) {
  const std::size_t win = cfg.win_samples(sample_rate);
  const std::size_t hop = cfg.hop_samples(sample_rate);
  const std::size_t n = frame_count(samples.size(), win, hop);
  const std::vector<double> w =
      window == WindowKind::kHann ? hann_window(win) : std::vector<double>(win, 1.0);
  Matrix out(n, win);
  for (std::size_t t = 0; t < n; ++t) {
    const float* src = samples.data() + t * hop;
    auto dst = out.row(t);
    for (std::size_t i = 0; i < win; ++i) dst[i] = static_cast<double>(src[i]) * w[i];
  }
  return out;
}

void fft(std::vector<std::complex<double>>& x) {
  const std::size_t n = x.size();
  if (!std::has_single_bit(n)) throw ShapeError("FFT size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  thread_local std::vector<std::complex<double>> twiddle;
  if (twiddle.size() != n / 2) {
    twiddle.resize(n / 2);
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(n);
    for (std::size_t k = 0; k < n / 2; ++k) twiddle[k] = {std::cos(ang * k), std::sin(ang * k)};
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t k = 0; k < half; ++k) {
      const std::complex<double> w = twiddle[k * step];
      for (std::size_t i = k; i < n; i += len) {
        const std::complex<double> u = x[i];
        const std::complex<double> v = x[i + half] * w;
        x[i] = u + v;
        x[i + half] = u - v;
      }
    }
  }
}

Matrix stft_power(std::span<const float> samples, int sample_rate, const DspConfig& cfg, WindowKind window) {
  cfg.validate(sample_rate);
  const Matrix frames = frame(samples, sample_rate, cfg, window);
  const std::size_t nfft = cfg.fft_size(sample_rate);
  const std::size_t bins = nfft / 2 + 1;
  Matrix out(frames.rows, bins);
  std::vector<std::complex<double>> buf(nfft);
  for (std::size_t t = 0; t < frames.rows; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    const auto src = frames.row(t);
    for (std::size_t i = 0; i < frames.cols; ++i) buf[i] = src[i];
    fft(buf);
    auto dst = out.row(t);
    for (std::size_t k = 0; k < bins; ++k) dst[k] = std::norm(buf[k]);
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelBank mel_filterbank(const DspConfig& cfg, int sample_rate) {
  cfg.validate(sample_rate);
  const std::size_t nfft = cfg.fft_size(sample_rate);
  const std::size_t bins = nfft / 2 + 1;
  const auto n_mels = static_cast<std::size_t>(cfg.n_mels);
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.upper_hz(sample_rate));

  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }

  MelBank bank;
  bank.weights = Matrix(n_mels, bins);
  bank.center_hz.assign(edges.begin() + 1, edges.end() - 1);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m];
    const double mid = edges[m + 1];
    const double hi = edges[m + 2];
    const double scale = 2.0 / (hi - lo);
    double row_sum = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(nfft);
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      const double w = std::max(0.0, std::min(rise, fall)) * scale;
      bank.weights(m, k) = w;
      row_sum += w;
    }
    if (!(row_sum > 0.0)) {
      throw ConfigError("dsp.n_mels = " + std::to_string(cfg.n_mels) +
                        " is too large for the FFT resolution: mel filter " + std::to_string(m) +
                        " covers no frequency bin");
    }
  }
  return bank;
}

Matrix log_mel(const Matrix& power, const MelBank& bank, const DspConfig& cfg) {
  if (power.cols != bank.weights.cols) {
    throw ShapeError("spectrogram has " + std::to_string(power.cols) + " bins but the mel bank expects " +
                     std::to_string(bank.weights.cols));
  }
  const std::size_t n_mels = bank.weights.rows;
  // Nonzero span of each triangle.
  std::vector<std::size_t> lo(n_mels, 0), hi(n_mels, 0);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const auto w = bank.weights.row(m);
    std::size_t k = 0;
    while (k < w.size() && w[k] == 0.0) ++k;
    lo[m] = k;
    hi[m] = w.size();
    while (hi[m] > k && w[hi[m] - 1] == 0.0) --hi[m];
  }
  Matrix out(power.rows, n_mels);
  for (std::size_t t = 0; t < power.rows; ++t) {
    const auto p = power.row(t);
    for (std::size_t m = 0; m < n_mels; ++m) {
      const auto w = bank.weights.row(m);
      double acc = 0.0;
      for (std::size_t k = lo[m]; k < hi[m]; ++k) acc += w[k] * p[k];
      out(t, m) = std::log(acc + cfg.log_eps);
    }
  }
  return out;
}

Matrix dct_matrix(std::size_t n_out, std::size_t n_in) {
  if (n_out > n_in || n_in == 0) throw ShapeError("DCT needs 0 < n_out <= n_in");
  Matrix c(n_out, n_in);
  const double n = static_cast<double>(n_in);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < n_in; ++i) {
      c(k, i) = scale * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) * static_cast<double>(k) / n);
    }
  }
  return c;
}

namespace {

Matrix apply_dct(const Matrix& logmel, const Matrix& basis) {
  Matrix out(logmel.rows, basis.rows);
  for (std::size_t t = 0; t < logmel.rows; ++t) {
    const auto x = logmel.row(t);
    for (std::size_t k = 0; k < basis.rows; ++k) {
      const auto b = basis.row(k);
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += b[i] * x[i];
      out(t, k) = acc;
    }
  }
  return out;
}

}  // namespace

Matrix mfcc(const Matrix& logmel, const DspConfig& cfg) {
  if (cfg.n_mfcc <= 0 || static_cast<std::size_t>(cfg.n_mfcc) > logmel.cols) {
    throw ShapeError("n_mfcc = " + std::to_string(cfg.n_mfcc) + " exceeds the " +
                     std::to_string(logmel.cols) + " mel bands");
  }
  return apply_dct(logmel, dct_matrix(static_cast<std::size_t>(cfg.n_mfcc), logmel.cols));
}

FeatureExtractor::FeatureExtractor(const DspConfig& cfg, int sample_rate)
    : cfg_(cfg),
      sample_rate_(sample_rate),
      bank_(mel_filterbank(cfg, sample_rate)),
      dct_(dct_matrix(static_cast<std::size_t>(cfg.n_mfcc), static_cast<std::size_t>(cfg.n_mels))) {}

Matrix FeatureExtractor::spectrogram(std::span<const float> samples) const {
  return stft_power(samples, sample_rate_, cfg_);
}

Matrix FeatureExtractor::log_mel(std::span<const float> samples) const {
  return mfcl::log_mel(spectrogram(samples), bank_, cfg_);
}

Matrix FeatureExtractor::log_mel_from_power(const Matrix& power) const {
  return mfcl::log_mel(power, bank_, cfg_);
}

Matrix FeatureExtractor::mfcc(std::span<const float> samples) const {
  return apply_dct(log_mel(samples), dct_);
}

void write_matrix_text(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "shape " << m.rows << ' ' << m.cols << '\n';
  char buf[32];
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      if (c) out << ' ';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

Matrix read_matrix_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string tag;
  std::size_t rows = 0;
  std::size_t cols = 0;
  if (!(in >> tag >> rows >> cols) || tag != "shape") {
    throw DataError("'" + path.string() + "' does not start with a shape line");
  }
  Matrix m(rows, cols);
  for (double& v : m.data) {
    if (!(in >> v)) throw DataError("'" + path.string() + "' has fewer values than its shape declares");
  }
  return m;
}

}  // namespace mfcl
