#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace mfcl {

/// Dense row-major matrix of doubles. Rows are time frames in every
/// spectral representation.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct DspConfig {
  double win_ms = 20.0;
  double hop_ms = 10.0;
  int n_fft = 0;  // 0: window length rounded up to a power of two
  int n_mels = 80;
  int n_mfcc = 13;
  double fmin = 0.0;
  double fmax = 0.0;  // 0: sample_rate / 2
  double log_eps = 1e-6;

  std::size_t win_samples(int sample_rate) const;
  std::size_t hop_samples(int sample_rate) const;
  std::size_t fft_size(int sample_rate) const;
  std::size_t n_bins(int sample_rate) const { return fft_size(sample_rate) / 2 + 1; }
  double upper_hz(int sample_rate) const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }

  /// Throws ConfigError naming the `dsp.*` field at fault.
  void validate(int sample_rate) const;
};

enum class WindowKind { kHann, kRectangular };

std::vector<double> hann_window(std::size_t n);

/// floor((length - win) / hop) + 1; throws if length < win.
std::size_t frame_count(std::size_t length, std::size_t win, std::size_t hop);

/// Frames without padding; frame t starts at t * hop. Result is [frames x win].
Matrix frame(std::span<const float> samples, int sample_rate, const DspConfig& cfg,
             WindowKind window = WindowKind::kHann);

/// In-place radix-2 complex FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& x);

/// Power spectrogram |X|^2, shape [frames x n_fft/2+1].
Matrix stft_power(std::span<const float> samples, int sample_rate, const DspConfig& cfg,
                  WindowKind window = WindowKind::kHann);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelBank {
  Matrix weights;                // [n_mels x n_bins]
  std::vector<double> center_hz;  // peak frequency of each triangle
};

/// Triangular filters uniformly spaced on the mel scale, each scaled by
/// 2 / (f_{m+1} - f_{m-1}). Throws ConfigError when a filter covers no FFT bin.
MelBank mel_filterbank(const DspConfig& cfg, int sample_rate);

/// log(power * weights^T + log_eps), shape [frames x n_mels].
Matrix log_mel(const Matrix& power, const MelBank& bank, const DspConfig& cfg);

/// Orthonormal DCT-II basis, [n_out x n_in]; row k is the k-th cosine.
Matrix dct_matrix(std::size_t n_out, std::size_t n_in);

/// First n_mfcc DCT-II coefficients of each log-mel frame, c0 included.
Matrix mfcc(const Matrix& logmel, const DspConfig& cfg);

/// Caches the mel bank and DCT basis for repeated transforms at one sample rate.
class FeatureExtractor {
 public:
  FeatureExtractor(const DspConfig& cfg, int sample_rate);

  Matrix spectrogram(std::span<const float> samples) const;
  Matrix log_mel(std::span<const float> samples) const;
  Matrix log_mel_from_power(const Matrix& power) const;
  Matrix mfcc(std::span<const float> samples) const;

  const DspConfig& config() const { return cfg_; }
  int sample_rate() const { return sample_rate_; }
  const MelBank& bank() const { return bank_; }

 private:
  DspConfig cfg_;
  int sample_rate_;
  MelBank bank_;
  Matrix dct_;
};

// Golden-vector text format: "shape <rows> <cols>" then one row per line,
// values separated by single spaces, 17 significant digits (round-trip exact).
void write_matrix_text(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_text(const std::filesystem::path& path);

}  // namespace mfcl
