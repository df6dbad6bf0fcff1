#include <doctest.h>

#include <cmath>

#include "mfcl/augment.hpp"
#include "mfcl/error.hpp"

using namespace mfcl;

namespace {

Spectral row_spec(std::vector<double> row, double fill) {
  Spectral s;
  s.format = Format::kLogMel;
  s.values = Matrix(1, row.size());
  s.values.data = std::move(row);
  s.silence.assign(s.values.cols, fill);
  return s;
}

Waveform wave_of(std::vector<float> v) {
  Waveform w;
  w.samples = std::move(v);
  return w;
}

}  // namespace

TEST_CASE("mixing coefficient follows Beta(5, 2)") {
  Rng rng(123);
  const int n = 1000000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double a = sample_alpha(rng);
    REQUIRE(a > 0.0);
    REQUIRE(a < 1.0);
    sum += a;
    sq += a * a;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  CHECK(std::abs(mean - 5.0 / 7.0) < 0.002);
  CHECK(std::abs(var - 10.0 / (49.0 * 8.0)) < 0.001);
}

TEST_CASE("mix examples") {
  const Waveform a = wave_of({1.0f, 0.0f, -1.0f}), b = wave_of({0.0f, 1.0f, 1.0f});
  const Waveform m = mix(a, b, 0.75);
  CHECK(m.samples[0] == doctest::Approx(0.75));
  CHECK(m.samples[1] == doctest::Approx(0.25));
  CHECK(m.samples[2] == doctest::Approx(-0.5));
  CHECK(mix(a, b, 1.0).samples == a.samples);
  CHECK_THROWS(mix(a, wave_of({1.0f}), 0.5));
}

TEST_CASE("expected mix weight of the anchor is 5/7") {
  // E[alpha x1 + (1 - alpha) x2] for x1 = 1, x2 = 0.
  Rng rng(9);
  const Waveform one = wave_of({1.0f}), zero = wave_of({0.0f});
  double acc = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) acc += mix(one, zero, sample_alpha(rng)).samples[0];
  CHECK(std::abs(acc / n - 5.0 / 7.0) < 0.003);
}

TEST_CASE("time mask on a waveform") {
  const Waveform m = time_mask(wave_of({1, 1, 1, 1}), 2, 1);
  CHECK(m.samples == std::vector<float>{1, 0, 0, 1});
  CHECK(time_mask(wave_of({1, 1}), 0, 0).samples == std::vector<float>{1, 1});
}

TEST_CASE("time mask on a spectral view fills whole frames with silence") {
  Spectral s;
  s.values = Matrix(4, 3, 5.0);
  s.silence = {-1.0, -2.0, -3.0};
  const Spectral m = time_mask(s, 2, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(m.values(0, c) == 5.0);
    CHECK(m.values(1, c) == s.silence[c]);
    CHECK(m.values(2, c) == s.silence[c]);
    CHECK(m.values(3, c) == 5.0);
  }
}

TEST_CASE("frequency mask touches only the masked bins") {
  Spectral s;
  s.values = Matrix(3, 6);
  for (std::size_t i = 0; i < s.values.data.size(); ++i) s.values.data[i] = double(i);
  s.silence.assign(6, -9.0);
  const Spectral m = freq_mask(s, 2, 3);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t b = 0; b < 6; ++b) {
      if (b == 3 || b == 4) CHECK(m.values(t, b) == -9.0);
      else CHECK(m.values(t, b) == s.values(t, b));
    }
  }
}

TEST_CASE("frequency shift") {
  const double f = -13.8;
  const Spectral s = row_spec({1, 2, 3, 4, 5}, f);
  CHECK(freq_shift(s, 2).values.data == std::vector<double>{f, f, 1, 2, 3});
  CHECK(freq_shift(s, -1).values.data == std::vector<double>{2, 3, 4, 5, f});
  CHECK(freq_shift(s, 0).values.data == s.values.data);
  CHECK(freq_shift(s, 5).values.data == std::vector<double>(5, f));
  // Non-negative shifts compose additively.
  CHECK(freq_shift(freq_shift(s, 1), 2).values == freq_shift(s, 3).values);
  CHECK(freq_shift(freq_shift(s, -1), -1).values == freq_shift(s, -2).values);
}

TEST_CASE("all-off policy is the plain transform") {
  DspConfig cfg;
  const FeatureExtractor fx(cfg, 16000);
  Rng src(1);
  Waveform crop;
  std::normal_distribution<float> g(0.0f, 0.2f);
  for (int i = 0; i < 8000; ++i) crop.samples.push_back(g(src));
  AugmentPolicy off;
  off.mix_enabled = false;
  off.freq_shift_max = 0;
  for (Format f : {Format::kWaveform, Format::kSpectrogram, Format::kLogMel, Format::kMfcc}) {
    Rng rng(5);
    const View v = apply_policy(crop, f, off, nullptr, rng, fx);
    const View ref = to_format(crop, f, fx);
    if (f == Format::kWaveform) CHECK(std::get<Waveform>(v).samples == crop.samples);
    else CHECK(std::get<Spectral>(v).values == std::get<Spectral>(ref).values);
  }
}

TEST_CASE("augmentation is deterministic given the rng state") {
  DspConfig cfg;
  const FeatureExtractor fx(cfg, 16000);
  Waveform crop, partner;
  Rng src(2);
  std::normal_distribution<float> g(0.0f, 0.2f);
  for (int i = 0; i < 8000; ++i) crop.samples.push_back(g(src));
  for (int i = 0; i < 8000; ++i) partner.samples.push_back(g(src));
  AugmentPolicy p;
  p.time_mask_max = 0.1;
  p.freq_mask_max = 8;
  Rng r1(77), r2(77);
  const View a = apply_policy(crop, Format::kLogMel, p, &partner, r1, fx);
  const View b = apply_policy(crop, Format::kLogMel, p, &partner, r2, fx);
  CHECK(std::get<Spectral>(a).values == std::get<Spectral>(b).values);
}

TEST_CASE("policy validation") {
  AugmentPolicy p;
  CHECK_NOTHROW(p.validate(80));
  p.freq_shift_max = 80;
  CHECK_NOTHROW(p.validate(80));
  p.freq_shift_max = 81;
  CHECK_THROWS_AS(p.validate(80), ConfigError);
  p = AugmentPolicy{};
  p.time_mask_max = 1.5;
  CHECK_THROWS_AS(p.validate(80), ConfigError);
  p = AugmentPolicy{};
  p.mix_beta_a = 0.0;
  CHECK_THROWS_AS(p.validate(80), ConfigError);
}
