#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mfcl/error.hpp"
#include "mfcl/views.hpp"

using namespace mfcl;

namespace {

Waveform noise_clip(std::size_t n, int sr, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, 0.2f);
  Waveform w;
  w.sample_rate = sr;
  for (std::size_t i = 0; i < n; ++i) w.samples.push_back(g(rng));
  return w;
}

// Asymptotic Kolmogorov distribution tail.
double ks_pvalue(double d, std::size_t n) {
  const double lam = (std::sqrt(double(n)) + 0.12 + 0.11 / std::sqrt(double(n))) * d;
  double p = 0.0;
  for (int j = 1; j < 100; ++j) p += 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lam * lam);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

TEST_CASE("crop offsets are uniform") {
  const Waveform clip = noise_clip(80000, 8000, 1);
  Rng rng(42);
  const std::size_t n = 10000;
  const double max_off = 80000 - 24000;
  std::vector<double> u;
  for (std::size_t i = 0; i < n; ++i) {
    const CropPair p = random_crop_pair(clip, 3.0, rng);
    REQUIRE(p.first.size() == 24000);
    REQUIRE(p.offset_first <= 56000);
    u.push_back((p.offset_first + 0.5) / (max_off + 1.0));
    CHECK(p.first.samples.front() == clip.samples[p.offset_first]);
    CHECK(p.second.samples.back() == clip.samples[p.offset_second + 23999]);
  }
  std::sort(u.begin(), u.end());
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d = std::max({d, std::abs(double(i + 1) / n - u[i]), std::abs(u[i] - double(i) / n)});
  }
  CHECK(ks_pvalue(d, n) > 0.01);
}

TEST_CASE("crop of the full length is the clip") {
  const Waveform clip = noise_clip(24000, 8000, 2);
  Rng rng(0);
  const CropPair p = random_crop_pair(clip, 3.0, rng);
  CHECK(p.first.samples == clip.samples);
  CHECK(p.second.samples == clip.samples);
  CHECK_THROWS_AS(random_crop_pair(noise_clip(23999, 8000, 2), 3.0, rng), DataError);
  CHECK(crop_samples(3.0, 16000) == 48000);
}

TEST_CASE("view pair shapes") {
  DspConfig cfg;
  const FeatureExtractor fx(cfg, 16000);
  const Waveform clip = noise_clip(160000, 16000, 3);
  Rng rng(4);
  AugmentPolicy no_mix;
  no_mix.mix_enabled = false;
  const ViewPair vp = make_views(clip, FormatSpec{}, 3.0, no_mix, nullptr, rng, fx);
  REQUIRE(std::holds_alternative<Waveform>(vp.a));
  CHECK(std::get<Waveform>(vp.a).size() == 48000);
  REQUIRE(std::holds_alternative<Spectral>(vp.b));
  CHECK(std::get<Spectral>(vp.b).values.rows == 299);
  CHECK(std::get<Spectral>(vp.b).values.cols == 80);
  CHECK_THROWS(make_views(clip, FormatSpec{}, 3.0, AugmentPolicy{}, nullptr, rng, fx));
  const Waveform partner = noise_clip(160000, 16000, 9);
  const ViewPair mixed = make_views(clip, FormatSpec{}, 3.0, AugmentPolicy{}, &partner, rng, fx);
  CHECK(std::get<Spectral>(mixed.b).values.rows == 299);
}

TEST_CASE("batch pairing and partners") {
  DspConfig cfg;
  const FeatureExtractor fx(cfg, 8000);
  Dataset data;
  for (int i = 0; i < 3; ++i) {
    data.clips.push_back(noise_clip(16000, 8000, 10 + i));
    data.labels.emplace_back();
    data.ids.push_back("c" + std::to_string(i));
  }
  BatchSettings s;
  s.crop_len_s = 1.0;
  Rng rng(5);
  const std::vector<std::size_t> idx{2, 0};
  const ViewBatch b = assemble_batch(data, idx, s, rng, fx);
  REQUIRE(b.size() == 2);
  CHECK(b.pairing == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}});
  CHECK(b.source_ids == idx);
  CHECK_THROWS(assemble_batch(data, 4, s, rng, fx));
  const std::vector<std::size_t> dup{1, 1};
  CHECK_THROWS(assemble_batch(data, dup, s, rng, fx));
  const ViewBatch r = assemble_batch(data, 3, s, rng, fx);
  std::set<std::size_t> uniq(r.source_ids.begin(), r.source_ids.end());
  CHECK(uniq.size() == 3);
}

TEST_CASE("batch schedule draws distinct clips deterministically") {
  const BatchSchedule sched(2000, 128, 17);
  CHECK(sched.batches_per_epoch() == 15);
  for (std::size_t step : {0, 1, 14, 15, 40}) {
    const auto ids = sched.indices(step);
    REQUIRE(ids.size() == 128);
    std::set<std::size_t> uniq(ids.begin(), ids.end());
    CHECK(uniq.size() == 128);
    for (auto i : ids) CHECK(i < 2000);
    CHECK(BatchSchedule(2000, 128, 17).indices(step) == ids);
  }
  CHECK(sched.indices(0) != BatchSchedule(2000, 128, 18).indices(0));
  // Within one epoch batches are disjoint.
  std::set<std::size_t> seen;
  for (std::size_t k = 0; k < 15; ++k) for (auto i : sched.indices(k)) CHECK(seen.insert(i).second);
  CHECK_THROWS(BatchSchedule(10, 11, 0));
}
