#include "mfcl/views.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mfcl/error.hpp"

namespace mfcl {

std::size_t crop_samples(double crop_len_s, int sample_rate) {
  if (!(crop_len_s > 0.0)) throw ConfigError("views.crop_len_s must be > 0");
  return static_cast<std::size_t>(std::llround(crop_len_s * sample_rate));
}

Waveform crop_at(const Waveform& wave, std::size_t offset, std::size_t len) {
  if (offset > wave.size() || len > wave.size() - offset) {
    throw ShapeError("crop [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                     ") exceeds clip of " + std::to_string(wave.size()) + " samples");
  }
  Waveform out;
  out.sample_rate = wave.sample_rate;
  out.samples.assign(wave.samples.begin() + static_cast<long>(offset),
                     wave.samples.begin() + static_cast<long>(offset + len));
  return out;
}

namespace {

std::size_t random_offset(const Waveform& wave, std::size_t len, Rng& rng) {
  if (wave.size() < len) {
    throw DataError("clip of " + std::to_string(wave.size()) + " samples is shorter than the " +
                    std::to_string(len) + "-sample crop");
  }
  return static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(wave.size() - len)));
}

}  // namespace

CropPair random_crop_pair(const Waveform& wave, double crop_len_s, Rng& rng) {
  const std::size_t len = crop_samples(crop_len_s, wave.sample_rate);
  CropPair out;
  out.offset_first = random_offset(wave, len, rng);
  out.offset_second = random_offset(wave, len, rng);
  out.first = crop_at(wave, out.offset_first, len);
  out.second = crop_at(wave, out.offset_second, len);
  return out;
}

ViewPair make_views(const Waveform& clip, const FormatSpec& formats, double crop_len_s,
                    const AugmentPolicy& policy, const Waveform* partner, Rng& rng,
                    const FeatureExtractor& fx) {
  CropPair crops = random_crop_pair(clip, crop_len_s, rng);
  const std::size_t len = crops.first.size();
  Waveform partner_a;
  Waveform partner_b;
  if (policy.mix_enabled) {
    if (!partner) throw ConfigError("audio mixing is enabled but no partner clip was supplied");
    partner_a = crop_at(*partner, random_offset(*partner, len, rng), len);
  }
  ViewPair out;
  out.a = apply_policy(crops.first, formats.branch_a, policy, policy.mix_enabled ? &partner_a : nullptr, rng, fx);
  if (policy.mix_enabled) partner_b = crop_at(*partner, random_offset(*partner, len, rng), len);
  out.b = apply_policy(crops.second, formats.branch_b, policy, policy.mix_enabled ? &partner_b : nullptr, rng, fx);
  return out;
}

ViewBatch assemble_batch(const Dataset& data, std::span<const std::size_t> clip_indices,
                         const BatchSettings& settings, Rng& rng, const FeatureExtractor& fx) {
  const std::size_t n = clip_indices.size();
  if (n < 2) throw ConfigError("batch size must be >= 2 so that negatives exist");
  std::vector<std::size_t> sorted(clip_indices.begin(), clip_indices.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError("batch clip indices must be distinct");
  }
  ViewBatch batch;
  batch.views_a.reserve(n);
  batch.views_b.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t idx = clip_indices[k];
    if (idx >= data.size()) throw DataError("clip index " + std::to_string(idx) + " out of range");
    const Waveform* partner = nullptr;
    if (settings.policy.mix_enabled) {
      auto p = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(n) - 2));
      if (p >= k) ++p;
      partner = &data.clips[clip_indices[p]];
    }
    ViewPair pair = make_views(data.clips[idx], settings.formats, settings.crop_len_s, settings.policy,
                               partner, rng, fx);
    batch.views_a.push_back(std::move(pair.a));
    batch.views_b.push_back(std::move(pair.b));
    batch.pairing.emplace_back(k, k);
    batch.source_ids.push_back(idx);
  }
  return batch;
}

ViewBatch assemble_batch(const Dataset& data, std::size_t n, const BatchSettings& settings, Rng& rng,
                         const FeatureExtractor& fx) {
  if (n > data.size()) {
    throw DataError("batch of " + std::to_string(n) + " clips requested from a dataset of " +
                    std::to_string(data.size()));
  }
  std::vector<std::size_t> pool(data.size());
  std::iota(pool.begin(), pool.end(), 0);
  // Partial Fisher-Yates draws n distinct clips.
  for (std::size_t k = 0; k < n; ++k) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<long>(k), static_cast<long>(pool.size()) - 1));
    std::swap(pool[k], pool[j]);
  }
  pool.resize(n);
  return assemble_batch(data, pool, settings, rng, fx);
}

BatchSchedule::BatchSchedule(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_(batch_size), per_epoch_(batch_size ? dataset_size / batch_size : 0), seed_(seed) {
  if (batch_size < 2) throw ConfigError("train.batch: must be >= 2");
  if (per_epoch_ == 0) {
    throw DataError("dataset of " + std::to_string(dataset_size) + " clips cannot fill one batch of " +
                    std::to_string(batch_size));
  }
}

std::vector<std::size_t> BatchSchedule::indices(std::size_t step) const {
  const std::size_t epoch = step / per_epoch_;
  const std::size_t slot = step % per_epoch_;
  std::vector<std::size_t> perm(size_);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = stream_rng(seed_ ^ 0xe90cULL, epoch);
  std::shuffle(perm.begin(), perm.end(), rng);
  return {perm.begin() + static_cast<long>(slot * batch_), perm.begin() + static_cast<long>((slot + 1) * batch_)};
}

Rng BatchSchedule::augment_rng(std::size_t step) const { return stream_rng(seed_ ^ 0xa46eULL, step); }

}  // namespace mfcl
