#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "mfcl/audio_io.hpp"
#include "mfcl/augment.hpp"
#include "mfcl/dsp.hpp"

namespace mfcl {

struct FormatSpec {
  Format branch_a = Format::kWaveform;
  Format branch_b = Format::kLogMel;

  bool single_format() const { return branch_a == branch_b; }
};

std::size_t crop_samples(double crop_len_s, int sample_rate);

/// Contiguous copy of `len` samples starting at `offset`.
Waveform crop_at(const Waveform& wave, std::size_t offset, std::size_t len);

struct CropPair {
  Waveform first;
  Waveform second;
  std::size_t offset_first = 0;
  std::size_t offset_second = 0;
};

/// Two crops with independent uniform start offsets; they may overlap.
CropPair random_crop_pair(const Waveform& wave, double crop_len_s, Rng& rng);

struct ViewPair {
  View a;
  View b;
};

/// crop -> optional mix -> format transform -> augmentation, per branch.
/// `partner` is another clip (full length); each branch mixes with its own
/// random crop of it.
ViewPair make_views(const Waveform& clip, const FormatSpec& formats, double crop_len_s,
                    const AugmentPolicy& policy, const Waveform* partner, Rng& rng,
                    const FeatureExtractor& fx);

struct ViewBatch {
  std::vector<View> views_a;
  std::vector<View> views_b;
  /// (k, k): views_a[k] and views_b[k] come from the same clip.
  std::vector<std::pair<std::size_t, std::size_t>> pairing;
  /// Dataset index of each pair's source clip.
  std::vector<std::size_t> source_ids;

  std::size_t size() const { return views_a.size(); }
};

struct BatchSettings {
  FormatSpec formats;
  double crop_len_s = 3.0;
  AugmentPolicy policy;
};

/// Views for the given distinct clip indices. Each pair draws one mixing
/// partner uniformly among the other clips of the batch; each branch mixes
/// with its own crop of it.
ViewBatch assemble_batch(const Dataset& data, std::span<const std::size_t> clip_indices,
                         const BatchSettings& settings, Rng& rng, const FeatureExtractor& fx);

/// Samples `n` distinct clips without replacement, then assembles them.
ViewBatch assemble_batch(const Dataset& data, std::size_t n, const BatchSettings& settings, Rng& rng,
                         const FeatureExtractor& fx);

/// Epoch-based batch order: each epoch is a seeded shuffle of the dataset cut
/// into floor(size / batch) batches; the ragged tail is dropped. Batch k is a
/// pure function of (seed, k), so batches can be prepared in any order.
class BatchSchedule {
 public:
  BatchSchedule(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::size_t batches_per_epoch() const { return per_epoch_; }
  std::vector<std::size_t> indices(std::size_t step) const;
  /// RNG that drives the augmentations of batch `step`.
  Rng augment_rng(std::size_t step) const;

 private:
  std::size_t size_;
  std::size_t batch_;
  std::size_t per_epoch_;
  std::uint64_t seed_;
};

}  // namespace mfcl
