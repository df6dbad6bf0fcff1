#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfcl/augment.hpp"
#include "mfcl/autodiff.hpp"
#include "mfcl/views.hpp"

namespace mfcl {

enum class EncoderKind { kConv1d, kConv2d };

EncoderKind encoder_kind_for(Format f);

/// Raw-waveform encoder: conv(K=10, S=5) then n x conv(K=4, S=2), each
/// followed by group norm and ReLU, then mean over time.
struct ConvNConfig {
  int n_stride2_layers = 6;  // Conv320
  std::size_t channels = 64;
  std::size_t groups = 16;

  std::size_t downsample() const { return std::size_t{5} << n_stride2_layers; }
  /// Shortest input that yields one output frame.
  std::size_t receptive_field() const;
  /// Temporal length before pooling for an input of `len` samples (0 if too short).
  std::size_t frames_before_pool(std::size_t len) const;
  void validate() const;
};

/// Spectral encoder stand-in: blocks of two same-padded 3x3 conv + GN + ReLU
/// followed by 2x2 average pooling; channels double per block; mean over
/// time and frequency. A 1x1 conv maps to `feature_dim` when it is set and
/// differs from the block output width.
struct Spec2DConfig {
  int n_blocks = 3;
  std::size_t base_channels = 16;
  std::size_t groups = 8;
  std::size_t feature_dim = 0;  // 0: natural width base_channels * 2^(n_blocks-1)

  std::size_t natural_dim() const { return base_channels << (n_blocks - 1); }
  std::size_t output_dim() const { return feature_dim ? feature_dim : natural_dim(); }
  bool has_matching_layer() const { return feature_dim != 0 && feature_dim != natural_dim(); }
  std::size_t min_extent() const { return std::size_t{1} << n_blocks; }
  void validate() const;
};

struct ProjectorConfig {
  std::size_t hidden_dim = 512;
  std::size_t out_dim = 512;
  void validate() const;
};

struct ModelConfig {
  ConvNConfig conv;
  Spec2DConfig spec2d;
  ProjectorConfig projector;
};

template <typename T>
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual EncoderKind kind() const = 0;
  virtual std::size_t feature_dim() const = 0;
  /// [N,1,L] (1D) or [N,1,frames,bins] (2D) -> [N, feature_dim].
  virtual ad::Var forward(ad::Tape<T>& tape, ad::Var input) const = 0;
  virtual std::size_t parameter_count() const = 0;
};

template <typename T>
class ConvNEncoder final : public Encoder<T> {
 public:
  ConvNEncoder(ad::ParameterSet<T>& params, const std::string& prefix, const ConvNConfig& cfg, Rng& rng);

  EncoderKind kind() const override { return EncoderKind::kConv1d; }
  std::size_t feature_dim() const override { return cfg_.channels; }
  ad::Var forward(ad::Tape<T>& tape, ad::Var input) const override;
  std::size_t parameter_count() const override;

  /// Output of the last GN+ReLU block before pooling, [N, channels, frames].
  ad::Var forward_frames(ad::Tape<T>& tape, ad::Var input) const;

 private:
  struct Layer {
    ad::Parameter<T>* weight;
    ad::Parameter<T>* bias;
    ad::Parameter<T>* gamma;
    ad::Parameter<T>* beta;
    std::size_t stride;
  };
  ConvNConfig cfg_;
  std::vector<Layer> layers_;
};

template <typename T>
class Spec2DEncoder final : public Encoder<T> {
 public:
  Spec2DEncoder(ad::ParameterSet<T>& params, const std::string& prefix, const Spec2DConfig& cfg, Rng& rng);

  EncoderKind kind() const override { return EncoderKind::kConv2d; }
  std::size_t feature_dim() const override { return cfg_.output_dim(); }
  ad::Var forward(ad::Tape<T>& tape, ad::Var input) const override;
  std::size_t parameter_count() const override;

  /// Feature map after the last pooling (and matching) layer, [N, C, H', W'].
  ad::Var forward_map(ad::Tape<T>& tape, ad::Var input) const;

 private:
  struct Conv {
    ad::Parameter<T>* weight;
    ad::Parameter<T>* bias;
    ad::Parameter<T>* gamma;
    ad::Parameter<T>* beta;
    std::size_t groups;
  };
  Spec2DConfig cfg_;
  std::vector<Conv> convs_;  // two per block
  ad::Parameter<T>* match_weight_ = nullptr;
  ad::Parameter<T>* match_bias_ = nullptr;
};

/// g: linear -> ReLU -> linear, no normalization.
template <typename T>
class Projector {
 public:
  Projector(ad::ParameterSet<T>& params, const std::string& prefix, std::size_t in_dim, const ProjectorConfig& cfg,
            Rng& rng);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return cfg_.out_dim; }
  ad::Var forward(ad::Tape<T>& tape, ad::Var z) const;

 private:
  std::size_t in_dim_;
  ProjectorConfig cfg_;
  ad::Parameter<T>* w1_;
  ad::Parameter<T>* b1_;
  ad::Parameter<T>* w2_;
  ad::Parameter<T>* b2_;
};

template <typename T>
std::unique_ptr<Encoder<T>> build_encoder(Format format, ad::ParameterSet<T>& params, const std::string& prefix,
                                          const ModelConfig& cfg, Rng& rng);

/// Stacks equally shaped views into an encoder input tensor. Throws
/// ConfigError when a view's format does not suit `kind`.
template <typename T>
ad::Tensor<T> stack_views(std::span<const View> views, EncoderKind kind);

/// Feature dimension an encoder built for `format` would have.
std::size_t feature_dim_for(Format format, const ModelConfig& cfg);

/// Throws ConfigError if the two branches cannot share one projector.
void check_branch_dims(const FormatSpec& formats, const ModelConfig& cfg);

/// Two branch encoders (one shared encoder when both formats agree) and the
/// shared projector, all in one parameter set.
template <typename T>
class ContrastiveModel {
 public:
  ContrastiveModel(const FormatSpec& formats, const ModelConfig& cfg, std::uint64_t seed);

  ad::ParameterSet<T>& params() { return params_; }
  const ad::ParameterSet<T>& params() const { return params_; }
  const FormatSpec& formats() const { return formats_; }
  const Encoder<T>& encoder_a() const { return *enc_a_; }
  const Encoder<T>& encoder_b() const { return enc_b_ ? *enc_b_ : *enc_a_; }
  const Projector<T>& projector() const { return *proj_; }
  bool shared_encoder() const { return !enc_b_; }

  /// Latents [2N, out_dim]: rows 0..N-1 from views_a, N..2N-1 from views_b.
  ad::Var latents(ad::Tape<T>& tape, const ViewBatch& batch) const;
  /// NT-Xent loss of a batch.
  ad::Var loss(ad::Tape<T>& tape, const ViewBatch& batch, double temperature) const;

 private:
  FormatSpec formats_;
  ad::ParameterSet<T> params_;
  std::unique_ptr<Encoder<T>> enc_a_;
  std::unique_ptr<Encoder<T>> enc_b_;
  std::unique_ptr<Projector<T>> proj_;
};

/// Deterministic forward pass of a single view; returns the feature vector.
template <typename T>
std::vector<double> encode(const View& view, const Encoder<T>& encoder);

/// Batched forward pass; one row per view.
template <typename T>
std::vector<std::vector<double>> encode_batch(std::span<const View> views, const Encoder<T>& encoder);

}  // namespace mfcl
