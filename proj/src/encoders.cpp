#include "mfcl/encoders.hpp"

#include <numeric>
#include <variant>

namespace mfcl {

using ad::Parameter;
using ad::ParameterSet;
using ad::Tape;
using ad::Tensor;
using ad::Var;

EncoderKind encoder_kind_for(Format f) {
  return f == Format::kWaveform ? EncoderKind::kConv1d : EncoderKind::kConv2d;
}

std::size_t ConvNConfig::receptive_field() const {
  std::size_t len = 1;
  for (int i = 0; i < n_stride2_layers; ++i) len = (len - 1) * 2 + 4;
  return (len - 1) * 5 + 10;
}

std::size_t ConvNConfig::frames_before_pool(std::size_t len) const {
  if (len < 10) return 0;
  len = (len - 10) / 5 + 1;
  for (int i = 0; i < n_stride2_layers; ++i) {
    if (len < 4) return 0;
    len = (len - 4) / 2 + 1;
  }
  return len;
}

void ConvNConfig::validate() const {
  if (n_stride2_layers < 0 || n_stride2_layers > 12) {
    throw ConfigError("model.conv_layers: must be in [0, 12], got " + std::to_string(n_stride2_layers));
  }
  if (channels == 0) throw ConfigError("model.conv_channels: must be positive");
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("model.conv_groups: " + std::to_string(groups) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
}

void Spec2DConfig::validate() const {
  if (n_blocks < 1 || n_blocks > 8) {
    throw ConfigError("model.spec_blocks: must be in [1, 8], got " + std::to_string(n_blocks));
  }
  if (base_channels == 0) throw ConfigError("model.spec_channels: must be positive");
  if (groups == 0) throw ConfigError("model.spec_groups: must be positive");
}

void ProjectorConfig::validate() const {
  if (hidden_dim == 0) throw ConfigError("model.proj_hidden: must be positive");
  if (out_dim == 0) throw ConfigError("model.proj_out: must be positive");
}

namespace {

template <typename T>
Parameter<T>& add_weight(ParameterSet<T>& params, const std::string& name, ad::Shape shape, Rng& rng) {
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  Parameter<T>& p = params.add(name, std::move(shape));
  ad::kaiming_uniform(p.value, fan_in, rng);
  return p;
}

template <typename T>
Parameter<T>& add_filled(ParameterSet<T>& params, const std::string& name, std::size_t n, T value) {
  Parameter<T>& p = params.add(name, {n});
  p.value.fill(value);
  return p;
}

}  // namespace

// ConvN

template <typename T>
ConvNEncoder<T>::ConvNEncoder(ParameterSet<T>& params, const std::string& prefix, const ConvNConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  std::size_t cin = 1;
  for (int i = 0; i <= cfg_.n_stride2_layers; ++i) {
    const std::string base = prefix + "/layer" + std::to_string(i) + "/";
    const std::size_t k = i == 0 ? 10 : 4;
    Layer layer;
    layer.weight = &add_weight(params, base + "weight", {cfg_.channels, cin, k}, rng);
    layer.bias = &add_filled(params, base + "bias", cfg_.channels, T{0});
    layer.gamma = &add_filled(params, base + "gn_gamma", cfg_.channels, T{1});
    layer.beta = &add_filled(params, base + "gn_beta", cfg_.channels, T{0});
    layer.stride = i == 0 ? 5 : 2;
    layers_.push_back(layer);
    cin = cfg_.channels;
  }
}

template <typename T>
Var ConvNEncoder<T>::forward_frames(Tape<T>& tape, Var input) const {
  const ad::Shape& s = tape.shape(input);
  if (s.size() != 3 || s[1] != 1) {
    throw ShapeError("waveform encoder expects [N,1,L], got " + ad::shape_str(s));
  }
  if (s[2] < cfg_.receptive_field()) {
    throw ShapeError("waveform encoder: input of " + std::to_string(s[2]) + " samples is shorter than the " +
                     std::to_string(cfg_.receptive_field()) + "-sample receptive field");
  }
  Var h = input;
  for (const Layer& l : layers_) {
    h = ad::conv1d(tape, h, tape.parameter(*l.weight), tape.parameter(*l.bias), l.stride);
    h = ad::group_norm(tape, h, cfg_.groups, tape.parameter(*l.gamma), tape.parameter(*l.beta));
    h = ad::relu(tape, h);
  }
  return h;
}

template <typename T>
Var ConvNEncoder<T>::forward(Tape<T>& tape, Var input) const {
  return ad::global_avg_pool(tape, forward_frames(tape, input), {2});
}

template <typename T>
std::size_t ConvNEncoder<T>::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.weight->value.numel() + l.bias->value.numel() + 2 * l.gamma->value.numel();
  return n;
}

// Spec2D

template <typename T>
Spec2DEncoder<T>::Spec2DEncoder(ParameterSet<T>& params, const std::string& prefix, const Spec2DConfig& cfg,
                                Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  std::size_t cin = 1;
  for (int b = 0; b < cfg_.n_blocks; ++b) {
    const std::size_t cout = cfg_.base_channels << b;
    for (int c = 0; c < 2; ++c) {
      const std::string base = prefix + "/block" + std::to_string(b) + "/conv" + std::to_string(c) + "/";
      Conv conv;
      conv.weight = &add_weight(params, base + "weight", {cout, cin, 3, 3}, rng);
      conv.bias = &add_filled(params, base + "bias", cout, T{0});
      conv.gamma = &add_filled(params, base + "gn_gamma", cout, T{1});
      conv.beta = &add_filled(params, base + "gn_beta", cout, T{0});
      conv.groups = std::gcd(cfg_.groups, cout);
      convs_.push_back(conv);
      cin = cout;
    }
  }
  if (cfg_.has_matching_layer()) {
    match_weight_ = &add_weight(params, prefix + "/match/weight", {cfg_.feature_dim, cin, 1, 1}, rng);
    match_bias_ = &add_filled(params, prefix + "/match/bias", cfg_.feature_dim, T{0});
  }
}

template <typename T>
Var Spec2DEncoder<T>::forward_map(Tape<T>& tape, Var input) const {
  const ad::Shape& s = tape.shape(input);
  if (s.size() != 4 || s[1] != 1) {
    throw ShapeError("spectral encoder expects [N,1,frames,bins], got " + ad::shape_str(s));
  }
  if (s[2] < cfg_.min_extent() || s[3] < cfg_.min_extent()) {
    throw ShapeError("spectral encoder: input " + ad::shape_str(s) + " is smaller than " +
                     std::to_string(cfg_.min_extent()) + " in time or frequency");
  }
  Var h = input;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const Conv& c = convs_[i];
    h = ad::conv2d(tape, h, tape.parameter(*c.weight), tape.parameter(*c.bias), 1, ad::Padding::kSameReplicate);
    h = ad::group_norm(tape, h, c.groups, tape.parameter(*c.gamma), tape.parameter(*c.beta));
    h = ad::relu(tape, h);
    if (i % 2 == 1) h = ad::avg_pool2x2(tape, h);
  }
  if (match_weight_) {
    h = ad::conv2d(tape, h, tape.parameter(*match_weight_), tape.parameter(*match_bias_), 1);
  }
  return h;
}

template <typename T>
Var Spec2DEncoder<T>::forward(Tape<T>& tape, Var input) const {
  return ad::global_avg_pool(tape, forward_map(tape, input), {2, 3});
}

template <typename T>
std::size_t Spec2DEncoder<T>::parameter_count() const {
  std::size_t n = 0;
  for (const Conv& c : convs_) n += c.weight->value.numel() + c.bias->value.numel() + 2 * c.gamma->value.numel();
  if (match_weight_) n += match_weight_->value.numel() + match_bias_->value.numel();
  return n;
}

// Projector

template <typename T>
Projector<T>::Projector(ParameterSet<T>& params, const std::string& prefix, std::size_t in_dim,
                        const ProjectorConfig& cfg, Rng& rng)
    : in_dim_(in_dim), cfg_(cfg) {
  cfg_.validate();
  w1_ = &add_weight(params, prefix + "/hidden/weight", {cfg_.hidden_dim, in_dim}, rng);
  b1_ = &add_filled(params, prefix + "/hidden/bias", cfg_.hidden_dim, T{0});
  w2_ = &add_weight(params, prefix + "/out/weight", {cfg_.out_dim, cfg_.hidden_dim}, rng);
  b2_ = &add_filled(params, prefix + "/out/bias", cfg_.out_dim, T{0});
}

template <typename T>
Var Projector<T>::forward(Tape<T>& tape, Var z) const {
  Var h = ad::relu(tape, ad::linear(tape, z, tape.parameter(*w1_), tape.parameter(*b1_)));
  return ad::linear(tape, h, tape.parameter(*w2_), tape.parameter(*b2_));
}

// Factories and helpers

template <typename T>
std::unique_ptr<Encoder<T>> build_encoder(Format format, ParameterSet<T>& params, const std::string& prefix,
                                          const ModelConfig& cfg, Rng& rng) {
  if (encoder_kind_for(format) == EncoderKind::kConv1d) {
    return std::make_unique<ConvNEncoder<T>>(params, prefix, cfg.conv, rng);
  }
  return std::make_unique<Spec2DEncoder<T>>(params, prefix, cfg.spec2d, rng);
}

std::size_t feature_dim_for(Format format, const ModelConfig& cfg) {
  return encoder_kind_for(format) == EncoderKind::kConv1d ? cfg.conv.channels : cfg.spec2d.output_dim();
}

void check_branch_dims(const FormatSpec& formats, const ModelConfig& cfg) {
  const std::size_t da = feature_dim_for(formats.branch_a, cfg);
  const std::size_t db = feature_dim_for(formats.branch_b, cfg);
  if (da != db) {
    throw ConfigError("model: branch feature sizes differ (" + std::string(format_name(formats.branch_a)) + " " +
                      std::to_string(da) + ", " + std::string(format_name(formats.branch_b)) + " " +
                      std::to_string(db) + ") but both branches feed one shared projector; set " +
                      "model.spec_feature_dim or model.conv_channels so they match");
  }
}

template <typename T>
Tensor<T> stack_views(std::span<const View> views, EncoderKind kind) {
  if (views.empty()) throw ShapeError("stack_views: no views");
  if (kind == EncoderKind::kConv1d) {
    const std::size_t len = std::get_if<Waveform>(&views[0]) ? std::get<Waveform>(views[0]).size() : 0;
    Tensor<T> out({views.size(), 1, len});
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto* w = std::get_if<Waveform>(&views[i]);
      if (!w) {
        throw ConfigError("view " + std::to_string(i) + " has format " +
                          std::string(format_name(view_format(views[i]))) + " but the encoder expects waveforms");
      }
      if (w->size() != len) throw ShapeError("stack_views: waveform views differ in length");
      std::copy(w->samples.begin(), w->samples.end(), out.data() + i * len);
    }
    return out;
  }
  const auto* first = std::get_if<Spectral>(&views[0]);
  const std::size_t rows = first ? first->values.rows : 0;
  const std::size_t cols = first ? first->values.cols : 0;
  Tensor<T> out({views.size(), 1, rows, cols});
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto* s = std::get_if<Spectral>(&views[i]);
    if (!s) {
      throw ConfigError("view " + std::to_string(i) + " is a waveform but the encoder expects a spectral input");
    }
    if (s->values.rows != rows || s->values.cols != cols) {
      throw ShapeError("stack_views: spectral views differ in shape");
    }
    std::copy(s->values.data.begin(), s->values.data.end(), out.data() + i * rows * cols);
  }
  return out;
}

// Contrastive model

template <typename T>
ContrastiveModel<T>::ContrastiveModel(const FormatSpec& formats, const ModelConfig& cfg, std::uint64_t seed)
    : formats_(formats) {
  check_branch_dims(formats, cfg);
  Rng rng_a = stream_rng(seed, 0xa);
  enc_a_ = build_encoder<T>(formats.branch_a, params_, "encoder_a", cfg, rng_a);
  if (!formats.single_format()) {
    Rng rng_b = stream_rng(seed, 0xb);
    enc_b_ = build_encoder<T>(formats.branch_b, params_, "encoder_b", cfg, rng_b);
  }
  Rng rng_p = stream_rng(seed, 0xc);
  proj_ = std::make_unique<Projector<T>>(params_, "projector", enc_a_->feature_dim(), cfg.projector, rng_p);
}

template <typename T>
Var ContrastiveModel<T>::latents(Tape<T>& tape, const ViewBatch& batch) const {
  if (batch.views_a.size() != batch.views_b.size() || batch.views_a.empty()) {
    throw ShapeError("contrastive batch needs equally many non-empty a and b views");
  }
  Var z;
  if (shared_encoder()) {
    std::vector<View> all(batch.views_a.begin(), batch.views_a.end());
    all.insert(all.end(), batch.views_b.begin(), batch.views_b.end());
    z = enc_a_->forward(tape, tape.constant(stack_views<T>(all, enc_a_->kind())));
  } else {
    Var za = enc_a_->forward(tape, tape.constant(stack_views<T>(batch.views_a, enc_a_->kind())));
    Var zb = enc_b_->forward(tape, tape.constant(stack_views<T>(batch.views_b, enc_b_->kind())));
    z = ad::concat_rows(tape, za, zb);
  }
  return proj_->forward(tape, z);
}

template <typename T>
Var ContrastiveModel<T>::loss(Tape<T>& tape, const ViewBatch& batch, double temperature) const {
  return ad::nt_xent(tape, latents(tape, batch), temperature);
}

template <typename T>
std::vector<std::vector<double>> encode_batch(std::span<const View> views, const Encoder<T>& encoder) {
  Tape<T> tape;
  Var f = encoder.forward(tape, tape.constant(stack_views<T>(views, encoder.kind())));
  const Tensor<T>& v = tape.value(f);
  const std::size_t d = v.dim(1);
  std::vector<std::vector<double>> out(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) out[i].assign(v.data() + i * d, v.data() + (i + 1) * d);
  return out;
}

template <typename T>
std::vector<double> encode(const View& view, const Encoder<T>& encoder) {
  return encode_batch<T>(std::span<const View>(&view, 1), encoder).front();
}

#define MFCL_INSTANTIATE(T)                                                                                       \
  template class ConvNEncoder<T>;                                                                                 \
  template class Spec2DEncoder<T>;                                                                                \
  template class Projector<T>;                                                                                    \
  template class ContrastiveModel<T>;                                                                             \
  template std::unique_ptr<Encoder<T>> build_encoder<T>(Format, ParameterSet<T>&, const std::string&,            \
                                                        const ModelConfig&, Rng&);                               \
  template Tensor<T> stack_views<T>(std::span<const View>, EncoderKind);                                         \
  template std::vector<double> encode<T>(const View&, const Encoder<T>&);                                        \
  template std::vector<std::vector<double>> encode_batch<T>(std::span<const View>, const Encoder<T>&);

MFCL_INSTANTIATE(float)
MFCL_INSTANTIATE(double)

}  // namespace mfcl
