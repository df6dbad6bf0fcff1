#include <doctest.h>

#include <cmath>

#include "mfcl/encoders.hpp"
#include "mfcl/error.hpp"

using namespace mfcl;
using namespace mfcl::ad;

namespace {

Tensor<double> randn(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = g(rng);
  return t;
}

}  // namespace

TEST_CASE("Conv320 geometry") {
  const ConvNConfig cfg;
  CHECK(cfg.downsample() == 320);
  CHECK(cfg.frames_before_pool(48000) == 148);
  ParameterSet<float> ps;
  Rng rng(0);
  const ConvNEncoder<float> enc(ps, "a", cfg, rng);
  Tape<float> t;
  const Var x = t.constant(Tensor<float>({1, 1, 48000}, 0.0f));
  CHECK(t.shape(enc.forward_frames(t, x)) == Shape{1, 64, 148});
  CHECK(t.shape(enc.forward(t, x)) == Shape{1, 64});
}

TEST_CASE("Spec2D feature map") {
  const Spec2DConfig cfg;
  ParameterSet<float> ps;
  Rng rng(0);
  const Spec2DEncoder<float> enc(ps, "b", cfg, rng);
  Tape<float> t;
  const Var x = t.constant(Tensor<float>({1, 1, 299, 80}, 0.5f));
  CHECK(t.shape(enc.forward_map(t, x)) == Shape{1, 64, 37, 10});
  CHECK(t.shape(enc.forward(t, x)) == Shape{1, 64});
  CHECK(enc.feature_dim() == 64);
  const Var tiny = t.constant(Tensor<float>({1, 1, 7, 80}, 0.5f));
  CHECK_THROWS_AS(enc.forward(t, tiny), ShapeError);
}

TEST_CASE("constant input gives length-invariant features") {
  ParameterSet<double> ps;
  Rng rng(3);
  ConvNConfig cc;
  cc.n_stride2_layers = 2;
  cc.channels = 8;
  cc.groups = 2;
  const ConvNEncoder<double> conv(ps, "c", cc, rng);
  Spec2DConfig sc;
  sc.n_blocks = 2;
  sc.base_channels = 4;
  sc.groups = 2;
  const Spec2DEncoder<double> spec(ps, "s", sc, rng);
  auto feat = [](const Encoder<double>& e, Shape s) {
    Tape<double> t;
    return t.value(e.forward(t, t.constant(Tensor<double>(std::move(s), 0.3)))).storage();
  };
  const auto a = feat(conv, {1, 1, 4000}), b = feat(conv, {1, 1, 8000});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  const auto c = feat(spec, {1, 1, 40, 24}), d = feat(spec, {1, 1, 80, 24});
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(d[i]).epsilon(1e-9));
}

TEST_CASE("projector with zero weights outputs zeros") {
  ParameterSet<double> ps;
  Rng rng(1);
  ProjectorConfig pc;
  pc.hidden_dim = 16;
  pc.out_dim = 8;
  const Projector<double> proj(ps, "p", 12, pc, rng);
  for (auto* p : ps.all()) p->value.fill(0.0);
  Tape<double> t;
  const Var z = proj.forward(t, t.constant(randn({3, 12}, 2)));
  CHECK(t.shape(z) == Shape{3, 8});
  for (double v : t.value(z).values()) CHECK(v == 0.0);
}

TEST_CASE("branch dimension checks") {
  ModelConfig cfg;
  CHECK_NOTHROW(check_branch_dims(FormatSpec{}, cfg));
  cfg.conv.channels = 32;
  cfg.conv.groups = 8;
  CHECK_THROWS_AS(check_branch_dims(FormatSpec{}, cfg), ConfigError);
  cfg.spec2d.feature_dim = 32;
  CHECK_NOTHROW(check_branch_dims(FormatSpec{}, cfg));
  CHECK(cfg.spec2d.has_matching_layer());
  CHECK(feature_dim_for(Format::kWaveform, cfg) == 32);
  CHECK(feature_dim_for(Format::kMfcc, cfg) == 32);
}

TEST_CASE("stacking views for the wrong encoder kind fails") {
  Waveform w;
  w.samples.assign(100, 0.1f);
  const std::vector<View> views{View(w)};
  CHECK_THROWS(stack_views<float>(views, EncoderKind::kConv2d));
  const Tensor<float> ok = stack_views<float>(views, EncoderKind::kConv1d);
  CHECK(ok.shape() == Shape{1, 1, 100});
  Spectral s;
  s.values = Matrix(5, 4, 1.0);
  const std::vector<View> specs{View(s), View(s)};
  CHECK(stack_views<float>(specs, EncoderKind::kConv2d).shape() == Shape{2, 1, 5, 4});
  CHECK_THROWS(stack_views<float>(specs, EncoderKind::kConv1d));
  CHECK(encoder_kind_for(Format::kMfcc) == EncoderKind::kConv2d);
}

TEST_CASE("default model stays below two million parameters") {
  const ContrastiveModel<float> m(FormatSpec{}, ModelConfig{}, 0);
  CHECK(m.params().total_count() < 2000000);
  CHECK(!m.shared_encoder());
  const ContrastiveModel<float> single(FormatSpec{Format::kLogMel, Format::kLogMel}, ModelConfig{}, 0);
  CHECK(single.shared_encoder());
  CHECK(single.params().total_count() < m.params().total_count());
}

TEST_CASE("model initialization is seeded") {
  const ContrastiveModel<float> a(FormatSpec{}, ModelConfig{}, 5), b(FormatSpec{}, ModelConfig{}, 5),
      c(FormatSpec{}, ModelConfig{}, 6);
  CHECK(a.params().checksum() == b.params().checksum());
  CHECK(a.params().checksum() != c.params().checksum());
}
