#include <doctest.h>

#include <fstream>

#include "helpers.hpp"
#include "mfcl/config.hpp"
#include "mfcl/error.hpp"

using namespace mfcl;

namespace {

std::string error_of(std::string_view text, bool strict = true) {
  try {
    parse_config_text(text, strict);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty config gives the documented defaults") {
  const RunConfig c = parse_config_text("", true);
  CHECK(c.train.loss.temperature == 0.1);
  CHECK(c.train.steps == 3000);
  CHECK(c.train.batch == 128);
  CHECK(c.train.lr0 == 1e-4);
  CHECK(c.train.lr_min == 1e-6);
  CHECK(c.train.views.crop_len_s == 3.0);
  CHECK(c.train.views.policy.freq_shift_max == 40);
  CHECK(c.train.views.formats.branch_a == Format::kWaveform);
  CHECK(c.train.views.formats.branch_b == Format::kLogMel);
  CHECK(c.dsp.n_mels == 80);
  CHECK(c.dsp.n_mfcc == 13);
  CHECK(c.dsp.win_ms == 20.0);
  CHECK(c.dsp.hop_ms == 10.0);
  CHECK(c.synth.n_clips == 2500);
  CHECK(c.synth.sample_rate == 16000);
  CHECK(c.synth.clip_len_s == 10.0);
  CHECK(c.eval.probe.hidden == 512);
  CHECK(c.eval.probe.steps == 2000);
  CHECK(c.eval.probe.lr == 1e-3);
  CHECK(c.to_text() == RunConfig{}.to_text());
}

TEST_CASE("comments, blanks and whitespace") {
  const RunConfig c = parse_config_text("# header\n\n  train.steps = 12   # trailing\ntrain.temperature=0.5\n", true);
  CHECK(c.train.steps == 12);
  CHECK(c.train.loss.temperature == 0.5);
}

TEST_CASE("validation errors name the field") {
  CHECK(error_of("train.temperature = -1").find("train.temperature") != std::string::npos);
  CHECK(error_of("train.batch = 1").find("train.batch") != std::string::npos);
  CHECK(error_of("train.lr_min = 1\ntrain.lr0 = 0.1").find("train.lr") != std::string::npos);
  CHECK(error_of("augment.freq_shift_max = 81").find("freq_shift") != std::string::npos);
  CHECK(error_of("views.crop_len_s = 11").find("crop") != std::string::npos);
  CHECK(error_of("train.steps = abc").find("train.steps") != std::string::npos);
}

TEST_CASE("branch feature dims must match for the shared projector") {
  const std::string e = error_of("model.conv_channels = 64\nmodel.conv_groups = 16\nmodel.spec_channels = 32\n");
  CHECK(e.find("projector") != std::string::npos);
  CHECK(error_of("model.conv_channels = 128\nmodel.spec_feature_dim = 128\n").empty());
}

TEST_CASE("unknown keys: error when strict, warning otherwise") {
  CHECK(error_of("train.stepz = 5").find("train.stepz") != std::string::npos);
  std::vector<std::string> warnings;
  const RunConfig c = parse_config_text("train.stepz = 5\ntrain.steps = 7", false, &warnings);
  CHECK(c.train.steps == 7);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("train.stepz") != std::string::npos);
  CHECK(!error_of("no equals sign here", false).empty());
}

TEST_CASE("effective config round trip") {
  RunConfig c;
  c.set("train.temperature", "0.37");
  c.set("views.branch_a", "logmel");
  c.set("views.branch_b", "mfcc");
  c.set("ablate.axis", "temperature");
  c.set("ablate.values", "0.1,1.0");
  c.set("train.precision", "f64");
  const RunConfig back = parse_config_text(c.to_text(), true);
  CHECK(back.to_text() == c.to_text());
  CHECK(back.get("views.branch_b") == "mfcc");
  CHECK(back.train.precision == Precision::kF64);
  for (const auto& k : RunConfig::keys()) CHECK(back.get(k) == c.get(k));
}

TEST_CASE("ablation axes override one field") {
  RunConfig c;
  c.apply_axis(AblationAxis::kTemperature, "1.0");
  CHECK(c.train.loss.temperature == 1.0);
  c.apply_axis(AblationAxis::kCropSize, "10");
  CHECK(c.train.views.crop_len_s == 10.0);
  c.apply_axis(AblationAxis::kFreqShift, "0");
  CHECK(c.train.views.policy.freq_shift_max == 0);
  c.apply_axis(AblationAxis::kFormats, "wave+wave");
  CHECK(c.train.views.formats.single_format());
  c.apply_axis(AblationAxis::kBatchSize, "64");
  CHECK(c.train.batch == 64);
  c.apply_axis(AblationAxis::kLatentSize, "256");
  CHECK(c.model.projector.out_dim == 256);
  CHECK(parse_axis("crop_size") == AblationAxis::kCropSize);
  CHECK_THROWS_AS(parse_axis("depthz"), ConfigError);
  const FormatSpec wl = parse_format_pair("wave+logmel");
  CHECK(wl.branch_a == Format::kWaveform);
  CHECK(wl.branch_b == Format::kLogMel);
  const FormatSpec back = parse_format_pair(format_pair_name(wl));
  CHECK(back.branch_a == wl.branch_a);
  CHECK(back.branch_b == wl.branch_b);
  CHECK(parse_format_pair("logmel").single_format());
  CHECK_THROWS_AS(parse_format_pair("wave+cqt"), ConfigError);
}

TEST_CASE("config files") {
  const auto dir = scratch_dir("cfg");
  std::ofstream(dir / "a.conf") << "train.steps = 9\n";
  CHECK(parse_config(dir / "a.conf", true).train.steps == 9);
  CHECK_THROWS(parse_config(dir / "missing.conf", true));
}
