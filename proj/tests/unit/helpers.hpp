#pragma once

#include <filesystem>
#include <random>
#include <string>

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mfcl_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

#ifndef MFCL_TEST_DATA
#define MFCL_TEST_DATA "tests/data"
#endif

#include "mfcl/config.hpp"

// Small model, 8 kHz clips of 1 s; fast enough for unit tests.
inline mfcl::RunConfig tiny_config() {
  mfcl::RunConfig cfg;
  cfg.synth.sample_rate = 8000;
  cfg.synth.clip_len_s = 1.0;
  cfg.synth.event_len_min_s = 0.2;
  cfg.synth.event_len_max_s = 0.6;
  cfg.dsp.n_mels = 24;
  cfg.model.conv.n_stride2_layers = 2;
  cfg.model.conv.channels = 8;
  cfg.model.conv.groups = 2;
  cfg.model.spec2d.n_blocks = 2;
  cfg.model.spec2d.base_channels = 4;
  cfg.model.spec2d.groups = 2;
  cfg.model.projector.hidden_dim = 16;
  cfg.model.projector.out_dim = 8;
  cfg.train.views.crop_len_s = 0.5;
  cfg.train.views.policy.freq_shift_max = 4;
  cfg.train.batch = 4;
  cfg.train.steps = 6;
  cfg.train.lr0 = 1e-3;
  cfg.train.lr_min = 1e-5;
  cfg.train.val_every = 3;
  cfg.eval.probe.hidden = 16;
  cfg.eval.probe.steps = 50;
  cfg.eval.probe.batch = 16;
  return cfg;
}
