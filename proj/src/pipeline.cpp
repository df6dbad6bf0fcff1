#include "mfcl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "mfcl/text.hpp"

namespace mfcl {

namespace fs = std::filesystem;

Dataset load_checked(const fs::path& manifest) {
  if (!fs::exists(manifest)) {
    throw DataError("manifest '" + manifest.string() + "' not found (run `mfcl synth` first?)");
  }
  Dataset ds = load_dataset(manifest);
  if (ds.size() == 0) throw DataError("manifest '" + manifest.string() + "' lists no clips");
  const int sr = ds.clips.front().sample_rate;
  for (std::size_t i = 1; i < ds.size(); ++i) {
    if (ds.clips[i].sample_rate != sr) {
      throw DataError("manifest '" + manifest.string() + "': clip '" + ds.ids[i] + "' has sample rate " +
                      std::to_string(ds.clips[i].sample_rate) + " Hz, expected " + std::to_string(sr) + " Hz");
    }
  }
  return ds;
}

int dataset_sample_rate(const Dataset& data) {
  if (data.size() == 0) throw DataError("empty dataset");
  return data.clips.front().sample_rate;
}

namespace {

std::string checksum_id(std::uint64_t c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(c));
  return buf;
}

template <typename T>
RunResult run_typed(const RunConfig& cfg, const Dataset& train_all, const Dataset& eval, const fs::path& dir,
                    bool pretrain, bool log, const FeatureExtractor& fx) {
  ContrastiveModel<T> model(cfg.train.views.formats, cfg.model, cfg.train.seed);
  RunResult result;
  if (pretrain) {
    Dataset train, val;
    split_validation(train_all, cfg.data.val_fraction, cfg.data.split_seed, train, val);
    Trainer<T> trainer(model, train, val, cfg.train, fx);
    result.metrics = trainer.run(RunOutputs{dir, cfg.to_text(), log});
    trainer.restore_best();
  }
  result.report = probe_and_evaluate(model, cfg, train_all, eval, fx);
  if (!dir.empty()) write_eval_report(dir / "eval.csv", result.report);
  return result;
}

}  // namespace

template <typename T>
EvalReport probe_and_evaluate(const ContrastiveModel<T>& model, const RunConfig& cfg, const Dataset& train,
                              const Dataset& eval, const FeatureExtractor& fx) {
  const double crop = cfg.train.views.crop_len_s;
  const ClipFeatures ftr = extract_features(model, train, crop, cfg.eval.inputs, fx);
  const ClipFeatures fev = extract_features(model, eval, crop, cfg.eval.inputs, fx);
  const Probe probe = train_probe_frozen(model, ftr, train.labels, kNumClasses, cfg.eval.probe);
  EvalReport report = evaluate(probe, fev, eval.labels);
  report.config_hash = hash_text(cfg.to_text());
  report.checkpoint_id = checksum_id(model.params().checksum());
  return report;
}

RunResult pretrain_and_evaluate(const RunConfig& cfg, const Dataset& train_all, const Dataset& eval,
                                const fs::path& dir, bool pretrain, bool log) {
  cfg.validate();
  const int sr = dataset_sample_rate(train_all);
  if (dataset_sample_rate(eval) != sr) {
    throw DataError("train clips are " + std::to_string(sr) + " Hz but eval clips are " +
                    std::to_string(dataset_sample_rate(eval)) + " Hz");
  }
  if (!dir.empty()) {
    fs::create_directories(dir);
    write_effective_config(dir, cfg);
  }
  const FeatureExtractor fx(cfg.dsp, sr);
  if (cfg.train.precision == Precision::kF64) return run_typed<double>(cfg, train_all, eval, dir, pretrain, log, fx);
  return run_typed<float>(cfg, train_all, eval, dir, pretrain, log, fx);
}

void write_effective_config(const fs::path& dir, const RunConfig& cfg) {
  std::ofstream out(dir / "config.effective", std::ios::binary);
  if (!out) throw DataError("cannot write '" + (dir / "config.effective").string() + "'");
  out << cfg.to_text();
}

RunConfig config_from_checkpoint(const fs::path& path) {
  std::string kept;
  for (const std::string& line : split(read_checkpoint_config(path), '\n')) {
    if (trim(line).starts_with("checkpoint.")) continue;
    kept += line;
    kept += '\n';
  }
  return parse_config_text(kept, false);
}

Waveform golden_reference_clip() {
  SynthSpec spec;
  spec.n_clips = 1;
  spec.clip_len_s = 1.0;
  spec.sample_rate = 16000;
  spec.events_min = 1;
  spec.events_max = 2;
  spec.event_len_min_s = 0.2;
  spec.event_len_max_s = 0.6;
  spec.seed = 7;
  return synth_clip_at(spec, 0).wave;
}

namespace {

const char* const kGoldenNames[] = {"spectrogram", "logmel", "mfcc"};

std::vector<Matrix> golden_matrices(const Waveform& w) {
  const FeatureExtractor fx(DspConfig{}, w.sample_rate);
  return {fx.spectrogram(w.samples), fx.log_mel(w.samples), fx.mfcc(w.samples)};
}

}  // namespace

void emit_golden(const fs::path& dir) {
  fs::create_directories(dir);
  const Waveform w = golden_reference_clip();
  write_wav(dir / "ref.wav", w);
  const auto m = golden_matrices(w);
  for (std::size_t i = 0; i < m.size(); ++i) write_matrix_text(dir / (std::string(kGoldenNames[i]) + ".txt"), m[i]);
}

std::vector<GoldenCheck> verify_golden(const fs::path& dir) {
  const auto m = golden_matrices(read_wav(dir / "ref.wav"));
  std::vector<GoldenCheck> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Matrix ref = read_matrix_text(dir / (std::string(kGoldenNames[i]) + ".txt"));
    GoldenCheck c{kGoldenNames[i]};
    c.shape_ok = ref.rows == m[i].rows && ref.cols == m[i].cols;
    if (c.shape_ok) {
      for (std::size_t k = 0; k < ref.data.size(); ++k) {
        c.max_abs_diff = std::max(c.max_abs_diff, std::abs(ref.data[k] - m[i].data[k]));
      }
    }
    out.push_back(c);
  }
  return out;
}

template EvalReport probe_and_evaluate<float>(const ContrastiveModel<float>&, const RunConfig&, const Dataset&,
                                              const Dataset&, const FeatureExtractor&);
template EvalReport probe_and_evaluate<double>(const ContrastiveModel<double>&, const RunConfig&, const Dataset&,
                                               const Dataset&, const FeatureExtractor&);

}  // namespace mfcl
