#include "mfcl/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "mfcl/text.hpp"

namespace mfcl {

std::string_view axis_name(AblationAxis a) {
  switch (a) {
    case AblationAxis::kFormats: return "formats";
    case AblationAxis::kCropSize: return "crop_size";
    case AblationAxis::kFreqShift: return "freq_shift";
    case AblationAxis::kTemperature: return "temperature";
    case AblationAxis::kLatentSize: return "latent_size";
    case AblationAxis::kBatchSize: return "batch_size";
    case AblationAxis::kConvDepth: return "conv_depth";
  }
  return "formats";
}

AblationAxis parse_axis(std::string_view s) {
  for (auto a : {AblationAxis::kFormats, AblationAxis::kCropSize, AblationAxis::kFreqShift, AblationAxis::kTemperature,
                 AblationAxis::kLatentSize, AblationAxis::kBatchSize, AblationAxis::kConvDepth}) {
    if (axis_name(a) == s) return a;
  }
  throw ConfigError("ablate.axis: unknown axis '" + std::string(s) +
                    "' (expected formats, crop_size, freq_shift, temperature, latent_size, batch_size or conv_depth)");
}

FormatSpec parse_format_pair(std::string_view s) {
  const auto plus = s.find('+');
  if (plus == std::string_view::npos) {
    const Format f = parse_format(trim(s));
    return {f, f};
  }
  return {parse_format(trim(s.substr(0, plus))), parse_format(trim(s.substr(plus + 1)))};
}

std::string format_pair_name(const FormatSpec& f) {
  return std::string(format_name(f.branch_a)) + "+" + std::string(format_name(f.branch_b));
}

namespace {

// Text conversion per value type; errors name the key.

template <typename V>
V from_text(std::string_view key, std::string_view v);

template <typename V>
V parse_number(std::string_view key, std::string_view v, const char* what) {
  V out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(std::string(key) + ": expected " + what + ", got '" + std::string(v) + "'");
  }
  return out;
}

template <>
std::size_t from_text<std::size_t>(std::string_view key, std::string_view v) {
  return parse_number<std::size_t>(key, v, "a non-negative integer");
}
template <>
int from_text<int>(std::string_view key, std::string_view v) {
  return parse_number<int>(key, v, "an integer");
}
template <>
double from_text<double>(std::string_view key, std::string_view v) {
  return parse_number<double>(key, v, "a number");
}
template <>
bool from_text<bool>(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}
template <>
std::string from_text<std::string>(std::string_view, std::string_view v) {
  return std::string(v);
}
template <>
Format from_text<Format>(std::string_view key, std::string_view v) {
  try {
    return parse_format(v);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}
template <>
Precision from_text<Precision>(std::string_view, std::string_view v) {
  return parse_precision(v);
}
template <>
EvalInputs from_text<EvalInputs>(std::string_view, std::string_view v) {
  return parse_eval_inputs(v);
}
template <>
ProbeMode from_text<ProbeMode>(std::string_view, std::string_view v) {
  return parse_probe_mode(v);
}
template <>
AblationAxis from_text<AblationAxis>(std::string_view, std::string_view v) {
  return parse_axis(v);
}
template <>
std::vector<std::string> from_text<std::vector<std::string>>(std::string_view key, std::string_view v) {
  std::vector<std::string> out;
  for (const std::string& s : split(v, ',')) {
    if (!trim(s).empty()) out.emplace_back(trim(s));
  }
  if (out.empty()) throw ConfigError(std::string(key) + ": list is empty");
  return out;
}
template <>
std::vector<std::uint64_t> from_text<std::vector<std::uint64_t>>(std::string_view key, std::string_view v) {
  std::vector<std::uint64_t> out;
  for (const std::string& s : from_text<std::vector<std::string>>(key, v)) {
    out.push_back(parse_number<std::uint64_t>(key, s, "a list of non-negative integers"));
  }
  return out;
}

std::string to_text(std::size_t v) { return std::to_string(v); }
std::string to_text(int v) { return std::to_string(v); }
std::string to_text(double v) { return format_double(v); }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(const std::string& v) { return v; }
std::string to_text(Format v) { return std::string(format_name(v)); }
std::string to_text(Precision v) { return std::string(precision_name(v)); }
std::string to_text(EvalInputs v) { return std::string(eval_inputs_name(v)); }
std::string to_text(ProbeMode v) { return std::string(probe_mode_name(v)); }
std::string to_text(AblationAxis v) { return std::string(axis_name(v)); }
std::string to_text(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}
std::string to_text(const std::vector<std::uint64_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <typename Access>
Field field(std::string key, Access access) {
  using V = std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>;
  return Field{key, [access](const RunConfig& c) { return to_text(access(const_cast<RunConfig&>(c))); },
               [access, key](RunConfig& c, std::string_view v) { access(c) = from_text<V>(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      field("synth.n_clips", [](RunConfig& c) -> auto& { return c.synth.n_clips; }),
      field("synth.clip_len_s", [](RunConfig& c) -> auto& { return c.synth.clip_len_s; }),
      field("synth.sample_rate", [](RunConfig& c) -> auto& { return c.synth.sample_rate; }),
      field("synth.events_min", [](RunConfig& c) -> auto& { return c.synth.events_min; }),
      field("synth.events_max", [](RunConfig& c) -> auto& { return c.synth.events_max; }),
      field("synth.event_len_min_s", [](RunConfig& c) -> auto& { return c.synth.event_len_min_s; }),
      field("synth.event_len_max_s", [](RunConfig& c) -> auto& { return c.synth.event_len_max_s; }),
      field("synth.snr_db_min", [](RunConfig& c) -> auto& { return c.synth.snr_db_min; }),
      field("synth.snr_db_max", [](RunConfig& c) -> auto& { return c.synth.snr_db_max; }),
      field("synth.seed", [](RunConfig& c) -> auto& { return c.synth.seed; }),

      field("data.dir", [](RunConfig& c) -> auto& { return c.data.dir; }),
      field("data.train_manifest", [](RunConfig& c) -> auto& { return c.data.train_manifest; }),
      field("data.eval_manifest", [](RunConfig& c) -> auto& { return c.data.eval_manifest; }),
      field("data.eval_fraction", [](RunConfig& c) -> auto& { return c.data.eval_fraction; }),
      field("data.split_seed", [](RunConfig& c) -> auto& { return c.data.split_seed; }),
      field("data.val_fraction", [](RunConfig& c) -> auto& { return c.data.val_fraction; }),

      field("dsp.win_ms", [](RunConfig& c) -> auto& { return c.dsp.win_ms; }),
      field("dsp.hop_ms", [](RunConfig& c) -> auto& { return c.dsp.hop_ms; }),
      field("dsp.n_fft", [](RunConfig& c) -> auto& { return c.dsp.n_fft; }),
      field("dsp.n_mels", [](RunConfig& c) -> auto& { return c.dsp.n_mels; }),
      field("dsp.n_mfcc", [](RunConfig& c) -> auto& { return c.dsp.n_mfcc; }),
      field("dsp.fmin", [](RunConfig& c) -> auto& { return c.dsp.fmin; }),
      field("dsp.fmax", [](RunConfig& c) -> auto& { return c.dsp.fmax; }),
      field("dsp.log_eps", [](RunConfig& c) -> auto& { return c.dsp.log_eps; }),

      field("augment.mix", [](RunConfig& c) -> auto& { return c.train.views.policy.mix_enabled; }),
      field("augment.mix_beta_a", [](RunConfig& c) -> auto& { return c.train.views.policy.mix_beta_a; }),
      field("augment.mix_beta_b", [](RunConfig& c) -> auto& { return c.train.views.policy.mix_beta_b; }),
      field("augment.time_mask_max", [](RunConfig& c) -> auto& { return c.train.views.policy.time_mask_max; }),
      field("augment.freq_mask_max", [](RunConfig& c) -> auto& { return c.train.views.policy.freq_mask_max; }),
      field("augment.freq_shift_max", [](RunConfig& c) -> auto& { return c.train.views.policy.freq_shift_max; }),

      field("views.branch_a", [](RunConfig& c) -> auto& { return c.train.views.formats.branch_a; }),
      field("views.branch_b", [](RunConfig& c) -> auto& { return c.train.views.formats.branch_b; }),
      field("views.crop_len_s", [](RunConfig& c) -> auto& { return c.train.views.crop_len_s; }),

      field("model.conv_layers", [](RunConfig& c) -> auto& { return c.model.conv.n_stride2_layers; }),
      field("model.conv_channels", [](RunConfig& c) -> auto& { return c.model.conv.channels; }),
      field("model.conv_groups", [](RunConfig& c) -> auto& { return c.model.conv.groups; }),
      field("model.spec_blocks", [](RunConfig& c) -> auto& { return c.model.spec2d.n_blocks; }),
      field("model.spec_channels", [](RunConfig& c) -> auto& { return c.model.spec2d.base_channels; }),
      field("model.spec_groups", [](RunConfig& c) -> auto& { return c.model.spec2d.groups; }),
      field("model.spec_feature_dim", [](RunConfig& c) -> auto& { return c.model.spec2d.feature_dim; }),
      field("model.proj_hidden", [](RunConfig& c) -> auto& { return c.model.projector.hidden_dim; }),
      field("model.proj_out", [](RunConfig& c) -> auto& { return c.model.projector.out_dim; }),

      field("train.steps", [](RunConfig& c) -> auto& { return c.train.steps; }),
      field("train.batch", [](RunConfig& c) -> auto& { return c.train.batch; }),
      field("train.lr0", [](RunConfig& c) -> auto& { return c.train.lr0; }),
      field("train.lr_min", [](RunConfig& c) -> auto& { return c.train.lr_min; }),
      field("train.temperature", [](RunConfig& c) -> auto& { return c.train.loss.temperature; }),
      field("train.seed", [](RunConfig& c) -> auto& { return c.train.seed; }),
      field("train.precision", [](RunConfig& c) -> auto& { return c.train.precision; }),
      field("train.val_every", [](RunConfig& c) -> auto& { return c.train.val_every; }),

      field("eval.inputs", [](RunConfig& c) -> auto& { return c.eval.inputs; }),
      field("eval.hidden", [](RunConfig& c) -> auto& { return c.eval.probe.hidden; }),
      field("eval.steps", [](RunConfig& c) -> auto& { return c.eval.probe.steps; }),
      field("eval.batch", [](RunConfig& c) -> auto& { return c.eval.probe.batch; }),
      field("eval.lr", [](RunConfig& c) -> auto& { return c.eval.probe.lr; }),
      field("eval.mode", [](RunConfig& c) -> auto& { return c.eval.probe.mode; }),
      field("eval.seed", [](RunConfig& c) -> auto& { return c.eval.probe.seed; }),
      field("eval.checkpoint", [](RunConfig& c) -> auto& { return c.eval.checkpoint; }),

      field("ablate.axis", [](RunConfig& c) -> auto& { return c.ablate.axis; }),
      field("ablate.values", [](RunConfig& c) -> auto& { return c.ablate.values; }),
      field("ablate.seeds", [](RunConfig& c) -> auto& { return c.ablate.seeds; }),
  };
  return table;
}

const Field* find_field(std::string_view key) {
  for (const Field& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::size_t spectral_bins(Format f, const DspConfig& dsp, int sample_rate) {
  switch (f) {
    case Format::kSpectrogram: return dsp.n_bins(sample_rate);
    case Format::kLogMel: return static_cast<std::size_t>(dsp.n_mels);
    case Format::kMfcc: return static_cast<std::size_t>(dsp.n_mfcc);
    case Format::kWaveform: return 0;
  }
  return 0;
}

}  // namespace

RunConfig::RunConfig() = default;

void RunConfig::set(std::string_view key, std::string_view value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown key '" + std::string(key) + "'");
  f->set(*this, value);
}

std::string RunConfig::get(std::string_view key) const {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown key '" + std::string(key) + "'");
  return f->get(*this);
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.push_back(f.key);
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    const std::string s = f.key.substr(0, f.key.find('.'));
    if (s != section) {
      if (!section.empty()) out += '\n';
      section = s;
    }
    out += f.key + " = " + f.get(*this) + '\n';
  }
  return out;
}

void RunConfig::validate() const {
  synth.validate();
  if (!(data.eval_fraction >= 0.0) || data.eval_fraction >= 1.0) {
    throw ConfigError("data.eval_fraction: must lie in [0, 1), got " + format_double(data.eval_fraction));
  }
  if (!(data.val_fraction >= 0.0) || data.val_fraction >= 1.0) {
    throw ConfigError("data.val_fraction: must lie in [0, 1), got " + format_double(data.val_fraction));
  }
  dsp.validate(synth.sample_rate);
  model.conv.validate();
  model.spec2d.validate();
  model.projector.validate();
  train.validate();
  eval.probe.validate();

  const FormatSpec& formats = train.views.formats;
  check_branch_dims(formats, model);

  const double crop = train.views.crop_len_s;
  if (crop > synth.clip_len_s) {
    throw ConfigError("views.crop_len_s: crop of " + format_double(crop) + " s exceeds the " +
                      format_double(synth.clip_len_s) + " s clip length (synth.clip_len_s)");
  }
  const std::size_t crop_n = crop_samples(crop, synth.sample_rate);
  std::size_t max_bins = 0;
  for (Format f : {formats.branch_a, formats.branch_b}) {
    if (f == Format::kWaveform) {
      if (crop_n < model.conv.receptive_field()) {
        throw ConfigError("views.crop_len_s: " + std::to_string(crop_n) + "-sample crops are shorter than the " +
                          std::to_string(model.conv.receptive_field()) +
                          "-sample receptive field of the waveform encoder (model.conv_layers)");
      }
      continue;
    }
    const std::size_t win = dsp.win_samples(synth.sample_rate);
    const std::size_t frames = crop_n >= win ? frame_count(crop_n, win, dsp.hop_samples(synth.sample_rate)) : 0;
    const std::size_t bins = spectral_bins(f, dsp, synth.sample_rate);
    if (frames < model.spec2d.min_extent() || bins < model.spec2d.min_extent()) {
      throw ConfigError("model.spec_blocks: " + std::to_string(model.spec2d.n_blocks) + " pooling blocks need at least " +
                        std::to_string(model.spec2d.min_extent()) + " frames and bins, " +
                        std::string(format_name(f)) + " crops give " + std::to_string(frames) + " x " +
                        std::to_string(bins));
    }
    if (f != Format::kMfcc) max_bins = std::max(max_bins, bins);
  }
  if (max_bins > 0) train.views.policy.validate(max_bins);

  if (ablate.values.empty()) throw ConfigError("ablate.values: list is empty");
  if (ablate.seeds.empty()) throw ConfigError("ablate.seeds: list is empty");
}

void RunConfig::apply_axis(AblationAxis axis, std::string_view value) {
  switch (axis) {
    case AblationAxis::kFormats: {
      const FormatSpec f = parse_format_pair(value);
      train.views.formats = f;
      break;
    }
    case AblationAxis::kCropSize: set("views.crop_len_s", value); break;
    case AblationAxis::kFreqShift: set("augment.freq_shift_max", value); break;
    case AblationAxis::kTemperature: set("train.temperature", value); break;
    case AblationAxis::kLatentSize: set("model.proj_out", value); break;
    case AblationAxis::kBatchSize: set("train.batch", value); break;
    case AblationAxis::kConvDepth: set("model.conv_layers", value); break;
  }
}

RunConfig parse_config_text(std::string_view text, bool strict, std::vector<std::string>* warnings) {
  RunConfig cfg;
  std::size_t line_no = 0;
  for (const std::string& raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'section.key = value', got '" +
                        std::string(line) + "'");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!find_field(key)) {
      const std::string msg = "line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'";
      if (strict) throw ConfigError(msg);
      if (warnings) warnings->push_back(msg);
      continue;
    }
    cfg.set(key, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path, bool strict, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), strict, warnings);
}

}  // namespace mfcl
