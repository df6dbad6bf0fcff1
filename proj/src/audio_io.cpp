#include "mfcl/audio_io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mfcl/error.hpp"
#include "mfcl/text.hpp"

namespace mfcl {
namespace fs = std::filesystem;

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::streamoff>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(std::max<std::streamoff>(size, 0)));
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw DataError("cannot read '" + path.string() + "'");
  }
  return bytes;
}

struct ParsedWav {
  WavInfo info;
  std::size_t data_offset = 0;
  std::size_t data_size = 0;
};

ParsedWav parse_wav(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  const std::string where = " in '" + path.string() + "'";
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("malformed WAV header: missing RIFF/WAVE tag" + where);
  }
  ParsedWav out;
  bool have_fmt = false;
  bool have_data = false;
  std::uint16_t format = 0;
  std::uint32_t byte_rate = 0;
  std::uint16_t block_align = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = get_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) {
        throw DataError("malformed WAV header: truncated fmt chunk" + where);
      }
      const std::uint8_t* f = bytes.data() + body;
      format = get_u16(f);
      out.info.channels = get_u16(f + 2);
      out.info.sample_rate = static_cast<int>(get_u32(f + 4));
      byte_rate = get_u32(f + 8);
      block_align = get_u16(f + 12);
      out.info.bits_per_sample = get_u16(f + 14);
      if (format == kFormatExtensible) {
        if (size < 40) throw DataError("malformed WAV header: short extensible fmt chunk" + where);
        format = get_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (body + size > bytes.size()) {
        throw DataError("malformed WAV: data chunk declares " + std::to_string(size) +
                        " bytes but file is truncated" + where);
      }
      out.data_offset = body;
      out.data_size = size;
      have_data = true;
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw DataError("malformed WAV header: no fmt chunk" + where);
  if (!have_data) throw DataError("malformed WAV: no data chunk" + where);

  if (format == kFormatPcm && out.info.bits_per_sample == 16) {
    out.info.encoding = WavEncoding::kPcm16;
  } else if (format == kFormatFloat && out.info.bits_per_sample == 32) {
    out.info.encoding = WavEncoding::kFloat32;
  } else {
    throw DataError("unsupported WAV codec (format tag " + std::to_string(format) + ", " +
                    std::to_string(out.info.bits_per_sample) +
                    " bits); only PCM16 and float32 are supported" + where);
  }
  if (out.info.channels != 1) {
    throw DataError("WAV has " + std::to_string(out.info.channels) +
                    " channels; only mono is supported" + where);
  }
  if (out.info.sample_rate <= 0 || byte_rate == 0 || block_align == 0) {
    throw DataError("malformed WAV header: zero sample rate or block size" + where);
  }
  const std::size_t bytes_per_sample = static_cast<std::size_t>(out.info.bits_per_sample / 8);
  out.info.num_samples = out.data_size / bytes_per_sample;
  out.info.duration_s = static_cast<double>(out.data_size) / byte_rate;
  return out;
}

// Raised-cosine fade length applied at each edge of an event.
std::size_t fade_len(std::size_t n, int sample_rate) {
  return std::min<std::size_t>(static_cast<std::size_t>(0.01 * sample_rate), n / 10);
}

void normalize_peak(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m > 0.0) {
    const double s = peak / m;
    for (double& v : x) v *= s;
  }
}

}  // namespace

void Waveform::validate() const {
  if (sample_rate <= 0) throw DataError("waveform sample rate must be positive");
  if (samples.empty()) throw DataError("waveform is empty");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i])) {
      throw DataError("waveform sample " + std::to_string(i) + " is not finite");
    }
  }
}

std::string_view class_name(int class_id) {
  static constexpr std::array<std::string_view, kNumClasses> kNames = {
      "low_tone", "high_tone", "harmonic_stack", "chirp_up",
      "chirp_down", "am_tone", "noise_burst", "square_wave"};
  if (class_id < 0 || class_id >= kNumClasses) {
    throw ConfigError("unknown event class id " + std::to_string(class_id));
  }
  return kNames[static_cast<std::size_t>(class_id)];
}

std::size_t LabelVector::cardinality() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::string LabelVector::to_string() const {
  std::string s;
  s.reserve(bits.size());
  for (auto b : bits) s.push_back(b ? '1' : '0');
  return s;
}

LabelVector LabelVector::parse(std::string_view text) {
  LabelVector out(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '1') {
      out.bits[i] = 1;
    } else if (text[i] != '0') {
      throw DataError("label string '" + std::string(text) + "' must contain only 0 and 1");
    }
  }
  return out;
}

void SynthSpec::validate() const {
  if (n_clips == 0) throw ConfigError("synth.n_clips must be > 0");
  if (!(clip_len_s > 0.0)) throw ConfigError("synth.clip_len_s must be > 0");
  if (sample_rate <= 0) throw ConfigError("synth.sample_rate must be > 0");
  if (events_min < 1) throw ConfigError("synth.events_min must be >= 1");
  if (events_max < events_min) throw ConfigError("synth.events_max must be >= synth.events_min");
  if (events_max > kNumClasses) {
    throw ConfigError("synth.events_max cannot exceed the number of classes (" +
                      std::to_string(kNumClasses) + ")");
  }
  if (!(event_len_min_s > 0.0) || event_len_max_s < event_len_min_s) {
    throw ConfigError("synth.event_len_min_s/event_len_max_s must satisfy 0 < min <= max");
  }
  if (event_len_min_s > clip_len_s) throw ConfigError("synth.event_len_min_s exceeds clip length");
  if (snr_db_max < snr_db_min) throw ConfigError("synth.snr_db_max must be >= synth.snr_db_min");
}

// ---------------------------------------------------------------------------

WavInfo read_wav_info(const fs::path& path) { return parse_wav(read_file(path), path).info; }

Waveform read_wav(const fs::path& path) {
  const auto bytes = read_file(path);
  const ParsedWav parsed = parse_wav(bytes, path);
  Waveform wave;
  wave.sample_rate = parsed.info.sample_rate;
  wave.samples.resize(parsed.info.num_samples);
  const std::uint8_t* data = bytes.data() + parsed.data_offset;
  if (parsed.info.encoding == WavEncoding::kPcm16) {
    for (std::size_t i = 0; i < wave.samples.size(); ++i) {
      const auto v = static_cast<std::int16_t>(get_u16(data + 2 * i));
      wave.samples[i] = static_cast<float>(v) / 32768.0f;
    }
  } else {
    for (std::size_t i = 0; i < wave.samples.size(); ++i) {
      const std::uint32_t bits = get_u32(data + 4 * i);
      std::memcpy(&wave.samples[i], &bits, sizeof(float));
    }
  }
  return wave;
}

void write_wav(const fs::path& path, const Waveform& wave, WavEncoding encoding) {
  if (wave.samples.empty()) throw DataError("refusing to write empty waveform to '" + path.string() + "'");
  if (wave.sample_rate <= 0) throw DataError("waveform sample rate must be positive");
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bytes_per_sample = pcm ? 2 : 4;
  const auto data_size = static_cast<std::uint32_t>(wave.samples.size() * bytes_per_sample);

  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put_u32(out, 36 + data_size);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, pcm ? kFormatPcm : kFormatFloat);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * bytes_per_sample);
  put_u16(out, bytes_per_sample);
  put_u16(out, static_cast<std::uint16_t>(8 * bytes_per_sample));
  out += "data";
  put_u32(out, data_size);
  for (float s : wave.samples) {
    if (pcm) {
      const double scaled = std::nearbyint(static_cast<double>(s) * 32768.0);
      const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
      put_u16(out, static_cast<std::uint16_t>(v));
    } else {
      std::uint32_t bits = 0;
      std::memcpy(&bits, &s, sizeof(float));
      put_u32(out, bits);
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot open '" + path.string() + "' for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw DataError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

Waveform synth_event(int class_id, double duration_s, int sample_rate, Rng& rng) {
  class_name(class_id);  // validates the id
  if (!(duration_s > 0.0)) throw ConfigError("event duration must be > 0");
  if (sample_rate <= 0) throw ConfigError("sample rate must be > 0");

  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  if (n == 0) throw ConfigError("event duration shorter than one sample");
  const double sr = sample_rate;
  const double nyquist = sr / 2.0;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::vector<double> x(n, 0.0);
  const double phase0 = uniform_real(rng, 0.0, kTwoPi);

  switch (static_cast<EventClass>(class_id)) {
    case EventClass::kLowTone: {
      const double f = uniform_real(rng, 200.0, 400.0);
      for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(kTwoPi * f * i / sr + phase0);
      break;
    }
    case EventClass::kHighTone: {
      const double f = std::min(uniform_real(rng, 2000.0, 4000.0), 0.45 * sr);
      for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(kTwoPi * f * i / sr + phase0);
      break;
    }
    case EventClass::kHarmonicStack: {
      const double f0 = uniform_real(rng, 150.0, 300.0);
      for (int h = 1; h <= 6; ++h) {
        if (h * f0 >= nyquist) break;
        const double ph = uniform_real(rng, 0.0, kTwoPi);
        for (std::size_t i = 0; i < n; ++i) x[i] += std::sin(kTwoPi * h * f0 * i / sr + ph) / h;
      }
      break;
    }
    case EventClass::kChirpUp:
    case EventClass::kChirpDown: {
      double f_lo = uniform_real(rng, 400.0, 800.0);
      double f_hi = std::min(uniform_real(rng, 2500.0, 4000.0), 0.45 * sr);
      if (static_cast<EventClass>(class_id) == EventClass::kChirpDown) std::swap(f_lo, f_hi);
      const double t_end = static_cast<double>(n) / sr;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i / sr;
        x[i] = std::sin(kTwoPi * (f_lo * t + 0.5 * (f_hi - f_lo) * t * t / t_end) + phase0);
      }
      break;
    }
    case EventClass::kAmTone: {
      const double fc = uniform_real(rng, 800.0, 1500.0);
      const double fm = uniform_real(rng, 4.0, 12.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double t = i / sr;
        x[i] = (1.0 + 0.9 * std::sin(kTwoPi * fm * t)) * std::sin(kTwoPi * fc * t + phase0);
      }
      break;
    }
    case EventClass::kNoiseBurst: {
      std::normal_distribution<double> normal(0.0, 1.0);
      for (auto& v : x) v = normal(rng);
      break;
    }
    case EventClass::kSquareWave: {
      const double f = uniform_real(rng, 300.0, 700.0);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::sin(kTwoPi * f * i / sr + phase0) >= 0.0 ? 1.0 : -1.0;
      }
      break;
    }
  }

  const std::size_t fade = fade_len(n, sample_rate);
  for (std::size_t i = 0; i < fade; ++i) {
    const double g = 0.5 - 0.5 * std::cos(std::numbers::pi * (i + 0.5) / fade);
    x[i] *= g;
    x[n - 1 - i] *= g;
  }
  normalize_peak(x, uniform_real(rng, 0.4, 0.9));

  Waveform wave;
  wave.sample_rate = sample_rate;
  wave.samples.assign(x.begin(), x.end());
  return wave;
}

SynthClip synth_clip(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const auto n = static_cast<std::size_t>(std::llround(spec.clip_len_s * spec.sample_rate));
  std::vector<double> mix(n, 0.0);

  SynthClip clip;
  clip.labels = LabelVector(kNumClasses);

  const int n_events = static_cast<int>(uniform_int(rng, spec.events_min, spec.events_max));
  std::array<int, kNumClasses> order{};
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first n_events entries are distinct classes.
  for (int k = 0; k < n_events; ++k) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, k, kNumClasses - 1));
    std::swap(order[static_cast<std::size_t>(k)], order[j]);
  }

  const double max_len = std::min(spec.event_len_max_s, spec.clip_len_s);
  for (int k = 0; k < n_events; ++k) {
    const int cls = order[static_cast<std::size_t>(k)];
    const double len_s = uniform_real(rng, spec.event_len_min_s, max_len);
    Waveform ev = synth_event(cls, len_s, spec.sample_rate, rng);
    const std::size_t len = std::min(ev.size(), n);
    const auto onset = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(n - len)));
    for (std::size_t i = 0; i < len; ++i) mix[onset + i] += ev.samples[i];
    clip.labels.set(static_cast<std::size_t>(cls));
    clip.events.push_back({cls, onset, len});
  }

  double power = 0.0;
  for (double v : mix) power += v * v;
  power /= static_cast<double>(n);
  const double snr_db = uniform_real(rng, spec.snr_db_min, spec.snr_db_max);
  const double noise_sd = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : mix) v += noise_sd * normal(rng);

  double peak = 0.0;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  if (peak > 0.95) {
    for (double& v : mix) v *= 0.95 / peak;
  }

  clip.wave.sample_rate = spec.sample_rate;
  clip.wave.samples.assign(mix.begin(), mix.end());
  return clip;
}

SynthClip synth_clip_at(const SynthSpec& spec, std::size_t index) {
  Rng rng = stream_rng(spec.seed, index);
  return synth_clip(spec, rng);
}

// ---------------------------------------------------------------------------

void write_manifest(const fs::path& path, const std::vector<ClipRecord>& records) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& r : records) {
    if (r.path.find(',') != std::string::npos || r.path.find('\n') != std::string::npos) {
      throw DataError("manifest path '" + r.path + "' contains a comma or newline");
    }
    out << r.path << ',' << r.labels.to_string() << ',' << format_double(r.duration_s) << '\n';
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot open manifest '" + path.string() + "' for writing");
  file << out.str();
  if (!file) throw DataError("failed writing manifest '" + path.string() + "'");
}

std::vector<ClipRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw DataError("manifest '" + path.string() + "' lacks header line '" +
                    std::string(kManifestHeader) + "'");
  }
  std::vector<ClipRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      throw DataError("manifest '" + path.string() + "' line " + std::to_string(line_no) +
                      ": expected 3 comma-separated fields");
    }
    ClipRecord r;
    r.path = line.substr(0, c1);
    r.labels = LabelVector::parse(std::string_view(line).substr(c1 + 1, c2 - c1 - 1));
    const std::string_view dur = std::string_view(line).substr(c2 + 1);
    auto [ptr, ec] = std::from_chars(dur.data(), dur.data() + dur.size(), r.duration_s);
    if (ec != std::errc() || ptr != dur.data() + dur.size()) {
      throw DataError("manifest '" + path.string() + "' line " + std::to_string(line_no) +
                      ": bad duration '" + std::string(dur) + "'");
    }
    records.push_back(std::move(r));
  }
  return records;
}

ManifestSplit split_records(const std::vector<ClipRecord>& records, double train_fraction,
                            std::uint64_t seed) {
  if (train_fraction < 0.0 || train_fraction > 1.0) {
    throw ConfigError("split fraction must lie in [0, 1]");
  }
  const std::size_t n = records.size();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(seed));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::uint8_t> in_train(n, 0);
  for (std::size_t i = 0; i < n_train; ++i) in_train[perm[i]] = 1;

  ManifestSplit split;
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? split.train : split.holdout).push_back(records[i]);
  return split;
}

void build_manifest(const fs::path& out_dir, const std::vector<ClipRecord>& records,
                    double train_fraction, std::uint64_t split_seed, std::string_view train_name,
                    std::string_view holdout_name) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create '" + out_dir.string() + "': " + ec.message());
  if (train_fraction >= 1.0) {
    write_manifest(out_dir / (std::string(train_name) + ".csv"), records);
    return;
  }
  const ManifestSplit split = split_records(records, train_fraction, split_seed);
  write_manifest(out_dir / (std::string(train_name) + ".csv"), split.train);
  write_manifest(out_dir / (std::string(holdout_name) + ".csv"), split.holdout);
}

std::vector<ClipRecord> synthesize_dataset(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "clips", ec);
  if (ec) throw DataError("cannot create '" + (out_dir / "clips").string() + "': " + ec.message());
  std::vector<ClipRecord> records;
  records.reserve(spec.n_clips);
  for (std::size_t i = 0; i < spec.n_clips; ++i) {
    SynthClip clip = synth_clip_at(spec, i);
    char name[32];
    std::snprintf(name, sizeof(name), "clips/clip_%05zu.wav", i);
    write_wav(out_dir / name, clip.wave);
    records.push_back({name, clip.labels, clip.wave.duration_s()});
  }
  return records;
}

Dataset load_dataset(const fs::path& manifest_path) {
  const auto records = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  Dataset ds;
  ds.clips.reserve(records.size());
  for (const auto& r : records) {
    Waveform w = read_wav(base / r.path);
    w.validate();
    if (std::abs(w.duration_s() - r.duration_s) > 1.0 / w.sample_rate) {
      throw DataError("clip '" + r.path + "' lasts " + format_double(w.duration_s()) +
                      " s but the manifest says " + format_double(r.duration_s));
    }
    ds.clips.push_back(std::move(w));
    ds.labels.push_back(r.labels);
    ds.ids.push_back(r.path);
  }
  return ds;
}

Dataset synthesize_in_memory(const SynthSpec& spec, std::size_t first, std::size_t count) {
  spec.validate();
  Dataset ds;
  ds.clips.reserve(count);
  for (std::size_t i = first; i < first + count; ++i) {
    SynthClip clip = synth_clip_at(spec, i);
    ds.clips.push_back(std::move(clip.wave));
    ds.labels.push_back(std::move(clip.labels));
    ds.ids.push_back("synth:" + std::to_string(spec.seed) + ":" + std::to_string(i));
  }
  return ds;
}

}  // namespace mfcl
