#include "mfcl/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mfcl/text.hpp"

namespace mfcl {

namespace fs = std::filesystem;
using ad::Parameter;
using ad::ParameterSet;
using ad::Tensor;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void LossConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("train.temperature: must be > 0, got " + format_double(temperature));
  }
}

double nt_xent_value(std::span<const double> latents, std::size_t rows, std::size_t dim, double temperature) {
  if (latents.size() != rows * dim) throw ShapeError("nt_xent_value: latent buffer does not match rows x dim");
  ad::Tape<double> tape;
  ad::Var z = tape.constant(Tensor<double>({rows, dim}, std::vector<double>(latents.begin(), latents.end())));
  return tape.value(ad::nt_xent(tape, z, temperature)).item();
}

// Adam

template <typename T>
OptimState<T> OptimState<T>::zeros_like(const ParameterSet<T>& params) {
  OptimState<T> s;
  for (const Parameter<T>* p : params.all()) {
    s.m.emplace_back(p->value.shape());
    s.v.emplace_back(p->value.shape());
  }
  return s;
}

template <typename T>
void adam_step(ParameterSet<T>& params, OptimState<T>& state, double lr) {
  auto all = params.all();
  if (state.m.size() != all.size() || state.v.size() != all.size()) {
    throw ShapeError("adam_step: optimizer holds " + std::to_string(state.m.size()) + " buffers for " +
                     std::to_string(all.size()) + " parameters");
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    Parameter<T>& p = *all[i];
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
    if (state.m[i].shape() != p.value.shape() || state.v[i].shape() != p.value.shape()) {
      throw ShapeError("adam_step: moment buffers of '" + p.name + "' do not match its shape " +
                       ad::shape_str(p.value.shape()));
    }
    if (long bad = ad::first_non_finite<T>(p.grad.values()); bad >= 0) {
      throw NumericError("non-finite gradient in parameter '" + p.name + "' at element " + std::to_string(bad) +
                         " (optimizer step " + std::to_string(state.step + 1) + ")");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < all.size(); ++i) {
    Parameter<T>& p = *all[i];
    T* w = p.value.data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = p.grad.data();
    for (std::size_t k = 0; k < p.value.numel(); ++k) {
      const double gk = g[k];
      const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      w[k] = static_cast<T>(w[k] - lr * (mk / c1) / (std::sqrt(vk / c2) + state.eps));
    }
    p.zero_grad();
  }
}

double cosine_lr(std::size_t step, std::size_t total, double lr0, double lr_min) {
  if (total == 0 || step >= total) return lr_min;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

std::string_view precision_name(Precision p) { return p == Precision::kF64 ? "f64" : "f32"; }

Precision parse_precision(std::string_view s) {
  if (s == "f32" || s == "float") return Precision::kF32;
  if (s == "f64" || s == "double") return Precision::kF64;
  throw ConfigError("train.precision: expected f32 or f64, got '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("train.steps: must be >= 1");
  if (batch < 2) throw ConfigError("train.batch: must be >= 2, got " + std::to_string(batch));
  if (!(lr0 > 0.0)) throw ConfigError("train.lr0: must be > 0");
  if (!(lr_min >= 0.0) || lr_min > lr0) {
    throw ConfigError("train.lr_min: must lie in [0, train.lr0], got " + format_double(lr_min));
  }
  loss.validate();
  if (!(views.crop_len_s > 0.0)) throw ConfigError("views.crop_len_s: must be > 0");
}

// Metrics

std::string format_metric_row(const MetricRow& row) {
  std::string s = std::to_string(row.step) + "," + format_double(row.lr) + "," + format_double(row.train_loss) + ",";
  if (row.val_loss) s += format_double(*row.val_loss);
  return s;
}

void write_metrics(const fs::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write metrics to '" + path.string() + "'");
  out << kMetricsHeader << '\n';
  for (const MetricRow& r : rows) out << format_metric_row(r) << '\n';
}

// Checkpoints

namespace {

constexpr char kMagic[4] = {'M', 'F', 'C', 'L'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
constexpr std::string_view dtype_name() {
  return sizeof(T) == 8 ? "f64" : "f32";
}

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename T>
void put_tensor(std::ostream& out, const std::string& name, const Tensor<T>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
}

class Reader {
 public:
  Reader(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open checkpoint '" + path.string() + "'");
  }

  void bytes(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw DataError("checkpoint '" + path_.string() + "' is truncated or corrupted (while reading " + what + ")");
    }
  }
  template <typename U>
  U get(const char* what) {
    U v;
    bytes(&v, sizeof(U), what);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    if (n > (std::size_t{1} << 30)) {
      throw DataError("checkpoint '" + path_.string() + "' is corrupted (implausible " + what + " length)");
    }
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  fs::path path_;
  std::ifstream in_;
};

std::string read_header(Reader& r, const fs::path& path) {
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw DataError("checkpoint '" + path.string() + "' has format version " + std::to_string(version) +
                    ", this build reads version " + std::to_string(kVersion));
  }
  const auto len = r.get<std::uint64_t>("config length");
  return r.str(len, "config text");
}

// Value of a `key = value` line in the config block.
std::optional<std::string> config_field(const std::string& text, std::string_view key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    if (trim(std::string_view(line).substr(0, eq)) == key) {
      return std::string(trim(std::string_view(line).substr(eq + 1)));
    }
  }
  return std::nullopt;
}

template <typename T>
struct Entry {
  std::string name;
  Tensor<T>* dst;
};

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& path, const std::string& config_text, const ParameterSet<T>& params,
                     const OptimState<T>& optim, std::size_t step, std::optional<double> best_val) {
  auto all = params.all();
  if (optim.m.size() != all.size() || optim.v.size() != all.size()) {
    throw ShapeError("save_checkpoint: optimizer state does not match the parameter set");
  }
  std::string text = config_text;
  if (!text.empty() && text.back() != '\n') text += '\n';
  text += "checkpoint.dtype = " + std::string(dtype_name<T>()) + "\n";
  text += "checkpoint.step = " + std::to_string(step) + "\n";
  text += "checkpoint.adam_step = " + std::to_string(optim.step) + "\n";
  text += "checkpoint.best_val = " + (best_val ? format_double(*best_val) : std::string("none")) + "\n";
  text += "checkpoint.entries = " + std::to_string(3 * all.size()) + "\n";

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const Parameter<T>* p : all) put_tensor(out, p->name, p->value);
    for (std::size_t i = 0; i < all.size(); ++i) {
      put_tensor(out, "/opt/" + all[i]->name + "/m", optim.m[i]);
      put_tensor(out, "/opt/" + all[i]->name + "/v", optim.v[i]);
    }
    if (!out) throw DataError("failed while writing checkpoint '" + path.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

template <typename T>
CheckpointInfo load_checkpoint(const fs::path& path, ParameterSet<T>& params, OptimState<T>& optim) {
  Reader r(path);
  CheckpointInfo info;
  info.config_text = read_header(r, path);
  const std::string dtype = config_field(info.config_text, "checkpoint.dtype").value_or("f32");
  if (dtype != dtype_name<T>()) {
    throw DataError("checkpoint '" + path.string() + "' holds " + dtype + " data but the model uses " +
                    std::string(dtype_name<T>()) + " (set train.precision to match)");
  }

  auto all = params.all();
  OptimState<T> staged = OptimState<T>::zeros_like(params);
  std::vector<Tensor<T>> values;
  for (const Parameter<T>* p : all) values.emplace_back(p->value.shape());

  std::vector<Entry<T>> expected;
  for (std::size_t i = 0; i < all.size(); ++i) expected.push_back({all[i]->name, &values[i]});
  for (std::size_t i = 0; i < all.size(); ++i) {
    expected.push_back({"/opt/" + all[i]->name + "/m", &staged.m[i]});
    expected.push_back({"/opt/" + all[i]->name + "/v", &staged.v[i]});
  }

  for (const Entry<T>& e : expected) {
    if (r.at_end()) {
      throw ConfigError("checkpoint '" + path.string() + "' has no entry for model parameter '" + e.name +
                        "' (architecture differs from the checkpoint's config)");
    }
    const std::string name = r.str(r.get<std::uint32_t>("name length"), "parameter name");
    if (name != e.name) {
      throw ConfigError("checkpoint parameter '" + name + "' found where the model expects '" + e.name +
                        "' (architecture differs from the checkpoint's config)");
    }
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw DataError("checkpoint '" + path.string() + "' is corrupted (rank " + std::to_string(rank) + ")");
    ad::Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>("dimensions"));
    if (shape != e.dst->shape()) {
      throw ConfigError("parameter '" + name + "': checkpoint shape " + ad::shape_str(shape) +
                        " but the model expects " + ad::shape_str(e.dst->shape()));
    }
    r.bytes(e.dst->data(), e.dst->numel() * sizeof(T), "tensor data");
  }
  if (!r.at_end()) {
    throw ConfigError("checkpoint '" + path.string() + "' holds more parameters than the model " +
                      "(architecture differs from the checkpoint's config)");
  }

  for (std::size_t i = 0; i < all.size(); ++i) {
    all[i]->value = std::move(values[i]);
    all[i]->zero_grad();
  }
  const auto field_u64 = [&](std::string_view key) -> std::uint64_t {
    const auto v = config_field(info.config_text, key);
    return v ? std::stoull(*v) : 0;
  };
  staged.step = field_u64("checkpoint.adam_step");
  staged.beta1 = optim.beta1;
  staged.beta2 = optim.beta2;
  staged.eps = optim.eps;
  optim = std::move(staged);
  info.step = static_cast<std::size_t>(field_u64("checkpoint.step"));
  if (auto b = config_field(info.config_text, "checkpoint.best_val"); b && *b != "none") info.best_val = std::stod(*b);
  return info;
}

std::string read_checkpoint_config(const fs::path& path) {
  Reader r(path);
  return read_header(r, path);
}

// Trainer

void split_validation(const Dataset& all, double val_fraction, std::uint64_t seed, Dataset& train, Dataset& val) {
  if (!(val_fraction >= 0.0) || val_fraction >= 1.0) {
    throw ConfigError("train.val_fraction: must lie in [0, 1), got " + format_double(val_fraction));
  }
  const std::size_t n = all.size();
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * val_fraction));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = stream_rng(seed, 0x5a11d);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::uint8_t> is_val(n, 0);
  for (std::size_t i = 0; i < n_val; ++i) is_val[perm[i]] = 1;
  train = Dataset{};
  val = Dataset{};
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = is_val[i] ? val : train;
    dst.clips.push_back(all.clips[i]);
    dst.labels.push_back(all.labels[i]);
    dst.ids.push_back(all.ids[i]);
  }
}

template <typename T>
Trainer<T>::Trainer(ContrastiveModel<T>& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                    const FeatureExtractor& fx)
    : model_(model),
      train_(train),
      val_(val),
      cfg_(cfg),
      fx_(fx),
      schedule_((cfg.validate(), train.size()), cfg.batch, cfg.seed),
      optim_(OptimState<T>::zeros_like(model.params())) {
  if (cfg_.views.formats.branch_a != model.formats().branch_a ||
      cfg_.views.formats.branch_b != model.formats().branch_b) {
    throw ConfigError("views: training formats differ from the model's formats");
  }
}

template <typename T>
double Trainer<T>::step() {
  const std::size_t k = done_;
  const double lr = cosine_lr(k, cfg_.steps, cfg_.lr0, cfg_.lr_min);
  Rng rng = schedule_.augment_rng(k);
  const std::vector<std::size_t> idx = schedule_.indices(k);
  const ViewBatch batch = assemble_batch(train_, idx, cfg_.views, rng, fx_);
  try {
    ad::Tape<T> tape;
    ad::Var loss = model_.loss(tape, batch, cfg_.loss.temperature);
    const double value = tape.value(loss).item();
    model_.params().zero_grad();
    tape.backward(loss);
    adam_step(model_.params(), optim_, lr);
    ++done_;
    return value;
  } catch (const NumericError& e) {
    throw NumericError("training diverged at step " + std::to_string(k + 1) + ": " + e.what());
  }
}

template <typename T>
std::optional<double> Trainer<T>::validation_loss() const {
  const std::size_t n = val_.size();
  if (n < 2) return std::nullopt;
  const std::size_t b = std::min(cfg_.batch, n);
  double total = 0.0;
  std::size_t chunks = 0;
  for (std::size_t start = 0; start + b <= n; start += b, ++chunks) {
    std::vector<std::size_t> idx(b);
    std::iota(idx.begin(), idx.end(), start);
    Rng rng = stream_rng(cfg_.seed, 0x7a1000 + chunks);
    const ViewBatch batch = assemble_batch(val_, idx, cfg_.views, rng, fx_);
    ad::Tape<T> tape;
    total += tape.value(model_.loss(tape, batch, cfg_.loss.temperature)).item();
  }
  return total / static_cast<double>(chunks);
}

template <typename T>
std::vector<MetricRow> Trainer<T>::run(const RunOutputs& out) {
  std::ofstream metrics;
  if (!out.dir.empty()) {
    std::error_code ec;
    fs::create_directories(out.dir, ec);
    if (ec) throw DataError("cannot create run directory '" + out.dir.string() + "': " + ec.message());
    metrics.open(out.dir / "metrics.csv", std::ios::binary);
    if (!metrics) throw DataError("cannot write '" + (out.dir / "metrics.csv").string() + "'");
    metrics << kMetricsHeader << '\n';
  }
  std::vector<MetricRow> rows;
  while (done_ < cfg_.steps) {
    MetricRow row;
    row.lr = cosine_lr(done_, cfg_.steps, cfg_.lr0, cfg_.lr_min);
    row.train_loss = step();
    row.step = done_;
    if (cfg_.val_every > 0 && (done_ % cfg_.val_every == 0 || done_ == cfg_.steps)) {
      row.val_loss = validation_loss();
      if (row.val_loss && (!best_val_ || *row.val_loss < *best_val_)) {
        best_val_ = row.val_loss;
        best_params_.clear();
        for (const Parameter<T>* p : model_.params().all()) best_params_.push_back(p->value);
        if (!out.dir.empty()) {
          save_checkpoint(out.dir / "ckpt.best", out.config_text, model_.params(), optim_, done_, best_val_);
        }
      }
    }
    if (metrics.is_open()) metrics << format_metric_row(row) << '\n' << std::flush;
    if (out.log_progress && (row.val_loss || done_ % 10 == 0 || done_ == 1)) {
      std::cerr << "step " << done_ << "/" << cfg_.steps << " lr " << row.lr << " loss " << row.train_loss;
      if (row.val_loss) std::cerr << " val " << *row.val_loss;
      std::cerr << '\n';
    }
    rows.push_back(row);
  }
  if (!out.dir.empty()) {
    save_checkpoint(out.dir / "ckpt.last", out.config_text, model_.params(), optim_, done_, best_val_);
    if (!best_val_) fs::copy_file(out.dir / "ckpt.last", out.dir / "ckpt.best", fs::copy_options::overwrite_existing);
  }
  return rows;
}

template <typename T>
CheckpointInfo Trainer<T>::resume(const fs::path& path) {
  CheckpointInfo info = load_checkpoint(path, model_.params(), optim_);
  if (info.step > cfg_.steps) {
    throw ConfigError("checkpoint is at step " + std::to_string(info.step) + ", beyond train.steps = " +
                      std::to_string(cfg_.steps));
  }
  done_ = info.step;
  best_val_ = info.best_val;
  return info;
}

template <typename T>
void Trainer<T>::restore_best() {
  if (best_params_.empty()) return;
  auto all = model_.params().all();
  for (std::size_t i = 0; i < all.size(); ++i) all[i]->value = best_params_[i];
}

#define MFCL_INSTANTIATE(T)                                                                                    \
  template struct OptimState<T>;                                                                               \
  template void adam_step<T>(ParameterSet<T>&, OptimState<T>&, double);                                        \
  template void save_checkpoint<T>(const fs::path&, const std::string&, const ParameterSet<T>&,                 \
                                   const OptimState<T>&, std::size_t, std::optional<double>);                  \
  template CheckpointInfo load_checkpoint<T>(const fs::path&, ParameterSet<T>&, OptimState<T>&);               \
  template class Trainer<T>;

MFCL_INSTANTIATE(float)
MFCL_INSTANTIATE(double)

}  // namespace mfcl
