// Acceptance checks: one PASS/FAIL line per criterion on stdout, progress on stderr.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mfcl/config.hpp"
#include "mfcl/dsp.hpp"
#include "mfcl/gradsuite.hpp"
#include "mfcl/pipeline.hpp"
#include "mfcl/text.hpp"

using namespace mfcl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string join(const std::vector<double>& v, const char* f = "%.4f") {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "/" : "") + fmt(f, v[i]);
  return s;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. loss oracle

Outcome loss_oracle() {
  Rng rng(20240601);
  std::normal_distribution<double> g;
  double worst = 0.0;
  int batches = 0;
  const std::size_t ns[] = {2, 3, 8};
  const std::size_t ds[] = {4, 16};
  for (int b = 0; b < 100; ++b, ++batches) {
    const std::size_t n = ns[b % 3], d = ds[(b / 3) % 2];
    const double tau = 0.05 + 0.95 * uniform_real(rng, 0.0, 1.0);
    std::vector<std::vector<double>> rows(2 * n, std::vector<double>(d));
    std::vector<double> flat;
    for (auto& r : rows) {
      for (auto& v : r) {
        v = g(rng);
        flat.push_back(v);
      }
    }
    ad::Tape<double> t;
    const double tape = t.value(ad::nt_xent(t, t.constant(ad::Tensor<double>({2 * n, d}, flat)), tau)).item();
    worst = std::max(worst, std::abs(tape - nt_xent_oracle(rows, half_pairing(2 * n), tau)));
  }
  double hand = 0.0;
  for (double tau : {0.1, 1.0}) {
    std::vector<std::vector<double>> ortho(4, std::vector<double>(4, 0.0));
    std::vector<double> flat;
    for (std::size_t i = 0; i < 4; ++i) ortho[i][i] = 1.0;
    for (const auto& r : ortho) flat.insert(flat.end(), r.begin(), r.end());
    ad::Tape<double> t;
    const double l = t.value(ad::nt_xent(t, t.constant(ad::Tensor<double>({4, 4}, flat)), tau)).item();
    hand = std::max({hand, std::abs(l - std::log(3.0)),
                     std::abs(nt_xent_oracle(ortho, half_pairing(4), tau) - std::log(3.0))});
  }
  Outcome o;
  o.pass = batches == 100 && worst <= 1e-9 && hand <= 1e-12;
  o.detail = std::to_string(batches) + " batches, max |diff| " + fmt("%.2e", worst) + " (<= 1e-9); ln 3 case |diff| " +
             fmt("%.2e", hand) + " (<= 1e-12)";
  return o;
}

// ---------------------------------------------------------------------------
// 2. gradient suite

Outcome gradients() {
  const auto reports = run_gradient_suite();
  const auto names = gradient_suite_ops();
  double worst = 0.0;
  std::string worst_op;
  std::size_t min_cases = 1000;
  std::set<std::string> seen;
  bool ok = reports.size() == names.size();
  for (const auto& r : reports) {
    if (worst_op.empty() || r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_op = r.op;
    }
    min_cases = std::min(min_cases, r.cases);
    ok = ok && seen.insert(r.op).second && std::isfinite(r.max_rel_err);
  }
  Outcome o;
  o.pass = ok && worst < kGradTolerance && min_cases >= 3;
  o.detail = std::to_string(reports.size()) + " ops incl. composed model, max rel err " + fmt("%.2e", worst) + " (" +
             worst_op + "), min cases " + std::to_string(min_cases);
  return o;
}

// ---------------------------------------------------------------------------
// 3. DSP identities

Outcome dsp_identities(const fs::path& golden_dir) {
  DspConfig cfg;
  cfg.n_fft = 512;
  cfg.win_ms = 32.0;
  Rng rng(5);
  std::normal_distribution<float> g;
  std::vector<float> x(512 * 4);
  for (auto& v : x) v = g(rng);
  const Matrix p = stft_power(x, 16000, cfg, WindowKind::kRectangular);
  const std::size_t hop = cfg.hop_samples(16000);
  double parseval = 0.0;
  for (std::size_t t = 0; t < p.rows; ++t) {
    double e = 0.0;
    for (std::size_t n = 0; n < 512; ++n) e += double(x[t * hop + n]) * x[t * hop + n];
    double s = p(t, 0) + p(t, 256);
    for (std::size_t b = 1; b < 256; ++b) s += 2.0 * p(t, b);
    parseval = std::max(parseval, std::abs(s / 512.0 - e) / e);
  }
  const Matrix d = dct_matrix(80, 80);
  double ortho = 0.0;
  for (std::size_t i = 0; i < 80; ++i) {
    for (std::size_t j = 0; j < 80; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 80; ++k) dot += d(i, k) * d(j, k);
      ortho = std::max(ortho, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  const DspConfig def;
  const std::size_t frames = frame_count(48000, def.win_samples(16000), def.hop_samples(16000));
  const std::size_t conv_len = ConvNConfig{}.frames_before_pool(48000);
  double golden = 0.0;
  bool shapes = true;
  const auto checks = verify_golden(golden_dir);
  for (const auto& c : checks) {
    golden = std::max(golden, c.max_abs_diff);
    shapes = shapes && c.shape_ok;
  }
  Outcome o;
  o.pass = parseval <= 1e-6 && ortho <= 1e-9 && frames == 299 && conv_len == 148 && shapes && checks.size() == 3 &&
           golden <= kGoldenTolerance;
  o.detail = "Parseval " + fmt("%.1e", parseval) + ", DCT " + fmt("%.1e", ortho) + ", frames " +
             std::to_string(frames) + ", Conv320 length " + std::to_string(conv_len) + ", golden max diff " +
             fmt("%.1e", golden);
  return o;
}

// ---------------------------------------------------------------------------
// 4. mAP oracle

double brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  double total = 0.0;
  int pos = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!y[order[k]]) continue;
    int hits = 0;
    for (std::size_t j = 0; j <= k; ++j) hits += y[order[j]];
    total += double(hits) / double(k + 1);
    ++pos;
  }
  return total / pos;
}

Outcome map_oracle() {
  Rng rng(77);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(uniform_int(rng, 2, 200));
    const auto c = static_cast<std::size_t>(uniform_int(rng, 1, 8));
    const bool coarse = trial % 2 == 0;  // coarse scores force ties
    std::vector<std::vector<double>> scores(n, std::vector<double>(c));
    std::vector<std::vector<int>> labels(n, std::vector<int>(c));
    for (auto& r : scores) for (auto& v : r) v = coarse ? double(uniform_int(rng, 0, 9)) : uniform_real(rng, -3, 3);
    for (auto& r : labels) for (auto& v : r) v = uniform_real(rng, 0, 1) < 0.3;
    labels[0].assign(c, 1);  // every class has a positive
    const ApResult r = mean_average_precision(scores, labels);
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      std::vector<double> s(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = scores[i][k];
        y[i] = labels[i][k];
      }
      const double ap = brute_ap(s, y);
      worst = std::max(worst, std::abs(ap - r.ap[k]));
      sum += ap;
    }
    worst = std::max(worst, std::abs(sum / double(c) - r.map));
  }
  const double hand = mean_average_precision({{0.9}, {0.6}, {0.3}}, {{1}, {0}, {1}}).map;
  Outcome o;
  o.pass = worst <= 1e-12 && std::abs(hand - 5.0 / 6.0) <= 1e-12;
  o.detail = "1000 instances, max |diff| " + fmt("%.1e", worst) + "; 3-item AP " + fmt("%.12f", hand);
  return o;
}

// ---------------------------------------------------------------------------
// 5-8. ablation trends on the synthetic dataset

struct TrendData {
  RunConfig base;
  Dataset train;
  Dataset eval;
};

TrendData make_trend_data(const RunConfig& base) {
  TrendData d;
  d.base = base;
  const std::size_t n = base.synth.n_clips;
  std::vector<ClipRecord> recs(n);
  for (std::size_t i = 0; i < n; ++i) recs[i].path = std::to_string(i);
  const ManifestSplit split = split_records(recs, 1.0 - base.data.eval_fraction, base.data.split_seed);
  auto take = [&](const std::vector<ClipRecord>& part, Dataset& out) {
    for (const auto& r : part) {
      const Dataset one = synthesize_in_memory(base.synth, std::stoul(r.path), 1);
      out.clips.push_back(one.clips[0]);
      out.labels.push_back(one.labels[0]);
      out.ids.push_back(one.ids[0]);
    }
  };
  take(split.train, d.train);
  take(split.holdout, d.eval);
  return d;
}

struct RunRecord {
  double map = 0.0;
  double seconds = 0.0;
};

class TrendRunner {
 public:
  explicit TrendRunner(const TrendData& data) : data_(data) {}

  // mAP per seed for the base config with one axis override.
  std::vector<RunRecord> runs(AblationAxis axis, const std::string& value, const std::vector<std::uint64_t>& seeds) {
    std::vector<RunRecord> out;
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = data_.base;
      cfg.apply_axis(axis, value);
      cfg.train.seed = seed;
      cfg.eval.probe.seed = seed;
      cfg.validate();
      const std::string key = cfg.to_text();
      auto it = cache_.find(key);
      if (it == cache_.end()) {
        const auto t0 = Clock::now();
        const RunResult r = pretrain_and_evaluate(cfg, data_.train, data_.eval, {});
        RunRecord rec{r.report.ap.map, seconds_since(t0)};
        std::cerr << "  [" << axis_name(axis) << "=" << value << " seed " << seed << "] mAP " << fmt("%.4f", rec.map)
                  << " (" << fmt("%.0f", rec.seconds) << " s)\n";
        it = cache_.emplace(key, rec).first;
      }
      out.push_back(it->second);
    }
    return out;
  }

 private:
  const TrendData& data_;
  std::map<std::string, RunRecord> cache_;
};

std::vector<double> maps(const std::vector<RunRecord>& r) {
  std::vector<double> m;
  for (const auto& x : r) m.push_back(x.map);
  return m;
}

double minutes(std::initializer_list<const std::vector<RunRecord>*> groups) {
  double s = 0.0;
  for (const auto* g : groups) for (const auto& r : *g) s += r.seconds;
  return s / 60.0;
}

const std::vector<std::uint64_t> kSeeds{0, 1, 2};

Outcome formats_trend(TrendRunner& tr) {
  const auto ww = tr.runs(AblationAxis::kFormats, "wave+wave", kSeeds);
  const auto ll = tr.runs(AblationAxis::kFormats, "logmel+logmel", kSeeds);
  const auto wl = tr.runs(AblationAxis::kFormats, "wave+logmel", kSeeds);
  const auto a = maps(ww), b = maps(ll), c = maps(wl);
  int seed_ok = 0;
  for (std::size_t s = 0; s < kSeeds.size(); ++s) seed_ok += c[s] >= std::max(a[s], b[s]) - 0.01;
  const double mins = minutes({&ww, &ll, &wl});
  Outcome o;
  o.pass = seed_ok >= 2 && mean(c) > mean(a) && mean(c) > mean(b) && mins <= 45.0;
  o.detail = "wave+logmel " + join(c) + " (mean " + fmt("%.4f", mean(c)) + "), wave+wave " + join(a) + " (mean " +
             fmt("%.4f", mean(a)) + "), logmel+logmel " + join(b) + " (mean " + fmt("%.4f", mean(b)) + "); " +
             std::to_string(seed_ok) + "/3 seeds within 0.01 of the best single format; " + fmt("%.1f", mins) +
             " min (<= 45)";
  return o;
}

Outcome crop_trend(TrendRunner& tr) {
  const auto three = tr.runs(AblationAxis::kCropSize, "3", kSeeds);
  const auto full = tr.runs(AblationAxis::kCropSize, "10", kSeeds);
  const double mins = minutes({&three, &full});
  Outcome o;
  o.pass = mean(maps(full)) < mean(maps(three)) && mins <= 30.0;
  o.detail = "crop 3 s " + join(maps(three)) + " (mean " + fmt("%.4f", mean(maps(three))) + ") vs 10 s " +
             join(maps(full)) + " (mean " + fmt("%.4f", mean(maps(full))) + "); " + fmt("%.1f", mins) + " min (<= 30)";
  return o;
}

Outcome temperature_trend(TrendRunner& tr) {
  const auto low = tr.runs(AblationAxis::kTemperature, "0.1", kSeeds);
  const auto high = tr.runs(AblationAxis::kTemperature, "1.0", kSeeds);
  const double mins = minutes({&low, &high});
  Outcome o;
  o.pass = mean(maps(low)) > mean(maps(high)) && mins <= 30.0;
  o.detail = "tau 0.1 " + join(maps(low)) + " (mean " + fmt("%.4f", mean(maps(low))) + ") vs tau 1.0 " +
             join(maps(high)) + " (mean " + fmt("%.4f", mean(maps(high))) + "); " + fmt("%.1f", mins) + " min (<= 30)";
  return o;
}

Outcome freq_shift_trend(TrendRunner& tr) {
  const auto on = tr.runs(AblationAxis::kFreqShift, "40", kSeeds);
  const auto off = tr.runs(AblationAxis::kFreqShift, "0", kSeeds);
  const auto a = maps(on), b = maps(off);
  int better = 0;
  for (std::size_t s = 0; s < kSeeds.size(); ++s) better += a[s] > b[s];
  Outcome o;
  o.pass = mean(a) >= mean(b) - 0.005 && better >= 2;
  o.detail = "F=40 " + join(a) + " (mean " + fmt("%.4f", mean(a)) + ") vs F=0 " + join(b) + " (mean " +
             fmt("%.4f", mean(b)) + "); F=40 better in " + std::to_string(better) + "/3 seeds";
  return o;
}

// ---------------------------------------------------------------------------
// 9. determinism and persistence

Outcome determinism(const fs::path& work) {
  RunConfig cfg;
  cfg.synth.sample_rate = 8000;
  cfg.synth.clip_len_s = 2.0;
  cfg.synth.event_len_min_s = 0.2;
  cfg.synth.event_len_max_s = 0.8;
  cfg.dsp.n_mels = 32;
  cfg.model.conv.n_stride2_layers = 3;
  cfg.model.conv.channels = 8;
  cfg.model.conv.groups = 2;
  cfg.model.spec2d.n_blocks = 2;
  cfg.model.spec2d.base_channels = 4;
  cfg.model.spec2d.groups = 2;
  cfg.model.projector.hidden_dim = 32;
  cfg.model.projector.out_dim = 16;
  cfg.train.views.crop_len_s = 1.0;
  cfg.train.views.policy.freq_shift_max = 8;
  cfg.train.batch = 8;
  cfg.train.steps = 12;
  cfg.train.lr0 = 1e-3;
  cfg.train.val_every = 4;
  cfg.train.precision = Precision::kF64;
  cfg.validate();
  const Dataset all = synthesize_in_memory(cfg.synth, 0, 40);
  Dataset train, val;
  split_validation(all, 0.2, 0, train, val);
  const FeatureExtractor fx(cfg.dsp, cfg.synth.sample_rate);

  std::vector<fs::path> dirs{work / "det_a", work / "det_b"};
  for (const auto& d : dirs) {
    fs::remove_all(d);
    ContrastiveModel<double> m(cfg.train.views.formats, cfg.model, cfg.train.seed);
    Trainer<double> t(m, train, val, cfg.train, fx);
    t.run(RunOutputs{d, cfg.to_text(), false});
  }
  const std::string ma = slurp(dirs[0] / "metrics.csv"), mb = slurp(dirs[1] / "metrics.csv");
  const bool same_metrics = !ma.empty() && ma == mb;
  const bool same_ckpt = slurp(dirs[0] / "ckpt.last") == slurp(dirs[1] / "ckpt.last");

  // Uninterrupted: 6 steps then one more. Resumed: load after 6, one step.
  ContrastiveModel<double> a(cfg.train.views.formats, cfg.model, cfg.train.seed);
  Trainer<double> ta(a, train, val, cfg.train, fx);
  for (int i = 0; i < 6; ++i) ta.step();
  save_checkpoint(work / "mid.ckpt", cfg.to_text(), a.params(), ta.optim(), ta.steps_done(), std::nullopt);
  const double next_a = ta.step();

  ContrastiveModel<double> b(cfg.train.views.formats, cfg.model, cfg.train.seed + 1000);
  Trainer<double> tb(b, train, val, cfg.train, fx);
  tb.resume(work / "mid.ckpt");
  const double next_b = tb.step();
  const bool resumed = next_a == next_b && a.params().checksum() == b.params().checksum();
  save_checkpoint(work / "a7.ckpt", cfg.to_text(), a.params(), ta.optim(), 7, std::nullopt);
  save_checkpoint(work / "b7.ckpt", cfg.to_text(), b.params(), tb.optim(), 7, std::nullopt);
  const bool same_bytes = slurp(work / "a7.ckpt") == slurp(work / "b7.ckpt");

  Outcome o;
  o.pass = same_metrics && same_ckpt && resumed && same_bytes;
  o.detail = std::string("metrics.csv ") + (same_metrics ? "byte-identical" : "DIFFER") + ", checkpoints " +
             (same_ckpt ? "byte-identical" : "DIFFER") + ", resumed step " + (resumed ? "bit-exact" : "MISMATCH") +
             ", post-resume checkpoint " + (same_bytes ? "byte-identical" : "DIFFERS");
  return o;
}

// ---------------------------------------------------------------------------
// 10. end-to-end CLI smoke

int run_cli(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + cli + "\" " + args + " >> \"" + log.string() + "\" 2>&1";
  std::ofstream(log, std::ios::app) << "$ mfcl " << args << '\n';
  const int rc = std::system(cmd.c_str());
  return rc == 0 ? 0 : (WIFEXITED(rc) ? WEXITSTATUS(rc) : 1);
}

double read_map(const fs::path& eval_csv) {
  std::ifstream in(eval_csv);
  std::string line;
  while (std::getline(in, line)) {
    const auto p = line.find("mAP=");
    if (line.rfind("#", 0) == 0 && p != std::string::npos) return std::stod(line.substr(p + 4));
  }
  return std::nan("");
}

Outcome end_to_end(const std::string& cli, const fs::path& config, const fs::path& work) {
  const fs::path root = work / "e2e";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path log = root / "log.txt";
  const std::string cfg = "--config \"" + config.string() + "\"";
  const std::string data = "--data \"" + (root / "data").string() + "\"";
  const auto t0 = Clock::now();
  int rc = run_cli(cli, "synth " + cfg + " --out \"" + (root / "data").string() + "\"", log);
  const std::string run = "--out \"" + (root / "run").string() + "\"";
  const std::string base = "--out \"" + (root / "baseline").string() + "\"";
  if (!rc) rc = run_cli(cli, "pretrain " + cfg + " " + data + " " + run + " --set train.steps=300", log);
  if (!rc) rc = run_cli(cli, "probe " + run, log);
  if (!rc) rc = run_cli(cli, "eval " + run, log);
  if (!rc) rc = run_cli(cli, "probe --baseline " + cfg + " " + data + " " + base + " --set train.steps=300", log);
  if (!rc) rc = run_cli(cli, "eval --baseline " + base, log);
  const double mins = seconds_since(t0) / 60.0;
  Outcome o;
  if (rc) {
    o.detail = "a CLI step exited with " + std::to_string(rc) + ", see " + log.string();
    return o;
  }
  std::size_t metric_rows = 0;
  {
    std::ifstream in(root / "run" / "metrics.csv");
    std::string line;
    while (std::getline(in, line)) ++metric_rows;
  }
  const double trained = read_map(root / "run" / "eval.csv"), baseline = read_map(root / "baseline" / "eval.csv");
  const bool artifacts = fs::exists(root / "run" / "config.effective") && fs::exists(root / "run" / "seed") &&
                         fs::exists(root / "run" / "ckpt.best") && metric_rows == 301;
  o.pass = artifacts && trained > baseline && mins < 10.0;
  o.detail = "pretrained mAP " + fmt("%.4f", trained) + " vs random-encoder baseline " + fmt("%.4f", baseline) + ", " +
             std::to_string(metric_rows > 0 ? metric_rows - 1 : 0) + " logged steps, " + fmt("%.1f", mins) +
             " min (< 10)";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string profile = MFCL_SOURCE_DIR "/configs/acceptance.conf";
  std::string smoke = MFCL_SOURCE_DIR "/configs/smoke.conf";
  std::string golden = MFCL_SOURCE_DIR "/tests/data/golden";
  std::string cli = MFCL_CLI_PATH;
  std::string work = (fs::temp_directory_path() / "mfcl_acceptance").string();
  app.add_option("--only", only, "Criteria to run (default: all)");
  app.add_option("--profile", profile, "Config for the ablation-trend runs");
  app.add_option("--smoke", smoke, "Config for the end-to-end run");
  app.add_option("--cli", cli, "Path to the mfcl binary");
  app.add_option("--work", work, "Scratch directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::set<int> want(only.begin(), only.end());
  auto enabled = [&](int k) { return want.empty() || want.count(k); };

  std::unique_ptr<TrendData> data;
  std::unique_ptr<TrendRunner> runner;
  auto trends = [&]() -> TrendRunner& {
    if (!runner) {
      const RunConfig base = parse_config(profile, true);
      std::cerr << "synthesizing " << base.synth.n_clips << " clips for the trend runs\n";
      data = std::make_unique<TrendData>(make_trend_data(base));
      runner = std::make_unique<TrendRunner>(*data);
    }
    return *runner;
  };

  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0: none beyond what the check itself enforces
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "loss oracle equivalence", 10.0, loss_oracle},
      {2, "gradient suite", 300.0, gradients},
      {3, "DSP identities", 30.0, [&] { return dsp_identities(golden); }},
      {4, "mAP oracle", 10.0, map_oracle},
      {5, "multi-format advantage", 0.0, [&] { return formats_trend(trends()); }},
      {6, "crop-size trend", 0.0, [&] { return crop_trend(trends()); }},
      {7, "temperature trend", 0.0, [&] { return temperature_trend(trends()); }},
      {8, "frequency-shift benefit", 0.0, [&] { return freq_shift_trend(trends()); }},
      {9, "determinism and persistence", 0.0, [&] { return determinism(work); }},
      {10, "end-to-end smoke", 0.0, [&] { return end_to_end(cli, smoke, work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!enabled(c.id)) continue;
    std::cerr << "criterion " << c.id << ": " << c.name << " ...\n";
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    const double secs = seconds_since(t0);
    if (c.budget_s > 0.0) {
      o.detail += "; " + fmt("%.1f", secs) + " s (< " + fmt("%.0f", c.budget_s) + ")";
      o.pass = o.pass && secs < c.budget_s;
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
