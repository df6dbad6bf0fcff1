#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "helpers.hpp"
#include "mfcl/train.hpp"

using namespace mfcl;
using namespace mfcl::ad;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<double>> random_rows(std::size_t rows, std::size_t dim, Rng& rng) {
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> out(rows, std::vector<double>(dim));
  for (auto& r : out) for (auto& v : r) v = g(rng);
  return out;
}

std::vector<double> flat(const std::vector<std::vector<double>>& rows) {
  std::vector<double> f;
  for (const auto& r : rows) f.insert(f.end(), r.begin(), r.end());
  return f;
}

double tape_loss(const std::vector<std::vector<double>>& rows, double tau) {
  Tape<double> t;
  const Var z = t.constant(Tensor<double>({rows.size(), rows[0].size()}, flat(rows)));
  return t.value(nt_xent(t, z, tau)).item();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TinyRun {
  RunConfig cfg = tiny_config();
  Dataset train, val;
  FeatureExtractor fx{cfg.dsp, cfg.synth.sample_rate};

  TinyRun() {
    SynthSpec s = cfg.synth;
    train = synthesize_in_memory(s, 0, 12);
    val = synthesize_in_memory(s, 12, 4);
  }
};

}  // namespace

TEST_CASE("loss implementations agree on random batches") {
  Rng rng(2024);
  int batches = 0;
  for (std::size_t n : {2, 3, 8}) {
    for (std::size_t dim : {4, 16}) {
      for (int rep = 0; rep < 17; ++rep, ++batches) {
        const double tau = 0.05 + 0.05 * rep;
        const auto rows = random_rows(2 * n, dim, rng);
        const double oracle = nt_xent_oracle(rows, half_pairing(2 * n), tau);
        CHECK(oracle >= 0.0);
        CHECK(std::abs(nt_xent_value(flat(rows), 2 * n, dim, tau) - oracle) <= 1e-9);
        CHECK(std::abs(tape_loss(rows, tau) - oracle) <= 1e-9);
      }
    }
  }
  CHECK(batches >= 100);
}

TEST_CASE("orthogonal latents give ln 3 for two pairs") {
  std::vector<std::vector<double>> rows(4, std::vector<double>(4, 0.0));
  for (std::size_t i = 0; i < 4; ++i) rows[i][i] = 1.0 + i;
  for (double tau : {0.05, 0.1, 1.0, 3.0}) {
    CHECK(tape_loss(rows, tau) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK(nt_xent_oracle(rows, half_pairing(4), tau) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  }
  CHECK(half_pairing(4) == std::vector<std::size_t>{2, 3, 0, 1});
}

TEST_CASE("one pair: the positive is the whole denominator") {
  const std::vector<std::vector<double>> rows{{1.0, 0.2}, {-0.3, 2.0}};
  CHECK(std::abs(nt_xent_oracle(rows, {1, 0}, 0.1)) < 1e-12);
}

TEST_CASE("zero-norm latent is rejected with its index") {
  Rng rng(1);
  auto rows = random_rows(4, 3, rng);
  rows[2].assign(3, 0.0);
  Tape<double> t;
  const Var z = t.constant(Tensor<double>({4, 3}, flat(rows)));
  try {
    nt_xent(t, z, 0.1);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find('2') != std::string::npos);
  }
  CHECK_THROWS(nt_xent_oracle(rows, half_pairing(4), 0.1));
}

TEST_CASE("loss invariances") {
  Rng rng(7);
  const auto rows = random_rows(8, 5, rng);
  const double base = tape_loss(rows, 0.2);
  auto scaled = rows;
  for (auto& r : scaled) for (auto& v : r) v *= 17.0;
  CHECK(std::abs(tape_loss(scaled, 0.2) - base) <= 1e-9);
  auto mixed = rows;
  for (std::size_t i = 0; i < mixed.size(); ++i) for (auto& v : mixed[i]) v *= 0.5 + i;
  CHECK(std::abs(tape_loss(mixed, 0.2) - base) <= 1e-9);
  // Reordering the pairs (both halves together) keeps the loss.
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::vector<double>> permuted(8);
  for (std::size_t k = 0; k < 4; ++k) {
    permuted[k] = rows[perm[k]];
    permuted[k + 4] = rows[perm[k] + 4];
  }
  CHECK(std::abs(tape_loss(permuted, 0.2) - base) <= 1e-12);
  // Swapping the two halves is also a pairing-preserving reorder.
  std::vector<std::vector<double>> swapped(rows.begin() + 4, rows.end());
  swapped.insert(swapped.end(), rows.begin(), rows.begin() + 4);
  CHECK(std::abs(tape_loss(swapped, 0.2) - base) <= 1e-12);
}

TEST_CASE("loss falls as temperature falls when positives dominate") {
  Rng rng(11);
  std::normal_distribution<double> g(0.0, 0.05);
  std::vector<std::vector<double>> rows;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> e(3, 0.0);
    e[k] = 1.0;
    rows.push_back(e);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    auto e = rows[k];
    for (auto& v : e) v += g(rng);
    rows.push_back(e);
  }
  double prev = std::numeric_limits<double>::infinity();
  for (double tau : {1.0, 0.5, 0.1}) {
    const double l = tape_loss(rows, tau);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("Adam first step") {
  ParameterSet<double> ps;
  auto& p = ps.add("w", {2});
  p.value = Tensor<double>({2}, std::vector<double>{1.0, 1.0});
  auto st = OptimState<double>::zeros_like(ps);
  p.grad = Tensor<double>({2}, std::vector<double>{3.0, 0.0});
  p.grad_pending = true;
  adam_step(ps, st, 0.1);
  CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(p.value[1] == 1.0);
  CHECK(st.step == 1);
  CHECK(p.grad[0] == 0.0);
  p.grad[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(ps, st, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
}

TEST_CASE("Adam leaves zero-gradient parameters alone and treats parameters independently") {
  ParameterSet<double> ps;
  auto& a = ps.add("a", {3});
  auto& b = ps.add("b", {2});
  a.value = Tensor<double>({3}, std::vector<double>{0.5, -1.0, 2.0});
  b.value = Tensor<double>({2}, std::vector<double>{4.0, 5.0});
  auto st = OptimState<double>::zeros_like(ps);
  b.grad = Tensor<double>({2}, std::vector<double>{-1.0, 2.0});
  b.grad_pending = true;
  adam_step(ps, st, 0.01);
  CHECK(a.value == Tensor<double>({3}, std::vector<double>{0.5, -1.0, 2.0}));
  CHECK(b.value[0] == doctest::Approx(4.01).epsilon(1e-9));
  CHECK(b.value[1] == doctest::Approx(4.99).epsilon(1e-9));
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 3000, 1e-4, 1e-6) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(cosine_lr(1500, 3000, 1e-4, 1e-6) == doctest::Approx(5.05e-5).epsilon(1e-12));
  CHECK(cosine_lr(3000, 3000, 1e-4, 1e-6) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(cosine_lr(4000, 3000, 1e-4, 1e-6) == doctest::Approx(1e-6).epsilon(1e-12));
}

TEST_CASE("metric rows") {
  MetricRow r;
  r.step = 3;
  r.lr = 0.5;
  r.train_loss = 1.25;
  CHECK(format_metric_row(r).rfind("3,", 0) == 0);
  CHECK(format_metric_row(r).back() == ',');
  r.val_loss = 2.0;
  CHECK(format_metric_row(r).back() != ',');
}

TEST_CASE("checkpoints") {
  const auto dir = scratch_dir("ckpt");
  const RunConfig cfg = tiny_config();
  ContrastiveModel<float> m(FormatSpec{}, cfg.model, 3);
  auto st = OptimState<float>::zeros_like(m.params());
  st.step = 5;
  st.m[0][0] = 0.25f;
  save_checkpoint(dir / "a.ckpt", cfg.to_text(), m.params(), st, 5, 1.5);

  ContrastiveModel<float> fresh(FormatSpec{}, cfg.model, 99);
  auto st2 = OptimState<float>::zeros_like(fresh.params());
  const CheckpointInfo info = load_checkpoint(dir / "a.ckpt", fresh.params(), st2);
  CHECK(info.step == 5);
  CHECK(info.best_val == 1.5);
  CHECK(fresh.params().checksum() == m.params().checksum());
  CHECK(st2.m[0][0] == 0.25f);
  save_checkpoint(dir / "b.ckpt", cfg.to_text(), fresh.params(), st2, 5, 1.5);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  CHECK(read_checkpoint_config(dir / "a.ckpt").find("train.temperature") != std::string::npos);

  fs::copy_file(dir / "a.ckpt", dir / "cut.ckpt");
  fs::resize_file(dir / "cut.ckpt", fs::file_size(dir / "a.ckpt") - 7);
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt", fresh.params(), st2), DataError);

  RunConfig other = cfg;
  other.model.conv.channels = 16;
  other.model.spec2d.base_channels = 8;
  ContrastiveModel<float> wrong(FormatSpec{}, other.model, 0);
  auto st3 = OptimState<float>::zeros_like(wrong.params());
  try {
    load_checkpoint(dir / "a.ckpt", wrong.params(), st3);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(wrong.params().all()[0]->name) != std::string::npos);
  }
  ContrastiveModel<double> wide(FormatSpec{}, cfg.model, 0);
  auto st4 = OptimState<double>::zeros_like(wide.params());
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", wide.params(), st4), DataError);
}

TEST_CASE("training is deterministic") {
  TinyRun r;
  r.cfg.train.precision = Precision::kF64;
  std::vector<double> losses[2];
  std::uint64_t sums[2];
  for (int k = 0; k < 2; ++k) {
    ContrastiveModel<double> m(FormatSpec{}, r.cfg.model, r.cfg.train.seed);
    Trainer<double> tr(m, r.train, r.val, r.cfg.train, r.fx);
    for (const auto& row : tr.run(RunOutputs{})) losses[k].push_back(row.train_loss);
    sums[k] = m.params().checksum();
  }
  CHECK(losses[0] == losses[1]);
  CHECK(sums[0] == sums[1]);
}

TEST_CASE("resume continues bit-exactly") {
  TinyRun r;
  const auto dir = scratch_dir("resume");
  ContrastiveModel<double> a(FormatSpec{}, r.cfg.model, r.cfg.train.seed);
  Trainer<double> ta(a, r.train, r.val, r.cfg.train, r.fx);
  for (int i = 0; i < 3; ++i) ta.step();
  save_checkpoint(dir / "mid.ckpt", r.cfg.to_text(), a.params(), ta.optim(), ta.steps_done(), std::nullopt);
  std::vector<double> tail_a;
  for (int i = 0; i < 3; ++i) tail_a.push_back(ta.step());

  ContrastiveModel<double> b(FormatSpec{}, r.cfg.model, 1234);
  Trainer<double> tb(b, r.train, r.val, r.cfg.train, r.fx);
  CHECK(tb.resume(dir / "mid.ckpt").step == 3);
  std::vector<double> tail_b;
  for (int i = 0; i < 3; ++i) tail_b.push_back(tb.step());
  CHECK(tail_a == tail_b);
  CHECK(a.params().checksum() == b.params().checksum());
}

TEST_CASE("run writes metrics and checkpoints") {
  TinyRun r;
  const auto dir = scratch_dir("runout");
  ContrastiveModel<float> m(FormatSpec{}, r.cfg.model, 0);
  Trainer<float> tr(m, r.train, r.val, r.cfg.train, r.fx);
  const auto rows = tr.run(RunOutputs{dir, r.cfg.to_text(), false});
  REQUIRE(rows.size() == 6);
  CHECK(rows[2].val_loss.has_value());
  CHECK(!rows[3].val_loss.has_value());
  CHECK(rows[5].val_loss.has_value());
  CHECK(fs::exists(dir / "ckpt.last"));
  CHECK(fs::exists(dir / "ckpt.best"));
  std::ifstream in(dir / "metrics.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == kMetricsHeader);
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 6);
  for (const auto& row : rows) CHECK(std::isfinite(row.train_loss));
}

TEST_CASE("validation split") {
  TinyRun r;
  Dataset tr, va;
  split_validation(r.train, 0.25, 3, tr, va);
  CHECK(tr.size() == 9);
  CHECK(va.size() == 3);
  Dataset tr2, va2;
  split_validation(r.train, 0.25, 3, tr2, va2);
  CHECK(va.ids == va2.ids);
}

// Reduced profile: 8 kHz, narrow encoders, batch 32.
TEST_CASE("pretraining smoke: loss at step 50 below step 1 for most seeds" * doctest::test_suite("smoke")) {
  RunConfig cfg;
  cfg.synth.sample_rate = 8000;
  cfg.model.conv.channels = 16;
  cfg.model.conv.groups = 4;
  cfg.model.spec2d.base_channels = 4;
  cfg.model.spec2d.groups = 4;
  cfg.model.projector.hidden_dim = 128;
  cfg.model.projector.out_dim = 128;
  cfg.train.steps = 50;
  cfg.train.batch = 32;
  cfg.train.lr0 = 1e-3;
  cfg.train.lr_min = 1e-5;
  cfg.train.val_every = 0;
  const Dataset clips = synthesize_in_memory(cfg.synth, 0, 64);
  const Dataset none;
  const FeatureExtractor fx(cfg.dsp, cfg.synth.sample_rate);
  int wins = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    cfg.train.seed = seed;
    ContrastiveModel<float> m(FormatSpec{}, cfg.model, seed);
    Trainer<float> tr(m, clips, none, cfg.train, fx);
    const auto rows = tr.run(RunOutputs{});
    MESSAGE("seed " << seed << ": " << rows.front().train_loss << " -> " << rows.back().train_loss);
    if (rows.back().train_loss < rows.front().train_loss) ++wins;
  }
  CHECK(wins >= 2);
}
