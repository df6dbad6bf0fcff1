// mfcl: command-line front end.
//
// Exit codes: 0 ok, 1 other failure (including failed checks), 2 config or
// usage error, 3 data error, 4 numeric error.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfcl/config.hpp"
#include "mfcl/gradsuite.hpp"
#include "mfcl/pipeline.hpp"
#include "mfcl/testing_hooks.hpp"
#include "mfcl/text.hpp"

namespace fs = std::filesystem;
using namespace mfcl;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string data;
  bool strict = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--config", c.config, "Run config file (section.key = value lines)");
  cmd->add_option("--seed", c.seed, "Seed override");
  if (with_out) cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--data", c.data, "Dataset directory; sets data.dir and both manifests");
  cmd->add_flag("--strict", c.strict, "Reject unknown config keys");
  cmd->add_option("--set", c.sets, "Override one key, e.g. --set train.steps=300");
}

RunConfig load_config(const Common& c, bool synth_seed) {
  std::vector<std::string> warnings;
  RunConfig cfg = c.config.empty() ? RunConfig() : parse_config(c.config, c.strict, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << c.config << ": " << w << '\n';
  for (const std::string& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
  }
  if (!c.data.empty()) {
    cfg.data.dir = c.data;
    cfg.data.train_manifest = (fs::path(c.data) / "train.csv").string();
    cfg.data.eval_manifest = (fs::path(c.data) / "eval.csv").string();
  }
  if (c.seed) {
    if (synth_seed) {
      cfg.synth.seed = *c.seed;
    } else {
      cfg.train.seed = *c.seed;
      cfg.eval.probe.seed = *c.seed;
    }
  }
  cfg.validate();
  return cfg;
}

void write_seed(const fs::path& dir, std::uint64_t seed) {
  std::ofstream(dir / "seed") << seed << '\n';
}

int cmd_synth(const Common& c) {
  RunConfig cfg = load_config(c, true);
  const fs::path out = c.out.empty() ? fs::path(cfg.data.dir) : fs::path(c.out);
  cfg.data.dir = out.string();
  cfg.data.train_manifest = (out / "train.csv").string();
  cfg.data.eval_manifest = (out / "eval.csv").string();
  fs::create_directories(out);
  std::cerr << "synthesizing " << cfg.synth.n_clips << " clips into " << out << '\n';
  const auto records = synthesize_dataset(cfg.synth, out);
  build_manifest(out, records, 1.0 - cfg.data.eval_fraction, cfg.data.split_seed, "train", "eval");
  write_effective_config(out, cfg);
  write_seed(out, cfg.synth.seed);
  std::cout << "wrote " << records.size() << " clips, manifests " << (out / "train.csv") << " and "
            << (out / "eval.csv") << '\n';
  return 0;
}

int cmd_pretrain(const Common& c) {
  const RunConfig cfg = load_config(c, false);
  const fs::path dir = c.out.empty() ? fs::path("runs/default") : fs::path(c.out);
  const Dataset all = load_checked(cfg.data.train_manifest);
  fs::create_directories(dir);
  write_effective_config(dir, cfg);
  write_seed(dir, cfg.train.seed);
  Dataset train, val;
  split_validation(all, cfg.data.val_fraction, cfg.data.split_seed, train, val);
  const FeatureExtractor fx(cfg.dsp, dataset_sample_rate(all));
  auto run = [&](auto tag) {
    using T = decltype(tag);
    ContrastiveModel<T> model(cfg.train.views.formats, cfg.model, cfg.train.seed);
    Trainer<T> trainer(model, train, val, cfg.train, fx);
    const auto rows = trainer.run(RunOutputs{dir, cfg.to_text(), true});
    std::cout << "trained " << rows.size() << " steps, final loss " << format_double(rows.back().train_loss);
    if (trainer.best_val()) std::cout << ", best validation loss " << format_double(*trainer.best_val());
    std::cout << "\ncheckpoints in " << dir << '\n';
  };
  if (cfg.train.precision == Precision::kF64) {
    run(double{});
  } else {
    run(float{});
  }
  return 0;
}

// Config for probe/eval: the run's effective config unless --config is given.
RunConfig run_config(const Common& c, const fs::path& dir) {
  if (c.config.empty() && fs::exists(dir / "config.effective")) {
    Common with = c;
    with.config = (dir / "config.effective").string();
    return load_config(with, false);
  }
  return load_config(c, false);
}

template <typename T>
void load_encoder(ContrastiveModel<T>& model, const RunConfig& cfg, const fs::path& dir, bool baseline) {
  if (baseline) return;
  const fs::path ckpt = dir / cfg.eval.checkpoint;
  if (!fs::exists(ckpt)) {
    throw DataError("checkpoint " + ckpt.string() + " not found (run `mfcl pretrain --out " + dir.string() +
                    "` first, or pass --baseline)");
  }
  OptimState<T> optim = OptimState<T>::zeros_like(model.params());
  load_checkpoint(ckpt, model.params(), optim);
}

int cmd_probe(const Common& c, bool baseline) {
  const fs::path dir = c.out.empty() ? fs::path("runs/default") : fs::path(c.out);
  const RunConfig cfg = run_config(c, dir);
  const Dataset train = load_checked(cfg.data.train_manifest);
  const FeatureExtractor fx(cfg.dsp, dataset_sample_rate(train));
  fs::create_directories(dir);
  if (baseline) {
    write_effective_config(dir, cfg);
    write_seed(dir, cfg.train.seed);
  }
  auto run = [&](auto tag) {
    using T = decltype(tag);
    ContrastiveModel<T> model(cfg.train.views.formats, cfg.model, cfg.train.seed);
    load_encoder(model, cfg, dir, baseline);
    const ClipFeatures f = extract_features(model, train, cfg.train.views.crop_len_s, cfg.eval.inputs, fx);
    const Probe probe = train_probe_frozen(model, f, train.labels, kNumClasses, cfg.eval.probe);
    save_probe(dir / "probe.txt", probe);
  };
  if (cfg.train.precision == Precision::kF64) {
    run(double{});
  } else {
    run(float{});
  }
  std::cout << "probe written to " << (dir / "probe.txt") << '\n';
  return 0;
}

int cmd_eval(const Common& c, bool baseline) {
  const fs::path dir = c.out.empty() ? fs::path("runs/default") : fs::path(c.out);
  const RunConfig cfg = run_config(c, dir);
  const Dataset eval = load_checked(cfg.data.eval_manifest);
  const FeatureExtractor fx(cfg.dsp, dataset_sample_rate(eval));
  if (!fs::exists(dir / "probe.txt")) {
    throw DataError("probe " + (dir / "probe.txt").string() + " not found (run `mfcl probe` first)");
  }
  const Probe probe = load_probe(dir / "probe.txt", cfg.eval.probe);
  EvalReport report;
  auto run = [&](auto tag) {
    using T = decltype(tag);
    ContrastiveModel<T> model(cfg.train.views.formats, cfg.model, cfg.train.seed);
    load_encoder(model, cfg, dir, baseline);
    const ClipFeatures f = extract_features(model, eval, cfg.train.views.crop_len_s, cfg.eval.inputs, fx);
    report = evaluate(probe, f, eval.labels);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(model.params().checksum()));
    report.checkpoint_id = baseline ? std::string("random-init") : std::string(buf);
  };
  if (cfg.train.precision == Precision::kF64) {
    run(double{});
  } else {
    run(float{});
  }
  report.config_hash = hash_text(cfg.to_text());
  write_eval_report(dir / "eval.csv", report);
  std::cout << eval_summary_line(report) << '\n';
  return 0;
}

int cmd_gradcheck(bool inject_fault) {
  ad::testing::inject_conv_grad_fault(inject_fault);
  bool ok = true;
  std::printf("%-28s %6s %14s %6s  %s\n", "op", "cases", "max_rel_err", "kinks", "status");
  for (const OpCheckReport& r : run_gradient_suite()) {
    const bool pass = r.max_rel_err < kGradTolerance;
    ok = ok && pass;
    std::printf("%-28s %6zu %14.3e %6zu  %s%s\n", r.op.c_str(), r.cases, r.max_rel_err, r.kink_retries,
                pass ? "ok" : "FAIL ",
                pass ? "" : r.worst.c_str());
  }
  std::printf("%s\n", ok ? "all gradients match" : "gradient check FAILED");
  return ok ? 0 : 1;
}

int cmd_ablate(const Common& c) {
  const RunConfig base = load_config(c, false);
  const fs::path out = c.out.empty() ? fs::path("runs/ablate") : fs::path(c.out);
  fs::create_directories(out);
  write_effective_config(out, base);
  const Dataset train = load_checked(base.data.train_manifest);
  const Dataset eval = load_checked(base.data.eval_manifest);
  const std::string axis(axis_name(base.ablate.axis));
  std::vector<std::uint64_t> seeds = base.ablate.seeds;
  if (c.seed) seeds = {*c.seed};

  std::ofstream csv(out / "ablation.csv");
  csv << "axis,value,seed,val_map\n";
  std::map<std::string, std::vector<double>> maps;
  std::map<std::string, std::size_t> failures;
  for (const std::string& value : base.ablate.values) {
    for (std::uint64_t seed : seeds) {
      const fs::path dir = out / (value + "_seed" + std::to_string(seed));
      std::string cell;
      try {
        RunConfig cfg = base;
        cfg.apply_axis(base.ablate.axis, value);
        cfg.train.seed = seed;
        cfg.eval.probe.seed = seed;
        cfg.validate();
        std::cerr << "[" << axis << "=" << value << " seed " << seed << "]\n";
        const RunResult r = pretrain_and_evaluate(cfg, train, eval, dir, true, true);
        write_seed(dir, seed);
        maps[value].push_back(r.report.ap.map);
        cell = format_double(r.report.ap.map);
      } catch (const std::exception& e) {
        ++failures[value];
        cell = "failed";
        std::cerr << "run " << axis << "=" << value << " seed " << seed << " failed: " << e.what() << '\n';
      }
      csv << axis << ',' << value << ',' << seed << ',' << cell << '\n';
      csv.flush();
    }
  }

  std::ofstream summary(out / "summary.csv");
  summary << "axis,value,runs,failed,mean_map\n";
  std::printf("%-16s %5s %7s %10s\n", "value", "runs", "failed", "mean_map");
  for (const std::string& value : base.ablate.values) {
    const auto& v = maps[value];
    double mean = 0.0;
    for (double m : v) mean += m;
    const std::string mean_s = v.empty() ? "" : format_double(mean / static_cast<double>(v.size()));
    summary << axis << ',' << value << ',' << v.size() << ',' << failures[value] << ',' << mean_s << '\n';
    std::printf("%-16s %5zu %7zu %10s\n", value.c_str(), v.size(), failures[value],
                v.empty() ? "-" : mean_s.c_str());
  }
  std::size_t n_failed = 0;
  for (const auto& [k, n] : failures) n_failed += n;
  return n_failed == 0 ? 0 : 1;
}

int cmd_golden(const std::string& action, const std::string& dir) {
  if (action == "emit") {
    emit_golden(dir);
    std::cout << "golden vectors written to " << dir << '\n';
    return 0;
  }
  bool ok = true;
  for (const GoldenCheck& g : verify_golden(dir)) {
    const bool pass = g.shape_ok && g.max_abs_diff <= kGoldenTolerance;
    ok = ok && pass;
    std::printf("%-12s max_abs_diff %.3e  %s\n", g.name.c_str(), g.max_abs_diff,
                !g.shape_ok ? "FAIL (shape)" : pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-format contrastive audio representation learning"};
  app.require_subcommand(1);

  Common synth_c, pre_c, probe_c, eval_c, abl_c;
  auto* synth = app.add_subcommand("synth", "Synthesize the labelled event dataset and its manifests");
  add_common(synth, synth_c);
  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pretraining; writes metrics.csv and checkpoints");
  add_common(pretrain, pre_c);
  bool probe_baseline = false, eval_baseline = false;
  auto* probe = app.add_subcommand("probe", "Train the MLP probe on frozen encoder features");
  add_common(probe, probe_c);
  probe->add_flag("--baseline", probe_baseline, "Use randomly initialized encoders instead of a checkpoint");
  auto* eval = app.add_subcommand("eval", "Score the eval manifest; writes eval.csv");
  add_common(eval, eval_c);
  eval->add_flag("--baseline", eval_baseline, "Use randomly initialized encoders instead of a checkpoint");
  bool inject_fault = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_flag("--inject-fault", inject_fault)->group("");
  auto* ablate = app.add_subcommand("ablate", "Pretrain+probe grid over one axis (ablate.* keys)");
  add_common(ablate, abl_c);
  std::string golden_action, golden_dir = "tests/data/golden";
  auto* golden = app.add_subcommand("golden", "Emit or verify DSP golden vectors");
  golden->add_option("action", golden_action, "emit or verify")->required()->check(CLI::IsMember({"emit", "verify"}));
  golden->add_option("--out", golden_dir, "Golden vector directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(synth_c);
    if (*pretrain) return cmd_pretrain(pre_c);
    if (*probe) return cmd_probe(probe_c, probe_baseline);
    if (*eval) return cmd_eval(eval_c, eval_baseline);
    if (*gradcheck) return cmd_gradcheck(inject_fault);
    if (*ablate) return cmd_ablate(abl_c);
    if (*golden) return cmd_golden(golden_action, golden_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
