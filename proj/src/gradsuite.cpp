#include "mfcl/gradsuite.hpp"

#include <cmath>
#include <functional>

#include "mfcl/encoders.hpp"
#include "mfcl/gradcheck.hpp"
#include "mfcl/random.hpp"

namespace mfcl {

using ad::LossBuilder;
using ad::Padding;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor<double> rand_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (double& v : t.values()) v = uniform_real(rng, lo, hi);
  return t;
}

// keeps ReLU inputs off the kink
Tensor<double> rand_off_zero(const Shape& shape, Rng& rng) {
  Tensor<double> t = rand_tensor(shape, rng);
  for (double& v : t.values()) v = v < 0 ? v - 0.05 : v + 0.05;
  return t;
}

// Fixed random weights for reducing a tensor to a scalar.
Var reduce(Tape<double>& tape, Var y) {
  const Shape& s = tape.shape(y);
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  Rng rng = stream_rng(0x6c55, n);
  return ad::weighted_sum(tape, y, rand_tensor(s, rng));
}

struct Collector {
  OpCheckReport report;
  void add(const ad::GradCheckResult& g, const std::string& label) {
    ++report.cases;
    report.kink_retries += g.kink_retries;
    if (report.cases == 1 || g.max_rel_err > report.max_rel_err) {
      report.max_rel_err = g.max_rel_err;
      report.worst = label + " input " + g.worst_input + "[" + std::to_string(g.worst_index) + "]";
    }
  }
};

std::string shape_label(const Shape& s) { return ad::shape_str(s); }

using Suite = std::vector<std::pair<std::string, std::function<void(Collector&, Rng&)>>>;

Suite build_suite() {
  Suite s;
  s.emplace_back("conv1d", [](Collector& c, Rng& rng) {
    struct Case { std::size_t n, cin, len, cout, k, stride; };
    for (const Case& k : {Case{1, 2, 9, 3, 3, 1}, Case{2, 3, 17, 4, 4, 2}, Case{2, 1, 23, 2, 10, 5}}) {
      std::vector<Tensor<double>> in = {rand_tensor({k.n, k.cin, k.len}, rng), rand_tensor({k.cout, k.cin, k.k}, rng),
                                        rand_tensor({k.cout}, rng)};
      const std::size_t stride = k.stride;
      c.add(ad::finite_diff_check(
                [stride](Tape<double>& t, std::span<const Var> v) {
                  return reduce(t, ad::conv1d(t, v[0], v[1], v[2], stride));
                },
                in),
            "x" + shape_label(in[0].shape()) + " stride " + std::to_string(stride));
    }
  });
  s.emplace_back("conv2d", [](Collector& c, Rng& rng) {
    struct Case { Shape x, w; std::size_t stride; Padding pad; const char* name; };
    const Case cases[] = {
        {{2, 2, 6, 7}, {3, 2, 2, 3}, 2, Padding::kValid, "valid"},
        {{1, 3, 5, 6}, {2, 3, 3, 3}, 1, Padding::kSame, "same"},
        {{2, 2, 7, 4}, {3, 2, 3, 3}, 1, Padding::kSameReplicate, "replicate"},
        {{1, 2, 5, 5}, {2, 2, 1, 1}, 1, Padding::kSameReplicate, "replicate 1x1"},
    };
    for (const Case& k : cases) {
      std::vector<Tensor<double>> in = {rand_tensor(k.x, rng), rand_tensor(k.w, rng), rand_tensor({k.w[0]}, rng)};
      c.add(ad::finite_diff_check(
                [k](Tape<double>& t, std::span<const Var> v) {
                  return reduce(t, ad::conv2d(t, v[0], v[1], v[2], k.stride, k.pad));
                },
                in),
            std::string(k.name) + " x" + shape_label(k.x));
    }
  });
  s.emplace_back("group_norm", [](Collector& c, Rng& rng) {
    struct Case { Shape x; std::size_t groups; };
    for (const Case& k : {Case{{2, 4, 5}, 2}, Case{{1, 6, 3, 4}, 3}, Case{{2, 3, 7}, 1}}) {
      std::vector<Tensor<double>> in = {rand_tensor(k.x, rng), rand_tensor({k.x[1]}, rng, 0.5, 1.5),
                                        rand_tensor({k.x[1]}, rng)};
      const std::size_t g = k.groups;
      c.add(ad::finite_diff_check(
                [g](Tape<double>& t, std::span<const Var> v) {
                  return reduce(t, ad::group_norm(t, v[0], g, v[1], v[2]));
                },
                in),
            "x" + shape_label(k.x) + " groups " + std::to_string(g));
    }
  });
  s.emplace_back("relu", [](Collector& c, Rng& rng) {
    for (const Shape& sh : {Shape{3, 4}, Shape{2, 3, 5}, Shape{1, 2, 3, 4}}) {
      c.add(ad::finite_diff_check([](Tape<double>& t, std::span<const Var> v) { return reduce(t, ad::relu(t, v[0])); },
                                  {rand_off_zero(sh, rng)}),
            "x" + shape_label(sh));
    }
  });
  s.emplace_back("sigmoid", [](Collector& c, Rng& rng) {
    for (const Shape& sh : {Shape{3, 4}, Shape{2, 3, 5}, Shape{7}}) {
      c.add(ad::finite_diff_check(
                [](Tape<double>& t, std::span<const Var> v) { return reduce(t, ad::sigmoid(t, v[0])); },
                {rand_tensor(sh, rng, -4.0, 4.0)}),
            "x" + shape_label(sh));
    }
  });
  s.emplace_back("linear", [](Collector& c, Rng& rng) {
    struct Case { std::size_t n, din, dout; };
    for (const Case& k : {Case{1, 3, 2}, Case{4, 5, 3}, Case{6, 2, 7}}) {
      std::vector<Tensor<double>> in = {rand_tensor({k.n, k.din}, rng), rand_tensor({k.dout, k.din}, rng),
                                        rand_tensor({k.dout}, rng)};
      c.add(ad::finite_diff_check(
                [](Tape<double>& t, std::span<const Var> v) { return reduce(t, ad::linear(t, v[0], v[1], v[2])); },
                in),
            "x" + shape_label(in[0].shape()) + " w" + shape_label(in[1].shape()));
    }
  });
  s.emplace_back("global_avg_pool", [](Collector& c, Rng& rng) {
    struct Case { Shape x; std::vector<std::size_t> axes; };
    for (const Case& k : {Case{{2, 3, 5}, {2}}, Case{{2, 2, 3, 4}, {2, 3}}, Case{{3, 4, 2}, {1}}}) {
      const auto axes = k.axes;
      c.add(ad::finite_diff_check(
                [axes](Tape<double>& t, std::span<const Var> v) {
                  return reduce(t, ad::global_avg_pool(t, v[0], axes));
                },
                {rand_tensor(k.x, rng)}),
            "x" + shape_label(k.x));
    }
  });
  s.emplace_back("avg_pool2x2", [](Collector& c, Rng& rng) {
    for (const Shape& sh : {Shape{1, 2, 4, 4}, Shape{2, 1, 5, 7}, Shape{1, 3, 3, 2}}) {
      c.add(ad::finite_diff_check(
                [](Tape<double>& t, std::span<const Var> v) { return reduce(t, ad::avg_pool2x2(t, v[0])); },
                {rand_tensor(sh, rng)}),
            "x" + shape_label(sh));
    }
  });
  s.emplace_back("log_softmax", [](Collector& c, Rng& rng) {
    for (const Shape& sh : {Shape{1, 3}, Shape{4, 5}, Shape{3, 8}}) {
      c.add(ad::finite_diff_check(
                [](Tape<double>& t, std::span<const Var> v) { return reduce(t, ad::log_softmax(t, v[0])); },
                {rand_tensor(sh, rng, -3.0, 3.0)}),
            "x" + shape_label(sh));
    }
  });
  s.emplace_back("concat_rows", [](Collector& c, Rng& rng) {
    struct Case { std::size_t na, nb, d; };
    for (const Case& k : {Case{1, 2, 3}, Case{3, 3, 4}, Case{2, 5, 1}}) {
      c.add(ad::finite_diff_check(
                [](Tape<double>& t, std::span<const Var> v) { return reduce(t, ad::concat_rows(t, v[0], v[1])); },
                {rand_tensor({k.na, k.d}, rng), rand_tensor({k.nb, k.d}, rng)}),
            "rows " + std::to_string(k.na) + "+" + std::to_string(k.nb));
    }
  });
  s.emplace_back("concat_cols", [](Collector& c, Rng& rng) {
    struct Case { std::size_t n, da, db; };
    for (const Case& k : {Case{1, 2, 3}, Case{3, 4, 4}, Case{2, 1, 5}}) {
      c.add(ad::finite_diff_check(
                [](Tape<double>& t, std::span<const Var> v) { return reduce(t, ad::concat_cols(t, v[0], v[1])); },
                {rand_tensor({k.n, k.da}, rng), rand_tensor({k.n, k.db}, rng)}),
            "cols " + std::to_string(k.da) + "+" + std::to_string(k.db));
    }
  });
  s.emplace_back("weighted_sum", [](Collector& c, Rng& rng) {
    for (const Shape& sh : {Shape{5}, Shape{2, 3}, Shape{2, 2, 3}}) {
      const Tensor<double> w = rand_tensor(sh, rng);
      c.add(ad::finite_diff_check(
                [w](Tape<double>& t, std::span<const Var> v) { return ad::weighted_sum(t, v[0], w); },
                {rand_tensor(sh, rng)}),
            "x" + shape_label(sh));
    }
  });
  s.emplace_back("sum_squares", [](Collector& c, Rng& rng) {
    for (const Shape& sh : {Shape{5}, Shape{2, 3}, Shape{2, 2, 3}}) {
      c.add(ad::finite_diff_check(
                [](Tape<double>& t, std::span<const Var> v) { return ad::sum_squares(t, v[0]); },
                {rand_tensor(sh, rng)}),
            "x" + shape_label(sh));
    }
  });
  s.emplace_back("bce_with_logits", [](Collector& c, Rng& rng) {
    for (const Shape& sh : {Shape{1, 3}, Shape{4, 8}, Shape{3, 5}}) {
      Tensor<double> targets(sh);
      for (double& v : targets.values()) v = static_cast<double>(uniform_int(rng, 0, 1));
      c.add(ad::finite_diff_check(
                [targets](Tape<double>& t, std::span<const Var> v) { return ad::bce_with_logits(t, v[0], targets); },
                {rand_tensor(sh, rng, -3.0, 3.0)}),
            "logits" + shape_label(sh));
    }
  });
  s.emplace_back("softmax_cross_entropy", [](Collector& c, Rng& rng) {
    for (const Shape& sh : {Shape{1, 3}, Shape{4, 8}, Shape{5, 2}}) {
      std::vector<std::size_t> targets(sh[0]);
      for (auto& y : targets) y = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<long>(sh[1]) - 1));
      c.add(ad::finite_diff_check(
                [targets](Tape<double>& t, std::span<const Var> v) {
                  return ad::softmax_cross_entropy(t, v[0], targets);
                },
                {rand_tensor(sh, rng, -3.0, 3.0)}),
            "logits" + shape_label(sh));
    }
  });
  s.emplace_back("nt_xent", [](Collector& c, Rng& rng) {
    struct Case { std::size_t n, d; double tau; };
    for (const Case& k : {Case{2, 4, 0.1}, Case{3, 16, 0.5}, Case{4, 5, 1.0}}) {
      const double tau = k.tau;
      c.add(ad::finite_diff_check(
                [tau](Tape<double>& t, std::span<const Var> v) { return ad::nt_xent(t, v[0], tau); },
                {rand_tensor({2 * k.n, k.d}, rng)}),
            "z" + shape_label({2 * k.n, k.d}) + " tau " + std::to_string(tau));
    }
  });
  s.emplace_back("encoder+projector+nt_xent", [](Collector& c, Rng& rng) {
    SynthSpec spec;
    spec.sample_rate = 8000;
    spec.clip_len_s = 0.6;
    spec.event_len_min_s = 0.1;
    spec.event_len_max_s = 0.4;
    spec.seed = rng();
    const Dataset data = synthesize_in_memory(spec, 0, 4);
    DspConfig dsp;
    dsp.n_mels = 24;
    const FeatureExtractor fx(dsp, spec.sample_rate);
    ModelConfig mc;
    mc.conv.n_stride2_layers = 2;
    mc.conv.channels = 8;
    mc.conv.groups = 2;
    mc.spec2d.n_blocks = 2;
    mc.spec2d.base_channels = 4;
    mc.spec2d.groups = 2;
    mc.projector.hidden_dim = 8;
    mc.projector.out_dim = 6;
    const FormatSpec pairs[] = {{Format::kWaveform, Format::kLogMel},
                                {Format::kWaveform, Format::kWaveform},
                                {Format::kLogMel, Format::kMfcc}};
    for (const FormatSpec& f : pairs) {
      ContrastiveModel<double> model(f, mc, rng());
      BatchSettings bs;
      bs.formats = f;
      bs.crop_len_s = 0.3;
      bs.policy.freq_shift_max = 4;
      const ViewBatch batch = assemble_batch(data, 3, bs, rng, fx);
      c.add(ad::finite_diff_check([&](Tape<double>& t) { return model.loss(t, batch, 0.5); }, model.params(), 1e-5,
                                  24),
            std::string(format_name(f.branch_a)) + "+" + std::string(format_name(f.branch_b)));
    }
  });
  return s;
}

}  // namespace

std::vector<std::string> gradient_suite_ops() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : build_suite()) names.push_back(name);
  return names;
}

std::vector<OpCheckReport> run_gradient_suite(std::uint64_t seed) {
  std::vector<OpCheckReport> out;
  std::uint64_t stream = 0;
  for (const auto& [name, fn] : build_suite()) {
    Collector c;
    c.report.op = name;
    Rng rng = stream_rng(seed, 0x9c00 + stream++);
    fn(c, rng);
    out.push_back(c.report);
  }
  return out;
}

}  // namespace mfcl
