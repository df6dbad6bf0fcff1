#include "mfcl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mfcl::ad {

double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

namespace {

void note(GradCheckResult& r, double err, const std::string& name, std::size_t index) {
  ++r.coords_checked;
  if (r.coords_checked == 1 || err > r.max_rel_err) {
    r.max_rel_err = err;
    r.worst_input = name;
    r.worst_index = index;
  }
}

std::vector<std::size_t> probe_indices(std::size_t n, std::size_t max_coords) {
  std::vector<std::size_t> idx;
  if (max_coords == 0 || max_coords >= n) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    return idx;
  }
  // Evenly strided, always including the first and last coordinate.
  for (std::size_t k = 0; k < max_coords; ++k) idx.push_back(k * (n - 1) / (max_coords - 1));
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

// Hash of the sign of every ReLU input on the tape.
std::uint64_t relu_pattern(const Tape<double>& tape) {
  std::uint64_t hsh = 0xcbf29ce484222325ULL;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    if (std::strcmp(tape.op_name(Var{id}), "relu") != 0) continue;
    for (double v : tape.value(Var{tape.inputs_of(id).at(0)}).values()) {
      hsh = (hsh ^ (v > 0.0 ? 1u : 0u)) * 0x100000001b3ULL;
    }
  }
  return hsh;
}

constexpr int kMaxKinkRetries = 3;

}  // namespace

GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& fn,
                                  std::span<const double> x, std::span<const double> analytic_grad, double h) {
  if (x.size() != analytic_grad.size()) throw ShapeError("finite_diff_check: gradient size differs from input size");
  GradCheckResult r;
  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = fn(probe);
    probe[i] = x[i] - h;
    const double down = fn(probe);
    probe[i] = x[i];
    note(r, grad_rel_error(analytic_grad[i], (up - down) / (2.0 * h)), "x", i);
  }
  return r;
}

GradCheckResult finite_diff_check(const LossBuilder& fn, const std::vector<Tensor<double>>& inputs, double h,
                                  std::size_t max_coords) {
  ParameterSet<double> params;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    params.add("input" + std::to_string(i), inputs[i].shape()).value = inputs[i];
  }
  auto all = params.all();
  return finite_diff_check(
      [&](Tape<double>& tape) {
        std::vector<Var> vars;
        for (auto* p : all) vars.push_back(tape.parameter(*p));
        return fn(tape, vars);
      },
      params, h, max_coords);
}

GradCheckResult finite_diff_check(const std::function<Var(Tape<double>&)>& fn, ParameterSet<double>& params,
                                  double h, std::size_t max_coords) {
  params.zero_grad();
  std::uint64_t base_pattern = 0;
  {
    Tape<double> tape;
    const Var loss = fn(tape);
    base_pattern = relu_pattern(tape);
    tape.backward(loss);
  }
  auto eval = [&](std::uint64_t& pattern) {
    Tape<double> tape;
    const double v = tape.value(fn(tape)).item();
    pattern = relu_pattern(tape);
    return v;
  };
  GradCheckResult r;
  for (auto* p : params.all()) {
    for (std::size_t i : probe_indices(p->value.numel(), max_coords)) {
      const double orig = p->value[i];
      double step = h;
      double numeric = 0.0;
      for (int attempt = 0;; ++attempt) {
        std::uint64_t pat_up = 0, pat_down = 0;
        p->value[i] = orig + step;
        const double up = eval(pat_up);
        p->value[i] = orig - step;
        const double down = eval(pat_down);
        p->value[i] = orig;
        numeric = (up - down) / (2.0 * step);
        if ((pat_up == base_pattern && pat_down == base_pattern) || attempt == kMaxKinkRetries) break;
        ++r.kink_retries;
        step *= 0.1;
      }
      note(r, grad_rel_error(p->grad[i], numeric), p->name, i);
    }
  }
  params.zero_grad();
  return r;
}

}  // namespace mfcl::ad
