#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mfcl/autodiff.hpp"

namespace mfcl::ad {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_input;     // name of the input holding the worst coordinate
  std::size_t worst_index = 0;  // flat index within that input
  std::size_t coords_checked = 0;
  std::size_t kink_retries = 0;  // probes redone with a smaller step after a ReLU changed sign
};

/// |a - n| / max(1, |a|, |n|).
double grad_rel_error(double analytic, double numeric);

/// Central differences of a plain scalar function against a supplied gradient.
GradCheckResult finite_diff_check(const std::function<double(std::span<const double>)>& fn,
                                  std::span<const double> x, std::span<const double> analytic_grad,
                                  double h = 1e-5);

/// Builds a scalar loss on the tape from the bound inputs.
using LossBuilder = std::function<Var(Tape<double>&, std::span<const Var>)>;

/// Checks d loss / d inputs for tensors fed to `fn`. At most `max_coords`
/// coordinates per input are probed (evenly strided); 0 probes all.
GradCheckResult finite_diff_check(const LossBuilder& fn, const std::vector<Tensor<double>>& inputs,
                                  double h = 1e-5, std::size_t max_coords = 0);

/// Checks d loss / d parameters for a loss computed from `params`. When a
/// probe flips the sign of any ReLU input, that coordinate is re-probed with
/// the step cut tenfold (at most three times), since the difference quotient
/// then straddles a kink.
GradCheckResult finite_diff_check(const std::function<Var(Tape<double>&)>& fn, ParameterSet<double>& params,
                                  double h = 1e-5, std::size_t max_coords = 0);

}  // namespace mfcl::ad
