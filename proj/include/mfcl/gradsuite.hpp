#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mfcl {

struct OpCheckReport {
  std::string op;
  std::size_t cases = 0;  // random shapes checked
  double max_rel_err = 0.0;
  std::string worst;      // case and input of the worst coordinate
  std::size_t kink_retries = 0;
};

inline constexpr double kGradTolerance = 1e-4;

/// Central-difference checks (f64, h = 1e-5) of every differentiable op and
/// of full encoder + projector + NT-Xent models, three random cases each.
/// One report per op, in a fixed order.
std::vector<OpCheckReport> run_gradient_suite(std::uint64_t seed = 0);

/// Names the suite reports, in order.
std::vector<std::string> gradient_suite_ops();

}  // namespace mfcl
