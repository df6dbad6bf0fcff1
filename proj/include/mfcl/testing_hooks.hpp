#pragma once

namespace mfcl::ad::testing {

/// Doubles every convolution weight gradient while on. Exists so the
/// gradient-check harness can prove it catches a broken backward pass.
void inject_conv_grad_fault(bool on);
bool conv_grad_fault();

}  // namespace mfcl::ad::testing
