#pragma once

// Gradient and invariant suites run by `qas check` and the acceptance binary.

#include <cstdint>
#include <string>
#include <vector>

#include "qas/encoder.hpp"

namespace qas {

struct CheckLine {
  std::string name;
  bool passed = false;
  double value = 0.0;      // measured deviation or failure count
  double tolerance = 0.0;
  std::string detail;
};

/// One finite-difference check per differentiable primitive.
std::vector<CheckLine> primitive_gradient_checks(std::uint64_t seed = 1, double tolerance = 1e-5);

/// Finite-difference check of a full encoder forward pass (dropout mask
/// fixed) contracted with random weights.
CheckLine encoder_gradient_check(const EncoderConfig& cfg, std::uint64_t seed = 1, double tolerance = 1e-3);

/// Quick randomized invariants: state norm, optimizer soundness, QUBO/Ising
/// energy agreement, noiseless PST.
std::vector<CheckLine> invariant_checks(std::uint64_t seed = 1);

}  // namespace qas
