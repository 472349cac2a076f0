#pragma once

// Post-search circuit simplification: commutation reordering, rotation
// fusion and redundancy elimination, iterated to a fixpoint.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qas/circuit.hpp"

namespace qas {

enum class OptMode { conservative, aggressive };

const char* to_string(OptMode m);
OptMode opt_mode_from_string(const std::string& s);

struct OptConfig {
  OptMode mode = OptMode::conservative;
  double angle_epsilon = 1e-8;
  int max_passes = 50;

  void validate() const;
};

struct PassCounts {
  int reorders = 0;
  int fusions = 0;
  int eliminations = 0;
  std::size_t gate_count = 0;  // after the pass
};

struct OptReport {
  std::vector<PassCounts> passes;
  CircuitMetrics before;
  CircuitMetrics after;
  /// input = exp(i * global_phase) * output, in (-pi, pi].
  double global_phase = 0.0;
  bool converged = true;
  /// Unset when the circuit is too wide to check densely.
  std::optional<bool> equivalent;
};

/// True when the two gates are known to commute by one of the sound rules
/// (disjoint operands, both diagonal, same axis, CNOT control/target rules).
bool commutes(const GateInstance& a, const GateInstance& b);

/// One left-to-right sweep: each gate is moved left through commuting gates
/// to sit next to an earlier gate it can fuse or cancel with.
Circuit reorder_commute(const Circuit& c, const OptConfig& cfg = {}, int* moves = nullptr);

/// Merges wire-adjacent fixed rotations about the same axis. Aggressive mode
/// first rewrites X, Z, S and Sdg as rotations. Free-parameter gates are
/// never merged.
Circuit fuse_rotations(const Circuit& c, const OptConfig& cfg = {}, int* fusions = nullptr,
                       double* global_phase = nullptr);

/// Drops identities, near-zero fixed rotations and wire-adjacent inverse
/// pairs (S/Sdg, H/H, X/X, Z/Z, CNOT/CNOT on the same operands, CZ/CZ).
Circuit eliminate_redundant(const Circuit& c, const OptConfig& cfg = {}, int* eliminations = nullptr,
                            double* global_phase = nullptr);

std::pair<Circuit, OptReport> optimize_fixpoint(const Circuit& c, const OptConfig& cfg = {});

/// Compares the output states of both circuits, up to global phase, from
/// |0...0> and 16 random product states. An empty theta with free
/// parameters present draws random angles from `seed`.
bool verify_equivalence(const Circuit& a, const Circuit& b, std::span<const double> theta = {},
                        std::uint64_t seed = 0, double tol = 1e-9);

std::string opt_report_json(const OptReport& r);

}  // namespace qas
