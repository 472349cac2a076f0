#pragma once

// Gate-level circuit IR, hardware-aware operation pools and circuit metrics.

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qas {

enum class GateKind : std::uint8_t { I, X, Z, H, S, Sdg, Rx, Ry, Rz, CNOT, CZ, Rzz };

inline constexpr std::array<GateKind, 12> kAllGateKinds = {
    GateKind::I,  GateKind::X,  GateKind::Z,  GateKind::H,    GateKind::S,  GateKind::Sdg,
    GateKind::Rx, GateKind::Ry, GateKind::Rz, GateKind::CNOT, GateKind::CZ, GateKind::Rzz};

struct GateInfo {
  std::string_view name;  // lowercase text-format name
  int arity;
  bool parametric;
  int param_count;
};

const GateInfo& gate_info(GateKind kind);
std::optional<GateKind> gate_kind_from_name(std::string_view name);

/// Diagonal in the computational basis (I, Z, S, Sdg, Rz, CZ, Rzz).
bool is_diagonal(GateKind kind);
/// Rotation generated by a Pauli operator; the parameter-shift rule applies.
bool is_pauli_rotation(GateKind kind);

/// One placed gate. Parametric gates take their angle either from a fixed
/// value or from `scale * theta[slot]`.
struct GateInstance {
  GateKind kind = GateKind::I;
  std::array<int, 2> qubits{-1, -1};
  int slot = -1;
  double angle = 0.0;
  double scale = 1.0;

  int arity() const { return gate_info(kind).arity; }
  bool parametric() const { return gate_info(kind).parametric; }
  bool has_free_param() const { return slot >= 0; }
  bool acts_on(int q) const { return qubits[0] == q || (arity() == 2 && qubits[1] == q); }
  bool shares_qubit(const GateInstance& other) const;
  double resolve_angle(std::span<const double> theta) const;

  friend bool operator==(const GateInstance&, const GateInstance&) = default;
};

namespace gate {
GateInstance fixed(GateKind kind, int q0, int q1 = -1);
GateInstance rotation(GateKind kind, double angle, int q0, int q1 = -1);
GateInstance free_rotation(GateKind kind, int slot, int q0, int q1 = -1, double scale = 1.0);
}  // namespace gate

class Circuit {
 public:
  Circuit() = default;
  /// Validates operands and parameter slots; throws std::invalid_argument.
  Circuit(int n_qubits, std::vector<GateInstance> gates, int n_params = -1);

  int n_qubits() const { return n_qubits_; }
  int n_params() const { return n_params_; }
  std::size_t size() const { return gates_.size(); }
  bool empty() const { return gates_.empty(); }
  const std::vector<GateInstance>& gates() const { return gates_; }
  const GateInstance& operator[](std::size_t i) const { return gates_[i]; }

  friend bool operator==(const Circuit&, const Circuit&) = default;

 private:
  int n_qubits_ = 1;
  std::vector<GateInstance> gates_;
  int n_params_ = 0;
};

struct CircuitMetrics {
  std::size_t gate_count = 0;
  std::size_t depth = 0;
};

CircuitMetrics circuit_metrics(const Circuit& c);

/// Reversed circuit of gate inverses with every angle bound from theta.
Circuit inverse_circuit(const Circuit& c, std::span<const double> theta);

/// Replaces every free slot by its resolved angle.
Circuit bind_parameters(const Circuit& c, std::span<const double> theta);

/// Gives each parametric gate its own free slot; returns the circuit and the
/// angles that reproduce the input.
std::pair<Circuit, std::vector<double>> parameterize(const Circuit& c);

struct DeviceTopology {
  int n_qubits = 1;
  std::set<std::pair<int, int>> coupling;  // stored as (min, max)
  std::set<GateKind> native_1q;
  std::set<GateKind> native_2q;

  static DeviceTopology line(int n, std::set<GateKind> native_1q, std::set<GateKind> native_2q);
  static DeviceTopology all_to_all(int n, std::set<GateKind> native_1q, std::set<GateKind> native_2q);
  void validate() const;
};

struct PoolEntry {
  GateKind kind;
  std::array<int, 2> qubits{-1, -1};
  friend bool operator==(const PoolEntry&, const PoolEntry&) = default;
};

struct OperationPool {
  std::vector<PoolEntry> entries;
  std::size_t size() const { return entries.size(); }
};

OperationPool build_pool(const DeviceTopology& topology, const std::set<GateKind>& kinds);

/// One gate per selected pool index, in order; parametric entries receive
/// fresh consecutive slots.
Circuit realize_circuit(const OperationPool& pool, std::span<const int> selection, int n_qubits);

std::string describe(const PoolEntry& entry);

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what);
  int line() const { return line_; }

 private:
  int line_;
};

/// Line format: header `qubits N`, then `name(angle) q0 [q1]`. Free slots
/// are written `$k` or `s*$k`. `#` starts a comment.
Circuit parse_circuit(std::string_view text);
std::string serialize_circuit(const Circuit& c);

std::string format_double(double v);

}  // namespace qas
