#pragma once

// Dense statevector simulation with stochastic Pauli trajectories.

#include <array>
#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qas/circuit.hpp"

namespace qas {

using cplx = std::complex<double>;

inline constexpr int kMaxSimQubits = 12;
inline constexpr int kMaxDenseQubits = 10;

/// Qubit q is bit q of the basis-state index.
class StateVector {
 public:
  explicit StateVector(int n_qubits);

  int n_qubits() const { return n_qubits_; }
  std::size_t dim() const { return amps_.size(); }
  std::span<const cplx> amplitudes() const { return amps_; }
  std::span<cplx> amplitudes() { return amps_; }
  const cplx& operator[](std::size_t i) const { return amps_[i]; }

  void apply(const GateInstance& g, double angle);
  void apply_1q(int q, const std::array<cplx, 4>& m);
  void apply_pauli(int q, char pauli);
  double norm() const;
  /// Per-qubit <Z_q>.
  std::vector<double> z_expectations() const;
  std::vector<double> probabilities() const;

 private:
  int n_qubits_;
  std::vector<cplx> amps_;
};

cplx inner_product(const StateVector& a, const StateVector& b);

/// Pauli operator stored as bit masks: X on x_mask, Z on z_mask, Y on both.
struct PauliString {
  double coefficient = 0.0;
  std::uint32_t x_mask = 0;
  std::uint32_t z_mask = 0;

  char op_at(int q) const;
  bool is_identity() const { return x_mask == 0 && z_mask == 0; }
  bool is_diagonal() const { return x_mask == 0; }
  std::map<int, char> ops() const;
  static PauliString from_word(double coefficient, std::string_view word);
  std::string word(int n_qubits) const;
};

struct PauliSum {
  int n_qubits = 1;
  std::vector<PauliString> terms;

  bool is_diagonal() const;
};

/// One term per line: `coefficient WORD`, e.g. `0.17 ZIZI`.
PauliSum parse_pauli_sum(std::string_view text);
PauliSum load_pauli_sum(const std::string& path);
std::string serialize_pauli_sum(const PauliSum& h);

struct NoiseProfile {
  std::string name = "noiseless";
  std::array<double, 3> p1{0.0, 0.0, 0.0};  // (px, py, pz) after each 1q gate
  std::array<double, 3> p2{0.0, 0.0, 0.0};  // per operand after each 2q gate
  std::vector<double> readout_flip;         // one entry applies to every qubit

  double readout_for(int q) const;
  bool gate_noiseless() const;
  bool noiseless() const;
  void validate() const;

  static NoiseProfile depolarizing(double p1, double p2 = 0.0, double readout = 0.0);
};

NoiseProfile parse_noise_profile(std::string_view json_text);
NoiseProfile load_noise_profile(const std::string& path);
std::string noise_profile_to_json(const NoiseProfile& p);

struct ShotResult {
  std::map<std::string, long> counts;  // character q is qubit q
  long total_shots = 0;

  double frequency(const std::string& bits) const;
};

std::string bitstring(std::uint64_t index, int n_qubits);

/// Noiseless when `noise` is null or gate-noiseless; otherwise one Pauli
/// trajectory drawn from `seed`.
StateVector run(const Circuit& c, std::span<const double> theta, const NoiseProfile* noise = nullptr,
                std::uint64_t seed = 0);
/// Trajectory variant that reuses a caller-owned generator.
StateVector run(const Circuit& c, std::span<const double> theta, const NoiseProfile* noise, std::mt19937_64& rng);

double expectation(const StateVector& state, const PauliSum& obs);
double expectation(const StateVector& state, const PauliString& term);

ShotResult sample(const StateVector& state, long shots, std::span<const double> readout_flip, std::uint64_t seed);

/// How an observable is estimated: exact expectations (shots == 0) averaged
/// over `trajectories` when noise is present, or sampled shots.
struct EvalPolicy {
  long shots = 0;
  int trajectories = 1;
  std::uint64_t seed = 0;
};

struct Estimate {
  double mean = 0.0;
  double stderr_ = 0.0;
};

Estimate estimate_expectation(const Circuit& c, std::span<const double> theta, const PauliSum& obs,
                              const NoiseProfile* noise, const EvalPolicy& policy);

/// Parameter-shift gradient. Slots shared by several gates or carrying a
/// scale get the chain-rule sum of per-gate shifts.
std::vector<double> param_shift_grad(const Circuit& c, std::span<const double> theta, const PauliSum& obs,
                                     const NoiseProfile* noise = nullptr, const EvalPolicy& policy = {});

/// Minimum eigenvalue of the dense Hamiltonian (n <= 10).
double exact_ground_energy(const PauliSum& obs);

}  // namespace qas
