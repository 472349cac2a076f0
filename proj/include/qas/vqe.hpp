#pragma once

// Variational energy minimization of an ansatz against a Pauli Hamiltonian.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qas/circuit.hpp"
#include "qas/simulator.hpp"

namespace qas {

struct MolecularProblem {
  std::string name;
  PauliSum hamiltonian;
  int n_qubits = 0;
  double reference_energy = 0.0;
};

MolecularProblem make_problem(std::string name, PauliSum h);
/// Reads a Hamiltonian file and solves for its exact ground energy.
MolecularProblem load_problem(const std::string& path);

enum class ThetaInit { small_uniform, zeros, given };

struct VqeConfig {
  int max_iters = 300;
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  ThetaInit init = ThetaInit::small_uniform;
  double init_range = 0.1;          // small_uniform draws from [-init_range, init_range]
  std::vector<double> initial_theta;  // used by ThetaInit::given
  std::optional<NoiseProfile> noise;
  EvalPolicy eval;                  // trajectories / shots when noise is present
  std::uint64_t seed = 0;

  void validate() const;
};

struct VqeResult {
  std::vector<double> best_theta;
  double best_energy = 0.0;
  double best_stderr = 0.0;
  int best_iter = 0;
  std::vector<double> theta;   // after the last update
  std::vector<double> trace;   // energy of theta_0 .. theta_max_iters
  std::vector<double> trace_stderr;
};

class VqeDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

VqeResult run_vqe(const MolecularProblem& problem, const Circuit& ansatz, const VqeConfig& cfg);

struct EnergyError {
  double delta = 0.0;
  bool chemical_quality = false;  // delta < 0.1 Ha
};

EnergyError energy_error(const VqeResult& result, const MolecularProblem& problem);

/// max(0, 1 - delta / |E_ref|). A convenience score, not a standard metric.
double surrogate_accuracy(const VqeResult& result, const MolecularProblem& problem);

void write_vqe_trace_csv(std::ostream& os, const VqeResult& r, const std::string& manifest_ref = "");
std::string vqe_report_json(const VqeResult& r, const MolecularProblem& p);

}  // namespace qas
