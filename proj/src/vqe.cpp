#include "qas/vqe.hpp"

#include <cmath>
#include <filesystem>
#include <ostream>
#include <random>

#include <nlohmann/json.hpp>

#include "qas/adam.hpp"
#include "qas/random.hpp"

namespace qas {

MolecularProblem make_problem(std::string name, PauliSum h) {
  if (h.n_qubits > kMaxDenseQubits) {
    throw std::invalid_argument("problem '" + name + "' has " + std::to_string(h.n_qubits) + " qubits; at most " +
                                std::to_string(kMaxDenseQubits) + " are supported");
  }
  MolecularProblem p;
  p.name = std::move(name);
  p.n_qubits = h.n_qubits;
  p.reference_energy = exact_ground_energy(h);
  p.hamiltonian = std::move(h);
  return p;
}

MolecularProblem load_problem(const std::string& path) {
  return make_problem(std::filesystem::path(path).stem().string(), load_pauli_sum(path));
}

void VqeConfig::validate() const {
  if (max_iters < 1) throw std::invalid_argument("max_iters must be at least 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(init_range >= 0.0)) throw std::invalid_argument("init_range must be non-negative");
  if (noise) noise->validate();
}

VqeResult run_vqe(const MolecularProblem& problem, const Circuit& ansatz, const VqeConfig& cfg) {
  cfg.validate();
  if (ansatz.n_qubits() != problem.n_qubits) {
    throw std::invalid_argument("ansatz has " + std::to_string(ansatz.n_qubits()) + " qubits but the problem needs " +
                                std::to_string(problem.n_qubits));
  }
  const auto n = static_cast<std::size_t>(ansatz.n_params());
  std::vector<double> theta(n, 0.0);
  switch (cfg.init) {
    case ThetaInit::small_uniform: {
      std::mt19937_64 rng(derive_seed(cfg.seed, {0}));
      std::uniform_real_distribution<double> u(-cfg.init_range, cfg.init_range);
      for (auto& t : theta) t = u(rng);
      break;
    }
    case ThetaInit::zeros: break;
    case ThetaInit::given:
      if (cfg.initial_theta.size() != n) {
        throw std::invalid_argument("initial_theta has " + std::to_string(cfg.initial_theta.size()) +
                                    " entries but the ansatz has " + std::to_string(n) + " parameters");
      }
      theta = cfg.initial_theta;
      break;
  }

  const NoiseProfile* noise = cfg.noise ? &*cfg.noise : nullptr;
  Adam opt(n, AdamConfig{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps});
  VqeResult r;
  r.trace.reserve(static_cast<std::size_t>(cfg.max_iters) + 1);
  for (int it = 0; it <= cfg.max_iters; ++it) {
    EvalPolicy pol = cfg.eval;
    pol.seed = derive_seed(cfg.seed, {1, static_cast<std::uint64_t>(it)});
    const Estimate e = estimate_expectation(ansatz, theta, problem.hamiltonian, noise, pol);
    if (!std::isfinite(e.mean)) throw VqeDiverged("energy became non-finite at iteration " + std::to_string(it));
    r.trace.push_back(e.mean);
    r.trace_stderr.push_back(e.stderr_);
    if (it == 0 || e.mean < r.best_energy) {
      r.best_energy = e.mean;
      r.best_stderr = e.stderr_;
      r.best_theta = theta;
      r.best_iter = it;
    }
    if (it == cfg.max_iters || n == 0) continue;
    pol.seed = derive_seed(cfg.seed, {2, static_cast<std::uint64_t>(it)});
    const auto g = param_shift_grad(ansatz, theta, problem.hamiltonian, noise, pol);
    opt.step(theta, g);
  }
  r.theta = theta;
  return r;
}

EnergyError energy_error(const VqeResult& result, const MolecularProblem& problem) {
  EnergyError e;
  e.delta = std::abs(result.best_energy - problem.reference_energy);
  e.chemical_quality = e.delta < 0.1;
  return e;
}

double surrogate_accuracy(const VqeResult& result, const MolecularProblem& problem) {
  if (problem.reference_energy == 0.0) return 0.0;
  return std::max(0.0, 1.0 - energy_error(result, problem).delta / std::abs(problem.reference_energy));
}

void write_vqe_trace_csv(std::ostream& os, const VqeResult& r, const std::string& manifest_ref) {
  if (!manifest_ref.empty()) os << "# manifest=" << manifest_ref << "\n";
  os << "iteration,energy,stderr\n";
  for (std::size_t i = 0; i < r.trace.size(); ++i)
    os << i << ',' << format_double(r.trace[i]) << ',' << format_double(r.trace_stderr[i]) << "\n";
}

std::string vqe_report_json(const VqeResult& r, const MolecularProblem& p) {
  const EnergyError e = energy_error(r, p);
  nlohmann::json j = {{"problem", p.name},
                      {"n_qubits", p.n_qubits},
                      {"reference_energy", p.reference_energy},
                      {"best_energy", r.best_energy},
                      {"best_stderr", r.best_stderr},
                      {"best_iteration", r.best_iter},
                      {"delta_e", e.delta},
                      {"below_0_1_hartree", e.chemical_quality},
                      {"surrogate_accuracy", surrogate_accuracy(r, p)},
                      {"best_theta", r.best_theta}};
  return j.dump(2);
}

}  // namespace qas
