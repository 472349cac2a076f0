#include "qas/simulator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "qas/random.hpp"

namespace qas {

namespace {

constexpr cplx kI{0.0, 1.0};

std::array<cplx, 4> rotation_matrix(GateKind kind, double angle) {
  const double c = std::cos(angle / 2);
  const double s = std::sin(angle / 2);
  switch (kind) {
    case GateKind::Rx:
      return {cplx{c, 0}, cplx{0, -s}, cplx{0, -s}, cplx{c, 0}};
    case GateKind::Ry:
      return {cplx{c, 0}, cplx{-s, 0}, cplx{s, 0}, cplx{c, 0}};
    default:
      throw std::logic_error("rotation_matrix: not a single-qubit rotation");
  }
}

void check_dims(const Circuit& c, std::span<const double> theta) {
  if (theta.size() != static_cast<std::size_t>(c.n_params())) {
    throw std::invalid_argument("theta has length " + std::to_string(theta.size()) + " but circuit has " +
                                std::to_string(c.n_params()) + " parameters");
  }
  if (c.n_qubits() > kMaxSimQubits) {
    throw std::invalid_argument("circuit exceeds the simulator limit of " + std::to_string(kMaxSimQubits) +
                                " qubits");
  }
}

void inject(StateVector& psi, int q, const std::array<double, 3>& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double u = u01(rng);
  if (u < p[0]) {
    psi.apply_pauli(q, 'X');
  } else if (u < p[0] + p[1]) {
    psi.apply_pauli(q, 'Y');
  } else if (u < p[0] + p[1] + p[2]) {
    psi.apply_pauli(q, 'Z');
  }
}

double readout_attenuation(const PauliString& t, const NoiseProfile* noise, int n) {
  if (noise == nullptr || noise->readout_flip.empty()) return 1.0;
  double f = 1.0;
  const std::uint32_t support = t.x_mask | t.z_mask;
  for (int q = 0; q < n; ++q) {
    if ((support >> q) & 1U) f *= 1.0 - 2.0 * noise->readout_for(q);
  }
  return f;
}

}  // namespace

StateVector::StateVector(int n_qubits) : n_qubits_(n_qubits) {
  if (n_qubits < 1 || n_qubits > kMaxSimQubits) {
    throw std::invalid_argument("state vector qubit count must be in [1, " + std::to_string(kMaxSimQubits) + "]");
  }
  amps_.assign(std::size_t{1} << n_qubits, cplx{0.0, 0.0});
  amps_[0] = 1.0;
}

void StateVector::apply_1q(int q, const std::array<cplx, 4>& m) {
  const std::size_t bit = std::size_t{1} << q;
  for (std::size_t i = 0; i < amps_.size(); ++i) {
    if (i & bit) continue;
    const cplx a0 = amps_[i];
    const cplx a1 = amps_[i | bit];
    amps_[i] = m[0] * a0 + m[1] * a1;
    amps_[i | bit] = m[2] * a0 + m[3] * a1;
  }
}

void StateVector::apply_pauli(int q, char pauli) {
  const std::size_t bit = std::size_t{1} << q;
  switch (pauli) {
    case 'X':
      for (std::size_t i = 0; i < amps_.size(); ++i)
        if (!(i & bit)) std::swap(amps_[i], amps_[i | bit]);
      break;
    case 'Y':
      for (std::size_t i = 0; i < amps_.size(); ++i) {
        if (i & bit) continue;
        const cplx a0 = amps_[i];
        amps_[i] = -kI * amps_[i | bit];
        amps_[i | bit] = kI * a0;
      }
      break;
    case 'Z':
      for (std::size_t i = 0; i < amps_.size(); ++i)
        if (i & bit) amps_[i] = -amps_[i];
      break;
    default:
      throw std::invalid_argument(std::string("unknown Pauli '") + pauli + "'");
  }
}

void StateVector::apply(const GateInstance& g, double angle) {
  const int q0 = g.qubits[0];
  const int q1 = g.qubits[1];
  if (q0 < 0 || q0 >= n_qubits_ || (g.arity() == 2 && (q1 < 0 || q1 >= n_qubits_))) {
    throw std::invalid_argument("gate operand outside the state vector");
  }
  const std::size_t b0 = std::size_t{1} << q0;
  const std::size_t b1 = g.arity() == 2 ? std::size_t{1} << q1 : 0;
  const double r = 1.0 / std::numbers::sqrt2;
  switch (g.kind) {
    case GateKind::I:
      break;
    case GateKind::X:
      apply_pauli(q0, 'X');
      break;
    case GateKind::Z:
      apply_pauli(q0, 'Z');
      break;
    case GateKind::H:
      apply_1q(q0, {cplx{r, 0}, cplx{r, 0}, cplx{r, 0}, cplx{-r, 0}});
      break;
    case GateKind::S:
      for (std::size_t i = 0; i < amps_.size(); ++i)
        if (i & b0) amps_[i] *= kI;
      break;
    case GateKind::Sdg:
      for (std::size_t i = 0; i < amps_.size(); ++i)
        if (i & b0) amps_[i] *= -kI;
      break;
    case GateKind::Rx:
    case GateKind::Ry:
      apply_1q(q0, rotation_matrix(g.kind, angle));
      break;
    case GateKind::Rz: {
      const cplx lo = std::polar(1.0, -angle / 2);
      const cplx hi = std::polar(1.0, angle / 2);
      for (std::size_t i = 0; i < amps_.size(); ++i) amps_[i] *= (i & b0) ? hi : lo;
      break;
    }
    case GateKind::CNOT:
      for (std::size_t i = 0; i < amps_.size(); ++i)
        if ((i & b0) && !(i & b1)) std::swap(amps_[i], amps_[i | b1]);
      break;
    case GateKind::CZ:
      for (std::size_t i = 0; i < amps_.size(); ++i)
        if ((i & b0) && (i & b1)) amps_[i] = -amps_[i];
      break;
    case GateKind::Rzz: {
      const cplx same = std::polar(1.0, -angle / 2);
      const cplx diff = std::polar(1.0, angle / 2);
      for (std::size_t i = 0; i < amps_.size(); ++i) amps_[i] *= (!(i & b0) == !(i & b1)) ? same : diff;
      break;
    }
  }
}

double StateVector::norm() const {
  double s = 0.0;
  for (const auto& a : amps_) s += std::norm(a);
  return std::sqrt(s);
}

std::vector<double> StateVector::z_expectations() const {
  std::vector<double> z(static_cast<std::size_t>(n_qubits_), 0.0);
  for (std::size_t i = 0; i < amps_.size(); ++i) {
    const double p = std::norm(amps_[i]);
    for (int q = 0; q < n_qubits_; ++q) z[static_cast<std::size_t>(q)] += ((i >> q) & 1U) ? -p : p;
  }
  return z;
}

std::vector<double> StateVector::probabilities() const {
  std::vector<double> p(amps_.size());
  for (std::size_t i = 0; i < amps_.size(); ++i) p[i] = std::norm(amps_[i]);
  return p;
}

cplx inner_product(const StateVector& a, const StateVector& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("inner_product: dimension mismatch");
  cplx s{0.0, 0.0};
  for (std::size_t i = 0; i < a.dim(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

char PauliString::op_at(int q) const {
  const bool x = (x_mask >> q) & 1U;
  const bool z = (z_mask >> q) & 1U;
  if (x && z) return 'Y';
  if (x) return 'X';
  if (z) return 'Z';
  return 'I';
}

std::map<int, char> PauliString::ops() const {
  std::map<int, char> m;
  for (int q = 0; q < 32; ++q) {
    const char c = op_at(q);
    if (c != 'I') m[q] = c;
  }
  return m;
}

PauliString PauliString::from_word(double coefficient, std::string_view word) {
  if (word.size() > 32) throw std::invalid_argument("Pauli word longer than 32 qubits");
  PauliString p;
  p.coefficient = coefficient;
  for (std::size_t q = 0; q < word.size(); ++q) {
    const std::uint32_t bit = 1U << q;
    switch (std::toupper(static_cast<unsigned char>(word[q]))) {
      case 'I':
        break;
      case 'X':
        p.x_mask |= bit;
        break;
      case 'Y':
        p.x_mask |= bit;
        p.z_mask |= bit;
        break;
      case 'Z':
        p.z_mask |= bit;
        break;
      default:
        throw std::invalid_argument("invalid Pauli character '" + std::string(1, word[q]) + "'");
    }
  }
  return p;
}

std::string PauliString::word(int n_qubits) const {
  std::string w;
  for (int q = 0; q < n_qubits; ++q) w.push_back(op_at(q));
  return w;
}

bool PauliSum::is_diagonal() const {
  return std::all_of(terms.begin(), terms.end(), [](const PauliString& t) { return t.is_diagonal(); });
}

PauliSum parse_pauli_sum(std::string_view text) {
  PauliSum h;
  int n = -1;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string coeff_tok, word, extra;
    if (!(ls >> coeff_tok)) continue;
    if (!(ls >> word) || (ls >> extra)) {
      throw ParseError(line_no, "expected 'coefficient pauli_word'");
    }
    char* end = nullptr;
    const double coeff = std::strtod(coeff_tok.c_str(), &end);
    if (end != coeff_tok.c_str() + coeff_tok.size() || !std::isfinite(coeff)) {
      throw ParseError(line_no, "cannot parse coefficient '" + coeff_tok + "'");
    }
    if (n < 0) n = static_cast<int>(word.size());
    if (static_cast<int>(word.size()) != n) {
      throw ParseError(line_no, "Pauli word length " + std::to_string(word.size()) + " differs from " +
                                    std::to_string(n));
    }
    try {
      h.terms.push_back(PauliString::from_word(coeff, word));
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (n <= 0) throw ParseError(line_no, "Hamiltonian has no terms");
  h.n_qubits = n;
  return h;
}

PauliSum load_pauli_sum(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open Hamiltonian file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_pauli_sum(ss.str());
}

std::string serialize_pauli_sum(const PauliSum& h) {
  std::string out;
  for (const auto& t : h.terms) out += format_double(t.coefficient) + " " + t.word(h.n_qubits) + "\n";
  return out;
}

double NoiseProfile::readout_for(int q) const {
  if (readout_flip.empty()) return 0.0;
  if (readout_flip.size() == 1) return readout_flip[0];
  if (q < 0 || static_cast<std::size_t>(q) >= readout_flip.size()) {
    throw std::out_of_range("noise profile '" + name + "' has no readout entry for qubit " + std::to_string(q));
  }
  return readout_flip[static_cast<std::size_t>(q)];
}

bool NoiseProfile::gate_noiseless() const {
  auto zero = [](const std::array<double, 3>& p) { return p[0] == 0.0 && p[1] == 0.0 && p[2] == 0.0; };
  return zero(p1) && zero(p2);
}

bool NoiseProfile::noiseless() const {
  return gate_noiseless() && std::all_of(readout_flip.begin(), readout_flip.end(), [](double p) { return p == 0.0; });
}

void NoiseProfile::validate() const {
  auto check = [this](const std::array<double, 3>& p, const char* what) {
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("noise profile '" + name + "': " + what + " out of [0,1]");
      sum += v;
    }
    if (sum > 1.0 + 1e-12) throw std::invalid_argument("noise profile '" + name + "': " + what + " sums above 1");
  };
  check(p1, "p1");
  check(p2, "p2");
  for (double r : readout_flip) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("noise profile '" + name + "': readout_flip out of [0,1]");
  }
}

NoiseProfile NoiseProfile::depolarizing(double p1, double p2, double readout) {
  NoiseProfile p;
  p.name = "depolarizing";
  p.p1 = {p1 / 3, p1 / 3, p1 / 3};
  p.p2 = {p2 / 3, p2 / 3, p2 / 3};
  if (readout > 0.0) p.readout_flip = {readout};
  p.validate();
  return p;
}

NoiseProfile parse_noise_profile(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("noise profile is not valid JSON: ") + e.what());
  }
  NoiseProfile p;
  try {
    p.name = j.value("name", std::string("unnamed"));
    if (j.contains("p1")) p.p1 = j.at("p1").get<std::array<double, 3>>();
    if (j.contains("p2")) p.p2 = j.at("p2").get<std::array<double, 3>>();
    if (j.contains("readout_flip")) {
      const auto& r = j.at("readout_flip");
      if (r.is_number()) {
        p.readout_flip = {r.get<double>()};
      } else {
        p.readout_flip = r.get<std::vector<double>>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("noise profile has a malformed field: ") + e.what());
  }
  p.validate();
  return p;
}

NoiseProfile load_noise_profile(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open noise profile '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_noise_profile(ss.str());
}

std::string noise_profile_to_json(const NoiseProfile& p) {
  nlohmann::json j;
  j["name"] = p.name;
  j["p1"] = p.p1;
  j["p2"] = p.p2;
  j["readout_flip"] = p.readout_flip;
  return j.dump(2);
}

double ShotResult::frequency(const std::string& bits) const {
  if (total_shots == 0) return 0.0;
  auto it = counts.find(bits);
  return it == counts.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(total_shots);
}

std::string bitstring(std::uint64_t index, int n_qubits) {
  std::string s(static_cast<std::size_t>(n_qubits), '0');
  for (int q = 0; q < n_qubits; ++q)
    if ((index >> q) & 1U) s[static_cast<std::size_t>(q)] = '1';
  return s;
}

StateVector run(const Circuit& c, std::span<const double> theta, const NoiseProfile* noise, std::mt19937_64& rng) {
  check_dims(c, theta);
  StateVector psi(c.n_qubits());
  const bool noisy = noise != nullptr && !noise->gate_noiseless();
  for (const auto& g : c.gates()) {
    psi.apply(g, g.parametric() ? g.resolve_angle(theta) : 0.0);
    if (noisy) {
      const auto& p = g.arity() == 1 ? noise->p1 : noise->p2;
      for (int k = 0; k < g.arity(); ++k) inject(psi, g.qubits[k], p, rng);
    }
  }
  if (std::abs(psi.norm() - 1.0) > 1e-8) {
    throw std::runtime_error("state norm drifted to " + std::to_string(psi.norm()));
  }
  return psi;
}

StateVector run(const Circuit& c, std::span<const double> theta, const NoiseProfile* noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return run(c, theta, noise, rng);
}

double expectation(const StateVector& state, const PauliString& t) {
  const auto amps = state.amplitudes();
  const std::size_t flip = t.x_mask;
  const int n_y = std::popcount(t.x_mask & t.z_mask);
  cplx s{0.0, 0.0};
  for (std::size_t x = 0; x < amps.size(); ++x) {
    const double sign = (std::popcount(static_cast<std::uint32_t>(x) & t.z_mask) & 1) ? -1.0 : 1.0;
    s += std::conj(amps[x ^ flip]) * amps[x] * sign;
  }
  static constexpr std::array<cplx, 4> kIPow = {cplx{1, 0}, cplx{0, 1}, cplx{-1, 0}, cplx{0, -1}};
  s *= kIPow[static_cast<std::size_t>(n_y & 3)];
  return t.coefficient * s.real();
}

double expectation(const StateVector& state, const PauliSum& obs) {
  if (obs.n_qubits != state.n_qubits()) {
    throw std::invalid_argument("observable acts on " + std::to_string(obs.n_qubits) + " qubits, state has " +
                                std::to_string(state.n_qubits()));
  }
  double e = 0.0;
  for (const auto& t : obs.terms) e += expectation(state, t);
  return e;
}

ShotResult sample(const StateVector& state, long shots, std::span<const double> readout_flip, std::uint64_t seed) {
  if (shots < 1) throw std::invalid_argument("sample needs at least one shot");
  const int n = state.n_qubits();
  if (readout_flip.size() > 1 && readout_flip.size() < static_cast<std::size_t>(n)) {
    throw std::invalid_argument("readout_flip must have one entry or one per qubit");
  }
  std::vector<double> cdf(state.dim());
  double acc = 0.0;
  for (std::size_t i = 0; i < state.dim(); ++i) {
    acc += std::norm(state[i]);
    cdf[i] = acc;
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<long> hist(state.dim(), 0);
  const bool flips = std::any_of(readout_flip.begin(), readout_flip.end(), [](double p) { return p > 0.0; });
  for (long s = 0; s < shots; ++s) {
    const double u = u01(rng) * acc;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t idx = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    if (flips) {
      for (int q = 0; q < n; ++q) {
        const double p = readout_flip.size() == 1 ? readout_flip[0] : readout_flip[static_cast<std::size_t>(q)];
        if (u01(rng) < p) idx ^= std::size_t{1} << q;
      }
    }
    ++hist[idx];
  }
  ShotResult r;
  r.total_shots = shots;
  for (std::size_t i = 0; i < hist.size(); ++i)
    if (hist[i] > 0) r.counts[bitstring(i, n)] = hist[i];
  return r;
}

namespace {

// Sampled estimate of one Pauli term from a prepared state.
double sampled_term(StateVector psi, const PauliString& t, long shots, const NoiseProfile* noise, std::uint64_t seed) {
  const int n = psi.n_qubits();
  const double r = 1.0 / std::numbers::sqrt2;
  for (int q = 0; q < n; ++q) {
    const char op = t.op_at(q);
    if (op == 'X') {
      psi.apply_1q(q, {cplx{r, 0}, cplx{r, 0}, cplx{r, 0}, cplx{-r, 0}});
    } else if (op == 'Y') {
      // H * Sdg maps the Y eigenbasis onto Z.
      psi.apply(gate::fixed(GateKind::Sdg, q), 0.0);
      psi.apply_1q(q, {cplx{r, 0}, cplx{r, 0}, cplx{r, 0}, cplx{-r, 0}});
    }
  }
  std::vector<double> flips;
  if (noise != nullptr) flips = noise->readout_flip;
  const ShotResult res = sample(psi, shots, flips, seed);
  const std::uint32_t support = t.x_mask | t.z_mask;
  double sum = 0.0;
  for (const auto& [bits, count] : res.counts) {
    int parity = 0;
    for (int q = 0; q < n; ++q)
      if (((support >> q) & 1U) && bits[static_cast<std::size_t>(q)] == '1') parity ^= 1;
    sum += (parity ? -1.0 : 1.0) * static_cast<double>(count);
  }
  return t.coefficient * sum / static_cast<double>(shots);
}

}  // namespace

Estimate estimate_expectation(const Circuit& c, std::span<const double> theta, const PauliSum& obs,
                              const NoiseProfile* noise, const EvalPolicy& policy) {
  check_dims(c, theta);
  if (obs.n_qubits != c.n_qubits()) throw std::invalid_argument("observable and circuit qubit counts differ");
  const bool gate_noise = noise != nullptr && !noise->gate_noiseless();
  const int n_traj = gate_noise ? std::max(1, policy.trajectories) : 1;

  if (policy.shots <= 0) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(n_traj));
    for (int k = 0; k < n_traj; ++k) {
      const StateVector psi = run(c, theta, noise, derive_seed(policy.seed, {static_cast<std::uint64_t>(k)}));
      double e = 0.0;
      for (const auto& t : obs.terms) e += expectation(psi, t) * readout_attenuation(t, noise, c.n_qubits());
      values.push_back(e);
    }
    Estimate est;
    for (double v : values) est.mean += v;
    est.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
      double var = 0.0;
      for (double v : values) var += (v - est.mean) * (v - est.mean);
      var /= static_cast<double>(values.size() - 1);
      est.stderr_ = std::sqrt(var / static_cast<double>(values.size()));
    }
    return est;
  }

  // Shot mode: every term is measured in its own basis, shots split over trajectories.
  Estimate est;
  double var = 0.0;
  const long per_traj = std::max<long>(1, policy.shots / n_traj);
  for (std::size_t ti = 0; ti < obs.terms.size(); ++ti) {
    const PauliString& t = obs.terms[ti];
    if (t.is_identity()) {
      est.mean += t.coefficient;
      continue;
    }
    double term_mean = 0.0;
    for (int k = 0; k < n_traj; ++k) {
      const std::uint64_t s = derive_seed(policy.seed, {ti, static_cast<std::uint64_t>(k)});
      const StateVector psi = run(c, theta, noise, s);
      term_mean += sampled_term(psi, t, per_traj, noise, splitmix64(s));
    }
    term_mean /= n_traj;
    est.mean += term_mean;
    const double m = term_mean / t.coefficient;
    var += t.coefficient * t.coefficient * std::max(0.0, 1.0 - m * m) / static_cast<double>(per_traj * n_traj);
  }
  est.stderr_ = std::sqrt(var);
  return est;
}

std::vector<double> param_shift_grad(const Circuit& c, std::span<const double> theta, const PauliSum& obs,
                                     const NoiseProfile* noise, const EvalPolicy& policy) {
  check_dims(c, theta);
  const Circuit bound = bind_parameters(c, theta);
  std::vector<double> grad(theta.size(), 0.0);
  const double shift = std::numbers::pi / 2;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const GateInstance& g = c[i];
    if (!g.has_free_param()) continue;
    if (!is_pauli_rotation(g.kind)) {
      throw std::invalid_argument("parameter-shift rule needs a Pauli rotation, got '" +
                                  std::string(gate_info(g.kind).name) + "'");
    }
    std::vector<GateInstance> gates = bound.gates();
    const double a = gates[i].angle;
    gates[i].angle = a + shift;
    const Circuit plus(c.n_qubits(), gates, 0);
    gates[i].angle = a - shift;
    const Circuit minus(c.n_qubits(), std::move(gates), 0);
    // Common random numbers for both shifted evaluations.
    EvalPolicy p = policy;
    p.seed = derive_seed(policy.seed, {i});
    const double lp = estimate_expectation(plus, {}, obs, noise, p).mean;
    const double lm = estimate_expectation(minus, {}, obs, noise, p).mean;
    grad[static_cast<std::size_t>(g.slot)] += g.scale * 0.5 * (lp - lm);
  }
  return grad;
}

double exact_ground_energy(const PauliSum& obs) {
  if (obs.n_qubits > kMaxDenseQubits) {
    throw std::invalid_argument("exact_ground_energy supports at most " + std::to_string(kMaxDenseQubits) + " qubits");
  }
  const std::size_t dim = std::size_t{1} << obs.n_qubits;
  const bool real = std::all_of(obs.terms.begin(), obs.terms.end(),
                                [](const PauliString& t) { return std::popcount(t.x_mask & t.z_mask) % 2 == 0; });
  auto phase = [](const PauliString& t, std::size_t x) {
    static constexpr std::array<cplx, 4> kIPow = {cplx{1, 0}, cplx{0, 1}, cplx{-1, 0}, cplx{0, -1}};
    const double sign = (std::popcount(static_cast<std::uint32_t>(x) & t.z_mask) & 1) ? -1.0 : 1.0;
    return kIPow[static_cast<std::size_t>(std::popcount(t.x_mask & t.z_mask) & 3)] * sign;
  };
  if (real) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (const auto& t : obs.terms)
      for (std::size_t x = 0; x < dim; ++x)
        h(static_cast<Eigen::Index>(x ^ t.x_mask), static_cast<Eigen::Index>(x)) += t.coefficient * phase(t, x).real();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (const auto& t : obs.terms)
    for (std::size_t x = 0; x < dim; ++x)
      h(static_cast<Eigen::Index>(x ^ t.x_mask), static_cast<Eigen::Index>(x)) += t.coefficient * phase(t, x);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace qas
