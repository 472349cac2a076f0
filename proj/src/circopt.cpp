#include "qas/circopt.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "qas/simulator.hpp"

namespace qas {

namespace {

constexpr double kPi = std::numbers::pi;

using Slots = std::vector<std::optional<GateInstance>>;

Slots to_slots(const Circuit& c) { return Slots(c.gates().begin(), c.gates().end()); }

Circuit from_slots(const Circuit& like, const Slots& s) {
  std::vector<GateInstance> g;
  for (const auto& x : s)
    if (x) g.push_back(*x);
  return Circuit(like.n_qubits(), std::move(g), like.n_params());
}

bool x_family(GateKind k) { return k == GateKind::X || k == GateKind::Rx; }

bool same_operands(const GateInstance& a, const GateInstance& b) {
  if (a.arity() != b.arity()) return false;
  if (a.arity() == 1) return a.qubits[0] == b.qubits[0];
  return a.qubits == b.qubits || (a.qubits[0] == b.qubits[1] && a.qubits[1] == b.qubits[0]);
}

// Rotation axis for fusion, or 0 when the gate cannot be fused.
char fusion_axis(const GateInstance& g, OptMode mode) {
  if (g.has_free_param()) return 0;
  switch (g.kind) {
    case GateKind::Rx: return 'x';
    case GateKind::Ry: return 'y';
    case GateKind::Rz: return 'z';
    case GateKind::Rzz: return 'w';
    case GateKind::X: return mode == OptMode::aggressive ? 'x' : 0;
    case GateKind::Z:
    case GateKind::S:
    case GateKind::Sdg: return mode == OptMode::aggressive ? 'z' : 0;
    default: return 0;
  }
}

bool inverse_pair(const GateInstance& a, const GateInstance& b) {
  using K = GateKind;
  if (a.kind == K::CNOT && b.kind == K::CNOT) return a.qubits == b.qubits;
  if (!same_operands(a, b)) return false;
  if ((a.kind == K::S && b.kind == K::Sdg) || (a.kind == K::Sdg && b.kind == K::S)) return true;
  return a.kind == b.kind && (a.kind == K::H || a.kind == K::X || a.kind == K::Z || a.kind == K::CZ);
}

bool partners(const GateInstance& a, const GateInstance& b, OptMode mode) {
  if (!same_operands(a, b)) return false;
  const char ax = fusion_axis(a, mode);
  if (ax != 0 && ax == fusion_axis(b, mode)) return true;
  return inverse_pair(a, b);
}

// Wraps into (-pi, pi]; returns the number of 2*pi turns removed.
long wrap_angle(double& angle) {
  double r = std::remainder(angle, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  const long turns = std::lround((angle - r) / (2.0 * kPi));
  angle = r;
  return turns;
}

double wrap_phase(double p) {
  double r = std::remainder(p, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

// Rotation about the same axis with phase: g = exp(i * phase) * R(angle).
GateInstance as_rotation(const GateInstance& g, double& phase) {
  switch (g.kind) {
    case GateKind::X:
      phase += kPi / 2;
      return gate::rotation(GateKind::Rx, kPi, g.qubits[0]);
    case GateKind::Z:
      phase += kPi / 2;
      return gate::rotation(GateKind::Rz, kPi, g.qubits[0]);
    case GateKind::S:
      phase += kPi / 4;
      return gate::rotation(GateKind::Rz, kPi / 2, g.qubits[0]);
    case GateKind::Sdg:
      phase -= kPi / 4;
      return gate::rotation(GateKind::Rz, -kPi / 2, g.qubits[0]);
    default: return g;
  }
}

// Index of the next live gate after i touching any operand of g, or -1.
long next_on_wires(const Slots& s, std::size_t i) {
  const GateInstance& g = *s[i];
  for (std::size_t j = i + 1; j < s.size(); ++j)
    if (s[j] && s[j]->shares_qubit(g)) return static_cast<long>(j);
  return -1;
}

// True when every operand of g next meets gate j.
bool wire_adjacent(const Slots& s, std::size_t i, std::size_t j) {
  const GateInstance& g = *s[i];
  for (int k = 0; k < g.arity(); ++k) {
    const int q = g.qubits[static_cast<std::size_t>(k)];
    for (std::size_t m = i + 1; m < s.size(); ++m) {
      if (!s[m] || !s[m]->acts_on(q)) continue;
      if (m != j) return false;
      break;
    }
  }
  return true;
}

}  // namespace

const char* to_string(OptMode m) { return m == OptMode::aggressive ? "aggressive" : "conservative"; }

OptMode opt_mode_from_string(const std::string& s) {
  if (s == "conservative") return OptMode::conservative;
  if (s == "aggressive") return OptMode::aggressive;
  throw std::invalid_argument("unknown optimization mode '" + s + "' (expected conservative or aggressive)");
}

void OptConfig::validate() const {
  if (!(angle_epsilon >= 0.0)) throw std::invalid_argument("angle_epsilon must be non-negative");
  if (max_passes < 1) throw std::invalid_argument("max_passes must be at least 1");
}

bool commutes(const GateInstance& a, const GateInstance& b) {
  using K = GateKind;
  if (!a.shares_qubit(b)) return true;
  if (a.kind == K::I || b.kind == K::I) return true;
  if (is_diagonal(a.kind) && is_diagonal(b.kind)) return true;
  if (a.arity() == 1 && b.arity() == 1) {
    return a.kind == b.kind || (x_family(a.kind) && x_family(b.kind));
  }
  auto cnot_vs = [](const GateInstance& cx, const GateInstance& o) {
    const int ctrl = cx.qubits[0], tgt = cx.qubits[1];
    if (o.arity() == 1) {
      if (o.qubits[0] == ctrl) return is_diagonal(o.kind);
      return x_family(o.kind);
    }
    if (o.kind == K::CNOT) {
      if (o.qubits == cx.qubits) return true;
      return o.qubits[0] != tgt && o.qubits[1] != ctrl;
    }
    // diagonal two-qubit gate: fine while it stays off the target
    return is_diagonal(o.kind) && !o.acts_on(tgt);
  };
  if (a.kind == K::CNOT) return cnot_vs(a, b);
  if (b.kind == K::CNOT) return cnot_vs(b, a);
  return false;
}

Circuit reorder_commute(const Circuit& c, const OptConfig& cfg, int* moves) {
  cfg.validate();
  std::vector<GateInstance> g = c.gates();
  int moved = 0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    const GateInstance cur = g[i];
    if (cur.kind == GateKind::I) continue;
    bool first_contact = true;
    for (std::size_t k = i; k-- > 0;) {
      if (!g[k].shares_qubit(cur)) continue;
      if (partners(g[k], cur, cfg.mode)) {
        if (!first_contact) {
          g.erase(g.begin() + static_cast<long>(i));
          g.insert(g.begin() + static_cast<long>(k) + 1, cur);
          ++moved;
        }
        break;
      }
      if (!commutes(g[k], cur)) break;
      first_contact = false;
    }
  }
  if (moves) *moves += moved;
  return Circuit(c.n_qubits(), std::move(g), c.n_params());
}

Circuit fuse_rotations(const Circuit& c, const OptConfig& cfg, int* fusions, double* global_phase) {
  cfg.validate();
  Slots s = to_slots(c);
  double phase = 0.0;
  int fused = 0;
  if (cfg.mode == OptMode::aggressive) {
    for (auto& g : s) g = as_rotation(*g, phase);
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!s[i] || fusion_axis(*s[i], cfg.mode) == 0) continue;
    for (;;) {
      const long j = next_on_wires(s, i);
      if (j < 0) break;
      const auto uj = static_cast<std::size_t>(j);
      if (s[uj]->kind != s[i]->kind || !same_operands(*s[i], *s[uj]) || s[uj]->has_free_param() ||
          !wire_adjacent(s, i, uj)) {
        break;
      }
      double angle = s[i]->angle + s[uj]->angle;
      phase += kPi * static_cast<double>(wrap_angle(angle));
      s[i]->angle = angle;
      s[uj].reset();
      ++fused;
    }
  }
  if (fusions) *fusions += fused;
  if (global_phase) *global_phase += phase;
  return from_slots(c, s);
}

Circuit eliminate_redundant(const Circuit& c, const OptConfig& cfg, int* eliminations, double* global_phase) {
  cfg.validate();
  Slots s = to_slots(c);
  double phase = 0.0;
  int removed = 0;
  for (auto& g : s) {
    if (g->kind == GateKind::I) {
      g.reset();
      ++removed;
      continue;
    }
    if (g->parametric() && !g->has_free_param()) {
      double a = g->angle;
      const long turns = wrap_angle(a);
      if (std::abs(a) < cfg.angle_epsilon) {
        phase += kPi * static_cast<double>(turns);
        g.reset();
        ++removed;
      }
    }
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!s[i]) continue;
      const long j = next_on_wires(s, i);
      if (j < 0) continue;
      const auto uj = static_cast<std::size_t>(j);
      if (inverse_pair(*s[i], *s[uj]) && wire_adjacent(s, i, uj)) {
        s[i].reset();
        s[uj].reset();
        removed += 2;
        changed = true;
      }
    }
  }
  if (eliminations) *eliminations += removed;
  if (global_phase) *global_phase += phase;
  return from_slots(c, s);
}

std::pair<Circuit, OptReport> optimize_fixpoint(const Circuit& c, const OptConfig& cfg) {
  cfg.validate();
  OptReport rep;
  rep.before = circuit_metrics(c);
  Circuit cur = c;
  double phase = 0.0;
  rep.converged = false;
  for (int pass = 0; pass < cfg.max_passes; ++pass) {
    PassCounts pc;
    double pass_phase = 0.0;
    Circuit next = reorder_commute(cur, cfg, &pc.reorders);
    next = fuse_rotations(next, cfg, &pc.fusions, &pass_phase);
    next = eliminate_redundant(next, cfg, &pc.eliminations, &pass_phase);
    pc.gate_count = next.size();
    rep.passes.push_back(pc);
    const bool same = next == cur;
    if (next.size() <= cur.size()) {
      cur = std::move(next);
      phase += pass_phase;
    }
    if (same) {
      rep.converged = true;
      break;
    }
  }
  rep.after = circuit_metrics(cur);
  rep.global_phase = wrap_phase(phase);
  if (c.n_qubits() <= kMaxDenseQubits) rep.equivalent = verify_equivalence(c, cur);
  return {cur, rep};
}

namespace {

StateVector run_from(const Circuit& c, std::span<const double> theta, const std::vector<std::pair<double, double>>& prep) {
  StateVector psi(c.n_qubits());
  for (std::size_t q = 0; q < prep.size(); ++q) {
    const int qi = static_cast<int>(q);
    psi.apply(gate::rotation(GateKind::Ry, prep[q].first, qi), prep[q].first);
    psi.apply(gate::rotation(GateKind::Rz, prep[q].second, qi), prep[q].second);
  }
  for (const auto& g : c.gates()) psi.apply(g, g.resolve_angle(theta));
  return psi;
}

}  // namespace

bool verify_equivalence(const Circuit& a, const Circuit& b, std::span<const double> theta, std::uint64_t seed,
                        double tol) {
  if (a.n_qubits() != b.n_qubits()) throw std::invalid_argument("verify_equivalence: qubit counts differ");
  if (a.n_qubits() > kMaxDenseQubits) {
    throw std::invalid_argument("verify_equivalence: at most " + std::to_string(kMaxDenseQubits) + " qubits");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * kPi);
  const auto n_params = static_cast<std::size_t>(std::max(a.n_params(), b.n_params()));
  std::vector<double> drawn;
  if (theta.size() < n_params) {
    if (!theta.empty()) throw std::invalid_argument("verify_equivalence: theta shorter than the parameter count");
    drawn.resize(n_params);
    for (auto& t : drawn) t = ang(rng);
    theta = drawn;
  }
  const auto n = static_cast<std::size_t>(a.n_qubits());
  for (int trial = 0; trial <= 16; ++trial) {
    std::vector<std::pair<double, double>> prep;
    if (trial > 0) {
      prep.resize(n);
      for (auto& p : prep) p = {ang(rng) / 2.0, ang(rng)};
    }
    const double overlap = std::abs(inner_product(run_from(a, theta, prep), run_from(b, theta, prep)));
    if (!(overlap >= 1.0 - tol)) return false;
  }
  return true;
}

std::string opt_report_json(const OptReport& r) {
  nlohmann::json passes = nlohmann::json::array();
  for (const auto& p : r.passes) {
    passes.push_back({{"reorders", p.reorders}, {"fusions", p.fusions}, {"eliminations", p.eliminations},
                      {"gate_count", p.gate_count}});
  }
  nlohmann::json j = {{"before", {{"gate_count", r.before.gate_count}, {"depth", r.before.depth}}},
                      {"after", {{"gate_count", r.after.gate_count}, {"depth", r.after.depth}}},
                      {"global_phase", r.global_phase},
                      {"converged", r.converged},
                      {"passes", passes}};
  j["equivalent"] = r.equivalent ? nlohmann::json(*r.equivalent) : nlohmann::json(nullptr);
  return j.dump(2);
}

}  // namespace qas
