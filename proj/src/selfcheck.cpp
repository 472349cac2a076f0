#include "qas/selfcheck.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "qas/circopt.hpp"
#include "qas/diff.hpp"
#include "qas/random.hpp"
#include "qas/search.hpp"
#include "qas/simulator.hpp"
#include "qas/wsn.hpp"

namespace qas {

using namespace diff;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

Var contract(Tape& t, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, t.constant(random_tensor(y.shape(), rng))));
}

CheckLine to_line(std::string name, const GradCheckReport& r, double tol) {
  CheckLine l;
  l.name = std::move(name);
  l.passed = r.passed;
  l.value = r.max_rel_deviation;
  l.tolerance = tol;
  l.detail = "worst " + r.worst + ", " + std::to_string(r.n_checked) + " entries";
  return l;
}

QuantumTemplate two_qubit_map() {
  QuantumTemplate t;
  t.n_qubits = 2;
  t.n_features = 2;
  t.n_weights = 2;
  for (int q = 0; q < 2; ++q) t.gates.push_back({GateKind::Rx, q, -1, {0, q, 1, 1.0}});
  for (int q = 0; q < 2; ++q) t.gates.push_back({GateKind::Rz, q, -1, {-1, q, 2, 1.0}});
  t.gates.push_back({GateKind::CNOT, 0, 1, {}});
  for (int q = 0; q < 2; ++q) t.gates.push_back({GateKind::Ry, q, -1, {1, q, 1, 1.0}});
  return t;
}

Circuit random_circuit(std::mt19937_64& rng, int n, int gates) {
  static const GateKind kinds[] = {GateKind::X, GateKind::H, GateKind::Rx, GateKind::Rz, GateKind::CZ, GateKind::CNOT};
  std::uniform_int_distribution<int> pick(0, 5), qubit(0, n - 1);
  std::uniform_real_distribution<double> angle(-3.2, 3.2);
  std::vector<GateInstance> g;
  while (static_cast<int>(g.size()) < gates) {
    const GateKind k = kinds[pick(rng)];
    const int a = qubit(rng);
    if (gate_info(k).arity == 2) {
      if (n < 2) continue;
      int b = qubit(rng);
      if (b == a) continue;
      g.push_back(gate::fixed(k, a, b));
    } else if (gate_info(k).parametric) {
      g.push_back(gate::rotation(k, angle(rng), a));
    } else {
      g.push_back(gate::fixed(k, a));
    }
  }
  return Circuit(n, g);
}

}  // namespace

std::vector<CheckLine> primitive_gradient_checks(std::uint64_t seed, double tolerance) {
  std::vector<CheckLine> out;
  std::mt19937_64 rng(seed);
  auto unary = [&](const std::string& name, const std::function<Var(Var)>& op, std::vector<std::size_t> shape,
                   double lo = -1.0, double hi = 1.0) {
    Parameter x("x", random_tensor(std::move(shape), rng, lo, hi));
    std::vector<Parameter*> ps{&x};
    const std::uint64_t cs = rng();
    out.push_back(to_line(name, check_gradients([&](Tape& t) { return contract(t, op(t.param(x)), cs); }, ps, tolerance),
                          tolerance));
  };
  auto binary = [&](const std::string& name, const std::function<Var(Var, Var)>& op, std::vector<std::size_t> sa,
                    std::vector<std::size_t> sb) {
    Parameter a("a", random_tensor(std::move(sa), rng));
    Parameter b("b", random_tensor(std::move(sb), rng));
    std::vector<Parameter*> ps{&a, &b};
    const std::uint64_t cs = rng();
    out.push_back(to_line(
        name, check_gradients([&](Tape& t) { return contract(t, op(t.param(a), t.param(b)), cs); }, ps, tolerance),
        tolerance));
  };

  binary("matmul", [](Var a, Var b) { return matmul(a, b); }, {3, 4}, {4, 2});
  binary("batched_matmul", [](Var a, Var b) { return reshape(batched_matmul(a, b), {6, 2}); }, {2, 3, 4}, {2, 4, 2});
  binary("add", [](Var a, Var b) { return add(a, b); }, {3, 4}, {3, 4});
  binary("sub", [](Var a, Var b) { return sub(a, b); }, {3, 4}, {3, 4});
  binary("mul", [](Var a, Var b) { return mul(a, b); }, {3, 4}, {3, 4});
  binary("add_row", [](Var a, Var b) { return add_row(a, b); }, {3, 4}, {1, 4});
  binary("mul_row", [](Var a, Var b) { return mul_row(a, b); }, {3, 4}, {1, 4});
  binary("mul_scalar", [](Var a, Var b) { return mul_scalar(a, b); }, {3, 4}, {1, 1});
  binary("concat_cols", [](Var a, Var b) { return concat_cols({a, b}); }, {3, 2}, {3, 3});
  unary("scale", [](Var a) { return scale(a, -1.7); }, {3, 4});
  unary("transpose", [](Var a) { return transpose(a); }, {3, 4});
  unary("softmax_rows", [](Var a) { return softmax_rows(a); }, {3, 5}, -2.0, 2.0);
  unary("log_softmax_rows", [](Var a) { return log_softmax_rows(a); }, {3, 5}, -2.0, 2.0);
  unary("layer_norm", [](Var a) { return layer_norm(a); }, {3, 6});
  unary("slice_cols", [](Var a) { return slice_cols(a, 1, 4); }, {3, 5});
  unary("sin", [](Var a) { return diff::sin(a); }, {3, 4}, -3.0, 3.0);
  unary("cos", [](Var a) { return diff::cos(a); }, {3, 4}, -3.0, 3.0);
  unary("square", [](Var a) { return square(a); }, {3, 4});
  unary("log", [](Var a) { return diff::log(a); }, {3, 4}, 0.5, 2.0);
  unary("row_norms", [](Var a) { return row_norms(a); }, {4, 3}, 0.2, 1.0);
  unary("sum", [](Var a) { return sum(a); }, {3, 4});
  unary("reshape", [](Var a) { return reshape(a, {2, 6}); }, {3, 4});
  unary("dropout", [](Var a) {
    std::mt19937_64 mask(5);
    return dropout(a, 0.3, mask);
  }, {4, 4});
  unary("pick_sum", [](Var a) {
    const int idx[] = {2, 0, 3};
    return pick_sum(a, idx);
  }, {3, 4});
  {
    const Tensor ref = random_tensor({3, 4}, rng);
    unary("max_abs_diff", [&](Var a) { return max_abs_diff(a, ref); }, {3, 4});
  }
  {
    const auto tmpl = two_qubit_map();
    Parameter u("u", random_tensor({3, 2}, rng, -1.5, 1.5));
    Parameter w("w", random_tensor({1, 2}, rng, -2.0, 2.0));
    std::vector<Parameter*> ps{&u, &w};
    const std::uint64_t cs = rng();
    out.push_back(to_line(
        "quantum_node",
        check_gradients([&](Tape& t) { return contract(t, quantum_node(tmpl, t.param(u), t.param(w)), cs); }, ps,
                        tolerance),
        tolerance));
  }
  return out;
}

CheckLine encoder_gradient_check(const EncoderConfig& cfg, std::uint64_t seed, double tolerance) {
  cfg.validate();
  EncoderState s = init_encoder(cfg, seed);
  auto params = s.parameters();
  std::mt19937_64 wr(derive_seed(seed, {1}));
  const Tensor w = random_tensor({static_cast<std::size_t>(cfg.max_depth), static_cast<std::size_t>(cfg.pool_size)}, wr);
  const std::uint64_t drop_seed = derive_seed(seed, {2});
  const auto rep = check_gradients(
      [&](Tape& t) {
        std::mt19937_64 drop(drop_seed);
        return sum(mul(encoder_forward(t, s, &drop), t.constant(w)));
      },
      params, tolerance);
  std::ostringstream name;
  name << "encoder(" << to_string(cfg.mode) << ", D=" << cfg.max_depth << ", C=" << cfg.pool_size
       << ", heads=" << cfg.n_heads << ")";
  return to_line(name.str(), rep, tolerance);
}

std::vector<CheckLine> invariant_checks(std::uint64_t seed) {
  std::vector<CheckLine> out;
  std::mt19937_64 rng(seed);

  {
    int bad = 0;
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const Circuit c = random_circuit(rng, 1 + static_cast<int>(rng() % 6), 40);
      const double dev = std::abs(run(c, {}).norm() - 1.0);
      worst = std::max(worst, dev);
      bad += dev > 1e-10;
    }
    out.push_back({"state norm preserved (50 circuits)", bad == 0, worst, 1e-10, ""});
  }
  {
    int bad = 0;
    for (int i = 0; i < 50; ++i) {
      const Circuit c = random_circuit(rng, 1 + static_cast<int>(rng() % 5), 30);
      for (OptMode m : {OptMode::conservative, OptMode::aggressive}) {
        OptConfig cfg;
        cfg.mode = m;
        const auto [opt, rep] = optimize_fixpoint(c, cfg);
        bad += !verify_equivalence(c, opt, {}, rng()) || opt.size() > c.size();
      }
    }
    out.push_back({"optimizer sound and non-increasing (100 runs)", bad == 0, static_cast<double>(bad), 0.0, "failures"});
  }
  {
    double worst = 0.0;
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (std::size_t m = 1; m <= 8; ++m) {
      wsn::RoutingQubo q;
      q.variables.resize(m);
      q.linear.resize(m);
      q.quad.assign(m, std::vector<double>(m, 0.0));
      for (std::size_t k = 0; k < m; ++k) {
        q.linear[k] = u(rng);
        for (std::size_t l = k + 1; l < m; ++l) q.quad[k][l] = q.quad[l][k] = u(rng);
      }
      const auto is = wsn::qubo_to_ising(q);
      for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
        std::vector<int> x(m);
        for (std::size_t i = 0; i < m; ++i) x[i] = static_cast<int>(mask >> i & 1);
        worst = std::max(worst, std::abs(q.energy(x) - is.energy(wsn::bits_to_spins(x))));
      }
    }
    out.push_back({"QUBO and Ising energies agree (1..8 variables)", worst < 1e-9, worst, 1e-9, ""});
  }
  {
    int bad = 0;
    for (int i = 0; i < 10; ++i) {
      const Circuit c = random_circuit(rng, 1 + static_cast<int>(rng() % 4), 20);
      bad += estimate_pst(c, {}, NoiseProfile{}, 256, rng()) != 1.0;
    }
    out.push_back({"noiseless PST is 1 (10 circuits)", bad == 0, static_cast<double>(bad), 0.0, "failures"});
  }
  return out;
}

}  // namespace qas
