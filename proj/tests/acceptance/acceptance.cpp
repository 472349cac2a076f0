// Acceptance runner: one [PASS]/[FAIL] line per criterion, exit 1 on any failure.
//   acceptance            all criteria
//   acceptance 2 5        selected criteria

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "qas/circopt.hpp"
#include "qas/random.hpp"
#include "qas/search.hpp"
#include "qas/selfcheck.hpp"
#include "qas/vqe.hpp"
#include "qas/wsn.hpp"

using namespace qas;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

Outcome& note(Outcome& o, bool ok, const std::string& what) {
  o.passed = o.passed && ok;
  if (!o.detail.empty()) o.detail += "; ";
  o.detail += (ok ? "" : "FAILED ") + what;
  return o;
}

void check_runtime(Outcome& o, Clock::time_point t0, double limit_s) {
  const double t = seconds_since(t0);
  note(o, t < limit_s, "runtime " + fmt(t, 3) + " s < " + fmt(limit_s, 3) + " s");
}

// Fixed-angle circuit drawn from {X, Rx, Rz, CZ}.
Circuit random_pool_circuit(std::mt19937_64& rng, int n, int gates) {
  std::uniform_int_distribution<int> pick(0, n > 1 ? 3 : 2), qubit(0, n - 1);
  std::uniform_real_distribution<double> angle(-M_PI, M_PI);
  std::vector<GateInstance> g;
  while (static_cast<int>(g.size()) < gates) {
    const int a = qubit(rng);
    switch (pick(rng)) {
      case 0: g.push_back(gate::fixed(GateKind::X, a)); break;
      case 1: g.push_back(gate::rotation(GateKind::Rx, angle(rng), a)); break;
      case 2: g.push_back(gate::rotation(GateKind::Rz, angle(rng), a)); break;
      default: {
        const int b = qubit(rng);
        if (b != a) g.push_back(gate::fixed(GateKind::CZ, a, b));
      }
    }
  }
  return Circuit(n, g);
}

// ---- H2 pipeline shared by criteria 2 and 3 --------------------------------

struct H2Run {
  std::uint64_t seed = 0;
  double delta = 0.0;       // after VQE on the discovered ansatz
  double delta_opt = 0.0;   // after optimize, parameterize, warm-start VQE
  std::size_t bound_gates = 0;
  std::size_t opt_gates = 0;
  bool equivalent = false;
};

struct H2Data {
  std::vector<H2Run> runs;
  double search_vqe_seconds = 0.0;
  double optimize_seconds = 0.0;
  int max_depth = 12;
};

const H2Data& h2_data() {
  static H2Data data = [] {
    H2Data d;
    const auto problem = load_problem(std::string(QAS_SOURCE_DIR) + "/data/h2_sto3g.ham");
    const auto topo = DeviceTopology::line(4, {GateKind::X, GateKind::Rx, GateKind::Rz}, {GateKind::CZ});
    const auto pool = build_pool(topo, {GateKind::X, GateKind::Rx, GateKind::Rz, GateKind::CZ});
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      auto t0 = Clock::now();
      SearchConfig sc;
      sc.seed = seed;
      EncoderConfig enc;
      enc.max_depth = d.max_depth;
      const auto found = run_search(pool, topo, sc, enc, NoiseProfile::depolarizing(0.001, 0.01));
      VqeConfig vc;
      vc.seed = seed;
      const auto v = run_vqe(problem, found.best, vc);
      H2Run r;
      r.seed = seed;
      r.delta = energy_error(v, problem).delta;
      const Circuit bound = bind_parameters(found.best, v.best_theta);
      d.search_vqe_seconds += seconds_since(t0);

      t0 = Clock::now();
      const auto [opt, rep] = optimize_fixpoint(bound, OptConfig{});
      r.bound_gates = bound.size();
      r.opt_gates = opt.size();
      r.equivalent = verify_equivalence(bound, opt, {}, seed);
      d.optimize_seconds += seconds_since(t0);

      t0 = Clock::now();
      const auto [pc, theta] = parameterize(opt);
      VqeConfig wc;
      wc.seed = seed;
      wc.init = ThetaInit::given;
      wc.initial_theta = theta;
      r.delta_opt = energy_error(run_vqe(problem, pc, wc), problem).delta;
      d.search_vqe_seconds += seconds_since(t0);
      d.runs.push_back(r);
    }
    return d;
  }();
  return data;
}

// ---- criteria --------------------------------------------------------------

Outcome criterion1() {
  Outcome o;
  const auto t0 = Clock::now();
  int bad = 0;
  double worst = 0.0;
  const auto prims = primitive_gradient_checks(1, 1e-5);
  for (const auto& l : prims) {
    worst = std::max(worst, l.value);
    if (!l.passed) {
      ++bad;
      std::cout << "    primitive " << l.name << " deviation " << l.value << " (" << l.detail << ")\n";
    }
  }
  note(o, bad == 0, std::to_string(prims.size() - bad) + "/" + std::to_string(prims.size()) +
                        " primitives within 1e-5 (worst " + fmt(worst, 3) + ")");
  EncoderConfig enc;
  enc.max_depth = 4;
  enc.pool_size = 6;
  enc.n_heads = 2;
  enc.n_feat_qubits = 2;
  enc.n_ffn_qubits = 2;
  enc.ffn_layers = 1;
  const auto e = encoder_gradient_check(enc, 1, 1e-3);
  note(o, e.passed, e.name + " deviation " + fmt(e.value, 3) + " < 1e-3");
  check_runtime(o, t0, 60.0);
  return o;
}

Outcome criterion2() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> nq(1, 6), ng(1, 60);
  int equivalent = 0;
  double reduction = 0.0;
  const int n_circuits = 1000;
  for (int i = 0; i < n_circuits; ++i) {
    const Circuit c = random_pool_circuit(rng, nq(rng), ng(rng));
    const auto [opt, rep] = optimize_fixpoint(c, OptConfig{});
    equivalent += verify_equivalence(c, opt, {}, rng());
    reduction += 1.0 - static_cast<double>(opt.size()) / static_cast<double>(c.size());
  }
  reduction /= n_circuits;
  note(o, equivalent == n_circuits, std::to_string(equivalent) + "/1000 equivalent");
  note(o, reduction >= 0.20, "mean reduction " + fmt(100.0 * reduction, 3) + "% >= 20%");
  const double random_s = seconds_since(t0);

  const auto& h2 = h2_data();
  double best = 0.0;
  bool all_eq = true;
  std::string per_seed;
  for (const auto& r : h2.runs) {
    const double red = 1.0 - static_cast<double>(r.opt_gates) / static_cast<double>(r.bound_gates);
    best = std::max(best, red);
    all_eq = all_eq && r.equivalent;
    per_seed += (per_seed.empty() ? "" : ",") + std::to_string(r.bound_gates) + "->" + std::to_string(r.opt_gates);
  }
  note(o, all_eq, "discovered circuits equivalent after optimization");
  note(o, best >= 0.25, "best discovered H2 reduction " + fmt(100.0 * best, 3) + "% >= 25% (" + per_seed + ")");
  const double t = random_s + h2.optimize_seconds;
  note(o, t < 300.0, "runtime " + fmt(t, 3) + " s < 300 s (search and VQE counted under 3)");
  return o;
}

Outcome criterion3() {
  Outcome o;
  const auto& h2 = h2_data();
  double worst = 0.0, worst_deg = -1e9;
  for (const auto& r : h2.runs) {
    worst = std::max(worst, r.delta);
    worst_deg = std::max(worst_deg, r.delta_opt - r.delta);
  }
  note(o, worst < 0.1, std::to_string(h2.runs.size()) + " searches (D=" + std::to_string(h2.max_depth) +
                           "), worst dE " + fmt(worst, 4) + " Ha < 0.1");
  note(o, worst_deg < 0.01, "worst post-optimization degradation " + fmt(worst_deg, 3) + " Ha < 0.01");
  const double t = h2.search_vqe_seconds + h2.optimize_seconds;
  note(o, t < 900.0, "runtime " + fmt(t, 3) + " s < 900 s");
  return o;
}

Outcome criterion4() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(44);
  std::uniform_int_distribution<int> nq(1, 5), ng(1, 40);
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    const Circuit c = random_pool_circuit(rng, nq(rng), ng(rng));
    exact += estimate_pst(c, {}, NoiseProfile{}, 512, rng()) == 1.0;
  }
  note(o, exact == 100, std::to_string(exact) + "/100 noiseless PST == 1");

  const Circuit c = random_pool_circuit(rng, 4, 30);
  const long shots = 4000;
  std::vector<double> pst;
  std::string series;
  for (double p1 : {0.0, 0.01, 0.05}) {
    pst.push_back(estimate_pst(c, {}, NoiseProfile::depolarizing(p1, 0.0), shots, 7));
    series += (series.empty() ? "" : " ") + fmt(pst.back(), 4);
  }
  bool mono = true;
  for (std::size_t i = 0; i + 1 < pst.size(); ++i) {
    const double se = std::sqrt((pst[i] * (1 - pst[i]) + pst[i + 1] * (1 - pst[i + 1])) / shots);
    mono = mono && pst[i + 1] <= pst[i] + 2.0 * se;
  }
  note(o, mono, "PST over p1 {0,0.01,0.05}: " + series + " non-increasing within 2 SE");

  std::vector<GateInstance> deep;
  int slot = 0;
  for (int layer = 0; layer < 4; ++layer) {
    for (int q = 0; q < 2; ++q) {
      deep.push_back(gate::free_rotation(GateKind::Rx, slot++, q));
      deep.push_back(gate::free_rotation(GateKind::Rz, slot++, q));
    }
    deep.push_back(gate::fixed(GateKind::CZ, 0, 1));
  }
  const ExpressibilityOptions eo{2000, 75, 1};
  const double kl_deep = estimate_expressibility(Circuit(2, deep), nullptr, eo, 5);
  const double kl_single = estimate_expressibility(Circuit(2, {gate::free_rotation(GateKind::Rx, 0, 0)}), nullptr, eo, 5);
  note(o, kl_deep < kl_single, "KL 4-layer " + fmt(kl_deep, 3) + " < single rotation " + fmt(kl_single, 3));
  check_runtime(o, t0, 300.0);
  return o;
}

Outcome criterion5() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto topo = DeviceTopology::line(2, {GateKind::Rx, GateKind::Rz}, {GateKind::CZ});
  const auto pool = build_pool(topo, {GateKind::Rx, GateKind::Rz, GateKind::CZ});
  const int column = 2;
  const RiggedEvaluator ev(column);
  for (EncoderMode mode : {EncoderMode::qbsa, EncoderMode::identity}) {
    SearchConfig cfg;
    cfg.steps = 200;
    EncoderConfig enc;
    enc.mode = mode;
    enc.max_depth = 4;
    enc.n_feat_qubits = 2;
    enc.n_ffn_qubits = 2;
    enc.ffn_layers = 1;
    int first = -1, finite = 0;
    double peak = 0.0;
    const auto r = run_search(pool, topo, cfg, enc, ev, [&](const StepRecord& rec, const EncoderState& s) {
      EncoderState copy = s;
      const double p = selection_probability(copy, column);
      peak = std::max(peak, p);
      if (p > 0.9 && first < 0) first = rec.step;
      finite += std::isfinite(rec.loss);
    });
    const int steps = static_cast<int>(r.trace.steps.size());
    note(o, first >= 0, std::string(to_string(mode)) + ": p>0.9 " +
                            (first >= 0 ? "at step " + std::to_string(first) : "never (peak " + fmt(peak, 3) + ")"));
    note(o, finite == steps, std::string(to_string(mode)) + ": finite loss " + std::to_string(finite) + "/" + std::to_string(steps));
  }
  check_runtime(o, t0, 600.0);
  return o;
}

Outcome criterion6() {
  Outcome o;
  const auto t0 = Clock::now();
  {
    std::mt19937_64 rng(66);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    double worst = 0.0;
    for (std::size_t m = 1; m <= 12; ++m) {
      wsn::RoutingQubo q;
      q.variables.resize(m);
      q.linear.resize(m);
      q.quad.assign(m, std::vector<double>(m, 0.0));
      for (std::size_t k = 0; k < m; ++k) {
        q.linear[k] = u(rng);
        for (std::size_t l = k + 1; l < m; ++l) q.quad[k][l] = q.quad[l][k] = u(rng);
      }
      const auto is = wsn::qubo_to_ising(q);
      std::vector<int> x(m);
      for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
        for (std::size_t i = 0; i < m; ++i) x[i] = static_cast<int>(mask >> i & 1);
        worst = std::max(worst, std::abs(q.energy(x) - is.energy(wsn::bits_to_spins(x))));
      }
    }
    note(o, worst < 1e-9, "QUBO/Ising max gap " + fmt(worst, 3) + " over 1..12 variables");
  }
  {
    wsn::SolverConfig sc;
    int total = 0, qbsa_eq = 0, qaoa_eq = 0, below = 0;
    for (std::uint64_t seed = 1; total < 24 && seed < 200; ++seed) {
      wsn::NetworkSpec sp;
      sp.seed = seed;
      sp.n_sensors = 12;
      sp.n_cluster_heads = 2;
      sp.width = 80;
      sp.height = 40;
      const auto net = wsn::build_network(sp);
      for (const auto& g : wsn::partition(net, 2, seed)) {
        if (total >= 24) break;
        wsn::QuboOptions qo;
        qo.sinks = wsn::cluster_sinks(net, g);
        const auto vars = wsn::candidate_edges(net, g, 2, 10);
        if (vars.size() < 3) continue;
        const auto model = wsn::qubo_to_ising(wsn::build_qubo(net, vars, qo));
        const double opt = wsn::brute_force_ising(model).energy;
        const double tol = 1e-9 * std::max(1.0, std::abs(opt));
        const double eq = wsn::solve_subgraph(model, wsn::SubgraphSolver::qbsa, sc).energy;
        const double ea = wsn::solve_subgraph(model, wsn::SubgraphSolver::qaoa, sc).energy;
        below += (eq < opt - tol) + (ea < opt - tol);
        qbsa_eq += eq <= opt + tol;
        qaoa_eq += ea <= opt + tol;
        ++total;
      }
    }
    note(o, total >= 20 && below == 0, std::to_string(total) + " subgraphs, " + std::to_string(below) +
                                           " variational energies below brute force");
    const double rate = total ? static_cast<double>(qbsa_eq) / total : 0.0;
    note(o, rate >= 0.7, "qbsa optimal in " + std::to_string(qbsa_eq) + "/" + std::to_string(total) +
                             " (>= 70%); qaoa " + std::to_string(qaoa_eq) + "/" + std::to_string(total));
  }
  {
    const auto net = wsn::load_layout(std::string(QAS_SOURCE_DIR) + "/data/wsn_desk20.json");
    const auto greedy = wsn::greedy_routing(net);
    const auto q = wsn::route_network(net, wsn::PipelineConfig{}).solution;
    note(o, q.unreachable.empty() && q.flow_ok && q.total_energy <= greedy.total_energy,
         "desk qbsa " + fmt(q.total_energy, 6) + " <= greedy " + fmt(greedy.total_energy, 6));
  }
  check_runtime(o, t0, 900.0);
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome criterion7() {
  Outcome o;
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / ("qas_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string cli = QAS_CLI_PATH;
  const std::string first = "\"" + cli + "\" search --pool-kinds rx,rz,cz --qubits 2 --depth 4 --steps 30 --seed 7 "
                            "--noiseless --out \"" + (root / "a").string() + "\" > /dev/null 2>&1";
  const std::string second = "\"" + cli + "\" --threads 2 search --config \"" + (root / "a" / "manifest.json").string() +
                             "\" --out \"" + (root / "b").string() + "\" > /dev/null 2>&1";
  const int rc1 = std::system(first.c_str());
  const int rc2 = rc1 == 0 ? std::system(second.c_str()) : -1;
  note(o, rc1 == 0 && rc2 == 0, "two search runs (second replays the first's manifest)");
  if (rc1 == 0 && rc2 == 0) {
    const auto ta = slurp(root / "a" / "trace.csv"), tb = slurp(root / "b" / "trace.csv");
    note(o, !ta.empty() && ta == tb, "trace.csv identical (" + std::to_string(ta.size()) + " bytes)");
  }
  fs::remove_all(root);
  check_runtime(o, t0, 300.0);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"Gradient fidelity", criterion1},
      {"Optimizer soundness and compression", criterion2},
      {"VQE quality", criterion3},
      {"PST and expressibility sanity", criterion4},
      {"Search effectiveness (rigged pool)", criterion5},
      {"WSN correctness", criterion6},
      {"Reproducibility", criterion7},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.passed;
    std::cout << (o.passed ? "[PASS] " : "[FAIL] ") << id << ". " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
