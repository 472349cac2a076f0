#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "qas/wsn.hpp"

using namespace qas;
using namespace qas::wsn;

namespace {

Node node(int id, Role r, double x, double y) { return Node{id, r, x, y, 0.0}; }

std::string desk_path() { return std::string(QAS_SOURCE_DIR) + "/data/wsn_desk20.json"; }

RoutingQubo random_qubo(std::size_t m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  RoutingQubo q;
  q.variables.resize(m);
  q.linear.resize(m);
  q.quad.assign(m, std::vector<double>(m, 0.0));
  for (std::size_t k = 0; k < m; ++k) {
    q.linear[k] = u(rng);
    for (std::size_t l = k + 1; l < m; ++l) q.quad[k][l] = q.quad[l][k] = u(rng);
  }
  q.offset = u(rng);
  return q;
}

std::vector<int> bits_of(std::uint64_t mask, std::size_t m) {
  std::vector<int> x(m);
  for (std::size_t i = 0; i < m; ++i) x[i] = static_cast<int>(mask >> i & 1);
  return x;
}

double qubo_optimum(const RoutingQubo& q, std::vector<int>* arg = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << q.size()); ++mask) {
    const auto x = bits_of(mask, q.size());
    const double e = q.energy(x);
    if (e < best) {
      best = e;
      if (arg) *arg = x;
    }
  }
  return best;
}

// Independent tally: sum of link costs recomputed from coordinates.
double link_sum(const Network& net, const std::vector<Edge>& edges) {
  double s = 0.0;
  for (const Edge& e : edges) {
    const Node& a = net.nodes[static_cast<std::size_t>(e.from)];
    const Node& b = net.nodes[static_cast<std::size_t>(e.to)];
    s += net.epsilon * ((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y));
  }
  return s;
}

}  // namespace

TEST(Network, RangeBoundaryIsInclusive) {
  const auto in = make_network({node(0, Role::sensor, 0, 0), node(1, Role::base_station, 25, 0)}, 25.0, 0.05);
  EXPECT_TRUE(in.has_edge(0, 1));
  EXPECT_TRUE(in.has_edge(1, 0));
  EXPECT_EQ(in.edges.size(), 2u);
  EXPECT_TRUE(in.connected);
  const auto out = make_network({node(0, Role::sensor, 0, 0), node(1, Role::base_station, 25.001, 0)}, 25.0, 0.05);
  EXPECT_FALSE(out.has_edge(0, 1));
  EXPECT_FALSE(out.connected);
}

TEST(Network, RolesEnergiesAndErrors) {
  const auto net = make_network(
      {node(0, Role::sensor, 0, 0), node(1, Role::cluster_head, 10, 0), node(2, Role::base_station, 20, 0)}, 25, 1);
  EXPECT_EQ(net.nodes[0].energy, 100.0);
  EXPECT_EQ(net.nodes[1].energy, 200.0);
  EXPECT_TRUE(std::isinf(net.nodes[2].energy));
  EXPECT_EQ(net.base_station(), 2);
  EXPECT_THROW(make_network({node(0, Role::sensor, 0, 0)}, 25, 1), std::invalid_argument);
  EXPECT_THROW(make_network({node(0, Role::base_station, 0, 0), node(1, Role::base_station, 1, 0)}, 25, 1),
               std::invalid_argument);
  EXPECT_THROW(make_network({node(0, Role::base_station, 0, 0), node(0, Role::sensor, 1, 0)}, 25, 1),
               std::invalid_argument);
  EXPECT_THROW(role_from_string("relay"), std::invalid_argument);
}

TEST(Network, CostModel) {
  const auto net = make_network({node(0, Role::sensor, 0, 0), node(1, Role::base_station, 3, 4)}, 25, 1.0);
  EXPECT_DOUBLE_EQ(transmission_cost(0, 1, net), 25.0);
  const auto half = make_network({node(0, Role::sensor, 0, 0), node(1, Role::base_station, 3, 4)}, 25, 0.5);
  EXPECT_DOUBLE_EQ(transmission_cost(0, 1, half), 12.5);
  const auto same = make_network({node(0, Role::sensor, 2, 2), node(1, Role::base_station, 2, 2)}, 25, 1.0);
  EXPECT_EQ(transmission_cost(0, 1, same), 0.0);
}

TEST(Network, SeededBuildAndLayoutRoundTrip) {
  NetworkSpec spec;
  spec.seed = 11;
  const auto a = build_network(spec), b = build_network(spec);
  ASSERT_EQ(a.nodes.size(), 20u);
  for (std::size_t i = 0; i < a.nodes.size(); ++i) EXPECT_EQ(a.nodes[i].x, b.nodes[i].x);
  const auto c = parse_layout(layout_to_json(a));
  ASSERT_EQ(c.nodes.size(), a.nodes.size());
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    EXPECT_EQ(c.nodes[i].id, a.nodes[i].id);
    EXPECT_EQ(c.nodes[i].role, a.nodes[i].role);
    EXPECT_DOUBLE_EQ(c.nodes[i].x, a.nodes[i].x);
    EXPECT_DOUBLE_EQ(c.nodes[i].energy, a.nodes[i].energy);
  }
  EXPECT_EQ(c.edges, a.edges);
  EXPECT_THROW(parse_layout("{"), std::invalid_argument);
  EXPECT_THROW(parse_layout(R"({"nodes": 3})"), std::invalid_argument);

  const auto desk = load_layout(desk_path());
  EXPECT_EQ(desk.nodes.size(), 20u);
  EXPECT_TRUE(desk.connected);
}

TEST(Partition, SingleClusterIsWholeNetwork) {
  const auto net = load_layout(desk_path());
  const auto parts = partition(net, 1, 0);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0].nodes.size(), net.nodes.size());
  EXPECT_EQ(parts[0].edges.size(), net.edges.size());
}

TEST(Partition, RecoversSeparatedBlobs) {
  std::vector<Node> nodes;
  std::set<int> left;
  for (int i = 0; i < 5; ++i) {
    nodes.push_back(node(i, Role::sensor, i % 2, i / 2));
    left.insert(i);
  }
  for (int i = 5; i < 10; ++i) nodes.push_back(node(i, Role::sensor, 500 + i % 2, i / 2));
  nodes.push_back(node(10, Role::base_station, 501, 3));
  const auto net = make_network(nodes, 25, 0.05);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto parts = partition(net, 2, seed);
    ASSERT_EQ(parts.size(), 2u);
    for (const auto& p : parts) {
      const bool is_left = left.contains(p.nodes.front());
      for (int v : p.nodes) EXPECT_EQ(left.contains(v), is_left);
      EXPECT_EQ(p.nodes.size(), is_left ? 5u : 6u);
    }
  }
}

TEST(Partition, IsSetPartitionAndDeterministic) {
  const auto net = load_layout(desk_path());
  for (int k = 1; k <= 4; ++k) {
    const auto parts = partition(net, k, 7);
    std::vector<int> all;
    for (const auto& p : parts) {
      EXPECT_FALSE(p.nodes.empty());
      all.insert(all.end(), p.nodes.begin(), p.nodes.end());
      for (const Edge& e : p.edges) {
        EXPECT_TRUE(std::binary_search(p.nodes.begin(), p.nodes.end(), e.from));
        EXPECT_TRUE(std::binary_search(p.nodes.begin(), p.nodes.end(), e.to));
      }
    }
    std::sort(all.begin(), all.end());
    std::vector<int> expect(net.nodes.size());
    std::iota(expect.begin(), expect.end(), 0);
    EXPECT_EQ(all, expect);
    const auto again = partition(net, k, 7);
    for (std::size_t s = 0; s < parts.size(); ++s) EXPECT_EQ(parts[s].nodes, again[s].nodes);
  }
  EXPECT_THROW(partition(net, 0, 0), std::invalid_argument);
  EXPECT_THROW(partition(net, 21, 0), std::invalid_argument);
}

TEST(Qubo, SingleEdgeForcedFlow) {
  const auto net = make_network({node(0, Role::sensor, 0, 0), node(1, Role::base_station, 10, 0)}, 25, 0.05);
  QuboOptions opt;
  opt.flow = FlowModel::conservation;
  opt.demand = {1.0, -1.0};
  const auto q = build_qubo(net, {{0, 1}}, opt);
  EXPECT_LT(q.energy({1}), q.energy({0}));
  opt.flow = FlowModel::next_hop;
  const auto h = build_qubo(net, {{0, 1}}, opt);
  EXPECT_LT(h.energy({1}), h.energy({0}));
}

TEST(Qubo, NoPenaltiesGivesAllZeros) {
  const auto net = load_layout(desk_path());
  const auto g = partition(net, 1, 0).front();
  QuboOptions opt;
  opt.lambda_flow = 0.0;
  opt.lambda_energy = 0.0;
  const auto q = build_qubo(net, candidate_edges(net, g, 2, 8), opt);
  std::vector<int> arg;
  qubo_optimum(q, &arg);
  EXPECT_EQ(arg, std::vector<int>(q.size(), 0));
  EXPECT_THROW(build_qubo(net, {}, opt), std::invalid_argument);
}

TEST(Qubo, DiamondOptimumIsShortestPath) {
  // s=0 reaches t=3 through a=1 (cost 2*25*0.05) or b=2 (longer detour).
  const auto net = make_network({node(0, Role::sensor, 0, 0), node(1, Role::sensor, 5, 0), node(2, Role::sensor, 5, 12),
                                 node(3, Role::base_station, 10, 0)},
                                25, 0.05);
  const std::vector<Edge> vars{{0, 1}, {0, 2}, {1, 3}, {2, 3}};
  QuboOptions opt;
  opt.flow = FlowModel::conservation;
  opt.demand = {1.0, 0.0, 0.0, -1.0};
  opt.lambda_energy = 0.0;
  const auto q = build_qubo(net, vars, opt);
  std::vector<int> arg;
  qubo_optimum(q, &arg);
  EXPECT_EQ(arg, (std::vector<int>{1, 0, 1, 0}));
  const double path = transmission_cost(0, 1, net) + transmission_cost(1, 3, net);
  EXPECT_NEAR(q.energy(arg), path, 1e-9);
}

TEST(Qubo, SymmetricAndPenaltySufficient) {
  // Every brute-force optimum gives each non-sink source exactly one link.
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    NetworkSpec spec;
    spec.seed = seed;
    const auto net = build_network(spec);
    for (const auto& g : partition(net, 3, seed)) {
      const auto vars = candidate_edges(net, g, 2, 10);
      if (vars.empty()) continue;
      QuboOptions opt;
      opt.sinks = cluster_sinks(net, g);
      const auto q = build_qubo(net, vars, opt);
      for (std::size_t k = 0; k < q.size(); ++k) {
        EXPECT_EQ(q.quad[k][k], 0.0);
        for (std::size_t l = 0; l < q.size(); ++l) EXPECT_EQ(q.quad[k][l], q.quad[l][k]);
      }
      std::vector<int> arg;
      qubo_optimum(q, &arg);
      std::map<int, int> out;
      for (const Edge& e : vars) out[e.from] = 0;
      for (std::size_t k = 0; k < vars.size(); ++k) out[vars[k].from] += arg[k];
      for (const auto& [v, c] : out) EXPECT_EQ(c, 1) << "seed " << seed << " node " << v;
    }
  }
}

TEST(Candidates, PointTowardSinksWithinLimits) {
  const auto net = load_layout(desk_path());
  for (const auto& g : partition(net, 2, 3)) {
    const auto sinks = cluster_sinks(net, g);
    ASSERT_FALSE(sinks.empty());
    const auto vars = candidate_edges(net, g, 2, 10);
    EXPECT_LE(vars.size(), 10u);
    std::map<int, int> per;
    for (const Edge& e : vars) {
      EXPECT_TRUE(net.has_edge(e.from, e.to));
      EXPECT_TRUE(std::binary_search(g.nodes.begin(), g.nodes.end(), e.to));
      EXPECT_EQ(std::count(sinks.begin(), sinks.end(), e.from), 0);
      EXPECT_LE(++per[e.from], 2);
    }
  }
  EXPECT_THROW(candidate_edges(net, partition(net, 1, 0)[0], 0, 10), std::invalid_argument);
}

TEST(Ising, SingleVariableSubstitution) {
  RoutingQubo q;
  q.variables = {{0, 1}};
  q.linear = {1.0};
  q.quad = {{0.0}};
  const auto m = qubo_to_ising(q);
  EXPECT_DOUBLE_EQ(m.h[0], 0.5);
  EXPECT_DOUBLE_EQ(m.offset, 0.5);
}

TEST(Ising, ZeroQuboIsZeroIsing) {
  RoutingQubo q;
  q.variables.resize(3);
  q.linear.assign(3, 0.0);
  q.quad.assign(3, std::vector<double>(3, 0.0));
  const auto m = qubo_to_ising(q);
  for (double h : m.h) EXPECT_EQ(h, 0.0);
  for (const auto& row : m.J)
    for (double j : row) EXPECT_EQ(j, 0.0);
  EXPECT_EQ(m.offset, 0.0);
}

TEST(Ising, EnergiesAgreeExhaustivelyUpToTwelveVariables) {
  std::mt19937_64 rng(5);
  for (std::size_t m = 1; m <= 12; ++m) {
    const auto q = random_qubo(m, rng);
    const auto is = qubo_to_ising(q);
    double worst = 0.0;
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
      const auto x = bits_of(mask, m);
      worst = std::max(worst, std::abs(q.energy(x) - is.energy(bits_to_spins(x))));
      EXPECT_EQ(spins_to_bits(bits_to_spins(x)), x);
    }
    EXPECT_LT(worst, 1e-9) << m << " variables";
  }
}

TEST(Ising, PauliSumMatchesOnBasisStates) {
  std::mt19937_64 rng(8);
  const auto is = qubo_to_ising(random_qubo(4, rng));
  const PauliSum h = ising_to_pauli_sum(is);
  for (std::uint64_t b = 0; b < 16; ++b) {
    std::vector<GateInstance> g;
    std::vector<int> s(4);
    for (int q = 0; q < 4; ++q) {
      const bool one = b >> q & 1;
      if (one) g.push_back(gate::fixed(GateKind::X, q));
      s[static_cast<std::size_t>(q)] = one ? -1 : 1;
    }
    const StateVector psi = run(Circuit(4, g), {});
    EXPECT_NEAR(expectation(psi, h), is.energy(s), 1e-9);
  }
}

TEST(Solver, BruteForceSingleField) {
  IsingModel m;
  m.h = {1.0};
  m.J = {{0.0}};
  const auto r = brute_force_ising(m);
  EXPECT_EQ(r.spins, std::vector<int>{-1});
  EXPECT_DOUBLE_EQ(r.energy, -1.0);
  EXPECT_THROW(brute_force_ising(IsingModel{}), std::invalid_argument);
}

TEST(Solver, QaoaShapeAndFerromagneticPair) {
  IsingModel m;
  m.h = {0.0, 0.0};
  m.J = {{0.0, -1.0}, {-1.0, 0.0}};
  const Circuit c = qaoa_ansatz(m, 1);
  EXPECT_EQ(c.n_params(), 2);
  EXPECT_EQ(std::count_if(c.gates().begin(), c.gates().end(), [](const GateInstance& g) { return g.kind == GateKind::CNOT; }), 2);
  SolverConfig cfg;
  cfg.qaoa_layers = 1;
  const auto r = solve_subgraph(m, SubgraphSolver::qaoa, cfg);
  EXPECT_EQ(r.spins[0], r.spins[1]);
  EXPECT_DOUBLE_EQ(r.energy, -1.0);
  EXPECT_THROW(qaoa_ansatz(m, 0), std::invalid_argument);
}

TEST(Solver, TiledCellCoversEveryQubit) {
  const Circuit cell(2, {gate::free_rotation(GateKind::Rx, 0, 0), gate::free_rotation(GateKind::Rzz, 1, 0, 1)});
  const Circuit c = tile_cell(cell, 5, 1);
  // pairs (0,1) (2,3) (1,2) (3,4), two slots each
  EXPECT_EQ(c.n_params(), 8);
  EXPECT_EQ(c.size(), 8u);
  const Circuit only_second(2, {gate::free_rotation(GateKind::Rx, 0, 1)});
  const Circuit t = tile_cell(only_second, 3, 1);
  for (int q = 0; q < 3; ++q)
    EXPECT_TRUE(std::any_of(t.gates().begin(), t.gates().end(), [&](const GateInstance& g) { return g.acts_on(q); }));
  EXPECT_EQ(tile_cell(cell, 1, 2).size(), 2u);
  EXPECT_THROW(tile_cell(Circuit(3, {}), 4, 1), std::invalid_argument);
}

TEST(Solver, VariationalNeverBeatsBruteForce) {
  std::mt19937_64 rng(21);
  SolverConfig cfg;
  cfg.restarts = 4;
  for (int trial = 0; trial < 3; ++trial) {
    const auto m = qubo_to_ising(random_qubo(4, rng));
    const double opt = brute_force_ising(m).energy;
    for (auto s : {SubgraphSolver::qaoa, SubgraphSolver::qbsa}) {
      const auto r = solve_subgraph(m, s, cfg);
      EXPECT_GE(r.energy, opt - 1e-9);
      EXPECT_NEAR(r.energy, m.energy(r.spins), 1e-12);
      ASSERT_TRUE(r.ansatz.has_value());
    }
  }
  IsingModel big;
  big.h.assign(13, 1.0);
  big.J.assign(13, std::vector<double>(13, 0.0));
  EXPECT_THROW(solve_subgraph(big, SubgraphSolver::qaoa, cfg), std::invalid_argument);
  EXPECT_THROW(subgraph_solver_from_string("annealer"), std::invalid_argument);
}

TEST(Assembly, SingleClusterWithBaseStationNeedsNoBackbone) {
  const auto net = make_network(
      {node(0, Role::sensor, 0, 0), node(1, Role::sensor, 10, 0), node(2, Role::base_station, 20, 0)}, 15, 0.05);
  const auto parts = partition(net, 1, 0);
  const auto sol = assemble_solution(net, parts, {{{0, 1}, {1, 2}}});
  EXPECT_TRUE(sol.backbone.empty());
  EXPECT_TRUE(sol.patched.empty());
  EXPECT_TRUE(sol.flow_ok);
  EXPECT_TRUE(sol.unreachable.empty());
}

TEST(Assembly, ForcedInterClusterEdgeIsSelected) {
  // Two clusters whose only in-range crossing is 2 -> 3.
  const auto net = make_network({node(0, Role::sensor, 0, 0), node(1, Role::sensor, 10, 0), node(2, Role::cluster_head, 20, 0),
                                 node(3, Role::sensor, 40, 0), node(4, Role::base_station, 50, 0)},
                                20, 0.05);
  std::vector<Subgraph> parts(2);
  parts[0].nodes = {0, 1, 2};
  parts[1].nodes = {3, 4};
  const auto sol = assemble_solution(net, parts, {{{0, 1}, {1, 2}}, {{3, 4}}});
  EXPECT_EQ(sol.backbone, (std::vector<Edge>{{2, 3}}));
  EXPECT_TRUE(sol.flow_ok);
  EXPECT_NEAR(sol.total_energy, link_sum(net, sol.all_edges()), 1e-9);
}

TEST(Assembly, GreedyAndPipelineAreFeasibleTrees) {
  const auto net = load_layout(desk_path());
  const auto greedy = greedy_routing(net);
  EXPECT_TRUE(greedy.flow_ok);
  EXPECT_TRUE(greedy.energy_ok);
  EXPECT_TRUE(greedy.unreachable.empty());
  EXPECT_NEAR(greedy.total_energy, link_sum(net, greedy.all_edges()), 1e-9);
  PipelineConfig pc;
  pc.solver = SubgraphSolver::brute_force;
  const auto r = route_network(net, pc);
  EXPECT_TRUE(r.solution.flow_ok);
  EXPECT_TRUE(r.solution.unreachable.empty());
  EXPECT_NEAR(r.solution.total_energy, link_sum(net, r.solution.all_edges()), 1e-9);
  EXPECT_EQ(r.solution.all_edges().size(), net.nodes.size() - 1);
}

TEST(Assembly, TotalEnergyInvariantUnderRelabeling) {
  const auto net = load_layout(desk_path());
  std::vector<Node> shuffled = net.nodes;
  std::mt19937_64 rng(4);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].id = 100 + static_cast<int>(i) * 3;
  const auto other = make_network(shuffled, net.comm_range, net.epsilon);
  EXPECT_NEAR(greedy_routing(net).total_energy, greedy_routing(other).total_energy, 1e-9);
  PipelineConfig pc;
  pc.k = 1;
  pc.solver = SubgraphSolver::brute_force;
  EXPECT_NEAR(route_network(net, pc).solution.total_energy, route_network(other, pc).solution.total_energy, 1e-9);
}

TEST(Assembly, SolutionCsv) {
  const auto net = load_layout(desk_path());
  const auto sol = greedy_routing(net);
  std::ostringstream os;
  write_solution_csv(os, net, sol, "manifest.json");
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# manifest=manifest.json");
  std::getline(in, line);
  EXPECT_EQ(line, "from_id,to_id,cost,kind");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, static_cast<int>(sol.all_edges().size()));
  EXPECT_NE(solution_json(net, sol).find("total_energy"), std::string::npos);
}
