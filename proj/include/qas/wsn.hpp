#pragma once

// Sensor-network routing as QUBO subproblems solved per cluster, stitched
// together with a shortest-path backbone.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qas/circuit.hpp"
#include "qas/search.hpp"
#include "qas/simulator.hpp"
#include "qas/vqe.hpp"

namespace qas::wsn {

enum class Role { sensor, cluster_head, base_station };

const char* to_string(Role r);
Role role_from_string(const std::string& s);
/// Sensors 100, cluster heads 200, base station unbounded (infinity).
double default_energy(Role r);

struct Node {
  int id = 0;
  Role role = Role::sensor;
  double x = 0.0;
  double y = 0.0;
  double energy = 0.0;
};

/// Directed link between node indices (not ids).
struct Edge {
  int from = 0;
  int to = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct Network {
  std::vector<Node> nodes;
  double comm_range = 25.0;
  double epsilon = 0.05;
  std::vector<Edge> edges;                  // both directions of every in-range pair
  std::vector<std::vector<int>> neighbors;  // in-range node indices
  bool connected = true;                    // every node has some path to the base station

  int base_station() const;
  int index_of(int id) const;
  bool has_edge(int i, int j) const;
};

/// Builds edges, neighbor lists and the connectivity flag. Throws unless
/// there is exactly one base station and at least one sensor.
Network make_network(std::vector<Node> nodes, double comm_range, double epsilon);

struct NetworkSpec {
  int n_sensors = 16;
  int n_cluster_heads = 3;
  double width = 100.0;
  double height = 50.0;
  double comm_range = 25.0;
  double epsilon = 0.05;
  std::uint64_t seed = 0;
};

/// Uniform placement of sensors, cluster heads and one base station.
Network build_network(const NetworkSpec& spec);

/// {"comm_range": R, "epsilon": e, "nodes": [{"id", "role", "x", "y", "energy"?}]}
Network parse_layout(const std::string& json_text);
Network load_layout(const std::string& path);
std::string layout_to_json(const Network& net);

/// epsilon * squared distance.
double transmission_cost(int i, int j, const Network& net);

struct Subgraph {
  std::vector<int> nodes;   // node indices, ascending
  std::vector<Edge> edges;  // induced in-range links
};

/// k-means on coordinates with k-means++ seeding; an empty cluster triggers
/// a re-seed, up to `retries` times.
std::vector<Subgraph> partition(const Network& net, int k, std::uint64_t seed, int retries = 10);

/// Nodes that collect traffic inside a cluster: its cluster heads and the
/// base station, or failing both the member closest to the base station.
std::vector<int> cluster_sinks(const Network& net, const Subgraph& g);

/// Next-hop candidates inside a cluster: each non-sink node keeps up to
/// `per_node` cheapest links to members strictly closer to their nearest
/// sink. The cheapest candidates are kept until `max_vars` is reached.
std::vector<Edge> candidate_edges(const Network& net, const Subgraph& g, int per_node = 2, int max_vars = 10);

enum class FlowModel {
  next_hop,      // every non-sink node with candidates picks exactly one outgoing link
  conservation,  // (out - in - b_i)^2 per node with a supplied demand vector
};

struct QuboOptions {
  FlowModel flow = FlowModel::next_hop;
  double lambda_flow = -1.0;    // negative: automatic
  double lambda_energy = -1.0;  // negative: automatic
  std::vector<int> sinks;       // node indices exempt from the next-hop penalty
  std::vector<double> demand;   // per node index, conservation model only
};

struct RoutingQubo {
  std::vector<Edge> variables;            // x_k selects variables[k]
  std::vector<double> linear;             // a_k
  std::vector<std::vector<double>> quad;  // symmetric, zero diagonal; energy uses k < l
  double offset = 0.0;
  double lambda_flow = 0.0;
  double lambda_energy = 0.0;

  std::size_t size() const { return variables.size(); }
  double energy(const std::vector<int>& x) const;
};

/// Upper bound on any single path cost over the variables: the sum of each
/// source node's most expensive candidate.
double max_path_cost_bound(const Network& net, const std::vector<Edge>& variables);

/// Cost sum c_ij x_ij plus flow penalties and the per-node energy surrogate
/// lambda_energy * (sum_j c_ij x_ij / E_i)^2. Automatic weights are twice
/// max_path_cost_bound.
RoutingQubo build_qubo(const Network& net, const std::vector<Edge>& variables, const QuboOptions& opt);

struct IsingModel {
  std::vector<double> h;
  std::vector<std::vector<double>> J;  // symmetric, zero diagonal; energy uses i < j
  double offset = 0.0;

  std::size_t size() const { return h.size(); }
  double energy(const std::vector<int>& s) const;
};

/// x = (1 + s) / 2.
IsingModel qubo_to_ising(const RoutingQubo& q);
std::vector<int> spins_to_bits(const std::vector<int>& s);
std::vector<int> bits_to_spins(const std::vector<int>& x);

/// sum h_i Z_i + sum J_ij Z_i Z_j + offset; measuring bit b on qubit i
/// means s_i = 1 - 2b.
PauliSum ising_to_pauli_sum(const IsingModel& m);

enum class SubgraphSolver { brute_force, qaoa, qbsa };

const char* to_string(SubgraphSolver s);
SubgraphSolver subgraph_solver_from_string(const std::string& s);

struct SolverConfig {
  int qaoa_layers = 2;
  VqeConfig vqe;        // both variational solvers; 80 iterations by default
  int restarts = 12;    // independent VQE starts; the lowest final energy wins
  double qbsa_init_range = 3.14159265358979;
  int qbsa_cell_depth = 4;  // gates in the searched two-qubit cell
  int qbsa_layers = 1;      // brickwork repetitions of the cell
  SearchConfig search;      // architecture search settings for qbsa
  NoiseProfile search_noise = NoiseProfile::depolarizing(0.001, 0.01);
  std::uint64_t seed = 0;

  SolverConfig();
};

struct SubgraphResult {
  std::vector<int> spins;
  double energy = 0.0;
  std::optional<Circuit> ansatz;
};

SubgraphResult brute_force_ising(const IsingModel& m);

/// Standard alternating ansatz: H layer, then per layer a cost block
/// (CNOT-Rz-CNOT per coupling, Rz per field, angle 2*gamma*weight) and an
/// Rx(2*beta) mixer.
Circuit qaoa_ansatz(const IsingModel& m, int layers);

/// Architecture search over {H, Rx, Rz, Rzz} on two coupled qubits; cached
/// per (seed, cell depth).
Circuit discover_qbsa_cell(const SolverConfig& cfg);

/// Tiles a two-qubit cell over a line of n qubits: per layer, pairs (0,1),
/// (2,3), ... then (1,2), (3,4), ..., each copy with fresh parameters. A
/// qubit left without a gate gets a free Rx so every bit can flip.
Circuit tile_cell(const Circuit& cell, int n_qubits, int layers);

SubgraphResult solve_subgraph(const IsingModel& m, SubgraphSolver solver, const SolverConfig& cfg);

struct RoutingSolution {
  std::vector<Edge> intra;     // decoded from subgraph assignments
  std::vector<Edge> backbone;  // cluster sinks toward the base station
  std::vector<Edge> patched;   // added so every node reaches the base station
  double total_energy = 0.0;
  bool flow_ok = true;         // every non-base-station node has exactly one outgoing link
  bool energy_ok = true;       // every node's transmit cost is within its budget
  std::vector<int> unreachable;

  std::vector<Edge> all_edges() const;
};

/// Shortest-path tree toward the base station: parent[i] is the next hop
/// (-1 for the base station or unreachable nodes), dist[i] the path cost.
std::pair<std::vector<int>, std::vector<double>> shortest_path_tree(const Network& net);

/// `selected[s]` are the chosen links of subgraph s.
RoutingSolution assemble_solution(const Network& net, const std::vector<Subgraph>& parts,
                                  const std::vector<std::vector<Edge>>& selected);

/// Each node links to its cheapest neighbor strictly closer to the base
/// station, falling back to its shortest-path parent.
RoutingSolution greedy_routing(const Network& net);

struct PipelineConfig {
  int k = 2;
  SubgraphSolver solver = SubgraphSolver::qbsa;
  int per_node = 2;
  int max_vars = 10;
  QuboOptions qubo;
  SolverConfig solver_cfg;
  std::uint64_t seed = 0;
};

struct PipelineResult {
  std::vector<Subgraph> parts;
  std::vector<RoutingQubo> qubos;
  std::vector<SubgraphResult> assignments;
  RoutingSolution solution;
};

PipelineResult route_network(const Network& net, const PipelineConfig& cfg);

void write_solution_csv(std::ostream& os, const Network& net, const RoutingSolution& s,
                        const std::string& manifest_ref = "");
std::string solution_json(const Network& net, const RoutingSolution& s);

}  // namespace qas::wsn
