#include "qas/wsn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "qas/parallel.hpp"
#include "qas/random.hpp"
#include "qas/encoder.hpp"

namespace qas::wsn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double dist(const Node& a, const Node& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

const char* to_string(Role r) {
  switch (r) {
    case Role::sensor: return "sensor";
    case Role::cluster_head: return "cluster_head";
    case Role::base_station: return "base_station";
  }
  return "?";
}

Role role_from_string(const std::string& s) {
  if (s == "sensor") return Role::sensor;
  if (s == "cluster_head" || s == "ch") return Role::cluster_head;
  if (s == "base_station" || s == "bs") return Role::base_station;
  throw std::invalid_argument("unknown node role '" + s + "'");
}

double default_energy(Role r) {
  switch (r) {
    case Role::sensor: return 100.0;
    case Role::cluster_head: return 200.0;
    case Role::base_station: return kInf;
  }
  return 0.0;
}

int Network::base_station() const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].role == Role::base_station) return static_cast<int>(i);
  throw std::logic_error("network has no base station");
}

int Network::index_of(int id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return static_cast<int>(i);
  throw std::out_of_range("no node with id " + std::to_string(id));
}

bool Network::has_edge(int i, int j) const {
  const auto& nb = neighbors.at(static_cast<std::size_t>(i));
  return std::find(nb.begin(), nb.end(), j) != nb.end();
}

Network make_network(std::vector<Node> nodes, double comm_range, double epsilon) {
  if (!(comm_range > 0.0)) throw std::invalid_argument("communication range must be positive");
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  int bs = 0, sensors = 0;
  std::set<int> ids;
  for (auto& n : nodes) {
    bs += n.role == Role::base_station;
    sensors += n.role == Role::sensor;
    if (!ids.insert(n.id).second) throw std::invalid_argument("duplicate node id " + std::to_string(n.id));
    if (!(n.energy > 0.0)) n.energy = default_energy(n.role);
  }
  if (bs != 1) throw std::invalid_argument("network needs exactly one base station, found " + std::to_string(bs));
  if (sensors < 1) throw std::invalid_argument("network needs at least one sensor");

  Network net;
  net.nodes = std::move(nodes);
  net.comm_range = comm_range;
  net.epsilon = epsilon;
  const std::size_t n = net.nodes.size();
  net.neighbors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j || dist(net.nodes[i], net.nodes[j]) > comm_range) continue;
      net.neighbors[i].push_back(static_cast<int>(j));
      net.edges.push_back({static_cast<int>(i), static_cast<int>(j)});
    }
  }
  std::vector<char> seen(n, 0);
  std::vector<int> stack{net.base_station()};
  seen[static_cast<std::size_t>(stack[0])] = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : net.neighbors[static_cast<std::size_t>(v)])
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = 1;
        stack.push_back(w);
      }
  }
  net.connected = std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  return net;
}

Network build_network(const NetworkSpec& spec) {
  if (spec.n_sensors < 1 || spec.n_cluster_heads < 0) throw std::invalid_argument("invalid node counts");
  if (!(spec.width > 0.0 && spec.height > 0.0)) throw std::invalid_argument("deployment area must be positive");
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> ux(0.0, spec.width), uy(0.0, spec.height);
  std::vector<Node> nodes;
  int id = 0;
  auto add = [&](Role r) {
    Node n;
    n.id = id++;
    n.role = r;
    n.x = ux(rng);
    n.y = uy(rng);
    n.energy = default_energy(r);
    nodes.push_back(n);
  };
  for (int i = 0; i < spec.n_sensors; ++i) add(Role::sensor);
  for (int i = 0; i < spec.n_cluster_heads; ++i) add(Role::cluster_head);
  add(Role::base_station);
  return make_network(std::move(nodes), spec.comm_range, spec.epsilon);
}

Network parse_layout(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("layout is not valid JSON: ") + e.what());
  }
  if (!j.contains("nodes") || !j["nodes"].is_array()) throw std::invalid_argument("layout needs a 'nodes' array");
  std::vector<Node> nodes;
  for (const auto& r : j["nodes"]) {
    Node n;
    n.id = r.at("id").get<int>();
    n.role = role_from_string(r.at("role").get<std::string>());
    n.x = r.at("x").get<double>();
    n.y = r.at("y").get<double>();
    n.energy = r.contains("energy") ? r["energy"].get<double>() : default_energy(n.role);
    nodes.push_back(n);
  }
  return make_network(std::move(nodes), j.value("comm_range", 25.0), j.value("epsilon", 0.05));
}

Network load_layout(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open layout file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_layout(ss.str());
}

std::string layout_to_json(const Network& net) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : net.nodes) {
    nlohmann::json r = {{"id", n.id}, {"role", to_string(n.role)}, {"x", n.x}, {"y", n.y}};
    if (std::isfinite(n.energy)) r["energy"] = n.energy;
    nodes.push_back(r);
  }
  return nlohmann::json{{"comm_range", net.comm_range}, {"epsilon", net.epsilon}, {"nodes", nodes}}.dump(2);
}

double transmission_cost(int i, int j, const Network& net) {
  const Node& a = net.nodes.at(static_cast<std::size_t>(i));
  const Node& b = net.nodes.at(static_cast<std::size_t>(j));
  const double dx = a.x - b.x, dy = a.y - b.y;
  return net.epsilon * (dx * dx + dy * dy);
}

std::vector<Subgraph> partition(const Network& net, int k, std::uint64_t seed, int retries) {
  const std::size_t n = net.nodes.size();
  if (k < 1) throw std::invalid_argument("partition needs k >= 1");
  if (static_cast<std::size_t>(k) > n) throw std::invalid_argument("more clusters than nodes");
  std::vector<int> label(n, 0);
  bool ok = k == 1;
  for (int attempt = 0; !ok && attempt <= retries; ++attempt) {
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(attempt)}));
    std::vector<std::pair<double, double>> centers;
    centers.reserve(static_cast<std::size_t>(k));
    const auto first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    centers.emplace_back(net.nodes[first].x, net.nodes[first].y);
    while (centers.size() < static_cast<std::size_t>(k)) {
      std::vector<double> d2(n);
      for (std::size_t i = 0; i < n; ++i) {
        double best = kInf;
        for (auto [cx, cy] : centers) best = std::min(best, std::pow(net.nodes[i].x - cx, 2) + std::pow(net.nodes[i].y - cy, 2));
        d2[i] = best;
      }
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      std::size_t pick = 0;
      if (total > 0.0) {
        double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        for (pick = 0; pick + 1 < n && r >= d2[pick]; ++pick) r -= d2[pick];
      } else {
        pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      }
      centers.emplace_back(net.nodes[pick].x, net.nodes[pick].y);
    }
    for (int iter = 0; iter < 100; ++iter) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        double bd = kInf;
        for (int c = 0; c < k; ++c) {
          const auto [cx, cy] = centers[static_cast<std::size_t>(c)];
          const double d = std::pow(net.nodes[i].x - cx, 2) + std::pow(net.nodes[i].y - cy, 2);
          if (d < bd) {
            bd = d;
            best = c;
          }
        }
        changed = changed || label[i] != best || iter == 0;
        label[i] = best;
      }
      if (!changed) break;
      std::vector<double> sx(static_cast<std::size_t>(k), 0.0), sy(sx), cnt(sx);
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(label[i]);
        sx[c] += net.nodes[i].x;
        sy[c] += net.nodes[i].y;
        cnt[c] += 1.0;
      }
      for (std::size_t c = 0; c < centers.size(); ++c)
        if (cnt[c] > 0.0) centers[c] = {sx[c] / cnt[c], sy[c] / cnt[c]};
    }
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int l : label) ++sizes[static_cast<std::size_t>(l)];
    ok = std::all_of(sizes.begin(), sizes.end(), [](int s) { return s > 0; });
  }
  if (!ok) throw std::runtime_error("partition left a cluster empty after " + std::to_string(retries) + " re-seeds");

  std::vector<Subgraph> parts(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) parts[static_cast<std::size_t>(label[i])].nodes.push_back(static_cast<int>(i));
  for (const Edge& e : net.edges)
    if (label[static_cast<std::size_t>(e.from)] == label[static_cast<std::size_t>(e.to)])
      parts[static_cast<std::size_t>(label[static_cast<std::size_t>(e.from)])].edges.push_back(e);
  return parts;
}

std::vector<int> cluster_sinks(const Network& net, const Subgraph& g) {
  std::vector<int> sinks;
  for (int v : g.nodes)
    if (net.nodes[static_cast<std::size_t>(v)].role != Role::sensor) sinks.push_back(v);
  if (sinks.empty() && !g.nodes.empty()) {
    const Node& bs = net.nodes[static_cast<std::size_t>(net.base_station())];
    int best = g.nodes.front();
    for (int v : g.nodes)
      if (dist(net.nodes[static_cast<std::size_t>(v)], bs) < dist(net.nodes[static_cast<std::size_t>(best)], bs)) best = v;
    sinks.push_back(best);
  }
  return sinks;
}

std::vector<Edge> candidate_edges(const Network& net, const Subgraph& g, int per_node, int max_vars) {
  if (per_node < 1 || max_vars < 1) throw std::invalid_argument("candidate limits must be positive");
  const auto sinks = cluster_sinks(net, g);
  const std::set<int> sink_set(sinks.begin(), sinks.end());
  const std::set<int> members(g.nodes.begin(), g.nodes.end());
  auto to_sink = [&](int v) {
    double d = kInf;
    for (int s : sinks) d = std::min(d, dist(net.nodes[static_cast<std::size_t>(v)], net.nodes[static_cast<std::size_t>(s)]));
    return d;
  };

  // per source node: candidates sorted by cost
  std::vector<std::vector<std::pair<double, Edge>>> per_source;
  for (int v : g.nodes) {
    if (sink_set.contains(v)) continue;
    std::vector<std::pair<double, Edge>> c;
    const double dv = to_sink(v);
    for (int w : net.neighbors[static_cast<std::size_t>(v)])
      if (members.contains(w) && to_sink(w) < dv) c.push_back({transmission_cost(v, w, net), Edge{v, w}});
    std::sort(c.begin(), c.end());
    if (static_cast<int>(c.size()) > per_node) c.resize(static_cast<std::size_t>(per_node));
    if (!c.empty()) per_source.push_back(std::move(c));
  }

  std::vector<std::pair<double, Edge>> extra, first;
  for (const auto& c : per_source) {
    first.push_back(c.front());
    extra.insert(extra.end(), c.begin() + 1, c.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(extra.begin(), extra.end());
  const auto cap = static_cast<std::size_t>(max_vars);
  if (first.size() > cap) first.resize(cap);
  for (const auto& e : extra) {
    if (first.size() >= cap) break;
    first.push_back(e);
  }
  std::vector<Edge> out;
  for (const auto& [c, e] : first) out.push_back(e);
  std::sort(out.begin(), out.end());
  return out;
}

double RoutingQubo::energy(const std::vector<int>& x) const {
  if (x.size() != size()) throw std::invalid_argument("assignment length does not match the QUBO");
  double e = offset;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!x[k]) continue;
    e += linear[k];
    for (std::size_t l = k + 1; l < x.size(); ++l)
      if (x[l]) e += quad[k][l];
  }
  return e;
}

double max_path_cost_bound(const Network& net, const std::vector<Edge>& variables) {
  std::map<int, double> worst;
  for (const Edge& e : variables) {
    double& w = worst[e.from];
    w = std::max(w, transmission_cost(e.from, e.to, net));
  }
  double total = 0.0;
  for (const auto& [v, w] : worst) total += w;
  return total;
}

namespace {

// Adds lambda * (sum_k a_k x_k - b)^2.
void add_square_penalty(RoutingQubo& q, const std::vector<std::pair<std::size_t, double>>& terms, double b,
                        double lambda) {
  for (std::size_t u = 0; u < terms.size(); ++u) {
    const auto [k, a] = terms[u];
    q.linear[k] += lambda * (a * a - 2.0 * b * a);
    for (std::size_t v = u + 1; v < terms.size(); ++v) {
      const auto [l, c] = terms[v];
      q.quad[k][l] += 2.0 * lambda * a * c;
      q.quad[l][k] += 2.0 * lambda * a * c;
    }
  }
  q.offset += lambda * b * b;
}

}  // namespace

RoutingQubo build_qubo(const Network& net, const std::vector<Edge>& variables, const QuboOptions& opt) {
  if (variables.empty()) throw std::invalid_argument("build_qubo: subgraph has no candidate edges");
  const std::size_t m = variables.size();
  RoutingQubo q;
  q.variables = variables;
  q.linear.assign(m, 0.0);
  q.quad.assign(m, std::vector<double>(m, 0.0));
  const double bound = max_path_cost_bound(net, variables);
  q.lambda_flow = opt.lambda_flow < 0.0 ? 2.0 * bound : opt.lambda_flow;
  q.lambda_energy = opt.lambda_energy < 0.0 ? 2.0 * bound : opt.lambda_energy;

  std::vector<double> cost(m);
  for (std::size_t k = 0; k < m; ++k) {
    cost[k] = transmission_cost(variables[k].from, variables[k].to, net);
    q.linear[k] += cost[k];
  }

  std::map<int, std::vector<std::pair<std::size_t, double>>> incident, outgoing;
  for (std::size_t k = 0; k < m; ++k) {
    outgoing[variables[k].from].push_back({k, 1.0});
    incident[variables[k].from].push_back({k, 1.0});
    incident[variables[k].to].push_back({k, -1.0});
  }

  if (q.lambda_flow > 0.0) {
    if (opt.flow == FlowModel::next_hop) {
      const std::set<int> sinks(opt.sinks.begin(), opt.sinks.end());
      for (const auto& [v, terms] : outgoing)
        if (!sinks.contains(v)) add_square_penalty(q, terms, 1.0, q.lambda_flow);
    } else {
      std::vector<double> b = opt.demand;
      if (b.empty()) {
        b.assign(net.nodes.size(), 0.0);
        double produced = 0.0;
        for (const auto& [v, terms] : incident)
          if (net.nodes[static_cast<std::size_t>(v)].role == Role::sensor) {
            b[static_cast<std::size_t>(v)] = 1.0;
            produced += 1.0;
          }
        b[static_cast<std::size_t>(net.base_station())] = -produced;
      }
      if (b.size() != net.nodes.size()) throw std::invalid_argument("demand vector needs one entry per node");
      for (std::size_t v = 0; v < b.size(); ++v) {
        const auto it = incident.find(static_cast<int>(v));
        if (it == incident.end()) {
          q.offset += q.lambda_flow * b[v] * b[v];
          continue;
        }
        add_square_penalty(q, it->second, b[v], q.lambda_flow);
      }
    }
  }

  if (q.lambda_energy > 0.0) {
    for (const auto& [v, terms] : outgoing) {
      const double cap = net.nodes[static_cast<std::size_t>(v)].energy;
      if (!std::isfinite(cap)) continue;
      std::vector<std::pair<std::size_t, double>> scaled;
      for (auto [k, a] : terms) scaled.push_back({k, cost[k] / cap});
      add_square_penalty(q, scaled, 0.0, q.lambda_energy);
    }
  }
  return q;
}

double IsingModel::energy(const std::vector<int>& s) const {
  if (s.size() != size()) throw std::invalid_argument("spin vector length does not match the model");
  double e = offset;
  for (std::size_t i = 0; i < s.size(); ++i) {
    e += h[i] * s[i];
    for (std::size_t j = i + 1; j < s.size(); ++j) e += J[i][j] * s[i] * s[j];
  }
  return e;
}

IsingModel qubo_to_ising(const RoutingQubo& q) {
  const std::size_t m = q.size();
  IsingModel is;
  is.h.assign(m, 0.0);
  is.J.assign(m, std::vector<double>(m, 0.0));
  is.offset = q.offset;
  for (std::size_t k = 0; k < m; ++k) {
    is.h[k] += q.linear[k] / 2.0;
    is.offset += q.linear[k] / 2.0;
    for (std::size_t l = k + 1; l < m; ++l) {
      const double b = q.quad[k][l];
      is.J[k][l] = is.J[l][k] = b / 4.0;
      is.h[k] += b / 4.0;
      is.h[l] += b / 4.0;
      is.offset += b / 4.0;
    }
  }
  return is;
}

std::vector<int> spins_to_bits(const std::vector<int>& s) {
  std::vector<int> x(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) x[i] = s[i] > 0 ? 1 : 0;
  return x;
}

std::vector<int> bits_to_spins(const std::vector<int>& x) {
  std::vector<int> s(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) s[i] = x[i] ? 1 : -1;
  return s;
}

PauliSum ising_to_pauli_sum(const IsingModel& m) {
  if (m.size() == 0 || m.size() > 32) throw std::invalid_argument("Ising model size must be in [1, 32]");
  PauliSum h;
  h.n_qubits = static_cast<int>(m.size());
  if (m.offset != 0.0) h.terms.push_back({m.offset, 0u, 0u});
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.h[i] != 0.0) h.terms.push_back({m.h[i], 0u, std::uint32_t{1} << i});
    for (std::size_t j = i + 1; j < m.size(); ++j)
      if (m.J[i][j] != 0.0) h.terms.push_back({m.J[i][j], 0u, (std::uint32_t{1} << i) | (std::uint32_t{1} << j)});
  }
  return h;
}

const char* to_string(SubgraphSolver s) {
  switch (s) {
    case SubgraphSolver::brute_force: return "brute";
    case SubgraphSolver::qaoa: return "qaoa";
    case SubgraphSolver::qbsa: return "qbsa";
  }
  return "?";
}

SubgraphSolver subgraph_solver_from_string(const std::string& s) {
  if (s == "brute" || s == "brute_force") return SubgraphSolver::brute_force;
  if (s == "qaoa") return SubgraphSolver::qaoa;
  if (s == "qbsa") return SubgraphSolver::qbsa;
  throw std::invalid_argument("unknown subgraph solver '" + s + "' (expected brute, qaoa or qbsa)");
}

SolverConfig::SolverConfig() {
  vqe.max_iters = 80;
  search.steps = 40;
  search.batch = 4;
  search.n_pairs = 200;
  search.n_bins = 50;
  search.expr_trajectories = 2;
  search.pst_shots = 256;
}

SubgraphResult brute_force_ising(const IsingModel& m) {
  const std::size_t n = m.size();
  if (n == 0 || n > 20) throw std::invalid_argument("brute force handles 1 to 20 variables");
  SubgraphResult best;
  best.energy = kInf;
  std::vector<int> s(n);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    for (std::size_t i = 0; i < n; ++i) s[i] = (mask >> i & 1) ? -1 : 1;
    const double e = m.energy(s);
    if (e < best.energy) {
      best.energy = e;
      best.spins = s;
    }
  }
  return best;
}

Circuit qaoa_ansatz(const IsingModel& m, int layers) {
  if (layers < 1) throw std::invalid_argument("QAOA needs at least one layer");
  const int n = static_cast<int>(m.size());
  std::vector<GateInstance> g;
  for (int q = 0; q < n; ++q) g.push_back(gate::fixed(GateKind::H, q));
  for (int l = 0; l < layers; ++l) {
    const int gamma = 2 * l, beta = 2 * l + 1;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double w = m.J[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (w == 0.0) continue;
        g.push_back(gate::fixed(GateKind::CNOT, i, j));
        g.push_back(gate::free_rotation(GateKind::Rz, gamma, j, -1, 2.0 * w));
        g.push_back(gate::fixed(GateKind::CNOT, i, j));
      }
    for (int i = 0; i < n; ++i) {
      const double w = m.h[static_cast<std::size_t>(i)];
      if (w != 0.0) g.push_back(gate::free_rotation(GateKind::Rz, gamma, i, -1, 2.0 * w));
    }
    for (int i = 0; i < n; ++i) g.push_back(gate::free_rotation(GateKind::Rx, beta, i, -1, 2.0));
  }
  return Circuit(n, g, 2 * layers);
}

Circuit discover_qbsa_cell(const SolverConfig& cfg) {
  static std::mutex mu;
  static std::map<std::pair<std::uint64_t, int>, Circuit> cache;
  const auto key = std::make_pair(cfg.seed, cfg.qbsa_cell_depth);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  const DeviceTopology topo = DeviceTopology::line(2, {GateKind::H, GateKind::Rx, GateKind::Rz}, {GateKind::Rzz});
  const OperationPool pool = build_pool(topo, {GateKind::H, GateKind::Rx, GateKind::Rz, GateKind::Rzz});
  SearchConfig sc = cfg.search;
  sc.seed = cfg.seed;
  EncoderConfig enc;
  enc.max_depth = cfg.qbsa_cell_depth;
  enc.n_feat_qubits = 2;
  enc.n_ffn_qubits = 2;
  enc.ffn_layers = 1;
  const SearchResult r = run_search(pool, topo, sc, enc, cfg.search_noise);
  std::lock_guard lock(mu);
  cache.emplace(key, r.best);
  return r.best;
}

Circuit tile_cell(const Circuit& cell, int n_qubits, int layers) {
  if (cell.n_qubits() != 2) throw std::invalid_argument("tile_cell expects a two-qubit cell");
  if (n_qubits < 1 || layers < 1) throw std::invalid_argument("tile_cell needs n_qubits >= 1 and layers >= 1");
  std::vector<GateInstance> g;
  int slot = 0;
  auto place = [&](int a, int b) {
    std::map<int, int> fresh;
    for (GateInstance x : cell.gates()) {
      if (b < 0 && (x.arity() == 2 || x.qubits[0] == 1)) continue;
      x.qubits[0] = x.qubits[0] == 0 ? a : b;
      if (x.arity() == 2) x.qubits[1] = x.qubits[1] == 0 ? a : b;
      if (x.slot >= 0) {
        auto [it, added] = fresh.try_emplace(x.slot, slot);
        if (added) ++slot;
        x.slot = it->second;
      }
      g.push_back(x);
    }
  };
  if (n_qubits == 1) {
    for (int l = 0; l < layers; ++l) place(0, -1);
  } else {
    for (int l = 0; l < layers; ++l)
      for (int offset : {0, 1})
        for (int q = offset; q + 1 < n_qubits; q += 2) place(q, q + 1);
  }
  for (int q = 0; q < n_qubits; ++q) {
    const bool idle = std::none_of(g.begin(), g.end(), [&](const GateInstance& x) { return x.acts_on(q); });
    if (idle) g.push_back(gate::free_rotation(GateKind::Rx, slot++, q));
  }
  return Circuit(n_qubits, g, slot);
}

SubgraphResult solve_subgraph(const IsingModel& m, SubgraphSolver solver, const SolverConfig& cfg) {
  if (solver == SubgraphSolver::brute_force) return brute_force_ising(m);
  const std::size_t n = m.size();
  if (n == 0 || n > 12) throw std::invalid_argument("variational solvers handle 1 to 12 variables");
  if (cfg.restarts < 1) throw std::invalid_argument("restarts must be at least 1");

  const Circuit ansatz = solver == SubgraphSolver::qaoa ? qaoa_ansatz(m, cfg.qaoa_layers)
                                                        : tile_cell(discover_qbsa_cell(cfg), static_cast<int>(n), cfg.qbsa_layers);
  MolecularProblem prob;
  prob.name = "subgraph";
  prob.hamiltonian = ising_to_pauli_sum(m);
  prob.n_qubits = static_cast<int>(n);

  VqeResult best;
  bool have = false;
  for (int r = 0; r < cfg.restarts; ++r) {
    VqeConfig vc = cfg.vqe;
    vc.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(r)});
    if (solver == SubgraphSolver::qbsa) vc.init_range = cfg.qbsa_init_range;
    VqeResult res = run_vqe(prob, ansatz, vc);
    if (!have || res.best_energy < best.best_energy) {
      best = std::move(res);
      have = true;
    }
  }
  const StateVector psi = run(ansatz, best.best_theta);
  const auto probs = psi.probabilities();
  const auto idx = static_cast<std::uint64_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  SubgraphResult out;
  out.spins.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.spins[i] = (idx >> i & 1) ? -1 : 1;
  out.energy = m.energy(out.spins);
  out.ansatz = ansatz;
  return out;
}

std::vector<Edge> RoutingSolution::all_edges() const {
  std::vector<Edge> e = intra;
  e.insert(e.end(), backbone.begin(), backbone.end());
  e.insert(e.end(), patched.begin(), patched.end());
  return e;
}

std::pair<std::vector<int>, std::vector<double>> shortest_path_tree(const Network& net) {
  const std::size_t n = net.nodes.size();
  std::vector<int> parent(n, -1);
  std::vector<double> d(n, kInf);
  const int bs = net.base_station();
  d[static_cast<std::size_t>(bs)] = 0.0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  pq.push({0.0, bs});
  while (!pq.empty()) {
    const auto [dv, v] = pq.top();
    pq.pop();
    if (dv > d[static_cast<std::size_t>(v)]) continue;
    // w -> v is a link toward the base station
    for (int w : net.neighbors[static_cast<std::size_t>(v)]) {
      const double nd = dv + transmission_cost(w, v, net);
      if (nd < d[static_cast<std::size_t>(w)]) {
        d[static_cast<std::size_t>(w)] = nd;
        parent[static_cast<std::size_t>(w)] = v;
        pq.push({nd, w});
      }
    }
  }
  return {parent, d};
}

namespace {

// Nodes with a directed path to the base station over `edges`.
std::vector<char> reaches_base(const Network& net, const std::set<Edge>& edges) {
  const std::size_t n = net.nodes.size();
  std::vector<std::vector<int>> into(n);
  for (const Edge& e : edges) into[static_cast<std::size_t>(e.to)].push_back(e.from);
  std::vector<char> r(n, 0);
  std::vector<int> stack{net.base_station()};
  r[static_cast<std::size_t>(stack[0])] = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : into[static_cast<std::size_t>(v)])
      if (!r[static_cast<std::size_t>(w)]) {
        r[static_cast<std::size_t>(w)] = 1;
        stack.push_back(w);
      }
  }
  return r;
}

// Walks from each start node toward the base station. A node with a chosen
// next hop follows it; a node without one gets its shortest-path parent,
// recorded in `out`. A walk that revisits a node swaps that node's next hop
// for its shortest-path parent, which breaks the cycle.
void connect_along_tree(const Network& net, const std::vector<int>& starts, const std::vector<int>& parent,
                        std::set<Edge>& chosen, std::vector<Edge>& out) {
  const int bs = net.base_station();
  std::vector<int> next(net.nodes.size(), -1);
  for (const Edge& e : chosen) next[static_cast<std::size_t>(e.from)] = e.to;
  auto reach = reaches_base(net, chosen);
  for (int s : starts) {
    std::set<int> seen;
    int cur = s;
    while (cur != bs && !reach[static_cast<std::size_t>(cur)]) {
      const int p = parent[static_cast<std::size_t>(cur)];
      int& nx = next[static_cast<std::size_t>(cur)];
      const bool cycle = !seen.insert(cur).second;
      if (nx < 0 || (cycle && nx != p)) {
        if (p < 0) break;
        if (nx >= 0) {
          const Edge old{cur, nx};
          chosen.erase(old);
          std::erase(out, old);
        }
        nx = p;
        const Edge e{cur, p};
        chosen.insert(e);
        out.push_back(e);
      } else if (cycle) {
        break;
      }
      cur = nx;
    }
    reach = reaches_base(net, chosen);
  }
}

void finalize(const Network& net, const std::set<Edge>& chosen, RoutingSolution& sol) {
  const std::size_t n = net.nodes.size();
  const int bs = net.base_station();
  for (auto* list : {&sol.intra, &sol.backbone, &sol.patched})
    std::erase_if(*list, [&](const Edge& e) { return !chosen.contains(e); });
  std::vector<int> out_deg(n, 0);
  std::vector<double> spent(n, 0.0);
  sol.total_energy = 0.0;
  for (const Edge& e : chosen) {
    const double c = transmission_cost(e.from, e.to, net);
    sol.total_energy += c;
    ++out_deg[static_cast<std::size_t>(e.from)];
    spent[static_cast<std::size_t>(e.from)] += c;
  }
  sol.flow_ok = true;
  sol.energy_ok = true;
  for (std::size_t v = 0; v < n; ++v) {
    const bool is_bs = static_cast<int>(v) == bs;
    if (out_deg[v] != (is_bs ? 0 : 1)) sol.flow_ok = false;
    if (spent[v] > net.nodes[v].energy) sol.energy_ok = false;
  }
  const auto reach = reaches_base(net, chosen);
  sol.unreachable.clear();
  for (std::size_t v = 0; v < n; ++v)
    if (!reach[v]) sol.unreachable.push_back(net.nodes[v].id);
}

std::vector<int> by_distance(const std::vector<int>& nodes, const std::vector<double>& d) {
  std::vector<int> s = nodes;
  std::stable_sort(s.begin(), s.end(), [&](int a, int b) { return d[static_cast<std::size_t>(a)] < d[static_cast<std::size_t>(b)]; });
  return s;
}

}  // namespace

RoutingSolution assemble_solution(const Network& net, const std::vector<Subgraph>& parts,
                                  const std::vector<std::vector<Edge>>& selected) {
  if (selected.size() != parts.size()) throw std::invalid_argument("need one selection per subgraph");
  const auto [parent, d] = shortest_path_tree(net);
  RoutingSolution sol;
  std::set<Edge> chosen;
  for (const auto& sel : selected)
    for (const Edge& e : sel)
      if (chosen.insert(e).second) sol.intra.push_back(e);

  const int bs = net.base_station();
  std::vector<int> sinks;
  for (const auto& g : parts)
    for (int s : cluster_sinks(net, g))
      if (s != bs) sinks.push_back(s);
  connect_along_tree(net, by_distance(sinks, d), parent, chosen, sol.backbone);

  std::vector<int> all(net.nodes.size());
  std::iota(all.begin(), all.end(), 0);
  connect_along_tree(net, by_distance(all, d), parent, chosen, sol.patched);
  finalize(net, chosen, sol);
  return sol;
}

RoutingSolution greedy_routing(const Network& net) {
  const auto [parent, d] = shortest_path_tree(net);
  const int bs = net.base_station();
  const Node& base = net.nodes[static_cast<std::size_t>(bs)];
  RoutingSolution sol;
  std::set<Edge> chosen;
  for (std::size_t v = 0; v < net.nodes.size(); ++v) {
    if (static_cast<int>(v) == bs) continue;
    const double dv = dist(net.nodes[v], base);
    int best = -1;
    double bc = kInf;
    for (int w : net.neighbors[v]) {
      if (dist(net.nodes[static_cast<std::size_t>(w)], base) >= dv) continue;
      const double c = transmission_cost(static_cast<int>(v), w, net);
      if (c < bc) {
        bc = c;
        best = w;
      }
    }
    if (best < 0) best = parent[v];
    if (best < 0) continue;
    const Edge e{static_cast<int>(v), best};
    if (chosen.insert(e).second) sol.intra.push_back(e);
  }
  std::vector<int> all(net.nodes.size());
  std::iota(all.begin(), all.end(), 0);
  connect_along_tree(net, by_distance(all, d), parent, chosen, sol.patched);
  finalize(net, chosen, sol);
  return sol;
}

PipelineResult route_network(const Network& net, const PipelineConfig& cfg) {
  PipelineResult res;
  res.parts = partition(net, cfg.k, cfg.seed);
  const std::size_t k = res.parts.size();
  res.qubos.resize(k);
  res.assignments.resize(k);
  std::vector<std::vector<Edge>> selected(k);
  std::vector<IsingModel> models(k);
  for (std::size_t s = 0; s < k; ++s) {
    const auto vars = candidate_edges(net, res.parts[s], cfg.per_node, cfg.max_vars);
    if (vars.empty()) continue;
    QuboOptions opt = cfg.qubo;
    opt.sinks = cluster_sinks(net, res.parts[s]);
    res.qubos[s] = build_qubo(net, vars, opt);
    models[s] = qubo_to_ising(res.qubos[s]);
  }
  // Discover the shared ansatz shapes before fanning out so each is searched once.
  parallel_for(k, [&](std::size_t s) {
    if (res.qubos[s].size() == 0) return;
    res.assignments[s] = solve_subgraph(models[s], cfg.solver, cfg.solver_cfg);
    const auto x = spins_to_bits(res.assignments[s].spins);
    for (std::size_t v = 0; v < x.size(); ++v)
      if (x[v]) selected[s].push_back(res.qubos[s].variables[v]);
  });
  res.solution = assemble_solution(net, res.parts, selected);
  return res;
}

void write_solution_csv(std::ostream& os, const Network& net, const RoutingSolution& s, const std::string& manifest_ref) {
  if (!manifest_ref.empty()) os << "# manifest=" << manifest_ref << "\n";
  os << "from_id,to_id,cost,kind\n";
  auto emit = [&](const std::vector<Edge>& edges, const char* kind) {
    for (const Edge& e : edges)
      os << net.nodes[static_cast<std::size_t>(e.from)].id << ',' << net.nodes[static_cast<std::size_t>(e.to)].id << ','
         << format_double(transmission_cost(e.from, e.to, net)) << ',' << kind << "\n";
  };
  emit(s.intra, "intra");
  emit(s.backbone, "backbone");
  emit(s.patched, "patched");
}

std::string solution_json(const Network& net, const RoutingSolution& s) {
  auto ids = [&](const std::vector<Edge>& edges) {
    nlohmann::json a = nlohmann::json::array();
    for (const Edge& e : edges)
      a.push_back({net.nodes[static_cast<std::size_t>(e.from)].id, net.nodes[static_cast<std::size_t>(e.to)].id});
    return a;
  };
  nlohmann::json j = {{"total_energy", s.total_energy}, {"flow_ok", s.flow_ok},   {"energy_ok", s.energy_ok},
                      {"unreachable", s.unreachable},   {"intra", ids(s.intra)}, {"backbone", ids(s.backbone)},
                      {"patched", ids(s.patched)}};
  return j.dump(2);
}

}  // namespace qas::wsn
