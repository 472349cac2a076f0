#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qas/circopt.hpp"
#include "qas/circuit.hpp"
#include "qas/encoder.hpp"
#include "qas/parallel.hpp"
#include "qas/search.hpp"
#include "qas/selfcheck.hpp"
#include "qas/simulator.hpp"
#include "qas/vqe.hpp"
#include "qas/wsn.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qas;

namespace {

constexpr const char* kVersion = "qas 0.1.0";
constexpr const char* kManifestName = "manifest.json";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

/// Collects the provenance of one run and writes it next to the outputs.
class Manifest {
 public:
  Manifest(std::string command, fs::path out_dir) : out_dir_(std::move(out_dir)) {
    j_["command"] = std::move(command);
    j_["version"] = kVersion;
    j_["inputs"] = json::array();
    j_["outputs"] = json::array();
  }

  void config(json c) { j_["config"] = std::move(c); }
  void seed(const std::string& name, std::uint64_t v) { j_["seeds"][name] = v; }
  void input(const std::string& path) {
    j_["inputs"].push_back({{"path", path}, {"fnv1a64", fnv1a_hex(read_file(path))}});
  }

  /// Writes text to out_dir/name and records it.
  void output(const std::string& name, const std::string& text) {
    std::ofstream(out_dir_ / name, std::ios::binary) << text;
    j_["outputs"].push_back(name);
  }

  void save() const { std::ofstream(out_dir_ / kManifestName) << j_.dump(2) << "\n"; }

 private:
  fs::path out_dir_;
  json j_;
};

fs::path prepare_out_dir(const std::string& flag) {
  std::string dir = flag;
  if (dir.empty()) {
    const char* env = std::getenv("QAS_OUT_DIR");
    dir = env && *env ? env : "qas_out";
  }
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::set<GateKind> parse_kinds(const std::string& list) {
  std::set<GateKind> kinds;
  for (const auto& name : split_list(list)) {
    const auto k = gate_kind_from_name(name);
    if (!k) throw std::invalid_argument("unknown gate kind '" + name + "' in --pool-kinds");
    kinds.insert(*k);
  }
  if (kinds.empty()) throw std::invalid_argument("--pool-kinds is empty");
  return kinds;
}

std::string join_kinds(const std::set<GateKind>& kinds) {
  std::string s;
  for (GateKind k : kinds) {
    if (!s.empty()) s += ',';
    s += gate_info(k).name;
  }
  return s;
}

json encoder_to_json(const EncoderConfig& e) {
  return {{"max_depth", e.max_depth},     {"rank", e.rank},
          {"n_heads", e.n_heads},         {"n_feat_qubits", e.n_feat_qubits},
          {"n_ffn_qubits", e.n_ffn_qubits}, {"ffn_layers", e.ffn_layers},
          {"tau_attn", e.tau_attn},       {"dropout", e.dropout},
          {"positional_encoding", e.positional_encoding}, {"mode", to_string(e.mode)},
          {"init_std", e.init_std}};
}

EncoderConfig encoder_from_json(const json& j, EncoderConfig e) {
  for (const auto& [key, v] : j.items()) {
    if (key == "max_depth") e.max_depth = v.get<int>();
    else if (key == "rank") e.rank = v.get<int>();
    else if (key == "n_heads") e.n_heads = v.get<int>();
    else if (key == "n_feat_qubits") e.n_feat_qubits = v.get<int>();
    else if (key == "n_ffn_qubits") e.n_ffn_qubits = v.get<int>();
    else if (key == "ffn_layers") e.ffn_layers = v.get<int>();
    else if (key == "tau_attn") e.tau_attn = v.get<double>();
    else if (key == "dropout") e.dropout = v.get<double>();
    else if (key == "positional_encoding") e.positional_encoding = v.get<bool>();
    else if (key == "mode") e.mode = encoder_mode_from_string(v.get<std::string>());
    else if (key == "init_std") e.init_std = v.get<double>();
    else throw std::invalid_argument("unknown encoder config key '" + key + "'");
  }
  return e;
}

NoiseProfile noise_from_json(const json& j) {
  return j.is_string() ? load_noise_profile(j.get<std::string>()) : parse_noise_profile(j.dump());
}

/// A config file, or a manifest whose "config" snapshot is reused.
json load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (j.contains("command") && j.contains("config")) return j["config"];
  return j;
}

// ---------------------------------------------------------------- search

struct SearchArgs {
  std::string config, kinds = "x,rx,rz,cz", topology = "line", noise, out, encoder_mode;
  int qubits = 4, depth = 8, steps = 0, batch = 0;
  std::uint64_t seed = 0;
  bool noiseless = false;
};

int cmd_search(const SearchArgs& a, const CLI::App& sub) {
  json cfg_file = a.config.empty() ? json::object() : load_config(a.config);
  std::string kinds = a.kinds, topology = a.topology;
  int qubits = a.qubits;
  EncoderConfig enc;
  enc.max_depth = a.depth;
  NoiseProfile noise = NoiseProfile::depolarizing(0.001, 0.01);

  if (cfg_file.contains("pool")) {
    const auto& p = cfg_file["pool"];
    kinds = p.value("kinds", kinds);
    qubits = p.value("qubits", qubits);
    topology = p.value("topology", topology);
  }
  if (cfg_file.contains("encoder")) enc = encoder_from_json(cfg_file["encoder"], enc);
  if (cfg_file.contains("noise")) noise = noise_from_json(cfg_file["noise"]);
  json search_part = cfg_file;
  search_part.erase("pool");
  search_part.erase("noise");
  SearchConfig sc = parse_search_config(search_part.dump());

  // flags win over the config file
  if (sub.count("--pool-kinds")) kinds = a.kinds;
  if (sub.count("--qubits")) qubits = a.qubits;
  if (sub.count("--topology")) topology = a.topology;
  if (sub.count("--depth")) enc.max_depth = a.depth;
  if (sub.count("--encoder-mode")) enc.mode = encoder_mode_from_string(a.encoder_mode);
  if (sub.count("--steps")) sc.steps = a.steps;
  if (sub.count("--batch")) sc.batch = a.batch;
  if (sub.count("--seed")) sc.seed = a.seed;
  if (sub.count("--noise")) noise = load_noise_profile(a.noise);
  if (a.noiseless) noise = NoiseProfile{};
  sc.validate();

  const std::set<GateKind> ks = parse_kinds(kinds);
  std::set<GateKind> one, two;
  for (GateKind k : ks) (gate_info(k).arity == 1 ? one : two).insert(k);
  DeviceTopology topo;
  if (topology == "line") topo = DeviceTopology::line(qubits, one, two);
  else if (topology == "all") topo = DeviceTopology::all_to_all(qubits, one, two);
  else throw std::invalid_argument("--topology must be 'line' or 'all'");
  const OperationPool pool = build_pool(topo, ks);
  enc.pool_size = static_cast<int>(pool.size());
  enc.validate();

  const fs::path out = prepare_out_dir(a.out);
  Manifest m("search", out);
  json snapshot = json::parse(search_config_to_json(sc));
  snapshot["pool"] = {{"kinds", join_kinds(ks)}, {"qubits", qubits}, {"topology", topology}};
  snapshot["encoder"] = encoder_to_json(enc);
  snapshot["noise"] = json::parse(noise_profile_to_json(noise));
  m.config(snapshot);
  m.seed("search", sc.seed);
  if (!a.config.empty()) m.input(a.config);

  std::cerr << "search: " << pool.size() << " pool entries, D=" << enc.max_depth << ", " << sc.steps << " steps\n";
  const SearchResult r = run_search(pool, topo, sc, enc, noise);

  std::ostringstream trace;
  write_trace_csv(trace, r.trace, kManifestName);
  m.output("best.qc", serialize_circuit(r.best));
  m.output("final_argmax.qc", serialize_circuit(r.final_argmax));
  m.output("trace.csv", trace.str());
  m.output("search_report.json", search_report_json(r, pool) + "\n");
  m.output("encoder.json", save_encoder(r.encoder) + "\n");
  m.save();
  std::cout << "best cost " << format_double(r.best_eval.cost) << " at step " << r.best_step << ", "
            << r.best.size() << " gates, written to " << (out / "best.qc").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------- optimize

struct OptimizeArgs {
  std::string in, mode = "conservative", out;
  double epsilon = 1e-8;
  int max_passes = 50;
  bool no_verify = false;
};

int cmd_optimize(const OptimizeArgs& a) {
  OptConfig cfg;
  cfg.mode = opt_mode_from_string(a.mode);
  cfg.angle_epsilon = a.epsilon;
  cfg.max_passes = a.max_passes;
  cfg.validate();
  const Circuit c = parse_circuit(read_file(a.in));
  auto [opt, report] = optimize_fixpoint(c, cfg);
  if (!a.no_verify && c.n_qubits() <= kMaxDenseQubits) report.equivalent = verify_equivalence(c, opt);

  const fs::path out = prepare_out_dir(a.out);
  Manifest m("optimize", out);
  m.config({{"mode", to_string(cfg.mode)}, {"angle_epsilon", cfg.angle_epsilon}, {"max_passes", cfg.max_passes}});
  m.input(a.in);
  m.output("optimized.qc", serialize_circuit(opt));
  m.output("opt_report.json", opt_report_json(report) + "\n");
  m.save();
  std::cout << "gates " << report.before.gate_count << " -> " << report.after.gate_count << ", depth "
            << report.before.depth << " -> " << report.after.depth << ", passes " << report.passes.size()
            << (report.equivalent ? (*report.equivalent ? ", equivalent" : ", NOT EQUIVALENT") : "") << "\n";
  return report.equivalent.value_or(true) ? 0 : 1;
}

// ---------------------------------------------------------------- vqe

struct VqeArgs {
  std::string problem, ansatz, init = "small_uniform", noise, out;
  int iters = 300, trajectories = 0;
  long shots = 0;
  double lr = 0.1, init_range = 0.1;
  std::uint64_t seed = 0;
};

int cmd_vqe(const VqeArgs& a) {
  const MolecularProblem p = load_problem(a.problem);
  const Circuit ansatz = parse_circuit(read_file(a.ansatz));
  VqeConfig cfg;
  cfg.max_iters = a.iters;
  cfg.learning_rate = a.lr;
  cfg.init_range = a.init_range;
  cfg.seed = a.seed;
  if (a.init == "zeros") cfg.init = ThetaInit::zeros;
  else if (a.init != "small_uniform") throw std::invalid_argument("--init must be 'small_uniform' or 'zeros'");
  if (!a.noise.empty()) cfg.noise = load_noise_profile(a.noise);
  if (a.trajectories > 0) cfg.eval.trajectories = a.trajectories;
  cfg.eval.shots = a.shots;
  cfg.validate();

  const fs::path out = prepare_out_dir(a.out);
  Manifest m("vqe", out);
  m.config({{"max_iters", cfg.max_iters},
            {"learning_rate", cfg.learning_rate},
            {"init", a.init},
            {"init_range", cfg.init_range},
            {"noise", cfg.noise ? json::parse(noise_profile_to_json(*cfg.noise)) : json(nullptr)},
            {"trajectories", cfg.eval.trajectories},
            {"shots", cfg.eval.shots}});
  m.seed("vqe", cfg.seed);
  m.input(a.problem);
  m.input(a.ansatz);

  const VqeResult r = run_vqe(p, ansatz, cfg);
  std::ostringstream trace;
  write_vqe_trace_csv(trace, r, kManifestName);
  m.output("vqe_trace.csv", trace.str());
  m.output("vqe_report.json", vqe_report_json(r, p) + "\n");
  m.output("ansatz_bound.qc", serialize_circuit(bind_parameters(ansatz, r.best_theta)));
  m.save();
  const EnergyError e = energy_error(r, p);
  std::cout << p.name << ": E = " << format_double(r.best_energy) << ", reference " << format_double(p.reference_energy)
            << ", delta E = " << format_double(e.delta) << (e.chemical_quality ? " (< 0.1 Ha)" : " (>= 0.1 Ha)")
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- wsn

struct WsnArgs {
  std::string layout, solver = "qbsa", out;
  int k = 2, per_node = 2, max_vars = 10, qaoa_layers = 2, restarts = 12;
  std::uint64_t seed = 0;
};

int cmd_wsn(const WsnArgs& a) {
  const wsn::Network net = wsn::load_layout(a.layout);
  if (!net.connected) std::cerr << "warning: some nodes have no path to the base station\n";
  const fs::path out = prepare_out_dir(a.out);
  Manifest m("wsn", out);
  m.config({{"k", a.k}, {"solver", a.solver}, {"per_node", a.per_node}, {"max_vars", a.max_vars},
            {"qaoa_layers", a.qaoa_layers}, {"restarts", a.restarts}});
  m.seed("wsn", a.seed);
  m.input(a.layout);

  const wsn::RoutingSolution greedy = wsn::greedy_routing(net);
  wsn::RoutingSolution sol;
  if (a.solver == "greedy") {
    sol = greedy;
  } else {
    wsn::PipelineConfig pc;
    pc.k = a.k;
    pc.solver = wsn::subgraph_solver_from_string(a.solver);
    pc.per_node = a.per_node;
    pc.max_vars = a.max_vars;
    pc.seed = a.seed;
    pc.solver_cfg.qaoa_layers = a.qaoa_layers;
    pc.solver_cfg.restarts = a.restarts;
    pc.solver_cfg.seed = a.seed;
    sol = wsn::route_network(net, pc).solution;
  }
  std::ostringstream csv;
  wsn::write_solution_csv(csv, net, sol, kManifestName);
  json summary = json::parse(wsn::solution_json(net, sol));
  summary["solver"] = a.solver;
  summary["greedy_total_energy"] = greedy.total_energy;
  summary["links_in_network"] = net.edges.size();
  m.output("wsn_solution.csv", csv.str());
  m.output("wsn_solution.json", summary.dump(2) + "\n");
  m.save();
  std::cout << a.solver << ": total energy " << format_double(sol.total_energy) << " (greedy "
            << format_double(greedy.total_energy) << "), flow " << (sol.flow_ok ? "ok" : "violated") << ", energy "
            << (sol.energy_ok ? "ok" : "violated") << ", unreachable " << sol.unreachable.size() << "\n";
  return sol.unreachable.empty() ? 0 : 1;
}

// ---------------------------------------------------------------- check

int cmd_check(std::uint64_t seed) {
  int failures = 0;
  auto print = [&](const CheckLine& l) {
    failures += !l.passed;
    std::cout << (l.passed ? "[PASS] " : "[FAIL] ") << l.name << ": " << format_double(l.value) << " (tol "
              << format_double(l.tolerance) << ")" << (l.detail.empty() ? "" : ", " + l.detail) << "\n";
  };
  for (const auto& l : primitive_gradient_checks(seed)) print(l);
  EncoderConfig enc;
  enc.max_depth = 4;
  enc.pool_size = 6;
  enc.n_heads = 2;
  enc.n_feat_qubits = 2;
  enc.ffn_layers = 1;
  for (EncoderMode mode : {EncoderMode::qbsa, EncoderMode::classical_attention, EncoderMode::identity}) {
    enc.mode = mode;
    print(encoder_gradient_check(enc, seed));
  }
  for (const auto& l : invariant_checks(seed)) print(l);
  std::cout << (failures == 0 ? "all checks passed" : std::to_string(failures) + " check(s) failed") << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantum architecture search, circuit optimization, VQE and WSN routing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads for batch evaluation (0 = all cores)")->capture_default_str();

  SearchArgs sa;
  auto* search = app.add_subcommand("search", "Run the architecture search and write the best circuit");
  search->add_option("--config", sa.config, "JSON config (or a previous manifest); flags win")->check(CLI::ExistingFile);
  search->add_option("--pool-kinds", sa.kinds, "Comma-separated gate kinds")->capture_default_str();
  search->add_option("--qubits", sa.qubits)->check(CLI::Range(1, 16))->capture_default_str();
  search->add_option("--topology", sa.topology, "line or all")->capture_default_str();
  search->add_option("--depth", sa.depth, "Circuit depth D")->check(CLI::PositiveNumber)->capture_default_str();
  search->add_option("--steps", sa.steps)->check(CLI::PositiveNumber);
  search->add_option("--batch", sa.batch)->check(CLI::PositiveNumber);
  search->add_option("--seed", sa.seed);
  search->add_option("--encoder-mode", sa.encoder_mode, "qbsa, classical or identity");
  search->add_option("--noise", sa.noise, "Noise profile JSON")->check(CLI::ExistingFile);
  search->add_flag("--noiseless", sa.noiseless, "Evaluate candidates without noise");
  search->add_option("--out", sa.out, "Output directory (default $QAS_OUT_DIR or ./qas_out)");

  OptimizeArgs oa;
  auto* optimize = app.add_subcommand("optimize", "Simplify a circuit with the rewrite passes");
  optimize->add_option("--in", oa.in, "Circuit file")->required()->check(CLI::ExistingFile);
  optimize->add_option("--mode", oa.mode, "conservative or aggressive")->capture_default_str();
  optimize->add_option("--epsilon", oa.epsilon, "Angles below this are dropped")->capture_default_str();
  optimize->add_option("--max-passes", oa.max_passes)->check(CLI::PositiveNumber)->capture_default_str();
  optimize->add_flag("--no-verify", oa.no_verify, "Skip the equivalence check");
  optimize->add_option("--out", oa.out, "Output directory");

  VqeArgs va;
  auto* vqe = app.add_subcommand("vqe", "Minimize a Hamiltonian's energy over an ansatz");
  vqe->add_option("--problem", va.problem, "Hamiltonian file")->required()->check(CLI::ExistingFile);
  vqe->add_option("--ansatz", va.ansatz, "Circuit file")->required()->check(CLI::ExistingFile);
  vqe->add_option("--iters", va.iters)->check(CLI::PositiveNumber)->capture_default_str();
  vqe->add_option("--lr", va.lr)->capture_default_str();
  vqe->add_option("--init", va.init, "small_uniform or zeros")->capture_default_str();
  vqe->add_option("--init-range", va.init_range)->capture_default_str();
  vqe->add_option("--seed", va.seed);
  vqe->add_option("--noise", va.noise, "Noise profile JSON")->check(CLI::ExistingFile);
  vqe->add_option("--trajectories", va.trajectories, "Noisy trajectories per evaluation");
  vqe->add_option("--shots", va.shots, "Shots per term (0 = exact expectations)");
  vqe->add_option("--out", va.out, "Output directory");

  WsnArgs wa;
  auto* wsn_cmd = app.add_subcommand("wsn", "Route a sensor network");
  wsn_cmd->add_option("--layout", wa.layout, "Network layout JSON")->required()->check(CLI::ExistingFile);
  wsn_cmd->add_option("--k", wa.k, "Number of clusters")->check(CLI::PositiveNumber)->capture_default_str();
  wsn_cmd->add_option("--solver", wa.solver, "qbsa, qaoa, greedy or brute")->capture_default_str();
  wsn_cmd->add_option("--seed", wa.seed);
  wsn_cmd->add_option("--per-node", wa.per_node)->check(CLI::PositiveNumber)->capture_default_str();
  wsn_cmd->add_option("--max-vars", wa.max_vars)->check(CLI::Range(1, 12))->capture_default_str();
  wsn_cmd->add_option("--qaoa-layers", wa.qaoa_layers)->check(CLI::PositiveNumber)->capture_default_str();
  wsn_cmd->add_option("--restarts", wa.restarts)->check(CLI::PositiveNumber)->capture_default_str();
  wsn_cmd->add_option("--out", wa.out, "Output directory");

  std::uint64_t check_seed = 1;
  auto* check = app.add_subcommand("check", "Run the gradient and invariant suites");
  check->add_option("--seed", check_seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  set_num_threads(threads);
  try {
    if (*search) return cmd_search(sa, *search);
    if (*optimize) return cmd_optimize(oa);
    if (*vqe) return cmd_vqe(va);
    if (*wsn_cmd) return cmd_wsn(wa);
    if (*check) return cmd_check(check_seed);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
