#include "qas/circuit.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace qas {

namespace {

constexpr std::array<GateInfo, 12> kGateTable = {{
    {"id", 1, false, 0},
    {"x", 1, false, 0},
    {"z", 1, false, 0},
    {"h", 1, false, 0},
    {"s", 1, false, 0},
    {"sdg", 1, false, 0},
    {"rx", 1, true, 1},
    {"ry", 1, true, 1},
    {"rz", 1, true, 1},
    {"cnot", 2, false, 0},
    {"cz", 2, false, 0},
    {"rzz", 2, true, 1},
}};

bool is_directed(GateKind kind) { return kind == GateKind::CNOT; }

}  // namespace

const GateInfo& gate_info(GateKind kind) { return kGateTable[static_cast<std::size_t>(kind)]; }

std::optional<GateKind> gate_kind_from_name(std::string_view name) {
  for (GateKind k : kAllGateKinds) {
    if (gate_info(k).name == name) return k;
  }
  if (name == "i") return GateKind::I;
  if (name == "cx") return GateKind::CNOT;
  return std::nullopt;
}

bool is_diagonal(GateKind kind) {
  switch (kind) {
    case GateKind::I:
    case GateKind::Z:
    case GateKind::S:
    case GateKind::Sdg:
    case GateKind::Rz:
    case GateKind::CZ:
    case GateKind::Rzz:
      return true;
    default:
      return false;
  }
}

bool is_pauli_rotation(GateKind kind) {
  return kind == GateKind::Rx || kind == GateKind::Ry || kind == GateKind::Rz || kind == GateKind::Rzz;
}

bool GateInstance::shares_qubit(const GateInstance& other) const {
  for (int i = 0; i < arity(); ++i) {
    if (other.acts_on(qubits[i])) return true;
  }
  return false;
}

double GateInstance::resolve_angle(std::span<const double> theta) const {
  if (slot < 0) return angle;
  if (static_cast<std::size_t>(slot) >= theta.size()) {
    throw std::invalid_argument("parameter slot " + std::to_string(slot) + " outside theta of length " +
                                std::to_string(theta.size()));
  }
  return scale * theta[static_cast<std::size_t>(slot)];
}

namespace gate {

GateInstance fixed(GateKind kind, int q0, int q1) {
  GateInstance g;
  g.kind = kind;
  g.qubits = {q0, q1};
  return g;
}

GateInstance rotation(GateKind kind, double angle, int q0, int q1) {
  GateInstance g = fixed(kind, q0, q1);
  g.angle = angle;
  return g;
}

GateInstance free_rotation(GateKind kind, int slot, int q0, int q1, double scale) {
  GateInstance g = fixed(kind, q0, q1);
  g.slot = slot;
  g.scale = scale;
  return g;
}

}  // namespace gate

Circuit::Circuit(int n_qubits, std::vector<GateInstance> gates, int n_params)
    : n_qubits_(n_qubits), gates_(std::move(gates)) {
  if (n_qubits_ < 1) throw std::invalid_argument("circuit needs at least one qubit");
  int max_slot = -1;
  for (std::size_t i = 0; i < gates_.size(); ++i) {
    GateInstance& g = gates_[i];
    const GateInfo& info = gate_info(g.kind);
    const std::string where = "gate " + std::to_string(i) + " (" + std::string(info.name) + ")";
    for (int k = 0; k < 2; ++k) {
      if (k < info.arity) {
        if (g.qubits[k] < 0 || g.qubits[k] >= n_qubits_) {
          throw std::invalid_argument(where + ": qubit index out of range");
        }
      } else {
        g.qubits[k] = -1;
      }
    }
    if (info.arity == 2 && g.qubits[0] == g.qubits[1]) {
      throw std::invalid_argument(where + ": duplicate qubit operand");
    }
    if (!info.parametric) {
      if (g.slot >= 0) throw std::invalid_argument(where + ": non-parametric gate references a slot");
      g.angle = 0.0;
      g.scale = 1.0;
    } else if (g.slot >= 0) {
      max_slot = std::max(max_slot, g.slot);
    } else if (!std::isfinite(g.angle)) {
      throw std::invalid_argument(where + ": non-finite angle");
    }
    if (g.slot < -1) throw std::invalid_argument(where + ": negative slot");
  }
  n_params_ = n_params < 0 ? max_slot + 1 : n_params;
  if (max_slot >= n_params_) throw std::invalid_argument("parameter slot exceeds n_params");
  std::vector<bool> used(static_cast<std::size_t>(n_params_), false);
  for (const auto& g : gates_) {
    if (g.slot >= 0) used[static_cast<std::size_t>(g.slot)] = true;
  }
  for (std::size_t s = 0; s < used.size(); ++s) {
    if (!used[s]) throw std::invalid_argument("parameter slot " + std::to_string(s) + " is never referenced");
  }
}

CircuitMetrics circuit_metrics(const Circuit& c) {
  std::vector<std::size_t> layer(static_cast<std::size_t>(c.n_qubits()), 0);
  std::size_t depth = 0;
  for (const auto& g : c.gates()) {
    std::size_t start = 0;
    for (int k = 0; k < g.arity(); ++k) start = std::max(start, layer[static_cast<std::size_t>(g.qubits[k])]);
    for (int k = 0; k < g.arity(); ++k) layer[static_cast<std::size_t>(g.qubits[k])] = start + 1;
    depth = std::max(depth, start + 1);
  }
  return {c.size(), depth};
}

Circuit inverse_circuit(const Circuit& c, std::span<const double> theta) {
  if (theta.size() != static_cast<std::size_t>(c.n_params())) {
    throw std::invalid_argument("theta length does not match circuit parameter count");
  }
  std::vector<GateInstance> out;
  out.reserve(c.size());
  for (auto it = c.gates().rbegin(); it != c.gates().rend(); ++it) {
    GateInstance g = *it;
    switch (g.kind) {
      case GateKind::S:
        g.kind = GateKind::Sdg;
        break;
      case GateKind::Sdg:
        g.kind = GateKind::S;
        break;
      case GateKind::Rx:
      case GateKind::Ry:
      case GateKind::Rz:
      case GateKind::Rzz:
        g.angle = -it->resolve_angle(theta);
        g.slot = -1;
        g.scale = 1.0;
        break;
      case GateKind::I:
      case GateKind::X:
      case GateKind::Z:
      case GateKind::H:
      case GateKind::CNOT:
      case GateKind::CZ:
        break;
    }
    out.push_back(g);
  }
  return Circuit(c.n_qubits(), std::move(out), 0);
}

Circuit bind_parameters(const Circuit& c, std::span<const double> theta) {
  if (theta.size() != static_cast<std::size_t>(c.n_params())) {
    throw std::invalid_argument("theta length does not match circuit parameter count");
  }
  std::vector<GateInstance> out = c.gates();
  for (auto& g : out) {
    if (g.slot >= 0) {
      g.angle = g.resolve_angle(theta);
      g.slot = -1;
      g.scale = 1.0;
    }
  }
  return Circuit(c.n_qubits(), std::move(out), 0);
}

std::pair<Circuit, std::vector<double>> parameterize(const Circuit& c) {
  if (c.n_params() != 0) throw std::invalid_argument("parameterize expects a circuit with fixed angles");
  std::vector<GateInstance> out = c.gates();
  std::vector<double> theta;
  for (auto& g : out) {
    if (g.parametric()) {
      theta.push_back(g.angle);
      g.slot = static_cast<int>(theta.size()) - 1;
      g.scale = 1.0;
      g.angle = 0.0;
    }
  }
  const int n = static_cast<int>(theta.size());
  return {Circuit(c.n_qubits(), std::move(out), n), std::move(theta)};
}

DeviceTopology DeviceTopology::line(int n, std::set<GateKind> native_1q, std::set<GateKind> native_2q) {
  DeviceTopology t;
  t.n_qubits = n;
  for (int q = 0; q + 1 < n; ++q) t.coupling.insert({q, q + 1});
  t.native_1q = std::move(native_1q);
  t.native_2q = std::move(native_2q);
  t.validate();
  return t;
}

DeviceTopology DeviceTopology::all_to_all(int n, std::set<GateKind> native_1q, std::set<GateKind> native_2q) {
  DeviceTopology t;
  t.n_qubits = n;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) t.coupling.insert({a, b});
  t.native_1q = std::move(native_1q);
  t.native_2q = std::move(native_2q);
  t.validate();
  return t;
}

void DeviceTopology::validate() const {
  if (n_qubits < 1) throw std::invalid_argument("topology needs at least one qubit");
  for (auto [a, b] : coupling) {
    if (a < 0 || b < 0 || a >= n_qubits || b >= n_qubits || a == b) {
      throw std::invalid_argument("coupling pair references an invalid qubit");
    }
  }
  for (GateKind k : native_1q)
    if (gate_info(k).arity != 1) throw std::invalid_argument("native_1q holds a two-qubit kind");
  for (GateKind k : native_2q)
    if (gate_info(k).arity != 2) throw std::invalid_argument("native_2q holds a single-qubit kind");
}

OperationPool build_pool(const DeviceTopology& topology, const std::set<GateKind>& kinds) {
  topology.validate();
  OperationPool pool;
  // std::set iterates in enum order, which fixes the kind ordering.
  for (GateKind k : kinds) {
    const GateInfo& info = gate_info(k);
    if (info.arity == 1) {
      if (!topology.native_1q.contains(k)) {
        throw std::invalid_argument("gate kind '" + std::string(info.name) + "' is not native on the device");
      }
      for (int q = 0; q < topology.n_qubits; ++q) pool.entries.push_back({k, {q, -1}});
    } else {
      if (!topology.native_2q.contains(k)) {
        throw std::invalid_argument("gate kind '" + std::string(info.name) + "' is not native on the device");
      }
      for (auto [a, b] : topology.coupling) {
        pool.entries.push_back({k, {a, b}});
        if (is_directed(k)) pool.entries.push_back({k, {b, a}});
      }
    }
  }
  if (pool.entries.empty()) throw std::invalid_argument("operation pool is empty: no admissible placements");
  return pool;
}

Circuit realize_circuit(const OperationPool& pool, std::span<const int> selection, int n_qubits) {
  std::vector<GateInstance> gates;
  gates.reserve(selection.size());
  int next_slot = 0;
  for (int idx : selection) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= pool.size()) {
      throw std::out_of_range("selection index " + std::to_string(idx) + " outside pool of size " +
                              std::to_string(pool.size()));
    }
    const PoolEntry& e = pool.entries[static_cast<std::size_t>(idx)];
    GateInstance g = gate::fixed(e.kind, e.qubits[0], e.qubits[1]);
    if (g.parametric()) g.slot = next_slot++;
    gates.push_back(g);
  }
  return Circuit(n_qubits, std::move(gates), next_slot);
}

std::string describe(const PoolEntry& entry) {
  std::string s(gate_info(entry.kind).name);
  s += " q" + std::to_string(entry.qubits[0]);
  if (entry.qubits[1] >= 0) s += ",q" + std::to_string(entry.qubits[1]);
  return s;
}

ParseError::ParseError(int line, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest representation that still round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
    if (std::strtod(shorter, nullptr) == v) return shorter;
  }
  return buf;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view s, int line) {
  s = trim(s);
  std::string buf(s);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (buf.empty() || end != buf.c_str() + buf.size() || !std::isfinite(v)) {
    throw ParseError(line, "cannot parse angle '" + buf + "'");
  }
  return v;
}

int parse_int(std::string_view s, int line, const char* what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(line, std::string("malformed ") + what + " '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

Circuit parse_circuit(std::string_view text) {
  int n_qubits = -1;
  std::vector<GateInstance> gates;
  std::vector<int> gate_lines;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    std::istringstream in{std::string(line)};
    std::string head;
    in >> head;
    if (head == "qubits") {
      std::string n;
      in >> n;
      if (n_qubits >= 0) throw ParseError(line_no, "duplicate 'qubits' header");
      n_qubits = parse_int(n, line_no, "qubit count");
      if (n_qubits < 1) throw ParseError(line_no, "qubit count must be positive");
      continue;
    }
    if (n_qubits < 0) throw ParseError(line_no, "missing 'qubits N' header before first gate");

    std::string name = head;
    std::string arg;
    bool has_arg = false;
    if (auto open = head.find('('); open != std::string::npos) {
      // Angle expressions never contain spaces in canonical form, but tolerate them.
      std::string rest = std::string(line.substr(open));
      const auto close = rest.find(')');
      if (close == std::string::npos) throw ParseError(line_no, "unterminated '(' in gate");
      name = head.substr(0, open);
      arg = rest.substr(1, close - 1);
      has_arg = true;
      in = std::istringstream(rest.substr(close + 1));
    }
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    auto kind = gate_kind_from_name(name);
    if (!kind) throw ParseError(line_no, "unknown gate '" + name + "'");
    const GateInfo& info = gate_info(*kind);

    GateInstance g = gate::fixed(*kind, -1, -1);
    if (info.parametric) {
      if (!has_arg) throw ParseError(line_no, "gate '" + name + "' requires an angle");
      std::string_view a = trim(arg);
      if (auto dollar = a.find('$'); dollar != std::string_view::npos) {
        double scale = 1.0;
        if (dollar > 0) {
          std::string_view s = trim(a.substr(0, dollar));
          if (s.empty() || s.back() != '*') throw ParseError(line_no, "malformed slot reference '" + arg + "'");
          scale = parse_number(s.substr(0, s.size() - 1), line_no);
        }
        g.slot = parse_int(trim(a.substr(dollar + 1)), line_no, "slot index");
        if (g.slot < 0) throw ParseError(line_no, "negative slot index");
        g.scale = scale;
      } else {
        g.angle = parse_number(a, line_no);
      }
    } else if (has_arg) {
      throw ParseError(line_no, "gate '" + name + "' takes no angle");
    }

    std::vector<std::string> ops;
    for (std::string tok; in >> tok;) ops.push_back(tok);
    if (static_cast<int>(ops.size()) != info.arity) {
      throw ParseError(line_no, "gate '" + name + "' expects " + std::to_string(info.arity) + " operand(s), got " +
                                    std::to_string(ops.size()));
    }
    for (int k = 0; k < info.arity; ++k) {
      g.qubits[k] = parse_int(ops[k], line_no, "qubit operand");
      if (g.qubits[k] < 0 || g.qubits[k] >= n_qubits) {
        throw ParseError(line_no, "qubit operand " + ops[k] + " out of range");
      }
    }
    if (info.arity == 2 && g.qubits[0] == g.qubits[1]) throw ParseError(line_no, "duplicate qubit operand");
    gates.push_back(g);
    gate_lines.push_back(line_no);
  }
  if (n_qubits < 0) throw ParseError(line_no, "missing 'qubits N' header");
  try {
    return Circuit(n_qubits, std::move(gates));
  } catch (const std::invalid_argument& e) {
    throw ParseError(line_no, e.what());
  }
}

std::string serialize_circuit(const Circuit& c) {
  std::string out = "qubits " + std::to_string(c.n_qubits()) + "\n";
  for (const auto& g : c.gates()) {
    out += gate_info(g.kind).name;
    if (g.parametric()) {
      out += '(';
      if (g.slot >= 0) {
        if (g.scale != 1.0) out += format_double(g.scale) + "*";
        out += "$" + std::to_string(g.slot);
      } else {
        out += format_double(g.angle);
      }
      out += ')';
    }
    for (int k = 0; k < g.arity(); ++k) out += " " + std::to_string(g.qubits[k]);
    out += '\n';
  }
  return out;
}

}  // namespace qas
