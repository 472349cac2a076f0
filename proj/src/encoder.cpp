#include "qas/encoder.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "qas/random.hpp"
#include "qas/simulator.hpp"

namespace qas {

using diff::Parameter;
using diff::Tape;
using diff::Tensor;
using diff::Var;

const char* to_string(EncoderMode m) {
  switch (m) {
    case EncoderMode::qbsa: return "qbsa";
    case EncoderMode::classical_attention: return "classical_attention";
    case EncoderMode::identity: return "identity";
  }
  return "?";
}

EncoderMode encoder_mode_from_string(const std::string& s) {
  if (s == "qbsa") return EncoderMode::qbsa;
  if (s == "classical_attention" || s == "classical") return EncoderMode::classical_attention;
  if (s == "identity") return EncoderMode::identity;
  throw std::invalid_argument("unknown encoder mode '" + s + "' (expected qbsa, classical_attention or identity)");
}

int EncoderConfig::d_model() const {
  if (n_heads < 1) throw std::invalid_argument("encoder needs at least one head");
  return ((pool_size + n_heads - 1) / n_heads) * n_heads;
}

void EncoderConfig::validate() const {
  if (max_depth < 1 || pool_size < 1) throw std::invalid_argument("encoder depth and pool size must be positive");
  if (rank < 1) throw std::invalid_argument("factorization rank must be positive");
  if (n_heads < 1) throw std::invalid_argument("encoder needs at least one head");
  if (n_feat_qubits < 1 || n_ffn_qubits < 1 || n_feat_qubits > kMaxSimQubits || n_ffn_qubits > kMaxSimQubits) {
    throw std::invalid_argument("encoder circuit widths must lie in [1, " + std::to_string(kMaxSimQubits) + "]");
  }
  if (ffn_layers < 1) throw std::invalid_argument("feed-forward circuit needs at least one layer");
  if (!(tau_attn > 0.0)) throw std::invalid_argument("attention temperature must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (!(init_std > 0.0)) throw std::invalid_argument("init_std must be positive");
}

namespace {

Tensor normal_tensor(std::vector<std::size_t> shape, double std, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, std);
  for (auto& v : t.data) v = d(rng);
  return t;
}

Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data) v = d(rng);
  return t;
}

Parameter linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return Parameter(name, normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
}

Parameter constant_row(const std::string& name, std::size_t n, double v) { return Parameter(name, Tensor({1, n}, v)); }

void cnot_chain(diff::QuantumTemplate& t) {
  for (int i = 0; i + 1 < t.n_qubits; ++i) t.gates.push_back({GateKind::CNOT, i, i + 1, {}});
}

}  // namespace

std::vector<Parameter*> EncoderState::parameters() {
  std::vector<Parameter*> out{&p, &q};
  if (w_in) out.push_back(&*w_in);
  if (w_out) out.push_back(&*w_out);
  for (auto& h : heads) {
    for (Parameter* x : {&h.w_q, &h.w_k, &h.w_v, &h.w_feat, &h.theta0, &h.theta1, &h.phase}) out.push_back(x);
  }
  for (Parameter* x : {&w_o, &b_o, &ln1_gain, &ln1_bias, &ffn.w_down, &ffn.b_down, &ffn.theta, &ffn.phi, &ffn.w_up,
                       &ffn.b_up, &ln2_gain, &ln2_bias}) {
    out.push_back(x);
  }
  return out;
}

std::vector<const Parameter*> EncoderState::parameters() const {
  auto mut = const_cast<EncoderState*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<Parameter*> EncoderState::arch_parameters() { return {&p, &q}; }

EncoderState init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(seed, {0xe4c0de}));
  const auto D = static_cast<std::size_t>(cfg.max_depth);
  const auto C = static_cast<std::size_t>(cfg.pool_size);
  const auto K = static_cast<std::size_t>(cfg.rank);
  const auto dm = static_cast<std::size_t>(cfg.d_model());
  const auto dh = static_cast<std::size_t>(cfg.d_head());
  const auto nf = static_cast<std::size_t>(cfg.n_feat_qubits);
  const auto nq = static_cast<std::size_t>(cfg.n_ffn_qubits);
  const auto L = static_cast<std::size_t>(cfg.ffn_layers);

  EncoderState s;
  s.config = cfg;
  // alpha entries are sums of K' products, so scale the factors to keep the
  // logit spread at init_std.
  const double f_std = std::sqrt(cfg.init_std / std::sqrt(static_cast<double>(K)));
  s.p = Parameter("P", normal_tensor({D, 1, K}, f_std, rng));
  s.q = Parameter("Q", normal_tensor({D, K, C}, f_std, rng));
  if (dm != C) {
    s.w_in = linear("W_in", C, dm, rng);
    s.w_out = linear("W_out", dm, C, rng);
  }
  for (int h = 0; h < cfg.n_heads; ++h) {
    const std::string pre = "head" + std::to_string(h) + ".";
    HeadParams hp;
    hp.w_q = linear(pre + "W_q", dm, dh, rng);
    hp.w_k = linear(pre + "W_k", dm, dh, rng);
    hp.w_v = linear(pre + "W_v", dm, dh, rng);
    hp.w_feat = linear(pre + "W_feat", dh, nf, rng);
    hp.theta0 = Parameter(pre + "theta0", uniform_tensor({1, nf}, 0.5, 1.5, rng));
    hp.theta1 = Parameter(pre + "theta1", uniform_tensor({1, nf}, 0.5, 1.5, rng));
    hp.phase = Parameter(pre + "phase", uniform_tensor({1, 1}, 0.0, std::numbers::pi, rng));
    s.heads.push_back(std::move(hp));
  }
  s.w_o = linear("W_o", dm, dm, rng);
  s.b_o = constant_row("b_o", dm, 0.0);
  s.ln1_gain = constant_row("ln1.gain", dm, 1.0);
  s.ln1_bias = constant_row("ln1.bias", dm, 0.0);
  s.ffn.w_down = linear("ffn.W_down", dm, nq, rng);
  s.ffn.b_down = constant_row("ffn.b_down", nq, 0.0);
  s.ffn.theta = Parameter("ffn.theta", uniform_tensor({1, L * nq}, 0.5, 1.5, rng));
  s.ffn.phi = Parameter("ffn.phi", uniform_tensor({1, L * nq}, 0.5, 1.5, rng));
  s.ffn.w_up = linear("ffn.W_up", nq, dm, rng);
  s.ffn.b_up = constant_row("ffn.b_up", dm, 0.0);
  s.ln2_gain = constant_row("ln2.gain", dm, 1.0);
  s.ln2_bias = constant_row("ln2.bias", dm, 0.0);
  return s;
}

diff::QuantumTemplate feature_map_template(int n) {
  diff::QuantumTemplate t;
  t.n_qubits = n;
  t.n_features = n;
  t.n_weights = 2 * n;
  for (int i = 0; i < n; ++i) t.gates.push_back({GateKind::Rx, i, -1, {i, i, 1, 1.0}});
  for (int i = 0; i < n; ++i) t.gates.push_back({GateKind::Rz, i, -1, {-1, i, 2, 1.0}});
  cnot_chain(t);
  for (int i = 0; i < n; ++i) t.gates.push_back({GateKind::Ry, i, -1, {n + i, i, 1, 1.0}});
  cnot_chain(t);
  return t;
}

diff::QuantumTemplate ffn_template(int n, int layers) {
  diff::QuantumTemplate t;
  t.n_qubits = n;
  t.n_features = n;
  t.n_weights = 2 * layers * n;
  for (int i = 0; i < n; ++i) t.gates.push_back({GateKind::H, i, -1, {}});
  for (int l = 0; l < layers; ++l) {
    for (int i = 0; i < n; ++i) {
      t.gates.push_back({GateKind::Rz, i, -1, {layers * n + l * n + i, i, 1, 1.0}});
      t.gates.push_back({GateKind::Ry, i, -1, {l * n + i, i, 1, 1.0}});
    }
    cnot_chain(t);
  }
  return t;
}

std::vector<double> quantum_feature_map(std::span<const double> u, std::span<const double> theta0,
                                        std::span<const double> theta1) {
  if (theta0.size() != u.size() || theta1.size() != u.size()) {
    throw std::invalid_argument("feature map: u, theta0 and theta1 must have equal length");
  }
  std::vector<double> w(theta0.begin(), theta0.end());
  w.insert(w.end(), theta1.begin(), theta1.end());
  return diff::evaluate_template(feature_map_template(static_cast<int>(u.size())), u, w);
}

Tensor positional_encoding(int depth, int width) {
  Tensor pe({static_cast<std::size_t>(depth), static_cast<std::size_t>(width)});
  for (int pos = 0; pos < depth; ++pos) {
    for (int j = 0; j < width; ++j) {
      const int i2 = j - (j % 2);
      const double angle = pos / std::pow(10000.0, static_cast<double>(i2) / width);
      pe.at(static_cast<std::size_t>(pos), static_cast<std::size_t>(j)) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Var arch_logits(Tape& t, EncoderState& s) {
  const auto D = static_cast<std::size_t>(s.config.max_depth);
  const auto C = static_cast<std::size_t>(s.config.pool_size);
  return diff::reshape(diff::batched_matmul(t.param(s.p), t.param(s.q)), {D, C});
}

Var preprocess(Tape& t, Var alpha, bool with_pe) {
  Var fit = diff::matmul(diff::matmul(alpha, diff::transpose(alpha)), alpha);
  if (!with_pe) return fit;
  const Tensor& a = alpha.value();
  return diff::add(fit, t.constant(positional_encoding(static_cast<int>(a.rows()), static_cast<int>(a.cols()))));
}

Var affine_layer_norm(Var x, Var gain, Var bias) { return diff::add_row(diff::mul_row(diff::layer_norm(x), gain), bias); }

Var attention_forward(Tape& t, Var x, EncoderState& s, EncoderTrace* trace) {
  const EncoderConfig& cfg = s.config;
  const double dh = static_cast<double>(cfg.d_head());
  const auto fm = feature_map_template(cfg.n_feat_qubits);
  std::vector<Var> outs;
  for (auto& h : s.heads) {
    Var q = diff::matmul(x, t.param(h.w_q));
    Var k = diff::matmul(x, t.param(h.w_k));
    Var v = diff::matmul(x, t.param(h.w_v));
    Var a;
    if (cfg.mode == EncoderMode::classical_attention) {
      Var logits = diff::matmul(q, diff::transpose(k));
      if (trace) trace->logits.push_back(logits.value());
      a = diff::softmax_rows(diff::scale(logits, 1.0 / std::sqrt(dh)));
    } else {
      Var wf = t.param(h.w_feat);
      Var weights = diff::concat_cols({t.param(h.theta0), t.param(h.theta1)});
      Var phi_q = diff::quantum_node(fm, diff::matmul(q, wf), weights);
      Var phi_k = diff::quantum_node(fm, diff::matmul(k, wf), weights);
      Var sim = diff::matmul(phi_q, diff::transpose(phi_k));
      Var norms = diff::matmul(diff::row_norms(phi_q), diff::transpose(diff::row_norms(phi_k)));
      Var interf = diff::mul_scalar(diff::scale(norms, static_cast<double>(cfg.n_heads)), diff::cos(t.param(h.phase)));
      Var xi = diff::add(sim, interf);
      if (trace) {
        trace->logits.push_back(xi.value());
        trace->phi_q.push_back(phi_q.value());
        trace->phi_k.push_back(phi_k.value());
      }
      a = diff::softmax_rows(diff::scale(xi, 1.0 / (std::sqrt(dh) * cfg.tau_attn)));
    }
    if (trace) trace->attention.push_back(a.value());
    outs.push_back(diff::matmul(a, v));
  }
  Var y = diff::add_row(diff::matmul(diff::concat_cols(outs), t.param(s.w_o)), t.param(s.b_o));
  return affine_layer_norm(diff::add(x, y), t.param(s.ln1_gain), t.param(s.ln1_bias));
}

Var quantum_ffn(Tape& t, Var mid, EncoderState& s, std::mt19937_64* rng) {
  const EncoderConfig& cfg = s.config;
  const auto tmpl = ffn_template(cfg.n_ffn_qubits, cfg.ffn_layers);
  Var z = diff::add_row(diff::matmul(mid, t.param(s.ffn.w_down)), t.param(s.ffn.b_down));
  Var sv = diff::quantum_node(tmpl, z, diff::concat_cols({t.param(s.ffn.theta), t.param(s.ffn.phi)}));
  Var out = diff::add_row(diff::matmul(sv, t.param(s.ffn.w_up)), t.param(s.ffn.b_up));
  if (rng != nullptr) out = diff::dropout(out, cfg.dropout, *rng);
  return affine_layer_norm(diff::add(mid, out), t.param(s.ln2_gain), t.param(s.ln2_bias));
}

Var encoder_forward(Tape& t, EncoderState& s, std::mt19937_64* dropout_rng, EncoderTrace* trace) {
  Var alpha = arch_logits(t, s);
  if (trace) trace->alpha = alpha.value();
  if (s.config.mode == EncoderMode::identity) {
    if (trace) trace->alpha_out = alpha.value();
    return alpha;
  }
  Var x = preprocess(t, alpha, s.config.positional_encoding);
  if (trace) trace->alpha_in = x.value();
  if (s.w_in) x = diff::matmul(x, t.param(*s.w_in));
  Var mid = attention_forward(t, x, s, trace);
  if (trace) trace->alpha_mid = mid.value();
  Var out = quantum_ffn(t, mid, s, dropout_rng);
  if (s.w_out) out = diff::matmul(out, t.param(*s.w_out));
  if (trace) trace->alpha_out = out.value();
  return out;
}

namespace {

constexpr int kCheckpointVersion = 1;

nlohmann::json config_to_json(const EncoderConfig& c) {
  return {{"max_depth", c.max_depth},         {"pool_size", c.pool_size},
          {"rank", c.rank},                   {"n_heads", c.n_heads},
          {"n_feat_qubits", c.n_feat_qubits}, {"n_ffn_qubits", c.n_ffn_qubits},
          {"ffn_layers", c.ffn_layers},       {"tau_attn", c.tau_attn},
          {"dropout", c.dropout},             {"positional_encoding", c.positional_encoding},
          {"mode", to_string(c.mode)},        {"init_std", c.init_std}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.max_depth = j.at("max_depth").get<int>();
  c.pool_size = j.at("pool_size").get<int>();
  c.rank = j.at("rank").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_feat_qubits = j.at("n_feat_qubits").get<int>();
  c.n_ffn_qubits = j.at("n_ffn_qubits").get<int>();
  c.ffn_layers = j.at("ffn_layers").get<int>();
  c.tau_attn = j.at("tau_attn").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.positional_encoding = j.at("positional_encoding").get<bool>();
  c.mode = encoder_mode_from_string(j.at("mode").get<std::string>());
  c.init_std = j.at("init_std").get<double>();
  return c;
}

}  // namespace

std::string save_encoder(const EncoderState& s) {
  nlohmann::json j;
  j["format"] = "qas-encoder";
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(s.config);
  nlohmann::json params = nlohmann::json::array();
  for (const Parameter* p : s.parameters()) {
    params.push_back({{"name", p->name}, {"shape", p->value.shape}, {"data", p->value.data}});
  }
  j["parameters"] = std::move(params);
  return j.dump(1);
}

EncoderState load_encoder(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("encoder checkpoint is not valid JSON: ") + e.what());
  }
  if (j.value("format", "") != "qas-encoder") throw std::invalid_argument("not an encoder checkpoint");
  if (j.value("version", -1) != kCheckpointVersion) {
    throw std::invalid_argument("unsupported encoder checkpoint version " + j.value("version", nlohmann::json()).dump());
  }
  EncoderState s = init_encoder(config_from_json(j.at("config")), 0);
  auto params = s.parameters();
  const auto& arr = j.at("parameters");
  if (arr.size() != params.size()) throw std::invalid_argument("encoder checkpoint has the wrong number of arrays");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = arr[i];
    if (e.at("name").get<std::string>() != params[i]->name) {
      throw std::invalid_argument("encoder checkpoint array " + std::to_string(i) + " is '" +
                                  e.at("name").get<std::string>() + "', expected '" + params[i]->name + "'");
    }
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (shape != params[i]->value.shape) {
      throw std::invalid_argument("encoder checkpoint array '" + params[i]->name + "' has shape " +
                                  diff::shape_string(shape) + ", expected " + diff::shape_string(params[i]->value.shape));
    }
    auto data = e.at("data").get<std::vector<double>>();
    if (data.size() != params[i]->value.size()) throw std::invalid_argument("encoder checkpoint data length mismatch");
    params[i]->value.data = std::move(data);
    params[i]->zero_grad();
  }
  return s;
}

}  // namespace qas
