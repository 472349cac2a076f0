#include "qas/search.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "qas/adam.hpp"
#include "qas/parallel.hpp"
#include "qas/random.hpp"

namespace qas {

using diff::Tape;
using diff::Tensor;
using diff::Var;

double SearchConfig::temperature(int step) const { return t0 * std::pow(gamma, step - 1); }

void SearchConfig::validate() const {
  if (steps < 1 || batch < 1) throw std::invalid_argument("search needs at least one step and one candidate per batch");
  if (!(t0 > 0.0)) throw std::invalid_argument("initial temperature must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("temperature decay must lie in (0, 1]");
  if (w1 < 0.0 || w2 < 0.0) throw std::invalid_argument("cost weights must be non-negative");
  if (lambda_stability < 0.0) throw std::invalid_argument("stability weight must be non-negative");
  if (n_bins < 2) throw std::invalid_argument("expressibility needs at least two bins");
  if (n_pairs < 1 || expr_trajectories < 1) throw std::invalid_argument("expressibility sample counts must be positive");
  if (pst_shots < 1) throw std::invalid_argument("PST needs at least one shot");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) throw std::invalid_argument("baseline decay must lie in [0, 1)");
}

const char* to_string(LogProbSource s) { return s == LogProbSource::softmax ? "softmax" : "gumbel_soft"; }

LogProbSource log_prob_source_from_string(const std::string& s) {
  if (s == "gumbel_soft") return LogProbSource::gumbel_soft;
  if (s == "softmax") return LogProbSource::softmax;
  throw std::invalid_argument("unknown log-probability source '" + s + "' (expected gumbel_soft or softmax)");
}

GumbelSample gumbel_sample(const Tensor& logits, double temperature, std::uint64_t seed) {
  if (!(temperature > 0.0)) throw std::invalid_argument("Gumbel temperature must be positive");
  const std::size_t D = logits.rows(), C = logits.cols();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  GumbelSample s;
  s.noise = Tensor({D, C});
  s.soft = Tensor({D, C});
  s.selection.resize(D);
  for (std::size_t d = 0; d < D; ++d) {
    double mx = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < C; ++k) {
      double u = u01(rng);
      while (u <= 0.0) u = u01(rng);
      const double g = -std::log(-std::log(u));
      s.noise.at(d, k) = g;
      const double v = logits.at(d, k) + g;
      if (v > mx) {
        mx = v;
        arg = k;
      }
    }
    double z = 0.0;
    for (std::size_t k = 0; k < C; ++k) z += (s.soft.at(d, k) = std::exp((logits.at(d, k) + s.noise.at(d, k) - mx) / temperature));
    for (std::size_t k = 0; k < C; ++k) s.soft.at(d, k) /= z;
    s.selection[d] = static_cast<int>(arg);
  }
  return s;
}

Var gumbel_log_prob(Var alpha_out, const GumbelSample& s, double temperature) {
  Tape& t = *alpha_out.tape;
  Var perturbed = diff::add(alpha_out, t.constant(s.noise));
  return diff::pick_sum(diff::log_softmax_rows(diff::scale(perturbed, 1.0 / temperature)), s.selection);
}

Var softmax_log_prob(Var alpha_out, std::span<const int> selection) {
  return diff::pick_sum(diff::log_softmax_rows(alpha_out), selection);
}

std::vector<double> haar_bin_probabilities(int n_qubits, int n_bins) {
  if (n_bins < 2) throw std::invalid_argument("need at least two bins");
  const double N = std::ldexp(1.0, n_qubits);
  std::vector<double> p(static_cast<std::size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) {
    const double lo = static_cast<double>(b) / n_bins, hi = static_cast<double>(b + 1) / n_bins;
    p[static_cast<std::size_t>(b)] = std::pow(1.0 - lo, N - 1.0) - std::pow(1.0 - hi, N - 1.0);
  }
  return p;
}

double kl_divergence_bits(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("KL inputs differ in length");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log2(p[i] / std::max(q[i], 1e-10));
  }
  return std::max(kl, 0.0);
}

std::vector<double> fidelity_histogram(std::span<const double> fidelities, int n_bins) {
  std::vector<double> h(static_cast<std::size_t>(n_bins), 0.0);
  if (fidelities.empty()) return h;
  for (double f : fidelities) {
    const double c = std::clamp(f, 0.0, 1.0);
    const int b = std::min(static_cast<int>(c * n_bins), n_bins - 1);
    h[static_cast<std::size_t>(b)] += 1.0;
  }
  for (auto& v : h) v /= static_cast<double>(fidelities.size());
  return h;
}

double estimate_expressibility(const Circuit& c, const NoiseProfile* noise, const ExpressibilityOptions& opt,
                               std::uint64_t seed) {
  if (opt.n_bins < 2 || opt.n_pairs < 1 || opt.trajectories < 1) throw std::invalid_argument("invalid expressibility options");
  const auto haar = haar_bin_probabilities(c.n_qubits(), opt.n_bins);
  const bool noisy = noise != nullptr && !noise->gate_noiseless();
  std::vector<double> fid;
  if (c.n_params() == 0 && !noisy) {
    fid.assign(1, 1.0);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi);
    std::vector<double> t1(static_cast<std::size_t>(c.n_params())), t2(t1.size());
    fid.reserve(static_cast<std::size_t>(opt.n_pairs));
    for (int pair = 0; pair < opt.n_pairs; ++pair) {
      for (auto& v : t1) v = ang(rng);
      for (auto& v : t2) v = ang(rng);
      if (!noisy) {
        fid.push_back(std::norm(inner_product(run(c, t1), run(c, t2))));
        continue;
      }
      // Averaging over independent trajectory pairs estimates Tr(rho1 rho2).
      double f = 0.0;
      for (int k = 0; k < opt.trajectories; ++k) {
        const auto a = run(c, t1, noise, rng);
        const auto b = run(c, t2, noise, rng);
        f += std::norm(inner_product(a, b));
      }
      fid.push_back(f / opt.trajectories);
    }
  }
  const auto hist = fidelity_histogram(fid, opt.n_bins);
  return kl_divergence_bits(hist, haar);
}

namespace {

// Returns 0 for no error, else 'X', 'Y' or 'Z'.
char draw_pauli(const std::array<double, 3>& p, std::mt19937_64& rng, std::uniform_real_distribution<double>& u01) {
  const double r = u01(rng);
  if (r < p[0]) return 'X';
  if (r < p[0] + p[1]) return 'Y';
  if (r < p[0] + p[1] + p[2]) return 'Z';
  return 0;
}

}  // namespace

double estimate_pst(const Circuit& c, std::span<const double> theta, const NoiseProfile& noise, long shots,
                    std::uint64_t seed) {
  if (shots < 1) throw std::invalid_argument("PST needs at least one shot");
  noise.validate();
  const Circuit bound = bind_parameters(c, theta);
  std::vector<GateInstance> gates = bound.gates();
  const Circuit inv = inverse_circuit(bound, {});
  gates.insert(gates.end(), inv.gates().begin(), inv.gates().end());
  const int n = c.n_qubits();
  std::vector<double> readout(static_cast<std::size_t>(n));
  for (int q = 0; q < n; ++q) readout[static_cast<std::size_t>(q)] = noise.readout_for(q);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  // errors[g][j]: Pauli after gate g on operand j for the current shot
  std::vector<std::array<char, 2>> errors(gates.size());
  long success = 0;
  for (long s = 0; s < shots; ++s) {
    bool any = false;
    for (std::size_t g = 0; g < gates.size(); ++g) {
      const auto& p = gates[g].arity() == 1 ? noise.p1 : noise.p2;
      for (int j = 0; j < 2; ++j) {
        errors[g][static_cast<std::size_t>(j)] = j < gates[g].arity() ? draw_pauli(p, rng, u01) : 0;
        any = any || errors[g][static_cast<std::size_t>(j)] != 0;
      }
    }
    std::uint64_t outcome = 0;
    if (any) {
      StateVector psi(n);
      for (std::size_t g = 0; g < gates.size(); ++g) {
        psi.apply(gates[g], gates[g].angle);
        for (int j = 0; j < gates[g].arity(); ++j)
          if (char e = errors[g][static_cast<std::size_t>(j)]) psi.apply_pauli(gates[g].qubits[static_cast<std::size_t>(j)], e);
      }
      double r = u01(rng), acc = 0.0;
      const auto amps = psi.amplitudes();
      outcome = amps.size() - 1;
      for (std::size_t i = 0; i < amps.size(); ++i) {
        acc += std::norm(amps[i]);
        if (r < acc) {
          outcome = i;
          break;
        }
      }
    }
    for (int q = 0; q < n; ++q)
      if (readout[static_cast<std::size_t>(q)] > 0.0 && u01(rng) < readout[static_cast<std::size_t>(q)]) outcome ^= std::uint64_t{1} << q;
    if (outcome == 0) ++success;
  }
  return static_cast<double>(success) / static_cast<double>(shots);
}

HardwareEvaluator::HardwareEvaluator(NoiseProfile noise, const SearchConfig& cfg) : noise_(std::move(noise)), cfg_(cfg) {
  noise_.validate();
  cfg_.validate();
}

CandidateEval HardwareEvaluator::evaluate(const Circuit& c, std::span<const int>, std::uint64_t seed) const {
  CandidateEval e;
  e.expressibility = estimate_expressibility(c, &noise_, {cfg_.n_pairs, cfg_.n_bins, cfg_.expr_trajectories},
                                             derive_seed(seed, {1}));
  std::vector<double> theta(static_cast<std::size_t>(c.n_params()), 0.0);
  if (cfg_.pst_random_theta) {
    std::mt19937_64 rng(derive_seed(seed, {3}));
    std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi);
    for (auto& v : theta) v = ang(rng);
  }
  e.pst = estimate_pst(c, theta, noise_, cfg_.pst_shots, derive_seed(seed, {2}));
  e.cost = cfg_.w1 * e.expressibility + cfg_.w2 * (1.0 - e.pst);
  return e;
}

CandidateEval RiggedEvaluator::evaluate(const Circuit&, std::span<const int> selection, std::uint64_t) const {
  CandidateEval e;
  const auto miss = std::count_if(selection.begin(), selection.end(), [this](int y) { return y != column_; });
  e.cost = selection.empty() ? 0.0 : static_cast<double>(miss) / static_cast<double>(selection.size());
  e.expressibility = e.cost;
  e.pst = 1.0;
  return e;
}

Var compute_loss(const std::vector<Var>& log_probs, std::span<const double> costs, Var f_t,
                 const Tensor* f_prev, const SearchConfig& cfg, double baseline, LossBreakdown* out) {
  if (log_probs.size() != costs.size() || log_probs.empty()) {
    throw std::invalid_argument("compute_loss: need one log-probability per cost and a non-empty batch");
  }
  const double B = static_cast<double>(costs.size());
  Var cost_term = diff::scale(log_probs[0], costs[0] - baseline);
  for (std::size_t k = 1; k < costs.size(); ++k) cost_term = diff::add(cost_term, diff::scale(log_probs[k], costs[k] - baseline));
  Var total = cost_term;
  double stab = 0.0;
  if (f_prev != nullptr) {
    // F_{t-1} is a constant; only F_t carries gradient.
    Var l_stab = diff::max_abs_diff(f_t, *f_prev);
    stab = l_stab.value().item();
    total = diff::add(total, diff::scale(l_stab, cfg.lambda_stability));
  }
  total = diff::scale(total, 1.0 / B);
  if (out) {
    out->cost_term = cost_term.value().item();
    out->stability = stab;
    out->total = total.value().item();
  }
  return total;
}

Tensor encoder_output(EncoderState& s) {
  Tape t;
  return encoder_forward(t, s, nullptr).value();
}

double selection_probability(EncoderState& s, int column) {
  Tape t;
  const Tensor p = diff::softmax_rows(encoder_forward(t, s, nullptr)).value();
  if (column < 0 || static_cast<std::size_t>(column) >= p.cols()) throw std::out_of_range("selection_probability: bad column");
  double m = 0.0;
  for (std::size_t d = 0; d < p.rows(); ++d) m += p.at(d, static_cast<std::size_t>(column));
  return m / static_cast<double>(p.rows());
}

std::vector<int> argmax_selection(const Tensor& logits) {
  std::vector<int> sel(logits.rows());
  for (std::size_t d = 0; d < logits.rows(); ++d) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.cols(); ++k)
      if (logits.at(d, k) > logits.at(d, best)) best = k;
    sel[d] = static_cast<int>(best);
  }
  return sel;
}

SearchResult run_search(const OperationPool& pool, const DeviceTopology& topology, const SearchConfig& cfg,
                        EncoderConfig enc, const CandidateEvaluator& evaluator, const StepCallback& on_step) {
  cfg.validate();
  topology.validate();
  if (pool.size() == 0) throw std::invalid_argument("search needs a non-empty operation pool");
  enc.pool_size = static_cast<int>(pool.size());
  const int n = topology.n_qubits;

  SearchResult res;
  res.encoder = init_encoder(enc, derive_seed(cfg.seed, {1}));
  EncoderState& s = res.encoder;
  ParameterAdam opt(s.parameters(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  opt.zero_grad();

  std::optional<Tensor> f_prev;
  double best_cost = std::numeric_limits<double>::infinity();
  double baseline = 0.0;
  bool baseline_init = false;
  const auto B = static_cast<std::size_t>(cfg.batch);

  for (int step = 1; step <= cfg.steps; ++step) {
    const auto ustep = static_cast<std::uint64_t>(step);
    const double tau = cfg.temperature(step);
    Tape tape;
    std::mt19937_64 drop(derive_seed(cfg.seed, {2, ustep}));
    Var out = encoder_forward(tape, s, enc.dropout > 0.0 ? &drop : nullptr);

    std::vector<GumbelSample> samples(B);
    std::vector<Circuit> circuits(B);
    for (std::size_t k = 0; k < B; ++k) {
      samples[k] = gumbel_sample(out.value(), tau, derive_seed(cfg.seed, {3, ustep, k}));
      circuits[k] = realize_circuit(pool, samples[k].selection, n);
    }
    std::vector<CandidateEval> evals(B);
    parallel_for(B, [&](std::size_t k) {
      evals[k] = evaluator.evaluate(circuits[k], samples[k].selection, derive_seed(cfg.seed, {4, ustep, k}));
    });

    std::vector<Var> log_probs;
    std::vector<double> costs;
    for (std::size_t k = 0; k < B; ++k) {
      log_probs.push_back(cfg.log_prob == LogProbSource::gumbel_soft ? gumbel_log_prob(out, samples[k], tau)
                                                                      : softmax_log_prob(out, samples[k].selection));
      costs.push_back(evals[k].cost);
    }
    LossBreakdown parts;
    Var loss = compute_loss(log_probs, costs, out, f_prev ? &*f_prev : nullptr, cfg,
                            cfg.baseline && baseline_init ? baseline : 0.0, &parts);

    StepRecord rec;
    rec.step = step;
    rec.temperature = tau;
    rec.evals = evals;
    rec.stability = parts.stability;
    rec.loss = parts.total;
    for (std::size_t k = 0; k < B; ++k) {
      rec.selections.push_back(samples[k].selection);
      if (evals[k].cost < best_cost) {
        best_cost = evals[k].cost;
        res.best = circuits[k];
        res.best_selection = samples[k].selection;
        res.best_eval = evals[k];
        res.best_step = step;
      }
    }
    rec.best_cost = best_cost;
    res.trace.steps.push_back(rec);

    if (!std::isfinite(parts.total)) {
      throw SearchDiverged("search loss became non-finite at step " + std::to_string(step), res.trace);
    }

    tape.backward(loss);
    opt.step();
    opt.zero_grad();
    f_prev = out.value();
    double mean_cost = 0.0;
    for (double c : costs) mean_cost += c / static_cast<double>(B);
    baseline = baseline_init ? cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * mean_cost : mean_cost;
    baseline_init = true;
    if (on_step) on_step(rec, s);
  }

  res.final_selection = argmax_selection(encoder_output(s));
  res.final_argmax = realize_circuit(pool, res.final_selection, n);
  return res;
}

SearchResult run_search(const OperationPool& pool, const DeviceTopology& topology, const SearchConfig& cfg,
                        const EncoderConfig& enc, const NoiseProfile& noise) {
  HardwareEvaluator eval(noise, cfg);
  return run_search(pool, topology, cfg, enc, eval);
}

namespace {

std::string join_selection(const std::vector<int>& sel) {
  std::string s;
  for (std::size_t i = 0; i < sel.size(); ++i) s += (i ? "-" : "") + std::to_string(sel[i]);
  return s;
}

}  // namespace

void write_trace_csv(std::ostream& os, const SearchTrace& trace, const std::string& manifest_ref) {
  if (!manifest_ref.empty()) os << "# manifest=" << manifest_ref << "\n";
  os << "step,temperature,loss,stability,mean_cost,min_cost,best_cost,mean_expressibility,mean_pst,selections\n";
  for (const auto& r : trace.steps) {
    double mc = 0.0, mn = std::numeric_limits<double>::infinity(), me = 0.0, mp = 0.0;
    const double B = static_cast<double>(r.evals.size());
    for (const auto& e : r.evals) {
      mc += e.cost / B;
      me += e.expressibility / B;
      mp += e.pst / B;
      mn = std::min(mn, e.cost);
    }
    std::string sels;
    for (std::size_t k = 0; k < r.selections.size(); ++k) sels += (k ? ";" : "") + join_selection(r.selections[k]);
    os << r.step << ',' << format_double(r.temperature) << ',' << format_double(r.loss) << ','
       << format_double(r.stability) << ',' << format_double(mc) << ',' << format_double(mn) << ','
       << format_double(r.best_cost) << ',' << format_double(me) << ',' << format_double(mp) << ',' << sels << "\n";
  }
}

std::string search_report_json(const SearchResult& r, const OperationPool& pool) {
  auto describe_sel = [&pool](const std::vector<int>& sel) {
    nlohmann::json a = nlohmann::json::array();
    for (int i : sel) a.push_back(describe(pool.entries.at(static_cast<std::size_t>(i))));
    return a;
  };
  nlohmann::json j;
  j["best"] = {{"step", r.best_step},
               {"selection", r.best_selection},
               {"operations", describe_sel(r.best_selection)},
               {"cost", r.best_eval.cost},
               {"expressibility", r.best_eval.expressibility},
               {"pst", r.best_eval.pst},
               {"circuit", serialize_circuit(r.best)}};
  const auto m = circuit_metrics(r.best);
  j["best"]["gate_count"] = m.gate_count;
  j["best"]["depth"] = m.depth;
  j["final_argmax"] = {{"selection", r.final_selection},
                       {"operations", describe_sel(r.final_selection)},
                       {"circuit", serialize_circuit(r.final_argmax)}};
  j["steps"] = r.trace.steps.size();
  return j.dump(2);
}

SearchConfig parse_search_config(const std::string& json_text, SearchConfig c) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("search config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("search config must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "steps") c.steps = v.get<int>();
    else if (key == "batch") c.batch = v.get<int>();
    else if (key == "t0") c.t0 = v.get<double>();
    else if (key == "gamma") c.gamma = v.get<double>();
    else if (key == "w1") c.w1 = v.get<double>();
    else if (key == "w2") c.w2 = v.get<double>();
    else if (key == "lambda_stability") c.lambda_stability = v.get<double>();
    else if (key == "n_pairs") c.n_pairs = v.get<int>();
    else if (key == "n_bins") c.n_bins = v.get<int>();
    else if (key == "expr_trajectories") c.expr_trajectories = v.get<int>();
    else if (key == "pst_shots") c.pst_shots = v.get<long>();
    else if (key == "pst_random_theta") c.pst_random_theta = v.get<bool>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "baseline") c.baseline = v.get<bool>();
    else if (key == "baseline_decay") c.baseline_decay = v.get<double>();
    else if (key == "log_prob") c.log_prob = log_prob_source_from_string(v.get<std::string>());
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "encoder") continue;  // read by the encoder config loader
    else throw std::invalid_argument("unknown search config key '" + key + "'");
  }
  c.validate();
  return c;
}

std::string search_config_to_json(const SearchConfig& c) {
  nlohmann::json j = {{"steps", c.steps},
                      {"batch", c.batch},
                      {"t0", c.t0},
                      {"gamma", c.gamma},
                      {"w1", c.w1},
                      {"w2", c.w2},
                      {"lambda_stability", c.lambda_stability},
                      {"n_pairs", c.n_pairs},
                      {"n_bins", c.n_bins},
                      {"expr_trajectories", c.expr_trajectories},
                      {"pst_shots", c.pst_shots},
                      {"pst_random_theta", c.pst_random_theta},
                      {"lr", c.lr},
                      {"baseline", c.baseline},
                      {"baseline_decay", c.baseline_decay},
                      {"log_prob", to_string(c.log_prob)},
                      {"seed", c.seed}};
  return j.dump(2);
}

}  // namespace qas
