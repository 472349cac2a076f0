#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

#include "qas/parallel.hpp"
#include "qas/search.hpp"

using namespace qas;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

Tensor random_logits(std::size_t d, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Tensor t({d, c});
  for (auto& v : t.data) v = n01(rng);
  return t;
}

DeviceTopology two_qubit_line() { return DeviceTopology::line(2, {GateKind::Rx, GateKind::Rz}, {GateKind::CZ}); }

OperationPool two_qubit_pool() { return build_pool(two_qubit_line(), {GateKind::Rx, GateKind::Rz, GateKind::CZ}); }

SearchConfig cheap_config() {
  SearchConfig cfg;
  cfg.n_pairs = 64;
  cfg.n_bins = 20;
  cfg.pst_shots = 64;
  cfg.batch = 4;
  return cfg;
}

EncoderConfig small_encoder(int depth) {
  EncoderConfig e;
  e.max_depth = depth;
  e.n_feat_qubits = 2;
  e.n_ffn_qubits = 2;
  e.ffn_layers = 1;
  return e;
}

}  // namespace

TEST(Gumbel, LowTemperatureSoftIsOneHotAtSelection) {
  const Tensor logits = random_logits(3, 5, 1);
  const auto s = gumbel_sample(logits, 1e-3, 42);
  for (std::size_t d = 0; d < 3; ++d) {
    for (std::size_t k = 0; k < 5; ++k) {
      EXPECT_NEAR(s.soft.at(d, k), static_cast<int>(k) == s.selection[d] ? 1.0 : 0.0, 1e-9);
    }
  }
}

TEST(Gumbel, UniformLogitsGiveUniformFrequencies) {
  const std::size_t C = 5;
  const Tensor logits({1, C});
  std::vector<int> counts(C, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(gumbel_sample(logits, 1.0, 1000 + i).selection[0])];
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / draws, 1.0 / C, 0.02);
}

TEST(Gumbel, FrequenciesFollowSoftmaxOfLogits) {
  const Tensor logits = Tensor::matrix(1, 3, {0.0, 1.0, 2.0});
  std::vector<int> counts(3, 0);
  const int draws = 20000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(gumbel_sample(logits, 2.0, 7 + i).selection[0])];
  const double z = 1.0 + std::exp(1.0) + std::exp(2.0);
  const double expect[3] = {1.0 / z, std::exp(1.0) / z, std::exp(2.0) / z};
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(static_cast<double>(counts[k]) / draws, expect[k], 0.015);
}

TEST(Gumbel, DeterministicUnderSeed) {
  const Tensor logits = random_logits(4, 6, 3);
  const auto a = gumbel_sample(logits, 0.7, 99);
  const auto b = gumbel_sample(logits, 0.7, 99);
  EXPECT_EQ(a.selection, b.selection);
  EXPECT_EQ(a.noise.data, b.noise.data);
  EXPECT_THROW(gumbel_sample(logits, 0.0, 1), std::invalid_argument);
}

TEST(Gumbel, StraightThroughGradientIsNonzero) {
  const Tensor logits = random_logits(3, 4, 5);
  const auto s = gumbel_sample(logits, 1.5, 11);
  for (int mode = 0; mode < 2; ++mode) {
    Tape t;
    Var a = t.constant(logits);
    Var lp = mode == 0 ? gumbel_log_prob(a, s, 1.5) : softmax_log_prob(a, s.selection);
    t.backward(lp);
    const Tensor& g = t.grad(a.id);
    for (std::size_t d = 0; d < 3; ++d) {
      double row = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_NE(g.at(d, k), 0.0);
        row += g.at(d, k);
      }
      EXPECT_NEAR(row, 0.0, 1e-12);  // log-softmax gradients sum to zero per row
      EXPECT_GT(g.at(d, static_cast<std::size_t>(s.selection[d])), 0.0);
    }
  }
}

TEST(Expressibility, HaarBinsSumToOne) {
  for (int n : {1, 2, 4}) {
    const auto q = haar_bin_probabilities(n, 75);
    double total = 0.0;
    for (double v : q) {
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  // One qubit: Haar fidelities are uniform on [0, 1].
  for (double v : haar_bin_probabilities(1, 10)) EXPECT_NEAR(v, 0.1, 1e-12);
}

TEST(Expressibility, SampledHaarStatesMatchHaarBins) {
  const int n = 2, dim = 4, pairs = 20000, bins = 75;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01;
  auto haar_state = [&] {
    std::vector<std::complex<double>> v(dim);
    double norm = 0.0;
    for (auto& a : v) {
      a = {n01(rng), n01(rng)};
      norm += std::norm(a);
    }
    for (auto& a : v) a /= std::sqrt(norm);
    return v;
  };
  std::vector<double> fid;
  for (int i = 0; i < pairs; ++i) {
    const auto a = haar_state(), b = haar_state();
    std::complex<double> ip = 0.0;
    for (int k = 0; k < dim; ++k) ip += std::conj(a[k]) * b[k];
    fid.push_back(std::norm(ip));
  }
  EXPECT_LT(kl_divergence_bits(fidelity_histogram(fid, bins), haar_bin_probabilities(n, bins)), 0.02);
}

TEST(Expressibility, SingleRxMatchesArcsineLaw) {
  // Rx(a)|0> pairs have F = cos^2((a - b) / 2), so P(F <= f) = 1 - (2 / pi) acos(sqrt f).
  const int bins = 20;
  const Circuit c(1, {gate::free_rotation(GateKind::Rx, 0, 0)});
  std::vector<double> p(bins);
  for (int b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / bins, hi = static_cast<double>(b + 1) / bins;
    p[static_cast<std::size_t>(b)] = (2.0 / std::numbers::pi) * (std::acos(std::sqrt(lo)) - std::acos(std::sqrt(hi)));
  }
  double expected = 0.0;
  for (double v : p) expected += v * std::log2(v * bins);
  const double got = estimate_expressibility(c, nullptr, {20000, bins, 1}, 3);
  EXPECT_NEAR(got, expected, 0.02);
}

TEST(Expressibility, ParameterlessCircuitIsPointMass) {
  const int bins = 75;
  const Circuit c(2, {gate::fixed(GateKind::H, 0), gate::fixed(GateKind::CNOT, 0, 1)});
  const auto q = haar_bin_probabilities(2, bins);
  EXPECT_NEAR(estimate_expressibility(c, nullptr, {100, bins, 1}, 1), std::log2(1.0 / q.back()), 1e-9);
}

TEST(Expressibility, EntanglingLayersBeatSingleRotation) {
  std::vector<GateInstance> deep;
  int slot = 0;
  for (int layer = 0; layer < 4; ++layer) {
    for (int q = 0; q < 2; ++q) {
      deep.push_back(gate::free_rotation(GateKind::Rx, slot++, q));
      deep.push_back(gate::free_rotation(GateKind::Rz, slot++, q));
    }
    deep.push_back(gate::fixed(GateKind::CZ, 0, 1));
  }
  const Circuit deep_c(2, deep);
  const Circuit single(2, {gate::free_rotation(GateKind::Rx, 0, 0)});
  const ExpressibilityOptions opt{2000, 75, 1};
  const double kl_deep = estimate_expressibility(deep_c, nullptr, opt, 5);
  const double kl_single = estimate_expressibility(single, nullptr, opt, 5);
  EXPECT_GE(kl_deep, 0.0);
  EXPECT_LT(kl_deep, kl_single);
}

TEST(Expressibility, NoisyEstimateIsFiniteAndNonNegative) {
  const Circuit c(2, {gate::free_rotation(GateKind::Ry, 0, 0), gate::fixed(GateKind::CNOT, 0, 1)});
  const auto noise = NoiseProfile::depolarizing(0.05, 0.1);
  const double kl = estimate_expressibility(c, &noise, {200, 30, 2}, 9);
  EXPECT_TRUE(std::isfinite(kl));
  EXPECT_GE(kl, 0.0);
}

TEST(Pst, NoiselessIsExactlyOne) {
  std::mt19937_64 rng(2);
  const auto pool = build_pool(DeviceTopology::line(3, {GateKind::H, GateKind::Rx, GateKind::Ry, GateKind::Rz},
                                                    {GateKind::CNOT, GateKind::CZ}),
                               {GateKind::H, GateKind::Rx, GateKind::Ry, GateKind::Rz, GateKind::CNOT, GateKind::CZ});
  std::uniform_int_distribution<int> pick(0, static_cast<int>(pool.size()) - 1);
  std::uniform_real_distribution<double> ang(-3.0, 3.0);
  const NoiseProfile clean = NoiseProfile::depolarizing(0.0);
  for (int i = 0; i < 20; ++i) {
    std::vector<int> sel(10);
    for (auto& s : sel) s = pick(rng);
    const Circuit c = realize_circuit(pool, sel, 3);
    std::vector<double> theta(static_cast<std::size_t>(c.n_params()));
    for (auto& t : theta) t = ang(rng);
    EXPECT_EQ(estimate_pst(c, theta, clean, 256, i), 1.0);
  }
}

TEST(Pst, ReadoutOnlyOnEmptyCircuit) {
  const Circuit c(1, {});
  const auto noise = NoiseProfile::depolarizing(0.0, 0.0, 0.1);
  EXPECT_NEAR(estimate_pst(c, {}, noise, 100000, 4), 0.9, 0.01);
}

TEST(Pst, PauliParityOnXPair) {
  // X then its inverse; an X error after either gate flips the outcome, Z errors never do.
  const Circuit c(1, {gate::fixed(GateKind::X, 0)});
  const double p = 0.2;
  NoiseProfile dephase = NoiseProfile::depolarizing(0.0);
  dephase.p1 = {0.0, 0.0, p};
  EXPECT_EQ(estimate_pst(c, {}, dephase, 5000, 6), 1.0);

  NoiseProfile flip = NoiseProfile::depolarizing(0.0);
  flip.p1 = {p, 0.0, 0.0};
  const long shots = 40000;
  const double expect = (1 - p) * (1 - p) + p * p;
  const double se = std::sqrt(expect * (1 - expect) / shots);
  EXPECT_NEAR(estimate_pst(c, {}, flip, shots, 8), expect, 3 * se);
}

TEST(Pst, DecreasesWithDepolarizingStrength) {
  std::vector<GateInstance> g;
  for (int i = 0; i < 6; ++i) {
    g.push_back(gate::rotation(GateKind::Ry, 0.3 * (i + 1), i % 2));
    g.push_back(gate::fixed(GateKind::CNOT, 0, 1));
  }
  const Circuit c(2, g);
  double last = 1.1;
  for (double p : {0.0, 0.01, 0.05}) {
    const double v = estimate_pst(c, {}, NoiseProfile::depolarizing(p, 2 * p), 4000, 12);
    EXPECT_LT(v, last);
    last = v;
  }
}

TEST(Loss, ZeroWeightsGiveZero) {
  Tape t;
  SearchConfig cfg;
  cfg.w1 = cfg.w2 = 0.0;
  cfg.lambda_stability = 0.0;
  Var f = t.constant(random_logits(2, 3, 1));
  const Tensor prev = random_logits(2, 3, 2);
  std::vector<Var> lps{softmax_log_prob(f, std::vector<int>{0, 1}), softmax_log_prob(f, std::vector<int>{2, 2})};
  const std::vector<double> costs{0.0, 0.0};
  EXPECT_EQ(compute_loss(lps, costs, f, &prev, cfg).value().item(), 0.0);
}

TEST(Loss, CostTermArithmetic) {
  Tape t;
  SearchConfig cfg;
  Var f = t.constant(Tensor({2, 2}));  // uniform over two choices
  std::vector<Var> lps{softmax_log_prob(f, std::vector<int>{0, 1})};
  const std::vector<double> costs{1.0};
  LossBreakdown parts;
  const Var loss = compute_loss(lps, costs, f, nullptr, cfg, 0.0, &parts);
  EXPECT_NEAR(parts.cost_term, 2.0 * std::log(0.5), 1e-12);
  EXPECT_NEAR(parts.cost_term, -1.3863, 1e-4);
  EXPECT_EQ(parts.stability, 0.0);
  EXPECT_NEAR(loss.value().item(), -1.3863, 1e-4);
}

TEST(Loss, StabilityIsLInfinityOfChange) {
  Tape t;
  SearchConfig cfg;
  cfg.lambda_stability = 0.5;
  const Tensor now = Tensor::matrix(2, 2, {0.1, 0.2, 0.3, 0.4});
  Var f = t.constant(now);
  std::vector<Var> lps{softmax_log_prob(f, std::vector<int>{0, 0})};
  const std::vector<double> zero{0.0};
  LossBreakdown parts;
  compute_loss(lps, zero, f, &now, cfg, 0.0, &parts);
  EXPECT_EQ(parts.stability, 0.0);

  const Tensor prev = Tensor::matrix(2, 2, {0.1, -0.5, 0.3, 0.45});
  const Var l = compute_loss(lps, zero, f, &prev, cfg, 0.0, &parts);
  EXPECT_NEAR(parts.stability, 0.7, 1e-12);
  EXPECT_NEAR(l.value().item(), 0.5 * 0.7, 1e-12);
}

TEST(Loss, MismatchedBatchThrows) {
  Tape t;
  Var f = t.constant(Tensor({1, 2}));
  std::vector<Var> lps{softmax_log_prob(f, std::vector<int>{0})};
  const std::vector<double> costs{1.0, 2.0};
  EXPECT_THROW(compute_loss(lps, costs, f, nullptr, SearchConfig{}), std::invalid_argument);
}

TEST(SearchConfigTest, TemperatureScheduleMonotone) {
  SearchConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.temperature(1), cfg.t0);
  for (int t = 1; t < 500; ++t) EXPECT_LE(cfg.temperature(t + 1), cfg.temperature(t));
}

TEST(SearchConfigTest, JsonRoundTripAndErrors) {
  SearchConfig cfg;
  cfg.steps = 17;
  cfg.lr = 0.05;
  cfg.baseline = true;
  cfg.log_prob = LogProbSource::gumbel_soft;
  cfg.seed = 123;
  const SearchConfig back = parse_search_config(search_config_to_json(cfg));
  EXPECT_EQ(back.steps, 17);
  EXPECT_DOUBLE_EQ(back.lr, 0.05);
  EXPECT_TRUE(back.baseline);
  EXPECT_EQ(back.log_prob, LogProbSource::gumbel_soft);
  EXPECT_EQ(back.seed, 123u);
  EXPECT_THROW(parse_search_config(R"({"stepz": 3})"), std::invalid_argument);
  EXPECT_THROW(parse_search_config(R"({"gamma": 1.5})").validate(), std::invalid_argument);
}

TEST(RunSearch, SmokeSingleStep) {
  SearchConfig cfg = cheap_config();
  cfg.steps = 1;
  cfg.batch = 1;
  const auto r = run_search(two_qubit_pool(), two_qubit_line(), cfg, small_encoder(4), NoiseProfile::depolarizing(0.01, 0.02));
  ASSERT_EQ(r.trace.steps.size(), 1u);
  EXPECT_EQ(r.trace.steps[0].selections.size(), 1u);
  EXPECT_EQ(r.best.size(), 4u);
  EXPECT_TRUE(std::isfinite(r.trace.steps[0].loss));
}

TEST(RunSearch, RunningMinimumNeverIncreases) {
  SearchConfig cfg = cheap_config();
  cfg.steps = 100;
  const auto pool = two_qubit_pool();
  ASSERT_EQ(pool.size(), 5u);
  const auto r = run_search(pool, two_qubit_line(), cfg, small_encoder(4), NoiseProfile::depolarizing(0.01, 0.02));
  ASSERT_EQ(r.trace.steps.size(), 100u);
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& s : r.trace.steps) {
    EXPECT_LE(s.best_cost, prev);
    EXPECT_TRUE(std::isfinite(s.loss));
    EXPECT_GE(s.temperature, 0.0);
    for (const auto& e : s.evals) {
      EXPECT_GE(e.pst, 0.0);
      EXPECT_LE(e.pst, 1.0);
      EXPECT_GE(e.expressibility, 0.0);
      EXPECT_GE(e.cost, 0.0);
    }
    prev = s.best_cost;
  }
  EXPECT_EQ(r.best_eval.cost, r.trace.steps.back().best_cost);
}

TEST(RunSearch, ReproducibleAndThreadCountIndependent) {
  SearchConfig cfg = cheap_config();
  cfg.steps = 5;
  cfg.seed = 77;
  auto csv = [&](unsigned threads) {
    set_num_threads(threads);
    const auto r = run_search(two_qubit_pool(), two_qubit_line(), cfg, small_encoder(3), NoiseProfile::depolarizing(0.02, 0.05));
    std::ostringstream os;
    write_trace_csv(os, r.trace);
    return os.str();
  };
  const std::string a = csv(1), b = csv(1), c = csv(3);
  set_num_threads(1);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  cfg.seed = 78;
  EXPECT_NE(a, csv(1));
}

TEST(RunSearch, RiggedColumnIsLearned) {
  SearchConfig cfg;
  cfg.steps = 200;
  const int column = 2;
  const RiggedEvaluator ev(column);
  EncoderConfig enc = small_encoder(4);
  const auto r = run_search(two_qubit_pool(), two_qubit_line(), cfg, enc, ev);
  EncoderState s = r.encoder;
  EXPECT_GT(selection_probability(s, column), 0.9);
  for (int sel : r.final_selection) EXPECT_EQ(sel, column);
}

namespace {

class NanEvaluator : public CandidateEvaluator {
 public:
  CandidateEval evaluate(const Circuit&, std::span<const int>, std::uint64_t) const override {
    return {0.0, 1.0, std::numeric_limits<double>::quiet_NaN()};
  }
};

}  // namespace

TEST(RunSearch, NonFiniteLossAbortsWithTrace) {
  SearchConfig cfg = cheap_config();
  cfg.steps = 3;
  try {
    run_search(two_qubit_pool(), two_qubit_line(), cfg, small_encoder(2), NanEvaluator{});
    FAIL() << "expected SearchDiverged";
  } catch (const SearchDiverged& e) {
    EXPECT_EQ(e.trace().steps.size(), 1u);
  }
}

TEST(RunSearch, TraceCsvLayout) {
  SearchConfig cfg = cheap_config();
  cfg.steps = 2;
  cfg.batch = 2;
  const auto r = run_search(two_qubit_pool(), two_qubit_line(), cfg, small_encoder(3), RiggedEvaluator(0));
  std::ostringstream os;
  write_trace_csv(os, r.trace, "manifest.json");
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "# manifest=manifest.json");
  std::getline(is, line);
  EXPECT_EQ(line.rfind("step,temperature,loss", 0), 0u);
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    EXPECT_NE(line.find(';'), std::string::npos);
  }
  EXPECT_EQ(rows, 2);
}
