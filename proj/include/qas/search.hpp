#pragma once

// Differentiable architecture search: Gumbel-softmax sampling over encoder
// logits, a noise-aware cost (expressibility and probability of successful
// trials), and score-function updates of the encoder.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qas/circuit.hpp"
#include "qas/diff.hpp"
#include "qas/encoder.hpp"
#include "qas/simulator.hpp"

namespace qas {

/// Where log p_{k,d} is read from. `gumbel_soft` uses the relaxed
/// distribution softmax((alpha_out + G) / tau) that produced the sample;
/// `softmax` uses softmax(alpha_out) without noise or temperature.
enum class LogProbSource { gumbel_soft, softmax };

struct SearchConfig {
  int steps = 100;
  int batch = 8;
  double t0 = 5.0;
  double gamma = 0.985;
  double w1 = 1.0;
  double w2 = 1.0;
  double lambda_stability = 0.1;
  int n_pairs = 1000;
  int n_bins = 75;
  int expr_trajectories = 4;  // trajectories per state when noise is present
  long pst_shots = 1024;
  bool pst_random_theta = false;
  double lr = 0.01;
  bool baseline = false;      // subtract a running mean of C_k
  double baseline_decay = 0.9;
  LogProbSource log_prob = LogProbSource::softmax;
  std::uint64_t seed = 0;

  double temperature(int step) const;  // step is 1-based
  void validate() const;
};

const char* to_string(LogProbSource s);
LogProbSource log_prob_source_from_string(const std::string& s);

struct GumbelSample {
  std::vector<int> selection;  // one pool index per depth row
  diff::Tensor noise;          // D x C Gumbel perturbations
  diff::Tensor soft;           // D x C relaxed probabilities
};

/// Hard argmax of (logits + G) per row with G = -log(-log U); `soft` is the
/// tempered softmax of the same perturbed logits.
GumbelSample gumbel_sample(const diff::Tensor& logits, double temperature, std::uint64_t seed);

/// sum_d log softmax((alpha + G) / tau)[d, y_d]; the gradient reaches alpha
/// through the soft distribution while the forward choice stays hard.
diff::Var gumbel_log_prob(diff::Var alpha_out, const GumbelSample& s, double temperature);
/// sum_d log softmax(alpha)[d, y_d]
diff::Var softmax_log_prob(diff::Var alpha_out, std::span<const int> selection);

/// Haar fidelity mass per bin: (1 - a)^(N-1) - (1 - b)^(N-1), N = 2^n.
std::vector<double> haar_bin_probabilities(int n_qubits, int n_bins);
/// KL(P || Q) in bits, skipping empty P bins and flooring Q at 1e-10.
double kl_divergence_bits(std::span<const double> p, std::span<const double> q);
std::vector<double> fidelity_histogram(std::span<const double> fidelities, int n_bins);

struct ExpressibilityOptions {
  int n_pairs = 1000;
  int n_bins = 75;
  int trajectories = 4;
};

double estimate_expressibility(const Circuit& c, const NoiseProfile* noise, const ExpressibilityOptions& opt,
                               std::uint64_t seed);

/// Runs c then its inverse for `shots` independent noise trajectories and
/// returns the fraction that read out as all zeros.
double estimate_pst(const Circuit& c, std::span<const double> theta, const NoiseProfile& noise, long shots,
                    std::uint64_t seed);

struct CandidateEval {
  double expressibility = 0.0;
  double pst = 1.0;
  double cost = 0.0;
};

class CandidateEvaluator {
 public:
  virtual ~CandidateEvaluator() = default;
  virtual CandidateEval evaluate(const Circuit& c, std::span<const int> selection, std::uint64_t seed) const = 0;
};

/// Cost w1 * expressibility + w2 * (1 - PST) under a noise profile.
class HardwareEvaluator : public CandidateEvaluator {
 public:
  HardwareEvaluator(NoiseProfile noise, const SearchConfig& cfg);
  CandidateEval evaluate(const Circuit& c, std::span<const int> selection, std::uint64_t seed) const override;

 private:
  NoiseProfile noise_;
  SearchConfig cfg_;
};

/// Test stub: cost is the fraction of depth slots that do not pick `column`.
class RiggedEvaluator : public CandidateEvaluator {
 public:
  explicit RiggedEvaluator(int column) : column_(column) {}
  CandidateEval evaluate(const Circuit& c, std::span<const int> selection, std::uint64_t seed) const override;

 private:
  int column_;
};

struct LossBreakdown {
  double cost_term = 0.0;  // sum_k (C_k - b) * sum_d log p_{k,d}
  double stability = 0.0;
  double total = 0.0;
};

/// (1/B) (sum_k C_k * logp_k + lambda * L_stab) on the tape. `f_prev` null
/// means the first step, where L_stab = 0.
diff::Var compute_loss(const std::vector<diff::Var>& log_probs, std::span<const double> costs, diff::Var f_t,
                       const diff::Tensor* f_prev, const SearchConfig& cfg, double baseline = 0.0,
                       LossBreakdown* out = nullptr);

struct StepRecord {
  int step = 0;
  double temperature = 0.0;
  std::vector<std::vector<int>> selections;
  std::vector<CandidateEval> evals;
  double stability = 0.0;
  double loss = 0.0;
  double best_cost = 0.0;  // running minimum including this step
};

struct SearchTrace {
  std::vector<StepRecord> steps;
};

struct SearchResult {
  Circuit best;
  std::vector<int> best_selection;
  CandidateEval best_eval;
  int best_step = 0;
  Circuit final_argmax;
  std::vector<int> final_selection;
  SearchTrace trace;
  EncoderState encoder;
};

class SearchDiverged : public std::runtime_error {
 public:
  SearchDiverged(const std::string& what, SearchTrace trace) : std::runtime_error(what), trace_(std::move(trace)) {}
  const SearchTrace& trace() const { return trace_; }

 private:
  SearchTrace trace_;
};

using StepCallback = std::function<void(const StepRecord&, const EncoderState&)>;

/// Runs the search for cfg.steps steps. enc.pool_size is taken from the pool.
SearchResult run_search(const OperationPool& pool, const DeviceTopology& topology, const SearchConfig& cfg,
                        EncoderConfig enc, const CandidateEvaluator& evaluator, const StepCallback& on_step = {});
SearchResult run_search(const OperationPool& pool, const DeviceTopology& topology, const SearchConfig& cfg,
                        const EncoderConfig& enc, const NoiseProfile& noise);

/// Deterministic (dropout off) encoder output.
diff::Tensor encoder_output(EncoderState& s);
/// Mean over depth rows of softmax(alpha_out)[d, column].
double selection_probability(EncoderState& s, int column);
std::vector<int> argmax_selection(const diff::Tensor& logits);

void write_trace_csv(std::ostream& os, const SearchTrace& trace, const std::string& manifest_ref = "");
std::string search_report_json(const SearchResult& r, const OperationPool& pool);

SearchConfig parse_search_config(const std::string& json_text, SearchConfig base = {});
std::string search_config_to_json(const SearchConfig& cfg);

}  // namespace qas
