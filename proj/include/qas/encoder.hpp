#pragma once

// Attention encoder that turns architecture logits into context-aware logits.
// Query/key similarity is computed from quantum feature maps, and the
// position-wise feed-forward stage is a small data re-uploading circuit.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qas/diff.hpp"

namespace qas {

enum class EncoderMode { qbsa, classical_attention, identity };

const char* to_string(EncoderMode m);
EncoderMode encoder_mode_from_string(const std::string& s);

struct EncoderConfig {
  int max_depth = 8;         // D
  int pool_size = 1;         // C
  int rank = 4;              // K'
  int n_heads = 2;
  int n_feat_qubits = 4;     // feature-map width
  int n_ffn_qubits = 4;      // feed-forward circuit width
  int ffn_layers = 2;        // L_qsl
  double tau_attn = 1.0;
  double dropout = 0.1;
  bool positional_encoding = true;
  EncoderMode mode = EncoderMode::qbsa;
  double init_std = 0.5;     // std of the low-rank factors

  /// C when divisible by the head count, else rounded up to the next multiple.
  int d_model() const;
  int d_head() const { return d_model() / n_heads; }
  void validate() const;
};

struct HeadParams {
  diff::Parameter w_q, w_k, w_v;  // d_model x d_h
  diff::Parameter w_feat;         // d_h x n_feat: projects query/key rows to feature-map width
  diff::Parameter theta0, theta1; // 1 x n_feat
  diff::Parameter phase;          // 1 x 1
};

struct FfnParams {
  diff::Parameter w_down, b_down;  // d_model x n, 1 x n
  diff::Parameter theta, phi;      // 1 x (L * n), layer-major
  diff::Parameter w_up, b_up;      // n x d_model, 1 x d_model
};

struct EncoderState {
  EncoderConfig config;
  diff::Parameter p, q;                   // D x 1 x K', D x K' x C
  std::optional<diff::Parameter> w_in;    // C x d_model, only when d_model != C
  std::optional<diff::Parameter> w_out;   // d_model x C
  std::vector<HeadParams> heads;
  diff::Parameter w_o, b_o;
  diff::Parameter ln1_gain, ln1_bias;
  FfnParams ffn;
  diff::Parameter ln2_gain, ln2_bias;

  /// Every trainable array, in a fixed order.
  std::vector<diff::Parameter*> parameters();
  std::vector<const diff::Parameter*> parameters() const;
  /// Only P and Q.
  std::vector<diff::Parameter*> arch_parameters();
};

EncoderState init_encoder(const EncoderConfig& cfg, std::uint64_t seed);

/// Intermediate values of one forward pass, filled on request.
struct EncoderTrace {
  diff::Tensor alpha, alpha_in, alpha_mid, alpha_out;
  std::vector<diff::Tensor> attention;  // one D x D matrix per head
  std::vector<diff::Tensor> logits;     // pre-softmax Xi per head (before scaling)
  std::vector<diff::Tensor> phi_q, phi_k;
};

/// Rx(theta0_i u_i) on every qubit, Rz(u_i^2), CNOT chain, Ry(theta1_i u_i),
/// CNOT chain. Weights are [theta0, theta1].
diff::QuantumTemplate feature_map_template(int n_qubits);
/// H layer, then per layer Rz(phi_{l,i} z_i), Ry(theta_{l,i} z_i), CNOT
/// chain. Weights are [theta (L*n), phi (L*n)].
diff::QuantumTemplate ffn_template(int n_qubits, int layers);

std::vector<double> quantum_feature_map(std::span<const double> u, std::span<const double> theta0,
                                        std::span<const double> theta1);

/// Sinusoidal encoding with pos = depth index and the given width.
diff::Tensor positional_encoding(int depth, int width);

diff::Var arch_logits(diff::Tape& t, EncoderState& s);
/// (alpha alpha^T) alpha, plus the positional encoding when enabled.
diff::Var preprocess(diff::Tape& t, diff::Var alpha, bool with_pe);
diff::Var attention_forward(diff::Tape& t, diff::Var x, EncoderState& s, EncoderTrace* trace = nullptr);
/// `rng` null disables dropout.
diff::Var quantum_ffn(diff::Tape& t, diff::Var mid, EncoderState& s, std::mt19937_64* rng);

/// alpha -> alpha_out, D x C. In identity mode this is alpha itself.
diff::Var encoder_forward(diff::Tape& t, EncoderState& s, std::mt19937_64* dropout_rng = nullptr,
                          EncoderTrace* trace = nullptr);

/// Affine layer norm with learnable gain and bias rows.
diff::Var affine_layer_norm(diff::Var x, diff::Var gain, diff::Var bias);

std::string save_encoder(const EncoderState& s);
/// Restores parameters into a state built from the checkpoint's config.
EncoderState load_encoder(const std::string& json_text);

}  // namespace qas
