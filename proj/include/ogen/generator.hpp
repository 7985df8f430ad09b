#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "ogen/common.hpp"
#include "ogen/knn_retrieval.hpp"

namespace ogen {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr int kNumTensors = 10;

// Learnable tensors of the feature generator. Vectors are viewed as d x 1
// matrices by views() so generic code can treat every tensor alike.
struct GeneratorTensors {
  Mat w_q, w_k, w_v, w_o;  // d x d; W_Q/W_K/W_V hold h row blocks of d/h
  Vec ln_gain, ln_bias;    // d
  Mat ffn_w1;              // d_ff x d
  Vec ffn_b1;              // d_ff
  Mat ffn_w2;              // d x d_ff
  Vec ffn_b2;              // d

  static constexpr std::array<std::string_view, kNumTensors> names() {
    return {"w_q", "w_k", "w_v", "w_o", "ln_gain", "ln_bias", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"};
  }
  std::array<Eigen::Map<Mat>, kNumTensors> views();
  std::array<Eigen::Map<const Mat>, kNumTensors> views() const;

  // Same tensor shapes, all zero.
  GeneratorTensors zeros_like() const;
  std::size_t num_values() const;
  bool all_finite() const;
  bool operator==(const GeneratorTensors&) const;
};

struct GeneratorParams : GeneratorTensors {
  int heads = 4;
  int dim = 0;
  int ffn_dim = 0;

  int head_dim() const { return dim / heads; }
  bool same_shape(const GeneratorTensors& other) const;
};

struct GeneratorGrads : GeneratorTensors {
  GeneratorGrads() = default;
  explicit GeneratorGrads(const GeneratorTensors& t) : GeneratorTensors(t) {}
  GeneratorGrads& operator+=(const GeneratorGrads& o);
};

GeneratorGrads zero_grads(const GeneratorParams& params);

// Attention projections uniform in [-1/sqrt(d), 1/sqrt(d)], FFN weights the
// same, FFN biases zero, W_O zero, LN gain one and bias zero. Values are
// float32-representable. Throws ValidationError unless d % h == 0.
GeneratorParams init_params(int heads, int dim, int ffn_dim, std::uint64_t seed);

enum class TapeKind { kCrossAttention, kPerClass, kJoint, kDirect };

// Intermediate activations of one forward call, consumed by backward().
struct ForwardTape {
  TapeKind kind = TapeKind::kCrossAttention;
  const GeneratorParams* params = nullptr;
  bool consumed = false;

  // Cross-attention.
  Mat queries, keys, values;           // d x Q, d x K, d x K
  Mat q_proj, k_proj, v_proj;          // projected
  std::vector<Mat> attention;          // per head, Q x K softmax weights
  Mat head_concat;                     // d x Q, before W_O

  // Layer norm over columns of ln_input.
  Mat ln_normalized;                   // d x Q
  Vec ln_inv_std;                      // per column

  // Feed-forward projection of the conditioning embedding.
  Vec ffn_pre;                         // d_ff, before ReLU
  Vec ffn_act;                         // d_ff, after ReLU
};

struct MhcaOutput {
  Mat out;  // d x Q
  ForwardTape tape;
};

// Scaled dot-product cross-attention with h heads, softmax over the K key
// positions, head concatenation and output projection W_O.
MhcaOutput mhca(const Mat& queries, const Mat& keys, const Mat& values, const GeneratorParams& params);

struct Synthesis {
  Mat features;  // d x K (per class) or d x 1 (joint, direct)
  ForwardTape tape;
};

// Z = LN(Z_R + MHCA(w 1^T, W_R, Z_R)), LN applied per column.
Synthesis extrapolate_per_class(const NeighborContext& ctx, const Vec& conditioning, const GeneratorParams& params);

// z = LN(FFN(w) + MHCA(w, W_R, Z_R)), FFN(w) = W2 relu(W1 w + b1) + b2.
Synthesis extrapolate_jointly(const NeighborContext& ctx, const Vec& conditioning, const GeneratorParams& params);

// z = LN(FFN(w)): text-to-feature mapping with no neighbor extrapolation.
Synthesis project_directly(const Vec& conditioning, const GeneratorParams& params);

struct GeneratorBackward {
  GeneratorGrads grads;
  Vec d_conditioning;  // d (per class / joint / direct); summed over broadcast queries
  Mat d_queries;       // raw cross-attention only
  Mat d_keys;          // d x K
  Mat d_values;        // d x K
};

// Exact reverse-mode gradients for the forward call that produced `tape`.
// A tape can be consumed only once.
GeneratorBackward backward(ForwardTape& tape, const Mat& upstream);

}  // namespace ogen
