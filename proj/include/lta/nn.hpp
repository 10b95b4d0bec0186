// SPDX-License-Identifier: Apache-2.0
//
// Building blocks shared by the backbone and the latent generator.
#pragma once

#include <string>

#include "lta/autograd.hpp"
#include "lta/rng.hpp"

namespace lta {

/// out[i] = x[i] / sqrt(mean(x^2) + eps) * gain[i]
RowVec rms_norm(const RowVec& x, const RowVec& gain, double eps);

/// Zero-mean normal matrix with the given standard deviation.
Mat normal_matrix(Rng& rng, int rows, int cols, double stddev);

/// Pre-norm Transformer block: RMSNorm -> multi-head self-attention ->
/// residual -> RMSNorm -> ReLU FFN (d -> 4d -> d) -> residual. No biases.
struct BlockWeights {
  Mat attn_norm;  // 1 x d
  Mat wq, wk, wv, wo;  // d x d
  Mat ffn_norm;  // 1 x d
  Mat w1;  // 4d x d
  Mat w2;  // d x 4d

  static BlockWeights init(Rng& rng, int width, double stddev);
  static BlockWeights zeros_like(const BlockWeights& w);

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "attn_norm", attn_norm);
    f(prefix + "wq", wq);
    f(prefix + "wk", wk);
    f(prefix + "wv", wv);
    f(prefix + "wo", wo);
    f(prefix + "ffn_norm", ffn_norm);
    f(prefix + "w1", w1);
    f(prefix + "w2", w2);
  }
  template <class F>
  void visit(const std::string& prefix, F&& f) const {
    const_cast<BlockWeights*>(this)->visit(prefix, [&](const std::string& n, const Mat& m) { f(n, m); });
  }
};

/// `grad` (nullable) receives parameter gradients on backward.
ad::Var block_forward(ad::Tape& tape, ad::Var x, const BlockWeights& w, BlockWeights* grad, int heads,
                      bool causal, double eps);

/// Registers `m` on the tape with its gradient routed to `sink` when non-null.
inline ad::Var bind(ad::Tape& tape, const Mat& m, Mat* sink) { return tape.param(m, sink); }

}  // namespace lta
