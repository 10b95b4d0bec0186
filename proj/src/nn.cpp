// SPDX-License-Identifier: Apache-2.0
#include "lta/nn.hpp"

#include <cmath>

#include "lta/error.hpp"

namespace lta {

RowVec rms_norm(const RowVec& x, const RowVec& gain, double eps) {
  if (x.size() != gain.size()) throw ShapeError("rms_norm: gain size mismatch");
  if (!(eps >= 0.0)) throw ArgumentError("rms_norm: eps must be non-negative");
  if (x.size() == 0) return x;
  const double ms = x.squaredNorm() / static_cast<double>(x.size());
  if (ms + eps == 0.0) return RowVec::Zero(x.size());
  return (x.array() / std::sqrt(ms + eps) * gain.array()).matrix();
}

Mat normal_matrix(Rng& rng, int rows, int cols, double stddev) {
  Mat m(rows, cols);
  if (stddev == 0.0) {
    m.setZero();
    return m;
  }
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

BlockWeights BlockWeights::init(Rng& rng, int width, double stddev) {
  BlockWeights w;
  w.attn_norm = Mat::Ones(1, width);
  w.wq = normal_matrix(rng, width, width, stddev);
  w.wk = normal_matrix(rng, width, width, stddev);
  w.wv = normal_matrix(rng, width, width, stddev);
  w.wo = normal_matrix(rng, width, width, stddev);
  w.ffn_norm = Mat::Ones(1, width);
  w.w1 = normal_matrix(rng, 4 * width, width, stddev);
  w.w2 = normal_matrix(rng, width, 4 * width, stddev);
  return w;
}

BlockWeights BlockWeights::zeros_like(const BlockWeights& src) {
  BlockWeights w = src;
  w.visit("", [](const std::string&, Mat& m) { m.setZero(); });
  return w;
}

ad::Var block_forward(ad::Tape& t, ad::Var x, const BlockWeights& w, BlockWeights* g, int heads, bool causal,
                      double eps) {
  auto p = [&](const Mat& m, Mat BlockWeights::*member) { return bind(t, m, g ? &(g->*member) : nullptr); };
  ad::Var h = ad::rms_norm(t, x, p(w.attn_norm, &BlockWeights::attn_norm), eps);
  ad::Var q = ad::matmul_nt(t, h, p(w.wq, &BlockWeights::wq));
  ad::Var k = ad::matmul_nt(t, h, p(w.wk, &BlockWeights::wk));
  ad::Var v = ad::matmul_nt(t, h, p(w.wv, &BlockWeights::wv));
  ad::Var att = ad::attention(t, q, k, v, heads, causal);
  x = ad::add(t, x, ad::matmul_nt(t, att, p(w.wo, &BlockWeights::wo)));
  h = ad::rms_norm(t, x, p(w.ffn_norm, &BlockWeights::ffn_norm), eps);
  h = ad::relu(t, ad::matmul_nt(t, h, p(w.w1, &BlockWeights::w1)));
  return ad::add(t, x, ad::matmul_nt(t, h, p(w.w2, &BlockWeights::w2)));
}

}  // namespace lta
