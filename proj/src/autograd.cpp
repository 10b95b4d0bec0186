// SPDX-License-Identifier: Apache-2.0
#include "lta/autograd.hpp"

#include <cmath>
#include <limits>

#include "lta/error.hpp"

namespace lta::ad {

Var Tape::constant(Mat value) { return push(std::move(value), false, nullptr); }

Var Tape::param(const Mat& value, Mat* sink) {
  Node n;
  n.ref = &value;
  n.sink = sink;
  n.needs_grad = sink != nullptr;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref ? *n.ref : n.value;
}

Var Tape::push(Mat value, bool needs_grad, BackFn back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Mat& v = value(Var{id});
    n.grad = Mat::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(Var out) {
  if (value(out).size() != 1) throw ShapeError("backward requires a scalar output");
  if (!nodes_[out.id].needs_grad) return;
  grad(out.id)(0, 0) = 1.0;
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this, i);
    if (n.sink) {
      if (n.sink->size() == 0) *n.sink = Mat::Zero(n.grad.rows(), n.grad.cols());
      *n.sink += n.grad;
    }
  }
}

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  return t.push(t.value(a) + t.value(b), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape& t, int self) {
                  const Mat& g = t.grad(self);
                  if (t.needs_grad(a)) t.grad(a.id) += g;
                  if (t.needs_grad(b)) t.grad(b.id) += g;
                });
}

Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  return t.push(t.value(a) - t.value(b), t.needs_grad(a) || t.needs_grad(b),
                [a, b](Tape& t, int self) {
                  const Mat& g = t.grad(self);
                  if (t.needs_grad(a)) t.grad(a.id) += g;
                  if (t.needs_grad(b)) t.grad(b.id) -= g;
                });
}

Var scale(Tape& t, Var a, double s) {
  return t.push(t.value(a) * s, t.needs_grad(a),
                [a, s](Tape& t, int self) { t.grad(a.id) += t.grad(self) * s; });
}

Var matmul(Tape& t, Var a, Var b) {
  const Mat& va = t.value(a);
  const Mat& vb = t.value(b);
  if (va.cols() != vb.rows()) throw ShapeError("matmul: inner dimension mismatch");
  Mat out = va * vb;
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(a)) t.grad(a.id).noalias() += g * t.value(b).transpose();
    if (t.needs_grad(b)) t.grad(b.id).noalias() += t.value(a).transpose() * g;
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Mat& va = t.value(a);
  const Mat& vb = t.value(b);
  if (va.cols() != vb.cols()) throw ShapeError("matmul_nt: inner dimension mismatch");
  Mat out = va * vb.transpose();
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(b), [a, b](Tape& t, int self) {
    const Mat& g = t.grad(self);
    if (t.needs_grad(a)) t.grad(a.id).noalias() += g * t.value(b);
    if (t.needs_grad(b)) t.grad(b.id).noalias() += g.transpose() * t.value(a);
  });
}

Var add_row(Tape& t, Var a, Var row) {
  const Mat& va = t.value(a);
  const Mat& vr = t.value(row);
  if (vr.rows() != 1 || vr.cols() != va.cols()) throw ShapeError("add_row: bias shape mismatch");
  Mat out = va.rowwise() + vr.row(0);
  return t.push(std::move(out), t.needs_grad(a) || t.needs_grad(row),
                [a, row](Tape& t, int self) {
                  const Mat& g = t.grad(self);
                  if (t.needs_grad(a)) t.grad(a.id) += g;
                  if (t.needs_grad(row)) t.grad(row.id) += g.colwise().sum();
                });
}

Var relu(Tape& t, Var a) {
  Mat out = t.value(a).cwiseMax(0.0);
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& t, int self) {
    const Mat& x = t.value(a);
    t.grad(a.id).array() += t.grad(self).array() * (x.array() > 0.0).cast<double>();
  });
}

Var rms_norm(Tape& t, Var x, Var gain, double eps) {
  const Mat& vx = t.value(x);
  const Mat& vg = t.value(gain);
  if (vg.rows() != 1 || vg.cols() != vx.cols()) throw ShapeError("rms_norm: gain shape mismatch");
  const double d = static_cast<double>(vx.cols());
  Vec inv(vx.rows());
  Mat normed(vx.rows(), vx.cols());
  for (Eigen::Index r = 0; r < vx.rows(); ++r) {
    inv(r) = 1.0 / std::sqrt(vx.row(r).squaredNorm() / d + eps);
    normed.row(r) = vx.row(r) * inv(r);
  }
  Mat out = normed.array().rowwise() * vg.row(0).array();
  return t.push(std::move(out), t.needs_grad(x) || t.needs_grad(gain),
                [x, gain, inv, normed, d](Tape& t, int self) {
                  const Mat& g = t.grad(self);
                  const Mat& vg = t.value(gain);
                  if (t.needs_grad(gain))
                    t.grad(gain.id) += (g.array() * normed.array()).colwise().sum().matrix();
                  if (t.needs_grad(x)) {
                    Mat& gx = t.grad(x.id);
                    for (Eigen::Index r = 0; r < g.rows(); ++r) {
                      RowVec gn = g.row(r).cwiseProduct(vg.row(0));
                      const double dot = gn.dot(normed.row(r));
                      gx.row(r) += inv(r) * (gn - normed.row(r) * (dot / d));
                    }
                  }
                });
}

Var rows(Tape& t, Var a, int begin, int count) {
  const Mat& va = t.value(a);
  if (begin < 0 || count < 0 || begin + count > va.rows()) throw IndexError("rows: slice out of range");
  Mat out = va.middleRows(begin, count);
  return t.push(std::move(out), t.needs_grad(a), [a, begin, count](Tape& t, int self) {
    t.grad(a.id).middleRows(begin, count) += t.grad(self);
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = t.value(parts[0]).cols();
  Eigen::Index total = 0;
  bool needs = false;
  for (Var p : parts) {
    if (t.value(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
    total += t.value(p).rows();
    needs = needs || t.needs_grad(p);
  }
  Mat out(total, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    const Mat& v = t.value(p);
    out.middleRows(at, v.rows()) = v;
    at += v.rows();
  }
  std::vector<Var> copy(parts.begin(), parts.end());
  return t.push(std::move(out), needs, [copy](Tape& t, int self) {
    Eigen::Index at = 0;
    for (Var p : copy) {
      const Eigen::Index n = t.value(p).rows();
      if (t.needs_grad(p)) t.grad(p.id) += t.grad(self).middleRows(at, n);
      at += n;
    }
  });
}

Var gather_rows(Tape& t, Var table, std::span<const int> ids) {
  const Mat& vt = t.value(table);
  Mat out(static_cast<Eigen::Index>(ids.size()), vt.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vt.rows()) throw IndexError("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = vt.row(ids[i]);
  }
  std::vector<int> copy(ids.begin(), ids.end());
  return t.push(std::move(out), t.needs_grad(table), [table, copy](Tape& t, int self) {
    Mat& g = t.grad(table.id);
    const Mat& gs = t.grad(self);
    for (std::size_t i = 0; i < copy.size(); ++i) g.row(copy[i]) += gs.row(static_cast<Eigen::Index>(i));
  });
}

Var mean_rows(Tape& t, Var a) {
  const Mat& va = t.value(a);
  if (va.rows() == 0) throw ShapeError("mean_rows: empty input");
  Mat out = va.colwise().mean();
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& t, int self) {
    Mat& g = t.grad(a.id);
    const double inv = 1.0 / static_cast<double>(g.rows());
    g.rowwise() += t.grad(self).row(0) * inv;
  });
}

Var reshape(Tape& t, Var a, int r, int c) {
  const Mat& va = t.value(a);
  if (static_cast<Eigen::Index>(r) * c != va.size()) throw ShapeError("reshape: size mismatch");
  Mat out = Eigen::Map<const Mat>(va.data(), r, c);
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& t, int self) {
    Mat& g = t.grad(a.id);
    g += Eigen::Map<const Mat>(t.grad(self).data(), g.rows(), g.cols());
  });
}

Var weighted_sum(Tape& t, std::span<const Var> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  double total = 0.0;
  bool needs = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (t.value(terms[i]).size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    total += weights[i] * t.scalar(terms[i]);
    needs = needs || (t.needs_grad(terms[i]) && weights[i] != 0.0);
  }
  Mat out(1, 1);
  out(0, 0) = total;
  std::vector<Var> tc(terms.begin(), terms.end());
  std::vector<double> wc(weights.begin(), weights.end());
  return t.push(std::move(out), needs, [tc, wc](Tape& t, int self) {
    const double g = t.grad(self)(0, 0);
    for (std::size_t i = 0; i < tc.size(); ++i)
      if (t.needs_grad(tc[i]) && wc[i] != 0.0) t.grad(tc[i].id)(0, 0) += g * wc[i];
  });
}

Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal) {
  const Mat& vq = t.value(q);
  const Mat& vk = t.value(k);
  const Mat& vv = t.value(v);
  const Eigen::Index n = vq.rows();
  const Eigen::Index d = vq.cols();
  if (vk.rows() != n || vv.rows() != n || vk.cols() != d || vv.cols() != d)
    throw ShapeError("attention: q/k/v shape mismatch");
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const Eigen::Index dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat out(n, d);
  std::vector<Mat> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Mat s = vq.middleCols(h * dh, dh) * vk.middleCols(h * dh, dh).transpose() * inv_sqrt;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index last = causal ? i : n - 1;
      const double mx = s.row(i).head(last + 1).maxCoeff();
      double z = 0.0;
      for (Eigen::Index j = 0; j <= last; ++j) {
        s(i, j) = std::exp(s(i, j) - mx);
        z += s(i, j);
      }
      s.row(i).head(last + 1) /= z;
      for (Eigen::Index j = last + 1; j < n; ++j) s(i, j) = 0.0;
    }
    out.middleCols(h * dh, dh).noalias() = s * vv.middleCols(h * dh, dh);
    probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  const bool needs = t.needs_grad(q) || t.needs_grad(k) || t.needs_grad(v);
  return t.push(std::move(out), needs,
                [q, k, v, heads, dh, inv_sqrt, probs = std::move(probs)](Tape& t, int self) {
                  const Mat& g = t.grad(self);
                  const Mat& vq = t.value(q);
                  const Mat& vk = t.value(k);
                  const Mat& vv = t.value(v);
                  const bool gq = t.needs_grad(q), gk = t.needs_grad(k), gv = t.needs_grad(v);
                  for (int h = 0; h < heads; ++h) {
                    const Mat& p = probs[static_cast<std::size_t>(h)];
                    const auto go = g.middleCols(h * dh, dh);
                    if (gv) t.grad(v.id).middleCols(h * dh, dh).noalias() += p.transpose() * go;
                    if (!gq && !gk) continue;
                    Mat dp = go * vv.middleCols(h * dh, dh).transpose();
                    Vec rowdot = (dp.array() * p.array()).rowwise().sum();
                    Mat ds = (p.array() * (dp.colwise() - rowdot).array()).matrix() * inv_sqrt;
                    if (gq) t.grad(q.id).middleCols(h * dh, dh).noalias() += ds * vk.middleCols(h * dh, dh);
                    if (gk)
                      t.grad(k.id).middleCols(h * dh, dh).noalias() += ds.transpose() * vq.middleCols(h * dh, dh);
                  }
                });
}

}  // namespace lta::ad
