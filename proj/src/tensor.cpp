#include "msight/tensor.hpp"

#include "msight/error.hpp"

#include <cmath>
#include <numbers>

namespace msight::ad {

namespace {

void require_same_tape(const Var& a, const Var& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw Error(Errc::InvalidArgument, "operands live on different tapes");
}

void require_shape(bool ok, const char* what) {
  if (!ok) throw Error(Errc::ShapeMismatch, what);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

const Mat& Var::value() const { return tape_->value(*this); }

const Mat& Var::grad() const { return tape_->grad_of(*this); }

Var Tape::constant(Mat v) { return push(std::move(v), false, nullptr); }

Var Tape::parameter(Mat v) { return push(std::move(v), record_, nullptr); }

Var Tape::push(Mat value, bool needs_grad, Backward back) {
  Node n;
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.back = std::move(back);
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Mat& Tape::grad(const Var& v) {
  Node& n = nodes_[v.id_];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& out) {
  if (!record_) throw Error(Errc::GraphNotRecorded, "tape was created without recording");
  if (out.tape_ != this) throw Error(Errc::InvalidArgument, "variable belongs to another tape");
  if (swept_) throw Error(Errc::GraphNotRecorded, "graph already consumed by a backward pass");
  require_shape(value(out).size() == 1, "backward needs a scalar output");
  swept_ = true;
  grad(out)(0, 0) += 1.0;
  for (std::size_t i = out.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.back || n.grad.size() == 0) continue;
    n.back(*this, n.value, n.grad);
  }
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul inner dimensions differ");
  Tape& t = *a.tape();
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Mat v = a.value() * b.value();
  return t.push(std::move(v), ng, [a, b](Tape& tp, const Mat&, const Mat& g) {
    if (tp.needs_grad(a)) tp.grad(a).noalias() += g * b.value().transpose();
    if (tp.needs_grad(b)) tp.grad(b).noalias() += a.value().transpose() * g;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.cols(), "matmul_nt column counts differ");
  Tape& t = *a.tape();
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Mat v = a.value() * b.value().transpose();
  return t.push(std::move(v), ng, [a, b](Tape& tp, const Mat&, const Mat& g) {
    if (tp.needs_grad(a)) tp.grad(a).noalias() += g * b.value();
    if (tp.needs_grad(b)) tp.grad(b).noalias() += g.transpose() * a.value();
  });
}

namespace {

Var binary_same_shape(const Var& a, const Var& b, double sb) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "elementwise operands differ in shape");
  Tape& t = *a.tape();
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Mat v = a.value() + sb * b.value();
  return t.push(std::move(v), ng, [a, b, sb](Tape& tp, const Mat&, const Mat& g) {
    if (tp.needs_grad(a)) tp.grad(a) += g;
    if (tp.needs_grad(b)) tp.grad(b) += sb * g;
  });
}

template <typename F, typename D>
Var unary(const Var& a, F f, D df) {
  Tape& t = *a.tape();
  Mat v = a.value().unaryExpr(f);
  return t.push(std::move(v), t.needs_grad(a), [a, df](Tape& tp, const Mat&, const Mat& g) {
    tp.grad(a).array() += g.array() * a.value().unaryExpr(df).array();
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary_same_shape(a, b, 1.0); }

Var sub(const Var& a, const Var& b) { return binary_same_shape(a, b, -1.0); }

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "bias row does not match column count");
  Tape& t = *a.tape();
  const bool ng = t.needs_grad(a) || t.needs_grad(row);
  Mat v = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(v), ng, [a, row](Tape& tp, const Mat&, const Mat& g) {
    if (tp.needs_grad(a)) tp.grad(a) += g;
    if (tp.needs_grad(row)) tp.grad(row) += g.colwise().sum();
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "elementwise operands differ in shape");
  Tape& t = *a.tape();
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  Mat v = a.value().cwiseProduct(b.value());
  return t.push(std::move(v), ng, [a, b](Tape& tp, const Mat&, const Mat& g) {
    if (tp.needs_grad(a)) tp.grad(a) += g.cwiseProduct(b.value());
    if (tp.needs_grad(b)) tp.grad(b) += g.cwiseProduct(a.value());
  });
}

Var scale(const Var& a, double s) {
  Tape& t = *a.tape();
  return t.push(s * a.value(), t.needs_grad(a), [a, s](Tape& tp, const Mat&, const Mat& g) { tp.grad(a) += s * g; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sum(const Var& a) {
  Tape& t = *a.tape();
  Mat v(1, 1);
  v(0, 0) = a.value().sum();
  return t.push(std::move(v), t.needs_grad(a), [a](Tape& tp, const Mat&, const Mat& g) {
    tp.grad(a).array() += g(0, 0);
  });
}

Var gelu(const Var& a) {
  return unary(a, [](double x) { return x * normal_cdf(x); },
               [](double x) { return normal_cdf(x) + x * normal_pdf(x); });
}

Var softplus(const Var& a) { return unary(a, softplus_value, sigmoid); }

Var softmax_rows(const Var& a, const Mask& allowed) {
  require_shape(allowed.rows() == a.rows() && allowed.cols() == a.cols(), "mask shape differs from scores");
  Tape& t = *a.tape();
  const Mat& x = a.value();
  Mat p = Mat::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (allowed(i, j)) m = std::max(m, x(i, j));
    if (!std::isfinite(m)) throw Error(Errc::InvalidArgument, "softmax row has no allowed entry");
    double z = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (allowed(i, j)) z += (p(i, j) = std::exp(x(i, j) - m));
    p.row(i) /= z;
  }
  return t.push(p, t.needs_grad(a), [a](Tape& tp, const Mat& y, const Mat& g) {
    // dx = y * (g - <g, y>) per row
    const Eigen::VectorXd dots = g.cwiseProduct(y).rowwise().sum();
    tp.grad(a) += y.cwiseProduct(g.colwise() - dots);
  });
}

Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps) {
  require_same_tape(a, gain);
  require_same_tape(a, bias);
  const Eigen::Index n = a.cols();
  require_shape(gain.rows() == 1 && gain.cols() == n && bias.rows() == 1 && bias.cols() == n,
                "layer norm gain/bias do not match column count");
  Tape& t = *a.tape();
  const Mat& x = a.value();
  const Eigen::VectorXd mean = x.rowwise().mean();
  Mat xc = x.colwise() - mean;
  const Eigen::VectorXd inv_std = ((xc.array().square().rowwise().sum() / static_cast<double>(n)) + eps).rsqrt();
  Mat xhat = xc.array().colwise() * inv_std.array();
  Mat y = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  const bool ng = t.needs_grad(a) || t.needs_grad(gain) || t.needs_grad(bias);
  return t.push(std::move(y), ng, [a, gain, bias, xhat, inv_std](Tape& tp, const Mat&, const Mat& g) {
    if (tp.needs_grad(gain)) tp.grad(gain) += g.cwiseProduct(xhat).colwise().sum();
    if (tp.needs_grad(bias)) tp.grad(bias) += g.colwise().sum();
    if (tp.needs_grad(a)) {
      const Mat gx = g.array().rowwise() * gain.value().row(0).array();
      const Eigen::VectorXd m1 = gx.rowwise().mean();
      const Eigen::VectorXd m2 = gx.cwiseProduct(xhat).rowwise().mean();
      Mat d = gx.colwise() - m1;
      d.array() -= xhat.array().colwise() * m2.array();
      d = d.array().colwise() * inv_std.array();
      tp.grad(a) += d;
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require_shape(start >= 0 && count >= 0 && start + count <= a.cols(), "column slice out of range");
  Tape& t = *a.tape();
  return t.push(a.value().middleCols(start, count), t.needs_grad(a), [a, start, count](Tape& tp, const Mat&, const Mat& g) {
    tp.grad(a).middleCols(start, count) += g;
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(Errc::InvalidArgument, "nothing to concatenate");
  Tape& t = *parts.front().tape();
  Eigen::Index cols = 0;
  bool ng = false;
  for (const auto& p : parts) {
    require_same_tape(parts.front(), p);
    require_shape(p.rows() == parts.front().rows(), "concat parts differ in row count");
    cols += p.cols();
    ng = ng || t.needs_grad(p);
  }
  Mat v(parts.front().rows(), cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.push(std::move(v), ng, [parts](Tape& tp, const Mat&, const Mat& g) {
    Eigen::Index c0 = 0;
    for (const auto& p : parts) {
      if (tp.needs_grad(p)) tp.grad(p) += g.middleCols(c0, p.cols());
      c0 += p.cols();
    }
  });
}

}  // namespace msight::ad
