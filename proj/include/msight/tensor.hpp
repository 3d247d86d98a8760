#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

/// Dense reverse-mode autodiff over row-major-style 2-D matrices. Rows are
/// tokens, columns are features.
namespace msight::ad {

using Mat = Eigen::MatrixXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// With record = false only values are computed and backward() throws
  /// GraphNotRecorded.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat v);
  /// Leaf whose gradient is accumulated.
  Var parameter(Mat v);

  /// Seeds d(out)/d(out) = 1 for a 1x1 node and runs the reverse sweep.
  void backward(const Var& out);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Used by the op implementations.
  /// Receives the node's own value and gradient.
  using Backward = std::function<void(Tape&, const Mat&, const Mat&)>;
  Var push(Mat value, bool needs_grad, Backward back);
  const Mat& value(const Var& v) const { return nodes_[v.id_].value; }
  Mat& grad(const Var& v);
  bool needs_grad(const Var& v) const { return nodes_[v.id_].needs_grad; }
  const Mat& grad_of(const Var& v) const { return nodes_[v.id_].grad; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward back;
  };
  bool record_;
  bool swept_ = false;
  std::deque<Node> nodes_;
};

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Adds a 1 x n row to every row of a.
Var add_row(const Var& a, const Var& row);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var square(const Var& a);
Var sum(const Var& a);
Var gelu(const Var& a);
Var softplus(const Var& a);
/// Row-wise softmax restricted to entries where allowed is true; the rest get
/// probability 0. Every row must allow at least one entry.
Var softmax_rows(const Var& a, const Mask& allowed);
/// Row-wise normalization followed by gain and bias (both 1 x n).
Var layer_norm_rows(const Var& a, const Var& gain, const Var& bias, double eps = 1e-5);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var concat_cols(const std::vector<Var>& parts);

}  // namespace msight::ad
