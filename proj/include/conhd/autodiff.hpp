#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "conhd/linalg.hpp"
#include "conhd/rng.hpp"

namespace conhd::nn {

using Index = Eigen::Index;

struct Parameter {
  Matrix value;
  Matrix grad;
};

/// Named trainable tensors. Iteration order is by name, which keeps every
/// reduction over parameters deterministic.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Matrix init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  void zero_grad();
  std::size_t tensor_count() const noexcept { return params_.size(); }
  std::size_t scalar_count() const noexcept;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
};

/// Contiguous row groups: group g owns rows [offsets[g], offsets[g+1]).
struct Segments {
  std::vector<Index> offsets{0};
  std::vector<Index> row_group;

  static Segments from_offsets(std::vector<Index> offsets);
  Index count() const { return static_cast<Index>(offsets.size()) - 1; }
  Index rows() const { return offsets.back(); }
  Index size(Index g) const { return offsets[g + 1] - offsets[g]; }
};

/// Records a forward computation and replays it in reverse.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Var constant(Matrix value);
  /// Leaf bound to a stored parameter; the value is copied on first use, so
  /// later edits to the store need a new tape. Repeated calls for the same
  /// name on one tape return the same node, so shared weights accumulate once.
  Var param(ParameterStore& store, const std::string& name);
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var record(Matrix value, const std::vector<Var>& parents, Backward backward);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Adds contribution into the gradient slot of id (no-op for constants).
  void accumulate(int id, const Matrix& contribution);

  /// Fills store gradients with d(loss)/d(param); parameters not reached by
  /// the loss end up with zero gradient.
  void backward(Var loss, ParameterStore& store);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::map<const Parameter*, int> param_nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
/// a + 1 * bias for a 1 x cols bias row.
Var add_bias(Var a, Var bias);
Var relu(Var a);
Var concat_cols(const std::vector<Var>& parts);
/// out.row(i) = a.row(rows[i]); gradients scatter-add back.
Var gather_rows(Var a, std::shared_ptr<const std::vector<Index>> rows);
/// G x cols matrix of per-group row sums.
Var segment_sum(Var a, std::shared_ptr<const Segments> segs);
/// Every row replaced by the mean row of its group.
Var segment_mean_broadcast(Var a, std::shared_ptr<const Segments> segs);
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
/// Inverted dropout with a freshly drawn mask; rate in [0, 1).
Var dropout(Var a, double rate, Rng& rng);
/// Multi-head scaled dot-product attention where query group g attends only
/// to key group g. Head h uses column block [h*dh, (h+1)*dh) of q, k and v.
Var segment_attention(Var q, Var k, Var v, std::shared_ptr<const Segments> q_segs,
                      std::shared_ptr<const Segments> k_segs, int heads);

/// Mean softmax cross-entropy over rows.
Var cross_entropy(Var logits, const std::vector<int>& labels);
/// Mean absolute error over all entries.
Var mae(Var pred, const Matrix& target);
Var half_squared_norm(Var a);

/// Row-wise column mean broadcast back to every row.
Matrix mean_ablate(const Matrix& stack);

/// Adaptive-moment optimizer with bias correction.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ParameterStore& store);
  long long step_count() const noexcept { return t_; }
  double lr() const noexcept { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;
};

}  // namespace conhd::nn
