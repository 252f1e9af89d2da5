#include "conhd/autodiff.hpp"

#include <cmath>

#include "conhd/errors.hpp"

namespace conhd::nn {

Parameter& ParameterStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw StateError("parameter already exists: " + name);
  Parameter& p = params_[name];
  p.grad = Matrix::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  return p;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw StateError("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw StateError("unknown parameter: " + name);
  return it->second;
}

void ParameterStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

std::size_t ParameterStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

const Matrix& Var::value() const {
  if (tape == nullptr) throw StateError("variable is not attached to a tape");
  return tape->value(id);
}

Segments Segments::from_offsets(std::vector<Index> offsets) {
  if (offsets.empty() || offsets.front() != 0) throw ShapeError("segment offsets must start at 0");
  Segments s;
  s.offsets = std::move(offsets);
  s.row_group.resize(static_cast<std::size_t>(s.offsets.back()));
  for (Index g = 0; g + 1 < static_cast<Index>(s.offsets.size()); ++g) {
    if (s.offsets[g + 1] < s.offsets[g]) throw ShapeError("segment offsets must be non-decreasing");
    for (Index r = s.offsets[g]; r < s.offsets[g + 1]; ++r) s.row_group[r] = g;
  }
  return s;
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(ParameterStore& store, const std::string& name) {
  Parameter& p = store.get(name);
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return {this, it->second};
  nodes_.push_back(Node{p.value, {}, {}, &p, true});
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return record(std::move(value), std::vector<Var>(parents), std::move(backward));
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward backward) {
  bool needs = false;
  for (const Var& v : parents) {
    if (v.tape != this) throw StateError("operands belong to different tapes");
    needs = needs || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, nullptr, needs});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Matrix& contribution) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = contribution;
  } else {
    n.grad += contribution;
  }
}

void Tape::backward(Var loss, ParameterStore& store) {
  if (nodes_.empty() || loss.tape != this || loss.id < 0 || loss.id >= static_cast<int>(nodes_.size())) {
    throw StateError("backward called without a recorded forward pass");
  }
  if (nodes_[loss.id].value.size() != 1) throw ShapeError("backward needs a scalar loss");
  store.zero_grad();
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = Matrix::Ones(1, 1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out = av * bv;
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  const int ia = a.id, ib = b.id;
  return a.tape->record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var scale(Var a, double factor) {
  const int ia = a.id;
  return a.tape->record(a.value() * factor, {a},
                        [ia, factor](Tape& t, const Matrix& g) { t.accumulate(ia, g * factor); });
}

Var add_bias(Var a, Var bias) {
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) throw ShapeError("add_bias: bias must be 1 x cols");
  Matrix out = av.rowwise() + bv.row(0);
  const int ia = a.id, ib = bias.id;
  return a.tape->record(std::move(out), {a, bias}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

Var relu(Var a) {
  const int ia = a.id;
  return a.tape->record(a.value().cwiseMax(0.0), {a}, [ia](Tape& t, const Matrix& g) {
    t.accumulate(ia, (t.value(ia).array() > 0.0).select(g, 0.0));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Index>> layout;
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    layout.emplace_back(p.id, c);
    c += p.cols();
  }
  return parts.front().tape->record(std::move(out), parts, [layout](Tape& t, const Matrix& g) {
    for (const auto& [id, col] : layout) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(col, t.value(id).cols()));
    }
  });
}

Var gather_rows(Var a, std::shared_ptr<const std::vector<Index>> rows) {
  const Matrix& av = a.value();
  Matrix out(static_cast<Index>(rows->size()), av.cols());
  for (std::size_t i = 0; i < rows->size(); ++i) {
    const Index r = (*rows)[i];
    if (r < 0 || r >= av.rows()) throw ShapeError("gather_rows: row index out of range");
    out.row(static_cast<Index>(i)) = av.row(r);
  }
  const int ia = a.id;
  const Index source_rows = av.rows();
  return a.tape->record(std::move(out), {a}, [ia, rows, source_rows](Tape& t, const Matrix& g) {
    Matrix back = Matrix::Zero(source_rows, g.cols());
    for (std::size_t i = 0; i < rows->size(); ++i) back.row((*rows)[i]) += g.row(static_cast<Index>(i));
    t.accumulate(ia, back);
  });
}

Var segment_sum(Var a, std::shared_ptr<const Segments> segs) {
  const Matrix& av = a.value();
  if (segs->rows() != av.rows()) throw ShapeError("segment_sum: segments do not cover the rows");
  Matrix out(segs->count(), av.cols());
  for (Index g = 0; g < segs->count(); ++g) out.row(g) = av.middleRows(segs->offsets[g], segs->size(g)).colwise().sum();
  const int ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, segs](Tape& t, const Matrix& g) {
    Matrix back(segs->rows(), g.cols());
    for (Index r = 0; r < segs->rows(); ++r) back.row(r) = g.row(segs->row_group[r]);
    t.accumulate(ia, back);
  });
}

Var segment_mean_broadcast(Var a, std::shared_ptr<const Segments> segs) {
  const Matrix& av = a.value();
  if (segs->rows() != av.rows()) throw ShapeError("segment_mean_broadcast: segments do not cover the rows");
  auto broadcast_mean = [segs](const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (Index g = 0; g < segs->count(); ++g) {
      const Index n = segs->size(g);
      if (n == 0) continue;
      const RowVector mean = m.middleRows(segs->offsets[g], n).colwise().mean();
      out.middleRows(segs->offsets[g], n).rowwise() = mean;
    }
    return out;
  };
  const int ia = a.id;
  // the map is symmetric, so the adjoint is the map itself
  return a.tape->record(broadcast_mean(av), {a},
                        [ia, broadcast_mean](Tape& t, const Matrix& g) { t.accumulate(ia, broadcast_mean(g)); });
}

Var layer_norm(Var a, Var gain, Var bias, double eps) {
  const Matrix& x = a.value();
  const Index d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw ShapeError("layer_norm: gain and bias must be 1 x cols");
  }
  auto xhat = std::make_shared<Matrix>(x.rows(), d);
  auto inv_std = std::make_shared<Vector>(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (x.row(r).array() - mu) * (*inv_std)(r);
  }
  Matrix out = (xhat->array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const int ia = a.id, ig = gain.id, ib = bias.id;
  return a.tape->record(std::move(out), {a, gain, bias}, [ia, ig, ib, xhat, inv_std](Tape& t, const Matrix& g) {
    if (t.requires_grad(ig)) t.accumulate(ig, (g.array() * xhat->array()).colwise().sum().matrix());
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
    if (!t.requires_grad(ia)) return;
    const Matrix dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
    Matrix dx(g.rows(), g.cols());
    for (Index r = 0; r < g.rows(); ++r) {
      const double mean_d = dxhat.row(r).mean();
      const double mean_dx = dxhat.row(r).dot(xhat->row(r)) / static_cast<double>(g.cols());
      dx.row(r) = (*inv_std)(r) * (dxhat.row(r).array() - mean_d - xhat->row(r).array() * mean_dx).matrix();
    }
    t.accumulate(ia, dx);
  });
}

Var dropout(Var a, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return a;
  const Matrix& av = a.value();
  auto mask = std::make_shared<Matrix>(av.rows(), av.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (Index r = 0; r < av.rows(); ++r) {
    for (Index c = 0; c < av.cols(); ++c) (*mask)(r, c) = uniform01(rng) < rate ? 0.0 : keep;
  }
  const int ia = a.id;
  return a.tape->record(av.cwiseProduct(*mask), {a},
                        [ia, mask](Tape& t, const Matrix& g) { t.accumulate(ia, g.cwiseProduct(*mask)); });
}

Var segment_attention(Var q, Var k, Var v, std::shared_ptr<const Segments> q_segs,
                      std::shared_ptr<const Segments> k_segs, int heads) {
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  const Index d = qv.cols();
  if (heads < 1 || d % heads != 0) throw ShapeError("segment_attention: heads must divide the width");
  if (kv.cols() != d || vv.cols() != d || kv.rows() != vv.rows()) throw ShapeError("segment_attention: q/k/v widths differ");
  if (q_segs->rows() != qv.rows() || k_segs->rows() != kv.rows() || q_segs->count() != k_segs->count()) {
    throw ShapeError("segment_attention: segments do not match operands");
  }
  const Index dh = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  const Index groups = q_segs->count();
  auto weights = std::make_shared<std::vector<Matrix>>(static_cast<std::size_t>(groups * heads));
  Matrix out = Matrix::Zero(qv.rows(), d);
  for (Index g = 0; g < groups; ++g) {
    const Index q0 = q_segs->offsets[g], nq = q_segs->size(g);
    const Index k0 = k_segs->offsets[g], nk = k_segs->size(g);
    if (nq == 0) continue;
    if (nk == 0) throw ShapeError("segment_attention: query group has no keys");
    for (int h = 0; h < heads; ++h) {
      Matrix s = qv.block(q0, h * dh, nq, dh) * kv.block(k0, h * dh, nk, dh).transpose() * scale_factor;
      for (Index r = 0; r < nq; ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      out.block(q0, h * dh, nq, dh) = s * vv.block(k0, h * dh, nk, dh);
      (*weights)[static_cast<std::size_t>(g * heads + h)] = std::move(s);
    }
  }
  const int iq = q.id, ik = k.id, iv = v.id;
  return q.tape->record(
      std::move(out), {q, k, v}, [iq, ik, iv, q_segs, k_segs, heads, dh, scale_factor, weights](Tape& t, const Matrix& g) {
        const Matrix& qv = t.value(iq);
        const Matrix& kv = t.value(ik);
        const Matrix& vv = t.value(iv);
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
        Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
        for (Index grp = 0; grp < q_segs->count(); ++grp) {
          const Index q0 = q_segs->offsets[grp], nq = q_segs->size(grp);
          const Index k0 = k_segs->offsets[grp], nk = k_segs->size(grp);
          if (nq == 0) continue;
          for (int h = 0; h < heads; ++h) {
            const Matrix& a = (*weights)[static_cast<std::size_t>(grp * heads + h)];
            const auto go = g.block(q0, h * dh, nq, dh);
            dv.block(k0, h * dh, nk, dh) += a.transpose() * go;
            const Matrix da = go * vv.block(k0, h * dh, nk, dh).transpose();
            Matrix ds = a.cwiseProduct(da);
            const Vector row_dot = ds.rowwise().sum();
            ds -= (a.array().colwise() * row_dot.array()).matrix();
            ds *= scale_factor;
            dq.block(q0, h * dh, nq, dh) += ds * kv.block(k0, h * dh, nk, dh);
            dk.block(k0, h * dh, nk, dh) += ds.transpose() * qv.block(q0, h * dh, nq, dh);
          }
        }
        t.accumulate(iq, dq);
        t.accumulate(ik, dk);
        t.accumulate(iv, dv);
      });
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  const Matrix& z = logits.value();
  if (static_cast<Index>(labels.size()) != z.rows()) throw ShapeError("cross_entropy: one label per row required");
  if (z.rows() == 0) throw ShapeError("cross_entropy: empty batch");
  auto probs = std::make_shared<Matrix>(z.rows(), z.cols());
  double total = 0.0;
  for (Index r = 0; r < z.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= z.cols()) throw ParameterError("cross_entropy: label " + std::to_string(y) + " out of range");
    const double mx = z.row(r).maxCoeff();
    const double lse = mx + std::log((z.row(r).array() - mx).exp().sum());
    total += lse - z(r, y);
    probs->row(r) = (z.row(r).array() - lse).exp().matrix();
  }
  const double n = static_cast<double>(z.rows());
  auto targets = std::make_shared<std::vector<int>>(labels);
  const int il = logits.id;
  return logits.tape->record(Matrix::Constant(1, 1, total / n), {logits},
                             [il, probs, targets, n](Tape& t, const Matrix& g) {
                               Matrix d = *probs;
                               for (std::size_t r = 0; r < targets->size(); ++r) d(static_cast<Index>(r), (*targets)[r]) -= 1.0;
                               t.accumulate(il, d * (g(0, 0) / n));
                             });
}

Var mae(Var pred, const Matrix& target) {
  require_same_shape(pred.value(), target, "mae");
  if (target.size() == 0) throw ShapeError("mae: empty batch");
  auto diff = std::make_shared<Matrix>(pred.value() - target);
  const double n = static_cast<double>(target.size());
  const int ip = pred.id;
  return pred.tape->record(Matrix::Constant(1, 1, diff->cwiseAbs().sum() / n), {pred},
                           [ip, diff, n](Tape& t, const Matrix& g) {
                             t.accumulate(ip, diff->unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }) *
                                                  (g(0, 0) / n));
                           });
}

Var half_squared_norm(Var a) {
  const int ia = a.id;
  return a.tape->record(Matrix::Constant(1, 1, 0.5 * a.value().squaredNorm()), {a},
                        [ia](Tape& t, const Matrix& g) { t.accumulate(ia, t.value(ia) * g(0, 0)); });
}

Matrix mean_ablate(const Matrix& stack) {
  Matrix out(stack.rows(), stack.cols());
  if (stack.rows() == 0) return out;
  out.rowwise() = stack.colwise().mean();
  return out;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ParameterError("learning rate must be finite and non-negative");
}

void Adam::step(ParameterStore& store) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : store) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      throw ShapeError("gradient shape differs from parameter " + name);
    }
    auto [it, inserted] = moments_.try_emplace(name);
    auto& [m, v] = it->second;
    if (inserted) {
      m = Matrix::Zero(p.value.rows(), p.value.cols());
      v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    m = beta1_ * m + (1.0 - beta1_) * p.grad;
    v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseAbs2();
    p.value.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

}  // namespace conhd::nn
