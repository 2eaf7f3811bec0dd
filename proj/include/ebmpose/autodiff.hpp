#pragma once

// Matrix-level reverse-mode tape. Backward rules are written with the same
// differentiable ops, so gradients can themselves be differentiated
// (needed when the loss contains an input-gradient).

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "errors.hpp"

namespace ebmpose::ad {

using Mat = Eigen::MatrixXd;

struct Node;

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;
  bool defined() const { return node_ != nullptr; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<std::vector<Var>(const Var& grad, const Var& self,
                                                  const std::vector<bool>& needed)>;

struct Node : std::enable_shared_from_this<Node> {
  Mat value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  BackwardFn backward;
};

inline const Mat& Var::value() const { return node_->value; }
inline bool Var::requires_grad() const { return node_ && node_->requires_grad; }

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline Var constant(Mat value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

/// Leaf that participates in differentiation (parameters, inputs).
inline Var variable(Mat value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

inline Var make_op(Mat value, std::vector<Var> inputs, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  for (const Var& v : inputs) any = any || v.requires_grad();
  if (any && detail::grad_mode()) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

inline void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(op) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                        " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

// ---- ops ------------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var matmul_tn(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var affine(const Var& a, double s, double b);
Var mul(const Var& a, const Var& b);
Var mul_col(const Var& a, const Var& c);
Var add_row(const Var& a, const Var& row);
Var sum_rows(const Var& a);
Var broadcast_rows(const Var& row, Eigen::Index n);
Var sum_cols(const Var& a);
Var broadcast_cols(const Var& col, Eigen::Index n);
Var sum_all(const Var& a);
Var broadcast_scalar(const Var& s, Eigen::Index r, Eigen::Index c);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n);
Var pad_cols(const Var& a, Eigen::Index start, Eigen::Index total);
Var max_rows(const Var& a);
Var pick_by_col(const Var& a, const std::vector<Eigen::Index>& rows);
Var place_by_col(const Var& row, const std::vector<Eigen::Index>& rows, Eigen::Index n_rows);
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& idx);
Var scatter_add_rows(const Var& a, const std::vector<Eigen::Index>& idx, Eigen::Index n_rows);

inline Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  return make_op(a.value() * b.value(), {a, b}, [](const Var& g, const Var& self, const std::vector<bool>& need) {
    const Var& a = self.node()->inputs[0];
    const Var& b = self.node()->inputs[1];
    return std::vector<Var>{need[0] ? matmul_nt(g, b) : Var(), need[1] ? matmul_tn(a, g) : Var()};
  });
}

// a * b^T
inline Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw ShapeMismatch("matmul_nt: inner dimensions differ");
  return make_op(a.value() * b.value().transpose(), {a, b},
                 [](const Var& g, const Var& self, const std::vector<bool>& need) {
                   const Var& a = self.node()->inputs[0];
                   const Var& b = self.node()->inputs[1];
                   return std::vector<Var>{need[0] ? matmul(g, b) : Var(), need[1] ? matmul_tn(g, a) : Var()};
                 });
}

// a^T * b
inline Var matmul_tn(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw ShapeMismatch("matmul_tn: inner dimensions differ");
  return make_op(a.value().transpose() * b.value(), {a, b},
                 [](const Var& g, const Var& self, const std::vector<bool>& need) {
                   const Var& a = self.node()->inputs[0];
                   const Var& b = self.node()->inputs[1];
                   return std::vector<Var>{need[0] ? matmul_nt(b, g) : Var(), need[1] ? matmul(a, g) : Var()};
                 });
}

inline Var add(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "add");
  return make_op(a.value() + b.value(), {a, b},
                 [](const Var& g, const Var&, const std::vector<bool>&) { return std::vector<Var>{g, g}; });
}

inline Var sub(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "sub");
  return make_op(a.value() - b.value(), {a, b}, [](const Var& g, const Var&, const std::vector<bool>& need) {
    return std::vector<Var>{g, need[1] ? scale(g, -1.0) : Var()};
  });
}

inline Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a}, [s](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{scale(g, s)};
  });
}

// s * a + b (b a scalar offset)
inline Var affine(const Var& a, double s, double b) {
  return make_op((a.value() * s).array() + b, {a}, [s](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{scale(g, s)};
  });
}

inline Var mul(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "mul");
  return make_op(a.value().cwiseProduct(b.value()), {a, b},
                 [](const Var& g, const Var& self, const std::vector<bool>& need) {
                   const Var& a = self.node()->inputs[0];
                   const Var& b = self.node()->inputs[1];
                   return std::vector<Var>{need[0] ? mul(g, b) : Var(), need[1] ? mul(g, a) : Var()};
                 });
}

// Scales row i of a by c(i, 0).
inline Var mul_col(const Var& a, const Var& c) {
  if (c.cols() != 1 || c.rows() != a.rows()) throw ShapeMismatch("mul_col: column shape");
  Mat out = a.value().array().colwise() * c.value().col(0).array();
  return make_op(std::move(out), {a, c}, [](const Var& g, const Var& self, const std::vector<bool>& need) {
    const Var& a = self.node()->inputs[0];
    const Var& c = self.node()->inputs[1];
    return std::vector<Var>{need[0] ? mul_col(g, c) : Var(), need[1] ? sum_cols(mul(g, a)) : Var()};
  });
}

// Adds a 1 x n row to every row of a.
inline Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeMismatch("add_row: row shape");
  Mat out = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), {a, row}, [](const Var& g, const Var&, const std::vector<bool>& need) {
    return std::vector<Var>{g, need[1] ? sum_rows(g) : Var()};
  });
}

inline Var sum_rows(const Var& a) {
  const Eigen::Index n = a.rows();
  return make_op(a.value().colwise().sum(), {a}, [n](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{broadcast_rows(g, n)};
  });
}

inline Var broadcast_rows(const Var& row, Eigen::Index n) {
  return make_op(row.value().replicate(n, 1), {row}, [](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{sum_rows(g)};
  });
}

inline Var sum_cols(const Var& a) {
  const Eigen::Index n = a.cols();
  return make_op(a.value().rowwise().sum(), {a}, [n](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{broadcast_cols(g, n)};
  });
}

inline Var broadcast_cols(const Var& col, Eigen::Index n) {
  return make_op(col.value().replicate(1, n), {col}, [](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{sum_cols(g)};
  });
}

inline Var sum_all(const Var& a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  return make_op(Mat::Constant(1, 1, a.value().sum()), {a},
                 [r, c](const Var& g, const Var&, const std::vector<bool>&) {
                   return std::vector<Var>{broadcast_scalar(g, r, c)};
                 });
}

inline Var broadcast_scalar(const Var& s, Eigen::Index r, Eigen::Index c) {
  return make_op(Mat::Constant(r, c, s.scalar()), {s}, [](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{sum_all(g)};
  });
}

inline Var sigmoid(const Var& a) {
  Mat out = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_op(std::move(out), {a}, [](const Var& g, const Var& self, const std::vector<bool>&) {
    // dy/dx = y (1 - y), built from self so it stays differentiable.
    return std::vector<Var>{mul(g, mul(self, affine(self, -1.0, 1.0)))};
  });
}

inline Var silu(const Var& a) { return mul(a, sigmoid(a)); }

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  const Eigen::Index r = parts[0].rows();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw ShapeMismatch("concat_cols: row counts differ");
    total += p.cols();
  }
  Mat out(r, total);
  std::vector<Eigen::Index> starts;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    starts.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_op(std::move(out), parts, [starts](const Var& g, const Var& self, const std::vector<bool>& need) {
    std::vector<Var> grads(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i)
      if (need[i]) grads[i] = slice_cols(g, starts[i], self.node()->inputs[i].cols());
    return grads;
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || start + n > a.cols()) throw ShapeMismatch("slice_cols: range");
  const Eigen::Index total = a.cols();
  return make_op(a.value().middleCols(start, n), {a},
                 [start, total](const Var& g, const Var&, const std::vector<bool>&) {
                   return std::vector<Var>{pad_cols(g, start, total)};
                 });
}

// Zero-pads a into `total` columns with a placed at `start`.
inline Var pad_cols(const Var& a, Eigen::Index start, Eigen::Index total) {
  Mat out = Mat::Zero(a.rows(), total);
  out.middleCols(start, a.cols()) = a.value();
  const Eigen::Index n = a.cols();
  return make_op(std::move(out), {a}, [start, n](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{slice_cols(g, start, n)};
  });
}

// Column-wise max over rows -> 1 x cols. Ties go to the first row.
inline Var max_rows(const Var& a) {
  const Mat& v = a.value();
  if (v.rows() == 0) throw ShapeMismatch("max_rows: empty input");
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(v.cols()));
  for (Eigen::Index c = 0; c < v.cols(); ++c) v.col(c).maxCoeff(&arg[static_cast<std::size_t>(c)]);
  return pick_by_col(a, arg);
}

// out(0, c) = a(rows[c], c)
inline Var pick_by_col(const Var& a, const std::vector<Eigen::Index>& rows) {
  Mat out(1, a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) out(0, c) = a.value()(rows[static_cast<std::size_t>(c)], c);
  const Eigen::Index n = a.rows();
  return make_op(std::move(out), {a}, [rows, n](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{place_by_col(g, rows, n)};
  });
}

inline Var place_by_col(const Var& row, const std::vector<Eigen::Index>& rows, Eigen::Index n_rows) {
  Mat out = Mat::Zero(n_rows, row.cols());
  for (Eigen::Index c = 0; c < row.cols(); ++c) out(rows[static_cast<std::size_t>(c)], c) = row.value()(0, c);
  return make_op(std::move(out), {row}, [rows](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{pick_by_col(g, rows)};
  });
}

inline Var gather_rows(const Var& a, const std::vector<Eigen::Index>& idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.value().row(idx[i]);
  const Eigen::Index n = a.rows();
  return make_op(std::move(out), {a}, [idx, n](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{scatter_add_rows(g, idx, n)};
  });
}

inline Var scatter_add_rows(const Var& a, const std::vector<Eigen::Index>& idx, Eigen::Index n_rows) {
  Mat out = Mat::Zero(n_rows, a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(idx[i]) += a.value().row(static_cast<Eigen::Index>(i));
  return make_op(std::move(out), {a}, [idx](const Var& g, const Var&, const std::vector<bool>&) {
    return std::vector<Var>{gather_rows(g, idx)};
  });
}

// ---- gradient ---------------------------------------------------------------

/// Gradients of the scalar y with respect to each of xs (zeros if unreachable).
/// With create_graph the returned gradients are themselves on the tape.
inline std::vector<Var> grad(const Var& y, const std::vector<Var>& xs, bool create_graph = false) {
  if (y.rows() != 1 || y.cols() != 1) throw ShapeMismatch("grad: output must be a scalar");
  std::unordered_set<const Node*> targets;
  for (const Var& x : xs) targets.insert(x.node());

  // Post-order walk; a node is relevant when some target lies beneath it.
  std::vector<Node*> order;
  std::unordered_map<const Node*, bool> relevant;
  {
    struct Frame {
      Node* n;
      std::size_t next;
    };
    std::vector<Frame> stack;
    if (y.requires_grad()) stack.push_back({y.node(), 0});
    relevant[y.node()] = false;
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.n->inputs.size()) {
        Node* child = f.n->inputs[f.next++].node();
        if (!child->requires_grad || relevant.count(child)) continue;
        relevant[child] = false;
        stack.push_back({child, 0});
        continue;
      }
      bool rel = targets.count(f.n) > 0;
      for (const Var& in : f.n->inputs)
        if (in.requires_grad() && relevant[in.node()]) rel = true;
      relevant[f.n] = rel;
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, Var> grads;
  std::unique_ptr<NoGradGuard> guard;
  if (!create_graph) guard = std::make_unique<NoGradGuard>();
  grads[y.node()] = constant(Mat::Ones(1, 1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!relevant[n] || n->inputs.empty()) continue;
    auto g = grads.find(n);
    if (g == grads.end()) continue;
    std::vector<bool> need(n->inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      need[i] = n->inputs[i].requires_grad() && relevant[n->inputs[i].node()];
      any = any || need[i];
    }
    if (!any) continue;
    const Var self(n->shared_from_this());
    const std::vector<Var> in_grads = n->backward(g->second, self, need);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      if (!need[i] || !in_grads[i].defined()) continue;
      const Node* child = n->inputs[i].node();
      auto slot = grads.find(child);
      if (slot == grads.end())
        grads.emplace(child, in_grads[i]);
      else
        slot->second = add(slot->second, in_grads[i]);
    }
    if (!create_graph) grads.erase(n);
  }

  std::vector<Var> out;
  out.reserve(xs.size());
  for (const Var& x : xs) {
    auto g = grads.find(x.node());
    out.push_back(g != grads.end() ? g->second : constant(Mat::Zero(x.rows(), x.cols())));
  }
  return out;
}

}  // namespace ebmpose::ad
