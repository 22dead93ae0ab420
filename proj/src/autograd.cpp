#include "bacnn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bacnn/error.hpp"

namespace bacnn {

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::parameter(Tensor value, std::string name) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->name = std::move(name);
  return Var(std::move(node));
}

Tensor& Var::grad_buffer() const {
  if (node_->grad.empty()) node_->grad = Tensor::zeros_like(node_->value);
  return node_->grad;
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericalError(std::string("non-finite value produced by ") + op);
}

void accumulate_grad(const Var& v, const Tensor& g) {
  if (!v.requires_grad()) return;
  v.grad_buffer().vec() += g.vec();
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs,
                 std::function<void(const Tensor&)> backward) {
  check_finite(value, op);
  bool needs = false;
  if (enabled_) {
    for (const Var& in : inputs) needs = needs || in.requires_grad();
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = needs;
  if (needs) {
    entries_.emplace_back([node, fn = std::move(backward)] {
      if (!node->grad.empty()) fn(node->grad);
    });
  }
  return Var(std::move(node));
}

void Tape::backward(const Var& loss) {
  if (!loss) throw ContractError("backward on an empty variable");
  if (loss.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got " + shape_string(loss.shape()));
  }
  if (entries_.empty() || !loss.requires_grad()) {
    throw ContractError("backward called without a recorded forward pass");
  }
  loss.node_->grad = Tensor(loss.shape(), 1.0);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

Var add(Tape& tape, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  Tensor out = a.value();
  out.vec() += b.value().vec();
  return tape.record("add", std::move(out), {a, b}, [a, b](const Tensor& g) mutable {
    accumulate_grad(a, g);
    accumulate_grad(b, g);
  });
}

Var mul(Tape& tape, const Var& a, const Var& b) {
  if (a.shape() == b.shape()) {
    Tensor out = a.value();
    out.vec().array() *= b.value().vec().array();
    return tape.record("mul", std::move(out), {a, b}, [a, b](const Tensor& g) mutable {
      if (a.requires_grad()) a.grad_buffer().vec().array() += g.vec().array() * b.value().vec().array();
      if (b.requires_grad()) b.grad_buffer().vec().array() += g.vec().array() * a.value().vec().array();
    });
  }
  if (a.value().ndim() == 4) return mul_channels(tape, a, b);
  throw ShapeError("mul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                   " are not broadcastable");
}

Var scale(Tape& tape, const Var& a, double alpha) {
  Tensor out = a.value();
  out.vec() *= alpha;
  return tape.record("scale", std::move(out), {a}, [a, alpha](const Tensor& g) mutable {
    if (a.requires_grad()) a.grad_buffer().vec() += alpha * g.vec();
  });
}

Var mul_channels(Tape& tape, const Var& a, const Var& b) {
  const Shape4 s = shape4(a.value());
  const bool per_sample = b.value().ndim() == 2;
  const bool shared = b.value().ndim() == 1;
  if (!(shared && b.value().dim(0) == s.c) &&
      !(per_sample && b.value().dim(0) == s.n && b.value().dim(1) == s.c)) {
    throw ShapeError("mul: " + shape_string(b.shape()) + " is not a per-channel factor for " +
                     shape_string(a.shape()));
  }
  const Index pixels = s.h * s.w;
  const Index rows = s.n * pixels;
  // Row of per-channel factors applying to sample n.
  auto factor = [per_sample, c = s.c](const Tensor& f, Index n) {
    return ConstVectorMap(f.ptr() + (per_sample ? n * c : 0), c).transpose().array();
  };
  Tensor out(a.shape());
  for (Index n = 0; n < s.n; ++n) {
    out.matrix(rows, s.c).middleRows(n * pixels, pixels) =
        a.value().matrix(rows, s.c).middleRows(n * pixels, pixels).array().rowwise() * factor(b.value(), n);
  }
  return tape.record("mul_channels", std::move(out), {a, b},
                     [a, b, s, pixels, rows, per_sample, factor](const Tensor& g) mutable {
                       for (Index n = 0; n < s.n; ++n) {
                         auto gn = g.matrix(rows, s.c).middleRows(n * pixels, pixels);
                         if (a.requires_grad()) {
                           a.grad_buffer().matrix(rows, s.c).middleRows(n * pixels, pixels).array() +=
                               gn.array().rowwise() * factor(b.value(), n);
                         }
                         if (b.requires_grad()) {
                           auto xn = a.value().matrix(rows, s.c).middleRows(n * pixels, pixels);
                           Eigen::RowVectorXd partial = (gn.array() * xn.array()).colwise().sum();
                           VectorMap(b.grad_buffer().ptr() + (per_sample ? n * s.c : 0), s.c) += partial.transpose();
                         }
                       }
                     });
}

Var spatial_mean(Tape& tape, const Var& x) {
  const Shape4 s = shape4(x.value());
  const Index pixels = s.h * s.w;
  const double inv = 1.0 / static_cast<double>(pixels);
  Tensor out({s.n, s.c});
  for (Index n = 0; n < s.n; ++n) {
    auto xn = x.value().matrix(s.n * pixels, s.c).middleRows(n * pixels, pixels);
    out.matrix(s.n, s.c).row(n) = xn.colwise().sum() * inv;
  }
  return tape.record("spatial_mean", std::move(out), {x}, [x, s, pixels, inv](const Tensor& g) mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad_buffer().matrix(s.n * pixels, s.c);
    for (Index n = 0; n < s.n; ++n) {
      gx.middleRows(n * pixels, pixels).rowwise() += g.matrix(s.n, s.c).row(n) * inv;
    }
  });
}

Var sum(Tape& tape, const Var& x) {
  Tensor out({1}, x.value().vec().sum());
  return tape.record("sum", std::move(out), {x}, [x](const Tensor& g) mutable {
    if (x.requires_grad()) x.grad_buffer().vec().array() += g[0];
  });
}

Var weighted_sum(Tape& tape, const Var& x, const Tensor& weights) {
  if (weights.shape() != x.shape()) throw ShapeError("weighted_sum: weight shape mismatch");
  Tensor out({1}, x.value().vec().dot(weights.vec()));
  return tape.record("weighted_sum", std::move(out), {x}, [x, weights](const Tensor& g) mutable {
    if (x.requires_grad()) x.grad_buffer().vec() += g[0] * weights.vec();
  });
}

namespace diag {
namespace {
thread_local bool tracking = false;
thread_local double margin = std::numeric_limits<double>::infinity();
}  // namespace

void enable_kink_tracking(bool on) { tracking = on; }
bool kink_tracking_enabled() { return tracking; }
void reset_kink_margin() { margin = std::numeric_limits<double>::infinity(); }
double kink_margin() { return margin; }
void note_kink_distance(double distance) { margin = std::min(margin, distance); }

}  // namespace diag

}  // namespace bacnn
