#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bacnn/tensor.hpp"

namespace bacnn {

/// A tensor value together with its gradient slot.
struct Node {
  Tensor value;
  Tensor grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::string name;
};

/// Shared handle to a Node. Copies alias the same value and gradient; like a
/// shared_ptr, constness of the handle does not extend to the node.
class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var parameter(Tensor value, std::string name = {});

  explicit operator bool() const { return static_cast<bool>(node_); }

  const Tensor& value() const { return node_->value; }
  /// Direct write access, used by optimizers and checkpoint loading.
  Tensor& mutable_value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  /// Gradient buffer, zero-allocated on first use.
  Tensor& grad_buffer() const;
  void zero_grad() const { node_->grad = Tensor(); }

  const std::string& name() const { return node_->name; }
  const Node* node() const { return node_.get(); }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend class Tape;
};

enum class Mode { train, eval };

/// Reverse-mode gradient tape.
///
/// Operations append backward closures in execution order; backward() replays
/// them in reverse and then clears the tape. A tape is single-writer; separate
/// threads use separate tapes.
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool enabled() const { return enabled_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  /// Wraps an op result. `backward` receives the output gradient and must
  /// accumulate into the inputs it captured. Throws NumericalError when the
  /// value is not finite.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs,
             std::function<void(const Tensor&)> backward);

  /// Fills grad buffers of every requires_grad ancestor of a scalar loss.
  void backward(const Var& loss);

 private:
  bool enabled_;
  std::vector<std::function<void()>> entries_;
};

void check_finite(const Tensor& t, const char* op);

/// Adds g into v's gradient when v requires it.
void accumulate_grad(const Var& v, const Tensor& g);

// Elementwise and reduction ops.
Var add(Tape& tape, const Var& a, const Var& b);
Var mul(Tape& tape, const Var& a, const Var& b);
Var scale(Tape& tape, const Var& a, double alpha);
/// a: [n,h,w,c]; b: [c] or [n,c], broadcast over the spatial axes.
Var mul_channels(Tape& tape, const Var& a, const Var& b);
/// [n,h,w,z] -> [n,z], mean over the spatial axes.
Var spatial_mean(Tape& tape, const Var& x);
Var sum(Tape& tape, const Var& x);
/// sum(x * weights) for a constant weight tensor of x's shape.
Var weighted_sum(Tape& tape, const Var& x, const Tensor& weights);

namespace diag {

// Distance of the current evaluation point from the nearest non-smooth point
// (ReLU at zero, max-pool ties). Tracked only while enabled, per thread.
void enable_kink_tracking(bool on);
bool kink_tracking_enabled();
void reset_kink_margin();
double kink_margin();
void note_kink_distance(double distance);

}  // namespace diag

}  // namespace bacnn
