#include "bacnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "bacnn/attention.hpp"
#include "bacnn/autograd.hpp"
#include "bacnn/error.hpp"
#include "bacnn/layers.hpp"

namespace bacnn {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

Index pick(Rng& rng, Index lo, Index hi) { return lo + rng.index(hi - lo + 1); }

/// Random instance of one op: the tensors to differentiate and the forward map.
struct Instance {
  std::vector<Var> vars;
  std::function<Var(Tape&)> forward;
};

using Factory = std::function<Instance(Rng&)>;

Instance unary(Tensor x, std::function<Var(Tape&, const Var&)> op) {
  Var v = Var::parameter(std::move(x), "x");
  return {{v}, [v, op](Tape& t) { return op(t, v); }};
}

Shape small_4d(Rng& rng, Index min_hw = 1) {
  return {pick(rng, 1, 2), pick(rng, min_hw, 4), pick(rng, min_hw, 4), pick(rng, 1, 3)};
}

const std::vector<std::pair<std::string, Factory>>& registry() {
  static const std::vector<std::pair<std::string, Factory>> cases = {
      {"conv2d",
       [](Rng& rng) {
         const Index k = rng.uniform() < 0.75 ? 3 : 1;
         const Padding pad = rng.uniform() < 0.6 ? Padding::same : Padding::valid;
         const Index min_hw = pad == Padding::valid ? k : 1;
         Shape s = {pick(rng, 1, 2), pick(rng, min_hw, 4), pick(rng, min_hw, 4), pick(rng, 1, 3)};
         ConvLayer layer = make_conv(k, s[3], pick(rng, 1, 3), rng, "conv", pad, pick(rng, 1, 2));
         layer.bias.mutable_value() = random_tensor(layer.bias.shape(), rng);
         Var x = Var::parameter(random_tensor(s, rng), "x");
         return Instance{{x, layer.kernel, layer.bias}, [x, layer](Tape& t) { return conv2d(t, x, layer); }};
       }},
      {"channel_mix",
       [](Rng& rng) {
         ConvLayer layer = make_conv(1, pick(rng, 1, 4), pick(rng, 1, 4), rng, "mix");
         layer.bias.mutable_value() = random_tensor(layer.bias.shape(), rng);
         Var v = Var::parameter(random_tensor({pick(rng, 1, 3), layer.in_channels()}, rng), "v");
         return Instance{{v, layer.kernel, layer.bias}, [v, layer](Tape& t) { return channel_mix(t, v, layer); }};
       }},
      {"batchnorm_train",
       [](Rng& rng) {
         Shape s = {pick(rng, 2, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)};
         auto bn = std::make_shared<BatchNormLayer>(make_batchnorm(s[3], "bn"));
         bn->gamma.mutable_value() = random_tensor({s[3]}, rng);
         bn->beta.mutable_value() = random_tensor({s[3]}, rng);
         Var x = Var::parameter(random_tensor(s, rng), "x");
         return Instance{{x, bn->gamma, bn->beta}, [x, bn](Tape& t) { return batchnorm(t, x, *bn, Mode::train); }};
       }},
      {"batchnorm_eval",
       [](Rng& rng) {
         Shape s = small_4d(rng);
         auto bn = std::make_shared<BatchNormLayer>(make_batchnorm(s[3], "bn"));
         bn->gamma.mutable_value() = random_tensor({s[3]}, rng);
         bn->beta.mutable_value() = random_tensor({s[3]}, rng);
         for (double& v : bn->running_mean.data()) v = rng.normal();
         for (double& v : bn->running_var.data()) v = 0.5 + rng.uniform();
         Var x = Var::parameter(random_tensor(s, rng), "x");
         return Instance{{x, bn->gamma, bn->beta}, [x, bn](Tape& t) { return batchnorm(t, x, *bn, Mode::eval); }};
       }},
      {"maxpool2",
       [](Rng& rng) {
         return unary(random_tensor({pick(rng, 1, 2), pick(rng, 2, 5), pick(rng, 2, 5), pick(rng, 1, 2)}, rng),
                      [](Tape& t, const Var& x) { return maxpool2(t, x); });
       }},
      {"dense",
       [](Rng& rng) {
         const Index d_in = pick(rng, 1, 5);
         const Index d_out = pick(rng, 1, 5);
         Var v = Var::parameter(random_tensor({pick(rng, 1, 3), d_in}, rng), "v");
         Var w = Var::parameter(random_tensor({d_in, d_out}, rng), "w");
         Var b = Var::parameter(random_tensor({d_out}, rng), "b");
         return Instance{{v, w, b}, [v, w, b](Tape& t) { return dense(t, v, w, b); }};
       }},
      {"relu",
       [](Rng& rng) {
         return unary(random_tensor({pick(rng, 1, 4), pick(rng, 1, 8)}, rng),
                      [](Tape& t, const Var& x) { return relu(t, x); });
       }},
      {"sigmoid",
       [](Rng& rng) {
         return unary(random_tensor({pick(rng, 1, 4), pick(rng, 1, 8)}, rng, 2.0),
                      [](Tape& t, const Var& x) { return sigmoid(t, x); });
       }},
      {"softmax",
       [](Rng& rng) {
         return unary(random_tensor({pick(rng, 1, 4), pick(rng, 2, 8)}, rng, 2.0),
                      [](Tape& t, const Var& x) { return softmax(t, x); });
       }},
      {"cross_entropy",
       [](Rng& rng) {
         const Index n = pick(rng, 1, 4);
         const Index k = pick(rng, 2, 8);
         std::vector<int> labels;
         for (Index i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.index(k)));
         return unary(random_tensor({n, k}, rng, 2.0),
                      [labels](Tape& t, const Var& x) { return cross_entropy(t, x, labels); });
       }},
      {"spatial_mean",
       [](Rng& rng) {
         return unary(random_tensor(small_4d(rng), rng), [](Tape& t, const Var& x) { return spatial_mean(t, x); });
       }},
      {"apply_mask",
       [](Rng& rng) {
         Shape s = small_4d(rng);
         Var x = Var::parameter(random_tensor(s, rng), "x");
         Var m = Var::parameter(random_tensor({s[0], s[3]}, rng), "mask");
         return Instance{{x, m}, [x, m](Tape& t) { return apply_mask(t, x, {m}); }};
       }},
      {"add",
       [](Rng& rng) {
         Shape s = {pick(rng, 1, 4), pick(rng, 1, 6)};
         Var a = Var::parameter(random_tensor(s, rng), "a");
         Var b = Var::parameter(random_tensor(s, rng), "b");
         return Instance{{a, b}, [a, b](Tape& t) { return add(t, a, b); }};
       }},
      {"mul",
       [](Rng& rng) {
         Shape s = {pick(rng, 1, 4), pick(rng, 1, 6)};
         Var a = Var::parameter(random_tensor(s, rng), "a");
         Var b = Var::parameter(random_tensor(s, rng), "b");
         return Instance{{a, b}, [a, b](Tape& t) { return mul(t, a, b); }};
       }},
      {"mul_channels",
       [](Rng& rng) {
         Shape s = small_4d(rng);
         Var a = Var::parameter(random_tensor(s, rng), "a");
         Var b = Var::parameter(random_tensor({s[3]}, rng), "b");
         return Instance{{a, b}, [a, b](Tape& t) { return mul_channels(t, a, b); }};
       }},
      {"scale",
       [](Rng& rng) {
         const double alpha = rng.normal();
         return unary(random_tensor({pick(rng, 1, 4), pick(rng, 1, 6)}, rng),
                      [alpha](Tape& t, const Var& x) { return scale(t, x, alpha); });
       }},
      {"dropout",
       [](Rng& rng) {
         const std::uint64_t mask_seed = static_cast<std::uint64_t>(rng.index(1 << 30));
         return unary(random_tensor({pick(rng, 1, 4), pick(rng, 1, 8)}, rng), [mask_seed](Tape& t, const Var& x) {
           Rng fixed(mask_seed);
           return dropout(t, x, 0.3, Mode::train, fixed);
         });
       }},
      {"se_forward",
       [](Rng& rng) {
         Shape s = {pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 2, 4), pick(rng, 2, 5)};
         auto se = std::make_shared<SeAttention>(s[3], rng.uniform() < 0.5 ? 1.0 : 2.0, rng);
         Var x = Var::parameter(random_tensor(s, rng), "x");
         std::vector<Var> vars{x};
         for (const Var& p : se->parameters()) vars.push_back(p);
         return Instance{vars, [x, se](Tape& t) { return se->forward(t, x, Mode::train).weights; }};
       }},
      {"bam_forward",
       [](Rng& rng) {
         BamConfig cfg;
         cfg.bands = pick(rng, 2, 4);
         const double ratios[] = {0.5, 1.0, 2.0};
         cfg.ratio = ratios[rng.index(3)];
         const Activation acts[] = {Activation::sigmoid, Activation::softmax, Activation::relu};
         cfg.final_activation = acts[rng.index(3)];
         auto bam = std::make_shared<BandAttention>(cfg, rng);
         Var x = Var::parameter(random_tensor({2, 8, 8, cfg.bands}, rng), "x");
         std::vector<Var> vars{x};
         for (const Var& p : bam->parameters()) vars.push_back(p);
         return Instance{vars, [x, bam](Tape& t) { return bam->forward(t, x, Mode::train).weights; }};
       }},
  };
  return cases;
}

double loss_of(const Instance& inst, const Tensor& weights) {
  Tape tape(false);
  return weighted_sum(tape, inst.forward(tape), weights).value()[0];
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
  return std::abs(analytic - numeric) / denom;
}

std::vector<std::string> gradient_check_ops() {
  std::vector<std::string> names;
  for (const auto& [name, factory] : registry()) names.push_back(name);
  return names;
}

GradCheckResult run_gradient_check(const std::string& op, const GradCheckOptions& o) {
  const auto& cases = registry();
  auto it = std::find_if(cases.begin(), cases.end(), [&op](const auto& c) { return c.first == op; });
  if (it == cases.end()) throw ConfigError("no gradient check for '" + op + "'");

  GradCheckResult result;
  result.op = op;
  Rng rng = Rng(o.seed).stream(op);
  const double h = o.step;

  while (result.trials < o.trials) {
    Instance inst = it->second(rng);

    // Forward with kink tracking to decide whether the instance is usable.
    diag::reset_kink_margin();
    diag::enable_kink_tracking(true);
    Tape tape;
    Var out = inst.forward(tape);
    diag::enable_kink_tracking(false);
    if (diag::kink_margin() < o.kink_margin) {
      ++result.redrawn;
      if (result.redrawn > 50 * o.trials) throw NumericalError(op + ": could not draw kink-free instances");
      continue;
    }
    Tensor weights(out.shape());
    for (double& w : weights.data()) w = rng.normal();
    for (Var& v : inst.vars) v.zero_grad();
    tape.backward(weighted_sum(tape, out, weights));

    std::vector<Tensor> analytic;
    for (const Var& v : inst.vars) analytic.push_back(v.has_grad() ? v.grad() : Tensor::zeros_like(v.value()));

    auto check = [&](double a, double n) {
      result.max_rel_error = std::max(result.max_rel_error, relative_error(a, n));
      ++result.coordinates;
    };

    bool sampled_any = false;
    for (std::size_t vi = 0; vi < inst.vars.size(); ++vi) {
      Tensor& value = inst.vars[vi].mutable_value();
      std::vector<Index> coords;
      if (value.size() <= o.full_check_limit) {
        for (Index i = 0; i < value.size(); ++i) coords.push_back(i);
      } else {
        sampled_any = true;
        for (int s = 0; s < o.sampled_coordinates; ++s) coords.push_back(rng.index(value.size()));
      }
      for (Index i : coords) {
        const double saved = value[i];
        value[i] = saved + h;
        const double up = loss_of(inst, weights);
        value[i] = saved - h;
        const double down = loss_of(inst, weights);
        value[i] = saved;
        check(analytic[vi][i], (up - down) / (2.0 * h));
      }
    }

    if (sampled_any) {
      std::vector<Tensor> direction;
      std::vector<Tensor> saved;
      double norm2 = 0.0;
      for (std::size_t vi = 0; vi < inst.vars.size(); ++vi) {
        direction.push_back(random_tensor(inst.vars[vi].shape(), rng));
        saved.push_back(inst.vars[vi].value());
        norm2 += direction.back().vec().squaredNorm();
      }
      // Unit direction, so no single activation moves further than in a coordinate step.
      double projected = 0.0;
      for (std::size_t vi = 0; vi < inst.vars.size(); ++vi) {
        direction[vi].vec() /= std::sqrt(norm2);
        projected += direction[vi].vec().dot(analytic[vi].vec());
      }
      auto move_to = [&](double amount) {
        for (std::size_t vi = 0; vi < inst.vars.size(); ++vi) {
          inst.vars[vi].mutable_value().vec() = saved[vi].vec() + amount * direction[vi].vec();
        }
      };
      move_to(h);
      const double up = loss_of(inst, weights);
      move_to(-h);
      const double down = loss_of(inst, weights);
      move_to(0.0);
      check(projected, (up - down) / (2.0 * h));
    }
    ++result.trials;
  }
  result.passed = result.max_rel_error < o.tolerance;
  return result;
}

std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options, std::span<const std::string> ops) {
  std::vector<GradCheckResult> out;
  const std::vector<std::string> all = gradient_check_ops();
  for (const std::string& op : ops.empty() ? std::span<const std::string>(all) : ops) {
    out.push_back(run_gradient_check(op, options));
  }
  return out;
}

}  // namespace bacnn
