#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bacnn {

struct GradCheckOptions {
  int trials = 100;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  /// Instances closer than this to a ReLU kink or max-pool tie are redrawn.
  double kink_margin = 2e-4;
  /// Tensors above this size are checked on sampled coordinates plus one
  /// random directional derivative.
  long full_check_limit = 512;
  int sampled_coordinates = 24;
};

struct GradCheckResult {
  std::string op;
  int trials = 0;
  int redrawn = 0;
  long coordinates = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, 1e-5).
double relative_error(double analytic, double numeric);

/// Names of every operation the suite covers, in run order.
std::vector<std::string> gradient_check_ops();

/// Central-difference check of each named op (all ops when `ops` is empty) on
/// random small instances.
std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options, std::span<const std::string> ops = {});

GradCheckResult run_gradient_check(const std::string& op, const GradCheckOptions& options);

}  // namespace bacnn
