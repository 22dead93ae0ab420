#include <algorithm>

#include "bacnn/gradcheck.hpp"
#include "bacnn/layers.hpp"
#include "doctest.h"

using namespace bacnn;

TEST_CASE("relative error") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == 0.5);
  CHECK(relative_error(0.0, 1e-9) == doctest::Approx(1e-4));
}

TEST_CASE("the suite covers every differentiable op") {
  const auto ops = gradient_check_ops();
  for (const char* name : {"conv2d", "channel_mix", "batchnorm_train", "maxpool2", "dense", "relu", "sigmoid",
                           "softmax", "cross_entropy", "spatial_mean", "apply_mask", "bam_forward"}) {
    CHECK(std::find(ops.begin(), ops.end(), name) != ops.end());
  }
}

TEST_CASE("short suite passes") {
  GradCheckOptions options;
  options.trials = 5;
  for (const GradCheckResult& r : run_gradient_suite(options)) {
    INFO(r.op << " max rel err " << r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.trials == 5);
    CHECK(r.coordinates > 0);
  }
}

TEST_CASE("a broken conv backward is caught") {
  GradCheckOptions options;
  options.trials = 3;
  fault::set_conv_backward_sign_flip(true);
  const GradCheckResult broken = run_gradient_check("conv2d", options);
  fault::set_conv_backward_sign_flip(false);
  CHECK_FALSE(broken.passed);
  CHECK(broken.max_rel_error > 1.0);
  CHECK(run_gradient_check("conv2d", options).passed);
}

TEST_CASE("unknown op") {
  CHECK_THROWS(run_gradient_check("no_such_op", {}));
}
