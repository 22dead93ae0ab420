#include <cmath>

#include "bacnn/attention.hpp"
#include "bacnn/error.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace bacnn;

namespace {

// Independent shape walk: 3x3 convs with bias, a batch-norm (gamma, beta) ahead
// of every conv but the first, then the two 1x1 mixing layers.
Index walk_param_count(Index bands, Index bottleneck, std::array<int, 3> layout) {
  const Index depths[3] = {16, 32, 32};
  Index total = 0;
  Index in = bands;
  bool first = true;
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < layout[static_cast<std::size_t>(s)]; ++i) {
      if (!first) total += 2 * in;
      total += 3 * 3 * in * depths[s] + depths[s];
      in = depths[s];
      first = false;
    }
  }
  total += in * bottleneck + bottleneck;
  total += bottleneck * bands + bands;
  return total;
}

Index counted(const std::vector<Var>& params) {
  Index n = 0;
  for (const Var& p : params) n += p.value().size();
  return n;
}

}  // namespace

TEST_CASE("mixing widths for c = 200, r = 2") {
  Rng rng(1);
  BandAttention bam({200, 2.0}, rng);
  CHECK(bam.mix_in().kernel.shape() == Shape{1, 1, 32, 100});
  CHECK(bam.mix_out().kernel.shape() == Shape{1, 1, 100, 200});
  CHECK(bam.first_conv().kernel.shape() == Shape{3, 3, 200, 16});
  CHECK(bam.conv_count() == 5);
}

TEST_CASE("bam_param_count") {
  // Hand walk for c = 200, r = 2.
  const Index hand = (3 * 3 * 200 * 16 + 16) + 2 * 16 + (3 * 3 * 16 * 16 + 16) + 2 * 16 + (3 * 3 * 16 * 32 + 32) +
                     2 * 32 + (3 * 3 * 32 * 32 + 32) + 2 * 32 + (3 * 3 * 32 * 32 + 32) + (32 * 100 + 100) +
                     (100 * 200 + 200);
  CHECK(hand == 77964);
  CHECK(bam_param_count({200, 2.0}) == hand);

  Rng rng(2);
  CHECK(counted(BandAttention({200, 2.0}, rng).parameters()) == hand);

  for (Index bands : {1, 3, 8, 176, 200}) {
    for (double r : {0.5, 1.0, 2.0, 4.0, 16.0}) {
      BamConfig cfg{bands, r};
      CHECK(bam_param_count(cfg) == walk_param_count(bands, bottleneck_width(bands, r), cfg.stage_layout));
    }
  }
  BamConfig deep{10, 2.0, Activation::sigmoid, {1, 3, 2}};
  CHECK(bam_param_count(deep) == walk_param_count(10, 5, {1, 3, 2}));
  CHECK(counted(BandAttention(deep, rng).parameters()) == bam_param_count(deep));
}

TEST_CASE("param count is monotone in r and independent of the activation") {
  Index previous = bam_param_count({200, 1.0});
  for (double r : {2.0, 4.0, 8.0, 16.0, 32.0}) {
    const Index now = bam_param_count({200, r});
    CHECK(now < previous);
    previous = now;
  }
  for (Activation a : {Activation::relu, Activation::softmax}) {
    CHECK(bam_param_count({200, 2.0, a}) == bam_param_count({200, 2.0}));
  }
}

TEST_CASE("bottleneck rounding and config errors") {
  CHECK(bottleneck_width(200, 2.0) == 100);
  CHECK(bottleneck_width(200, 0.5) == 400);
  CHECK(bottleneck_width(5, 2.0) == 3);
  CHECK(bottleneck_width(3, 16.0) == 1);
  CHECK_THROWS_AS(bottleneck_width(200, 0.0), ConfigError);
  CHECK_THROWS_AS(bottleneck_width(200, -1.0), ConfigError);
  CHECK_THROWS_AS(bottleneck_width(0, 2.0), ConfigError);
  Rng rng(3);
  CHECK_THROWS_AS(BandAttention({200, 0.0}, rng), ConfigError);
  CHECK_THROWS_AS(BandAttention({8, 2.0, Activation::sigmoid, {0, 2, 1}}, rng), ConfigError);
}

TEST_CASE("bam input shape errors") {
  Rng rng(4);
  BandAttention bam({6, 2.0}, rng);
  Tape tape(false);
  CHECK_THROWS_AS(bam.forward(tape, Var::constant(Tensor({1, 3, 8, 6})), Mode::eval), ShapeError);
  CHECK_THROWS_AS(bam.forward(tape, Var::constant(Tensor({1, 8, 8, 5})), Mode::eval), ShapeError);
  CHECK_THROWS_AS(bam.forward(tape, Var::constant(Tensor({8, 8, 6})), Mode::eval), ShapeError);
  CHECK(bam.forward(tape, Var::constant(Tensor({2, 4, 4, 6}, 1.0)), Mode::eval).weights.shape() == Shape{2, 6});
}

TEST_CASE("zero input with zero biases gives a half mask") {
  Rng rng(5);
  BandAttention bam({12, 2.0}, rng);
  Tape tape(false);
  Tensor m = bam.forward(tape, Var::constant(Tensor({1, 15, 15, 12})), Mode::eval).weights.value();
  for (double v : m.data()) CHECK(v == 0.5);
}

TEST_CASE("mask ranges per activation") {
  Rng rng(6);
  Tape tape(false);
  for (Activation a : {Activation::sigmoid, Activation::softmax, Activation::relu}) {
    BandAttention bam({10, 2.0, a}, rng);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor m = bam.forward(tape, Var::constant(testing::random_tensor({3, 9, 9, 10}, rng)), Mode::train).weights.value();
      for (Index row = 0; row < 3; ++row) {
        double total = 0.0;
        for (Index z = 0; z < 10; ++z) {
          const double v = m.at({row, z});
          total += v;
          if (a == Activation::sigmoid) CHECK((v > 0.0 && v < 1.0));
          if (a == Activation::relu) CHECK(v >= 0.0);
        }
        if (a == Activation::softmax) CHECK(std::abs(total - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("apply_mask laws") {
  Rng rng(7);
  Tape tape(false);
  Tensor x = testing::random_tensor({2, 5, 5, 4}, rng);
  Var xv = Var::constant(x);
  CHECK(apply_mask(tape, xv, {Var::constant(Tensor({2, 4}, 1.0))}).value() == x);
  CHECK(apply_mask(tape, xv, {Var::constant(Tensor({2, 4}, 0.0))}).value() == Tensor({2, 5, 5, 4}));

  // Only band 1 doubled.
  Tensor mask({2, 4}, 1.0);
  mask.at({0, 1}) = mask.at({1, 1}) = 2.0;
  Tensor y = apply_mask(tape, xv, {Var::constant(mask)}).value();
  for (Index i = 0; i < x.size(); ++i) CHECK(y[i] == (i % 4 == 1 ? 2.0 * x[i] : x[i]));

  CHECK_THROWS_AS(apply_mask(tape, xv, {Var::constant(Tensor({2, 3}, 1.0))}), ShapeError);
  CHECK_THROWS_AS(apply_mask(tape, xv, {Var::constant(Tensor({3, 4}, 1.0))}), ShapeError);
}

TEST_CASE("se baseline") {
  Rng rng(8);
  SeAttention se(200, 2.0, rng);
  CHECK(se.mix_in().kernel.shape() == Shape{1, 1, 200, 100});
  CHECK(se.mix_out().kernel.shape() == Shape{1, 1, 100, 200});

  // A spatially constant cube squeezes to its per-band value, so the mask
  // equals the mixing tail applied to that vector.
  Tape tape(false);
  Tensor spectrum = testing::random_tensor({1, 200}, rng);
  Tensor cube({1, 6, 6, 200});
  for (Index i = 0; i < cube.size(); ++i) cube[i] = spectrum[i % 200];
  Tensor got = se.forward(tape, Var::constant(cube), Mode::eval).weights.value();
  Var hidden = relu(tape, channel_mix(tape, Var::constant(spectrum), se.mix_in()));
  Tensor want = sigmoid(tape, channel_mix(tape, hidden, se.mix_out())).value();
  for (Index z = 0; z < 200; ++z) CHECK(got[z] == doctest::Approx(want[z]).epsilon(1e-13));

  CHECK(counted(se.parameters()) == 200 * 100 + 100 + 100 * 200 + 200);
  CHECK_THROWS_AS(se.forward(tape, Var::constant(Tensor({1, 6, 6, 100})), Mode::eval), ShapeError);
}

TEST_CASE("first bam layer receives gradient") {
  Rng rng(9);
  BandAttention bam({6, 2.0}, rng);
  Tape tape;
  Var x = Var::constant(testing::random_tensor({2, 8, 8, 6}, rng));
  BandMask mask = bam.forward(tape, x, Mode::train);
  tape.backward(sum(tape, apply_mask(tape, x, mask)));
  REQUIRE(bam.first_conv().kernel.has_grad());
  CHECK(bam.first_conv().kernel.grad().vec().cwiseAbs().maxCoeff() > 0.0);
  for (const Var& p : bam.parameters()) CHECK(p.has_grad());
}

TEST_CASE("eval-mode mask is per sample") {
  Rng rng(10);
  BandAttention bam({5, 1.0}, rng);
  Tape tape(false);
  Tensor one = testing::random_tensor({1, 7, 7, 5}, rng);
  Tensor two({2, 7, 7, 5});
  for (Index i = 0; i < two.size(); ++i) two[i] = one[i % one.size()];
  Tensor a = bam.forward(tape, Var::constant(one), Mode::eval).weights.value();
  Tensor b = bam.forward(tape, Var::constant(two), Mode::eval).weights.value();
  for (Index z = 0; z < 5; ++z) {
    CHECK(b.at({0, z}) == a[z]);
    CHECK(b.at({1, z}) == a[z]);
  }
}
