#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "bacnn/autograd.hpp"
#include "bacnn/error.hpp"
#include "bacnn/rng.hpp"
#include "bacnn/tensor.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace bacnn;

TEST_CASE("create fills and validates") {
  Tensor z = create({2, 2}, 0.0);
  CHECK(z.shape() == Shape{2, 2});
  CHECK(z.data()[3] == 0.0);

  Tensor v = create({3}, std::vector<double>{1, 2, 3});
  CHECK(v[0] == 1.0);
  CHECK(v[2] == 3.0);

  CHECK_THROWS_AS(create({2, 3}, std::vector<double>(5, 0.0)), ShapeError);
  CHECK_THROWS_AS(create({0, 3}, 1.0), ShapeError);
}

TEST_CASE("row-major indexing") {
  Tensor t({2, 3, 4});
  t.at({1, 2, 3}) = 7.0;
  CHECK(t[1 * 12 + 2 * 4 + 3] == 7.0);
  CHECK_THROWS_AS(t.at({2, 0, 0}), ShapeError);
}

TEST_CASE("elementwise add and mul") {
  Tape tape;
  Var a = Var::constant(create({2}, std::vector<double>{1, 2}));
  Var b = Var::constant(create({2}, std::vector<double>{3, 4}));
  CHECK(add(tape, a, b).value() == create({2}, std::vector<double>{4, 6}));

  Rng rng(3);
  Var x = Var::constant(testing::random_tensor({2, 3, 3, 4}, rng));
  CHECK(mul(tape, x, Var::constant(Tensor::ones_like(x.value()))).value() == x.value());

  Tensor zeroed = mul(tape, x, Var::constant(Tensor({4}, 0.0))).value();
  for (double v : zeroed.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(mul(tape, x, Var::constant(Tensor({5}, 1.0))), ShapeError);
  CHECK_THROWS_AS(add(tape, a, Var::constant(Tensor({3}))), ShapeError);
}

TEST_CASE("spatial_mean averages each channel") {
  Tape tape;
  Var c = Var::constant(Tensor({2, 3, 4, 5}, 5.0));
  const Tensor m = spatial_mean(tape, c).value();
  for (double v : m.data()) CHECK(v == 5.0);

  Tensor x = create({1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  const double oracle = (1.0 + 2.0 + 3.0 + 4.0) / 4.0;
  CHECK(spatial_mean(tape, Var::constant(x)).value()[0] == doctest::Approx(oracle).epsilon(1e-15));

  Tensor single = create({2, 1, 1, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(spatial_mean(tape, Var::constant(single)).value().data()[4] == 5.0);

  CHECK_THROWS_AS(spatial_mean(tape, Var::constant(Tensor({2, 3}))), ShapeError);
}

TEST_CASE("spatial_mean backward spreads the gradient uniformly") {
  Tape tape;
  Var x = Var::parameter(Tensor({1, 3, 2, 2}, 1.0));
  tape.backward(sum(tape, spatial_mean(tape, x)));
  for (double g : x.grad().data()) CHECK(g == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("backward on simple losses") {
  Tape tape;
  Var x = Var::parameter(create({3}, std::vector<double>{0.5, -1.0, 2.0}));
  tape.backward(sum(tape, x));
  for (double g : x.grad().data()) CHECK(g == 1.0);

  // Oracle: central differences of sum(x*x), step 1e-6.
  auto f = [](double a, double b) { return a * a + b * b; };
  const double h = 1e-6;
  const double fd0 = (f(1 + h, 2) - f(1 - h, 2)) / (2 * h);
  const double fd1 = (f(1, 2 + h) - f(1, 2 - h)) / (2 * h);

  Var y = Var::parameter(create({2}, std::vector<double>{1, 2}));
  tape.backward(sum(tape, mul(tape, y, y)));
  CHECK(y.grad()[0] == doctest::Approx(fd0).epsilon(1e-8));
  CHECK(y.grad()[1] == doctest::Approx(fd1).epsilon(1e-8));
  CHECK(y.grad()[0] == doctest::Approx(2.0));
  CHECK(y.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward contract errors") {
  Tape tape;
  Var x = Var::parameter(create({2}, std::vector<double>{1, 2}));
  Var loss = sum(tape, mul(tape, x, x));
  tape.backward(loss);
  CHECK(tape.empty());
  CHECK_THROWS_AS(tape.backward(loss), ContractError);

  Var vector_out = mul(tape, x, x);
  CHECK_THROWS_AS(tape.backward(vector_out), ContractError);
}

TEST_CASE("disabled tape records nothing") {
  Tape tape(false);
  Var x = Var::parameter(create({2}, std::vector<double>{1, 2}));
  Var y = sum(tape, x);
  CHECK(tape.empty());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("non-finite results are rejected") {
  Tape tape;
  Var big = Var::constant(Tensor({2}, std::numeric_limits<double>::max()));
  CHECK_THROWS_AS(add(tape, big, big), NumericalError);
}

TEST_CASE("spatial mean then channel scaling is linear") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 1 + rng.index(3);
    const Index c = 1 + rng.index(4);
    Tensor x = testing::random_tensor({n, 1 + rng.index(4), 1 + rng.index(4), c}, rng);
    Tensor m = testing::random_tensor({n, c}, rng);
    const double alpha = rng.normal(0.0, 3.0);

    auto f = [&m](const Tensor& in) {
      Tape tape(false);
      Var masked = mul_channels(tape, Var::constant(in), Var::constant(m));
      return spatial_mean(tape, masked).value();
    };
    Tensor scaled = x;
    scaled.vec() *= alpha;
    const Tensor lhs = f(scaled);
    const Tensor rhs = f(x);
    for (Index i = 0; i < lhs.size(); ++i) CHECK(lhs[i] == doctest::Approx(alpha * rhs[i]).epsilon(1e-12));
  }
}

TEST_CASE("tensor dump round-trips bit-exactly") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Shape shape;
    for (Index d = 0, nd = 1 + rng.index(4); d < nd; ++d) shape.push_back(1 + rng.index(5));
    Tensor t = testing::random_tensor(shape, rng, 1e3);
    t[0] = -0.0;
    if (t.size() > 1) t[1] = std::numeric_limits<double>::denorm_min();
    std::stringstream buf;
    write_tensor(buf, t);
    Tensor back = read_tensor(buf);
    REQUIRE(back.shape() == t.shape());
    CHECK(std::memcmp(back.ptr(), t.ptr(), static_cast<std::size_t>(t.size()) * sizeof(double)) == 0);
  }
}

TEST_CASE("tensor dump header and payload validation") {
  std::stringstream header;
  write_tensor(header, Tensor({2, 2}, 1.0));
  CHECK(header.str().rfind("TEN 2 2 2\n", 0) == 0);
  CHECK(header.str().size() == std::string("TEN 2 2 2\n").size() + 4 * sizeof(double));

  std::stringstream bad("XYZ 1 3\n");
  CHECK_THROWS_AS(read_tensor(bad), FormatError);

  std::string truncated = header.str();
  truncated.resize(truncated.size() - 3);
  std::stringstream short_payload(truncated);
  CHECK_THROWS_AS(read_tensor(short_payload), FormatError);
}

TEST_CASE("rng streams are independent and reproducible") {
  Rng root(42);
  Rng a1 = root.stream("split");
  Rng a2 = root.stream("split");
  Rng b = root.stream("shuffle");
  const double x1 = a1.uniform();
  CHECK(x1 == a2.uniform());
  CHECK(x1 != b.uniform());
}
