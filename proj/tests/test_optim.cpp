#include <cmath>

#include "doctest.h"
#include "posr/errors.hpp"
#include "posr/optim.hpp"
#include "posr/tensor.hpp"

using namespace posr;
using autodiff::Tensor;

TEST_CASE("first Adam step has learning-rate magnitude") {
  // With bias correction the first update is lr * g / (|g| + eps), so its
  // size is the learning rate no matter how large the gradient is.
  const Tensor x = Tensor::leaf({2}, {5.0, -1.0}, true);
  optim::Adam opt({{"x", x}});
  autodiff::backward(
      autodiff::sum(autodiff::scalar_multiply(x, 37.0)));  // grad = 37
  opt.step(0.1);
  CHECK(x.values()[0] == doctest::Approx(4.9).epsilon(1e-6));
  CHECK(x.values()[1] == doctest::Approx(-1.1).epsilon(1e-6));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("a parameter without gradient is left untouched") {
  const Tensor x = Tensor::leaf({1}, {2.0}, true);
  const Tensor y = Tensor::leaf({1}, {3.0}, true);
  optim::Adam opt({{"x", x}, {"y", y}});
  autodiff::backward(autodiff::sum(autodiff::square(x)));
  opt.step(0.05);
  CHECK(x.values()[0] != 2.0);
  CHECK(y.values()[0] == 3.0);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("zero_grad clears accumulated gradients") {
  const Tensor x = Tensor::leaf({1}, {2.0}, true);
  optim::Adam opt({{"x", x}});
  autodiff::backward(autodiff::sum(autodiff::square(x)));
  CHECK(x.has_grad());
  opt.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("Adam minimizes a quadratic") {
  const Tensor x = Tensor::leaf({1}, {10.0}, true);
  optim::Adam opt({{"x", x}});
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    const Tensor residual = autodiff::add(x, Tensor::scalar(-3.0));
    autodiff::backward(autodiff::sum(autodiff::square(residual)));
    opt.step(0.1);
  }
  CHECK(std::abs(x.values()[0] - 3.0) < std::abs(10.0 - 3.0) / 100.0);
  CHECK(opt.step_count() == 200);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  const optim::CosineSchedule sched{0.005, 0.0, 100};
  CHECK(optim::cosine_lr(sched, 0) == 0.005);
  CHECK(optim::cosine_lr(sched, 100) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(optim::cosine_lr(sched, 50) == doctest::Approx(0.0025).epsilon(1e-12));

  const optim::CosineSchedule lifted{0.01, 0.002, 10};
  CHECK(optim::cosine_lr(lifted, 0) == 0.01);
  CHECK(optim::cosine_lr(lifted, 10) == doctest::Approx(0.002).epsilon(1e-12));
  CHECK(optim::cosine_lr(lifted, 5) == doctest::Approx(0.006).epsilon(1e-12));

  double prev = optim::cosine_lr(sched, 0);
  for (std::int64_t t = 1; t <= 100; ++t) {
    const double lr = optim::cosine_lr(sched, t);
    CHECK(lr <= prev);
    prev = lr;
  }

  CHECK_THROWS_AS(optim::cosine_lr(sched, 101), ValueError);
  CHECK_THROWS_AS(optim::cosine_lr(sched, -1), ValueError);
}
