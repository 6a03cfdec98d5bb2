#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracle_cases.hpp"
#include "oracles.hpp"
#include "posr/errors.hpp"
#include "posr/losses.hpp"
#include "posr/rng.hpp"

using namespace posr;
using autodiff::Tensor;
namespace L = losses;

namespace {

std::size_t row_argmax(const std::vector<double>& v, std::size_t row,
                       std::size_t cols) {
  const auto begin = v.begin() + static_cast<std::ptrdiff_t>(row * cols);
  return static_cast<std::size_t>(
      std::max_element(begin, begin + static_cast<std::ptrdiff_t>(cols)) -
      begin);
}

}  // namespace

TEST_CASE("distance softmax spot values") {
  const Tensor dist = Tensor::leaf({1, 2}, {1.0, 4.0});

  const auto near = L::gcpl_probs(dist, 1.0).values();
  CHECK(std::abs(near[0] - 0.95257) <= 1e-5);
  CHECK(std::abs(near[1] - 0.04743) <= 1e-5);

  const auto far = L::rpl_probs(dist, 1.0).values();
  CHECK(std::abs(far[0] - 0.04743) <= 1e-5);
  CHECK(std::abs(far[1] - 0.95257) <= 1e-5);

  const std::vector<int> label0 = {0};
  CHECK(std::abs(L::dce_loss(L::gcpl_probs(dist, 1.0), label0).item() -
                 0.04859) <= 1e-5);
}

TEST_CASE("combined distance and open-space spot values") {
  // Single embedding [1,0] against a single reciprocal point [0,1]:
  // squared distance 2, dot product 0.
  const Tensor e = Tensor::leaf({1, 2}, {1.0, 0.0});
  const Tensor p = Tensor::leaf({1, 2}, {0.0, 1.0});
  CHECK(L::arpl_distance(e, p).values() == std::vector<double>{2.0});

  const Tensor pm = Tensor::leaf({1, 2}, {2.0, -2.0});
  const auto probs = L::arpl_probs(pm, 1.0).values();
  CHECK(std::abs(probs[0] - 0.98201) <= 1e-5);
  CHECK(std::abs(probs[1] - 0.01799) <= 1e-5);

  const std::vector<int> label0 = {0};
  // Squared distance 2 against radius 1: (2 - 1)^2 = 1 exactly.
  const Tensor e2 = Tensor::leaf({1, 2}, {1.0, 1.0});
  const Tensor origin = Tensor::leaf({1, 2}, {0.0, 0.0});
  const Tensor radius = Tensor::leaf({1}, {1.0});
  CHECK(L::rpl_open_reg(e2, origin, radius, label0).item() == 1.0);

  // Squared distance 0.5 against radius 1: hinge is inactive, exactly 0.
  const Tensor e3 = Tensor::leaf({1, 2}, {0.5, 0.5});
  CHECK(L::arpl_open_reg(e3, origin, radius, label0).item() == 0.0);
}

TEST_CASE("cross entropy spot value") {
  const Tensor logits = Tensor::leaf({1, 2}, {10.0, -10.0});
  const std::vector<int> label0 = {0};
  CHECK(L::ce_loss(logits, label0).item() ==
        doctest::Approx(2.0611536e-9).epsilon(1e-5));
  const std::vector<int> label1 = {1};
  CHECK(L::ce_loss(logits, label1).item() ==
        doctest::Approx(20.0).epsilon(1e-6));
}

TEST_CASE("probability rows normalize at extreme scales") {
  rng::Xoshiro256ss gen(5);
  for (double scale : {1.0, 100.0, 1000.0}) {
    std::vector<double> dv(3 * 4);
    for (auto& v : dv) v = gen.uniform(0.0, scale);
    const Tensor dist = Tensor::leaf({3, 4}, dv);
    for (double gamma : {0.01, 1.0, 10.0}) {
      for (const Tensor& probs :
           {L::gcpl_probs(dist, gamma), L::rpl_probs(dist, gamma),
            L::arpl_probs(dist, gamma)}) {
        for (std::size_t r = 0; r < 3; ++r) {
          double row = 0.0;
          for (std::size_t c = 0; c < 4; ++c) row += probs.values()[r * 4 + c];
          CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
        }
      }
    }
  }
}

TEST_CASE("temperature never changes the argmax decision") {
  rng::Xoshiro256ss gen(6);
  std::vector<double> dv(5 * 6);
  for (auto& v : dv) v = gen.uniform(0.0, 20.0);
  const Tensor dist = Tensor::leaf({5, 6}, dv);

  for (std::size_t r = 0; r < 5; ++r) {
    std::size_t near_ref = 0, far_ref = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      if (dv[r * 6 + c] < dv[r * 6 + near_ref]) near_ref = c;
      if (dv[r * 6 + c] > dv[r * 6 + far_ref]) far_ref = c;
    }
    for (double gamma : {0.01, 0.1, 1.0, 10.0}) {
      CHECK(row_argmax(L::gcpl_probs(dist, gamma).values(), r, 6) == near_ref);
      CHECK(row_argmax(L::rpl_probs(dist, gamma).values(), r, 6) == far_ref);
    }
  }
}

TEST_CASE("raising a distance lowers its nearness probability") {
  std::vector<double> dv = {1.0, 2.0, 3.0};
  const double before = L::gcpl_probs(Tensor::leaf({1, 3}, dv), 1.0).values()[1];
  dv[1] = 2.5;
  const double after = L::gcpl_probs(Tensor::leaf({1, 3}, dv), 1.0).values()[1];
  CHECK(after < before);
}

TEST_CASE("losses match scalar references on random cases") {
  const auto res = oracle_cases::run(100);
  INFO("worst op: ", res.worst_op);
  CHECK(res.max_abs_diff <= 1e-10);
}

TEST_CASE("every loss passes a finite-difference gradient check") {
  rng::Xoshiro256ss gen(7);
  const std::size_t B = 5, C = 3, d = 4;
  std::vector<double> ev(B * d), pv(C * d), rv(C), lv(B * C);
  for (auto& x : ev) x = gen.uniform(-2, 2);
  for (auto& x : pv) x = gen.uniform(-2, 2);
  for (auto& x : rv) x = gen.uniform(0.5, 3.0);
  for (auto& x : lv) x = gen.uniform(-3, 3);
  const std::vector<int> labels = {0, 2, 1, 1, 0};

  const Tensor embeds = Tensor::leaf({B, d}, ev, true);
  const Tensor points = Tensor::leaf({C, d}, pv, true);
  const Tensor radii = Tensor::leaf({C}, rv, true);
  const Tensor logits = Tensor::leaf({B, C}, lv, true);

  L::LossConfig cfg;
  cfg.gamma_temp = 0.7;
  cfg.beta = 0.05;
  cfg.gamma_reg = 0.08;

  SUBCASE("gcpl") {
    const auto rep = autodiff::grad_check(
        [&]() { return L::gcpl_loss(embeds, points, labels, cfg); },
        {{"embeds", embeds}, {"points", points}});
    INFO("max rel err ", rep.max_rel_err());
    CHECK(rep.all_ok());
  }
  SUBCASE("rpl") {
    const auto rep = autodiff::grad_check(
        [&]() { return L::rpl_loss(embeds, points, radii, labels, cfg); },
        {{"embeds", embeds}, {"points", points}, {"radii", radii}});
    CHECK(rep.all_ok());
  }
  SUBCASE("arpl") {
    const auto rep = autodiff::grad_check(
        [&]() { return L::arpl_loss(embeds, points, radii, labels, cfg); },
        {{"embeds", embeds}, {"points", points}, {"radii", radii}});
    CHECK(rep.all_ok());
  }
  SUBCASE("cross entropy") {
    const auto rep = autodiff::grad_check(
        [&]() { return L::ce_loss(logits, labels); }, {{"logits", logits}});
    CHECK(rep.all_ok());
  }
  SUBCASE("hybrid") {
    const auto rep = autodiff::grad_check(
        [&]() {
          return L::hybrid_loss(
              L::gcpl_loss(embeds, points, labels, cfg),
              L::arpl_loss(embeds, points, radii, labels, cfg), 0.3);
        },
        {{"embeds", embeds}, {"points", points}, {"radii", radii}});
    CHECK(rep.all_ok());
  }
}

TEST_CASE("hybrid loss is the alpha-weighted sum") {
  const Tensor a = Tensor::scalar(1.25);
  const Tensor b = Tensor::scalar(0.5);
  CHECK(L::hybrid_loss(a, b, 0.1).item() == doctest::Approx(1.3).epsilon(1e-14));
}

TEST_CASE("labels are validated") {
  const Tensor dist = Tensor::leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor probs = L::gcpl_probs(dist, 1.0);
  const std::vector<int> too_few = {0};
  CHECK_THROWS_AS(L::dce_loss(probs, too_few), ValueError);
  const std::vector<int> out_of_range = {0, 3};
  CHECK_THROWS_AS(L::dce_loss(probs, out_of_range), ValueError);
  const std::vector<int> negative = {0, -1};
  CHECK_THROWS_AS(L::dce_loss(probs, negative), ValueError);
}

TEST_CASE("loss kinds map to names and back") {
  for (L::LossKind k : {L::LossKind::NONE, L::LossKind::CE, L::LossKind::GCPL,
                        L::LossKind::RPL, L::LossKind::ARPL})
    CHECK(L::loss_kind_from_name(L::loss_kind_name(k)) == k);
  CHECK_THROWS_AS(L::loss_kind_from_name("bogus"), ValueError);
}

TEST_CASE("loss configuration is validated") {
  L::LossConfig cfg;
  cfg.validate();  // defaults are fine

  L::LossConfig bad = cfg;
  bad.clf_kind = L::LossKind::NONE;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.ossr_kind = L::LossKind::CE;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.gamma_temp = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.beta = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
