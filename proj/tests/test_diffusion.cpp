#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "t3d/diffusion.hpp"
#include "t3d/errors.hpp"

using namespace t3d;

namespace {
constexpr Token kMask = 16;

Tokens ramp(std::size_t n) {
  Tokens x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<Token>(i % 16);
  return x;
}
}  // namespace

TEST_CASE("schedule endpoints") {
  CHECK(NoiseSchedule::alpha(0.0) == 1.0);
  CHECK(NoiseSchedule::alpha(1.0) == 0.0);
  CHECK(NoiseSchedule::alpha(0.25) > NoiseSchedule::alpha(0.75));
  CHECK_THROWS_AS(NoiseSchedule::alpha(1.5), DomainError);
}

TEST_CASE("mask_sequence") {
  Rng rng(1);
  auto x0 = ramp(64);
  CHECK(mask_sequence(x0, 0.0, kMask, rng) == x0);
  auto all = mask_sequence(x0, 1.0, kMask, rng);
  for (Token t : all) CHECK(t == kMask);
  CHECK_THROWS_AS(mask_sequence(x0, -0.1, kMask, rng), DomainError);

  SUBCASE("masked fraction at t = 0.5 within three binomial sd") {
    auto big = ramp(10000);
    auto xt = mask_sequence(big, 0.5, kMask, rng);
    std::size_t masked = 0;
    for (std::size_t i = 0; i < xt.size(); ++i) {
      if (xt[i] == kMask) {
        ++masked;
      } else {
        CHECK(xt[i] == big[i]);  // kept, never substituted
      }
    }
    const double sd = std::sqrt(10000 * 0.25);
    CHECK(std::abs(static_cast<double>(masked) - 5000.0) < 3 * sd);
  }
  SUBCASE("prompt region stays clean") {
    auto xt = mask_sequence(x0, 1.0, kMask, rng, 16);
    for (std::size_t i = 0; i < 16; ++i) CHECK(xt[i] == x0[i]);
    for (std::size_t i = 16; i < xt.size(); ++i) CHECK(xt[i] == kMask);
  }
  SUBCASE("seeded determinism") {
    Rng a(9), b(9);
    CHECK(mask_sequence(x0, 0.4, kMask, a) == mask_sequence(x0, 0.4, kMask, b));
  }
}

TEST_CASE("mask_by_order") {
  Tokens x0{5, 6, 7, 8, 9, 10};
  std::vector<int> order{2, 1, 3, 3, 4, 0};
  auto done = mask_by_order(x0, order, 4, kMask);
  CHECK(done == Tokens{5, 6, 7, 8, 9, kMask});
  auto none = mask_by_order(x0, order, 0, kMask);
  for (Token t : none) CHECK(t == kMask);
  CHECK(mask_by_order(x0, order, 2, kMask) == Tokens{5, 6, kMask, kMask, kMask, kMask});
  for (int s = 0; s <= 4; ++s) {
    auto once = mask_by_order(x0, order, s, kMask);
    CHECK(mask_by_order(once, order, s, kMask) == once);  // idempotent
  }
  CHECK_THROWS_AS(mask_by_order(x0, order, -1, kMask), DomainError);
}

TEST_CASE("corrupt_with_random") {
  Rng rng(3);
  Tokens xt{1, kMask, 2, kMask, kMask};
  CHECK(corrupt_with_random(xt, {0.0}, kMask, 17, rng) == xt);
  CHECK(CorruptionConfig{}.p_rand == 0.1);
  CHECK_THROWS_AS(corrupt_with_random(xt, {1.5}, kMask, 17, rng), ConfigError);

  SUBCASE("replacement histogram is uniform over non-mask tokens") {
    const std::size_t n = 160000;
    Tokens masked(n, kMask);
    auto out = corrupt_with_random(masked, {1.0}, kMask, 17, rng);
    std::vector<double> counts(17, 0.0);
    for (Token t : out) counts[static_cast<std::size_t>(t)] += 1;
    CHECK(counts[kMask] == 0.0);
    const double expected = static_cast<double>(n) / 16.0;
    double chi2 = 0.0;
    for (std::size_t k = 0; k < 16; ++k) chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
    // chi-square upper 1% point, 15 degrees of freedom
    CHECK(chi2 < 30.578);
  }
  SUBCASE("clean positions are untouched") {
    Tokens mixed{1, kMask, 2, kMask, 3};
    auto out = corrupt_with_random(mixed, {1.0}, kMask, 17, rng);
    CHECK(out[0] == 1);
    CHECK(out[2] == 2);
    CHECK(out[4] == 3);
    CHECK(out[1] != kMask);
    CHECK(out[3] != kMask);
  }
}
