#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "commsim/compressors.hpp"
#include "commsim/error.hpp"
#include "helpers.hpp"

using namespace commsim;

namespace {

std::vector<SparseMessage> collection(const CompressorSpec& spec, const Vec& x, std::size_t n,
                                      std::uint64_t seed) {
  Streams streams(seed, n);
  std::vector<SparseMessage> out(n);
  compress_collection(spec, x, streams, out);
  return out;
}

}  // namespace

TEST_CASE("rand_k keeps k scaled coordinates") {
  Stream rng = testing::rng_for(1);
  const Vec x = testing::gaussian(12, rng);
  const SparseMessage full = apply_rand_k(x, 12, rng);
  CHECK(full.valid());
  CHECK(full.cost == 12.0);
  CHECK((densify(full) - x).norm() == 0.0);

  for (int trial = 0; trial < 50; ++trial) {
    const SparseMessage m = apply_rand_k(x, 4, rng);
    REQUIRE(m.valid());
    CHECK(m.nnz() == 4);
    CHECK(m.cost == 4.0);
    for (std::size_t j = 0; j < m.nnz(); ++j) CHECK(m.values[j] == 3.0 * x[m.indices[j]]);
  }
  CHECK_THROWS_AS(apply_rand_k(x, 0, rng), ParameterError);
  CHECK_THROWS_AS(apply_rand_k(x, 13, rng), ParameterError);
  CHECK(CompressorSpec::rand_k(10, 2).omega() == doctest::Approx(4.0));
}

TEST_CASE("rand_k on two coordinates picks one of two outcomes and is unbiased") {
  Stream rng = testing::rng_for(2);
  Vec x(2);
  x << 1.5, -0.5;
  const int draws = 100000;
  int first = 0;
  Vec sum = Vec::Zero(2);
  for (int i = 0; i < draws; ++i) {
    const Vec c = densify(apply_rand_k(x, 1, rng));
    const bool a = c[0] == 3.0 && c[1] == 0.0;
    const bool b = c[0] == 0.0 && c[1] == -1.0;
    REQUIRE((a || b));
    first += a ? 1 : 0;
    sum += c;
  }
  // Binomial(1e5, 1/2): 4 standard deviations is about 632.
  CHECK(std::abs(first - draws / 2) < 632);
  const Vec mean = sum / draws;
  CHECK(std::abs(mean[0] - x[0]) < 4.0 * 1.5 / std::sqrt(draws));
  CHECK(std::abs(mean[1] - x[1]) < 4.0 * 0.5 / std::sqrt(draws));
}

TEST_CASE("perm_k with a fixed permutation") {
  Vec x(4);
  x << 1, 2, 3, 4;
  const std::vector<std::uint32_t> identity = {0, 1, 2, 3};
  std::vector<SparseMessage> out(2);
  apply_perm_k_with(x, identity, 2, out);
  Vec c1(4), c2(4);
  c1 << 2, 4, 0, 0;
  c2 << 0, 0, 6, 8;
  CHECK(densify(out[0]) == c1);
  CHECK(densify(out[1]) == c2);
  CHECK(out[0].cost == 2.0);
}

TEST_CASE("perm_k messages partition the coordinates and average back to x") {
  Stream rng = testing::rng_for(3);
  const std::size_t d = 30, n = 5;
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = testing::gaussian(d, rng);
    const auto msgs = apply_perm_k_collection(x, n, rng);
    std::set<std::uint32_t> seen;
    Vec avg = Vec::Zero(d);
    for (const auto& m : msgs) {
      REQUIRE(m.valid());
      CHECK(m.nnz() == d / n);
      for (auto j : m.indices) CHECK(seen.insert(j).second);
      add_to(m, 1.0 / n, avg);
    }
    CHECK(seen.size() == d);
    CHECK((avg - x).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
  CHECK(*CompressorSpec::perm_k(30, 5).omega() == 4.0);
  CHECK_THROWS_AS(CompressorSpec::perm_k(10, 3), UnsupportedShapeError);
  CHECK_THROWS_AS(CompressorSpec::perm_k(2, 4), UnsupportedShapeError);
  CHECK_THROWS_AS(apply_perm_k_collection(Vec::Ones(10), 4, rng), UnsupportedShapeError);
}

TEST_CASE("top_k keeps the largest magnitudes with lowest-index ties") {
  Vec x(3);
  x << 3, -5, 1;
  Vec expected(3);
  expected << 0, -5, 0;
  CHECK(densify(apply_top_k(x, 1)) == expected);
  CHECK(densify(apply_top_k(x, 3)) == x);
  Vec tie(2);
  tie << 2, -2;
  Vec tie_expected(2);
  tie_expected << 2, 0;
  CHECK(densify(apply_top_k(tie, 1)) == tie_expected);
  CHECK_THROWS_AS(apply_top_k(x, 0), ParameterError);
  CHECK_THROWS_AS(apply_top_k(x, 4), ParameterError);

  Stream rng = testing::rng_for(4);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec v = testing::gaussian(17, rng);
    for (std::size_t k : {1, 5, 16}) {
      const Vec c = densify(apply_top_k(v, k));
      CHECK((c - v).squaredNorm() <= (1.0 - k / 17.0) * v.squaredNorm() + 1e-15);
    }
  }
  CHECK(*CompressorSpec::top_k(20, 5).alpha() == doctest::Approx(0.25));
  CHECK_FALSE(CompressorSpec::top_k(20, 5).omega());
}

TEST_CASE("natural rounding") {
  Stream rng = testing::rng_for(5);
  for (double t : {1.0, 0.25, -8.0, 1024.0}) CHECK(natural_round(t, rng) == t);
  CHECK(natural_round(0.0, rng) == 0.0);
  const int draws = 100000;
  int low = 0;
  for (int i = 0; i < draws; ++i) {
    const double r = natural_round(3.0, rng);
    REQUIRE((r == 2.0 || r == 4.0));
    low += r == 2.0 ? 1 : 0;
  }
  // Solving 2p + 4(1 - p) = 3 gives p = 1/2.
  CHECK(std::abs(low - draws / 2) < 632);
  for (int i = 0; i < 100; ++i) {
    const double r = natural_round(-3.0, rng);
    CHECK((r == -2.0 || r == -4.0));
  }
  CHECK_THROWS_AS(natural_round(std::nan(""), rng), ParameterError);
  const SparseMessage m = apply_natural(Vec::Ones(7), rng);
  CHECK(m.cost == 7.0);
  CHECK(m.encoding == Encoding::Natural);
  CHECK(*CompressorSpec::natural(7).omega() == doctest::Approx(0.125));
}

TEST_CASE("composition") {
  const std::size_t d = 24, n = 4;
  Stream rng = testing::rng_for(6);
  const Vec x = testing::gaussian(d, rng);

  const auto plain = CompressorSpec::rand_k(d, 6);
  const auto wrapped = CompressorSpec::compose(CompressorSpec::identity(d), plain);
  Stream a = testing::rng_for(7);
  Stream b = testing::rng_for(7);
  for (int i = 0; i < 20; ++i) {
    const SparseMessage ma = compress(plain, x, a);
    const SparseMessage mb = compress(wrapped, x, b);
    CHECK(ma.indices == mb.indices);
    CHECK(ma.values == mb.values);
    CHECK(ma.cost == mb.cost);
  }

  Vec pow2(d);
  for (std::size_t j = 0; j < d; ++j) {
    pow2[static_cast<Eigen::Index>(j)] = std::ldexp(j % 2 ? -1.0 : 1.0, static_cast<int>(j % 7) - 3);
  }
  const auto perm = CompressorSpec::perm_k(d, n);
  const auto nat_perm = CompressorSpec::compose(CompressorSpec::natural(d), perm);
  const auto p1 = collection(perm, pow2, n, 9);
  const auto p2 = collection(nat_perm, pow2, n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(p1[i].indices == p2[i].indices);
    CHECK(p1[i].values == p2[i].values);
    CHECK(p2[i].encoding == Encoding::Natural);
  }
  CHECK(*nat_perm.omega() == doctest::Approx((1.0 + 0.125) * n - 1.0));
  CHECK_THROWS_AS(CompressorSpec::compose(CompressorSpec::natural(5), perm), DimensionError);
  CHECK_THROWS_AS(CompressorSpec::compose(perm, CompressorSpec::natural(d)), ParameterError);
}

TEST_CASE("omega estimates") {
  Stream rng = testing::rng_for(8);
  // Closed form: E||C(x) - x||^2 = (d/k - 1) ||x||^2 for RandK.
  const std::size_t d = 10, k = 2;
  const double closed_form = static_cast<double>(d) / k - 1.0;
  const double est = estimate_omega(CompressorSpec::rand_k(d, k), Vec::Ones(d), 100000, rng);
  CHECK(std::abs(est - closed_form) <= 0.05 * closed_form);
  CHECK(estimate_omega(CompressorSpec::rand_k(d, d), Vec::Ones(d), 10000, rng) == 0.0);
  const Vec x = testing::gaussian(20, rng);
  CHECK(estimate_omega(CompressorSpec::perm_k(20, 4), x, 50000, rng) <= 3.0 * 1.05);
  CHECK_THROWS_AS(estimate_omega(CompressorSpec::rand_k(d, k), Vec::Zero(d), 100000, rng),
                  ParameterError);
  CHECK_THROWS_AS(estimate_omega(CompressorSpec::rand_k(d, k), Vec::Ones(d), 100, rng),
                  ParameterError);
}

TEST_CASE("theta estimates per collection mode") {
  Stream rng = testing::rng_for(9);
  const std::size_t d = 40, n = 8;
  const Vec x = testing::gaussian(d, rng);
  CHECK(estimate_theta(CompressorSpec::perm_k(d, n), n, x, 10000, rng) == 0.0);

  const auto rand = CompressorSpec::rand_k(d, 5);
  const double omega = *rand.omega();
  const double indep = estimate_theta(rand, n, x, 50000, rng);
  CHECK(std::abs(indep - omega / n) <= 0.1 * omega / n);
  CHECK(*rand.theta(n) == doctest::Approx(omega / n));

  const auto same = CompressorSpec::same_rand_k(d, 5);
  const double shared = estimate_theta(same, n, x, 50000, rng);
  CHECK(std::abs(shared - omega) <= 0.1 * omega);
  CHECK(*same.theta(n) == doctest::Approx(omega));
  CHECK(same.mode() == CollectionMode::Same);
  CHECK(rand.mode() == CollectionMode::Independent);
  CHECK(CompressorSpec::perm_k(d, n).mode() == CollectionMode::Correlated);
}

TEST_CASE("unbiasedness of every unbiased kind") {
  const std::size_t d = 12;
  Stream rng = testing::rng_for(10);
  const std::vector<CompressorSpec> specs = {
      CompressorSpec::rand_k(d, 3), CompressorSpec::same_rand_k(d, 3),
      CompressorSpec::perm_k(d, 4), CompressorSpec::natural(d),
      CompressorSpec::compose(CompressorSpec::natural(d), CompressorSpec::rand_k(d, 4))};
  for (const auto& spec : specs) {
    const Vec x = testing::gaussian(d, rng);
    const MomentEstimate m = estimate_moments(spec, x, 40000, rng);
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      CHECK(std::abs(m.bias[j]) <= 4.0 * m.std_error[j] + 1e-15);
    }
    CHECK(m.relative_variance <= 1.05 * *spec.omega());
  }
}

TEST_CASE("same seed gives identical messages") {
  const std::size_t d = 30, n = 6;
  Stream rng = testing::rng_for(11);
  const Vec x = testing::gaussian(d, rng);
  for (const auto& spec :
       {CompressorSpec::rand_k(d, 4), CompressorSpec::same_rand_k(d, 4), CompressorSpec::perm_k(d, n),
        CompressorSpec::compose(CompressorSpec::natural(d), CompressorSpec::perm_k(d, n))}) {
    const auto a = collection(spec, x, n, 42);
    const auto b = collection(spec, x, n, 42);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(a[i].indices == b[i].indices);
      CHECK(a[i].values == b[i].values);
    }
  }
  const auto same = collection(CompressorSpec::same_rand_k(d, 4), x, n, 5);
  for (std::size_t i = 1; i < n; ++i) CHECK(same[i].indices == same[0].indices);
}
