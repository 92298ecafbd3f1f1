#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "realmix/rng.hpp"

using namespace realmix;

TEST_CASE("keyed streams are pure functions of (seed, stream_id, keys)") {
  RngStream a(42, "extend");
  RngStream b(42, "extend");
  for (uint64_t k = 0; k < 16; ++k) {
    Rng r1 = a.at(k, 3);
    Rng r2 = b.at(k, 3);
    for (int i = 0; i < 8; ++i) REQUIRE(r1.next_u64() == r2.next_u64());
  }

  // different stream ids and keys decorrelate
  REQUIRE(RngStream(42, "extend").at(0).next_u64() != RngStream(42, "mixup").at(0).next_u64());
  REQUIRE(RngStream(42, "extend").at(0).next_u64() != RngStream(42, "extend").at(1).next_u64());
  REQUIRE(RngStream(42, "extend").at(0).next_u64() != RngStream(43, "extend").at(0).next_u64());
}

TEST_CASE("uniform stays in [0,1) and uniform_int covers its range") {
  Rng rng(123);
  double mn = 1.0, mx = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    mn = std::min(mn, u);
    mx = std::max(mx, u);
  }
  REQUIRE(mn < 0.01);
  REQUIRE(mx > 0.99);

  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) {
    int v = rng.uniform_int(-3, 3);
    REQUIRE(v >= -3);
    REQUIRE(v <= 3);
    seen.insert(v);
  }
  REQUIRE(seen.size() == 7);
}

TEST_CASE("normal has roughly zero mean and unit variance") {
  Rng rng(7);
  double sum = 0.0, sq = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  REQUIRE(std::fabs(sum / n) < 0.02);
  REQUIRE(std::fabs(sq / n - 1.0) < 0.03);
}

TEST_CASE("beta(a,a) is symmetric around 0.5 and in (0,1)") {
  for (double alpha : {0.3, 0.75, 2.0}) {
    Rng rng(99);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      double x = rng.beta(alpha, alpha);
      REQUIRE(x >= 0.0);
      REQUIRE(x <= 1.0);
      sum += x;
    }
    REQUIRE(std::fabs(sum / n - 0.5) < 0.02);
  }
}

TEST_CASE("gamma matches the shape-parameter mean") {
  for (double shape : {0.5, 1.0, 3.0}) {
    Rng rng(5);
    double sum = 0.0;
    const int n = 30000;
    for (int i = 0; i < n; ++i) sum += rng.gamma(shape);
    REQUIRE(sum / n == Catch::Approx(shape).margin(0.05 * shape + 0.01));
  }
}

TEST_CASE("shuffle is a seeded permutation") {
  std::vector<int> v1{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<int> v2 = v1;
  Rng(11).shuffle(v1);
  Rng(11).shuffle(v2);
  REQUIRE(v1 == v2);
  std::set<int> elems(v1.begin(), v1.end());
  REQUIRE(elems.size() == 10);
}
