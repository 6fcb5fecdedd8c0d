#include <doctest.h>

#include <cmath>
#include <vector>

#include "motionsep/rng.hpp"

using namespace motionsep;

TEST_CASE("rng is deterministic and seed-sensitive") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 100; ++i) {
    if (a2.next_u64() != c.next_u64()) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("mt19937_64 reference value") {
  // The standard pins the 10000th output of a default-seeded mt19937_64.
  std::mt19937_64 ref(std::mt19937_64::default_seed);
  Rng ours(std::mt19937_64::default_seed);
  uint64_t expect = 0, got = 0;
  for (int i = 0; i < 10000; ++i) {
    expect = ref();
    got = ours.next_u64();
  }
  CHECK(expect == 9981545732273789042ULL);
  CHECK(got == expect);
}

TEST_CASE("uniform stays in range with plausible mean") {
  Rng r(7);
  double sum = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("uniform_int covers range uniformly") {
  Rng r(11);
  std::vector<int> counts(10, 0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) counts[static_cast<size_t>(r.uniform_int(10))]++;
  for (int c : counts) {
    CHECK(c > n / 10 - 700);
    CHECK(c < n / 10 + 700);
  }
}

TEST_CASE("normal moments match a standard gaussian") {
  Rng r(13);
  const int n = 50000;
  double m1 = 0.0, m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    m1 += x;
    m2 += x * x;
    m3 += x * x * x;
    m4 += x * x * x * x;
  }
  m1 /= n;
  m2 /= n;
  m3 /= n;
  m4 /= n;
  CHECK(m1 == doctest::Approx(0.0).epsilon(1.0));  // epsilon on 0 is absolute via margin below
  CHECK(std::abs(m1) < 0.02);
  CHECK(m2 == doctest::Approx(1.0).epsilon(0.03));
  CHECK(std::abs(m3) < 0.06);
  CHECK(m4 == doctest::Approx(3.0).epsilon(0.08));
}

TEST_CASE("derived streams are independent and stable") {
  Rng master(99);
  Rng s1 = master.stream("noise");
  Rng s2 = master.stream("init");
  Rng s1b = Rng(99).stream("noise");
  // Same (seed, tag) reproduces the stream; different tags diverge.
  for (int i = 0; i < 50; ++i) CHECK(s1.next_u64() == s1b.next_u64());
  CHECK(Rng(99).stream("noise").next_u64() != Rng(99).stream("init").next_u64());
  // Consuming the parent does not perturb derived streams.
  Rng master2(99);
  master2.next_u64();
  master2.next_u64();
  CHECK(master2.stream("noise").next_u64() == Rng(99).stream("noise").next_u64());
  (void)s2;
}

TEST_CASE("normal consumes a fixed number of raw draws") {
  // Box-Muller without caching: each normal() call consumes exactly two
  // uint64 draws, which keeps interleaved consumers reproducible.
  Rng a(5);
  a.normal();
  a.normal();
  Rng b(5);
  b.next_u64();
  b.next_u64();
  b.next_u64();
  b.next_u64();
  CHECK(a.next_u64() == b.next_u64());
}
