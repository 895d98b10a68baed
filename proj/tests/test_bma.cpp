#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "ndx/bma.hpp"

using namespace ndx;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

PriorSpec one(Marginal m) { return PriorSpec{{std::move(m)}}; }

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST_CASE("constant likelihood gives exact evidence", "[bma]") {
  const auto prior = PriorSpec{{Marginal::uniform("a", -3, 7), Marginal::normal("b", 1, 2)}};
  for (std::size_t n : {100u, 137u, 5000u}) {
    const auto e = estimate_evidence([](std::span<const double>) { return -3.25; }, prior, n, 7);
    CHECK(e.log_evidence == -3.25);
    CHECK_FALSE(e.underflow);
    CHECK(e.std_error == 0.0);
  }
}

TEST_CASE("conjugate normal evidence", "[bma]") {
  const auto prior = one(Marginal::normal("t", 0, 1));
  // prior N(0,1), likelihood N(0 | t, s^2): evidence is the N(0, 1 + s^2) density at 0
  for (double s2 : {1.0, 3.0}) {
    auto ll = [s2](std::span<const double> t) { return -0.5 * t[0] * t[0] / s2 - 0.5 * std::log(2 * M_PI * s2); };
    const auto e = estimate_evidence(ll, prior, 100000, 11);
    const double exact = 1.0 / std::sqrt(2.0 * M_PI * (1.0 + s2));
    CHECK(std::abs(e.evidence() - exact) < 3.0 * e.std_error);
    CHECK(e.std_error > 0.0);
    CHECK(e.std_error < 1e-3);
    CHECK_THAT(e.log_std_error, WithinRel(e.std_error / e.evidence(), 0.01));
    if (s2 == 3.0) CHECK_THAT(exact, WithinAbs(0.1994711, 1e-7));
  }
}

TEST_CASE("evidence from stored samples", "[bma]") {
  SampleSet s({"t"});
  for (double v : {0.0, 1.0}) s.push_back(std::vector<double>{v});
  auto ll = [](std::span<const double> t) { return t[0] == 0.0 ? 0.0 : kNegInf; };
  const auto e = estimate_evidence(ll, s, 20000, 3);
  CHECK_THAT(e.evidence(), WithinAbs(0.5, 3 * e.std_error));
}

TEST_CASE("disjoint support underflows", "[bma]") {
  const auto prior = one(Marginal::uniform("t", 0, 1));
  auto ll = [](std::span<const double> t) { return (t[0] >= 2 && t[0] <= 3) ? 0.0 : kNegInf; };
  const auto e = estimate_evidence(ll, prior, 1000, 5);
  CHECK(e.underflow);
  CHECK(e.evidence() == 0.0);
  CHECK_THROWS_AS(e.require_finite(), EvidenceUnderflow);
  CHECK(EvidenceUnderflow("x").numerical());
}

TEST_CASE("evidence preconditions and determinism", "[bma]") {
  const auto prior = one(Marginal::uniform("t", 0, 1));
  auto ll = [](std::span<const double> t) { return -t[0]; };
  CHECK_THROWS_AS(estimate_evidence(ll, prior, 99, 1), InvalidArgument);
  const auto a = estimate_evidence(ll, prior, 2000, 9, 1);
  const auto b = estimate_evidence(ll, prior, 2000, 9, 3);
  CHECK(a.log_evidence == b.log_evidence);
  CHECK_THAT(a.evidence(), WithinAbs(1 - std::exp(-1.0), 3 * a.std_error));
}

TEST_CASE("model posterior weights", "[bma]") {
  const std::vector<double> half{0.5, 0.5};
  auto w = model_posterior(std::vector<double>{-4.0, -4.0}, half);
  CHECK_THAT(w[0], WithinAbs(0.5, 1e-15));
  CHECK_THAT(w[1], WithinAbs(0.5, 1e-15));

  w = model_posterior(std::vector<double>{std::log(2.0), 0.0}, half);
  CHECK_THAT(w[0], WithinAbs(2.0 / 3.0, 1e-14));
  CHECK_THAT(w[1], WithinAbs(1.0 / 3.0, 1e-14));

  w = model_posterior(std::vector<double>{-900.0, 5.0}, std::vector<double>{1.0, 0.0});
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 0.0);

  CHECK_THROWS_AS(model_posterior(std::vector<double>{0.0, 0.0}, std::vector<double>{0.5, 0.4}), InvalidArgument);
}

TEST_CASE("model posterior sums to one and ignores a common shift", "[bma]") {
  SplitMix64 rng(42);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t k = 2 + uniform_index(rng, 5);
    std::vector<double> le(k), p(k);
    double ps = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      le[i] = -200.0 * uniform01(rng);
      p[i] = uniform01(rng) + 0.01;
      ps += p[i];
    }
    for (auto& v : p) v /= ps;
    p.back() = 1.0 - std::accumulate(p.begin(), p.end() - 1, 0.0);
    const auto w = model_posterior(le, p);
    CHECK_THAT(std::accumulate(w.begin(), w.end(), 0.0), WithinAbs(1.0, 1e-12));
    auto shifted = le;
    const double c = 1000.0 * (uniform01(rng) - 0.5);
    for (auto& v : shifted) v += c;
    const auto w2 = model_posterior(shifted, p);
    for (std::size_t i = 0; i < k; ++i) CHECK_THAT(w2[i], WithinAbs(w[i], 1e-12));
  }
}

TEST_CASE("Bayes factor", "[bma]") {
  CHECK(bayes_factor(-3.0, -3.0) == 1.0);
  CHECK_THAT(bayes_factor(std::log(2.0), 0.0), WithinRel(2.0, 1e-15));
  CHECK_THAT(bayes_factor(-1.7, 2.2) * bayes_factor(2.2, -1.7), WithinRel(1.0, 1e-15));
  CHECK_THROWS_AS(bayes_factor(kNegInf, 0.0), InvalidArgument);
  // equal priors: Bayes factor equals posterior odds
  const auto w = model_posterior(std::vector<double>{-1.0, -2.5}, std::vector<double>{0.5, 0.5});
  CHECK_THAT(w[0] / w[1], WithinRel(bayes_factor(-1.0, -2.5), 1e-12));
}

TEST_CASE("mixture sampling", "[bma]") {
  MixturePrior mix;
  mix.informative = SampleSet({"t"});
  mix.informative.push_back(std::vector<double>{0.0});
  mix.noninformative = one(Marginal::uniform("t", 1, 2));

  SECTION("w = 0.5 Bernoulli split") {
    mix.w = 0.5;
    const std::size_t n = 10000;
    const auto s = mixture_sample(mix, n, 77);
    REQUIRE(s.size() == n);
    double frac = 0.0;
    for (std::size_t i = 0; i < n; ++i) frac += s.row(i)[0] < 0.5 ? 0.0 : 1.0;
    frac /= n;
    CHECK(std::abs(frac - 0.5) < 3.0 * std::sqrt(0.25 / n));
  }
  SECTION("w = 1 draws only from the informative set") {
    mix.w = 1.0;
    const auto s = mixture_sample(mix, 500, 1);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(s.row(i)[0] == 0.0);
  }
  SECTION("w = 0 is pure prior sampling") {
    mix.w = 0.0;
    const auto s = mixture_sample(mix, 500, 1);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK((s.row(i)[0] >= 1.0 && s.row(i)[0] <= 2.0));
  }
  SECTION("errors") {
    mix.w = 1.5;
    CHECK_THROWS_AS(mixture_sample(mix, 10, 1), InvalidArgument);
    mix.w = 0.3;
    mix.informative = SampleSet({"t"});
    CHECK_THROWS_AS(mixture_sample(mix, 10, 1), InvalidArgument);
    mix.w = 0.0;
    CHECK_NOTHROW(mixture_sample(mix, 10, 1));
  }
  SECTION("reproducible") {
    mix.w = 0.4;
    CHECK(mixture_sample(mix, 100, 5).data == mixture_sample(mix, 100, 5).data);
    CHECK(mixture_sample(mix, 100, 5).data != mixture_sample(mix, 100, 6).data);
  }
}

TEST_CASE("mixture with w in {0,1} matches the pure components (KS)", "[bma]") {
  const std::size_t n = 10000;
  const double crit = 1.628 * std::sqrt(2.0 / n);
  SplitMix64 rng(123);
  MixturePrior mix;
  mix.informative = SampleSet({"b", "a"});
  for (std::size_t i = 0; i < 3000; ++i) {
    const double a = standard_normal(rng);
    mix.informative.push_back(std::vector<double>{a * a, a});
  }
  mix.noninformative = PriorSpec{{Marginal::normal("a", 3, 0.5), Marginal::uniform("b", 0, 4)}};

  mix.w = 1.0;
  auto s = mixture_sample(mix, n, 8);
  REQUIRE(s.names == std::vector<std::string>{"a", "b"});
  std::vector<double> ref;
  for (std::size_t i = 0; i < 3000; ++i) ref.push_back(mix.informative.row(i)[1]);
  CHECK(ks_statistic(s.column(0), ref) < crit);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s.row(i)[1] == s.row(i)[0] * s.row(i)[0]);

  mix.w = 0.0;
  s = mixture_sample(mix, n, 8);
  SplitMix64 r2(999);
  std::vector<double> direct(n);
  for (auto& v : direct) v = 3.0 + 0.5 * standard_normal(r2);
  CHECK(ks_statistic(s.column(0), direct) < crit);
}

TEST_CASE("largest remainder allocation", "[bma]") {
  CHECK(largest_remainder(std::vector<double>{0.75, 0.25}, 4) == std::vector<std::size_t>{3, 1});
  CHECK(largest_remainder(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}, 10) == std::vector<std::size_t>{4, 3, 3});
  CHECK(largest_remainder(std::vector<double>{0.0, 1.0}, 7) == std::vector<std::size_t>{0, 7});
  SplitMix64 rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> w(1 + uniform_index(rng, 6));
    for (auto& v : w) v = uniform01(rng);
    const std::size_t n = uniform_index(rng, 1000);
    const auto a = largest_remainder(w, n);
    CHECK(std::accumulate(a.begin(), a.end(), std::size_t{0}) == n);
  }
}

TEST_CASE("BMA posterior pooling", "[bma]") {
  SampleSet a({"x"}), b({"x"});
  for (double v : {1.0, 2.0, 3.0}) a.push_back(std::vector<double>{v});
  for (double v : {10.0, 20.0}) b.push_back(std::vector<double>{v});

  auto s = bma_posterior(std::vector<double>{0.75, 0.25}, {a, b}, 4, 1);
  REQUIRE(s.size() == 4);
  int small = 0;
  for (std::size_t i = 0; i < 4; ++i) small += s.row(i)[0] < 5.0;
  CHECK(small == 3);

  s = bma_posterior(std::vector<double>{1.0, 0.0}, {a, b}, 300, 2);
  std::set<double> seen;
  for (std::size_t i = 0; i < s.size(); ++i) seen.insert(s.row(i)[0]);
  CHECK(seen == std::set<double>{1.0, 2.0, 3.0});

  CHECK_NOTHROW(bma_posterior(std::vector<double>{1.0, 0.0}, {a, SampleSet({"x"})}, 10, 2));
  CHECK_THROWS_AS(bma_posterior(std::vector<double>{0.5, 0.5}, {a, SampleSet({"x"})}, 10, 2), InvalidArgument);
  CHECK_THROWS_AS(bma_posterior(std::vector<double>{0.5, 0.6}, {a, b}, 10, 2), InvalidArgument);
}

TEST_CASE("two-component BMA prior matches the mixture form", "[bma]") {
  BayesianModel exp;
  exp.label = "ground";
  exp.kind = ModelKind::Updated;
  PosteriorSamples ps;
  ps.samples = SampleSet({"t"});
  ps.samples.push_back(std::vector<double>{0.25});
  exp.posterior = ps;
  exp.prior_probability = 0.7;
  BayesianModel up;
  up.label = "M_up";
  up.prior = one(Marginal::uniform("t", 0, 1));
  up.prior_probability = 0.3;

  const auto mix = two_component_prior(exp, up);
  CHECK(mix.w == 0.7);
  CHECK(mix.informative.data == ps.samples.data);
  CHECK(mix.noninformative.names() == std::vector<std::string>{"t"});

  up.prior_probability = 0.4;
  CHECK_THROWS_AS(two_component_prior(exp, up), InvalidArgument);
}
