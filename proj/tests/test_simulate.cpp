#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "evogeo/simulate.hpp"

using namespace evogeo;

namespace {

ModelParams two_genotypes(std::uint64_t N, double m = 1e-6) {
  ModelParams p;
  p.g = 2;
  p.F = {2.0, 4.0};
  p.Q = SquareMatrix(2, {0.0, 1.0, 0.0, 0.0});
  p.m = m;
  p.N = N;
  p.delta = 1e-3;
  return p;
}

}  // namespace

TEST(Rng, StreamsAreReproducibleAndDistinct) {
  RngStream a(42, 0), b(42, 0), c(42, 1), d(43, 0);
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    differs_c |= x != c();
    differs_d |= x != d();
  }
  EXPECT_TRUE(differs_c);
  EXPECT_TRUE(differs_d);
  RngStream u(1, 2);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
    EXPECT_GT(u.uniform_pos(), 0.0);
  }
}

class PoissonMoments : public ::testing::TestWithParam<double> {};

TEST_P(PoissonMoments, MeanAndVarianceWithinFourSigma) {
  const double mu = GetParam();
  RngStream rng(7, static_cast<std::uint64_t>(mu * 1000));
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = static_cast<double>(poisson(mu, rng));
    ASSERT_GE(x, 0.0);
    s += x;
    s2 += x * x;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, mu, 4.0 * std::sqrt(mu / n));
  // var of the sample variance ~ (mu + 2 mu^2) / n
  EXPECT_NEAR(var, mu, 4.0 * std::sqrt((mu + 2 * mu * mu) / n));
}

INSTANTIATE_TEST_SUITE_P(Rates, PoissonMoments, ::testing::Values(0.3, 2.5, 9.9, 10.0, 37.0, 500.0, 20000.0));

TEST(Poisson, ZeroMeanIsZero) {
  RngStream rng(1);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(poisson(0.0, rng), 0);
}

TEST(Poisson, SmallMeanPointMass) {
  // P(X = 0) for mu = 1 is 1/e
  RngStream rng(5);
  const int n = 200000;
  int zeros = 0;
  for (int i = 0; i < n; ++i) zeros += poisson(1.0, rng) == 0;
  const double p = std::exp(-1.0);
  EXPECT_NEAR(static_cast<double>(zeros) / n, p, 4.0 * std::sqrt(p * (1 - p) / n));
}

TEST(Multinomial, ConservesTotalAndRespectsZeros) {
  RngStream rng(3);
  std::vector<double> p{0.2, 0.0, 0.5, 0.3};
  for (int i = 0; i < 1000; ++i) {
    auto v = multinomial(1000, p, rng);
    EXPECT_EQ(std::accumulate(v.begin(), v.end(), std::int64_t{0}), 1000);
    EXPECT_EQ(v[1], 0);
  }
  // unnormalized weights behave like their normalization
  auto w = multinomial(10, std::vector<double>{0.0, 7.0}, rng);
  EXPECT_EQ(w[1], 10);
}

TEST(Counts, RoundTripAndRationality) {
  auto H = Histogram::from({0.25, 0.75});
  auto c = to_counts(H, 8);
  EXPECT_EQ(c, (std::vector<std::int64_t>{2, 6}));
  EXPECT_EQ(from_counts(c).vec(), H.vec());
  EXPECT_THROW(to_counts(Histogram::from({1.0 / 3.0, 2.0 / 3.0}), 10), DomainError);
}

TEST(Mutations, NoMutationScaleMeansNoMutants) {
  auto P = ModelParams::reference();
  P.m = 0.0;
  RngStream rng(1);
  auto d = sample_mutations(Histogram::from({0.99, 0.005, 0.005}), P, rng);
  EXPECT_EQ(d.R.sup_norm(), 0.0);
  EXPECT_EQ(d.attempts, 1);
}

TEST(Mutations, AbsentGenotypeDoesNotMutate) {
  auto P = ModelParams::reference();
  RngStream rng(2);
  auto H = Histogram::from({0.0, 0.5, 0.5});
  for (int i = 0; i < 1000; ++i) {
    auto d = sample_mutations(H, P, rng);
    EXPECT_EQ(d.R(0, 1), 0.0);
    EXPECT_EQ(d.R(0, 2), 0.0);
  }
}

TEST(Mutations, MeansMatchRates) {
  auto P = ModelParams::reference();
  RngStream rng(4);
  auto H = Histogram::from({0.99, 0.005, 0.005});
  const int n = 20000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += sample_mutations(H, P, rng).R(0, 2);
  const double mu = P.m * 0.5 * P.F[0] * 0.99 * static_cast<double>(P.N);
  EXPECT_NEAR(s / n, mu, 4.0 * std::sqrt(mu / n));
}

TEST(Mutations, RejectionEssentiallyNeverHappensAtReferenceScale) {
  auto P = ModelParams::reference();
  RngStream rng(6);
  auto counts = to_counts(Histogram::from({0.99, 0.005, 0.005}), P.N);
  int rejected = 0;
  for (int i = 0; i < 10000; ++i) rejected += sample_mutations(counts, P, rng).attempts > 1;
  EXPECT_EQ(rejected, 0);
}

TEST(PostMutation, HandEvaluation) {
  auto P = two_genotypes(10);
  SquareMatrix R(2);
  R(0, 1) = 1.0;
  auto J = post_mutation_counts(Histogram::from({0.5, 0.5}), R, P);
  EXPECT_NEAR(J[0], 9.0 / 30.0, 1e-15);
  EXPECT_NEAR(J[1], 21.0 / 30.0, 1e-15);
}

TEST(PostMutation, NoMutationGivesCeiledGrowth) {
  auto P = ModelParams::reference();
  P.N = 1000;
  auto H = Histogram::from({0.5, 0.3, 0.2});
  auto cells = post_mutation_cell_counts(to_counts(H, P.N), SquareMatrix(3), P);
  EXPECT_EQ(cells[0], 100000);
  EXPECT_EQ(cells[1], static_cast<std::int64_t>(std::ceil(300.0 * P.F[1])));
  EXPECT_EQ(cells[2], static_cast<std::int64_t>(std::ceil(200.0 * P.F[2])));
}

TEST(PostMutation, StaysCloseToContinuousMap) {
  // ||J - Psi(H, R/N)|| <= 13 F_g / (N F_1) for N > 20
  auto P = ModelParams::reference();
  RngStream rng(8);
  for (std::uint64_t N : {25u, 100u, 1000u, 100000u}) {
    P.N = N;
    const double bound = 13.0 * P.F[2] / (static_cast<double>(N) * P.F[0]);
    for (int i = 0; i < 200; ++i) {
      std::vector<double> w{rng.uniform_pos(), rng.uniform_pos(), rng.uniform_pos()};
      auto c = multinomial(static_cast<std::int64_t>(N), w, rng);
      auto H = from_counts(c);
      // mutant counts: a random share of each colony, kept inside K_N(H)
      SquareMatrix R(3);
      for (std::size_t j = 0; j < 2; ++j) {
        const double grown = P.F[j] * static_cast<double>(c[j]);
        const auto total = static_cast<std::int64_t>(std::floor(0.9 * grown * rng.uniform()));
        if (j == 0) {
          const auto a = static_cast<std::int64_t>(std::floor(rng.uniform() * static_cast<double>(total)));
          R(0, 1) = static_cast<double>(a);
          R(0, 2) = static_cast<double>(total - a);
        } else {
          R(1, 2) = static_cast<double>(total);
        }
      }
      auto J = post_mutation_counts(H, R, P);
      SquareMatrix r(3);
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 3; ++k) r(j, k) = R(j, k) / static_cast<double>(N);
      auto psi = post_mutation_map(H, r, P);
      EXPECT_LE(sup_distance(J, psi), bound);
    }
  }
}

TEST(Selection, PureInputStaysPure) {
  RngStream rng(9);
  auto e = Histogram::vertex(3, 1);
  EXPECT_EQ(sample_selection(e, 1000, rng).vec(), e.vec());
}

TEST(Selection, TwoCellPointMass) {
  RngStream rng(10);
  auto J = Histogram::from({0.5, 0.5});
  const int n = 100000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += sample_selection(J, 2, rng)[0] == 1.0;
  EXPECT_NEAR(static_cast<double>(hits) / n, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / n));
}

TEST(Selection, EmpiricalMeanMatches) {
  RngStream rng(11);
  auto J = Histogram::from({0.2, 0.3, 0.5});
  const int n = 10000;
  const std::uint64_t N = 50;
  std::vector<double> s(3, 0.0);
  for (int i = 0; i < n; ++i) {
    auto h = sample_selection(J, N, rng);
    for (std::size_t j = 0; j < 3; ++j) s[j] += h[j];
  }
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_NEAR(s[j] / n, J[j], 3.0 * std::sqrt(J[j] * (1 - J[j]) / (static_cast<double>(N) * n)));
}

TEST(Chain, OneDayIsTheComposedStep) {
  auto P = ModelParams::reference();
  P.N = 10000;
  auto H = Histogram::from({0.99, 0.005, 0.005});
  RngStream a(12), b(12);
  auto t = run_chain(H, 1, P, a);
  ASSERT_EQ(t.size(), 2u);
  auto d = sample_mutations(H, P, b);
  auto J = post_mutation_counts(H, d.R, P);
  auto next = sample_selection(J, P.N, b);
  EXPECT_EQ(t.points[1].vec(), next.vec());
  EXPECT_EQ(run_chain(H, 0, P, a).size(), 1u);
  EXPECT_THROW(run_chain(H, -1, P, a), DomainError);
}

TEST(Chain, WithoutMutationTracksGrowthIterates) {
  auto P = ModelParams::reference();
  P.m = 0.0;
  P.N = 1'000'000;
  RngStream rng(13);
  auto H = Histogram::from({0.98, 0.01, 0.01});
  auto t = run_chain(H, 10, P, rng);
  auto phi = H;
  for (std::size_t d = 1; d < t.size(); ++d) {
    phi = growth_map(phi, P);
    EXPECT_LT(sup_distance(t.points[d], phi), 10.0 / std::sqrt(static_cast<double>(P.N)));
  }
}

TEST(Chain, SecondGenotypeStaysRareInTheTypicalRegime) {
  auto P = ModelParams::reference();
  auto H = Histogram::from({0.99, 0.005, 0.005});
  for (std::uint64_t run = 0; run < 5; ++run) {
    RngStream rng(42, run);
    auto t = run_chain(H, 50, P, rng);
    for (const auto& h : t.points) EXPECT_LT(h[1], 0.1);
  }
}

TEST(Chain, SameSeedSameTrajectory) {
  auto P = ModelParams::reference();
  P.N = 5000;
  auto H = Histogram::from({0.99, 0.005, 0.005});
  RngStream a(77, 3), b(77, 3);
  auto x = run_chain(H, 20, P, a), y = run_chain(H, 20, P, b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x.points[i].vec(), y.points[i].vec());
}

TEST(TransitionEstimate, TypicalEventHasNearZeroRate) {
  auto P = two_genotypes(200);
  auto H = Histogram::from({0.5, 0.5});
  auto z = mean_step(H, P);
  auto e = estimate_transition_logprob(H, z, 0.2, P, 2000, 1);
  ASSERT_TRUE(e.logprob.has_value());
  EXPECT_NEAR(*e.logprob, 0.0, 1e-3);
}

TEST(TransitionEstimate, ZeroRadiusOffLatticeHasNoHits) {
  auto P = two_genotypes(200);
  auto e = estimate_transition_logprob(Histogram::from({0.5, 0.5}), Histogram::from({1.0 / 3.0, 2.0 / 3.0}), 0.0, P,
                                       5000, 1);
  EXPECT_EQ(e.hits, 0u);
  EXPECT_FALSE(e.logprob.has_value());
}

TEST(TransitionEstimate, IndependentOfThreadCount) {
  auto P = two_genotypes(100);
  auto H = Histogram::from({0.5, 0.5});
  auto G = Histogram::from({0.4, 0.6});
  const std::uint64_t trials = 3 * kTrialsPerStream + 123;
  auto a = estimate_transition_logprob(H, G, (2.0 / 3.0) / 100.0, P, trials, 9, 1);
  auto b = estimate_transition_logprob(H, G, (2.0 / 3.0) / 100.0, P, trials, 9, 3);
  EXPECT_EQ(a.hits, b.hits);
  EXPECT_EQ(a.trials, trials);
  EXPECT_GT(a.hits, 0u);
}
