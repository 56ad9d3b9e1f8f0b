#include <cfglmm/synthgen.hpp>

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace cfglmm;

namespace {

double variance(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size());
}

std::vector<double> column(const Eigen::MatrixXd& x, Eigen::Index k) { return {x.col(k).begin(), x.col(k).end()}; }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const Index n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST(SmoothedField, ZeroNoiseIsZero) {
    const auto s = uniform_sites(100, 1);
    const auto f = smoothed_field(s, {BandwidthRule::knn(10), 0.0, 3});
    EXPECT_TRUE(std::all_of(f.begin(), f.end(), [](double v) { return v == 0.0; }));
}

TEST(SmoothedField, SingleSiteKeepsItsDraw) {
    const auto s = uniform_sites(1, 2);
    const FieldSpec spec{BandwidthRule::fixed(0.3), 1.5, 9};
    EXPECT_EQ(smoothed_field(s, spec), normal_draws(1, 1.5, 9));
}

TEST(SmoothedField, SmoothingShrinksVariance) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto s = uniform_sites(500, seed);
        const FieldSpec spec{BandwidthRule::knn(10), 1.0, seed + 100};
        EXPECT_LT(variance(smoothed_field(s, spec)), variance(normal_draws(500, 1.0, seed + 100)));
    }
}

TEST(SmoothedField, RowNormalisedAverage) {
    const auto s = uniform_sites(60, 3);
    const FieldSpec spec{BandwidthRule::fixed(0.2), 1.0, 4};
    const auto u = normal_draws(60, 1.0, 4);
    const auto f = smoothed_field(s, spec);
    for (Index t = 0; t < s.size(); ++t) {
        double num = 0, den = 0;
        for (Index j = 0; j < s.size(); ++j) {
            const double w = std::exp(-std::hypot(s[t].x - s[j].x, s[t].y - s[j].y) / 0.2);
            num += w * u[j];
            den += w;
        }
        EXPECT_NEAR(f[t], num / den, 1e-12);
    }
}

TEST(KnnBandwidth, MatchesBruteForce) {
    const auto s = uniform_sites(40, 5);
    double total = 0;
    for (Index i = 0; i < s.size(); ++i) {
        std::vector<double> d;
        for (Index j = 0; j < s.size(); ++j)
            if (j != i) d.push_back(std::hypot(s[i].x - s[j].x, s[i].y - s[j].y));
        std::sort(d.begin(), d.end());
        double m = 0;
        for (int k = 0; k < 10; ++k) m += d[k];
        total += m / 10;
    }
    EXPECT_NEAR(knn_bandwidth(s, 10), total / 40, 1e-14);
    EXPECT_EQ(knn_bandwidth(uniform_sites(1, 1), 10), 0.0);
}

TEST(KnnBandwidth, ShrinksWithMoreSites) {
    std::vector<double> small, large;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        small.push_back(knn_bandwidth(uniform_sites(500, seed), 10));
        large.push_back(knn_bandwidth(uniform_sites(4000, seed + 1000), 10));
    }
    EXPECT_LT(median(large), median(small));
}

TEST(GenCovariates, ShapeMomentsAndIndependence) {
    const Index n = 1500;
    double mean_sum[2] = {0, 0};
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto s = uniform_sites(n, seed);
        const auto x = gen_covariates(s, seed);
        ASSERT_EQ(x.rows(), static_cast<Eigen::Index>(n));
        ASSERT_EQ(x.cols(), 2);
        for (int k = 0; k < 2; ++k) {
            EXPECT_LT(variance(column(x, k)), 0.5);
            mean_sum[k] += x.col(k).mean();
        }
        EXPECT_LT(std::abs(oracle::pearson(column(x, 0), column(x, 1))), 0.15);
    }
    for (double m : mean_sum) EXPECT_LT(std::abs(m / 10), 4 / std::sqrt(static_cast<double>(n)));
}

TEST(GenPoisson, DegenerateGeneratorIsPoissonOne) {
    auto sc = SimScenario::poisson(0.0, 5000, 0);
    sc.beta = {0.0, 0.0};
    sc.field_sd = 0.0;
    const auto sim = gen_poisson(sc, 6);
    EXPECT_NEAR(sim.train.response.mean(), 1.0, 4 / std::sqrt(5000.0));
    EXPECT_TRUE((sim.train_truth.mu.array() == 1.0).all());
}

TEST(GenBinomial, DegenerateGeneratorIsFairCoin) {
    auto sc = SimScenario::binomial(0.0, 5000, 0);
    sc.beta = {0.0, 0.0};
    sc.field_sd = 0.0;
    const auto sim = gen_binomial(sc, 7);
    EXPECT_NEAR(sim.train.response.mean(), 0.5, 4 * 0.5 / std::sqrt(5000.0));
}

TEST(Generators, RejectWrongFamily) {
    EXPECT_THROW(gen_poisson(SimScenario::binomial(0.5, 50), 1), DataError);
    EXPECT_THROW(gen_binomial(SimScenario::poisson(0.5, 50), 1), DataError);
    EXPECT_THROW(gen_gaussian(SimScenario::poisson(0.5, 50), 1), DataError);
}

TEST(Generators, DeterministicWithSeparateTestStream) {
    const auto sc = SimScenario::poisson(0.5, 300, 200);
    const auto a = gen_poisson(sc, 8);
    const auto b = gen_poisson(sc, 8);
    EXPECT_EQ(a.train.response, b.train.response);
    EXPECT_EQ(a.test.response, b.test.response);
    EXPECT_EQ(a.train.sites, b.train.sites);
    EXPECT_EQ(a.test.covariates, b.test.covariates);
    for (const auto& p : a.test.sites) EXPECT_EQ(std::count(a.train.sites.begin(), a.train.sites.end(), p), 0);
    const auto c = gen_poisson(sc, 9);
    EXPECT_NE(a.train.response, c.train.response);
    // Asking for more test rows must not disturb the training rows.
    auto bigger = sc;
    bigger.n_test = 500;
    EXPECT_EQ(gen_poisson(bigger, 8).train.response, a.train.response);
}

TEST(Generators, TruthIsConsistent) {
    const auto sim = gen_poisson(SimScenario::poisson(-1.5, 400, 100), 10);
    const Eigen::MatrixXd x = sim.train.covariates;
    for (Eigen::Index i = 0; i < 400; ++i) {
        const double eta = -1.5 + 2.0 * x(i, 0) - 0.5 * x(i, 1) + sim.train_truth.z[i];
        EXPECT_NEAR(sim.train_truth.eta[i], eta, 1e-12);
        EXPECT_NEAR(sim.train_truth.mu[i], std::exp(eta), 1e-12 * std::exp(eta));
    }
    EXPECT_NO_THROW(validate_dataset(sim.train));
    EXPECT_NO_THROW(validate_dataset(sim.test));
}

TEST(Generators, MultiscaleFieldIsSumOfComponents) {
    const auto sim = gen_poisson(SimScenario::multiscale_poisson(0.5, 500, 100), 11);
    ASSERT_EQ(sim.train_truth.components.size(), 3u);
    ASSERT_EQ(sim.test_truth.components.size(), 3u);
    for (const auto* t : {&sim.train_truth, &sim.test_truth})
        for (Eigen::Index i = 0; i < t->z.size(); ++i)
            EXPECT_EQ(t->z[i], t->components[0][i] + t->components[1][i] + t->components[2][i]);
    // Components are ordered coarse to fine, so their spread grows.
    auto sd = [](const Eigen::VectorXd& v) { return std::sqrt((v.array() - v.mean()).square().mean()); };
    EXPECT_LT(sd(sim.train_truth.components[0]), sd(sim.train_truth.components[2]));
}

TEST(Generators, BinomialResponsesAreBinary) {
    const auto sim = gen_binomial(SimScenario::binomial(-1.5, 800, 0), 12);
    EXPECT_TRUE((sim.train.response.array() == 0.0 || sim.train.response.array() == 1.0).all());
    EXPECT_EQ(sim.train.family, FamilyTag::bernoulli);
}
