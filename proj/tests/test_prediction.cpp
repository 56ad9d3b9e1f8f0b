#include <cfglmm/prediction.hpp>
#include <cfglmm/synthgen.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cfglmm;

namespace {

std::vector<Location> random_sites(Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Location> s(n);
    for (auto& p : s) p = {u(rng), u(rng)};
    return s;
}

ScaleLayer random_layer(double h, Index c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ScaleLayer l;
    l.bandwidth = h;
    for (Index k = 0; k < c; ++k) {
        const double m = 2 * u(rng) - 1;
        l.experts.push_back({{u(rng), u(rng)}, m, 0.1 + u(rng), m, true});
    }
    return l;
}

CfModel hand_model(std::vector<ScaleLayer> layers) {
    CfModel m;
    m.family = Family(FamilyTag::poisson);
    m.beta.beta = Eigen::Vector3d(0.2, 1.0, -0.5);
    m.layers = std::move(layers);
    return m;
}

const SimData& poisson_sim() {
    static const SimData sim = gen_poisson(SimScenario::poisson(0.5, 1000, 300), 3);
    return sim;
}

const CfModel& poisson_model() {
    static const CfModel m = fit_cf(poisson_sim().train, FitConfig{});
    return m;
}

}  // namespace

TEST(Predict, NoLayersIsPlainGlm) {
    const auto m = hand_model({});
    const auto& test = poisson_sim().test;
    const auto p = predict(m, test);
    const Eigen::VectorXd eta = design_matrix(test.covariates) * m.beta.beta;
    for (Index i = 0; i < p.size(); ++i) {
        EXPECT_EQ(p[i].z_total, 0.0);
        EXPECT_EQ(p[i].var_z, 0.0);
        EXPECT_DOUBLE_EQ(p[i].mu, std::exp(eta[static_cast<Eigen::Index>(i)]));
        EXPECT_EQ(p[i].cov, 0.0);
    }
}

TEST(Predict, GaussianTrainingSitesMatchCachedFit) {
    const auto sim = gen_gaussian(SimScenario::gaussian(0.5, 800, 0), 4);
    const auto m = fit_cf(sim.train, FitConfig{});
    ASSERT_GT(m.layers.size(), 0u);
    const auto p = predict(m, sim.train);
    const Eigen::VectorXd fit = design_matrix(sim.train.covariates) * m.beta.beta + m.train_z;
    for (Index i = 0; i < p.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        EXPECT_EQ(p[i].z_total, m.train_z[r]);
        EXPECT_EQ(p[i].var_z, m.train_var[r]);
        EXPECT_NEAR(p[i].mu, fit[r], 1e-12);
    }
}

TEST(Predict, VarianceIsSumOfLayerVariances) {
    const auto& m = poisson_model();
    const auto sites = random_sites(200, 5);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(200, 2);
    const auto p = predict(m, sites, x);
    for (Index i = 0; i < sites.size(); ++i) {
        double v = 0, z = 0;
        for (const auto& l : m.layers) {
            const auto e = evaluate_layer(l, sites[i]);
            v += e.variance;
            z += e.mean;
        }
        EXPECT_NEAR(p[i].var_z, v, 1e-12 * v);
        EXPECT_NEAR(p[i].z_total, z, 1e-12);
        EXPECT_DOUBLE_EQ(p[i].mu, std::exp(p[i].mu_lin));
        EXPECT_GE(p[i].var_z, 0.0);
    }
}

TEST(Predict, OffsetAndErrors) {
    const auto& m = poisson_model();
    const auto sites = random_sites(10, 6);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(10, 2);
    const auto a = predict(m, sites, x);
    const auto b = predict(m, sites, x, Eigen::VectorXd::Constant(10, 0.25));
    for (Index i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(b[i].mu_lin, a[i].mu_lin + 0.25);
    EXPECT_THROW(predict(m, sites, Eigen::MatrixXd::Zero(10, 3)), DataError);
    EXPECT_THROW(predict(m, sites, Eigen::MatrixXd::Zero(9, 2)), DataError);
    auto bad = sites;
    bad[3].x = INFINITY;
    EXPECT_THROW(predict(m, bad, x), DataError);
}

TEST(Predict, Deterministic) {
    const auto& m = poisson_model();
    const auto p = predict(m, poisson_sim().test);
    const auto q = predict(m, poisson_sim().test);
    for (Index i = 0; i < p.size(); ++i) {
        EXPECT_EQ(p[i].mu, q[i].mu);
        EXPECT_EQ(p[i].var_z, q[i].var_z);
    }
}

TEST(CoefficientOfVariation, ZeroVariance) {
    for (FamilyTag tag : {FamilyTag::gaussian, FamilyTag::poisson, FamilyTag::bernoulli}) {
        Prediction p;
        p.mu = 0.4;
        EXPECT_EQ(coefficient_of_variation(p, Family(tag)), 0.0);
    }
}

TEST(CoefficientOfVariation, LogLinkUnitVariance) {
    Prediction p;
    p.var_z = 1.0;
    for (double lin : {-3.0, 0.0, 2.5}) {
        p.mu_lin = lin;
        p.mu = std::exp(lin);
        EXPECT_NEAR(coefficient_of_variation(p, Family(FamilyTag::poisson)), 1.31083, 1e-5);
        EXPECT_DOUBLE_EQ(coefficient_of_variation(p, Family(FamilyTag::poisson)), std::sqrt(std::exp(1.0) - 1));
    }
}

TEST(CoefficientOfVariation, IdentityAndLogitForms) {
    Prediction p;
    p.var_z = 0.25;
    p.mu = -2.0;
    EXPECT_DOUBLE_EQ(coefficient_of_variation(p, Family(FamilyTag::gaussian)), 0.25);
    p.mu = 0.2;
    EXPECT_DOUBLE_EQ(coefficient_of_variation(p, Family(FamilyTag::bernoulli)), 0.5 * 0.8);
    p.mu = 0.0;
    try {
        coefficient_of_variation(p, Family(FamilyTag::gaussian));
        FAIL();
    } catch (const DataError& e) {
        EXPECT_STREQ(e.what(), "CoV undefined at zero mean");
    }
}

TEST(CoefficientOfVariation, IncreasingInVariance) {
    for (FamilyTag tag : {FamilyTag::gaussian, FamilyTag::poisson, FamilyTag::bernoulli}) {
        Prediction p;
        p.mu = 0.3;
        double prev = -1;
        for (double v = 0.0; v < 4.0; v += 0.1) {
            p.var_z = v;
            const double c = coefficient_of_variation(p, Family(tag));
            EXPECT_GT(c, prev);
            prev = c;
        }
    }
}

TEST(Decompose, SingleBandIsTotal) {
    const auto& m = poisson_model();
    const auto sites = random_sites(50, 7);
    const auto d = decompose(m, sites, {});
    ASSERT_EQ(d.band_sds.size(), 1u);
    for (Index i = 0; i < sites.size(); ++i) EXPECT_EQ(d.band_values[i][0], d.z_total[i]);
    EXPECT_EQ(d.layers_per_band[0], m.layers.size());
}

TEST(Decompose, ThreeBandsOneLayerEach) {
    const auto m = hand_model({random_layer(3.0, 3, 1), random_layer(0.8, 5, 2), random_layer(0.3, 9, 3)});
    const std::vector<double> edges{1.9, 0.5};
    const auto sites = random_sites(30, 8);
    const auto d = decompose(m, sites, edges);
    EXPECT_EQ(d.layers_per_band, (std::vector<Index>{1, 1, 1}));
    for (Index i = 0; i < sites.size(); ++i)
        for (Index b = 0; b < 3; ++b) EXPECT_EQ(d.band_values[i][b], evaluate_layer(m.layers[b], sites[i]).mean);
}

TEST(Decompose, BandBoundaries) {
    const std::vector<double> edges{1.9, 0.5};
    EXPECT_EQ(band_of(1.9, edges), 0u);
    EXPECT_EQ(band_of(1.8999, edges), 1u);
    EXPECT_EQ(band_of(0.5, edges), 1u);
    EXPECT_EQ(band_of(0.4999, edges), 2u);
    EXPECT_EQ(band_of(100, edges), 0u);
}

TEST(Decompose, BandsSumToTotal) {
    const auto& m = poisson_model();
    const auto sites = random_sites(200, 9);
    const std::vector<double> edges{0.9, 0.3, 0.1};
    const auto d = decompose(m, sites, edges);
    const auto p = predict(m, sites, Eigen::MatrixXd::Zero(200, 2));
    for (Index i = 0; i < sites.size(); ++i) {
        double s = 0;
        for (double v : d.band_values[i]) s += v;
        EXPECT_NEAR(s, d.z_total[i], 1e-12);
        EXPECT_NEAR(d.z_total[i], p[i].z_total, 1e-12);
    }
}

TEST(Decompose, RejectsBadEdges) {
    const auto m = hand_model({});
    const auto sites = random_sites(3, 1);
    EXPECT_THROW(decompose(m, sites, std::vector<double>{0.5, 1.9}), DataError);
    EXPECT_THROW(decompose(m, sites, std::vector<double>{1.0, 1.0}), DataError);
    EXPECT_THROW(decompose(m, sites, std::vector<double>{-1.0}), DataError);
}

TEST(Predict, GaussianIntervalsCoverLatentMean) {
    const auto sim = gen_gaussian(SimScenario::gaussian(0.5, 2000, 2000), 12);
    const auto m = fit_cf(sim.train, FitConfig{});
    const auto p = predict(m, sim.test);
    Index covered = 0;
    for (Index i = 0; i < p.size(); ++i) {
        const double half = 1.96 * std::sqrt(p[i].var_z);
        covered += std::abs(sim.test_truth.mu[static_cast<Eigen::Index>(i)] - p[i].mu) <= half ? 1 : 0;
    }
    const double rate = static_cast<double>(covered) / static_cast<double>(p.size());
    RecordProperty("coverage", std::to_string(rate));
    EXPECT_GE(rate, 0.90);
    EXPECT_LE(rate, 0.99);
}
