#include <cfglmm/eval.hpp>

#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cfglmm;

namespace {

std::vector<double> normals(Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
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

}  // namespace

TEST(Rmse, Examples) {
    const std::vector<double> a{1.0, -2.0, 3.5};
    EXPECT_EQ(rmse(a, a), 0.0);
    EXPECT_NEAR(rmse(std::vector<double>{0, 0}, std::vector<double>{3, 4}), 3.53553, 1e-5);
    EXPECT_THROW(rmse(std::vector<double>{0, 0}, std::vector<double>{1}), DataError);
}

TEST(Rmse, MatchesScalarLoop) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto a = normals(1000, seed), b = normals(1000, seed + 50);
        const double want = oracle::rmse(a, b);
        EXPECT_NEAR(rmse(a, b), want, 1e-12 * want);
    }
}

TEST(PseudoR2, Examples) {
    EXPECT_EQ(pseudo_r2(7.0, 7.0), 0.0);
    EXPECT_EQ(pseudo_r2(0.0, 7.0), 1.0);
    EXPECT_EQ(pseudo_r2(3.5, 7.0), 0.5);
    EXPECT_THROW(pseudo_r2(1.0, 0.0), DataError);
}

TEST(Pearson, MatchesScalarLoopAndFlagsDegenerate) {
    const auto a = normals(500, 1);
    auto b = normals(500, 2);
    for (Index i = 0; i < b.size(); ++i) b[i] += 0.7 * a[i];
    const auto c = pearson(a, b);
    EXPECT_FALSE(c.degenerate);
    EXPECT_NEAR(c.value, oracle::pearson(a, b), 1e-12);
    const auto d = pearson(a, std::vector<double>(500, 3.0));
    EXPECT_TRUE(d.degenerate);
    EXPECT_EQ(d.value, 0.0);
}

TEST(ScaleCorrelations, PerfectAndReversed) {
    CfModel m;
    m.family = Family(FamilyTag::poisson);
    m.beta.beta = Eigen::Vector3d::Zero();
    m.layers = {random_layer(3.0, 4, 1), random_layer(0.8, 8, 2), random_layer(0.3, 16, 3)};
    const auto sites = uniform_sites(300, 4);
    std::vector<Eigen::VectorXd> truth(3, Eigen::VectorXd(300));
    for (Index b = 0; b < 3; ++b) {
        const auto ev = evaluate_layer(m.layers[b], sites);
        for (Index i = 0; i < 300; ++i) truth[b][static_cast<Eigen::Index>(i)] = ev[i].mean;
    }
    const std::vector<double> edges{1.9, 0.5};
    for (const auto& c : scale_correlations(m, sites, truth, edges)) EXPECT_NEAR(c.value, 1.0, 1e-12);
    for (auto& t : truth) t = -t;
    for (const auto& c : scale_correlations(m, sites, truth, edges)) EXPECT_NEAR(c.value, -1.0, 1e-12);
    truth.pop_back();
    EXPECT_THROW(scale_correlations(m, sites, truth, edges), DataError);
}

TEST(ScaleCorrelations, EmptyBandIsFlagged) {
    CfModel m;
    m.family = Family(FamilyTag::poisson);
    m.beta.beta = Eigen::Vector3d::Zero();
    m.layers = {random_layer(0.8, 8, 2)};
    const auto sites = uniform_sites(100, 5);
    const std::vector<Eigen::VectorXd> truth(3, Eigen::VectorXd::Random(100));
    const auto c = scale_correlations(m, sites, truth, std::vector<double>{1.9, 0.5});
    EXPECT_TRUE(c[0].degenerate);
    EXPECT_FALSE(c[1].degenerate);
    EXPECT_TRUE(c[2].degenerate);
}

TEST(Quantiles, Interpolates) {
    const auto q = quantiles({4, 1, 3, 2, std::nan("")});
    EXPECT_EQ(q.min, 1);
    EXPECT_EQ(q.max, 4);
    EXPECT_DOUBLE_EQ(q.median, 2.5);
    EXPECT_DOUBLE_EQ(q.q25, 1.75);
    EXPECT_TRUE(std::isnan(quantiles({}).median));
}

TEST(BandNames, ThreeBandsNamed) {
    EXPECT_EQ(band_names(3), (std::vector<std::string>{"large", "moderate", "small"}));
    EXPECT_EQ(band_names(2), (std::vector<std::string>{"band_1", "band_2"}));
}

TEST(RunExperiment, ReproducibleAndComplete) {
    const auto sc = SimScenario::poisson(0.5, 400, 200);
    const auto a = run_experiment(sc, 2, 17);
    const auto b = run_experiment(sc, 2, 17);
    ASSERT_EQ(a.trials.size(), 2u);
    for (Index k = 0; k < 2; ++k) {
        const auto& t = a.trials[k];
        EXPECT_TRUE(t.ok) << t.error;
        EXPECT_EQ(t.seed, derive_seed(17, k));
        EXPECT_TRUE(std::isfinite(t.glm.rmse_in));
        EXPECT_TRUE(std::isfinite(t.glm.rmse_out));
        EXPECT_GE(t.cf.rmse_out, 0.0);
        EXPECT_GT(t.fit_seconds, 0.0);
        EXPECT_EQ(t.cf.rmse_in, b.trials[k].cf.rmse_in);
        EXPECT_EQ(t.cf.rmse_out, b.trials[k].cf.rmse_out);
        EXPECT_EQ(t.cf.beta_hat.beta, b.trials[k].cf.beta_hat.beta);
        EXPECT_EQ(t.glm.beta_hat.beta, b.trials[k].glm.beta_hat.beta);
    }
    ASSERT_EQ(a.summary.size(), b.summary.size());
    for (Index s = 0; s < a.summary.size(); ++s) {
        EXPECT_EQ(a.summary[s].metric, b.summary[s].metric);
        if (a.summary[s].metric != "fit_seconds") {
            EXPECT_EQ(a.summary[s].q.median, b.summary[s].q.median);
        }
    }
    EXPECT_THROW(run_experiment(sc, 0, 1), DataError);
}

TEST(RunExperiment, MultiscaleRecordsCorrelations) {
    const auto r = run_experiment(SimScenario::multiscale_poisson(0.5, 300), 1, 3);
    ASSERT_TRUE(r.trials[0].ok) << r.trials[0].error;
    ASSERT_TRUE(r.trials[0].scale_correlations);
    EXPECT_EQ(r.trials[0].scale_correlations->size(), 3u);
    EXPECT_TRUE(std::isnan(r.trials[0].cf.rmse_out));
    Index corr = 0;
    for (const auto& s : r.summary) corr += s.metric.starts_with("corr_") ? 1 : 0;
    EXPECT_EQ(corr, 3u);
}

TEST(TimingCurve, PositiveAndGrowing) {
    const std::vector<Index> ns{300, 1500};
    const auto pts = timing_curve(ns, SimScenario::poisson(0.5, 0, 0), 5, FitConfig{}, 1);
    ASSERT_EQ(pts.size(), 2u);
    EXPECT_GT(pts[0].seconds, 0.0);
    EXPECT_GT(pts[1].seconds, pts[0].seconds);
    EXPECT_TRUE(std::isfinite(scaling_exponent(pts[0], pts[1])));
    const std::vector<Index> bad{500, 200};
    EXPECT_THROW(timing_curve(bad, SimScenario::poisson(0.5, 0, 0), 5), DataError);
}

TEST(PseudoR2, CfAtLeastNestedGlmInSample) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto sim = gen_poisson(SimScenario::poisson(0.5, 800, 0), seed);
        FitConfig cfg;
        cfg.rng_seed = seed;
        const auto m = fit_cf(sim.train, cfg);
        const auto train = subset(sim.train, m.split.train_idx);
        const Family f(FamilyTag::poisson);
        const double dev_null = null_deviance(train);
        const double dev_glm = deviance(f, train.response, detail::glm_means(train, m.glm_beta));
        const double dev_cf = deviance(f, train.response, detail::cf_means(m, train));
        EXPECT_GE(pseudo_r2(dev_cf, dev_null), pseudo_r2(dev_glm, dev_null));
        EXPECT_GT(pseudo_r2(dev_glm, dev_null), 0.0);
    }
}

TEST(NullDeviance, InterceptOnly) {
    Dataset d;
    d.family = FamilyTag::gaussian;
    d.sites.resize(4);
    d.covariates = Eigen::MatrixXd::Random(4, 2);
    d.response = Eigen::Vector4d(1, 2, 3, 6);
    EXPECT_NEAR(null_deviance(d), 1 + 4 + 0 + 9, 1e-12);
}
