#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "data_model.hpp"
#include "glm.hpp"
#include "learner.hpp"
#include "prediction.hpp"
#include "synthgen.hpp"

namespace cfglmm {

inline double rmse(std::span<const double> truth, std::span<const double> estimate) {
    if (truth.size() != estimate.size())
        throw DataError(DataError::Kind::length_mismatch, "rmse: length mismatch");
    if (truth.empty()) throw DataError(DataError::Kind::empty, "rmse: empty input");
    double ss = 0.0;
    for (Index i = 0; i < truth.size(); ++i) {
        const double r = truth[i] - estimate[i];
        ss += r * r;
    }
    return std::sqrt(ss / static_cast<double>(truth.size()));
}

inline double rmse(const Eigen::VectorXd& truth, const Eigen::VectorXd& estimate) {
    return rmse(std::span<const double>(truth.data(), static_cast<Index>(truth.size())),
                std::span<const double>(estimate.data(), static_cast<Index>(estimate.size())));
}

/// McFadden-style 1 - dev_model / dev_null.
inline double pseudo_r2(double dev_model, double dev_null) {
    if (!(dev_null > 0.0)) throw DataError(DataError::Kind::bad_argument, "pseudo_r2: null deviance must be positive");
    return 1.0 - dev_model / dev_null;
}

/// Deviance of the intercept-only GLM (offset kept) on all rows.
inline double null_deviance(const Dataset& d, const FitConfig& cfg = {}) {
    Dataset null = d;
    null.covariates.resize(static_cast<Eigen::Index>(d.size()), 0);
    null.covariate_names.clear();
    return fit_glm(null, cfg).deviance;
}

struct Correlation {
    double value = 0.0;
    bool degenerate = false;  // one side had zero variance; value is 0
};

inline Correlation pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError(DataError::Kind::length_mismatch, "correlation: length mismatch");
    if (a.empty()) throw DataError(DataError::Kind::empty, "correlation: empty input");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) return {0.0, true};
    return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

/// Pearson correlation of each decomposition band with the matching true component.
inline std::vector<Correlation> scale_correlations(const CfModel& m, std::span<const Location> sites,
                                                   const std::vector<Eigen::VectorXd>& truth_components,
                                                   std::span<const double> band_edges) {
    if (truth_components.size() != band_edges.size() + 1)
        throw DataError(DataError::Kind::length_mismatch, "band count differs from truth component count");
    for (const auto& t : truth_components)
        if (static_cast<Index>(t.size()) != sites.size())
            throw DataError(DataError::Kind::length_mismatch, "truth component length differs from site count");
    const auto dec = decompose(m, sites, band_edges);
    std::vector<Correlation> out;
    std::vector<double> est(sites.size());
    for (Index b = 0; b < truth_components.size(); ++b) {
        for (Index i = 0; i < sites.size(); ++i) est[i] = dec.band_values[i][b];
        const auto& t = truth_components[b];
        out.push_back(pearson(est, std::span<const double>(t.data(), static_cast<Index>(t.size()))));
    }
    return out;
}

struct Quantiles {
    double min = 0.0, q25 = 0.0, median = 0.0, q75 = 0.0, max = 0.0;
};

/// Linearly interpolated quantiles; NaN entries are dropped, all-NaN gives NaN.
inline Quantiles quantiles(std::vector<double> v) {
    std::erase_if(v, [](double x) { return std::isnan(x); });
    if (v.empty()) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return {nan, nan, nan, nan, nan};
    }
    std::sort(v.begin(), v.end());
    auto at = [&](double p) {
        const double pos = p * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<Index>(std::floor(pos));
        const Index hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    return {v.front(), at(0.25), at(0.5), at(0.75), v.back()};
}

struct MethodScore {
    double rmse_in = std::numeric_limits<double>::quiet_NaN();
    double rmse_out = std::numeric_limits<double>::quiet_NaN();  // NaN without a test set
    Coefficients beta_hat;
};

struct TrialResult {
    Index trial = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MethodScore cf;
    MethodScore glm;
    double fit_seconds = 0.0;
    Index accepted_scales = 0;
    std::optional<std::vector<Correlation>> scale_correlations;
};

struct MetricSummary {
    std::string metric;
    Quantiles q;
};

struct ExperimentReport {
    SimScenario scenario;
    std::uint64_t seed = 0;
    std::vector<TrialResult> trials;
    std::vector<MetricSummary> summary;
};

struct ExperimentOptions {
    FitConfig fit;
    std::vector<double> band_edges{1.9, 0.5};  // used for multiscale scenarios
};

inline std::vector<std::string> band_names(Index count) {
    if (count == 3) return {"large", "moderate", "small"};
    std::vector<std::string> out;
    for (Index b = 0; b < count; ++b) out.push_back("band_" + std::to_string(b + 1));
    return out;
}

namespace detail {

inline Eigen::VectorXd glm_means(const Dataset& d, const Coefficients& beta) {
    const Family family(d.family);
    const Eigen::VectorXd eta = design_matrix(d.covariates) * beta.beta + d.offset_or_zero();
    return eta.unaryExpr([&](double e) { return family.mean(e); });
}

inline Eigen::VectorXd cf_means(const CfModel& m, const Dataset& d) {
    const auto p = predict(m, d);
    Eigen::VectorXd out(static_cast<Eigen::Index>(p.size()));
    for (Index i = 0; i < p.size(); ++i) out[static_cast<Eigen::Index>(i)] = p[i].mu;
    return out;
}

inline void summarize(ExperimentReport& r) {
    auto add = [&](const std::string& name, auto get) {
        std::vector<double> v;
        for (const auto& t : r.trials)
            if (t.ok) v.push_back(get(t));
        r.summary.push_back({name, quantiles(std::move(v))});
    };
    add("cf_rmse_in", [](const TrialResult& t) { return t.cf.rmse_in; });
    add("cf_rmse_out", [](const TrialResult& t) { return t.cf.rmse_out; });
    add("glm_rmse_in", [](const TrialResult& t) { return t.glm.rmse_in; });
    add("glm_rmse_out", [](const TrialResult& t) { return t.glm.rmse_out; });
    const Index k = r.scenario.beta.size() + 1;
    for (Index j = 0; j < k; ++j) {
        const auto e = static_cast<Eigen::Index>(j);
        add("cf_beta" + std::to_string(j), [e](const TrialResult& t) { return t.cf.beta_hat.beta[e]; });
        add("glm_beta" + std::to_string(j), [e](const TrialResult& t) { return t.glm.beta_hat.beta[e]; });
    }
    add("fit_seconds", [](const TrialResult& t) { return t.fit_seconds; });
    add("accepted_scales", [](const TrialResult& t) { return static_cast<double>(t.accepted_scales); });
    if (r.scenario.multiscale) {
        const auto names = band_names(r.scenario.multiscale->size());
        for (Index b = 0; b < names.size(); ++b)
            add("corr_" + names[b], [b](const TrialResult& t) {
                return t.scale_correlations ? (*t.scale_correlations)[b].value
                                            : std::numeric_limits<double>::quiet_NaN();
            });
    }
}

}  // namespace detail

/// One trial: generate, fit CF-GLMM (holdout split inside) and the baseline GLM on all
/// rows, score both against the latent means.
inline TrialResult run_trial(const SimScenario& sc, Index trial, std::uint64_t seed,
                             const ExperimentOptions& opt = {}) {
    TrialResult t;
    t.trial = trial;
    t.seed = seed;
    try {
        const SimData sim = simulate(sc, seed);
        FitConfig cfg = opt.fit;
        cfg.rng_seed = seed;

        const auto t0 = std::chrono::steady_clock::now();
        const CfModel m = fit_cf(sim.train, cfg);
        const auto t1 = std::chrono::steady_clock::now();
        t.fit_seconds = std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9);
        t.accepted_scales = accepted_scale_count(m);
        t.cf.beta_hat = m.beta;
        t.cf.rmse_in = rmse(sim.train_truth.mu, detail::cf_means(m, sim.train));

        const GlmFit glm = fit_glm(sim.train, cfg);
        t.glm.beta_hat = glm.coef;
        t.glm.rmse_in = rmse(sim.train_truth.mu, detail::glm_means(sim.train, glm.coef));

        if (sim.test.size() > 0) {
            t.cf.rmse_out = rmse(sim.test_truth.mu, detail::cf_means(m, sim.test));
            t.glm.rmse_out = rmse(sim.test_truth.mu, detail::glm_means(sim.test, glm.coef));
        }
        if (sc.multiscale)
            t.scale_correlations =
                scale_correlations(m, sim.train.sites, sim.train_truth.components, opt.band_edges);
        t.ok = true;
    } catch (const std::exception& e) {
        t.ok = false;
        t.error = e.what();
    }
    return t;
}

/// Monte Carlo experiment with per-trial seeds derive_seed(seed, trial).
inline ExperimentReport run_experiment(const SimScenario& sc, Index n_trials, std::uint64_t seed,
                                       const ExperimentOptions& opt = {}) {
    if (n_trials < 1) throw DataError(DataError::Kind::bad_argument, "n_trials must be at least 1");
    ExperimentReport r;
    r.scenario = sc;
    r.seed = seed;
    for (Index k = 0; k < n_trials; ++k) r.trials.push_back(run_trial(sc, k, derive_seed(seed, k), opt));
    detail::summarize(r);
    return r;
}

struct TimingPoint {
    Index n = 0;
    double seconds = 0.0;
    Index accepted_scales = 0;
};

/// Median-of-`repeats` fit time per size; the data for each size is generated once.
inline std::vector<TimingPoint> timing_curve(std::span<const Index> ns, SimScenario sc, std::uint64_t seed,
                                             const FitConfig& base = {}, int repeats = 3) {
    for (Index k = 1; k < ns.size(); ++k)
        if (!(ns[k] > ns[k - 1])) throw DataError(DataError::Kind::bad_argument, "sizes must be ascending");
    if (repeats < 1) throw DataError(DataError::Kind::bad_argument, "repeats must be positive");
    std::vector<TimingPoint> out;
    for (Index n : ns) {
        sc.n_train = n;
        sc.n_test = 0;
        const SimData sim = simulate(sc, derive_seed(seed, n));
        FitConfig cfg = base;
        cfg.rng_seed = seed;
        std::vector<double> times;
        Index layers = 0;
        for (int r = 0; r < repeats; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            const CfModel m = fit_cf(sim.train, cfg);
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9));
            layers = accepted_scale_count(m);
        }
        out.push_back({n, quantiles(times).median, layers});
    }
    return out;
}

/// log(t2/t1) / log(n2/n1).
inline double scaling_exponent(const TimingPoint& a, const TimingPoint& b) {
    return std::log(b.seconds / a.seconds) / std::log(static_cast<double>(b.n) / static_cast<double>(a.n));
}

}  // namespace cfglmm
