#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "data_model.hpp"
#include "geometry.hpp"

namespace cfglmm {

struct BandwidthRule {
    enum class Kind { knn, fixed };
    Kind kind = Kind::knn;
    int k = 10;
    double h = 1.0;

    static BandwidthRule knn(int k = 10) { return {Kind::knn, k, 0.0}; }
    static BandwidthRule fixed(double h) { return {Kind::fixed, 0, h}; }
};

struct FieldSpec {
    BandwidthRule rule = BandwidthRule::knn(10);
    double noise_sd = 1.0;
    std::uint64_t seed = 1;
};

/// Mean distance to the k nearest neighbours, averaged over all sites (exact scan).
inline double knn_bandwidth(std::span<const Location> sites, int k) {
    const Index n = sites.size();
    if (n < 2 || k < 1) return 0.0;
    const auto kk = std::min<Index>(static_cast<Index>(k), n - 1);
    std::vector<double> d(n);
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) d[j] = detail::sqdist(sites[i], sites[j]);
        d[i] = std::numeric_limits<double>::infinity();
        std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk - 1), d.end());
        std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(kk));
        double s = 0.0;
        for (Index j = 0; j < kk; ++j) s += std::sqrt(d[j]);
        total += s / static_cast<double>(kk);
    }
    return total / static_cast<double>(n);
}

/// Row-normalized exponential-kernel smoothing of several noise vectors at once:
/// out[f][t] = sum_j w(d_tj) u_f[j] / sum_j w(d_tj).
inline std::vector<std::vector<double>> kernel_smooth(std::span<const Location> sources,
                                                      const std::vector<std::vector<double>>& noise,
                                                      std::span<const Location> targets, double h) {
    const Index nf = noise.size();
    std::vector<std::vector<double>> out(nf, std::vector<double>(targets.size(), 0.0));
    std::vector<double> acc(nf);
    for (Index t = 0; t < targets.size(); ++t) {
        std::fill(acc.begin(), acc.end(), 0.0);
        double wsum = 0.0;
        for (Index j = 0; j < sources.size(); ++j) {
            const double w = std::exp(-distance(targets[t], sources[j]) / h);
            wsum += w;
            for (Index f = 0; f < nf; ++f) acc[f] += w * noise[f][j];
        }
        for (Index f = 0; f < nf; ++f) out[f][t] = wsum > 0.0 ? acc[f] / wsum : 0.0;
    }
    return out;
}

inline std::vector<double> normal_draws(Index n, double sd, std::uint64_t seed) {
    std::vector<double> u(n, 0.0);
    if (sd == 0.0) return u;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> norm(0.0, sd);
    for (auto& v : u) v = norm(rng);
    return u;
}

inline std::vector<Location> uniform_sites(Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Location> s(n);
    for (auto& p : s) {
        p.x = unif(rng);
        p.y = unif(rng);
    }
    return s;
}

inline double resolve_bandwidth(const BandwidthRule& rule, std::span<const Location> sites) {
    return rule.kind == BandwidthRule::Kind::fixed ? rule.h : knn_bandwidth(sites, rule.k);
}

/// z(s_i) = sum_j w^scale(d_ij) u_j with u_j ~ N(0, noise_sd^2).
inline std::vector<double> smoothed_field(std::span<const Location> sites, const FieldSpec& spec) {
    const double h = resolve_bandwidth(spec.rule, sites);
    const auto u = normal_draws(sites.size(), spec.noise_sd, spec.seed);
    if (sites.size() == 1 || spec.noise_sd == 0.0) return u;
    return kernel_smooth(sites, {u}, sites, h).front();
}

/// x_k = 0.5 z_k + 0.5 e_k, z_k a unit-noise smoothed field with the knn(10) bandwidth.
inline Eigen::MatrixXd gen_covariates(std::span<const Location> sites, std::uint64_t seed) {
    const Index n = sites.size();
    const double h = knn_bandwidth(sites, 10);
    std::vector<std::vector<double>> noise{normal_draws(n, 1.0, derive_seed(seed, 0)),
                                           normal_draws(n, 1.0, derive_seed(seed, 1))};
    const auto z = n > 1 ? kernel_smooth(sites, noise, sites, h) : noise;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 2);
    for (int k = 0; k < 2; ++k) {
        const auto e = normal_draws(n, 1.0, derive_seed(seed, 2 + static_cast<std::uint64_t>(k)));
        for (Index i = 0; i < n; ++i) x(static_cast<Eigen::Index>(i), k) = 0.5 * z[k][i] + 0.5 * e[i];
    }
    return x;
}

struct SimScenario {
    FamilyTag family = FamilyTag::poisson;
    double beta0 = 0.5;
    std::vector<double> beta{2.0, -0.5};
    Index n_train = 2000;
    Index n_test = 2000;
    std::optional<std::vector<double>> multiscale;  // fixed bandwidths of the components
    double field_sd = 2.0;                           // noise SD of the single-scale field
    double gaussian_noise_sd = 1.0;                  // observation noise, gaussian family only

    static SimScenario poisson(double beta0, Index n, Index n_test = 2000) {
        SimScenario s;
        s.family = FamilyTag::poisson;
        s.beta0 = beta0;
        s.beta = {2.0, -0.5};
        s.n_train = n;
        s.n_test = n_test;
        return s;
    }
    static SimScenario binomial(double beta0, Index n, Index n_test = 2000) {
        SimScenario s = poisson(beta0, n, n_test);
        s.family = FamilyTag::bernoulli;
        s.beta = {1.0, -0.5};
        return s;
    }
    static SimScenario multiscale_poisson(double beta0, Index n, Index n_test = 0) {
        SimScenario s = poisson(beta0, n, n_test);
        s.multiscale = std::vector<double>{3.0, 0.8, 0.3};
        return s;
    }
    static SimScenario gaussian(double beta0, Index n, Index n_test = 2000) {
        SimScenario s = poisson(beta0, n, n_test);
        s.family = FamilyTag::gaussian;
        s.field_sd = 2.0;
        return s;
    }
};

struct SimTruth {
    Eigen::VectorXd eta;
    Eigen::VectorXd mu;
    Eigen::VectorXd z;
    std::vector<Eigen::VectorXd> components;  // multiscale only
};

struct SimData {
    Dataset train;
    Dataset test;
    SimTruth train_truth;
    SimTruth test_truth;
    double field_bandwidth = 0.0;  // knn(10) bandwidth of the training sites
};

namespace detail {

/// Shared body of the generators. The latent fields are defined by noise at the
/// training sites; test sites evaluate the same kernel smoother at new locations.
inline SimData simulate(const SimScenario& sc, std::uint64_t seed) {
    if (sc.n_train < 1) throw DataError(DataError::Kind::bad_argument, "scenario needs at least one site");
    if (sc.beta.size() != 2) throw DataError(DataError::Kind::bad_argument, "scenario needs two slopes");
    const Index nt = sc.n_train, nv = sc.n_test;

    std::vector<Location> all = uniform_sites(nt, derive_seed(seed, 1));
    const auto test_sites = uniform_sites(nv, derive_seed(seed, 2));
    all.insert(all.end(), test_sites.begin(), test_sites.end());
    const std::span<const Location> train_sites(all.data(), nt);

    SimData out;
    const double h = knn_bandwidth(train_sites, 10);
    out.field_bandwidth = h;

    // Covariate fields and (single-scale) latent field share the knn bandwidth.
    std::vector<std::vector<double>> noise{normal_draws(nt, 1.0, derive_seed(seed, 3)),
                                           normal_draws(nt, 1.0, derive_seed(seed, 4))};
    if (!sc.multiscale) noise.push_back(normal_draws(nt, sc.field_sd, derive_seed(seed, 5)));
    const bool degenerate = nt == 1 || !(h > 0.0);
    std::vector<std::vector<double>> fields;
    if (degenerate) {
        for (const auto& u : noise) {
            std::vector<double> f(all.size(), u[0]);
            fields.push_back(f);
        }
    } else {
        fields = kernel_smooth(train_sites, noise, all, h);
    }

    const Index n_all = all.size();
    std::vector<double> z(n_all, 0.0);
    std::vector<std::vector<double>> comps;
    if (sc.multiscale) {
        for (Index m = 0; m < sc.multiscale->size(); ++m) {
            const auto u = normal_draws(nt, 1.0, derive_seed(seed, 20 + m));
            auto c = kernel_smooth(train_sites, {u}, all, (*sc.multiscale)[m]).front();
            for (Index i = 0; i < n_all; ++i) z[i] += c[i];
            comps.push_back(std::move(c));
        }
    } else {
        z = fields[2];
    }

    Eigen::MatrixXd x(static_cast<Eigen::Index>(n_all), 2);
    const auto e_train1 = normal_draws(nt, 1.0, derive_seed(seed, 6));
    const auto e_train2 = normal_draws(nt, 1.0, derive_seed(seed, 7));
    const auto e_test1 = normal_draws(nv, 1.0, derive_seed(seed, 8));
    const auto e_test2 = normal_draws(nv, 1.0, derive_seed(seed, 9));
    for (Index i = 0; i < n_all; ++i) {
        const bool tr = i < nt;
        const double e1 = tr ? e_train1[i] : e_test1[i - nt];
        const double e2 = tr ? e_train2[i] : e_test2[i - nt];
        x(static_cast<Eigen::Index>(i), 0) = 0.5 * fields[0][i] + 0.5 * e1;
        x(static_cast<Eigen::Index>(i), 1) = 0.5 * fields[1][i] + 0.5 * e2;
    }

    auto build = [&](Index begin, Index count, std::uint64_t stream, Dataset& ds, SimTruth& truth) {
        const auto n = static_cast<Eigen::Index>(count);
        ds.family = sc.family;
        ds.covariate_names = {"cov_1", "cov_2"};
        ds.sites.assign(all.begin() + static_cast<std::ptrdiff_t>(begin),
                        all.begin() + static_cast<std::ptrdiff_t>(begin + count));
        ds.covariates = x.middleRows(static_cast<Eigen::Index>(begin), n);
        ds.response.resize(n);
        truth.eta.resize(n);
        truth.mu.resize(n);
        truth.z.resize(n);
        for (const auto& c : comps) {
            Eigen::VectorXd v(n);
            for (Eigen::Index i = 0; i < n; ++i) v[i] = c[begin + static_cast<Index>(i)];
            truth.components.push_back(v);
        }
        std::mt19937_64 rng(derive_seed(seed, stream));
        for (Eigen::Index i = 0; i < n; ++i) {
            const Index g = begin + static_cast<Index>(i);
            const double eta = sc.beta0 + sc.beta[0] * ds.covariates(i, 0) + sc.beta[1] * ds.covariates(i, 1) + z[g];
            truth.eta[i] = eta;
            truth.z[i] = z[g];
            switch (sc.family) {
            case FamilyTag::poisson: {
                const double mu = std::min(std::exp(eta), 1e8);
                truth.mu[i] = mu;
                std::poisson_distribution<long long> pois(mu);
                ds.response[i] = static_cast<double>(pois(rng));
                break;
            }
            case FamilyTag::bernoulli: {
                const double mu = 1.0 / (1.0 + std::exp(-eta));
                truth.mu[i] = mu;
                std::bernoulli_distribution bern(mu);
                ds.response[i] = bern(rng) ? 1.0 : 0.0;
                break;
            }
            case FamilyTag::gaussian: {
                truth.mu[i] = eta;
                std::normal_distribution<double> norm(0.0, sc.gaussian_noise_sd);
                ds.response[i] = eta + (sc.gaussian_noise_sd > 0.0 ? norm(rng) : 0.0);
                break;
            }
            }
        }
    };
    build(0, nt, 10, out.train, out.train_truth);
    build(nt, nv, 11, out.test, out.test_truth);
    return out;
}

}  // namespace detail

inline SimData gen_poisson(const SimScenario& sc, std::uint64_t seed) {
    if (sc.family != FamilyTag::poisson) throw DataError(DataError::Kind::bad_argument, "scenario is not poisson");
    return detail::simulate(sc, seed);
}

inline SimData gen_binomial(const SimScenario& sc, std::uint64_t seed) {
    if (sc.family != FamilyTag::bernoulli)
        throw DataError(DataError::Kind::bad_argument, "scenario is not bernoulli");
    return detail::simulate(sc, seed);
}

/// Gaussian analogue (identity link, additive noise) used for reduction and calibration checks.
inline SimData gen_gaussian(const SimScenario& sc, std::uint64_t seed) {
    if (sc.family != FamilyTag::gaussian) throw DataError(DataError::Kind::bad_argument, "scenario is not gaussian");
    return detail::simulate(sc, seed);
}

inline SimData simulate(const SimScenario& sc, std::uint64_t seed) { return detail::simulate(sc, seed); }

}  // namespace cfglmm
