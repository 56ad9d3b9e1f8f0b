#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>

#include <Eigen/Dense>

#include "data_model.hpp"

namespace cfglmm {

/// Response distribution: link, inverse link, variance function and unit deviance.
class Family {
public:
    static constexpr double poisson_mu_min = 1e-10;
    static constexpr double poisson_mu_max = 1e10;
    static constexpr double bernoulli_mu_eps = 1e-6;

    explicit Family(FamilyTag tag = FamilyTag::gaussian) : tag_(tag) {}

    FamilyTag tag() const { return tag_; }

    double link(double mu) const {
        switch (tag_) {
        case FamilyTag::poisson: return std::log(mu);
        case FamilyTag::bernoulli: return std::log(mu / (1.0 - mu));
        default: return mu;
        }
    }

    double inv_link(double eta) const {
        switch (tag_) {
        case FamilyTag::poisson: return std::exp(eta);
        case FamilyTag::bernoulli: return 1.0 / (1.0 + std::exp(-eta));
        default: return eta;
        }
    }

    double link_deriv(double mu) const {
        switch (tag_) {
        case FamilyTag::poisson: return 1.0 / mu;
        case FamilyTag::bernoulli: return 1.0 / (mu * (1.0 - mu));
        default: return 1.0;
        }
    }

    double variance(double mu) const {
        switch (tag_) {
        case FamilyTag::poisson: return mu;
        case FamilyTag::bernoulli: return mu * (1.0 - mu);
        default: return 1.0;
        }
    }

    double clamp_mu(double mu) const {
        switch (tag_) {
        case FamilyTag::poisson: return std::clamp(mu, poisson_mu_min, poisson_mu_max);
        case FamilyTag::bernoulli: return std::clamp(mu, bernoulli_mu_eps, 1.0 - bernoulli_mu_eps);
        default: return mu;
        }
    }

    /// inv_link followed by the family-safe clamp.
    double mean(double eta) const { return clamp_mu(inv_link(eta)); }

    double unit_deviance(double y, double mu) const {
        switch (tag_) {
        case FamilyTag::poisson: {
            const double ylog = y > 0.0 ? y * std::log(y / mu) : 0.0;
            return std::max(0.0, 2.0 * (ylog - (y - mu)));
        }
        case FamilyTag::bernoulli:
            return -2.0 * (y * std::log(mu) + (1.0 - y) * std::log(1.0 - mu));
        default: {
            const double r = y - mu;
            return r * r;
        }
        }
    }

private:
    FamilyTag tag_;
};

inline double deviance(const Family& family, const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                       std::span<const Index> rows) {
    double total = 0.0;
    for (Index i : rows) {
        const auto k = static_cast<Eigen::Index>(i);
        total += family.unit_deviance(y[k], mu[k]);
    }
    return total;
}

inline double deviance(const Family& family, const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < y.size(); ++k) total += family.unit_deviance(y[k], mu[k]);
    return total;
}

struct WorkingState {
    Eigen::VectorXd eta_hat;
    Eigen::VectorXd weights;
    Eigen::VectorXd mu;
    Eigen::VectorXd mu_lin;
};

/// Second-order linearization of the deviance around `mu_lin`:
/// eta_hat = mu_lin + (y - mu) g'(mu), weight = 1 / (V(mu) g'(mu)^2).
inline WorkingState working_state(const Family& family, const Eigen::VectorXd& y, const Eigen::VectorXd& mu_lin) {
    WorkingState ws;
    const auto n = y.size();
    ws.mu_lin = mu_lin;
    ws.mu.resize(n);
    ws.weights.resize(n);
    ws.eta_hat.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = family.mean(mu_lin[i]);
        ws.mu[i] = mu;
        if (family.tag() == FamilyTag::gaussian) {
            ws.weights[i] = 1.0;
            ws.eta_hat[i] = y[i];
            continue;
        }
        const double g1 = family.link_deriv(mu);
        ws.weights[i] = 1.0 / (family.variance(mu) * g1 * g1);
        ws.eta_hat[i] = mu_lin[i] + (y[i] - mu) * g1;
    }
    return ws;
}

struct Coefficients {
    Eigen::VectorXd beta;  // index 0 is the intercept
};

/// Prepends the intercept column.
inline Eigen::MatrixXd design_matrix(const Eigen::MatrixXd& covariates) {
    Eigen::MatrixXd x(covariates.rows(), covariates.cols() + 1);
    x.col(0).setOnes();
    x.rightCols(covariates.cols()) = covariates;
    return x;
}

/// Weighted least squares over `rows` through the normal equations (Cholesky),
/// with a single ridge retry when the Gram matrix is numerically singular.
inline Coefficients wls_beta(const Eigen::MatrixXd& x, const Eigen::VectorXd& target, const Eigen::VectorXd& weights,
                             std::span<const Index> rows) {
    const auto p = x.cols();
    if (static_cast<Eigen::Index>(rows.size()) <= p)
        throw FitError("wls_beta: need more rows than coefficients");
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (Index i : rows) {
        const auto k = static_cast<Eigen::Index>(i);
        const double w = weights[k];
        const auto xi = x.row(k);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(xi.transpose(), w);
        rhs.noalias() += (w * target[k]) * xi.transpose();
    }
    gram = gram.selfadjointView<Eigen::Lower>();

    auto solve = [&](const Eigen::MatrixXd& g) -> std::optional<Eigen::VectorXd> {
        Eigen::LLT<Eigen::MatrixXd> llt(g);
        if (llt.info() != Eigen::Success) return std::nullopt;
        // Pivot relative to the column's own Gram entry: 1 - R^2 against earlier columns.
        const Eigen::VectorXd pivots = llt.matrixL().toDenseMatrix().diagonal().array().square();
        for (Eigen::Index k = 0; k < g.rows(); ++k)
            if (!(pivots[k] > 1e-12 * g(k, k))) return std::nullopt;
        Eigen::VectorXd b = llt.solve(rhs);
        if (!b.allFinite()) return std::nullopt;
        return b;
    };

    if (auto b = solve(gram)) return Coefficients{*b};
    Eigen::MatrixXd ridged = gram;
    ridged.diagonal().array() += 1e-8 * gram.trace() / static_cast<double>(p);
    if (auto b = solve(ridged)) return Coefficients{*b};
    throw FitError("collinear covariates");
}

struct GlmFit {
    Coefficients coef;
    double deviance = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// IRLS for a GLM restricted to `rows`, with step-halving whenever the deviance rises.
inline GlmFit fit_glm(const Dataset& d, const FitConfig& cfg, std::span<const Index> rows) {
    const Family family(d.family);
    const Eigen::MatrixXd x = design_matrix(d.covariates);
    const Eigen::VectorXd off = d.offset_or_zero();
    const Eigen::VectorXd& y = d.response;
    const auto n = y.size();

    // Standard starting values on the response scale.
    Eigen::VectorXd mu_lin(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        switch (d.family) {
        case FamilyTag::poisson: mu_lin[i] = std::log(y[i] + 0.1); break;
        case FamilyTag::bernoulli: mu_lin[i] = family.link((y[i] + 0.5) / 2.0); break;
        default: mu_lin[i] = y[i]; break;
        }
    }

    auto eval_dev = [&](const Eigen::VectorXd& beta) {
        const Eigen::VectorXd eta = x * beta + off;
        Eigen::VectorXd mu(n);
        for (Eigen::Index i = 0; i < n; ++i) mu[i] = family.mean(eta[i]);
        return deviance(family, y, mu, rows);
    };

    GlmFit fit;
    auto ws = working_state(family, y, mu_lin);
    fit.coef = wls_beta(x, ws.eta_hat - off, ws.weights, rows);
    fit.deviance = eval_dev(fit.coef.beta);
    fit.iterations = 1;
    if (d.family == FamilyTag::gaussian) {
        fit.converged = true;
        return fit;
    }

    for (int it = 1; it < cfg.irls_max_iter; ++it) {
        ws = working_state(family, y, x * fit.coef.beta + off);
        Eigen::VectorXd next = wls_beta(x, ws.eta_hat - off, ws.weights, rows).beta;
        double dev = eval_dev(next);
        for (int halving = 0; halving < 10 && !(dev <= fit.deviance); ++halving) {
            next = 0.5 * (next + fit.coef.beta);
            dev = eval_dev(next);
        }
        const double delta = (next - fit.coef.beta).cwiseAbs().maxCoeff();
        fit.iterations = it + 1;
        if (dev <= fit.deviance || !std::isfinite(fit.deviance)) {
            fit.coef.beta = next;
            fit.deviance = dev;
        }
        if (delta < cfg.irls_tol) {
            fit.converged = true;
            break;
        }
    }
    return fit;
}

inline GlmFit fit_glm(const Dataset& d, const FitConfig& cfg) {
    IndexList all(d.size());
    for (Index i = 0; i < all.size(); ++i) all[i] = i;
    return fit_glm(d, cfg, all);
}

}  // namespace cfglmm
