#pragma once

#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "data_model.hpp"
#include "expert_layer.hpp"
#include "geometry.hpp"
#include "glm.hpp"

namespace cfglmm {

/// One attempted scale of the coarse-to-fine search.
struct TraceEntry {
    int scale = 0;
    double bandwidth = 0.0;
    Index centers = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    bool accepted = false;
    bool fittable = true;
};

using ProgressSink = std::function<void(const TraceEntry&)>;

struct CfModel {
    Coefficients beta;
    std::vector<ScaleLayer> layers;  // accepted layers, coarse to fine
    Family family;
    HvSplit split;
    std::vector<TraceEntry> trace;
    FitConfig config;
    double bbox_diagonal = 0.0;
    double initial_valid_loss = 0.0;  // validation deviance of the starting GLM
    Coefficients glm_beta;            // starting GLM on the training rows
    std::vector<std::string> covariate_names;
    // Cached process mean and variance at every input site.
    Eigen::VectorXd train_z;
    Eigen::VectorXd train_var;

    double final_valid_loss() const {
        double best = initial_valid_loss;
        for (const auto& t : trace)
            if (t.accepted) best = t.valid_loss;
        return best;
    }
};

inline Index accepted_scale_count(const CfModel& m) { return m.layers.size(); }

namespace detail {

inline std::vector<Location> gather(const std::vector<Location>& sites, const IndexList& idx) {
    std::vector<Location> out;
    out.reserve(idx.size());
    for (Index i : idx) out.push_back(sites[i]);
    return out;
}

inline std::vector<double> gather(const Eigen::VectorXd& v, const IndexList& idx) {
    std::vector<double> out;
    out.reserve(idx.size());
    for (Index i : idx) out.push_back(v[static_cast<Eigen::Index>(i)]);
    return out;
}

}  // namespace detail

/// Holdout-validated coarse-to-fine fit.
///
/// Each scale re-linearizes the deviance at the current fit, fits a product-of-experts
/// layer to the working residuals of the training rows, re-estimates the coefficients
/// given that layer, and keeps the layer only if the validation deviance drops. The
/// bandwidth shrinks geometrically; the search stops after `patience` consecutive
/// rejections.
inline CfModel fit_cf(const Dataset& d, const FitConfig& cfg, const ProgressSink& sink = {}) {
    validate_dataset(d);
    cfg.validate();
    const Index n = d.size();
    if (n < 20) throw DataError(DataError::Kind::too_small, "fit_cf needs at least 20 sites");

    CfModel m;
    m.family = Family(d.family);
    m.config = cfg;
    m.covariate_names = d.covariate_names;
    m.split = make_split(n, cfg);
    const auto& train = m.split.train_idx;
    const auto& valid = m.split.valid_idx;

    const Eigen::MatrixXd x = design_matrix(d.covariates);
    const Eigen::VectorXd& y = d.response;
    const auto nn = static_cast<Eigen::Index>(n);

    const GlmFit glm = fit_glm(d, cfg, train);
    m.glm_beta = glm.coef;
    m.beta = glm.coef;

    Eigen::VectorXd offset_hat = d.offset_or_zero();
    m.train_z = Eigen::VectorXd::Zero(nn);
    m.train_var = Eigen::VectorXd::Zero(nn);

    auto losses = [&](const Eigen::VectorXd& eta) {
        Eigen::VectorXd mu(nn);
        for (Eigen::Index i = 0; i < nn; ++i) mu[i] = m.family.mean(eta[i]);
        return std::pair{deviance(m.family, y, mu, train), deviance(m.family, y, mu, valid)};
    };

    m.initial_valid_loss = losses(x * m.beta.beta + offset_hat).second;
    double best = m.initial_valid_loss;

    const auto train_sites = detail::gather(d.sites, train);
    m.bbox_diagonal = bbox_diagonal(d.sites);
    double h = cfg.initial_bandwidth.value_or(m.bbox_diagonal);
    if (!(h > 0.0)) throw DataError(DataError::Kind::bad_argument, "all sites coincide; set initial_bandwidth");

    int rejected = 0;
    for (int r = 1; r <= cfg.max_scales; ++r, h *= cfg.bandwidth_decay) {
        TraceEntry entry;
        entry.scale = r;
        entry.bandwidth = h;

        const Eigen::VectorXd xb = x * m.beta.beta;
        const WorkingState ws = working_state(m.family, y, xb + offset_hat);
        const Eigen::VectorXd resid = ws.eta_hat - xb - offset_hat;

        const Index c = center_count(m.bbox_diagonal, h, cfg.center_density, train.size());
        entry.centers = c;
        const CenterSet centers = place_centers(train_sites, c, h, derive_seed(cfg.rng_seed, 1000 + r));

        std::optional<ScaleLayer> layer;
        try {
            layer = fit_layer(detail::gather(resid, train), detail::gather(ws.weights, train), train_sites, centers,
                              cfg);
        } catch (const FitError&) {
            entry.fittable = false;
            entry.train_loss = entry.valid_loss = std::numeric_limits<double>::quiet_NaN();
        }

        Eigen::VectorXd z_r, v_r;
        Coefficients beta_r;
        if (layer) {
            const auto ev = evaluate_layer(*layer, d.sites);
            z_r.resize(nn);
            v_r.resize(nn);
            for (Eigen::Index i = 0; i < nn; ++i) {
                z_r[i] = ev[static_cast<Index>(i)].mean;
                v_r[i] = ev[static_cast<Index>(i)].variance;
            }
            beta_r = wls_beta(x, ws.eta_hat - offset_hat - z_r, ws.weights, train);
            const auto [tl, vl] = losses(x * beta_r.beta + offset_hat + z_r);
            entry.train_loss = tl;
            entry.valid_loss = vl;
            entry.accepted = vl < best;
        }

        if (entry.accepted) {
            best = entry.valid_loss;
            m.layers.push_back(std::move(*layer));
            offset_hat += z_r;
            m.train_z += z_r;
            m.train_var += v_r;
            m.beta = beta_r;
            rejected = 0;
        } else {
            ++rejected;
        }
        m.trace.push_back(entry);
        if (sink) sink(entry);
        if (rejected >= cfg.patience) break;
    }
    return m;
}

}  // namespace cfglmm
