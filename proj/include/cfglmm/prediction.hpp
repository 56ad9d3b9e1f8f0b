#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "data_model.hpp"
#include "expert_layer.hpp"
#include "glm.hpp"
#include "learner.hpp"

namespace cfglmm {

struct Prediction {
    double mu_lin = 0.0;
    double mu = 0.0;
    double z_total = 0.0;
    double var_z = 0.0;
    double cov = 0.0;
};

/// Predictive standard deviation over predictive mean. Log link uses the lognormal
/// closed form, logit the delta method, identity sqrt(var_z) / |mu|.
inline double coefficient_of_variation(const Prediction& p, const Family& family) {
    switch (family.tag()) {
    case FamilyTag::poisson: return std::sqrt(std::expm1(p.var_z));
    case FamilyTag::bernoulli: return std::sqrt(p.var_z) * (1.0 - p.mu);
    case FamilyTag::gaussian:
        if (p.mu == 0.0) throw DataError(DataError::Kind::bad_argument, "CoV undefined at zero mean");
        return std::sqrt(p.var_z) / std::abs(p.mu);
    }
    return 0.0;
}

/// Out-of-sample prediction. Process variances add across layers (layers treated as
/// independent); coefficient uncertainty is not included. `cov` is NaN where undefined.
inline std::vector<Prediction> predict(const CfModel& m, std::span<const Location> sites,
                                       const Eigen::MatrixXd& covariates,
                                       const std::optional<Eigen::VectorXd>& offset = std::nullopt) {
    const auto k = m.beta.beta.size() - 1;
    if (covariates.cols() != k)
        throw DataError(DataError::Kind::length_mismatch, "covariate column count does not match the model");
    if (static_cast<Index>(covariates.rows()) != sites.size())
        throw DataError(DataError::Kind::length_mismatch, "covariate rows do not match site count");
    if (offset && static_cast<Index>(offset->size()) != sites.size())
        throw DataError(DataError::Kind::length_mismatch, "offset length does not match site count");
    for (const auto& s : sites)
        if (!std::isfinite(s.x) || !std::isfinite(s.y))
            throw DataError(DataError::Kind::non_finite_coordinate, "non-finite coordinate");

    std::vector<Prediction> out(sites.size());
    for (const auto& layer : m.layers) {
        const auto ev = evaluate_layer(layer, sites);
        for (Index i = 0; i < sites.size(); ++i) {
            out[i].z_total += ev[i].mean;
            out[i].var_z += ev[i].variance;
        }
    }
    const Eigen::VectorXd xb = design_matrix(covariates) * m.beta.beta;
    for (Index i = 0; i < sites.size(); ++i) {
        auto& p = out[i];
        const auto r = static_cast<Eigen::Index>(i);
        p.mu_lin = xb[r] + (offset ? (*offset)[r] : 0.0) + p.z_total;
        p.mu = m.family.mean(p.mu_lin);
        if (m.family.tag() == FamilyTag::gaussian && p.mu == 0.0)
            p.cov = std::numeric_limits<double>::quiet_NaN();
        else
            p.cov = coefficient_of_variation(p, m.family);
    }
    return out;
}

inline std::vector<Prediction> predict(const CfModel& m, const Dataset& d) {
    return predict(m, d.sites, d.covariates, d.offset);
}

struct ScaleBandDecomposition {
    std::vector<double> band_edges;                // descending
    std::vector<std::vector<double>> band_values;  // [site][band]
    std::vector<double> band_sds;                  // per band, across sites
    std::vector<Index> layers_per_band;
    std::vector<double> z_total;
};

/// Band index of a bandwidth under descending edges: band 0 is [edge_0, inf),
/// band j is [edge_j, edge_{j-1}), the last band is (0, edge_last).
inline Index band_of(double bandwidth, std::span<const double> edges) {
    Index b = 0;
    while (b < edges.size() && bandwidth < edges[b]) ++b;
    return b;
}

inline ScaleBandDecomposition decompose(const CfModel& m, std::span<const Location> sites,
                                        std::span<const double> band_edges) {
    for (Index k = 1; k < band_edges.size(); ++k)
        if (!(band_edges[k] < band_edges[k - 1]))
            throw DataError(DataError::Kind::bad_argument, "band edges must be strictly descending");
    for (double e : band_edges)
        if (!(e > 0.0) || !std::isfinite(e))
            throw DataError(DataError::Kind::bad_argument, "band edges must be positive");

    const Index nb = band_edges.size() + 1;
    ScaleBandDecomposition out;
    out.band_edges.assign(band_edges.begin(), band_edges.end());
    out.band_values.assign(sites.size(), std::vector<double>(nb, 0.0));
    out.layers_per_band.assign(nb, 0);
    out.z_total.assign(sites.size(), 0.0);
    for (const auto& layer : m.layers) {
        const Index b = band_of(layer.bandwidth, band_edges);
        ++out.layers_per_band[b];
        const auto ev = evaluate_layer(layer, sites);
        for (Index i = 0; i < sites.size(); ++i) {
            out.band_values[i][b] += ev[i].mean;
            out.z_total[i] += ev[i].mean;
        }
    }
    out.band_sds.assign(nb, 0.0);
    if (!sites.empty()) {
        const double n = static_cast<double>(sites.size());
        for (Index b = 0; b < nb; ++b) {
            double mean = 0.0;
            for (const auto& row : out.band_values) mean += row[b];
            mean /= n;
            double ss = 0.0;
            for (const auto& row : out.band_values) ss += (row[b] - mean) * (row[b] - mean);
            out.band_sds[b] = std::sqrt(ss / n);
        }
    }
    return out;
}

}  // namespace cfglmm
