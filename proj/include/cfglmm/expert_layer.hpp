#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "data_model.hpp"
#include "geometry.hpp"

namespace cfglmm {

inline constexpr double sigma2_floor = 1e-10;

struct LocalExpert {
    Location center;
    double mu = 0.0;        // shrunken local mean
    double sigma2 = 1.0;    // local variance
    double raw_mean = 0.0;  // weighted mean before shrinkage
    bool active = false;
};

struct ScaleLayer {
    double bandwidth = 1.0;
    std::vector<LocalExpert> experts;
    double tau2 = sigma2_floor;
    int weight_power = 1;
    double kernel_tolerance = 0.0;

    Index active_count() const {
        Index n = 0;
        for (const auto& e : experts) n += e.active ? 1 : 0;
        return n;
    }
};

struct LayerEvaluation {
    double mean = 0.0;
    double variance = 0.0;
};

namespace detail {

inline double log_inverse_tolerance(double tol) {
    return tol > 0.0 ? -std::log(tol) : std::numeric_limits<double>::infinity();
}

/// (index, distance) pairs of the points of `grid` that can matter at q. A point is
/// skipped only if its term is below `log_tol` (in log units) relative to the nearest
/// point's term; `slack(nearest)` widens the radius for per-point scale differences.
template <class Slack>
void gather_neighbours(const PointGrid* grid, std::span<const Location> pts, const Location& q, double log_tol,
                       double length, Slack&& slack, std::vector<std::pair<Index, double>>& out) {
    out.clear();
    if (grid && std::isfinite(log_tol)) {
        const Index j0 = grid->nearest(q);
        const double extra = slack(j0);
        if (std::isfinite(extra)) {
            const double radius = distance(q, pts[j0]) + length * (log_tol + extra);
            grid->for_each_within(q, radius, [&](Index i, double d) { out.emplace_back(i, d); });
            return;
        }
    }
    for (Index i = 0; i < pts.size(); ++i) out.emplace_back(i, distance(q, pts[i]));
}

}  // namespace detail

/// Fits one local expert per center against a weighted working target.
///
/// Each site contributes precision weight_i * w_i^2 with w_i = exp(-d_i / h). The raw
/// local moments are precision-weighted; the local means are then shrunk towards zero
/// by the empirical-Bayes factor tau2 / (tau2 + sigma2_c / sum_i w_i^2), where tau2 is
/// the spread of the raw means across the active centers.
inline ScaleLayer fit_layer(std::span<const double> targets, std::span<const double> site_weights,
                            std::span<const Location> sites, const CenterSet& centers, const FitConfig& cfg) {
    if (targets.size() != sites.size() || site_weights.size() != sites.size())
        throw DataError(DataError::Kind::length_mismatch, "fit_layer: targets, weights and sites differ in length");
    if (!(centers.bandwidth > 0.0)) throw DataError(DataError::Kind::bad_argument, "bandwidth must be positive");

    const double h = centers.bandwidth;
    ScaleLayer layer;
    layer.bandwidth = h;
    layer.weight_power = cfg.aggregation_weight_power;
    layer.kernel_tolerance = cfg.kernel_tolerance;
    layer.experts.resize(centers.centers.size());
    std::vector<double> kernel_sum(centers.centers.size(), 0.0);
    if (sites.empty()) throw FitError("layer unfittable at this bandwidth");

    const double log_tol = detail::log_inverse_tolerance(cfg.kernel_tolerance);
    const double w_max = *std::max_element(site_weights.begin(), site_weights.end());
    std::optional<detail::PointGrid> grid;
    if (std::isfinite(log_tol)) grid.emplace(sites);
    auto slack = [&](Index j) {
        return site_weights[j] > 0.0 ? std::log(w_max / site_weights[j]) : std::numeric_limits<double>::infinity();
    };

    std::vector<std::pair<Index, double>> near;
    std::vector<double> prec;
    for (Index c = 0; c < centers.centers.size(); ++c) {
        auto& e = layer.experts[c];
        e.center = centers.centers[c];
        detail::gather_neighbours(grid ? &*grid : nullptr, sites, e.center, log_tol, 0.5 * h, slack, near);
        prec.resize(near.size());
        double sp = 0.0, spt = 0.0, sw2 = 0.0;
        for (Index k = 0; k < near.size(); ++k) {
            const auto [i, d] = near[k];
            const double w2 = std::exp(-2.0 * d / h);
            prec[k] = site_weights[i] * w2;
            sp += prec[k];
            spt += prec[k] * targets[i];
            sw2 += w2;
        }
        if (!(sp >= cfg.min_effective_weight) || sp <= 0.0) continue;
        const double m = spt / sp;
        double ss = 0.0;
        for (Index k = 0; k < near.size(); ++k) {
            const double r = targets[near[k].first] - m;
            ss += prec[k] * r * r;
        }
        e.raw_mean = m;
        e.sigma2 = std::max(ss / sp, sigma2_floor);
        e.active = true;
        kernel_sum[c] = sw2;
    }

    double mean = 0.0;
    Index active = 0;
    for (const auto& e : layer.experts) {
        if (!e.active) continue;
        mean += e.raw_mean;
        ++active;
    }
    if (active == 0) throw FitError("layer unfittable at this bandwidth");
    mean /= static_cast<double>(active);
    double var = 0.0;
    for (const auto& e : layer.experts) {
        if (!e.active) continue;
        var += (e.raw_mean - mean) * (e.raw_mean - mean);
    }
    layer.tau2 = std::max(var / static_cast<double>(active), sigma2_floor);

    for (Index c = 0; c < layer.experts.size(); ++c) {
        auto& e = layer.experts[c];
        if (!e.active) continue;
        e.mu = e.raw_mean * layer.tau2 / (layer.tau2 + e.sigma2 / kernel_sum[c]);
    }
    return layer;
}

namespace detail {

/// Spatial index over the active experts of one layer. Experts are grouped into bands
/// of log-variance so the search radius for each band uses that band's own smallest
/// variance instead of the layer-wide one.
class ExpertIndex {
public:
    explicit ExpertIndex(const ScaleLayer& layer) : layer_(layer) {
        for (Index c = 0; c < layer.experts.size(); ++c) {
            const auto& e = layer.experts[c];
            if (!e.active) continue;
            ids_.push_back(c);
            log_s2_.push_back(std::log(e.sigma2));
        }
        if (ids_.empty()) throw FitError("layer has no active expert");
        log_tol_ = log_inverse_tolerance(layer.kernel_tolerance);
        if (!std::isfinite(log_tol_)) {
            bands_.push_back(Band{});
            for (Index j = 0; j < ids_.size(); ++j) bands_[0].members.push_back(j);
            return;
        }
        const double lo = *std::min_element(log_s2_.begin(), log_s2_.end());
        const double hi = *std::max_element(log_s2_.begin(), log_s2_.end());
        const auto nb = static_cast<Index>(std::floor((hi - lo) / band_width)) + 1;
        bands_.resize(nb);
        for (Index j = 0; j < ids_.size(); ++j) {
            const auto b = std::min(nb - 1, static_cast<Index>(std::floor((log_s2_[j] - lo) / band_width)));
            bands_[b].members.push_back(j);
        }
        std::erase_if(bands_, [](const Band& b) { return b.members.empty(); });
        for (auto& b : bands_) {
            b.log_s2min = std::numeric_limits<double>::infinity();
            for (Index j : b.members) {
                b.locs.push_back(layer.experts[ids_[j]].center);
                b.log_s2min = std::min(b.log_s2min, log_s2_[j]);
            }
            b.grid.emplace(b.locs);
        }
    }

    ExpertIndex(const ExpertIndex&) = delete;
    ExpertIndex& operator=(const ExpertIndex&) = delete;

    /// Relative precisions exp(log q_c - log_max) of the experts that matter at s.
    /// Returns log_max; `total` receives the sum of the relative precisions.
    double precisions(const Location& s, std::vector<std::pair<Index, double>>& rel, double& total) const {
        const double power = static_cast<double>(layer_.weight_power);
        const double length = layer_.bandwidth / power;
        rel.clear();
        if (!std::isfinite(log_tol_)) {
            for (Index j = 0; j < ids_.size(); ++j) rel.emplace_back(j, distance(s, layer_.experts[ids_[j]].center));
        } else {
            // Reference term: the best expert among each band's nearest one.
            double ref = -std::numeric_limits<double>::infinity();
            for (const auto& b : bands_) {
                const Index k = b.grid->nearest(s);
                ref = std::max(ref, -distance(s, b.locs[k]) / length - log_s2_[b.members[k]]);
            }
            // Expert c can reach tol * ref only within d <= length * (-ref - log s2_c + log_tol).
            for (const auto& b : bands_) {
                const double radius = length * (-ref - b.log_s2min + log_tol_);
                if (radius < 0.0) continue;
                b.grid->for_each_within(s, radius, [&](Index k, double d) { rel.emplace_back(b.members[k], d); });
            }
        }
        double lmax = -std::numeric_limits<double>::infinity();
        for (auto& [j, v] : rel) {
            v = -power * v / layer_.bandwidth - log_s2_[j];
            lmax = std::max(lmax, v);
        }
        total = 0.0;
        for (auto& [j, v] : rel) {
            v = std::exp(v - lmax);
            total += v;
        }
        return lmax;
    }

    const LocalExpert& expert(Index j) const { return layer_.experts[ids_[j]]; }
    Index layer_index(Index j) const { return ids_[j]; }

private:
    static constexpr double band_width = 1.0;

    struct Band {
        std::vector<Index> members;
        std::vector<Location> locs;
        double log_s2min = 0.0;
        std::optional<PointGrid> grid;
    };

    const ScaleLayer& layer_;
    std::vector<Index> ids_;
    std::vector<double> log_s2_;
    double log_tol_ = 0.0;
    std::vector<Band> bands_;
};

inline double precision_to_variance(double log_max, double total) {
    const double v = std::exp(-log_max - std::log(total));
    return std::isfinite(v) ? v : std::numeric_limits<double>::max();
}

}  // namespace detail

/// Product-of-experts aggregate at many sites: precision q_c = w_c(s) / sigma2_c,
/// variance 1 / sum q_c, mean variance * sum q_c mu_c.
inline std::vector<LayerEvaluation> evaluate_layer(const ScaleLayer& layer, std::span<const Location> sites) {
    const detail::ExpertIndex index(layer);
    std::vector<std::pair<Index, double>> rel;
    std::vector<LayerEvaluation> out(sites.size());
    for (Index i = 0; i < sites.size(); ++i) {
        double total = 0.0;
        const double lmax = index.precisions(sites[i], rel, total);
        double acc = 0.0;
        for (const auto& [j, v] : rel) acc += v * index.expert(j).mu;
        out[i].mean = acc / total;
        out[i].variance = detail::precision_to_variance(lmax, total);
    }
    return out;
}

inline LayerEvaluation evaluate_layer(const ScaleLayer& layer, const Location& s) {
    return evaluate_layer(layer, std::span<const Location>(&s, 1)).front();
}

struct BasisTerm {
    double basis = 0.0;
    double coeff = 0.0;
};

/// Basis-function form of a layer at `s`, one pair per expert: basis
/// sigma2_layer(s) * w_c(s), coefficient mu_c / sigma2_c. Inactive experts, and experts
/// skipped under the kernel tolerance, have basis 0.
inline std::vector<BasisTerm> layer_basis_expansion(const ScaleLayer& layer, const Location& s) {
    const detail::ExpertIndex index(layer);
    std::vector<std::pair<Index, double>> rel;
    double total = 0.0;
    index.precisions(s, rel, total);
    std::vector<BasisTerm> out(layer.experts.size());
    for (const auto& e : layer.experts)
        if (e.active) out[static_cast<Index>(&e - layer.experts.data())].coeff = e.mu / e.sigma2;
    for (const auto& [j, v] : rel) {
        // v = w_c^p / sigma2_c scaled by exp(-log_max); multiply back sigma2_c.
        const auto& e = index.expert(j);
        out[index.layer_index(j)].basis = v * e.sigma2 / total;
    }
    return out;
}

}  // namespace cfglmm
