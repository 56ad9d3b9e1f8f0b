#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cfglmm {

using Index = std::size_t;
using IndexList = std::vector<Index>;

struct Location {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Location&, const Location&) = default;
};

inline double distance(const Location& a, const Location& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

enum class FamilyTag { gaussian, poisson, bernoulli };

inline std::string_view to_string(FamilyTag tag) {
    switch (tag) {
    case FamilyTag::gaussian: return "gaussian";
    case FamilyTag::poisson: return "poisson";
    case FamilyTag::bernoulli: return "bernoulli";
    }
    return "unknown";
}

inline std::optional<FamilyTag> parse_family(std::string_view name) {
    if (name == "gaussian") return FamilyTag::gaussian;
    if (name == "poisson") return FamilyTag::poisson;
    if (name == "bernoulli") return FamilyTag::bernoulli;
    return std::nullopt;
}

/// Raised for malformed inputs: invalid datasets, configurations, or arguments.
class DataError : public std::runtime_error {
public:
    enum class Kind {
        empty,
        length_mismatch,
        non_finite_coordinate,
        non_finite_response,
        non_finite_covariate,
        non_finite_offset,
        response_not_count,
        response_outside_binary,
        too_small,
        bad_config,
        bad_argument,
    };

    DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Raised when estimation cannot proceed (unfittable layer, singular system).
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Dataset {
    std::vector<Location> sites;
    Eigen::VectorXd response;
    Eigen::MatrixXd covariates;  // N x K, no intercept column
    std::optional<Eigen::VectorXd> offset;
    FamilyTag family = FamilyTag::gaussian;
    std::vector<std::string> covariate_names;

    Index size() const { return sites.size(); }
    Index covariate_count() const { return static_cast<Index>(covariates.cols()); }

    Eigen::VectorXd offset_or_zero() const {
        if (offset) return *offset;
        return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size()));
    }
};

struct FitConfig {
    double train_fraction = 0.75;
    double bandwidth_decay = 0.9;
    int patience = 5;
    double center_density = 1.5;
    std::optional<double> initial_bandwidth;
    std::uint64_t rng_seed = 1;
    int max_scales = 200;
    double min_effective_weight = 1e-8;
    int irls_max_iter = 50;
    double irls_tol = 1e-8;
    // Exponent applied to the kernel when experts are aggregated; 1 matches the
    // aggregation rule, 2 matches the power used inside the local fit.
    int aggregation_weight_power = 1;
    // Kernel terms provably smaller than this fraction of the strongest term at a point
    // are skipped; 0 evaluates every center-site pair.
    double kernel_tolerance = 1e-5;

    void validate() const {
        auto fail = [](const std::string& msg) { throw DataError(DataError::Kind::bad_config, msg); };
        if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("train_fraction must lie in (0,1)");
        if (!(bandwidth_decay > 0.0 && bandwidth_decay < 1.0)) fail("bandwidth_decay must lie in (0,1)");
        if (patience < 1) fail("patience must be positive");
        if (!(center_density > 0.0) || !std::isfinite(center_density)) fail("center_density must be positive");
        if (initial_bandwidth && !(*initial_bandwidth > 0.0 && std::isfinite(*initial_bandwidth)))
            fail("initial_bandwidth must be positive");
        if (max_scales < 1) fail("max_scales must be positive");
        if (!(min_effective_weight >= 0.0)) fail("min_effective_weight must be nonnegative");
        if (irls_max_iter < 1) fail("irls_max_iter must be positive");
        if (!(irls_tol > 0.0)) fail("irls_tol must be positive");
        if (!(kernel_tolerance >= 0.0 && kernel_tolerance < 1.0)) fail("kernel_tolerance must lie in [0,1)");
        if (aggregation_weight_power != 1 && aggregation_weight_power != 2)
            fail("aggregation_weight_power must be 1 or 2");
    }
};

struct HvSplit {
    IndexList train_idx;
    IndexList valid_idx;
};

/// SplitMix64 finalizer; derives independent stream seeds from a base seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Uniform random train/validation split; N_t = round(train_fraction * n), kept in [1, n-1].
inline HvSplit make_split(Index n, const FitConfig& cfg) {
    if (n < 4) throw DataError(DataError::Kind::too_small, "dataset too small to split");
    cfg.validate();

    auto n_train = static_cast<Index>(std::round(cfg.train_fraction * static_cast<double>(n)));
    n_train = std::clamp<Index>(n_train, 1, n - 1);

    IndexList perm(n);
    for (Index i = 0; i < n; ++i) perm[i] = i;
    std::mt19937_64 rng(derive_seed(cfg.rng_seed, 0));
    std::shuffle(perm.begin(), perm.end(), rng);

    HvSplit split;
    split.train_idx.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.valid_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
    std::sort(split.train_idx.begin(), split.train_idx.end());
    std::sort(split.valid_idx.begin(), split.valid_idx.end());
    return split;
}

inline void validate_dataset(const Dataset& d) {
    using K = DataError::Kind;
    const Index n = d.size();
    if (n == 0) throw DataError(K::empty, "dataset has no rows");
    if (static_cast<Index>(d.response.size()) != n)
        throw DataError(K::length_mismatch, "response length does not match site count");
    if (static_cast<Index>(d.covariates.rows()) != n)
        throw DataError(K::length_mismatch, "covariate row count does not match site count");
    if (d.offset && static_cast<Index>(d.offset->size()) != n)
        throw DataError(K::length_mismatch, "offset length does not match site count");
    if (!d.covariate_names.empty() && d.covariate_names.size() != d.covariate_count())
        throw DataError(K::length_mismatch, "covariate name count does not match covariate columns");

    for (Index i = 0; i < n; ++i) {
        const auto& s = d.sites[i];
        if (!std::isfinite(s.x) || !std::isfinite(s.y))
            throw DataError(K::non_finite_coordinate, "non-finite coordinate at row " + std::to_string(i));
    }
    for (Index i = 0; i < n; ++i) {
        const double y = d.response[static_cast<Eigen::Index>(i)];
        if (!std::isfinite(y))
            throw DataError(K::non_finite_response, "non-finite response at row " + std::to_string(i));
        if (d.family == FamilyTag::poisson && (y < 0.0 || y != std::floor(y)))
            throw DataError(K::response_not_count,
                            "response not a nonnegative integer at row " + std::to_string(i));
        if (d.family == FamilyTag::bernoulli && y != 0.0 && y != 1.0)
            throw DataError(K::response_outside_binary, "response outside {0,1} at row " + std::to_string(i));
    }
    if (!d.covariates.allFinite()) throw DataError(K::non_finite_covariate, "non-finite covariate value");
    if (d.offset && !d.offset->allFinite()) throw DataError(K::non_finite_offset, "non-finite offset value");
}

/// Copies the rows listed in `idx` into a new dataset.
inline Dataset subset(const Dataset& d, const IndexList& idx) {
    Dataset out;
    out.family = d.family;
    out.covariate_names = d.covariate_names;
    out.sites.reserve(idx.size());
    out.response.resize(static_cast<Eigen::Index>(idx.size()));
    out.covariates.resize(static_cast<Eigen::Index>(idx.size()), d.covariates.cols());
    if (d.offset) out.offset = Eigen::VectorXd(static_cast<Eigen::Index>(idx.size()));
    for (Index k = 0; k < idx.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(idx[k]);
        const auto r = static_cast<Eigen::Index>(k);
        out.sites.push_back(d.sites[idx[k]]);
        out.response[r] = d.response[i];
        out.covariates.row(r) = d.covariates.row(i);
        if (d.offset) (*out.offset)[r] = (*d.offset)[i];
    }
    return out;
}

}  // namespace cfglmm
