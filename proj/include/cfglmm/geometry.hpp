#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "data_model.hpp"

namespace cfglmm {

struct CenterSet {
    std::vector<Location> centers;
    double bandwidth = 1.0;
};

inline double kernel_weight(double d, double h) { return std::exp(-d / h); }

/// Diagonal length of the axis-aligned bounding box of `sites`.
inline double bbox_diagonal(std::span<const Location> sites) {
    if (sites.empty()) throw DataError(DataError::Kind::empty, "bounding box of an empty site list");
    double x0 = sites[0].x, x1 = sites[0].x, y0 = sites[0].y, y1 = sites[0].y;
    for (const auto& s : sites) {
        x0 = std::min(x0, s.x);
        x1 = std::max(x1, s.x);
        y0 = std::min(y0, s.y);
        y1 = std::max(y1, s.y);
    }
    return std::hypot(x1 - x0, y1 - y0);
}

/// max(1, round(density * D^2 / h^2)), optionally capped (the cap is the training-site count).
inline Index center_count(double diag, double h, double density,
                          Index cap = std::numeric_limits<Index>::max()) {
    if (!(h > 0.0)) throw DataError(DataError::Kind::bad_argument, "bandwidth must be positive");
    if (!(diag >= 0.0)) throw DataError(DataError::Kind::bad_argument, "diagonal must be nonnegative");
    const double ratio = diag / h;
    const double raw = std::round(density * ratio * ratio);
    Index c = 1;
    if (raw >= static_cast<double>(cap)) {
        c = cap;
    } else if (raw > 1.0) {
        c = static_cast<Index>(raw);
    }
    return std::max<Index>(1, std::min(c, cap));
}

namespace detail {

inline double sqdist(const Location& a, const Location& b) {
    const double dx = a.x - b.x;
    const double dy = a.y - b.y;
    return dx * dx + dy * dy;
}

inline bool lex_less(const Location& a, const Location& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
}

/// Uniform bucket grid over a fixed point set; exact nearest-point queries.
class PointGrid {
public:
    explicit PointGrid(std::span<const Location> pts) : pts_(pts) {
        x0_ = y0_ = std::numeric_limits<double>::infinity();
        double x1 = -x0_, y1 = -y0_;
        for (const auto& p : pts) {
            x0_ = std::min(x0_, p.x);
            y0_ = std::min(y0_, p.y);
            x1 = std::max(x1, p.x);
            y1 = std::max(y1, p.y);
        }
        const double w = std::max(x1 - x0_, 1e-300);
        const double hgt = std::max(y1 - y0_, 1e-300);
        const double n = static_cast<double>(pts.size());
        double cell = std::sqrt(w * hgt / std::max(n / 2.0, 1.0));
        if (!(cell > 0.0) || !std::isfinite(cell)) cell = std::max(w, hgt);
        cell = std::max({cell, w / 2048.0, hgt / 2048.0});
        if (x1 - x0_ <= 0.0 && y1 - y0_ <= 0.0) cell = 1.0;
        cell_ = cell;
        nx_ = std::max<long>(1, static_cast<long>(std::floor(w / cell_)) + 1);
        ny_ = std::max<long>(1, static_cast<long>(std::floor(hgt / cell_)) + 1);

        std::vector<Index> counts(static_cast<Index>(nx_ * ny_) + 1, 0);
        for (const auto& p : pts) ++counts[cell_of(p) + 1];
        for (Index k = 1; k < counts.size(); ++k) counts[k] += counts[k - 1];
        start_ = counts;
        items_.resize(pts.size());
        std::vector<Index> fill(counts.begin(), counts.end() - 1);
        for (Index i = 0; i < pts.size(); ++i) items_[fill[cell_of(pts[i])]++] = i;
    }

    /// Index of the nearest point; ties resolve to the smallest index.
    Index nearest(const Location& q) const {
        const long cx = clampx(q.x), cy = clampy(q.y);
        double best = std::numeric_limits<double>::infinity();
        Index best_i = 0;
        for (long r = 0;; ++r) {
            const long lx = cx - r, hx = cx + r, ly = cy - r, hy = cy + r;
            for (long gy = std::max(ly, 0L); gy <= std::min(hy, ny_ - 1); ++gy) {
                const bool edge_row = (gy == ly || gy == hy);
                for (long gx = std::max(lx, 0L); gx <= std::min(hx, nx_ - 1); ++gx) {
                    if (!edge_row && gx != lx && gx != hx) continue;
                    const Index cell = static_cast<Index>(gy * nx_ + gx);
                    for (Index k = start_[cell]; k < start_[cell + 1]; ++k) {
                        const Index i = items_[k];
                        const double d = sqdist(q, pts_[i]);
                        if (d < best || (d == best && i < best_i)) {
                            best = d;
                            best_i = i;
                        }
                    }
                }
            }
            // Lower bound on the distance to any point outside the searched square.
            double bound = std::numeric_limits<double>::infinity();
            if (lx > 0) bound = std::min(bound, std::max(0.0, q.x - (x0_ + static_cast<double>(lx) * cell_)));
            if (hx < nx_ - 1) bound = std::min(bound, std::max(0.0, x0_ + static_cast<double>(hx + 1) * cell_ - q.x));
            if (ly > 0) bound = std::min(bound, std::max(0.0, q.y - (y0_ + static_cast<double>(ly) * cell_)));
            if (hy < ny_ - 1) bound = std::min(bound, std::max(0.0, y0_ + static_cast<double>(hy + 1) * cell_ - q.y));
            if (!std::isfinite(bound)) return best_i;
            if (bound * bound > best) return best_i;
        }
    }

    /// Calls f(index, distance) for every point within `radius` of q.
    template <class F>
    void for_each_within(const Location& q, double radius, F&& f) const {
        const long gy0 = clampy(q.y - radius), gy1 = clampy(q.y + radius);
        const double r2 = radius * radius;
        for (long gy = gy0; gy <= gy1; ++gy) {
            // Horizontal half-width of the disc over this row of cells.
            const double ylo = y0_ + static_cast<double>(gy) * cell_;
            const double dy = std::max({0.0, ylo - q.y, q.y - (ylo + cell_)});
            if (dy * dy > r2) continue;
            const double half = std::sqrt(r2 - dy * dy);
            const long gx0 = clampx(q.x - half), gx1 = clampx(q.x + half);
            const Index row = static_cast<Index>(gy * nx_);
            // Cells of one row are stored contiguously.
            const Index end = start_[row + static_cast<Index>(gx1) + 1];
            for (Index k = start_[row + static_cast<Index>(gx0)]; k < end; ++k) {
                const Index i = items_[k];
                const double d2 = sqdist(q, pts_[i]);
                if (d2 <= r2) f(i, std::sqrt(d2));
            }
        }
    }

private:
    static long clamp_cell(double t, long n) {
        return static_cast<long>(std::clamp(std::floor(t), 0.0, static_cast<double>(n - 1)));
    }
    long clampx(double x) const { return clamp_cell((x - x0_) / cell_, nx_); }
    long clampy(double y) const { return clamp_cell((y - y0_) / cell_, ny_); }
    Index cell_of(const Location& p) const { return static_cast<Index>(clampy(p.y) * nx_ + clampx(p.x)); }

    std::span<const Location> pts_;
    double x0_ = 0, y0_ = 0, cell_ = 1;
    long nx_ = 1, ny_ = 1;
    std::vector<Index> start_;
    std::vector<Index> items_;
};

inline std::vector<Location> distinct_sorted(std::span<const Location> sites) {
    std::vector<Location> pts(sites.begin(), sites.end());
    std::sort(pts.begin(), pts.end(), lex_less);
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
}

/// Fixed-size array with O(log n) point updates, total sum, maximum, and
/// prefix-sum search.
class SumMaxTree {
public:
    explicit SumMaxTree(Index n) : n_(n) {
        while (size_ < n) size_ *= 2;
        sum_.assign(2 * size_, 0.0);
        max_.assign(2 * size_, 0.0);
    }

    void set(Index i, double v) {
        Index k = i + size_;
        sum_[k] = max_[k] = v;
        for (k /= 2; k >= 1; k /= 2) {
            sum_[k] = sum_[2 * k] + sum_[2 * k + 1];
            max_[k] = std::max(max_[2 * k], max_[2 * k + 1]);
        }
    }
    double value(Index i) const { return sum_[i + size_]; }
    double sum() const { return sum_[1]; }
    double max() const { return max_[1]; }

    /// Smallest index whose inclusive prefix sum exceeds `target`, restricted to
    /// positive entries.
    Index find(double target) const {
        Index k = 1;
        while (k < size_) {
            if (target < sum_[2 * k] || !(sum_[2 * k + 1] > 0.0)) {
                k = 2 * k;
            } else {
                target -= sum_[2 * k];
                k = 2 * k + 1;
            }
            if (!(sum_[k] > 0.0)) k ^= 1;  // rounding pushed us onto an empty subtree
        }
        return std::min(k - size_, n_ - 1);
    }

private:
    Index n_;
    Index size_ = 1;
    std::vector<double> sum_;
    std::vector<double> max_;
};

}  // namespace detail

struct KMeansOptions {
    int max_iter = 100;
    double rel_tol = 1e-6;
};

/// k-means++ seeding followed by Lloyd iterations. The input is canonicalized
/// (sorted lexicographically) first, so the result does not depend on site order.
/// Requesting at least as many centers as there are distinct sites returns those sites.
inline std::vector<Location> kmeans_centers(std::span<const Location> sites, Index c, std::uint64_t seed,
                                            const KMeansOptions& opt = {}) {
    if (sites.empty()) throw DataError(DataError::Kind::empty, "cannot place centers on an empty site list");
    if (c < 1) throw DataError(DataError::Kind::bad_argument, "center count must be at least 1");

    const auto distinct = detail::distinct_sorted(sites);
    if (c >= distinct.size()) return distinct;

    std::vector<Location> pts(sites.begin(), sites.end());
    std::sort(pts.begin(), pts.end(), detail::lex_less);
    const Index n = pts.size();

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // k-means++ seeding: sample proportional to the squared distance to the nearest
    // chosen center. Only sites closer to the new center than the current maximum
    // distance can change, so updates go through a grid range query.
    std::vector<Location> centers;
    centers.reserve(c);
    centers.push_back(pts[std::min<Index>(n - 1, static_cast<Index>(unif(rng) * static_cast<double>(n)))]);
    detail::SumMaxTree d2(n);
    for (Index i = 0; i < n; ++i) d2.set(i, detail::sqdist(pts[i], centers[0]));
    const detail::PointGrid site_grid(pts);
    while (centers.size() < c) {
        const double total = d2.sum();
        if (!(total > 0.0)) break;
        const Index pick = d2.find(unif(rng) * total);
        centers.push_back(pts[pick]);
        const Location& q = centers.back();
        site_grid.for_each_within(q, std::sqrt(d2.max()), [&](Index i, double d) {
            if (d * d < d2.value(i)) d2.set(i, d * d);
        });
        d2.set(pick, 0.0);
    }

    std::vector<Index> assign(n, 0);
    std::vector<double> sx(c), sy(c);
    std::vector<Index> count(c);
    double prev_sse = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < opt.max_iter; ++iter) {
        detail::PointGrid grid(centers);
        double sse = 0.0;
        for (Index i = 0; i < n; ++i) {
            assign[i] = grid.nearest(pts[i]);
            sse += detail::sqdist(pts[i], centers[assign[i]]);
        }
        if (sse == 0.0 || (std::isfinite(prev_sse) && std::abs(prev_sse - sse) <= opt.rel_tol * prev_sse)) break;
        prev_sse = sse;

        std::fill(sx.begin(), sx.end(), 0.0);
        std::fill(sy.begin(), sy.end(), 0.0);
        std::fill(count.begin(), count.end(), 0);
        for (Index i = 0; i < n; ++i) {
            sx[assign[i]] += pts[i].x;
            sy[assign[i]] += pts[i].y;
            ++count[assign[i]];
        }
        std::vector<bool> taken(n, false);
        for (Index k = 0; k < c; ++k) {
            if (count[k] > 0) {
                centers[k] = {sx[k] / static_cast<double>(count[k]), sy[k] / static_cast<double>(count[k])};
                continue;
            }
            // Empty cluster: move it onto the worst-served site.
            Index worst = 0;
            double worst_d = -1.0;
            for (Index i = 0; i < n; ++i) {
                const double d = detail::sqdist(pts[i], centers[assign[i]]);
                if (!taken[i] && d > worst_d) {
                    worst_d = d;
                    worst = i;
                }
            }
            taken[worst] = true;
            centers[k] = pts[worst];
        }
    }
    return centers;
}

inline CenterSet place_centers(std::span<const Location> sites, Index c, double bandwidth, std::uint64_t seed) {
    if (!(bandwidth > 0.0)) throw DataError(DataError::Kind::bad_argument, "bandwidth must be positive");
    return CenterSet{kmeans_centers(sites, c, seed), bandwidth};
}

}  // namespace cfglmm
