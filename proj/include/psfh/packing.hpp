#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "psfh/kdtree.hpp"
#include "psfh/moments.hpp"

namespace psfh {

namespace detail {

// Golden-section minimization of a unimodal function on [lo, hi].
template <class F>
double golden_minimize(F f, double lo, double hi, double tol)
{
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double x1 = b - invphi * (b - a);
    double x2 = a + invphi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > tol) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = f(x2);
        }
    }
    return std::min(f1, f2);
}

// Deterministic Fisher-Yates shuffle; std::shuffle draws are
// implementation-defined, which would break golden plan tests.
template <class Rng>
void deterministic_shuffle(std::vector<int>& v, Rng& rng)
{
    for (size_t i = v.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace detail

// Scalar separation criterion for two closed ellipsoids: with the tau's
// folded into the shapes, K(s) = 1 - d^T (S1/s + S2/(1-s))^{-1} d is convex
// on (0,1) and the ellipsoids are disjoint iff its minimum is negative.
inline double ellipsoid_min_k(const SupportEllipsoid& e1, const SupportEllipsoid& e2)
{
    auto check_spd = [](const Mat2& S) {
        if (!(S(0, 0) > 0) || !(S(0, 0) * S(1, 1) - S(0, 1) * S(1, 0) > 0))
            throw NumericalError("ellipsoid_min_k: shape matrix not SPD");
    };
    check_spd(e1.shape);
    check_spd(e2.shape);

    const Mat2 S1 = e1.tau * e1.tau * e1.shape;
    const Mat2 S2 = e2.tau * e2.tau * e2.shape;
    const Vec2 d = e2.center - e1.center;
    if (d.squaredNorm() == 0)
        return 1.0;

    auto K = [&](double s) {
        const Mat2 X = S1 / s + S2 / (1 - s);
        return 1.0 - d.dot(X.llt().solve(d));
    };
    return detail::golden_minimize(K, 1e-12, 1.0 - 1e-12, 1e-10);
}

// Intersection test with an axis-aligned bounding-box prefilter.
inline bool ellipsoids_intersect(const SupportEllipsoid& e1, const SupportEllipsoid& e2)
{
    Vec2 lo1, hi1, lo2, hi2;
    e1.bounding_box(lo1, hi1);
    e2.bounding_box(lo2, hi2);
    if (lo1.x() > hi2.x() || lo2.x() > hi1.x() || lo1.y() > hi2.y() || lo2.y() > hi1.y()) {
        // still validate the shapes so degenerate inputs never pass silently
        if (!(e1.shape(0, 0) > 0) || !(e2.shape(0, 0) > 0))
            throw NumericalError("ellipsoids_intersect: shape matrix not SPD");
        return false;
    }
    return ellipsoid_min_k(e1, e2) >= 0;
}

// Batches of sample points whose support ellipsoids are pairwise disjoint
// within each batch, plus a kd-tree over all chosen points.
struct SampleBatchPlan {
    std::vector<std::vector<int>> batches; // node indices, in acceptance order
    std::vector<int> all_points;           // flattened node indices
    std::vector<int> batch_of;             // batch id per all_points entry
    KdTree2d kdtree;
    double tau = 3.0;
    std::uint64_t seed = 0;

    int total_points() const { return static_cast<int>(all_points.size()); }

    void rebuild_index(const Grid& grid)
    {
        std::vector<Vec2> pts(all_points.size());
        for (size_t i = 0; i < all_points.size(); ++i)
            pts[i] = grid.node(all_points[i]);
        std::vector<int> ids(all_points.begin(), all_points.end());
        kdtree = KdTree2d(std::move(pts), std::move(ids));
    }
};

// Greedy ellipsoid packing. Batch candidates are all valid nodes not chosen
// in earlier batches; the first batch visits them in seeded random order,
// later batches in order of decreasing distance to the nearest already
// chosen point. A candidate is accepted if its support ellipsoid is disjoint
// from every ellipsoid accepted so far in the current batch.
inline SampleBatchPlan plan_batches(const ImpulseMoments& m, double tau, int n_b,
                                    std::uint64_t seed)
{
    if (n_b < 1)
        throw ConfigError("plan_batches: n_b must be >= 1");
    const int n = m.grid.num_nodes();

    std::vector<int> valid_nodes;
    for (int i = 0; i < n; ++i)
        if (m.valid[i])
            valid_nodes.push_back(i);
    if (valid_nodes.empty())
        throw NumericalError("plan_batches: no valid nodes (all failed moment checks)");

    SampleBatchPlan plan;
    plan.tau = tau;
    plan.seed = seed;

    std::vector<char> chosen(n, 0);
    std::vector<Vec2> chosen_pts;
    std::mt19937_64 rng(seed);

    for (int k = 0; k < n_b; ++k) {
        std::vector<int> pool;
        for (int i : valid_nodes)
            if (!chosen[i])
                pool.push_back(i);

        if (k == 0) {
            detail::deterministic_shuffle(pool, rng);
        } else {
            std::vector<std::pair<double, int>> ranked(pool.size());
            for (size_t q = 0; q < pool.size(); ++q) {
                const Vec2 p = m.grid.node(pool[q]);
                double d2 = std::numeric_limits<double>::infinity();
                for (const Vec2& c : chosen_pts)
                    d2 = std::min(d2, (p - c).squaredNorm());
                ranked[q] = {d2, pool[q]};
            }
            std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
                return a.first > b.first || (a.first == b.first && a.second < b.second);
            });
            for (size_t q = 0; q < pool.size(); ++q)
                pool[q] = ranked[q].second;
        }

        std::vector<int> batch;
        std::vector<SupportEllipsoid> accepted;
        for (int cand : pool) {
            const SupportEllipsoid e = support_ellipsoid(m, cand, tau);
            bool overlaps = false;
            for (const SupportEllipsoid& other : accepted) {
                if (ellipsoids_intersect(e, other)) {
                    overlaps = true;
                    break;
                }
            }
            if (!overlaps) {
                batch.push_back(cand);
                accepted.push_back(e);
            }
        }
        for (int i : batch) {
            chosen[i] = 1;
            chosen_pts.push_back(m.grid.node(i));
            plan.all_points.push_back(i);
            plan.batch_of.push_back(k);
        }
        plan.batches.push_back(std::move(batch));
    }

    plan.rebuild_index(m.grid);
    return plan;
}

// Restriction of a plan to its first k batches. Because batches are built
// sequentially, this equals plan_batches(..., k, seed) bit for bit.
inline SampleBatchPlan plan_prefix(const SampleBatchPlan& plan, const Grid& grid, int k)
{
    if (k < 1 || k > static_cast<int>(plan.batches.size()))
        throw ConfigError("plan_prefix: batch count out of range");
    SampleBatchPlan out;
    out.tau = plan.tau;
    out.seed = plan.seed;
    out.batches.assign(plan.batches.begin(), plan.batches.begin() + k);
    for (size_t i = 0; i < plan.all_points.size(); ++i) {
        if (plan.batch_of[i] < k) {
            out.all_points.push_back(plan.all_points[i]);
            out.batch_of.push_back(plan.batch_of[i]);
        }
    }
    out.rebuild_index(grid);
    return out;
}

// The k sample points nearest to x, as (node index, batch id), sorted by
// distance with ties broken by smaller node index.
inline std::vector<std::pair<int, int>>
nearest_sample_points(const SampleBatchPlan& plan, const Vec2& x, int k)
{
    if (plan.all_points.empty())
        throw NumericalError("nearest_sample_points: empty plan");
    const auto hits = plan.kdtree.knn(x, k);
    std::vector<std::pair<int, int>> out;
    out.reserve(hits.size());
    for (const auto& h : hits)
        out.emplace_back(plan.all_points[h.index], plan.batch_of[h.index]);
    return out;
}

} // namespace psfh
