#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <memory>

#include "psfh/impulse.hpp"

namespace psfh {

// Approximate kernel-entry oracle Phi~(y,x): look up the k_n sample points
// nearest x, translate y by the local mean displacement of each, read the
// stored impulse responses there, and interpolate the readings back to x
// with a Gaussian RBF. Pure function of (y,x) after construction, so callers
// may evaluate concurrently.
class PsfKernelOracle {
public:
    PsfKernelOracle(std::shared_ptr<const ImpulseBatchSet> batches, int k_n = 10,
                    double c_rbf = 0.5)
        : batches_(std::move(batches)), k_n_(k_n), c_rbf_(c_rbf)
    {
        if (k_n_ < 1)
            throw ConfigError("PsfKernelOracle: k_n must be >= 1");
        if (c_rbf_ <= 0)
            throw ConfigError("PsfKernelOracle: c_rbf must be positive");
    }

    const ImpulseBatchSet& batches() const { return *batches_; }
    int k_n() const { return k_n_; }
    double c_rbf() const { return c_rbf_; }

    // Per-column state: everything that depends on x only. Tabulating a
    // column reuses one context for all y.
    struct ColumnContext {
        Vec2 x;
        double Vx = 0;
        Vec2 mux = Vec2::Zero();
        bool zero_column = false;
        std::vector<std::pair<int, int>> neighbors; // (node, batch)
    };

    ColumnContext column_context(const Vec2& x) const
    {
        const Grid& g = batches_->grid();
        if (!g.contains(x))
            throw NumericalError("kernel_entry: point outside domain");
        ColumnContext ctx;
        ctx.x = x;
        const ImpulseMoments& m = *batches_->moments;
        ctx.Vx = m.V_at(x);
        if (!(ctx.Vx > m.eps_V * m.V_max)) {
            ctx.zero_column = true; // negligible column; mu(x) is unreliable here
            return ctx;
        }
        ctx.mux = m.mu_at(x);
        ctx.neighbors = nearest_sample_points(*batches_->plan, x, k_n_);
        return ctx;
    }

    double kernel_entry(const Vec2& y, const ColumnContext& ctx) const
    {
        const Grid& g = batches_->grid();
        if (!g.contains(y))
            throw NumericalError("kernel_entry: point outside domain");
        if (ctx.zero_column)
            return 0.0;
        const ImpulseMoments& m = *batches_->moments;

        // translate, filter z_i outside the domain, read impulse responses
        Eigen::Matrix2Xd pts(2, ctx.neighbors.size());
        Eigen::VectorXd f(ctx.neighbors.size());
        int kept = 0;
        bool any_nonzero = false;
        for (const auto& [node, batch] : ctx.neighbors) {
            const Vec2 zi = y - ctx.mux + m.mu(node);
            if (!g.contains(zi))
                continue;
            f[kept] = ctx.Vx / m.V[node] * eval_impulse(*batches_, node, batch, zi);
            any_nonzero = any_nonzero || f[kept] != 0.0;
            pts.col(kept) = g.node(node);
            ++kept;
        }
        if (kept == 0 || !any_nonzero)
            return 0.0; // zero data interpolates to zero
        if (kept == 1)
            return f[0];

        // Gaussian RBF interpolation of (x_i, f_i) at x, scaled by the
        // diameter of the retained neighbor set
        double r0 = 0;
        for (int i = 0; i < kept; ++i)
            for (int j = i + 1; j < kept; ++j)
                r0 = std::max(r0, (pts.col(i) - pts.col(j)).norm());
        if (r0 == 0)
            return f[0];

        const double gamma = 0.5 * (c_rbf_ / r0) * (c_rbf_ / r0);
        Eigen::MatrixXd B(kept, kept);
        for (int i = 0; i < kept; ++i) {
            B(i, i) = 1.0;
            for (int j = i + 1; j < kept; ++j) {
                const double v = std::exp(-gamma * (pts.col(i) - pts.col(j)).squaredNorm());
                B(i, j) = v;
                B(j, i) = v;
            }
        }
        // tiny shift absorbs near-duplicate sample points at small c_rbf
        B.diagonal().array() += 1e-12 * B.trace() / kept;
        const Eigen::VectorXd c = B.ldlt().solve(f.head(kept));

        double val = 0;
        for (int i = 0; i < kept; ++i)
            val += c[i] * std::exp(-gamma * (pts.col(i) - ctx.x).squaredNorm());
        return val;
    }

    double kernel_entry(const Vec2& y, const Vec2& x) const
    {
        return kernel_entry(y, column_context(x));
    }

    // Phi~ at a pair of grid nodes; the H-matrix entry oracle.
    double entry(int i, int j) const
    {
        const Grid& g = batches_->grid();
        return kernel_entry(g.node(i), g.node(j));
    }

private:
    std::shared_ptr<const ImpulseBatchSet> batches_;
    int k_n_;
    double c_rbf_;
};

// Relative l2 (lumped-mass weighted) error of the approximate kernel column
// at x against the exact blur column, with a 0/0 guard for vanishing columns.
inline double column_error(const PsfKernelOracle& oracle, const BlurOperator& op, const Vec2& x)
{
    const Grid& g = op.grid();
    const Eigen::VectorXd& w = op.mass().weights();
    const auto ctx = oracle.column_context(x);
    double num = 0, den = 0;
    for (int i = 0; i < g.num_nodes(); ++i) {
        const Vec2 y = g.node(i);
        const double exact = op.kernel_entry(y, x);
        const double approx = oracle.kernel_entry(y, ctx);
        num += w[i] * (exact - approx) * (exact - approx);
        den += w[i] * exact * exact;
    }
    if (den == 0)
        return 0.0;
    return std::sqrt(num / den);
}

} // namespace psfh
