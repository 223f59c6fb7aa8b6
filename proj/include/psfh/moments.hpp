#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "psfh/operators.hpp"

namespace psfh {

// Ellipsoid { p : (p-center)^T shape^{-1} (p-center) <= tau^2 }, the a-priori
// support estimate for an impulse response with mean `center` and covariance
// `shape`.
struct SupportEllipsoid {
    Vec2 center;
    Mat2 shape; // SPD covariance
    double tau = 3.0;

    double mahalanobis2(const Vec2& p) const
    {
        const Vec2 d = p - center;
        const double det = shape(0, 0) * shape(1, 1) - shape(0, 1) * shape(1, 0);
        if (det <= 0)
            throw NumericalError("SupportEllipsoid: shape matrix not positive definite");
        const double q = (shape(1, 1) * d.x() * d.x() - 2 * shape(0, 1) * d.x() * d.y() +
                          shape(0, 0) * d.y() * d.y()) / det;
        return q;
    }

    bool contains(const Vec2& p) const { return mahalanobis2(p) <= tau * tau; }

    // Tight axis-aligned bounding box: center +- tau*sqrt(diag(shape)).
    void bounding_box(Vec2& lo, Vec2& hi) const
    {
        const Vec2 half(tau * std::sqrt(shape(0, 0)), tau * std::sqrt(shape(1, 1)));
        lo = center - half;
        hi = center + half;
    }
};

// Eigenvalues of a symmetric 2x2 matrix, ascending.
inline std::pair<double, double> symmetric_eigenvalues(const Mat2& S)
{
    const double tr = S(0, 0) + S(1, 1);
    const double gap = std::hypot(S(0, 0) - S(1, 1), 2 * S(0, 1));
    return {0.5 * (tr - gap), 0.5 * (tr + gap)};
}

// Per-node impulse-response moments: scaling factor V, mean mu, covariance
// Sigma, plus the validity mask from the V-threshold and Sigma-conditioning
// checks. mu and Sigma at invalid nodes are placeholders and must not be
// used.
struct ImpulseMoments {
    Grid grid;
    Eigen::VectorXd V;
    Eigen::VectorXd mu_x, mu_y;
    Eigen::VectorXd sig_xx, sig_xy, sig_yy; // Sigma symmetric, xy stored once
    std::vector<char> valid;
    double V_max = 0;
    double eps_V = 1e-5;
    double aspect_limit = 20.0;

    ImpulseMoments(const Grid& g) : grid(g) {}

    int num_valid() const
    {
        int n = 0;
        for (char c : valid) n += (c != 0);
        return n;
    }

    Vec2 mu(int i) const { return {mu_x[i], mu_y[i]}; }

    Mat2 sigma(int i) const
    {
        Mat2 S;
        S << sig_xx[i], sig_xy[i], sig_xy[i], sig_yy[i];
        return S;
    }

    // Bilinear interpolation of the moment fields, for probing at non-node
    // points. Node arguments reproduce nodal values exactly.
    double V_at(const Vec2& p) const { return GridFunction(grid, V).eval(p); }
    Vec2 mu_at(const Vec2& p) const
    {
        return {GridFunction(grid, mu_x).eval(p), GridFunction(grid, mu_y).eval(p)};
    }
};

// Compute V, mu, Sigma for all nodes simultaneously with exactly
// 1 + d + d(d+1)/2 = 6 transpose-applies: A^T applied to the constant,
// the two linear, and the three quadratic monomials, each Riesz-mapped
// through the lumped mass. Nodes failing V > eps_V*V_max, or whose Sigma
// has a non-positive eigenvalue or aspect ratio above `aspect_limit`,
// are marked invalid.
inline ImpulseMoments compute_moments(const MatrixFreeOperator& op, double eps_V = 1e-5,
                                      double aspect_limit = 20.0)
{
    const Grid& g = op.grid();
    const int n = g.num_nodes();

    Eigen::VectorXd C(n), L1(n), L2(n), Q11(n), Q12(n), Q22(n);
    for (int i = 0; i < n; ++i) {
        const Vec2 p = g.node(i);
        C[i] = 1.0;
        L1[i] = p.x();
        L2[i] = p.y();
        Q11[i] = p.x() * p.x();
        Q12[i] = p.x() * p.y();
        Q22[i] = p.y() * p.y();
    }

    const LumpedMass& mass = op.mass();
    auto riesz_tapply = [&](const Eigen::VectorXd& w) { return mass.solve(op.transpose_apply(w)); };

    ImpulseMoments m(g);
    m.eps_V = eps_V;
    m.aspect_limit = aspect_limit;
    m.V = riesz_tapply(C);
    const Eigen::VectorXd rL1 = riesz_tapply(L1);
    const Eigen::VectorXd rL2 = riesz_tapply(L2);
    const Eigen::VectorXd rQ11 = riesz_tapply(Q11);
    const Eigen::VectorXd rQ12 = riesz_tapply(Q12);
    const Eigen::VectorXd rQ22 = riesz_tapply(Q22);

    m.V_max = m.V.maxCoeff();
    m.mu_x.resize(n);
    m.mu_y.resize(n);
    m.sig_xx.resize(n);
    m.sig_xy.resize(n);
    m.sig_yy.resize(n);
    m.valid.assign(n, 0);

    const double v_floor = eps_V * m.V_max;
    for (int i = 0; i < n; ++i) {
        if (!(m.V[i] > v_floor)) {
            // placeholders; never used downstream
            m.mu_x[i] = g.node(i).x();
            m.mu_y[i] = g.node(i).y();
            m.sig_xx[i] = m.sig_xy[i] = m.sig_yy[i] = 0;
            continue;
        }
        m.mu_x[i] = rL1[i] / m.V[i];
        m.mu_y[i] = rL2[i] / m.V[i];
        m.sig_xx[i] = rQ11[i] / m.V[i] - m.mu_x[i] * m.mu_x[i];
        m.sig_xy[i] = rQ12[i] / m.V[i] - m.mu_x[i] * m.mu_y[i];
        m.sig_yy[i] = rQ22[i] / m.V[i] - m.mu_y[i] * m.mu_y[i];

        const auto [lmin, lmax] = symmetric_eigenvalues(m.sigma(i));
        if (lmin > 0 && std::sqrt(lmax / lmin) <= aspect_limit)
            m.valid[i] = 1;
    }
    return m;
}

inline SupportEllipsoid support_ellipsoid(const ImpulseMoments& m, int node, double tau = 3.0)
{
    if (node < 0 || node >= m.grid.num_nodes())
        throw ConfigError("support_ellipsoid: node index out of range");
    if (!m.valid[node])
        throw NumericalError("support_ellipsoid: node failed the moment validity checks");
    return SupportEllipsoid{m.mu(node), m.sigma(node), tau};
}

} // namespace psfh
