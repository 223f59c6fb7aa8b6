#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <atomic>
#include <cmath>
#include <functional>
#include <memory>

#include "psfh/grid.hpp"

namespace psfh {

// Matrix-free operator A mapping primal coefficient vectors to dual vectors,
// with apply/transpose-apply counters. Counting is the contract the whole
// approximation pipeline is measured against, so the counters live here and
// are bumped exactly once per (transpose-)apply.
class MatrixFreeOperator {
public:
    explicit MatrixFreeOperator(const Grid& grid) : grid_(grid), mass_(grid) {}
    virtual ~MatrixFreeOperator() = default;

    const Grid& grid() const { return grid_; }
    const LumpedMass& mass() const { return mass_; }
    int size() const { return grid_.num_nodes(); }

    Eigen::VectorXd apply(const Eigen::VectorXd& u) const
    {
        check_length(u);
        ++n_apply_;
        return apply_impl(u);
    }

    Eigen::VectorXd transpose_apply(const Eigen::VectorXd& w) const
    {
        check_length(w);
        ++n_transpose_apply_;
        return transpose_apply_impl(w);
    }

    long long apply_count() const { return n_apply_.load(); }
    long long transpose_apply_count() const { return n_transpose_apply_.load(); }
    void reset_counts() const { n_apply_ = 0; n_transpose_apply_ = 0; }

protected:
    virtual Eigen::VectorXd apply_impl(const Eigen::VectorXd& u) const = 0;
    virtual Eigen::VectorXd transpose_apply_impl(const Eigen::VectorXd& w) const = 0;

private:
    void check_length(const Eigen::VectorXd& v) const
    {
        if (v.size() != grid_.num_nodes())
            throw ConfigError("operator apply: vector length does not match grid");
    }

    Grid grid_;
    LumpedMass mass_;
    mutable std::atomic<long long> n_apply_{0};
    mutable std::atomic<long long> n_transpose_apply_{0};
};

namespace detail {

// Neumann 5-point stiffness K = D^T W D assembled edge-by-edge with
// trapezoidal transverse weights. Symmetric PSD, K*1 = 0.
inline Eigen::SparseMatrix<double> stiffness_matrix(const Grid& g)
{
    using T = Eigen::Triplet<double>;
    std::vector<T> trips;
    trips.reserve(8 * g.num_nodes());
    auto add_edge = [&trips](int i, int j, double w) {
        trips.emplace_back(i, i, w);
        trips.emplace_back(j, j, w);
        trips.emplace_back(i, j, -w);
        trips.emplace_back(j, i, -w);
    };
    for (int iy = 0; iy < g.ny(); ++iy) {
        const double ly = (iy == 0 || iy == g.ny() - 1) ? 0.5 : 1.0;
        for (int ix = 0; ix + 1 < g.nx(); ++ix)
            add_edge(g.flat_index(ix, iy), g.flat_index(ix + 1, iy), ly * g.hy() / g.hx());
    }
    for (int ix = 0; ix < g.nx(); ++ix) {
        const double lx = (ix == 0 || ix == g.nx() - 1) ? 0.5 : 1.0;
        for (int iy = 0; iy + 1 < g.ny(); ++iy)
            add_edge(g.flat_index(ix, iy), g.flat_index(ix, iy + 1), lx * g.hx() / g.hy());
    }
    Eigen::SparseMatrix<double> K(g.num_nodes(), g.num_nodes());
    K.setFromTriplets(trips.begin(), trips.end());
    return K;
}

// First-order upwind advection matrix G with (G c)_i ~ (v . grad c)(p_i).
// Where the upwind neighbor falls outside the grid the term is dropped
// (zero-gradient inflow).
inline Eigen::SparseMatrix<double>
upwind_advection_matrix(const Grid& g, const std::function<Vec2(const Vec2&)>& velocity)
{
    using T = Eigen::Triplet<double>;
    std::vector<T> trips;
    trips.reserve(5 * g.num_nodes());
    for (int iy = 0; iy < g.ny(); ++iy) {
        for (int ix = 0; ix < g.nx(); ++ix) {
            const int i = g.flat_index(ix, iy);
            const Vec2 v = velocity(g.node(i));
            if (v.x() > 0 && ix > 0) {
                trips.emplace_back(i, i, v.x() / g.hx());
                trips.emplace_back(i, g.flat_index(ix - 1, iy), -v.x() / g.hx());
            } else if (v.x() < 0 && ix + 1 < g.nx()) {
                trips.emplace_back(i, i, -v.x() / g.hx());
                trips.emplace_back(i, g.flat_index(ix + 1, iy), v.x() / g.hx());
            }
            if (v.y() > 0 && iy > 0) {
                trips.emplace_back(i, i, v.y() / g.hy());
                trips.emplace_back(i, g.flat_index(ix, iy - 1), -v.y() / g.hy());
            } else if (v.y() < 0 && iy + 1 < g.ny()) {
                trips.emplace_back(i, i, -v.y() / g.hy());
                trips.emplace_back(i, g.flat_index(ix, iy + 1), v.y() / g.hy());
            }
        }
    }
    Eigen::SparseMatrix<double> G(g.num_nodes(), g.num_nodes());
    G.setFromTriplets(trips.begin(), trips.end());
    return G;
}

} // namespace detail

// Spatially varying blur with a closed-form kernel: a rotated anisotropic
// Gaussian blob modulated by a bump g that vanishes on the domain boundary,
// with a cosine/sine ripple of strength `a` controlling how non-Gaussian
// (and, for a > 1, how negative) the kernel is. The exact kernel makes
// desk-scale error measurement possible; apply() is nodal quadrature of the
// kernel, i.e. A = M Phi M with lumped M.
class BlurOperator : public MatrixFreeOperator {
public:
    BlurOperator(const Grid& grid, double L, double a, double c1, double c2)
        : MatrixFreeOperator(grid), L_(L), a_(a), c1_(c1), c2_(c2)
    {
        if (L <= 0 || c1 <= 0 || c2 <= 0)
            throw ConfigError("BlurOperator: L, c1, c2 must be positive");
        if (grid.num_nodes() <= dense_storage_limit) {
            Phi_ = assemble_dense_kernel();
            have_dense_ = true;
        }
    }

    static constexpr int dense_storage_limit = 66 * 66;

    double L() const { return L_; }
    double a() const { return a_; }

    double kernel_entry(const Vec2& y, const Vec2& x) const
    {
        const Grid& g = grid();
        const double xs = (x.x() - g.x_min()) / (g.x_max() - g.x_min());
        const double ys = (x.y() - g.y_min()) / (g.y_max() - g.y_min());
        const double gx = xs * (1 - xs) * ys * (1 - ys);
        if (gx == 0.0)
            return 0.0;
        const double theta = (xs + ys) * M_PI / 2.0;
        const double ct = std::cos(theta), st = std::sin(theta);
        const Vec2 dyx = y - x;
        const double h1 = ct * dyx.x() - st * dyx.y();
        const double h2 = st * dyx.x() + ct * dyx.y();
        const double quad = h1 * h1 / (L_ * L_ * c1_) + h2 * h2 / (L_ * L_ * c2_);
        const double ripple = std::cos(h1 / std::sqrt(c1_ / 2)) * std::sin(h2 / std::sqrt(c2_ / 2));
        return (1.0 - a_ * ripple) * gx * std::exp(-0.5 * quad);
    }

    // Dense kernel matrix Phi_ij = Phi(p_i, p_j); desk-scale oracle.
    Eigen::MatrixXd dense_kernel() const
    {
        if (have_dense_)
            return Phi_;
        return assemble_dense_kernel();
    }

protected:
    Eigen::VectorXd apply_impl(const Eigen::VectorXd& u) const override
    {
        return quadrature_apply(u, /*transposed=*/false);
    }
    Eigen::VectorXd transpose_apply_impl(const Eigen::VectorXd& w) const override
    {
        return quadrature_apply(w, /*transposed=*/true);
    }

private:
    Eigen::MatrixXd assemble_dense_kernel() const
    {
        const int n = size();
        Eigen::MatrixXd Phi(n, n);
        for (int j = 0; j < n; ++j) {
            const Vec2 xj = grid().node(j);
            for (int i = 0; i < n; ++i)
                Phi(i, j) = kernel_entry(grid().node(i), xj);
        }
        return Phi;
    }

    Eigen::VectorXd quadrature_apply(const Eigen::VectorXd& u, bool transposed) const
    {
        const Eigen::VectorXd mu = mass().apply(u);
        Eigen::VectorXd out;
        if (have_dense_)
            out = transposed ? Eigen::VectorXd(Phi_.transpose() * mu) : Eigen::VectorXd(Phi_ * mu);
        else {
            const int n = size();
            out = Eigen::VectorXd::Zero(n);
            for (int j = 0; j < n; ++j) {
                const Vec2 xj = grid().node(j);
                double acc = 0;
                for (int i = 0; i < n; ++i) {
                    const Vec2 yi = grid().node(i);
                    acc += (transposed ? kernel_entry(xj, yi) : kernel_entry(yi, xj)) * mu[i];
                }
                out[j] = acc;
            }
        }
        return mass().apply(out);
    }

    double L_, a_, c1_, c2_;
    Eigen::MatrixXd Phi_;
    bool have_dense_ = false;
};

// Second-order regularization R = delta*M + gamma*K (SPD, 5-point sparse).
class RegularizationOperator {
public:
    RegularizationOperator(const Grid& grid, double gamma, double delta)
        : grid_(grid), mass_(grid), gamma_(gamma), delta_(delta)
    {
        if (gamma <= 0 || delta <= 0)
            throw ConfigError("RegularizationOperator: gamma and delta must be positive");
        Eigen::SparseMatrix<double> M(grid.num_nodes(), grid.num_nodes());
        M.setIdentity();
        for (int i = 0; i < grid.num_nodes(); ++i)
            M.coeffRef(i, i) = mass_.weights()[i];
        R_ = delta_ * M + gamma_ * detail::stiffness_matrix(grid);
    }

    const Grid& grid() const { return grid_; }
    double gamma() const { return gamma_; }
    double delta() const { return delta_; }
    const Eigen::SparseMatrix<double>& matrix() const { return R_; }

    Eigen::VectorXd apply(const Eigen::VectorXd& u) const { return R_ * u; }

    Eigen::MatrixXd dense() const { return Eigen::MatrixXd(R_); }

    // Factorized solver for REG preconditioning.
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> make_solver() const
    {
        auto llt = std::make_shared<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>>(R_);
        if (llt->info() != Eigen::Success)
            throw NumericalError("RegularizationOperator: factorization failed");
        return [llt](const Eigen::VectorXd& b) { return llt->solve(b); };
    }

private:
    Grid grid_;
    LumpedMass mass_;
    double gamma_, delta_;
    Eigen::SparseMatrix<double> R_;
};

// Gauss-Newton data-misfit Hessian of the advection-diffusion initial
// condition inverse problem: apply(q) = beta * F^T M F q, where F advances
// q to time T by operator-split steps (explicit upwind advection, implicit
// Euler diffusion with no-flux boundary) and F^T is the exact discrete
// adjoint (reversed transposed steps). Symmetric positive semi-definite by
// construction.
class AdvDiffHessian : public MatrixFreeOperator {
public:
    AdvDiffHessian(const Grid& grid, double kappa, double T, int n_steps, double omega,
                   double noise_precision,
                   std::function<Vec2(const Vec2&)> velocity = nullptr)
        : MatrixFreeOperator(grid), kappa_(kappa), T_(T), n_steps_(n_steps), omega_(omega),
          noise_precision_(noise_precision)
    {
        if (kappa <= 0)
            throw ConfigError("AdvDiffHessian: kappa must be positive");
        if (T <= 0 || n_steps < 1)
            throw ConfigError("AdvDiffHessian: T must be positive and n_steps >= 1");
        if (noise_precision <= 0)
            throw ConfigError("AdvDiffHessian: noise_precision must be positive");

        if (velocity)
            velocity_ = std::move(velocity);
        else {
            // rigid rotation about the domain center; divergence-free
            const Vec2 c(0.5 * (grid.x_min() + grid.x_max()), 0.5 * (grid.y_min() + grid.y_max()));
            const double om = omega_;
            velocity_ = [c, om](const Vec2& p) {
                return Vec2(-om * (p.y() - c.y()), om * (p.x() - c.x()));
            };
        }

        dt_ = T_ / n_steps_;
        double cfl = 0;
        for (int i = 0; i < grid.num_nodes(); ++i) {
            const Vec2 v = velocity_(grid.node(i));
            cfl = std::max(cfl, std::abs(v.x()) / grid.hx() + std::abs(v.y()) / grid.hy());
        }
        if (dt_ * cfl > 1.0)
            throw ConfigError("AdvDiffHessian: advective CFL violated; increase n_steps (need dt <= " +
                              std::to_string(1.0 / cfl) + ")");

        G_ = detail::upwind_advection_matrix(grid, velocity_);
        Gt_ = Eigen::SparseMatrix<double>(G_.transpose());
        const Eigen::SparseMatrix<double> K = detail::stiffness_matrix(grid);
        Eigen::SparseMatrix<double> S = kappa_ * dt_ * K;
        for (int i = 0; i < grid.num_nodes(); ++i)
            S.coeffRef(i, i) += mass().weights()[i];
        step_llt_.compute(S);
        if (step_llt_.info() != Eigen::Success)
            throw NumericalError("AdvDiffHessian: diffusion step factorization failed");
    }

    double kappa() const { return kappa_; }
    double final_time() const { return T_; }
    int n_steps() const { return n_steps_; }
    double noise_precision() const { return noise_precision_; }
    const std::function<Vec2(const Vec2&)>& velocity() const { return velocity_; }

    // q -> c(.,T)
    Eigen::VectorXd forward_solve(const Eigen::VectorXd& q) const
    {
        Eigen::VectorXd c = q;
        for (int k = 0; k < n_steps_; ++k) {
            c -= dt_ * (G_ * c);
            c = step_llt_.solve(mass().apply(c));
        }
        return c;
    }

    // M-adjoint of forward_solve: <F q, w>_M == <q, adjoint_solve(w)>_M
    Eigen::VectorXd adjoint_solve(const Eigen::VectorXd& w) const
    {
        Eigen::VectorXd a = mass().apply(w);
        for (int k = 0; k < n_steps_; ++k) {
            a = mass().apply(step_llt_.solve(a));
            a -= dt_ * (Gt_ * a);
        }
        return mass().solve(a);
    }

protected:
    Eigen::VectorXd apply_impl(const Eigen::VectorXd& u) const override
    {
        // beta * F^T M F u, assembled from the same step kernels
        Eigen::VectorXd a = mass().apply(forward_solve(u));
        for (int k = 0; k < n_steps_; ++k) {
            a = mass().apply(step_llt_.solve(a));
            a -= dt_ * (Gt_ * a);
        }
        return noise_precision_ * a;
    }
    Eigen::VectorXd transpose_apply_impl(const Eigen::VectorXd& w) const override
    {
        return apply_impl(w); // symmetric
    }

private:
    double kappa_, T_;
    int n_steps_;
    double omega_;
    double noise_precision_;
    double dt_ = 0;
    std::function<Vec2(const Vec2&)> velocity_;
    Eigen::SparseMatrix<double> G_, Gt_;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> step_llt_;
};

} // namespace psfh
