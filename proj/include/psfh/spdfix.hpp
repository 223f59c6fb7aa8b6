#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "psfh/hodlr.hpp"

namespace psfh {

struct SpdRepairReport {
    std::vector<double> flipped_eigenvalues; // all < eps_flip, ascending
    int update_rank = 0;
    double eps_flip = -0.1;
};

struct FlipOptions {
    int dense_threshold = 4096; // dense generalized eigensolver up to this size
    bool force_iterative = false;
    std::vector<double> shifts = {0.9, 0.5, 0.25}; // shift-invert schedule
    int lanczos_steps = 60;
    double residual_tol = 1e-8;
};

// A_sym plus the rank-k flip update W W^T kept alongside the H-matrix.
// to_dense()/matvec() realize A_sym + W W^T.
struct SpdRepair {
    HodlrMatrix A_sym;
    Eigen::MatrixXd W; // N x update_rank
    SpdRepairReport report;

    Eigen::VectorXd matvec(const Eigen::VectorXd& u) const
    {
        Eigen::VectorXd y = A_sym.matvec(u);
        if (W.cols() > 0)
            y += W * (W.transpose() * u);
        return y;
    }

    Eigen::MatrixXd to_dense() const
    {
        Eigen::MatrixXd D = A_sym.to_dense();
        if (W.cols() > 0)
            D += W * W.transpose();
        return D;
    }
};

namespace detail {

struct GenEigPair {
    double lambda;
    Eigen::VectorXd u; // R-normalized
};

// Shift-invert Lanczos on T = (A + mu R)^{-1} R, self-adjoint in the R inner
// product; eigenvalues of T are 1/(lambda + mu). Collects converged Ritz
// pairs with lambda < eps_flip across the shift schedule.
inline std::vector<GenEigPair> negative_pairs_iterative(const HodlrMatrix& A,
                                                        const HodlrMatrix& R, double eps_flip,
                                                        const FlipOptions& opt)
{
    const int n = A.size();
    std::vector<GenEigPair> found;

    auto r_dot = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        return a.dot(R.matvec(b));
    };
    auto already_found = [&](const Eigen::VectorXd& u) {
        for (const auto& p : found)
            if (std::abs(r_dot(p.u, u)) > 0.5)
                return true;
        return false;
    };

    for (double mu : opt.shifts) {
        const HodlrMatrix shifted = add(A, R.scaled(mu));
        HodlrFactorization fac(shifted);

        const int steps = std::min(opt.lanczos_steps, n);
        std::vector<Eigen::VectorXd> basis;
        Eigen::VectorXd alpha(steps), beta(steps);

        // deterministic start vector
        Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
        for (int i = 0; i < n; ++i)
            v[i] += std::sin(0.7 * i + 0.3);
        v /= std::sqrt(r_dot(v, v));
        basis.push_back(v);

        Eigen::VectorXd prev = Eigen::VectorXd::Zero(n);
        double beta_prev = 0;
        int m = 0;
        for (int k = 0; k < steps; ++k) {
            Eigen::VectorXd w = fac.solve(R.matvec(basis[k]));
            alpha[k] = r_dot(basis[k], w);
            w -= alpha[k] * basis[k];
            if (k > 0)
                w -= beta_prev * prev;
            // full reorthogonalization in the R inner product
            for (const auto& q : basis)
                w -= r_dot(q, w) * q;
            const double nb = std::sqrt(std::max(r_dot(w, w), 0.0));
            beta[k] = nb;
            m = k + 1;
            if (nb < 1e-13)
                break;
            prev = basis[k];
            beta_prev = nb;
            basis.push_back(w / nb);
        }

        Eigen::MatrixXd Tr = Eigen::MatrixXd::Zero(m, m);
        for (int k = 0; k < m; ++k) {
            Tr(k, k) = alpha[k];
            if (k + 1 < m) {
                Tr(k, k + 1) = beta[k];
                Tr(k + 1, k) = beta[k];
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Tr);
        for (int j = 0; j < m; ++j) {
            const double theta = es.eigenvalues()[j];
            if (theta == 0)
                continue;
            const double lambda = 1.0 / theta - mu; // theta = 1/(lambda + mu)
            if (lambda >= eps_flip)
                continue;
            Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
            for (int k = 0; k < m; ++k)
                u += es.eigenvectors()(k, j) * basis[k];
            u /= std::sqrt(r_dot(u, u));
            const Eigen::VectorXd resid = A.matvec(u) - lambda * R.matvec(u);
            if (resid.norm() > opt.residual_tol * (std::abs(lambda) + 1.0) * R.matvec(u).norm())
                continue;
            if (!already_found(u))
                found.push_back({lambda, u});
        }
    }
    std::sort(found.begin(), found.end(),
              [](const GenEigPair& a, const GenEigPair& b) { return a.lambda < b.lambda; });
    return found;
}

inline std::vector<GenEigPair> negative_pairs_dense(const HodlrMatrix& A, const HodlrMatrix& R,
                                                    double eps_flip)
{
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(A.to_dense(), R.to_dense());
    if (ges.info() != Eigen::Success)
        throw NumericalError("flip_negative_eigs: dense generalized eigensolver failed");
    std::vector<GenEigPair> found;
    for (int j = 0; j < A.size(); ++j) {
        const double lambda = ges.eigenvalues()[j];
        if (lambda < eps_flip)
            found.push_back({lambda, ges.eigenvectors().col(j)}); // already R-normalized
    }
    return found;
}

} // namespace detail

// Flip the generalized eigenvalues of (A_sym, R) below eps_flip to their
// absolute values via the low-rank update A + 2*sum |lambda_j| (R u_j)(R u_j)^T
// with R-orthonormal u_j. Leaves the R-orthogonal complement untouched; the
// repaired A + R is positive definite since every generalized eigenvalue of
// the sum is then >= 1 + eps_flip > 0.
inline SpdRepair flip_negative_eigs(const HodlrMatrix& A_sym, const HodlrMatrix& R,
                                    double eps_flip, const FlipOptions& opt = {})
{
    if (!(eps_flip > -1.0) || !(eps_flip <= 0.0))
        throw ConfigError("flip_negative_eigs: eps_flip must lie in (-1, 0]");

    const bool dense = !opt.force_iterative && A_sym.size() <= opt.dense_threshold;
    const auto pairs = dense ? detail::negative_pairs_dense(A_sym, R, eps_flip)
                             : detail::negative_pairs_iterative(A_sym, R, eps_flip, opt);

    SpdRepair rep;
    rep.A_sym = A_sym;
    rep.report.eps_flip = eps_flip;
    rep.report.update_rank = static_cast<int>(pairs.size());
    rep.W.resize(A_sym.size(), pairs.size());
    for (size_t j = 0; j < pairs.size(); ++j) {
        rep.report.flipped_eigenvalues.push_back(pairs[j].lambda);
        rep.W.col(j) = std::sqrt(2.0 * std::abs(pairs[j].lambda)) * R.matvec(pairs[j].u);
    }
    return rep;
}

// Factorized preconditioner for P = B + W W^T with B in HODLR form. The
// flip term is folded in via Woodbury on top of the HODLR factorization of
// B; if B itself has an indefinite leaf, falls back to folding W W^T into
// the H-matrix and factorizing the (SPD) sum.
class RepairedFactorization {
public:
    RepairedFactorization(const HodlrMatrix& B, const Eigen::MatrixXd& W)
    {
        try {
            base_ = std::make_unique<HodlrFactorization>(B);
            if (W.cols() > 0) {
                W_ = W;
                FW_ = base_->solve(W);
                Eigen::MatrixXd cap =
                    Eigen::MatrixXd::Identity(W.cols(), W.cols()) + W.transpose() * FW_;
                cap_lu_.compute(cap);
            }
        } catch (const NumericalError&) {
            // B indefinite; factor the repaired sum directly
            HodlrMatrix folded = add(B, HodlrMatrix::from_lowrank(W, W, B.tree(), B.eps_aca()));
            base_ = std::make_unique<HodlrFactorization>(folded);
            used_fold_fallback_ = true;
        }
    }

    bool used_fold_fallback() const { return used_fold_fallback_; }

    Eigen::VectorXd solve(const Eigen::VectorXd& b) const
    {
        Eigen::VectorXd y = base_->solve(b);
        if (!used_fold_fallback_ && W_.cols() > 0)
            y -= FW_ * cap_lu_.solve(W_.transpose() * y);
        return y;
    }

private:
    std::unique_ptr<HodlrFactorization> base_;
    Eigen::MatrixXd W_, FW_;
    Eigen::PartialPivLU<Eigen::MatrixXd> cap_lu_;
    bool used_fold_fallback_ = false;
};

} // namespace psfh
