#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "psfh/errors.hpp"
#include "psfh/random.hpp"

namespace psfh {

using ApplyFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct PcgResult {
    int iterations = 0;
    std::vector<double> residual_history; // ||r_k||_2, length iterations + 1
    std::vector<double> error_history;    // ||x_k - ref||_2 when a reference is given
    bool converged = false;
    Eigen::VectorXd x;
};

// Preconditioned conjugate gradient. Terminates on the preconditioned
// residual norm sqrt(r^T z) <= tol * sqrt(r0^T z0), or, when a reference
// solution is supplied, on ||x_k - ref|| <= tol * ||ref||. The
// preconditioner is probed for symmetry on a few random pairs up front.
inline PcgResult pcg(const ApplyFn& apply_A, const ApplyFn& apply_Pinv, const Eigen::VectorXd& b,
                     double tol, int max_iter, const Eigen::VectorXd* reference = nullptr)
{
    const int n = static_cast<int>(b.size());
    {
        std::mt19937_64 rng(0x5eed);
        for (int probe = 0; probe < 3; ++probe) {
            const Eigen::VectorXd u = detail::gaussian_vector(n, rng);
            const Eigen::VectorXd w = detail::gaussian_vector(n, rng);
            const double uv = w.dot(apply_Pinv(u));
            const double vu = u.dot(apply_Pinv(w));
            if (std::abs(uv - vu) > 1e-8 * (std::abs(uv) + std::abs(vu) + 1e-30))
                throw NumericalError("pcg: preconditioner is not symmetric");
        }
    }

    PcgResult res;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd r = b;
    Eigen::VectorXd z = apply_Pinv(r);
    Eigen::VectorXd p = z;
    double rz = r.dot(z);
    const double stop_rz = tol * tol * std::abs(rz);
    const double ref_norm = reference ? reference->norm() : 0.0;

    res.residual_history.push_back(r.norm());
    if (reference)
        res.error_history.push_back((x - *reference).norm());

    auto done = [&]() {
        if (reference)
            return res.error_history.back() <= tol * ref_norm;
        return std::abs(rz) <= stop_rz;
    };

    res.converged = done();
    for (int k = 0; k < max_iter && !res.converged; ++k) {
        const Eigen::VectorXd Ap = apply_A(p);
        const double pAp = p.dot(Ap);
        if (pAp <= 0)
            throw NumericalError("pcg: operator not positive definite (p^T A p <= 0)");
        const double alpha = rz / pAp;
        x += alpha * p;
        r -= alpha * Ap;
        z = apply_Pinv(r);
        const double rz_new = r.dot(z);

        res.iterations = k + 1;
        res.residual_history.push_back(r.norm());
        if (reference)
            res.error_history.push_back((x - *reference).norm());

        p = z + (rz_new / rz) * p;
        rz = rz_new;
        res.converged = done();
    }
    res.x = std::move(x);
    return res;
}

// Eigenvalues of P^{-1} A for symmetric A and SPD P, descending. Dense,
// desk-scale diagnostic used for condition numbers and clustering metrics.
inline std::vector<double> generalized_eig_spectrum(const Eigen::MatrixXd& A,
                                                    const Eigen::MatrixXd& P)
{
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(A, P);
    if (ges.info() != Eigen::Success)
        throw NumericalError("generalized_eig_spectrum: eigensolver failed");
    std::vector<double> eigs(ges.eigenvalues().data(),
                             ges.eigenvalues().data() + ges.eigenvalues().size());
    std::reverse(eigs.begin(), eigs.end());
    return eigs;
}

// Assemble a matrix-free operator densely by applying it to unit vectors.
inline Eigen::MatrixXd densify(const ApplyFn& apply, int n)
{
    Eigen::MatrixXd A(n, n);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n; ++j) {
        e[j] = 1.0;
        A.col(j) = apply(e);
        e[j] = 0.0;
    }
    return A;
}

} // namespace psfh
