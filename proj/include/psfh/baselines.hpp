#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>

#include "psfh/operators.hpp"
#include "psfh/random.hpp"

namespace psfh {

struct LowRankApprox {
    Eigen::MatrixXd U; // N x r, orthonormal columns
    Eigen::VectorXd s; // singular values, descending
    Eigen::MatrixXd V; // N x r, orthonormal columns
    int rank = 0;
    long long applies_used = 0; // applies + transpose-applies spent on the sketch

    Eigen::MatrixXd dense() const { return U * s.asDiagonal() * V.transpose(); }

    Eigen::MatrixXd dense_truncated(int r) const
    {
        const int k = std::min(r, rank);
        return U.leftCols(k) * s.head(k).asDiagonal() * V.leftCols(k).transpose();
    }
};

enum class SketchTarget {
    Operator, // sketch A itself
    Kernel    // sketch M^{-1} A M^{-1}, the kernel matrix Phi
};

// Double-pass randomized SVD through matvec access only: r + oversample
// applies for the range sketch, the same number of transpose-applies for the
// second pass, and a small dense SVD. Counts land on the operator's counters.
inline LowRankApprox randomized_svd(const MatrixFreeOperator& op, int r, int oversample,
                                    std::uint64_t seed,
                                    SketchTarget target = SketchTarget::Operator)
{
    const int n = op.size();
    if (r < 0 || r + oversample > n)
        throw ConfigError("randomized_svd: rank plus oversampling exceeds dimension");

    const long long applies_before = op.apply_count() + op.transpose_apply_count();
    LowRankApprox out;
    if (r == 0) {
        out.U.resize(n, 0);
        out.s.resize(0);
        out.V.resize(n, 0);
        return out;
    }

    auto apply = [&](const Eigen::VectorXd& u) {
        if (target == SketchTarget::Operator)
            return Eigen::VectorXd(op.apply(u));
        return Eigen::VectorXd(op.mass().solve(op.apply(op.mass().solve(u))));
    };
    auto tapply = [&](const Eigen::VectorXd& u) {
        if (target == SketchTarget::Operator)
            return Eigen::VectorXd(op.transpose_apply(u));
        return Eigen::VectorXd(op.mass().solve(op.transpose_apply(op.mass().solve(u))));
    };

    const int k = r + oversample;
    std::mt19937_64 rng(seed);
    const Eigen::MatrixXd Omega = detail::gaussian_matrix(n, k, rng);

    Eigen::MatrixXd Y(n, k);
    for (int j = 0; j < k; ++j)
        Y.col(j) = apply(Omega.col(j));
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Y);
    const Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, k);

    // B^T = A^T Q, so A ~ Q B with B = Q^T A
    Eigen::MatrixXd Bt(n, k);
    for (int j = 0; j < k; ++j)
        Bt.col(j) = tapply(Q.col(j));

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Bt, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.rank = r;
    out.U = Q * svd.matrixV().leftCols(r);
    out.s = svd.singularValues().head(r);
    out.V = svd.matrixU().leftCols(r);
    out.applies_used = op.apply_count() + op.transpose_apply_count() - applies_before;
    return out;
}

// Exact relative Frobenius error against a dense reference, by column sweep
// over a matvec-capable approximation.
inline double frobenius_error(const Eigen::MatrixXd& dense_ref,
                              const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& approx)
{
    const int n = static_cast<int>(dense_ref.cols());
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    double num2 = 0;
    for (int j = 0; j < n; ++j) {
        e[j] = 1.0;
        num2 += (dense_ref.col(j) - approx(e)).squaredNorm();
        e[j] = 0.0;
    }
    const double den = dense_ref.norm();
    if (den == 0)
        return num2 == 0 ? 0.0 : 1.0;
    return std::sqrt(num2) / den;
}

inline double frobenius_error(const Eigen::MatrixXd& dense_ref, const Eigen::MatrixXd& approx)
{
    const double den = dense_ref.norm();
    if (den == 0)
        return approx.norm() == 0 ? 0.0 : 1.0;
    return (dense_ref - approx).norm() / den;
}

} // namespace psfh
