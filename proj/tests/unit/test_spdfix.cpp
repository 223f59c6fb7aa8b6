#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "psfh/pipeline.hpp"
#include "psfh/spdfix.hpp"
#include "support/oracles.hpp"

using namespace psfh;
using Catch::Approx;

TEST_CASE("symmetrize", "[spdfix]")
{
    const Grid g = Grid::unit_square(9, 9);
    const int n = g.num_nodes();
    const auto tree = build_cluster_tree(g, 16);
    std::mt19937_64 rng(31);

    SECTION("already symmetric matrices are unchanged up to roundoff")
    {
        const Eigen::MatrixXd S = oracles::random_spd(n, rng);
        const HodlrMatrix H = HodlrMatrix::from_dense(S, tree, 1e-12);
        const HodlrMatrix Hs = symmetrize(H);
        const Eigen::VectorXd u = psfh::detail::gaussian_vector(n, rng);
        REQUIRE((Hs.matvec(u) - H.matvec(u)).norm() <= 1e-12 * H.matvec(u).norm());
    }
    SECTION("antisymmetric matrices are annihilated")
    {
        const Eigen::MatrixXd X = psfh::detail::gaussian_matrix(n, n, rng);
        const Eigen::MatrixXd A = X - X.transpose();
        const HodlrMatrix H = HodlrMatrix::from_dense(A, tree, 1e-12);
        const Eigen::MatrixXd Sd = symmetrize(H).to_dense();
        REQUIRE(Sd.norm() <= 1e-11 * A.norm());
    }
    SECTION("PSF blur H-matrix: symmetry defect drops to machine level")
    {
        const BlurOperator op(g, 0.5, 0.0, 0.0225, 0.09);
        const PsfPipeline pipe = build_psf_pipeline(op, PsfSpec{}, 5, 3);
        const HodlrMatrix Phi_H = build_kernel_hmatrix(*pipe.oracle, tree, HmatrixSpec{});
        const HodlrMatrix A_H = sandwich_mass(Phi_H, op.mass());

        const Eigen::MatrixXd before = A_H.to_dense();
        const double defect_before = (before - before.transpose()).norm() / before.norm();
        const Eigen::MatrixXd after = symmetrize(A_H).to_dense();
        const double defect_after = (after - after.transpose()).norm() / after.norm();
        REQUIRE(defect_after <= 1e-12);
        REQUIRE(defect_after <= defect_before);
    }
}

TEST_CASE("eigenvalue flipping on explicit matrices", "[spdfix]")
{
    const Grid g = Grid::unit_square(4, 4); // 16 dof
    const auto tree = build_cluster_tree(g, 4);
    const int n = g.num_nodes();

    SECTION("PSD input is returned unchanged")
    {
        std::mt19937_64 rng(5);
        const Eigen::MatrixXd S = oracles::random_spd(n, rng, 0.2, 4.0);
        const HodlrMatrix A = HodlrMatrix::from_dense(S, tree, 1e-12);
        const HodlrMatrix R = HodlrMatrix::from_dense(Eigen::MatrixXd::Identity(n, n), tree, 1e-12);
        const SpdRepair rep = flip_negative_eigs(A, R, -0.1);
        REQUIRE(rep.report.update_rank == 0);
        REQUIRE(rep.report.flipped_eigenvalues.empty());
        REQUIRE((rep.to_dense() - S).norm() <= 1e-12 * S.norm());
    }
    SECTION("diagonal example: diag(-1, 3, 1...) flips to diag(1, 3, 1...)")
    {
        Eigen::VectorXd d = Eigen::VectorXd::Ones(n);
        d[0] = -1.0;
        d[1] = 3.0;
        const HodlrMatrix A = HodlrMatrix::from_dense(d.asDiagonal(), tree, 1e-12);
        const HodlrMatrix R = HodlrMatrix::from_dense(Eigen::MatrixXd::Identity(n, n), tree, 1e-12);
        const SpdRepair rep = flip_negative_eigs(A, R, -0.1);
        REQUIRE(rep.report.update_rank == 1);
        REQUIRE(rep.report.flipped_eigenvalues[0] == Approx(-1.0));
        Eigen::VectorXd expected = d;
        expected[0] = 1.0;
        REQUIRE((rep.to_dense() - Eigen::MatrixXd(expected.asDiagonal())).norm() <= 1e-10);
    }
    SECTION("eps_flip outside (-1, 0] is rejected")
    {
        const HodlrMatrix I_H =
            HodlrMatrix::from_dense(Eigen::MatrixXd::Identity(n, n), tree, 1e-12);
        REQUIRE_THROWS_AS(flip_negative_eigs(I_H, I_H, -1.0), ConfigError);
        REQUIRE_THROWS_AS(flip_negative_eigs(I_H, I_H, 0.5), ConfigError);
    }
}

TEST_CASE("flip repairs a coarse PSF blur Hessian", "[spdfix]")
{
    const Grid g = Grid::unit_square(17, 17);
    const int n = g.num_nodes();
    const auto tree = build_cluster_tree(g, 32);
    const BlurOperator op(g, 0.5, 0.0, 0.0225, 0.09);
    // deliberately coarse approximation (one batch) against a weak
    // regularization, so the pencil really goes indefinite
    const PsfPipeline pipe = build_psf_pipeline(op, PsfSpec{}, 1, 1);
    const HodlrMatrix A_sym =
        symmetrize(sandwich_mass(build_kernel_hmatrix(*pipe.oracle, tree, HmatrixSpec{}), op.mass()));
    const RegularizationOperator Rop(g, 1e-7, 1e-7);
    const HodlrMatrix R_H = HodlrMatrix::from_dense(Rop.dense(), tree, 1e-10);

    const double eps_flip = -0.1;
    const SpdRepair rep = flip_negative_eigs(A_sym, R_H, eps_flip);
    const Eigen::MatrixXd Ad = A_sym.to_dense();
    const Eigen::MatrixXd Rd = R_H.to_dense();
    const Eigen::MatrixXd Ad_rep = rep.to_dense();

    SECTION("post-repair pencil is bounded below by 1 + eps_flip")
    {
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(Ad_rep + Rd, Rd);
        REQUIRE(ges.eigenvalues().minCoeff() >= 1 + eps_flip - 1e-8);
    }
    SECTION("flipped directions land on |lambda|, untouched ones stay put")
    {
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(Ad, Rd);
        const auto& vals = ges.eigenvalues();
        const auto& vecs = ges.eigenvectors();
        int flipped_seen = 0;
        for (int j = 0; j < n; ++j) {
            const Eigen::VectorXd u = vecs.col(j);
            const double rayleigh = u.dot(Ad_rep * u) / u.dot(Rd * u);
            if (vals[j] < eps_flip) {
                ++flipped_seen;
                REQUIRE(rayleigh == Approx(std::abs(vals[j])).epsilon(1e-8));
            } else {
                REQUIRE((Ad_rep * u - Ad * u).norm() <=
                        1e-8 * (Ad.norm() + 1.0) * u.norm());
            }
        }
        REQUIRE(flipped_seen == rep.report.update_rank);
        REQUIRE(flipped_seen > 0); // the coarse approximation really is indefinite
    }
    SECTION("post-repair sum admits a dense Cholesky")
    {
        Eigen::LLT<Eigen::MatrixXd> llt(Ad_rep + Rd);
        REQUIRE(llt.info() == Eigen::Success);
    }
    SECTION("repaired factorization solves P = A_rep + R")
    {
        const HodlrMatrix B = add(rep.A_sym, R_H);
        const RepairedFactorization P(B, rep.W);
        std::mt19937_64 rng(3);
        const Eigen::VectorXd b = psfh::detail::gaussian_vector(n, rng);
        const Eigen::VectorXd x = P.solve(b);
        REQUIRE(((Ad_rep + Rd) * x - b).norm() <= 1e-7 * b.norm());
    }
}

TEST_CASE("iterative flip path matches the dense path", "[spdfix]")
{
    // synthetic pencil with prescribed generalized eigenvalues
    const Grid g = Grid::unit_square(8, 8);
    const int n = g.num_nodes();
    const auto tree = build_cluster_tree(g, 16);
    std::mt19937_64 rng(17);

    const Eigen::MatrixXd R = oracles::random_spd(n, rng, 0.5, 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_r(R);
    const Eigen::MatrixXd R_half = es_r.operatorSqrt();

    Eigen::VectorXd lambda = Eigen::VectorXd::LinSpaced(n, 0.01, 3.0);
    lambda[0] = -0.9;
    lambda[1] = -0.4;
    lambda[2] = -0.05; // above eps_flip, must not flip
    const Eigen::MatrixXd Q =
        Eigen::HouseholderQR<Eigen::MatrixXd>(psfh::detail::gaussian_matrix(n, n, rng))
            .householderQ();
    const Eigen::MatrixXd A_dense =
        R_half * Q * lambda.asDiagonal() * Q.transpose() * R_half;

    const HodlrMatrix A = HodlrMatrix::from_dense(A_dense, tree, 1e-12);
    const HodlrMatrix R_H = HodlrMatrix::from_dense(R, tree, 1e-12);

    const SpdRepair dense_rep = flip_negative_eigs(A, R_H, -0.1);
    FlipOptions opt;
    opt.force_iterative = true;
    opt.lanczos_steps = 50;
    const SpdRepair iter_rep = flip_negative_eigs(A, R_H, -0.1, opt);

    REQUIRE(dense_rep.report.update_rank == 2);
    REQUIRE(iter_rep.report.update_rank == 2);
    for (int j = 0; j < 2; ++j)
        REQUIRE(iter_rep.report.flipped_eigenvalues[j] ==
                Approx(dense_rep.report.flipped_eigenvalues[j]).epsilon(1e-6));
    REQUIRE((iter_rep.to_dense() - dense_rep.to_dense()).norm() <=
            1e-5 * dense_rep.to_dense().norm());
}
