#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <string>
#include <vector>

#include "psfh/baselines.hpp"
#include "psfh/pipeline.hpp"
#include "psfh/solver.hpp"
#include "psfh/spdfix.hpp"

namespace psfh {

inline Grid make_grid(const ExperimentConfig& c)
{
    return Grid(c.grid.nx, c.grid.ny, c.grid.x_min, c.grid.x_max, c.grid.y_min, c.grid.y_max);
}

inline BlurOperator make_blur(const ExperimentConfig& c, double L_override = -1,
                              double a_override = std::nan(""))
{
    if (c.op.type != "blur")
        throw ConfigError("operator.type: this experiment needs a blur operator");
    const double L = L_override > 0 ? L_override : c.op.L;
    const double a = std::isnan(a_override) ? c.op.a : a_override;
    return BlurOperator(make_grid(c), L, a, c.op.c1, c.op.c2);
}

// Checkerboard initial condition on the unit reference square.
inline Eigen::VectorXd checkerboard(const Grid& g, int tiles = 3)
{
    Eigen::VectorXd q(g.num_nodes());
    for (int i = 0; i < g.num_nodes(); ++i) {
        const Vec2 p = g.node(i);
        const double xs = (p.x() - g.x_min()) / (g.x_max() - g.x_min());
        const double ys = (p.y() - g.y_min()) / (g.y_max() - g.y_min());
        const int cx = std::min(static_cast<int>(xs * tiles), tiles - 1);
        const int cy = std::min(static_cast<int>(ys * tiles), tiles - 1);
        q[i] = ((cx + cy) % 2 == 0) ? 1.0 : 0.0;
    }
    return q;
}

// noise_precision = 1/(noise * max|obs|)^2 with obs the final-time state of
// the checkerboard initial condition.
inline double calibrate_noise_precision(const Grid& g, const OperatorSpec& op)
{
    AdvDiffHessian probe(g, op.kappa, op.T, op.n_steps, op.omega, 1.0);
    const Eigen::VectorXd obs = probe.forward_solve(checkerboard(g));
    const double scale = op.noise * obs.cwiseAbs().maxCoeff();
    if (scale <= 0)
        throw NumericalError("calibrate_noise_precision: degenerate observation");
    return 1.0 / (scale * scale);
}

inline AdvDiffHessian make_advdiff(const ExperimentConfig& c)
{
    if (c.op.type != "advdiff")
        throw ConfigError("operator.type: this experiment needs an advdiff operator");
    const Grid g = make_grid(c);
    return AdvDiffHessian(g, c.op.kappa, c.op.T, c.op.n_steps, c.op.omega,
                          calibrate_noise_precision(g, c.op));
}

// ---------------------------------------------------------------------------
// blur-convergence: kernel error vs. batches for each tau

struct BlurConvergenceRow {
    double tau;
    int n_b;
    int total_impulse_count;
    long long applies_total;
    double rel_frobenius_error;
};

struct BlurConvergenceResult {
    std::vector<BlurConvergenceRow> rows;
    long long applies = 0, transpose_applies = 0;
};

inline BlurConvergenceResult run_blur_convergence(const ExperimentConfig& cfg)
{
    const BlurOperator op = make_blur(cfg);
    const Eigen::MatrixXd Phi = op.dense_kernel();
    const Grid& g = op.grid();

    BlurConvergenceResult out;
    int max_nb = 0;
    for (int nb : cfg.sweeps.n_b_list)
        max_nb = std::max(max_nb, nb);

    for (double tau : cfg.sweeps.tau_list) {
        PsfSpec psf = cfg.psf;
        psf.tau = tau;
        const PsfPipeline full = build_psf_pipeline(op, psf, cfg.solver.seed, max_nb);
        for (int nb : cfg.sweeps.n_b_list) {
            if (nb == 0) {
                out.rows.push_back({tau, 0, 0, 0, 1.0});
                continue;
            }
            const PsfPipeline pipe = (nb == max_nb) ? full : pipeline_prefix(full, nb);
            const double err = frobenius_error(Phi, tabulate_kernel(*pipe.oracle, g));
            out.rows.push_back({tau, nb, pipe.total_impulses(), 6 + nb, err});
        }
    }
    out.applies = op.apply_count();
    out.transpose_applies = op.transpose_apply_count();
    return out;
}

// ---------------------------------------------------------------------------
// apply-compare: smallest apply counts reaching each tolerance, PSF vs GLR

struct ApplyCompareRow {
    double L;
    double tol;
    long long psf_applies; // -1 when unreachable within the batch budget
    long long glr_applies; // -1 when unreachable within the rank budget
};

struct ApplyCompareResult {
    std::vector<ApplyCompareRow> rows;
    long long applies = 0, transpose_applies = 0;
};

inline ApplyCompareResult run_apply_count_comparison(const ExperimentConfig& cfg)
{
    ApplyCompareResult out;
    std::vector<double> tols = cfg.sweeps.tol_list;

    for (double L : cfg.sweeps.L_list) {
        const BlurOperator op = make_blur(cfg, L);
        const Eigen::MatrixXd Phi = op.dense_kernel();
        const Grid& g = op.grid();
        const LumpedMass& mass = op.mass();

        // PSF, batch by batch until every tolerance is met
        std::vector<long long> psf_applies(tols.size(), -1);
        {
            auto moments = std::make_shared<ImpulseMoments>(
                compute_moments(op, cfg.psf.eps_V, 1.0 / cfg.psf.eps_Sigma));
            auto plan_full = std::make_shared<SampleBatchPlan>(
                plan_batches(*moments, cfg.psf.tau, cfg.sweeps.psf_batch_budget, cfg.solver.seed));
            std::vector<GridFunction> etas;
            for (int nb = 1; nb <= cfg.sweeps.psf_batch_budget; ++nb) {
                // harvest only the new batch
                if (!plan_full->batches[nb - 1].empty()) {
                    const Eigen::VectorXd xi = dirac_comb(*plan_full, *moments, nb - 1);
                    etas.emplace_back(g, mass.solve(op.apply(mass.solve(xi))));
                } else {
                    etas.push_back(GridFunction::zero(g));
                }
                auto batches = std::make_shared<ImpulseBatchSet>();
                batches->moments = moments;
                batches->plan = std::make_shared<SampleBatchPlan>(plan_prefix(*plan_full, g, nb));
                batches->etas = etas;
                const PsfKernelOracle oracle(batches, cfg.psf.k_n, cfg.psf.c_rbf);
                const double err = frobenius_error(Phi, tabulate_kernel(oracle, g));
                bool all_met = true;
                for (size_t t = 0; t < tols.size(); ++t) {
                    if (psf_applies[t] < 0 && err <= tols[t])
                        psf_applies[t] = 6 + nb;
                    all_met = all_met && psf_applies[t] >= 0;
                }
                if (all_met)
                    break;
            }
        }

        // GLR via one randomized sketch at the rank budget; the error of the
        // rank-r truncation prices a standalone rank-r run at 2*(r+c) applies
        std::vector<long long> glr_applies(tols.size(), -1);
        {
            const int oversample = 5;
            const int r_budget = std::min(cfg.sweeps.glr_rank_budget, op.size() - oversample);
            const LowRankApprox lra =
                randomized_svd(op, r_budget, oversample, cfg.solver.seed, SketchTarget::Kernel);
            const double phi_fro2 = Phi.squaredNorm();
            Eigen::VectorXd t(r_budget);
            for (int j = 0; j < r_budget; ++j)
                t[j] = lra.U.col(j).dot(Phi * lra.V.col(j));
            double captured = 0;
            for (int r = 1; r <= r_budget; ++r) {
                captured += 2.0 * lra.s[r - 1] * t[r - 1] - lra.s[r - 1] * lra.s[r - 1];
                const double err = std::sqrt(std::max(phi_fro2 - captured, 0.0) / phi_fro2);
                for (size_t k = 0; k < tols.size(); ++k)
                    if (glr_applies[k] < 0 && err <= tols[k])
                        glr_applies[k] = 2 * (r + oversample);
            }
        }

        for (size_t t = 0; t < tols.size(); ++t)
            out.rows.push_back({L, tols[t], psf_applies[t], glr_applies[t]});
        out.applies += op.apply_count();
        out.transpose_applies += op.transpose_apply_count();
    }
    return out;
}

// ---------------------------------------------------------------------------
// precond-study: PCG iteration counts and preconditioned condition numbers

struct PrecondRow {
    std::string preconditioner;
    int pcg_iterations;
    double condition_number_estimate;
    long long applies_to_build;
};

struct PrecondResult {
    std::vector<PrecondRow> rows;
    long long applies = 0, transpose_applies = 0;
};

inline PrecondResult run_preconditioner_study(const ExperimentConfig& cfg)
{
    const Grid g = make_grid(cfg);
    const double beta = calibrate_noise_precision(g, cfg.op);
    const AdvDiffHessian op(g, cfg.op.kappa, cfg.op.T, cfg.op.n_steps, cfg.op.omega, beta);
    const AdvDiffHessian oracle_op(g, cfg.op.kappa, cfg.op.T, cfg.op.n_steps, cfg.op.omega, beta);
    const RegularizationOperator R(g, cfg.op.gamma, cfg.op.delta);
    const int n = g.num_nodes();

    const ApplyFn apply_H = [&](const Eigen::VectorXd& u) {
        return Eigen::VectorXd(oracle_op.apply(u) + R.apply(u));
    };
    const Eigen::MatrixXd H_dense =
        densify([&](const Eigen::VectorXd& u) { return oracle_op.apply(u); }, n) + R.dense();

    std::mt19937_64 rng(cfg.solver.seed);
    const Eigen::VectorXd b = detail::gaussian_vector(n, rng);
    const Eigen::VectorXd x_ref = Eigen::LLT<Eigen::MatrixXd>(H_dense).solve(b);

    PrecondResult out;
    auto cond_of = [&](const Eigen::MatrixXd& P_dense) {
        const auto eigs = generalized_eig_spectrum(H_dense, P_dense);
        return eigs.front() / eigs.back();
    };

    {
        const ApplyFn ident = [](const Eigen::VectorXd& v) { return v; };
        const PcgResult r =
            pcg(apply_H, ident, b, cfg.solver.tol, cfg.solver.max_iter, &x_ref);
        out.rows.push_back({"NONE", r.iterations, cond_of(Eigen::MatrixXd::Identity(n, n)), 0});
    }
    {
        const auto solve_R = R.make_solver();
        const PcgResult r =
            pcg(apply_H, solve_R, b, cfg.solver.tol, cfg.solver.max_iter, &x_ref);
        out.rows.push_back({"REG", r.iterations, cond_of(R.dense()), 0});
    }

    const auto tree = build_cluster_tree(g, cfg.hmatrix.n_leaf);
    const HodlrMatrix R_H = HodlrMatrix::from_dense(R.dense(), tree, cfg.hmatrix.eps_aca);

    for (int nb : cfg.sweeps.precond_n_b_list) {
        op.reset_counts();
        const PsfPipeline pipe = build_psf_pipeline(op, cfg.psf, cfg.solver.seed, nb);
        const long long build_applies = op.apply_count() + op.transpose_apply_count();

        const HodlrMatrix Phi_H = build_kernel_hmatrix(*pipe.oracle, tree, cfg.hmatrix);
        const HodlrMatrix A_H = sandwich_mass(Phi_H, op.mass());
        const HodlrMatrix A_sym = symmetrize(A_H);
        const SpdRepair repair = flip_negative_eigs(A_sym, R_H, cfg.spdfix.eps_flip);
        const HodlrMatrix B = add(repair.A_sym, R_H);
        const RepairedFactorization P(B, repair.W);

        const PcgResult r = pcg(
            apply_H, [&P](const Eigen::VectorXd& v) { return P.solve(v); }, b, cfg.solver.tol,
            cfg.solver.max_iter, &x_ref);
        const Eigen::MatrixXd P_dense = repair.to_dense() + R_H.to_dense();
        out.rows.push_back({"PSF(" + std::to_string(nb) + ")", r.iterations, cond_of(P_dense),
                            build_applies});
    }
    out.applies = op.apply_count();
    out.transpose_applies = op.transpose_apply_count();
    return out;
}

// ---------------------------------------------------------------------------
// negativity-sweep: moment/ellipsoid robustness as the kernel goes negative

struct NegativityRow {
    double a;
    double fraction_valid_nodes;
    double mean_ellipsoid_quality; // quadrature mass captured inside E_x
    double psf_error_or_failure_flag; // relative Frobenius error, -1 on failure
};

struct NegativityResult {
    std::vector<NegativityRow> rows;
    long long applies = 0, transpose_applies = 0;
};

inline NegativityResult run_negativity_robustness(const ExperimentConfig& cfg)
{
    NegativityResult out;
    for (double a : cfg.sweeps.a_list) {
        const BlurOperator op = make_blur(cfg, -1, a);
        const Grid& g = op.grid();
        const Eigen::MatrixXd Phi = op.dense_kernel();
        const Eigen::VectorXd& w = op.mass().weights();

        const ImpulseMoments m = compute_moments(op, cfg.psf.eps_V, 1.0 / cfg.psf.eps_Sigma);
        const double frac = static_cast<double>(m.num_valid()) / g.num_nodes();

        double quality_sum = 0;
        int quality_count = 0;
        for (int x = 0; x < g.num_nodes(); ++x) {
            if (!m.valid[x])
                continue;
            const SupportEllipsoid e = support_ellipsoid(m, x, cfg.psf.tau);
            double inside = 0, total = 0;
            for (int y = 0; y < g.num_nodes(); ++y) {
                const double contrib = Phi(y, x) * w[y];
                total += contrib;
                if (e.contains(g.node(y)))
                    inside += contrib;
            }
            if (total != 0) {
                quality_sum += inside / total;
                ++quality_count;
            }
        }
        const double quality = quality_count > 0 ? quality_sum / quality_count : 0.0;

        double err = -1.0;
        try {
            const PsfPipeline pipe = build_psf_pipeline(op, cfg.psf, cfg.solver.seed);
            err = frobenius_error(Phi, tabulate_kernel(*pipe.oracle, g));
        } catch (const NumericalError&) {
            err = -1.0;
        }
        out.rows.push_back({a, frac, quality, err});
        out.applies += op.apply_count();
        out.transpose_applies += op.transpose_apply_count();
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV + manifest output

namespace detail {

inline std::string fmt_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

inline constexpr int csv_schema_version = 1;

inline void write_csv(const std::string& path, const std::string& header,
                      const std::vector<std::vector<std::string>>& rows)
{
    std::ofstream f(path);
    if (!f)
        throw NumericalError("write_csv: cannot open " + path);
    f << header << "\n";
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i)
            f << (i ? "," : "") << row[i];
        f << "\n";
    }
}

inline void write_csv(const BlurConvergenceResult& r, const std::string& path)
{
    std::vector<std::vector<std::string>> rows;
    for (const auto& x : r.rows)
        rows.push_back({detail::fmt_double(x.tau), std::to_string(x.n_b),
                        std::to_string(x.total_impulse_count), std::to_string(x.applies_total),
                        detail::fmt_double(x.rel_frobenius_error)});
    write_csv(path, "tau,n_b,total_impulse_count,applies_total,rel_frobenius_error", rows);
}

inline void write_csv(const ApplyCompareResult& r, const std::string& path)
{
    std::vector<std::vector<std::string>> rows;
    for (const auto& x : r.rows)
        rows.push_back({detail::fmt_double(x.L), detail::fmt_double(x.tol),
                        std::to_string(x.psf_applies), std::to_string(x.glr_applies)});
    write_csv(path, "L,tol,psf_applies,glr_applies", rows);
}

inline void write_csv(const PrecondResult& r, const std::string& path)
{
    std::vector<std::vector<std::string>> rows;
    for (const auto& x : r.rows)
        rows.push_back({x.preconditioner, std::to_string(x.pcg_iterations),
                        detail::fmt_double(x.condition_number_estimate),
                        std::to_string(x.applies_to_build)});
    write_csv(path, "preconditioner,pcg_iterations,condition_number_estimate,applies_to_build",
              rows);
}

inline void write_csv(const NegativityResult& r, const std::string& path)
{
    std::vector<std::vector<std::string>> rows;
    for (const auto& x : r.rows)
        rows.push_back({detail::fmt_double(x.a), detail::fmt_double(x.fraction_valid_nodes),
                        detail::fmt_double(x.mean_ellipsoid_quality),
                        detail::fmt_double(x.psf_error_or_failure_flag)});
    write_csv(path, "a,fraction_valid_nodes,mean_ellipsoid_quality,psf_error_or_failure_flag",
              rows);
}

inline std::string iso8601_utc_now()
{
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%FT%TZ", &tm_utc);
    return buf;
}

inline void write_manifest(const std::string& path, const ExperimentConfig& cfg,
                           const std::string& experiment, long long applies,
                           long long transpose_applies, double wall_time_s,
                           const std::vector<std::string>& outputs)
{
    json j;
    j["experiment"] = experiment;
    j["timestamp"] = iso8601_utc_now();
    j["config"] = config_to_json(cfg);
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.solver.seed;
    j["apply_count"] = applies;
    j["transpose_apply_count"] = transpose_applies;
    j["wall_time_s"] = wall_time_s;
    j["outputs"] = outputs;
    j["csv_schema_version"] = csv_schema_version;
    std::ofstream f(path);
    if (!f)
        throw NumericalError("write_manifest: cannot open " + path);
    f << j.dump(2) << "\n";
}

} // namespace psfh
