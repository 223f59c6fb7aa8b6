#pragma once

#include <memory>

#include "psfh/config.hpp"
#include "psfh/hodlr.hpp"
#include "psfh/psfkernel.hpp"

namespace psfh {

// The assembled PSF approximation machinery for one operator: moments from
// 6 transpose-applies, packed sample batches, harvested impulse responses,
// and the kernel-entry oracle on top.
struct PsfPipeline {
    std::shared_ptr<const ImpulseMoments> moments;
    std::shared_ptr<const SampleBatchPlan> plan;
    std::shared_ptr<const ImpulseBatchSet> batches;
    std::shared_ptr<const PsfKernelOracle> oracle;

    int total_impulses() const { return plan->total_points(); }
};

inline PsfPipeline build_psf_pipeline(const MatrixFreeOperator& op, const PsfSpec& psf,
                                      std::uint64_t seed, int n_b_override = -1)
{
    const int n_b = n_b_override > 0 ? n_b_override : psf.n_b;
    PsfPipeline p;
    p.moments = std::make_shared<ImpulseMoments>(
        compute_moments(op, psf.eps_V, 1.0 / psf.eps_Sigma));
    p.plan = std::make_shared<SampleBatchPlan>(plan_batches(*p.moments, psf.tau, n_b, seed));
    p.batches = std::make_shared<ImpulseBatchSet>(harvest_batches(op, p.plan, p.moments));
    p.oracle = std::make_shared<PsfKernelOracle>(p.batches, psf.k_n, psf.c_rbf);
    return p;
}

// Restriction of an assembled pipeline to its first k batches. Uses the
// already harvested batch functions, so it costs no operator applies; the
// result is identical to building with n_b = k from scratch.
inline PsfPipeline pipeline_prefix(const PsfPipeline& full, int k)
{
    PsfPipeline p;
    p.moments = full.moments;
    p.plan = std::make_shared<SampleBatchPlan>(
        plan_prefix(*full.plan, full.moments->grid, k));
    auto batches = std::make_shared<ImpulseBatchSet>();
    batches->moments = p.moments;
    batches->plan = p.plan;
    batches->etas.assign(full.batches->etas.begin(), full.batches->etas.begin() + k);
    p.batches = std::move(batches);
    p.oracle = std::make_shared<PsfKernelOracle>(p.batches, full.oracle->k_n(),
                                                 full.oracle->c_rbf());
    return p;
}

// Dense tabulation of the approximate kernel at all node pairs (desk-scale
// error measurement). One column context per source point.
inline Eigen::MatrixXd tabulate_kernel(const PsfKernelOracle& oracle, const Grid& grid)
{
    const int n = grid.num_nodes();
    Eigen::MatrixXd K(n, n);
    for (int j = 0; j < n; ++j) {
        const auto ctx = oracle.column_context(grid.node(j));
        for (int i = 0; i < n; ++i)
            K(i, j) = oracle.kernel_entry(grid.node(i), ctx);
    }
    return K;
}

inline HodlrMatrix build_kernel_hmatrix(const PsfKernelOracle& oracle,
                                        std::shared_ptr<const ClusterTree> tree,
                                        const HmatrixSpec& spec)
{
    const Grid& g = oracle.batches().grid();
    std::vector<Vec2> pts(g.num_nodes());
    for (int i = 0; i < g.num_nodes(); ++i)
        pts[i] = g.node(i);
    HodlrOptions opt;
    opt.k_max = spec.k_h_max;
    opt.eps_aca = spec.eps_aca;
    return HodlrMatrix::build([&oracle](int i, int j) { return oracle.entry(i, j); },
                              std::move(tree), pts, opt);
}

// Plan serialization for experiment reproducibility.
inline json plan_to_json(const SampleBatchPlan& plan)
{
    json j;
    j["tau"] = plan.tau;
    j["seed"] = plan.seed;
    j["batches"] = plan.batches;
    return j;
}

inline SampleBatchPlan plan_from_json(const json& j, const Grid& grid)
{
    SampleBatchPlan plan;
    plan.tau = j.at("tau").get<double>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.batches = j.at("batches").get<std::vector<std::vector<int>>>();
    for (size_t k = 0; k < plan.batches.size(); ++k)
        for (int node : plan.batches[k]) {
            plan.all_points.push_back(node);
            plan.batch_of.push_back(static_cast<int>(k));
        }
    plan.rebuild_index(grid);
    return plan;
}

} // namespace psfh
