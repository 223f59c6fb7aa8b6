#pragma once

#include <memory>
#include <vector>

#include "psfh/packing.hpp"

namespace psfh {

// Harvested impulse-response batches: eta_k is the Riesz representative of
// A applied to the Dirac comb of batch k, stored as a plain grid function so
// downstream evaluation is bilinear interpolation.
struct ImpulseBatchSet {
    std::shared_ptr<const ImpulseMoments> moments;
    std::shared_ptr<const SampleBatchPlan> plan;
    std::vector<GridFunction> etas; // one per batch

    const Grid& grid() const { return moments->grid; }
};

// Dual vector of the Dirac comb for batch k: entry 1/V(x_i) at each sample
// node of the batch (delta at a node has Kronecker dual coefficients), zero
// elsewhere.
inline Eigen::VectorXd dirac_comb(const SampleBatchPlan& plan, const ImpulseMoments& m, int k)
{
    if (k < 0 || k >= static_cast<int>(plan.batches.size()))
        throw ConfigError("dirac_comb: batch index out of range");
    if (plan.batches[k].empty())
        throw NumericalError("dirac_comb: batch is empty");
    Eigen::VectorXd xi = Eigen::VectorXd::Zero(m.grid.num_nodes());
    for (int node : plan.batches[k])
        xi[node] = 1.0 / m.V[node];
    return xi;
}

// Apply the operator once per non-empty batch and store the Riesz
// representatives eta_k = M^{-1} A M^{-1} xi_k.
inline ImpulseBatchSet harvest_batches(const MatrixFreeOperator& op,
                                       std::shared_ptr<const SampleBatchPlan> plan,
                                       std::shared_ptr<const ImpulseMoments> moments)
{
    ImpulseBatchSet set;
    set.moments = std::move(moments);
    set.plan = std::move(plan);
    const LumpedMass& mass = op.mass();
    for (size_t k = 0; k < set.plan->batches.size(); ++k) {
        if (set.plan->batches[k].empty()) {
            set.etas.push_back(GridFunction::zero(op.grid()));
            continue;
        }
        const Eigen::VectorXd xi = dirac_comb(*set.plan, *set.moments, static_cast<int>(k));
        const Eigen::VectorXd eta = mass.solve(op.apply(mass.solve(xi)));
        set.etas.emplace_back(op.grid(), eta);
    }
    return set;
}

// Extracted impulse response phi_{x_i}(z) = eta_k(z) * V(x_i) inside the
// support ellipsoid of x_i, zero elsewhere. z must lie inside the domain;
// callers filter (the kernel oracle drops translated points outside).
inline double eval_impulse(const ImpulseBatchSet& set, int node, int batch, const Vec2& z)
{
    const auto cell = set.grid().locate_cell(z);
    if (!cell)
        throw NumericalError("eval_impulse: evaluation point outside domain");
    const SupportEllipsoid e = support_ellipsoid(*set.moments, node, set.plan->tau);
    if (!e.contains(z))
        return 0.0;
    return set.etas[batch].eval_in_cell(*cell) * set.moments->V[node];
}

} // namespace psfh
