#include <catch2/catch_amalgamated.hpp>

#include "psfh/impulse.hpp"
#include "psfh/pipeline.hpp"
#include "support/oracles.hpp"

using namespace psfh;
using Catch::Approx;

namespace {

ImpulseMoments single_node_moments(const Grid& g, int node, double V, double r)
{
    ImpulseMoments m(g);
    const int n = g.num_nodes();
    m.V = Eigen::VectorXd::Constant(n, V);
    m.V_max = V;
    m.mu_x.resize(n);
    m.mu_y.resize(n);
    for (int i = 0; i < n; ++i) {
        m.mu_x[i] = g.node(i).x();
        m.mu_y[i] = g.node(i).y();
    }
    m.sig_xx = Eigen::VectorXd::Constant(n, r * r);
    m.sig_xy = Eigen::VectorXd::Zero(n);
    m.sig_yy = Eigen::VectorXd::Constant(n, r * r);
    m.valid.assign(n, 0);
    m.valid[node] = 1;
    return m;
}

SampleBatchPlan manual_plan(const Grid& g, std::vector<std::vector<int>> batches, double tau)
{
    SampleBatchPlan plan;
    plan.tau = tau;
    plan.batches = std::move(batches);
    for (size_t k = 0; k < plan.batches.size(); ++k)
        for (int node : plan.batches[k]) {
            plan.all_points.push_back(node);
            plan.batch_of.push_back(static_cast<int>(k));
        }
    plan.rebuild_index(g);
    return plan;
}

} // namespace

TEST_CASE("dirac comb dual vectors", "[impulse]")
{
    const Grid g = Grid::unit_square(9, 9);

    SECTION("single node with V = 2 gives 0.5 e_j")
    {
        const int j = g.flat_index(4, 4);
        const ImpulseMoments m = single_node_moments(g, j, 2.0, 0.05);
        const SampleBatchPlan plan = manual_plan(g, {{j}}, 3.0);
        const Eigen::VectorXd xi = dirac_comb(plan, m, 0);
        REQUIRE(xi[j] == Approx(0.5));
        REQUIRE(xi.cwiseAbs().sum() == Approx(0.5));
    }
    SECTION("two nodes with unit V gives e_i + e_j")
    {
        const int i = g.flat_index(2, 2), j = g.flat_index(6, 6);
        ImpulseMoments m = single_node_moments(g, i, 1.0, 0.05);
        m.valid[j] = 1;
        const SampleBatchPlan plan = manual_plan(g, {{i, j}}, 3.0);
        const Eigen::VectorXd xi = dirac_comb(plan, m, 0);
        REQUIRE(xi[i] == 1.0);
        REQUIRE(xi[j] == 1.0);
        REQUIRE(xi.sum() == 2.0);
    }
    SECTION("empty batch raises")
    {
        const ImpulseMoments m = single_node_moments(g, 0, 1.0, 0.05);
        const SampleBatchPlan plan = manual_plan(g, {{}}, 3.0);
        REQUIRE_THROWS_AS(dirac_comb(plan, m, 0), NumericalError);
        REQUIRE_THROWS_AS(dirac_comb(plan, m, 7), ConfigError);
    }
}

TEST_CASE("comb application is the sum of scaled point-source responses", "[impulse]")
{
    const Grid g = Grid::unit_square(17, 17);
    const BlurOperator op(g, 0.5, 0.0, 0.0225, 0.09);
    auto moments = std::make_shared<ImpulseMoments>(compute_moments(op));
    auto plan = std::make_shared<SampleBatchPlan>(plan_batches(*moments, 3.0, 2, 5));
    REQUIRE(plan->batches[0].size() >= 2);

    const Eigen::VectorXd xi = dirac_comb(*plan, *moments, 0);
    const Eigen::VectorXd lhs = op.apply(op.mass().solve(xi));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(g.num_nodes());
    for (int node : plan->batches[0]) {
        Eigen::VectorXd delta = Eigen::VectorXd::Zero(g.num_nodes());
        delta[node] = 1.0;
        rhs += op.apply(op.mass().solve(delta)) / moments->V[node];
    }
    REQUIRE((lhs - rhs).norm() <= 1e-12 * rhs.norm());
}

TEST_CASE("harvest consumes one apply per batch", "[impulse]")
{
    const Grid g = Grid::unit_square(17, 17);
    const BlurOperator op(g, 0.5, 0.0, 0.0225, 0.09);
    auto moments = std::make_shared<ImpulseMoments>(compute_moments(op));
    auto plan = std::make_shared<SampleBatchPlan>(plan_batches(*moments, 3.0, 4, 5));

    op.reset_counts();
    const ImpulseBatchSet set = harvest_batches(op, plan, moments);
    REQUIRE(op.apply_count() == 4);
    REQUIRE(op.transpose_apply_count() == 0);
    REQUIRE(set.etas.size() == 4);

    SECTION("moments plus harvest consume exactly 6 + n_b")
    {
        const BlurOperator fresh(g, 0.5, 0.0, 0.0225, 0.09);
        auto m2 = std::make_shared<ImpulseMoments>(compute_moments(fresh));
        auto p2 = std::make_shared<SampleBatchPlan>(plan_batches(*m2, 3.0, 4, 5));
        harvest_batches(fresh, p2, m2);
        REQUIRE(fresh.apply_count() + fresh.transpose_apply_count() == 6 + 4);
    }
}

TEST_CASE("zero operator harvests zero batch functions", "[impulse]")
{
    const Grid g = Grid::unit_square(9, 9);
    const oracles::DenseKernelOperator op(g, Eigen::MatrixXd::Zero(81, 81));
    const int j = g.flat_index(4, 4);
    auto m = std::make_shared<ImpulseMoments>(single_node_moments(g, j, 1.0, 0.05));
    auto plan = std::make_shared<SampleBatchPlan>(manual_plan(g, {{j}}, 3.0));
    const ImpulseBatchSet set = harvest_batches(op, plan, m);
    REQUIRE(set.etas[0].values().norm() == 0.0);
}

TEST_CASE("single-point batch extracts the exact kernel column", "[impulse]")
{
    // one sample point, so eta * V inside the ellipsoid is the plain column
    const Grid g = Grid::unit_square(17, 17);
    const int node = g.flat_index(8, 8);
    const double sigma = 0.08;
    const int n = g.num_nodes();
    Eigen::MatrixXd Phi(n, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            Phi(i, j) = std::exp(-(g.node(i) - g.node(j)).squaredNorm() / (2 * sigma * sigma));
    const oracles::DenseKernelOperator op(g, Phi);

    auto m = std::make_shared<ImpulseMoments>(compute_moments(op));
    REQUIRE(m->valid[node]);
    auto plan = std::make_shared<SampleBatchPlan>(manual_plan(g, {{node}}, 3.0));
    const ImpulseBatchSet set = harvest_batches(op, plan, m);

    const SupportEllipsoid e = support_ellipsoid(*m, node, 3.0);
    for (int y = 0; y < n; ++y) {
        if (!e.contains(g.node(y)))
            continue;
        const double extracted = set.etas[0].values()[y] * m->V[node];
        REQUIRE(extracted == Approx(Phi(y, node)).epsilon(1e-12).margin(1e-14));
    }
}

TEST_CASE("eval_impulse membership and domain handling", "[impulse]")
{
    const Grid g = Grid::unit_square(17, 17);
    const BlurOperator op(g, 0.5, 0.0, 0.0225, 0.09);
    auto moments = std::make_shared<ImpulseMoments>(compute_moments(op));
    auto plan = std::make_shared<SampleBatchPlan>(plan_batches(*moments, 3.0, 1, 5));
    const ImpulseBatchSet set = harvest_batches(op, plan, moments);

    const int node = plan->batches[0][0];
    const Vec2 mu = moments->mu(node);

    SECTION("at the ellipsoid center the stored value times V is returned")
    {
        const double expected = set.etas[0].eval(mu) * moments->V[node];
        REQUIRE(eval_impulse(set, node, 0, mu) == Approx(expected));
    }
    SECTION("just outside the ellipsoid the response reads zero")
    {
        // point with mahalanobis^2 = 1.01 * tau^2, walking +x from the center
        const SupportEllipsoid e = support_ellipsoid(*moments, node, plan->tau);
        const double q_unit = e.mahalanobis2(mu + Vec2(1, 0));
        const Vec2 z = mu + Vec2(std::sqrt(1.01 * plan->tau * plan->tau / q_unit), 0);
        if (g.contains(z))
            REQUIRE(eval_impulse(set, node, 0, z) == 0.0);
    }
    SECTION("outside the domain raises")
    {
        REQUIRE_THROWS_AS(eval_impulse(set, node, 0, Vec2(1.5, 0.5)), NumericalError);
    }
}

TEST_CASE("crosstalk inside support ellipsoids stays small", "[impulse]")
{
    const Grid g = Grid::unit_square(33, 33);
    const BlurOperator op(g, 1.0 / 3.0, 0.0, 0.0225, 0.09);
    auto moments = std::make_shared<ImpulseMoments>(compute_moments(op));
    auto plan = std::make_shared<SampleBatchPlan>(plan_batches(*moments, 3.0, 3, 0));
    const ImpulseBatchSet set = harvest_batches(op, plan, moments);
    const Eigen::MatrixXd Phi = op.dense_kernel();
    const Eigen::VectorXd& w = op.mass().weights();

    for (size_t b = 0; b < plan->batches.size(); ++b) {
        for (int node : plan->batches[b]) {
            const SupportEllipsoid e = support_ellipsoid(*moments, node, plan->tau);
            double num = 0, den = 0;
            for (int y = 0; y < g.num_nodes(); ++y) {
                if (!e.contains(g.node(y)))
                    continue;
                const double extracted = set.etas[b].values()[y] * moments->V[node];
                num += w[y] * (extracted - Phi(y, node)) * (extracted - Phi(y, node));
                den += w[y] * Phi(y, node) * Phi(y, node);
            }
            REQUIRE(den > 0);
            REQUIRE(std::sqrt(num / den) <= 0.15);
        }
    }
}

TEST_CASE("1/V scaling balances comb contributions", "[impulse]")
{
    const Grid g = Grid::unit_square(33, 33);
    const BlurOperator op(g, 1.0 / 3.0, 0.0, 0.0225, 0.09);
    auto moments = std::make_shared<ImpulseMoments>(compute_moments(op));
    auto plan = std::make_shared<SampleBatchPlan>(plan_batches(*moments, 3.0, 1, 0));
    const Eigen::MatrixXd Phi = op.dense_kernel();

    double scaled_max = 0, scaled_min = std::numeric_limits<double>::infinity();
    double raw_max = 0, raw_min = std::numeric_limits<double>::infinity();
    for (int node : plan->batches[0]) {
        const double peak = Phi.col(node).cwiseAbs().maxCoeff();
        raw_max = std::max(raw_max, peak);
        raw_min = std::min(raw_min, peak);
        scaled_max = std::max(scaled_max, peak / moments->V[node]);
        scaled_min = std::min(scaled_min, peak / moments->V[node]);
    }
    REQUIRE(plan->batches[0].size() >= 4);
    REQUIRE(scaled_max / scaled_min <= raw_max / raw_min);
}
