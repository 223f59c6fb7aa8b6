#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "psfh/errors.hpp"

namespace psfh {

using json = nlohmann::json;

// Experiment configuration. Defaults follow the values used throughout the
// studies: tau=3.0, eps_V=1e-5, 1/eps_Sigma=20, eps_flip=-0.1, k_n=10,
// c_rbf=0.5 for blur convergence and 3.0 for Hessian preconditioning.
struct OperatorSpec {
    std::string type = "blur"; // "blur" | "advdiff"
    // blur
    double L = 1.0 / 3.0;
    double a = 0.0;
    double c1 = 0.0225;
    double c2 = 0.027;
    // advdiff
    double kappa = 1e-3;
    double T = 0.5;
    int n_steps = 48;
    double omega = 0.25;
    double gamma = 1e-4;
    double delta = 1e-4;
    double noise = 0.05;
};

struct GridSpec {
    int nx = 33, ny = 33;
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
};

struct PsfSpec {
    double tau = 3.0;
    int n_b = 5;
    int k_n = 10;
    double c_rbf = 0.5;
    double eps_V = 1e-5;
    double eps_Sigma = 0.05; // aspect-ratio limit is 1/eps_Sigma
};

struct HmatrixSpec {
    int n_leaf = 64;
    double eps_aca = 1e-5;
    int k_h_max = 50;
};

struct SpdfixSpec {
    double eps_flip = -0.1;
};

struct SolverSpec {
    double tol = 1e-6;
    int max_iter = 2000;
    std::uint64_t seed = 0;
};

struct SweepSpec {
    std::vector<double> tau_list = {2.0, 2.5, 3.0, 3.5, 4.0};
    std::vector<int> n_b_list = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    std::vector<double> L_list = {1.0, 0.5, 1.0 / 3.0};
    std::vector<double> tol_list = {0.2, 0.1, 0.05};
    std::vector<int> precond_n_b_list = {1, 5, 10};
    std::vector<double> a_list = {0.0, 1.0, 5.0, 10.0, 15.0, 20.0, 24.0, 27.0};
    int psf_batch_budget = 40;  // apply-compare gives up past this many batches
    int glr_rank_budget = 320;  // largest GLR rank tried
};

struct ExperimentConfig {
    OperatorSpec op;
    GridSpec grid;
    PsfSpec psf;
    HmatrixSpec hmatrix;
    SpdfixSpec spdfix;
    SolverSpec solver;
    SweepSpec sweeps;
    std::string output; // optional; CLI --out overrides
};

namespace detail {

template <class T>
void get_field(const json& j, const std::string& path, const char* key, T& out)
{
    if (!j.contains(key))
        return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + "." + key + ": wrong type");
    }
}

inline void require_positive(double v, const std::string& path)
{
    if (!(v > 0))
        throw ConfigError(path + ": must be positive");
}

} // namespace detail

inline void from_json_into(const json& j, ExperimentConfig& c)
{
    using detail::get_field;
    if (j.contains("operator")) {
        const json& o = j.at("operator");
        get_field(o, "operator", "type", c.op.type);
        get_field(o, "operator", "L", c.op.L);
        get_field(o, "operator", "a", c.op.a);
        get_field(o, "operator", "c1", c.op.c1);
        get_field(o, "operator", "c2", c.op.c2);
        get_field(o, "operator", "kappa", c.op.kappa);
        get_field(o, "operator", "T", c.op.T);
        get_field(o, "operator", "n_steps", c.op.n_steps);
        get_field(o, "operator", "omega", c.op.omega);
        get_field(o, "operator", "gamma", c.op.gamma);
        get_field(o, "operator", "delta", c.op.delta);
        get_field(o, "operator", "noise", c.op.noise);
    }
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        get_field(g, "grid", "nx", c.grid.nx);
        get_field(g, "grid", "ny", c.grid.ny);
        if (g.contains("bounds")) {
            const auto b = g.at("bounds").get<std::vector<double>>();
            if (b.size() != 4)
                throw ConfigError("grid.bounds: expected [x_min, x_max, y_min, y_max]");
            c.grid.x_min = b[0];
            c.grid.x_max = b[1];
            c.grid.y_min = b[2];
            c.grid.y_max = b[3];
        }
    }
    if (j.contains("psf")) {
        const json& p = j.at("psf");
        get_field(p, "psf", "tau", c.psf.tau);
        get_field(p, "psf", "n_b", c.psf.n_b);
        get_field(p, "psf", "k_n", c.psf.k_n);
        get_field(p, "psf", "c_rbf", c.psf.c_rbf);
        get_field(p, "psf", "eps_V", c.psf.eps_V);
        get_field(p, "psf", "eps_Sigma", c.psf.eps_Sigma);
    }
    if (j.contains("hmatrix")) {
        const json& h = j.at("hmatrix");
        get_field(h, "hmatrix", "n_leaf", c.hmatrix.n_leaf);
        get_field(h, "hmatrix", "eps_aca", c.hmatrix.eps_aca);
        get_field(h, "hmatrix", "k_h_max", c.hmatrix.k_h_max);
    }
    if (j.contains("spdfix"))
        get_field(j.at("spdfix"), "spdfix", "eps_flip", c.spdfix.eps_flip);
    if (j.contains("solver")) {
        const json& s = j.at("solver");
        get_field(s, "solver", "tol", c.solver.tol);
        get_field(s, "solver", "max_iter", c.solver.max_iter);
        get_field(s, "solver", "seed", c.solver.seed);
    }
    if (j.contains("sweeps")) {
        const json& s = j.at("sweeps");
        get_field(s, "sweeps", "tau_list", c.sweeps.tau_list);
        get_field(s, "sweeps", "n_b_list", c.sweeps.n_b_list);
        get_field(s, "sweeps", "L_list", c.sweeps.L_list);
        get_field(s, "sweeps", "tol_list", c.sweeps.tol_list);
        get_field(s, "sweeps", "precond_n_b_list", c.sweeps.precond_n_b_list);
        get_field(s, "sweeps", "a_list", c.sweeps.a_list);
        get_field(s, "sweeps", "psf_batch_budget", c.sweeps.psf_batch_budget);
        get_field(s, "sweeps", "glr_rank_budget", c.sweeps.glr_rank_budget);
    }
    detail::get_field(j, "", "output", c.output);
}

inline ExperimentConfig config_from_json(const json& j)
{
    ExperimentConfig c;
    from_json_into(j, c);

    if (c.op.type != "blur" && c.op.type != "advdiff")
        throw ConfigError("operator.type: must be \"blur\" or \"advdiff\"");
    detail::require_positive(c.op.L, "operator.L");
    detail::require_positive(c.op.c1, "operator.c1");
    detail::require_positive(c.op.c2, "operator.c2");
    detail::require_positive(c.op.kappa, "operator.kappa");
    detail::require_positive(c.op.T, "operator.T");
    detail::require_positive(c.op.gamma, "operator.gamma");
    detail::require_positive(c.op.delta, "operator.delta");
    detail::require_positive(c.op.noise, "operator.noise");
    if (c.op.n_steps < 1)
        throw ConfigError("operator.n_steps: must be >= 1");
    if (c.grid.nx < 2 || c.grid.ny < 2)
        throw ConfigError("grid.nx/ny: need at least 2 nodes per axis");
    if (!(c.grid.x_min < c.grid.x_max) || !(c.grid.y_min < c.grid.y_max))
        throw ConfigError("grid.bounds: empty or inverted domain");
    detail::require_positive(c.psf.tau, "psf.tau");
    detail::require_positive(c.psf.c_rbf, "psf.c_rbf");
    detail::require_positive(c.psf.eps_V, "psf.eps_V");
    detail::require_positive(c.psf.eps_Sigma, "psf.eps_Sigma");
    if (c.psf.n_b < 1)
        throw ConfigError("psf.n_b: must be >= 1");
    if (c.psf.k_n < 1)
        throw ConfigError("psf.k_n: must be >= 1");
    if (c.hmatrix.n_leaf < 1)
        throw ConfigError("hmatrix.n_leaf: must be >= 1");
    detail::require_positive(c.hmatrix.eps_aca, "hmatrix.eps_aca");
    if (c.hmatrix.k_h_max < 1)
        throw ConfigError("hmatrix.k_h_max: must be >= 1");
    if (!(c.spdfix.eps_flip > -1.0) || !(c.spdfix.eps_flip <= 0.0))
        throw ConfigError("spdfix.eps_flip: must lie in (-1, 0]");
    detail::require_positive(c.solver.tol, "solver.tol");
    if (c.solver.max_iter < 1)
        throw ConfigError("solver.max_iter: must be >= 1");
    return c;
}

inline json config_to_json(const ExperimentConfig& c)
{
    json j;
    j["operator"] = {{"type", c.op.type},     {"L", c.op.L},         {"a", c.op.a},
                     {"c1", c.op.c1},         {"c2", c.op.c2},       {"kappa", c.op.kappa},
                     {"T", c.op.T},           {"n_steps", c.op.n_steps}, {"omega", c.op.omega},
                     {"gamma", c.op.gamma},   {"delta", c.op.delta}, {"noise", c.op.noise}};
    j["grid"] = {{"nx", c.grid.nx},
                 {"ny", c.grid.ny},
                 {"bounds", {c.grid.x_min, c.grid.x_max, c.grid.y_min, c.grid.y_max}}};
    j["psf"] = {{"tau", c.psf.tau},     {"n_b", c.psf.n_b},
                {"k_n", c.psf.k_n},     {"c_rbf", c.psf.c_rbf},
                {"eps_V", c.psf.eps_V}, {"eps_Sigma", c.psf.eps_Sigma}};
    j["hmatrix"] = {{"n_leaf", c.hmatrix.n_leaf},
                    {"eps_aca", c.hmatrix.eps_aca},
                    {"k_h_max", c.hmatrix.k_h_max}};
    j["spdfix"] = {{"eps_flip", c.spdfix.eps_flip}};
    j["solver"] = {{"tol", c.solver.tol}, {"max_iter", c.solver.max_iter}, {"seed", c.solver.seed}};
    j["sweeps"] = {{"tau_list", c.sweeps.tau_list},
                   {"n_b_list", c.sweeps.n_b_list},
                   {"L_list", c.sweeps.L_list},
                   {"tol_list", c.sweeps.tol_list},
                   {"precond_n_b_list", c.sweeps.precond_n_b_list},
                   {"a_list", c.sweeps.a_list},
                   {"psf_batch_budget", c.sweeps.psf_batch_budget},
                   {"glr_rank_budget", c.sweeps.glr_rank_budget}};
    j["output"] = c.output;
    return j;
}

// FNV-1a over the canonical dump; stable across runs and platforms.
inline std::string config_hash(const ExperimentConfig& c)
{
    const std::string dump = config_to_json(c).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace psfh
