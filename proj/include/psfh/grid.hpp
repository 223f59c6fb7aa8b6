#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>

#include "psfh/errors.hpp"

namespace psfh {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

// Regular 2D tensor grid of bilinear Lagrange nodes on [x_min,x_max] x [y_min,y_max].
// Node i = ix + nx*iy sits at (x_min + ix*hx, y_min + iy*hy).
class Grid {
public:
    Grid(int nx, int ny, double x_min, double x_max, double y_min, double y_max)
        : nx_(nx), ny_(ny), x_min_(x_min), x_max_(x_max), y_min_(y_min), y_max_(y_max)
    {
        if (nx < 2 || ny < 2)
            throw ConfigError("Grid: need at least 2 nodes per axis");
        if (!(x_min < x_max) || !(y_min < y_max))
            throw ConfigError("Grid: empty or inverted domain bounds");
        hx_ = (x_max - x_min) / (nx - 1);
        hy_ = (y_max - y_min) / (ny - 1);
    }

    static Grid unit_square(int nx, int ny) { return Grid(nx, ny, 0.0, 1.0, 0.0, 1.0); }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int num_nodes() const { return nx_ * ny_; }
    double hx() const { return hx_; }
    double hy() const { return hy_; }
    double x_min() const { return x_min_; }
    double x_max() const { return x_max_; }
    double y_min() const { return y_min_; }
    double y_max() const { return y_max_; }
    double area() const { return (x_max_ - x_min_) * (y_max_ - y_min_); }

    int flat_index(int ix, int iy) const { return ix + nx_ * iy; }

    Vec2 node(int i) const
    {
        const int ix = i % nx_;
        const int iy = i / nx_;
        return {x_min_ + ix * hx_, y_min_ + iy * hy_};
    }

    bool contains(const Vec2& p) const
    {
        const double tol = snap_tolerance();
        return p.x() >= x_min_ - tol && p.x() <= x_max_ + tol &&
               p.y() >= y_min_ - tol && p.y() <= y_max_ + tol;
    }

    struct CellRef {
        int ix, iy;       // lower-left node of the cell
        double s, t;      // local coordinates in [0,1]^2
    };

    // Cell containing p, with local coordinates. Points within the snap
    // tolerance of the boundary are pulled inside; anything farther out is
    // reported as outside (empty optional).
    std::optional<CellRef> locate_cell(const Vec2& p) const
    {
        if (!contains(p))
            return std::nullopt;
        const double px = std::min(std::max(p.x(), x_min_), x_max_);
        const double py = std::min(std::max(p.y(), y_min_), y_max_);

        int ix = static_cast<int>(std::floor((px - x_min_) / hx_));
        int iy = static_cast<int>(std::floor((py - y_min_) / hy_));
        ix = std::min(std::max(ix, 0), nx_ - 2);
        iy = std::min(std::max(iy, 0), ny_ - 2);

        CellRef c;
        c.ix = ix;
        c.iy = iy;
        c.s = (px - (x_min_ + ix * hx_)) / hx_;
        c.t = (py - (y_min_ + iy * hy_)) / hy_;
        return c;
    }

    double snap_tolerance() const { return 1e-12 * std::max(hx_, hy_); }

    bool operator==(const Grid& o) const
    {
        return nx_ == o.nx_ && ny_ == o.ny_ && x_min_ == o.x_min_ && x_max_ == o.x_max_ &&
               y_min_ == o.y_min_ && y_max_ == o.y_max_;
    }

private:
    int nx_, ny_;
    double x_min_, x_max_, y_min_, y_max_;
    double hx_, hy_;
};

// Nodal coefficient vector u with pointwise bilinear evaluation. The bilinear
// basis has the Kronecker property, so eval at node i returns values[i].
class GridFunction {
public:
    GridFunction(const Grid& grid, Eigen::VectorXd values)
        : grid_(grid), values_(std::move(values))
    {
        if (values_.size() != grid_.num_nodes())
            throw ConfigError("GridFunction: coefficient length does not match grid");
    }

    static GridFunction zero(const Grid& g)
    {
        return GridFunction(g, Eigen::VectorXd::Zero(g.num_nodes()));
    }

    const Grid& grid() const { return grid_; }
    const Eigen::VectorXd& values() const { return values_; }

    double eval(const Vec2& p) const
    {
        const auto cell = grid_.locate_cell(p);
        if (!cell)
            throw NumericalError("GridFunction::eval: point outside domain");
        return eval_in_cell(*cell);
    }

    double eval_in_cell(const Grid::CellRef& c) const
    {
        const int i00 = grid_.flat_index(c.ix, c.iy);
        const int i10 = grid_.flat_index(c.ix + 1, c.iy);
        const int i01 = grid_.flat_index(c.ix, c.iy + 1);
        const int i11 = grid_.flat_index(c.ix + 1, c.iy + 1);
        const double s = c.s, t = c.t;
        return values_[i00] * (1 - s) * (1 - t) + values_[i10] * s * (1 - t) +
               values_[i01] * (1 - s) * t + values_[i11] * s * t;
    }

private:
    Grid grid_;
    Eigen::VectorXd values_;
};

// Diagonal (lumped) mass: weight_i = integral of the ith bilinear hat, i.e.
// hx*hy scaled by 1, 1/2, 1/4 for interior, edge, corner nodes. Weights sum
// to the domain area.
class LumpedMass {
public:
    explicit LumpedMass(const Grid& grid) : grid_(grid), weights_(grid.num_nodes())
    {
        const double cell = grid.hx() * grid.hy();
        for (int iy = 0; iy < grid.ny(); ++iy) {
            const double wy = (iy == 0 || iy == grid.ny() - 1) ? 0.5 : 1.0;
            for (int ix = 0; ix < grid.nx(); ++ix) {
                const double wx = (ix == 0 || ix == grid.nx() - 1) ? 0.5 : 1.0;
                weights_[grid.flat_index(ix, iy)] = cell * wx * wy;
            }
        }
    }

    const Grid& grid() const { return grid_; }
    const Eigen::VectorXd& weights() const { return weights_; }

    // dual -> primal (Riesz representative) and back
    Eigen::VectorXd solve(const Eigen::VectorXd& dual) const
    {
        return dual.cwiseQuotient(weights_);
    }
    Eigen::VectorXd apply(const Eigen::VectorXd& primal) const
    {
        return primal.cwiseProduct(weights_);
    }

private:
    Grid grid_;
    Eigen::VectorXd weights_;
};

inline LumpedMass lumped_mass(const Grid& grid) { return LumpedMass(grid); }

} // namespace psfh
