#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>

namespace psfh::detail {

// Box-Muller on mt19937_64; std::normal_distribution draws are
// implementation-defined, which would break seeded golden values.
template <class Rng>
double gaussian(Rng& rng)
{
    constexpr double scale = 1.0 / 9007199254740992.0; // 2^-53
    double u1 = 0;
    while (u1 == 0)
        u1 = static_cast<double>(rng() >> 11) * scale;
    const double u2 = static_cast<double>(rng() >> 11) * scale;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <class Rng>
Eigen::VectorXd gaussian_vector(int n, Rng& rng)
{
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i)
        v[i] = gaussian(rng);
    return v;
}

template <class Rng>
Eigen::MatrixXd gaussian_matrix(int rows, int cols, Rng& rng)
{
    Eigen::MatrixXd m(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i)
            m(i, j) = gaussian(rng);
    return m;
}

} // namespace psfh::detail
