#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "psfh/cluster_tree.hpp"

namespace psfh {

using EntryFn = std::function<double(int, int)>; // kernel entry at original indices

namespace detail {

struct LowRankBlock {
    Eigen::MatrixXd U, V; // block = U * V^T
    bool rank_warning = false;
    int rank() const { return static_cast<int>(U.cols()); }
};

// Truncated SVD recompression of U*V^T: drop the smallest singular values
// whose stacked energy stays below eps * ||block||_F.
inline LowRankBlock recompress(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V, double eps)
{
    LowRankBlock out;
    if (U.cols() == 0) {
        out.U = U;
        out.V = V;
        return out;
    }
    const int ru = std::min<int>(U.rows(), U.cols());
    Eigen::HouseholderQR<Eigen::MatrixXd> qru(U);
    Eigen::MatrixXd Qu = qru.householderQ() * Eigen::MatrixXd::Identity(U.rows(), ru);
    Eigen::MatrixXd Ru = Eigen::MatrixXd(qru.matrixQR().topRows(ru).triangularView<Eigen::Upper>());

    const int rv = std::min<int>(V.rows(), V.cols());
    Eigen::HouseholderQR<Eigen::MatrixXd> qrv(V);
    Eigen::MatrixXd Qv = qrv.householderQ() * Eigen::MatrixXd::Identity(V.rows(), rv);
    Eigen::MatrixXd Rv = Eigen::MatrixXd(qrv.matrixQR().topRows(rv).triangularView<Eigen::Upper>());

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ru * Rv.transpose(),
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();
    const double total2 = s.squaredNorm();
    int keep = static_cast<int>(s.size());
    double tail2 = 0;
    while (keep > 0) {
        const double cand = tail2 + s[keep - 1] * s[keep - 1];
        if (cand > eps * eps * total2)
            break;
        tail2 = cand;
        --keep;
    }
    out.U = Qu * svd.matrixU().leftCols(keep) * s.head(keep).asDiagonal();
    out.V = Qv * svd.matrixV().leftCols(keep);
    return out;
}

// Partial-pivot ACA drawing rows/columns lazily from the entry oracle.
// Stopping rule: a new cross with ||u|| ||v|| <= eps * ||approx||_F
// (running Frobenius estimate) is discarded, and termination requires two
// such small crosses from independent rows in a row. `row_hint` supplies the
// row order for the start, for zero-pivot retries and for the confirmation
// rows; for locally supported kernels the caller sorts rows nearest the
// column cluster first, where the energy sits.
inline LowRankBlock aca_partial(const EntryFn& entry, const std::vector<int>& rows,
                                const std::vector<int>& cols, double eps, int k_max,
                                const std::vector<int>& row_hint, long long& entry_evals)
{
    const int m = static_cast<int>(rows.size());
    const int n = static_cast<int>(cols.size());
    LowRankBlock blk;
    blk.U.resize(m, 0);
    blk.V.resize(n, 0);

    std::vector<char> row_used(m, 0);
    const int max_rank = std::min({m, n, k_max});
    int hint_pos = 0;
    auto next_hint_row = [&]() {
        while (hint_pos < m) {
            const int r = row_hint.empty() ? hint_pos : row_hint[hint_pos];
            ++hint_pos;
            if (!row_used[r])
                return r;
        }
        return -1;
    };

    double fro2 = 0;
    int small_streak = 0;
    int zero_rows_at_start = 0;
    bool tol_reached = false;
    int next_row = next_hint_row();

    while (next_row >= 0) {
        if (blk.rank() == max_rank)
            break;

        Eigen::VectorXd v(n);
        for (int j = 0; j < n; ++j)
            v[j] = entry(rows[next_row], cols[j]);
        entry_evals += n;
        if (blk.rank() > 0)
            v -= blk.V * blk.U.row(next_row).transpose();
        row_used[next_row] = 1;

        int piv = 0;
        double piv_abs = 0;
        for (int j = 0; j < n; ++j) {
            if (std::abs(v[j]) > piv_abs) {
                piv_abs = std::abs(v[j]);
                piv = j;
            }
        }
        if (piv_abs == 0) {
            if (blk.rank() == 0) {
                if (++zero_rows_at_start > 8) {
                    tol_reached = true; // zero block
                    break;
                }
            } else if (++small_streak >= 2) {
                tol_reached = true;
                break;
            }
            next_row = next_hint_row();
            continue;
        }

        v /= v[piv];
        Eigen::VectorXd u(m);
        for (int i = 0; i < m; ++i)
            u[i] = entry(rows[i], cols[piv]);
        entry_evals += m;
        if (blk.rank() > 0)
            u -= blk.U * blk.V.row(piv).transpose();

        if (blk.rank() > 0 &&
            u.norm() * v.norm() <= eps * std::sqrt(std::max(fro2, 0.0))) {
            // negligible cross; confirm from one more independent row
            if (++small_streak >= 2) {
                tol_reached = true;
                break;
            }
            next_row = next_hint_row();
            continue;
        }
        small_streak = 0;

        // running Frobenius estimate of the accumulated approximation
        if (blk.rank() > 0)
            fro2 += 2.0 * ((blk.U.transpose() * u).array() * (blk.V.transpose() * v).array()).sum();
        fro2 += u.squaredNorm() * v.squaredNorm();

        const int k = blk.rank();
        blk.U.conservativeResize(Eigen::NoChange, k + 1);
        blk.V.conservativeResize(Eigen::NoChange, k + 1);
        blk.U.col(k) = u;
        blk.V.col(k) = v;

        // next pivot row: largest new-column magnitude among unused rows
        int best = -1;
        double best_abs = -1;
        for (int i = 0; i < m; ++i) {
            if (!row_used[i] && std::abs(u[i]) > best_abs) {
                best_abs = std::abs(u[i]);
                best = i;
            }
        }
        next_row = best >= 0 ? best : next_hint_row();
    }

    if (!tol_reached && blk.rank() == k_max && k_max < std::min(m, n))
        blk.rank_warning = true;
    return blk;
}

// Full-pivot ACA; evaluates the whole block. Oracle-validation tests only.
inline LowRankBlock aca_full(const EntryFn& entry, const std::vector<int>& rows,
                             const std::vector<int>& cols, double eps, int k_max,
                             long long& entry_evals)
{
    const int m = static_cast<int>(rows.size());
    const int n = static_cast<int>(cols.size());
    Eigen::MatrixXd R(m, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i)
            R(i, j) = entry(rows[i], cols[j]);
    entry_evals += static_cast<long long>(m) * n;
    const double target = eps * R.norm();

    LowRankBlock blk;
    blk.U.resize(m, 0);
    blk.V.resize(n, 0);
    for (int k = 0; k < std::min({m, n, k_max}); ++k) {
        int pi = 0, pj = 0;
        const double piv = R.cwiseAbs().maxCoeff(&pi, &pj);
        if (piv == 0)
            return blk;
        const Eigen::VectorXd u = R.col(pj);
        const Eigen::VectorXd v = R.row(pi).transpose() / R(pi, pj);
        R -= u * v.transpose();
        blk.U.conservativeResize(Eigen::NoChange, k + 1);
        blk.V.conservativeResize(Eigen::NoChange, k + 1);
        blk.U.col(k) = u;
        blk.V.col(k) = v;
        if (R.norm() <= target)
            return blk;
    }
    blk.rank_warning = true;
    return blk;
}

} // namespace detail

struct HodlrOptions {
    int k_max = 50;
    double eps_aca = 1e-5;
    bool full_pivot = false; // oracle-validation tests only
};

// Hierarchical matrix in HODLR form over a binary cluster tree: dense
// diagonal leaf blocks, low-rank factor pairs for every off-diagonal
// sibling block.
class HodlrMatrix {
public:
    HodlrMatrix() = default;

    // Assemble from an entry oracle. `points` supplies the geometry used to
    // order ACA pivot rows (nearest to the opposite cluster first).
    static HodlrMatrix build(const EntryFn& entry, std::shared_ptr<const ClusterTree> tree,
                             const std::vector<Vec2>& points, const HodlrOptions& opt = {})
    {
        HodlrMatrix H(std::move(tree), opt.eps_aca);
        H.alloc();
        for (size_t t = 0; t < H.tree_->nodes.size(); ++t) {
            const auto& nd = H.tree_->nodes[t];
            if (nd.is_leaf()) {
                const auto rows = H.range_indices(nd.begin, nd.end);
                Eigen::MatrixXd D(rows.size(), rows.size());
                for (size_t j = 0; j < rows.size(); ++j)
                    for (size_t i = 0; i < rows.size(); ++i)
                        D(i, j) = entry(rows[i], rows[j]);
                H.entry_evals_ += static_cast<long long>(rows.size()) * rows.size();
                H.dense_[t] = std::move(D);
            } else {
                const auto& l = H.tree_->nodes[nd.left];
                const auto& r = H.tree_->nodes[nd.right];
                const auto li = H.range_indices(l.begin, l.end);
                const auto ri = H.range_indices(r.begin, r.end);
                H.lr12_[t] = H.compress_block(entry, li, ri, points, opt);
                H.lr21_[t] = H.compress_block(entry, ri, li, points, opt);
            }
        }
        return H;
    }

    // Exact assembly from a dense matrix (desk-scale construction of sparse
    // or explicitly known operators; also the test path).
    static HodlrMatrix from_dense(const Eigen::MatrixXd& A,
                                  std::shared_ptr<const ClusterTree> tree, double eps,
                                  int k_max = 1 << 30)
    {
        HodlrMatrix H(std::move(tree), eps);
        H.alloc();
        const auto& perm = H.tree_->perm;
        for (size_t t = 0; t < H.tree_->nodes.size(); ++t) {
            const auto& nd = H.tree_->nodes[t];
            if (nd.is_leaf()) {
                H.dense_[t] = extract(A, perm, nd.begin, nd.end, nd.begin, nd.end);
            } else {
                const auto& l = H.tree_->nodes[nd.left];
                const auto& r = H.tree_->nodes[nd.right];
                H.lr12_[t] = svd_block(extract(A, perm, l.begin, l.end, r.begin, r.end), eps, k_max);
                H.lr21_[t] = svd_block(extract(A, perm, r.begin, r.end, l.begin, l.end), eps, k_max);
            }
        }
        return H;
    }

    // W * Z^T as a HODLR matrix (global low-rank term).
    static HodlrMatrix from_lowrank(const Eigen::MatrixXd& W, const Eigen::MatrixXd& Z,
                                    std::shared_ptr<const ClusterTree> tree, double eps)
    {
        HodlrMatrix H(std::move(tree), eps);
        H.alloc();
        const auto& perm = H.tree_->perm;
        auto rows_of = [&](int b, int e, const Eigen::MatrixXd& M) {
            Eigen::MatrixXd out(e - b, M.cols());
            for (int k = b; k < e; ++k)
                out.row(k - b) = M.row(perm[k]);
            return out;
        };
        for (size_t t = 0; t < H.tree_->nodes.size(); ++t) {
            const auto& nd = H.tree_->nodes[t];
            if (nd.is_leaf()) {
                H.dense_[t] = rows_of(nd.begin, nd.end, W) * rows_of(nd.begin, nd.end, Z).transpose();
            } else {
                const auto& l = H.tree_->nodes[nd.left];
                const auto& r = H.tree_->nodes[nd.right];
                H.lr12_[t] = {rows_of(l.begin, l.end, W), rows_of(r.begin, r.end, Z), false};
                H.lr21_[t] = {rows_of(r.begin, r.end, W), rows_of(l.begin, l.end, Z), false};
            }
        }
        return H;
    }

    int size() const { return tree_ ? tree_->size() : 0; }
    double eps_aca() const { return eps_aca_; }
    std::shared_ptr<const ClusterTree> tree() const { return tree_; }
    long long build_entry_evals() const { return entry_evals_; }

    int max_rank() const
    {
        int r = 0;
        for (const auto& b : lr12_)
            r = std::max(r, b.rank());
        for (const auto& b : lr21_)
            r = std::max(r, b.rank());
        return r;
    }

    bool any_rank_warning() const
    {
        for (const auto& b : lr12_)
            if (b.rank_warning)
                return true;
        for (const auto& b : lr21_)
            if (b.rank_warning)
                return true;
        return false;
    }

    Eigen::VectorXd matvec(const Eigen::VectorXd& x) const
    {
        check_size(x);
        Eigen::VectorXd xp(size()), yp(size());
        for (int k = 0; k < size(); ++k)
            xp[k] = x[tree_->perm[k]];
        mv(0, xp, yp);
        Eigen::VectorXd y(size());
        for (int k = 0; k < size(); ++k)
            y[tree_->perm[k]] = yp[k];
        return y;
    }

    HodlrMatrix scaled(double alpha) const
    {
        HodlrMatrix H = *this;
        for (auto& D : H.dense_)
            D *= alpha;
        for (auto& b : H.lr12_)
            b.U *= alpha;
        for (auto& b : H.lr21_)
            b.U *= alpha;
        return H;
    }

    HodlrMatrix transpose() const
    {
        HodlrMatrix H = *this;
        for (auto& D : H.dense_)
            D = D.transpose().eval();
        for (size_t t = 0; t < tree_->nodes.size(); ++t) {
            if (tree_->nodes[t].is_leaf())
                continue;
            H.lr12_[t] = {lr21_[t].V, lr21_[t].U, lr21_[t].rank_warning};
            H.lr21_[t] = {lr12_[t].V, lr12_[t].U, lr12_[t].rank_warning};
        }
        return H;
    }

    // Add a diagonal into the leaf blocks (w in original index order).
    HodlrMatrix diag_add(const Eigen::VectorXd& w) const
    {
        check_size(w);
        HodlrMatrix H = *this;
        for (size_t t = 0; t < tree_->nodes.size(); ++t) {
            const auto& nd = tree_->nodes[t];
            if (!nd.is_leaf())
                continue;
            for (int k = nd.begin; k < nd.end; ++k)
                H.dense_[t](k - nd.begin, k - nd.begin) += w[tree_->perm[k]];
        }
        return H;
    }

    // Diagonal congruence D_r H D_c; row/col weights in original order.
    HodlrMatrix sandwich(const Eigen::VectorXd& row_w, const Eigen::VectorXd& col_w) const
    {
        check_size(row_w);
        check_size(col_w);
        HodlrMatrix H = *this;
        auto seg = [&](const Eigen::VectorXd& w, int b, int e) {
            Eigen::VectorXd out(e - b);
            for (int k = b; k < e; ++k)
                out[k - b] = w[tree_->perm[k]];
            return out;
        };
        for (size_t t = 0; t < tree_->nodes.size(); ++t) {
            const auto& nd = tree_->nodes[t];
            if (nd.is_leaf()) {
                const Eigen::VectorXd r = seg(row_w, nd.begin, nd.end);
                const Eigen::VectorXd c = seg(col_w, nd.begin, nd.end);
                H.dense_[t] = r.asDiagonal() * dense_[t] * c.asDiagonal();
            } else {
                const auto& l = tree_->nodes[nd.left];
                const auto& r = tree_->nodes[nd.right];
                H.lr12_[t].U = seg(row_w, l.begin, l.end).asDiagonal() * lr12_[t].U;
                H.lr12_[t].V = seg(col_w, r.begin, r.end).asDiagonal() * lr12_[t].V;
                H.lr21_[t].U = seg(row_w, r.begin, r.end).asDiagonal() * lr21_[t].U;
                H.lr21_[t].V = seg(col_w, l.begin, l.end).asDiagonal() * lr21_[t].V;
            }
        }
        return H;
    }

    Eigen::MatrixXd to_dense() const
    {
        Eigen::MatrixXd Dp = Eigen::MatrixXd::Zero(size(), size());
        for (size_t t = 0; t < tree_->nodes.size(); ++t) {
            const auto& nd = tree_->nodes[t];
            if (nd.is_leaf()) {
                Dp.block(nd.begin, nd.begin, nd.end - nd.begin, nd.end - nd.begin) = dense_[t];
            } else {
                const auto& l = tree_->nodes[nd.left];
                const auto& r = tree_->nodes[nd.right];
                Dp.block(l.begin, r.begin, l.end - l.begin, r.end - r.begin) =
                    lr12_[t].U * lr12_[t].V.transpose();
                Dp.block(r.begin, l.begin, r.end - r.begin, l.end - l.begin) =
                    lr21_[t].U * lr21_[t].V.transpose();
            }
        }
        Eigen::MatrixXd D(size(), size());
        for (int i = 0; i < size(); ++i)
            for (int j = 0; j < size(); ++j)
                D(tree_->perm[i], tree_->perm[j]) = Dp(i, j);
        return D;
    }

    friend HodlrMatrix add(const HodlrMatrix& A, const HodlrMatrix& B)
    {
        if (!A.tree_ || !B.tree_ || (A.tree_ != B.tree_ && !A.tree_->same_structure(*B.tree_)))
            throw ConfigError("hodlr add: cluster trees do not match");
        HodlrMatrix H = A;
        H.eps_aca_ = std::min(A.eps_aca_, B.eps_aca_);
        for (size_t t = 0; t < A.tree_->nodes.size(); ++t) {
            if (A.tree_->nodes[t].is_leaf()) {
                H.dense_[t] = A.dense_[t] + B.dense_[t];
                continue;
            }
            H.lr12_[t] = merge(A.lr12_[t], B.lr12_[t], H.eps_aca_);
            H.lr21_[t] = merge(A.lr21_[t], B.lr21_[t], H.eps_aca_);
        }
        return H;
    }

private:
    HodlrMatrix(std::shared_ptr<const ClusterTree> tree, double eps)
        : tree_(std::move(tree)), eps_aca_(eps)
    {
    }

    void alloc()
    {
        dense_.resize(tree_->nodes.size());
        lr12_.resize(tree_->nodes.size());
        lr21_.resize(tree_->nodes.size());
    }

    void check_size(const Eigen::VectorXd& v) const
    {
        if (v.size() != size())
            throw ConfigError("hodlr: vector length does not match matrix");
    }

    std::vector<int> range_indices(int b, int e) const
    {
        return std::vector<int>(tree_->perm.begin() + b, tree_->perm.begin() + e);
    }

    detail::LowRankBlock compress_block(const EntryFn& entry, const std::vector<int>& rows,
                                        const std::vector<int>& cols,
                                        const std::vector<Vec2>& points, const HodlrOptions& opt)
    {
        if (opt.full_pivot)
            return detail::aca_full(entry, rows, cols, opt.eps_aca, opt.k_max, entry_evals_);
        // try pivot rows nearest the column cluster first
        Vec2 centroid = Vec2::Zero();
        for (int j : cols)
            centroid += points[j];
        centroid /= static_cast<double>(cols.size());
        std::vector<int> hint(rows.size());
        for (size_t i = 0; i < rows.size(); ++i)
            hint[i] = static_cast<int>(i);
        std::sort(hint.begin(), hint.end(), [&](int a, int b) {
            const double da = (points[rows[a]] - centroid).squaredNorm();
            const double db = (points[rows[b]] - centroid).squaredNorm();
            return da < db || (da == db && rows[a] < rows[b]);
        });
        return detail::aca_partial(entry, rows, cols, opt.eps_aca, opt.k_max, hint, entry_evals_);
    }

    static Eigen::MatrixXd extract(const Eigen::MatrixXd& A, const std::vector<int>& perm, int rb,
                                   int re, int cb, int ce)
    {
        Eigen::MatrixXd out(re - rb, ce - cb);
        for (int j = cb; j < ce; ++j)
            for (int i = rb; i < re; ++i)
                out(i - rb, j - cb) = A(perm[i], perm[j]);
        return out;
    }

    static detail::LowRankBlock svd_block(const Eigen::MatrixXd& blockmat, double eps, int k_max)
    {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(blockmat,
                                              Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::VectorXd& s = svd.singularValues();
        const double total2 = s.squaredNorm();
        int keep = static_cast<int>(s.size());
        double tail2 = 0;
        while (keep > 0) {
            const double cand = tail2 + s[keep - 1] * s[keep - 1];
            if (cand > eps * eps * total2)
                break;
            tail2 = cand;
            --keep;
        }
        detail::LowRankBlock blk;
        blk.rank_warning = keep > k_max;
        keep = std::min(keep, k_max);
        blk.U = svd.matrixU().leftCols(keep) * s.head(keep).asDiagonal();
        blk.V = svd.matrixV().leftCols(keep);
        return blk;
    }

    static detail::LowRankBlock merge(const detail::LowRankBlock& a, const detail::LowRankBlock& b,
                                      double eps)
    {
        Eigen::MatrixXd U(a.U.rows(), a.U.cols() + b.U.cols());
        U << a.U, b.U;
        Eigen::MatrixXd V(a.V.rows(), a.V.cols() + b.V.cols());
        V << a.V, b.V;
        auto out = detail::recompress(U, V, eps);
        out.rank_warning = a.rank_warning || b.rank_warning;
        return out;
    }

    void mv(size_t t, const Eigen::VectorXd& xp, Eigen::VectorXd& yp) const
    {
        const auto& nd = tree_->nodes[t];
        if (nd.is_leaf()) {
            yp.segment(nd.begin, nd.end - nd.begin) =
                dense_[t] * xp.segment(nd.begin, nd.end - nd.begin);
            return;
        }
        const auto& l = tree_->nodes[nd.left];
        const auto& r = tree_->nodes[nd.right];
        mv(nd.left, xp, yp);
        mv(nd.right, xp, yp);
        yp.segment(l.begin, l.end - l.begin) +=
            lr12_[t].U * (lr12_[t].V.transpose() * xp.segment(r.begin, r.end - r.begin));
        yp.segment(r.begin, r.end - r.begin) +=
            lr21_[t].U * (lr21_[t].V.transpose() * xp.segment(l.begin, l.end - l.begin));
    }

    std::shared_ptr<const ClusterTree> tree_;
    double eps_aca_ = 1e-5;
    long long entry_evals_ = 0;
    std::vector<Eigen::MatrixXd> dense_;
    std::vector<detail::LowRankBlock> lr12_, lr21_;

    friend class HodlrFactorization;
    friend HodlrMatrix symmetrize(const HodlrMatrix&);
};

// Row/column symmetric scaling by lumped mass weights: A = M Phi M.
inline HodlrMatrix sandwich_mass(const HodlrMatrix& H_phi, const LumpedMass& mass)
{
    return H_phi.sandwich(mass.weights(), mass.weights());
}

// 0.5*(H + H^T) with the lower off-diagonal blocks mirrored from the upper
// ones after recompression, so the reconstruction is symmetric to machine
// precision rather than to the recompression tolerance.
inline HodlrMatrix symmetrize(const HodlrMatrix& H)
{
    HodlrMatrix S = add(H, H.transpose()).scaled(0.5);
    for (size_t t = 0; t < S.tree_->nodes.size(); ++t) {
        const auto& nd = S.tree_->nodes[t];
        if (nd.is_leaf()) {
            S.dense_[t] = 0.5 * (S.dense_[t] + S.dense_[t].transpose().eval());
        } else {
            S.lr21_[t] = {S.lr12_[t].V, S.lr12_[t].U, S.lr12_[t].rank_warning};
        }
    }
    return S;
}

// Recursive HODLR factorization: dense LDLT on the leaves, Woodbury updates
// for the off-diagonal low-rank couplings. Intended for SPD matrices; a
// non-positive leaf pivot raises an error naming the level.
class HodlrFactorization {
public:
    explicit HodlrFactorization(const HodlrMatrix& H) : H_(H)
    {
        leaf_.resize(H.tree_->nodes.size());
        y1_.resize(H.tree_->nodes.size());
        y2_.resize(H.tree_->nodes.size());
        cap_.resize(H.tree_->nodes.size());
        factor(0, 0);
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& b) const
    {
        if (b.size() != H_.size())
            throw ConfigError("hodlr solve: vector length does not match matrix");
        Eigen::MatrixXd bp(b.size(), 1);
        for (int k = 0; k < H_.size(); ++k)
            bp(k, 0) = b[H_.tree_->perm[k]];
        const Eigen::MatrixXd xp = solve_node(0, bp);
        Eigen::VectorXd x(b.size());
        for (int k = 0; k < H_.size(); ++k)
            x[H_.tree_->perm[k]] = xp(k, 0);
        return x;
    }

    // multi-RHS solve in original ordering
    Eigen::MatrixXd solve(const Eigen::MatrixXd& B) const
    {
        Eigen::MatrixXd Bp(B.rows(), B.cols());
        for (int k = 0; k < H_.size(); ++k)
            Bp.row(k) = B.row(H_.tree_->perm[k]);
        const Eigen::MatrixXd Xp = solve_node(0, Bp);
        Eigen::MatrixXd X(B.rows(), B.cols());
        for (int k = 0; k < H_.size(); ++k)
            X.row(H_.tree_->perm[k]) = Xp.row(k);
        return X;
    }

private:
    void factor(size_t t, int depth)
    {
        const auto& nd = H_.tree_->nodes[t];
        if (nd.is_leaf()) {
            leaf_[t].compute(H_.dense_[t]);
            if (leaf_[t].info() != Eigen::Success || (leaf_[t].vectorD().array() <= 0).any())
                throw NumericalError("hodlr factorize: indefinite leaf pivot at level " +
                                     std::to_string(depth) + " (rows " + std::to_string(nd.begin) +
                                     ".." + std::to_string(nd.end) + ")");
            return;
        }
        factor(nd.left, depth + 1);
        factor(nd.right, depth + 1);

        const auto& b12 = H_.lr12_[t];
        const auto& b21 = H_.lr21_[t];
        y1_[t] = solve_node(nd.left, b12.U);  // D1^{-1} U12
        y2_[t] = solve_node(nd.right, b21.U); // D2^{-1} U21

        const int r12 = b12.rank(), r21 = b21.rank();
        Eigen::MatrixXd C = Eigen::MatrixXd::Identity(r12 + r21, r12 + r21);
        C.topRightCorner(r12, r21) = b12.V.transpose() * y2_[t];
        C.bottomLeftCorner(r21, r12) = b21.V.transpose() * y1_[t];
        cap_[t].compute(C);
        if ((cap_[t].matrixLU().diagonal().array().abs() < 1e-300).any())
            throw NumericalError("hodlr factorize: singular coupling at level " +
                                 std::to_string(depth));
    }

    Eigen::MatrixXd solve_node(size_t t, const Eigen::MatrixXd& b) const
    {
        const auto& nd = H_.tree_->nodes[t];
        if (nd.is_leaf())
            return leaf_[t].solve(b);

        const auto& l = H_.tree_->nodes[nd.left];
        const auto& r = H_.tree_->nodes[nd.right];
        const int n1 = l.end - l.begin;
        const int n2 = r.end - r.begin;
        Eigen::MatrixXd y(b.rows(), b.cols());
        y.topRows(n1) = solve_node(nd.left, b.topRows(n1));
        y.bottomRows(n2) = solve_node(nd.right, b.bottomRows(n2));

        const auto& b12 = H_.lr12_[t];
        const auto& b21 = H_.lr21_[t];
        const int r12 = b12.rank(), r21 = b21.rank();
        if (r12 + r21 == 0)
            return y;
        Eigen::MatrixXd rhs(r12 + r21, b.cols());
        rhs.topRows(r12) = b12.V.transpose() * y.bottomRows(n2);
        rhs.bottomRows(r21) = b21.V.transpose() * y.topRows(n1);
        const Eigen::MatrixXd s = cap_[t].solve(rhs);
        y.topRows(n1) -= y1_[t] * s.topRows(r12);
        y.bottomRows(n2) -= y2_[t] * s.bottomRows(r21);
        return y;
    }

    HodlrMatrix H_;
    std::vector<Eigen::LDLT<Eigen::MatrixXd>> leaf_;
    std::vector<Eigen::MatrixXd> y1_, y2_;
    std::vector<Eigen::PartialPivLU<Eigen::MatrixXd>> cap_;
};

inline HodlrFactorization factorize(const HodlrMatrix& H) { return HodlrFactorization(H); }

} // namespace psfh
