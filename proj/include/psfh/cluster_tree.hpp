#pragma once

#include <algorithm>
#include <memory>
#include <vector>

#include "psfh/grid.hpp"

namespace psfh {

// Binary geometric cluster tree: recursive median split along the longest
// axis of the cluster bounding box, ties to the lower half. Deterministic.
struct ClusterTree {
    struct Node {
        int begin, end;     // range into perm
        int left = -1, right = -1;
        bool is_leaf() const { return left < 0; }
    };

    std::vector<int> perm;   // perm[k] = original index at tree position k
    std::vector<Node> nodes; // nodes[0] is the root
    int n_leaf = 0;

    int size() const { return static_cast<int>(perm.size()); }

    int depth() const { return depth_of(0); }

    bool same_structure(const ClusterTree& o) const
    {
        if (perm != o.perm || nodes.size() != o.nodes.size())
            return false;
        for (size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].begin != o.nodes[i].begin || nodes[i].end != o.nodes[i].end ||
                nodes[i].left != o.nodes[i].left || nodes[i].right != o.nodes[i].right)
                return false;
        return true;
    }

private:
    int depth_of(int t) const
    {
        const Node& nd = nodes[t];
        if (nd.is_leaf())
            return 1;
        return 1 + std::max(depth_of(nd.left), depth_of(nd.right));
    }
};

inline std::shared_ptr<const ClusterTree> build_cluster_tree(const std::vector<Vec2>& points,
                                                             int n_leaf)
{
    if (n_leaf < 1)
        throw ConfigError("build_cluster_tree: n_leaf must be >= 1");
    auto tree = std::make_shared<ClusterTree>();
    tree->n_leaf = n_leaf;
    tree->perm.resize(points.size());
    for (size_t i = 0; i < points.size(); ++i)
        tree->perm[i] = static_cast<int>(i);

    struct Builder {
        const std::vector<Vec2>& pts;
        ClusterTree& t;
        int n_leaf;

        int split(int begin, int end)
        {
            const int self = static_cast<int>(t.nodes.size());
            t.nodes.push_back({begin, end});
            if (end - begin <= n_leaf)
                return self;

            Vec2 lo = pts[t.perm[begin]], hi = lo;
            for (int k = begin + 1; k < end; ++k) {
                lo = lo.cwiseMin(pts[t.perm[k]]);
                hi = hi.cwiseMax(pts[t.perm[k]]);
            }
            const int axis = (hi.y() - lo.y() > hi.x() - lo.x()) ? 1 : 0;
            std::sort(t.perm.begin() + begin, t.perm.begin() + end, [&](int a, int b) {
                return pts[a][axis] < pts[b][axis] || (pts[a][axis] == pts[b][axis] && a < b);
            });
            const int mid = begin + (end - begin + 1) / 2;
            const int l = split(begin, mid);
            const int r = split(mid, end);
            t.nodes[self].left = l;
            t.nodes[self].right = r;
            return self;
        }
    };

    if (!points.empty())
        Builder{points, *tree, n_leaf}.split(0, static_cast<int>(points.size()));
    return tree;
}

inline std::shared_ptr<const ClusterTree> build_cluster_tree(const Grid& grid, int n_leaf)
{
    std::vector<Vec2> pts(grid.num_nodes());
    for (int i = 0; i < grid.num_nodes(); ++i)
        pts[i] = grid.node(i);
    return build_cluster_tree(pts, n_leaf);
}

} // namespace psfh
