#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <vector>

#include "psfh/grid.hpp"

namespace psfh {

// Small 2D kd-tree for k-nearest-neighbor queries over a fixed point set.
// Each point carries an integer id; equidistant points are ordered by
// smaller id, so queries are fully deterministic.
class KdTree2d {
public:
    KdTree2d() = default;

    KdTree2d(std::vector<Vec2> points, std::vector<int> ids)
        : points_(std::move(points)), ids_(std::move(ids))
    {
        if (points_.size() != ids_.size())
            throw ConfigError("KdTree2d: points/ids size mismatch");
        order_.resize(points_.size());
        for (size_t i = 0; i < order_.size(); ++i)
            order_[i] = static_cast<int>(i);
        nodes_.reserve(2 * points_.size() + 1);
        if (!points_.empty())
            root_ = build(0, static_cast<int>(points_.size()), 0);
    }

    size_t size() const { return points_.size(); }

    struct Hit {
        double dist2;
        int index; // position in the original point array
        int id;
    };

    // k nearest points to `q`, sorted by (distance, id).
    std::vector<Hit> knn(const Vec2& q, int k) const
    {
        std::vector<Hit> heap; // max-heap on (dist2, id)
        heap.reserve(k + 1);
        if (root_ >= 0 && k > 0)
            search(root_, q, k, heap);
        std::sort(heap.begin(), heap.end(), hit_less);
        return heap;
    }

private:
    struct Node {
        int point;      // index into points_/ids_
        int left = -1;
        int right = -1;
        int axis = 0;
    };

    static bool hit_less(const Hit& a, const Hit& b)
    {
        return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.id < b.id);
    }

    int build(int begin, int end, int depth)
    {
        if (begin >= end)
            return -1;
        const int axis = depth % 2;
        const int mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](int a, int b) {
                             const double ca = points_[a][axis], cb = points_[b][axis];
                             return ca < cb || (ca == cb && ids_[a] < ids_[b]);
                         });
        Node nd;
        nd.point = order_[mid];
        nd.axis = axis;
        const int self = static_cast<int>(nodes_.size());
        nodes_.push_back(nd);
        const int l = build(begin, mid, depth + 1);
        const int r = build(mid + 1, end, depth + 1);
        nodes_[self].left = l;
        nodes_[self].right = r;
        return self;
    }

    void search(int node, const Vec2& q, int k, std::vector<Hit>& heap) const
    {
        const Node& nd = nodes_[node];
        const Vec2& p = points_[nd.point];
        Hit h{(p - q).squaredNorm(), nd.point, ids_[nd.point]};
        if (static_cast<int>(heap.size()) < k) {
            heap.push_back(h);
            std::push_heap(heap.begin(), heap.end(), hit_less);
        } else if (hit_less(h, heap.front())) {
            std::pop_heap(heap.begin(), heap.end(), hit_less);
            heap.back() = h;
            std::push_heap(heap.begin(), heap.end(), hit_less);
        }

        const double delta = q[nd.axis] - p[nd.axis];
        const int near = delta <= 0 ? nd.left : nd.right;
        const int far = delta <= 0 ? nd.right : nd.left;
        if (near >= 0)
            search(near, q, k, heap);
        if (far >= 0) {
            const bool full = static_cast<int>(heap.size()) >= k;
            if (!full || delta * delta <= heap.front().dist2)
                search(far, q, k, heap);
        }
    }

    std::vector<Vec2> points_;
    std::vector<int> ids_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

} // namespace psfh
