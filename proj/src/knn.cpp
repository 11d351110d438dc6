#include "inst4d/knn.hpp"

#include <limits>
#include <numeric>

namespace inst4d {

namespace {
constexpr int kLeafSize = 8;
}

KdTree3::KdTree3(const std::vector<Vec3>& points) : points_(points) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!points_.empty()) root_ = build(0, static_cast<int>(points_.size()));
}

int KdTree3::build(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    if (end - begin <= kLeafSize) {
        nodes_.push_back(node);
        return static_cast<int>(nodes_.size()) - 1;
    }
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
    Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
    for (int i = begin; i < end; ++i) {
        const Vec3& p = points_[static_cast<size_t>(order_[static_cast<size_t>(i)])];
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         double pa = points_[static_cast<size_t>(a)][axis];
                         double pb = points_[static_cast<size_t>(b)][axis];
                         return pa < pb || (pa == pb && a < b);
                     });
    node.axis = axis;
    node.split = points_[static_cast<size_t>(order_[static_cast<size_t>(mid)])][axis];
    int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    int left = build(begin, mid);
    int right = build(mid, end);
    nodes_[static_cast<size_t>(self)].left = left;
    nodes_[static_cast<size_t>(self)].right = right;
    return self;
}

std::vector<int> KdTree3::nearest(const Vec3& query, int k, int exclude) const {
    struct Hit {
        double d2;
        int idx;
        bool operator<(const Hit& o) const {  // "worse" ordering for the heap top
            return d2 < o.d2 || (d2 == o.d2 && idx < o.idx);
        }
    };
    std::vector<Hit> heap;  // max-heap on (d2, idx)
    auto worse = [](const Hit& a, const Hit& b) { return a < b; };

    std::function<void(int)> visit = [&](int ni) {
        const Node& node = nodes_[static_cast<size_t>(ni)];
        if (node.axis < 0) {
            for (int i = node.begin; i < node.end; ++i) {
                int idx = order_[static_cast<size_t>(i)];
                if (idx == exclude) continue;
                Hit h{(points_[static_cast<size_t>(idx)] - query).squaredNorm(), idx};
                if (static_cast<int>(heap.size()) < k) {
                    heap.push_back(h);
                    std::push_heap(heap.begin(), heap.end(), worse);
                } else if (h < heap.front()) {
                    std::pop_heap(heap.begin(), heap.end(), worse);
                    heap.back() = h;
                    std::push_heap(heap.begin(), heap.end(), worse);
                }
            }
            return;
        }
        double delta = query[node.axis] - node.split;
        int near = delta <= 0 ? node.left : node.right;
        int far = delta <= 0 ? node.right : node.left;
        visit(near);
        if (static_cast<int>(heap.size()) < k || delta * delta <= heap.front().d2) visit(far);
    };
    if (root_ >= 0 && k > 0) visit(root_);

    std::sort_heap(heap.begin(), heap.end(), worse);
    std::vector<int> out;
    out.reserve(heap.size());
    for (const Hit& h : heap) out.push_back(h.idx);
    return out;
}

}  // namespace inst4d
