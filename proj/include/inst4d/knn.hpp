#pragma once

#include <algorithm>
#include <vector>

#include "inst4d/quat.hpp"

namespace inst4d {

// Static 3D kd-tree for k-nearest-neighbor queries. Median split on the
// widest axis; queries break distance ties by lower point index.
class KdTree3 {
public:
    explicit KdTree3(const std::vector<Vec3>& points);

    // Indices of the k nearest points to `query`, nearest first. `exclude`
    // (if >= 0) is skipped, for self-queries.
    std::vector<int> nearest(const Vec3& query, int k, int exclude = -1) const;

    int size() const { return static_cast<int>(points_.size()); }

private:
    struct Node {
        int axis = -1;       // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf range into order_
    };

    int build(int begin, int end);

    std::vector<Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace inst4d
