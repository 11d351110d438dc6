#pragma once

#include <Eigen/Core>
#include <vector>

namespace inst4d {

// Minimum-total-cost perfect assignment on a square cost matrix. Among all
// optimal assignments, returns the lexicographically smallest row->column
// vector (rows fixed in order, each taking the lowest column index that still
// permits an optimal completion).
std::vector<int> hungarian_assign(const Eigen::MatrixXd& cost);

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& perm);

bool is_permutation(const std::vector<int>& perm);
std::vector<int> invert_permutation(const std::vector<int>& perm);

}  // namespace inst4d
