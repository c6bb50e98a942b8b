#pragma once

#include <vector>

#include <Eigen/Dense>

#include "pirl/rng.hpp"

namespace pirl {

/// Axis-aligned box; a coordinate with lo == hi is pinned to that value.
struct Box {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

/// Finite union of boxes sampled by picking a box uniformly and then a point
/// uniformly inside it (open intervals, so a box never yields its own faces).
class Region {
 public:
  Region() = default;
  explicit Region(std::vector<Box> boxes);

  static Region box(Eigen::VectorXd lo, Eigen::VectorXd hi);
  static Region point(Eigen::VectorXd p);

  bool empty() const { return boxes_.empty(); }
  std::size_t dim() const;
  const std::vector<Box>& boxes() const { return boxes_; }

  /// Throws ContractViolation when the region is empty.
  Eigen::VectorXd sample(Rng& rng) const;
  Eigen::VectorXd centroid() const;

 private:
  std::vector<Box> boxes_;
};

}  // namespace pirl
