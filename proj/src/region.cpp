#include "pirl/region.hpp"

#include "pirl/errors.hpp"

namespace pirl {

Region::Region(std::vector<Box> boxes) : boxes_(std::move(boxes)) {
  for (const Box& b : boxes_) {
    if (b.lo.size() != b.hi.size() || b.lo.size() != boxes_.front().lo.size()) {
      throw ConfigError("region: box dimensions disagree");
    }
    if ((b.lo.array() > b.hi.array()).any()) {
      throw ConfigError("region: box has lo > hi");
    }
  }
}

Region Region::box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
  return Region({Box{std::move(lo), std::move(hi)}});
}

Region Region::point(Eigen::VectorXd p) {
  return Region({Box{p, p}});
}

std::size_t Region::dim() const {
  return boxes_.empty() ? 0 : static_cast<std::size_t>(boxes_.front().lo.size());
}

Eigen::VectorXd Region::sample(Rng& rng) const {
  if (boxes_.empty()) {
    throw ContractViolation("region: cannot sample an empty region");
  }
  const Box& b = boxes_.size() == 1 ? boxes_.front() : boxes_[rng.index(boxes_.size())];
  Eigen::VectorXd x(b.lo.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform(b.lo[i], b.hi[i]);
  }
  return x;
}

Eigen::VectorXd Region::centroid() const {
  if (boxes_.empty()) {
    throw ContractViolation("region: empty region has no centroid");
  }
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  for (const Box& b : boxes_) {
    c += 0.5 * (b.lo + b.hi);
  }
  return c / static_cast<double>(boxes_.size());
}

}  // namespace pirl
