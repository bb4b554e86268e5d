#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace saqe {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Observed units of one small area: x is n_k x d, y has n_k entries.
struct AreaSample {
  std::string area_id;
  MatrixXd x;
  VectorXd y;

  Index size() const { return y.size(); }
  VectorXd x_mean() const { return x.colwise().mean().transpose(); }
  double y_mean() const { return y.mean(); }
};

// Survey sample over m + 1 >= 2 areas. Immutable once constructed; the
// constructor enforces every invariant (n_k >= 2, common finite d, unique ids).
class SurveySample {
 public:
  explicit SurveySample(std::vector<AreaSample> areas);

  const std::vector<AreaSample>& areas() const noexcept { return areas_; }
  const AreaSample& area(std::size_t k) const { return areas_.at(k); }
  std::size_t num_areas() const noexcept { return areas_.size(); }
  Index dim() const noexcept { return dim_; }
  Index total_size() const noexcept { return total_; }

  // Throws DataError when the id is unknown.
  std::size_t index_of(std::string_view area_id) const;
  std::vector<std::string> area_ids() const;

  // rho_k = n_k / n.
  std::vector<double> rho() const;

 private:
  std::vector<AreaSample> areas_;
  Index dim_ = 0;
  Index total_ = 0;
};

// Census information for one area: either every unit's x (full) or only the
// mean vector and N_k. sample_link lists the (0-based) census rows that make up
// s_k, aligned with the order of the area's survey records.
struct CensusArea {
  std::string area_id;
  std::optional<MatrixXd> x;
  VectorXd mean;
  Index population_size = 0;
  std::optional<std::vector<Index>> sample_link;

  bool full() const { return x.has_value(); }
};

class CensusFrame {
 public:
  CensusFrame() = default;
  explicit CensusFrame(std::vector<CensusArea> areas);

  const std::vector<CensusArea>& areas() const noexcept { return areas_; }
  const CensusArea& area(std::size_t k) const { return areas_.at(k); }
  std::size_t num_areas() const noexcept { return areas_.size(); }
  Index dim() const noexcept { return dim_; }
  bool full() const;
  bool has_sample_link() const;
  // Throws DataError when the id is unknown.
  const CensusArea& find(std::string_view area_id) const;

  // Reorders the frame to the sample's area order and cross-checks N_k >= n_k,
  // the covariate dimension, and |sample_link| == n_k. Throws DataError.
  CensusFrame aligned_to(const SurveySample& sample) const;

 private:
  std::vector<CensusArea> areas_;
  Index dim_ = 0;
};

}  // namespace saqe
