#include "saqe/data.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "saqe/error.hpp"

namespace saqe {

SurveySample::SurveySample(std::vector<AreaSample> areas) : areas_(std::move(areas)) {
  if (areas_.size() < 2) {
    throw DataError("survey sample needs at least 2 areas, got " + std::to_string(areas_.size()));
  }
  dim_ = areas_.front().x.cols();
  std::unordered_set<std::string> seen;
  for (const auto& a : areas_) {
    if (!seen.insert(a.area_id).second) throw DataError("duplicate area id '" + a.area_id + "'");
    if (a.x.rows() != a.y.size()) {
      throw DataError("area '" + a.area_id + "': x has " + std::to_string(a.x.rows()) + " rows but y has " +
                      std::to_string(a.y.size()));
    }
    if (a.y.size() < 2) {
      throw DataError("area '" + a.area_id + "' has " + std::to_string(a.y.size()) +
                      " observation(s); at least 2 are required");
    }
    if (a.x.cols() != dim_) {
      throw DataError("area '" + a.area_id + "': covariate dimension " + std::to_string(a.x.cols()) +
                      " differs from " + std::to_string(dim_));
    }
    if (!a.x.allFinite() || !a.y.allFinite()) throw DataError("area '" + a.area_id + "' contains non-finite values");
    total_ += a.y.size();
  }
}

std::size_t SurveySample::index_of(std::string_view area_id) const {
  for (std::size_t k = 0; k < areas_.size(); ++k) {
    if (areas_[k].area_id == area_id) return k;
  }
  throw DataError("unknown area '" + std::string(area_id) + "'");
}

std::vector<std::string> SurveySample::area_ids() const {
  std::vector<std::string> ids;
  ids.reserve(areas_.size());
  for (const auto& a : areas_) ids.push_back(a.area_id);
  return ids;
}

std::vector<double> SurveySample::rho() const {
  std::vector<double> r;
  r.reserve(areas_.size());
  for (const auto& a : areas_) r.push_back(static_cast<double>(a.size()) / static_cast<double>(total_));
  return r;
}

CensusFrame::CensusFrame(std::vector<CensusArea> areas) : areas_(std::move(areas)) {
  if (areas_.empty()) throw DataError("census frame has no areas");
  dim_ = areas_.front().x ? areas_.front().x->cols() : areas_.front().mean.size();
  std::unordered_set<std::string> seen;
  for (auto& a : areas_) {
    if (!seen.insert(a.area_id).second) throw DataError("duplicate census area id '" + a.area_id + "'");
    if (a.x) {
      if (a.x->rows() == 0) throw DataError("census area '" + a.area_id + "' has no rows");
      a.population_size = a.x->rows();
      a.mean = a.x->colwise().mean().transpose();
    }
    if (a.mean.size() != dim_) throw DataError("census area '" + a.area_id + "' has inconsistent dimension");
    if (a.population_size <= 0) throw DataError("census area '" + a.area_id + "' has N_k <= 0");
    if (!a.mean.allFinite()) throw DataError("census area '" + a.area_id + "' contains non-finite values");
    if (a.sample_link) {
      if (!a.x) throw DataError("census area '" + a.area_id + "': sample link requires full census rows");
      std::unordered_set<Index> idx;
      for (Index i : *a.sample_link) {
        if (i < 0 || i >= a.population_size) {
          throw DataError("census area '" + a.area_id + "': sample link index " + std::to_string(i + 1) +
                          " outside 1.." + std::to_string(a.population_size));
        }
        if (!idx.insert(i).second) {
          throw DataError("census area '" + a.area_id + "': duplicate sample link index " + std::to_string(i + 1));
        }
      }
    }
  }
}

bool CensusFrame::full() const {
  return !areas_.empty() && std::all_of(areas_.begin(), areas_.end(), [](const CensusArea& a) { return a.full(); });
}

bool CensusFrame::has_sample_link() const {
  return !areas_.empty() &&
         std::all_of(areas_.begin(), areas_.end(), [](const CensusArea& a) { return a.sample_link.has_value(); });
}

const CensusArea& CensusFrame::find(std::string_view area_id) const {
  for (const auto& a : areas_) {
    if (a.area_id == area_id) return a;
  }
  throw DataError("census has no area '" + std::string(area_id) + "'");
}

CensusFrame CensusFrame::aligned_to(const SurveySample& sample) const {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < areas_.size(); ++i) pos.emplace(areas_[i].area_id, i);
  if (dim_ != sample.dim()) {
    throw DataError("census covariate dimension " + std::to_string(dim_) + " differs from survey dimension " +
                    std::to_string(sample.dim()));
  }
  std::vector<CensusArea> out;
  out.reserve(sample.num_areas());
  for (const auto& a : sample.areas()) {
    auto it = pos.find(a.area_id);
    if (it == pos.end()) throw DataError("census has no area '" + a.area_id + "'");
    const CensusArea& c = areas_[it->second];
    if (c.population_size < a.size()) {
      throw DataError("area '" + a.area_id + "': N_k = " + std::to_string(c.population_size) + " < n_k = " +
                      std::to_string(a.size()));
    }
    if (c.sample_link && static_cast<Index>(c.sample_link->size()) != a.size()) {
      throw DataError("area '" + a.area_id + "': census marks " + std::to_string(c.sample_link->size()) +
                      " sampled rows but the survey has " + std::to_string(a.size()));
    }
    out.push_back(c);
  }
  return CensusFrame(std::move(out));
}

}  // namespace saqe
