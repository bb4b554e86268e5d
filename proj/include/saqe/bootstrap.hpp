#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "saqe/data.hpp"
#include "saqe/drm.hpp"
#include "saqe/ner.hpp"
#include "saqe/parallel.hpp"
#include "saqe/pipeline.hpp"
#include "saqe/rng.hpp"

namespace saqe {

enum class BootstrapVariant { census_drm, census_ner, nocensus_drm };

BootstrapVariant parse_variant(std::string_view name);
std::string variant_name(BootstrapVariant v);
bool variant_uses_census(BootstrapVariant v);
bool variant_uses_drm(BootstrapVariant v);

// iid draws from the discrete distribution of G_k.
std::vector<double> sample_gk(const GkCdf& gk, std::size_t count, const RngStream& rng);
std::vector<double> sample_gk(const GkCdf& gk, std::size_t count, std::mt19937_64& engine);

struct BootstrapPlan {
  int B = 100;
  BootstrapVariant variant = BootstrapVariant::census_drm;
  std::vector<double> alphas = default_alphas();
  std::vector<Method> methods;
  std::uint64_t seed = 1;
  PipelineOptions pipeline;
};

// One bootstrap world as seen by a predictor.
struct BootstrapReplicate {
  int b;
  const SurveySample* sample;
  const CensusFrame* census;          // null for the no-census variant
  std::vector<VectorXd> population;   // per area: y* for the census rows (or the sampled units)
  MatrixXd truth;                     // areas x alphas: quantiles of the bootstrap population
};

// Replaces the method pipeline: returns an areas x alphas matrix of predictions.
using ReplicatePredictor = std::function<MatrixXd(const BootstrapReplicate&)>;

struct MethodMse {
  std::string method;
  MatrixXd mse;  // areas x alphas
};

struct MseReport {
  BootstrapVariant variant = BootstrapVariant::census_drm;
  std::vector<std::string> area_ids;
  std::vector<double> alphas;
  std::vector<MethodMse> methods;
  int B = 0;
  int failures = 0;
  std::vector<std::string> warnings;
  double max_constraint_residual = 0.0;

  const MethodMse& find(std::string_view method) const;
};

// Parametric bootstrap of the quantile MSE. census must be aligned to survey
// and carry sample links for the census variants; drm must be given for the
// DRM variants. Replicate b draws from root.child(b).
MseReport bootstrap_mse(const BootstrapPlan& plan, const SurveySample& survey, const CensusFrame* census,
                        const NerFit& ner, const DrmFit* drm, const RngStream& root, Execution execution,
                        const ReplicatePredictor& custom = {});
// Same, with root = RngStream(plan.seed).
MseReport bootstrap_mse(const BootstrapPlan& plan, const SurveySample& survey, const CensusFrame* census,
                        const NerFit& ner, const DrmFit* drm, Execution execution = Execution::parallel,
                        const ReplicatePredictor& custom = {});

}  // namespace saqe
