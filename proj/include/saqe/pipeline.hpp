#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "saqe/cdf.hpp"
#include "saqe/competitors.hpp"
#include "saqe/data.hpp"
#include "saqe/drm.hpp"
#include "saqe/ner.hpp"
#include "saqe/parallel.hpp"
#include "saqe/rng.hpp"

namespace saqe {

enum class Method { dir, ner, el, mq, mr, eb1, eb2, ebel1, ebel2 };

// Accepts dir, ner, el, mq, mr, eb1, eb2, ebel1, ebel2; eb and ebel mean the
// EB2 and EBEL2 forms. Throws ConfigError.
Method parse_method(std::string_view name);
std::vector<Method> parse_methods(std::string_view comma_list);
std::string method_name(Method m);
bool needs_census(Method m);
bool needs_sample_link(Method m);
bool needs_ner(Method m);
bool needs_drm(Method m);

struct PipelineOptions {
  BasisQ basis;
  std::size_t baseline = 0;
  int mr_draws = 100;
  NerOptions ner;
  MqOptions mq;
  Execution execution = Execution::parallel;
  int threads = 0;
};

struct PipelineFits {
  std::optional<NerFit> ner;
  std::optional<DrmFit> drm;
  std::optional<MqFit> mq;
};

// Fits every model the listed methods rely on. Census-only methods without a
// census raise ConfigError. theta_start warm-starts the DRM fit.
PipelineFits fit_pipeline(const std::vector<Method>& methods, const SurveySample& sample, const CensusFrame* census,
                          const PipelineOptions& options, const MatrixXd* theta_start = nullptr);

// Builds the method's CDF for one area. mr_rng is the MR stream of that area.
CdfEstimate predict_cdf(Method method, const PipelineFits& fits, const SurveySample& sample, const CensusFrame* census,
                        std::size_t area, const PipelineOptions& options, const RngStream& mr_rng);

// Quantile table over all areas. The MR stream of area k is mr_rng.child(k).
QuantileTable predict_quantiles(Method method, const PipelineFits& fits, const SurveySample& sample,
                                const CensusFrame* census, const std::vector<double>& alphas,
                                const PipelineOptions& options, const RngStream& mr_rng);

// Checks 0 < alpha < 1 for every entry and a non-empty list. Throws DomainError.
void validate_alphas(const std::vector<double>& alphas);

}  // namespace saqe
