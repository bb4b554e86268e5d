#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "saqe/cdf.hpp"
#include "saqe/data.hpp"

namespace saqe {

struct NerOptions {
  // Prepend a constant column; the area effects carry a non-zero mean otherwise.
  bool intercept = true;
  double phi_max = 1e6;
  double phi_tol = 1e-10;
  int grid_points = 120;
  int max_iter = 500;
};

// ML fit of y_k ~ N(X_k beta, sigma_e2 I + sigma_v2 11') and the EBLUP
//   eblup_mean_k = X̄_k' beta + gamma_k nu_k,   nu_k = ybar_k - xbar_k' beta.
struct NerFit {
  std::vector<std::string> area_ids;
  bool intercept = true;
  VectorXd beta;  // intercept first when present
  double sigma_v2 = 0.0;
  double sigma_e2 = 0.0;
  double phi = 0.0;  // sigma_v2 / sigma_e2
  double loglik = 0.0;
  double profile_gradient = 0.0;  // d loglik / d phi at the optimum
  int iterations = 0;
  bool sigma_v2_at_boundary = false;
  bool sigma_e2_degenerate = false;
  bool xbar_from_census = false;

  std::vector<Index> n;
  std::vector<double> gamma;
  std::vector<double> nu;
  std::vector<double> eblup_mean;
  std::vector<double> ybar;
  std::vector<VectorXd> xbar_sample;
  std::vector<VectorXd> xbar_pop;
  std::vector<std::string> warnings;

  // x' beta for a covariate row (intercept added when fitted with one).
  double linear_predictor(const Eigen::Ref<const VectorXd>& x) const;
  double sigma_e() const;
};

// Maximum-likelihood fit. X̄_k comes from `census` when given (full or means
// only), otherwise from the sample means with a recorded warning.
NerFit fit_ner_mle(const SurveySample& sample, const CensusFrame* census = nullptr, const NerOptions& options = {});

// Log-likelihood with beta replaced by its GLS estimate for the given variances.
double ner_loglik(const SurveySample& sample, double sigma_v2, double sigma_e2, bool intercept = true);

// Profile log-likelihood in phi = sigma_v2 / sigma_e2 (beta and sigma_e2
// maximized out) and its derivative.
struct NerProfilePoint {
  double phi;
  double loglik;
  double gradient;
  double sigma_e2;
  VectorXd beta;
};
NerProfilePoint ner_profile(const SurveySample& sample, double phi, bool intercept = true);

// Normal-theory predictor centred on the EBLUP mean:
//   y -> n_k^{-1} sum_j Phi({y - (x_kj - xbar_k)' beta - eblup_mean_k} / sigma_e).
CdfEstimate cdf_ner(const NerFit& fit, const SurveySample& sample, std::size_t area);

enum class EbVariant { eb1, eb2 };

// Census EBP forms. EB1 mixes sampled indicators with out-of-sample normal
// terms and needs the census sample link; EB2 uses every census row.
CdfEstimate cdf_eb(const NerFit& fit, const SurveySample& sample, const CensusFrame& census, std::size_t area,
                   EbVariant variant);

}  // namespace saqe
