#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "saqe/cdf.hpp"
#include "saqe/data.hpp"
#include "saqe/ner.hpp"
#include "saqe/parallel.hpp"
#include "saqe/rng.hpp"

namespace saqe {

// inf{y : n_k^{-1} sum_j 1(y_kj <= y) >= alpha}.
double quantile_direct(const SurveySample& sample, std::size_t area, double alpha);
CdfEstimate cdf_direct(const SurveySample& sample, std::size_t area);

// Quantile regression by IRLS on a smoothed check loss (residuals within h of
// zero get weight 1/h instead of 1/|r|), finished by an exact vertex exchange
// on the unsmoothed loss. X must carry its own intercept column.
VectorXd fit_smoothed_quantile_regression(const MatrixXd& X, const VectorXd& y, double q, double h,
                                          const VectorXd* start = nullptr, int max_iter = 100, double tol = 1e-8);

struct MqOptions {
  int grid_size = 199;  // q = 1..grid_size over (grid_size + 1)
  int max_iter = 100;
  double tol = 1e-8;
  double smoothing = 1e-4;  // h = smoothing * MAD(y_k)
  Execution execution = Execution::parallel;
  int threads = 0;
};

// Per-area M-quantile fits with an intercept column prepended to x.
struct MqFit {
  std::vector<std::string> area_ids;
  std::vector<double> grid;
  std::vector<MatrixXd> beta_by_q;   // per area: (d + 1) x grid
  std::vector<VectorXd> q_unit;      // per area: q_kj
  std::vector<double> q_area;        // q_k. = mean of q_kj
  std::vector<VectorXd> beta_area;   // beta_k(q_k.)
  std::vector<VectorXd> residuals;   // y_kj - x_kj' beta_k(q_k.)

  double predict(std::size_t area, const Eigen::Ref<const VectorXd>& x) const;
};

MqFit fit_mq(const SurveySample& sample, const MqOptions& options = {});

// N_k^{-1}[sum_{j in s_k} 1(y_kj <= t) + sum_{j not in s_k} G_k(t - x_kj' beta_k(q_k.))].
CdfEstimate cdf_mq(const MqFit& fit, const SurveySample& sample, const CensusFrame& census, std::size_t area);

// Monte-Carlo EBP: for each replicate l, u ~ N(0, (1 - gamma_k) sigma_v2) shared
// by the area and eps ~ N(0, sigma_e2) per out-of-sample unit. Replicate l
// draws from rng.child(l).
CdfEstimate cdf_mr(const NerFit& ner, const SurveySample& sample, const CensusFrame& census, std::size_t area,
                   int draws, const RngStream& rng, Execution execution = Execution::parallel, int threads = 0);

}  // namespace saqe
