#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "saqe/cdf.hpp"
#include "saqe/data.hpp"
#include "saqe/ner.hpp"

namespace saqe {

// Tilting basis q(t) of the density ratio model log dG_k/dG_0 = theta_k' q(t).
// The first component is always 1.
class BasisQ {
 public:
  enum class Kind { signroot, linear, quadratic, linear_sqrtabs };

  BasisQ() = default;
  explicit BasisQ(Kind kind) : kind_(kind) {}
  // Accepts signroot, linear, quadratic, sqrtabs. Throws ConfigError.
  static BasisQ from_name(std::string_view name);

  Kind kind() const noexcept { return kind_; }
  std::string name() const;
  Index dim() const noexcept;
  VectorXd operator()(double t) const;
  void eval(double t, double* out) const;

 private:
  Kind kind_ = Kind::signroot;
};

// Least squares on the within-area centred model; removes every area effect.
struct CentralizedFit {
  VectorXd beta;
  std::vector<VectorXd> residuals;  // per area, each sums to 0
  std::vector<double> nu_hat;       // ybar_k - xbar_k' beta
};

CentralizedFit fit_beta_centralized(const SurveySample& sample);

// Dual empirical log-likelihood
//   l(theta) = -sum_i log sum_r rho_r exp(theta_r' q(e_i)) + sum_{k,j} theta_k' q(e_kj)
// on fixed residual samples. theta is (m + 1) x d2 with the baseline row held
// at zero; the free parameters are the remaining rows, flattened row-major.
class DualObjective {
 public:
  DualObjective(const std::vector<VectorXd>& samples, BasisQ basis, std::size_t baseline = 0);

  std::size_t num_areas() const noexcept { return sizes_.size(); }
  Index num_params() const noexcept { return static_cast<Index>((sizes_.size() - 1)) * d2_; }
  Index total_size() const noexcept { return q_.rows(); }
  std::size_t baseline() const noexcept { return baseline_; }

  double value(const MatrixXd& theta) const;
  VectorXd gradient(const MatrixXd& theta) const;
  // Value, gradient and (negative semidefinite) Hessian of the free parameters.
  double evaluate(const MatrixXd& theta, VectorXd* gradient, MatrixXd* hessian) const;

  VectorXd flatten(const MatrixXd& theta) const;
  MatrixXd unflatten(const VectorXd& params) const;

  // Row-normalized log-sum-exp per pooled observation.
  VectorXd log_normalizer(const MatrixXd& theta) const;
  const MatrixXd& basis_values() const noexcept { return q_; }
  const std::vector<double>& rho() const noexcept { return rho_; }

 private:
  BasisQ basis_;
  std::size_t baseline_;
  Index d2_;
  std::vector<Index> sizes_;
  std::vector<Index> offsets_;
  std::vector<double> rho_;
  std::vector<double> log_rho_;
  MatrixXd q_;            // n x d2, pooled in area order
  MatrixXd own_q_sum_;    // (m + 1) x d2: sum_j q(e_kj) per area
};

struct DrmOptions {
  std::size_t baseline = 0;
  int max_iter = 200;
  double grad_tol_per_n = 1e-8;
  std::optional<MatrixXd> theta_start;  // (m + 1) x d2 warm start
};

struct DrmIteration {
  int iteration;
  double objective;
  double grad_max;
  double step;
};

struct DrmFit {
  std::vector<std::string> area_ids;
  BasisQ basis;
  std::size_t baseline = 0;
  VectorXd beta_ls;                   // empty when fitted from residuals only
  std::vector<VectorXd> residuals;    // per area
  std::vector<double> nu_hat;         // per area, empty when fitted from residuals only
  std::vector<double> rho;
  MatrixXd theta;                     // (m + 1) x d2, baseline row zero
  VectorXd pooled;                    // residuals pooled in area order
  VectorXd p_base;                    // fitted baseline weights, pooled order
  VectorXd log_normalizer;            // log sum_r rho_r exp(theta_r' q(e_i))
  double loglik_dual = 0.0;
  double grad_max = 0.0;
  std::vector<DrmIteration> trace;

  // max_r |sum_i p_i exp(theta_r' q(e_i)) - 1|.
  double constraint_residual() const;
  // Weights of G_k on the pooled residuals (pooled order).
  VectorXd area_weights(std::size_t k) const;
};

// Damped Newton on the concave dual with Armijo backtracking.
DrmFit fit_drm(const std::vector<VectorXd>& residuals, const BasisQ& basis, const DrmOptions& options = {});
// Centralized LS residuals followed by the dual fit.
DrmFit fit_drm(const SurveySample& sample, const BasisQ& basis, const DrmOptions& options = {});

// Area-k error distribution on all pooled residuals (strength borrowing).
struct GkCdf {
  std::vector<double> support;  // sorted
  std::vector<double> weights;  // aligned with support
  StepFunction step() const;
  double operator()(double t) const { return step()(t); }
  double total() const;
};

GkCdf gk_cdf(const DrmFit& fit, std::size_t area);

// y -> n_k^{-1} sum_j G_k(y - (x_kj - xbar_k)' beta_ls - eblup_mean_k).
CdfEstimate cdf_el(const DrmFit& drm, const NerFit& ner, const SurveySample& sample, std::size_t area);

enum class EbelVariant { ebel1, ebel2 };

// Census forms with nu_hat_k = ybar_k - xbar_k' beta_ls.
CdfEstimate cdf_ebel(const DrmFit& drm, const SurveySample& sample, const CensusFrame& census, std::size_t area,
                     EbelVariant variant);

}  // namespace saqe
