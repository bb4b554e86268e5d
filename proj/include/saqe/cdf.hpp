#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace saqe {

// Right-continuous step function: F(t) = sum of weights of atoms <= t.
// Atoms are sorted; cumulative[i] is the mass of atoms 0..i.
class StepFunction {
 public:
  StepFunction() = default;

  // Sorts atoms by value (stable), weights are not renormalized.
  static StepFunction from_atoms(std::vector<double> values, std::vector<double> weights);
  // Equal weights 1/n with cumulative[i] = (i + 1) / n computed exactly.
  static StepFunction empirical(std::span<const double> values);

  double operator()(double t) const;
  // Number of atoms <= t.
  std::size_t rank(double t) const;

  const std::vector<double>& values() const noexcept { return values_; }
  const std::vector<double>& cumulative() const noexcept { return cumulative_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  double total() const noexcept { return cumulative_.empty() ? 0.0 : cumulative_.back(); }

 private:
  std::vector<double> values_;
  std::vector<double> cumulative_;
};

// A predicted distribution function of the form
//   F(y) = sum_j w_j B(y - a_j) + P(y)
// where B is a N(0, sigma^2) CDF (gaussian_mixture) or a step function
// (step_mixture), and P is an optional point-mass part. Pure step and
// Monte-Carlo predictors have no shifted component.
class CdfEstimate {
 public:
  enum class Kind { step, gaussian_mixture, mc_mixture, step_mixture };

  static CdfEstimate step(StepFunction f);
  static CdfEstimate mc_mixture(StepFunction f);
  static CdfEstimate gaussian_mixture(std::vector<double> shifts, std::vector<double> weights, double sigma,
                                      StepFunction points = {});
  static CdfEstimate step_mixture(StepFunction base, std::vector<double> shifts, std::vector<double> weights,
                                  StepFunction points = {});

  double operator()(double y) const;
  // Derivative of the smooth part (gaussian_mixture only; 0 otherwise).
  double density(double y) const;

  Kind kind() const noexcept { return kind_; }
  double total_mass() const;
  // Location and spread used to seed the inversion bracket.
  double center() const;
  double scale() const;

  const std::vector<double>& shifts() const noexcept { return shifts_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const StepFunction& base() const noexcept { return base_; }
  const StepFunction& points() const noexcept { return points_; }
  double sigma() const noexcept { return sigma_; }

  // Step kinds only: number of atoms in (lo, hi] and their values.
  std::size_t count_atoms(double lo, double hi) const;
  std::vector<double> atoms_in(double lo, double hi) const;

 private:
  Kind kind_ = Kind::step;
  std::vector<double> shifts_;  // ascending
  std::vector<double> weights_;
  double sigma_ = 0.0;
  StepFunction base_;
  StepFunction points_;

  double eval_base_sum(double y) const;
};

// inf{y : F(y) >= alpha}. Exact for step kinds (alpha is lowered by 1e-12 to absorb
// rounding in accumulated weights); bracket expansion plus
// safeguarded Newton/bisection for gaussian mixtures. Throws DomainError for
// alpha outside (0, 1).
double invert(const CdfEstimate& cdf, double alpha);

// inf-type quantile of an unweighted sample.
double empirical_quantile(std::span<const double> values, double alpha);

// Predicted quantiles for every (area, alpha) pair of one method.
struct QuantileTable {
  std::string method;
  std::vector<std::string> area_ids;
  std::vector<double> alphas;
  Eigen::MatrixXd values;  // areas x alphas

  bool monotone_in_alpha() const;
};

// {R (m + 1)}^{-1} sum_r sum_k (xi_hat - xi)^2 for each alpha.
std::vector<double> amse(std::span<const QuantileTable> predictions, std::span<const QuantileTable> truths);

// Mean of estimated / simulated over areas, excluding the two areas with the
// largest and the two with the smallest simulated MSE. Needs >= 5 areas.
double trimmed_ratio(std::span<const double> estimated_mse, std::span<const double> simulated_mse);

std::vector<double> default_alphas();

}  // namespace saqe
