#include "saqe/competitors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <utility>

#include "saqe/error.hpp"

namespace saqe {

double quantile_direct(const SurveySample& sample, std::size_t area, double alpha) {
  const auto& y = sample.area(area).y;
  return empirical_quantile(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), alpha);
}

CdfEstimate cdf_direct(const SurveySample& sample, std::size_t area) {
  const auto& y = sample.area(area).y;
  return CdfEstimate::step(StepFunction::empirical(std::span<const double>(y.data(), static_cast<std::size_t>(y.size()))));
}

// ---------------------------------------------------------------------------
// M-quantile

namespace {

double median_of(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  return m;
}

double mad(const VectorXd& y) {
  std::vector<double> v(y.data(), y.data() + y.size());
  const double med = median_of(v);
  for (double& t : v) t = std::abs(t - med);
  return median_of(std::move(v));
}

MatrixXd with_intercept(const MatrixXd& x) {
  MatrixXd X(x.rows(), x.cols() + 1);
  X.col(0).setOnes();
  X.rightCols(x.cols()) = x;
  return X;
}

double check_loss(const MatrixXd& X, const VectorXd& y, const VectorXd& b, double q) {
  double acc = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double r = y(i) - X.row(i).dot(b);
    acc += r > 0.0 ? q * r : (q - 1.0) * r;
  }
  return acc;
}

// Exact minimizer of the check loss by vertex exchange, started from the
// basis of the p best-fitted units. Each accepted step strictly lowers the
// loss, so the walk ends at an optimal vertex.
VectorXd polish_vertex(const MatrixXd& X, const VectorXd& y, double q, const VectorXd& approx) {
  const Index n = X.rows(), p = X.cols();
  if (n <= p) return approx;
  const double eps = 1e-12 * (1.0 + y.lpNorm<Eigen::Infinity>());
  VectorXd r = y - X * approx;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return std::abs(r(a)) < std::abs(r(b)); });
  std::vector<Index> basis;
  MatrixXd rows(0, p);
  for (Index i : order) {
    MatrixXd trial(rows.rows() + 1, p);
    trial << rows, X.row(i);
    if (Eigen::FullPivLU<MatrixXd>(trial).rank() == trial.rows()) {
      rows = std::move(trial);
      basis.push_back(i);
      if (static_cast<Index>(basis.size()) == p) break;
    }
  }
  if (static_cast<Index>(basis.size()) < p) return approx;
  std::vector<char> in_basis(static_cast<std::size_t>(n), 0);
  for (Index i : basis) in_basis[static_cast<std::size_t>(i)] = 1;
  Eigen::PartialPivLU<MatrixXd> lu(rows);
  VectorXd yb(p);
  for (Index j = 0; j < p; ++j) yb(j) = y(basis[static_cast<std::size_t>(j)]);
  VectorXd b = lu.solve(yb);

  std::vector<std::pair<double, Index>> breaks;
  for (int it = 0; it < 50 * static_cast<int>(n); ++it) {
    r = y - X * b;
    const MatrixXd inv = lu.inverse();
    double best_slope = -1e-12;
    Index leave = -1;
    VectorXd best_dir;
    for (Index j = 0; j < p; ++j) {
      for (double sgn : {1.0, -1.0}) {
        const VectorXd dir = sgn * inv.col(j);
        // Basis unit j leaves its fitted value: residual -sgn t.
        double slope = sgn > 0 ? 1.0 - q : q;
        for (Index i = 0; i < n; ++i) {
          if (in_basis[static_cast<std::size_t>(i)]) continue;
          const double a = X.row(i).dot(dir);
          if (r(i) > eps) {
            slope -= q * a;
          } else if (r(i) < -eps) {
            slope += (1.0 - q) * a;
          } else {
            slope += std::max(-q * a, (1.0 - q) * a);
          }
        }
        if (slope < best_slope) {
          best_slope = slope;
          leave = j;
          best_dir = dir;
        }
      }
    }
    if (leave < 0) break;
    // Convex piecewise-linear line search: each crossing raises the slope by |a_i|.
    breaks.clear();
    for (Index i = 0; i < n; ++i) {
      if (in_basis[static_cast<std::size_t>(i)]) continue;
      const double a = X.row(i).dot(best_dir);
      if (std::abs(r(i)) <= eps || a == 0.0) continue;
      const double t = r(i) / a;
      if (t > 0.0) breaks.emplace_back(t, i);
    }
    std::sort(breaks.begin(), breaks.end());
    double slope = best_slope;
    Index enter = -1;
    double step = 0.0;
    for (const auto& [t, i] : breaks) {
      slope += std::abs(X.row(i).dot(best_dir));
      if (slope >= 0.0) {
        enter = i;
        step = t;
        break;
      }
    }
    if (enter < 0) break;
    in_basis[static_cast<std::size_t>(basis[static_cast<std::size_t>(leave)])] = 0;
    in_basis[static_cast<std::size_t>(enter)] = 1;
    basis[static_cast<std::size_t>(leave)] = enter;
    rows.row(leave) = X.row(enter);
    lu.compute(rows);
    for (Index j = 0; j < p; ++j) yb(j) = y(basis[static_cast<std::size_t>(j)]);
    const VectorXd next = lu.solve(yb);
    if (!next.allFinite()) break;
    b = next;
  }
  return check_loss(X, y, b, q) <= check_loss(X, y, approx, q) ? b : approx;
}

}  // namespace

VectorXd fit_smoothed_quantile_regression(const MatrixXd& X, const VectorXd& y, double q, double h,
                                          const VectorXd* start, int max_iter, double tol) {
  if (!(q > 0.0 && q < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
  if (!(h > 0.0)) throw DomainError("smoothing half-width must be positive");
  VectorXd beta = start ? *start : VectorXd(X.colPivHouseholderQr().solve(y));
  VectorXd w(y.size());
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd r = y - X * beta;
    for (Index i = 0; i < r.size(); ++i) {
      w(i) = (r(i) > 0.0 ? q : 1.0 - q) / std::max(std::abs(r(i)), h);
    }
    const MatrixXd xtw = X.transpose() * w.asDiagonal();
    const VectorXd next = (xtw * X).ldlt().solve(xtw * y);
    if (!next.allFinite()) throw NumericError("quantile regression IRLS produced non-finite coefficients");
    const double change = (next - beta).lpNorm<Eigen::Infinity>();
    beta = next;
    if (change <= tol * (1.0 + beta.lpNorm<Eigen::Infinity>())) break;
  }
  return polish_vertex(X, y, q, beta);
}

double MqFit::predict(std::size_t area, const Eigen::Ref<const VectorXd>& x) const {
  const VectorXd& b = beta_area.at(area);
  return b(0) + x.dot(b.tail(b.size() - 1));
}

MqFit fit_mq(const SurveySample& sample, const MqOptions& options) {
  if (options.grid_size < 1) throw ConfigError("M-quantile grid needs at least one point");
  const std::size_t areas = sample.num_areas();
  MqFit fit;
  fit.area_ids = sample.area_ids();
  for (int g = 0; g < options.grid_size; ++g) {
    fit.grid.push_back(static_cast<double>(g + 1) / static_cast<double>(options.grid_size + 1));
  }
  fit.beta_by_q.resize(areas);
  fit.q_unit.resize(areas);
  fit.q_area.resize(areas);
  fit.beta_area.resize(areas);
  fit.residuals.resize(areas);

  for_each_index(areas, options.execution, options.threads, [&](std::size_t k) {
    const auto& a = sample.area(k);
    const MatrixXd X = with_intercept(a.x);
    Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols()) {
      throw SingularDesignError("M-quantile design of area '" + a.area_id + "' is rank deficient");
    }
    double h = options.smoothing * mad(a.y);
    if (!(h > 0.0)) h = options.smoothing * std::max(1.0, a.y.cwiseAbs().maxCoeff());
    const std::size_t G = fit.grid.size();
    MatrixXd betas(X.cols(), static_cast<Index>(G));
    // Warm start each level from its neighbour; the solution path is continuous in q.
    VectorXd prev = qr.solve(a.y);
    for (std::size_t g = 0; g < G; ++g) {
      prev = fit_smoothed_quantile_regression(X, a.y, fit.grid[g], h, &prev, options.max_iter, options.tol);
      betas.col(static_cast<Index>(g)) = prev;
    }
    const MatrixXd fitted = X * betas;  // n_k x G
    VectorXd qj(a.size());
    for (Index j = 0; j < a.size(); ++j) {
      Index best = 0;
      double best_gap = std::abs(a.y(j) - fitted(j, 0));
      for (Index g = 1; g < static_cast<Index>(G); ++g) {
        const double gap = std::abs(a.y(j) - fitted(j, g));
        if (gap < best_gap) {
          best_gap = gap;
          best = g;
        }
      }
      qj(j) = fit.grid[static_cast<std::size_t>(best)];
    }
    const double qbar = qj.mean();
    // Start from the nearest grid solution.
    std::size_t near = 0;
    for (std::size_t g = 1; g < G; ++g) {
      if (std::abs(fit.grid[g] - qbar) < std::abs(fit.grid[near] - qbar)) near = g;
    }
    const VectorXd start = betas.col(static_cast<Index>(near));
    VectorXd bq = fit_smoothed_quantile_regression(X, a.y, qbar, h, &start, options.max_iter, options.tol);
    fit.beta_by_q[k] = std::move(betas);
    fit.q_unit[k] = std::move(qj);
    fit.q_area[k] = qbar;
    fit.residuals[k] = a.y - X * bq;
    fit.beta_area[k] = std::move(bq);
  });
  return fit;
}

namespace {

const CensusArea& linked_census(const CensusFrame& census, const AreaSample& a, const char* who) {
  const auto& c = census.find(a.area_id);
  if (!c.full()) throw ConfigError(std::string(who) + " needs full census x for area '" + a.area_id + "'");
  if (!c.sample_link) throw ConfigError(std::string(who) + " needs the census sample link for area '" + a.area_id + "'");
  if (static_cast<Index>(c.sample_link->size()) != a.size()) {
    throw DataError("census sample link of area '" + a.area_id + "' does not match the sample size");
  }
  return c;
}

std::vector<char> sampled_mask(const CensusArea& c) {
  std::vector<char> mask(static_cast<std::size_t>(c.x->rows()), 0);
  for (Index i : *c.sample_link) mask[static_cast<std::size_t>(i)] = 1;
  return mask;
}

StepFunction sample_points(const AreaSample& a, double weight) {
  return StepFunction::from_atoms(std::vector<double>(a.y.data(), a.y.data() + a.y.size()),
                                  std::vector<double>(static_cast<std::size_t>(a.size()), weight));
}

}  // namespace

CdfEstimate cdf_mq(const MqFit& fit, const SurveySample& sample, const CensusFrame& census, std::size_t area) {
  const auto& a = sample.area(area);
  if (fit.area_ids.size() != sample.num_areas() || fit.area_ids[area] != a.area_id) {
    throw DataError("MQ predictor: fit and sample disagree on area '" + a.area_id + "'");
  }
  const auto& c = linked_census(census, a, "MQ predictor");
  const double inv_n = 1.0 / static_cast<double>(c.population_size);
  const auto mask = sampled_mask(c);
  const auto& res = fit.residuals[area];
  StepFunction g = StepFunction::empirical(std::span<const double>(res.data(), static_cast<std::size_t>(res.size())));
  std::vector<double> shifts;
  for (Index j = 0; j < c.x->rows(); ++j) {
    if (mask[static_cast<std::size_t>(j)]) continue;
    shifts.push_back(fit.predict(area, c.x->row(j).transpose()));
  }
  std::vector<double> w(shifts.size(), inv_n);
  return CdfEstimate::step_mixture(std::move(g), std::move(shifts), std::move(w), sample_points(a, inv_n));
}

// ---------------------------------------------------------------------------
// Molina-Rao

CdfEstimate cdf_mr(const NerFit& ner, const SurveySample& sample, const CensusFrame& census, std::size_t area,
                   int draws, const RngStream& rng, Execution execution, int threads) {
  if (draws < 1) throw ConfigError("MR predictor needs at least one Monte-Carlo draw");
  const auto& a = sample.area(area);
  if (ner.area_ids.size() != sample.num_areas() || ner.area_ids[area] != a.area_id) {
    throw DataError("MR predictor: NER fit and sample disagree on area '" + a.area_id + "'");
  }
  if (!(ner.sigma_e2 > 0.0)) throw DegenerateDistributionError("MR predictor needs sigma_e2 > 0");
  const auto& c = linked_census(census, a, "MR predictor");
  const auto mask = sampled_mask(c);
  std::vector<double> mu;
  for (Index j = 0; j < c.x->rows(); ++j) {
    if (mask[static_cast<std::size_t>(j)]) continue;
    mu.push_back(ner.linear_predictor(c.x->row(j).transpose()) + ner.gamma[area] * ner.nu[area]);
  }
  const double sd_u = std::sqrt(std::max(0.0, (1.0 - ner.gamma[area]) * ner.sigma_v2));
  const double sd_e = std::sqrt(ner.sigma_e2);
  const std::size_t out = mu.size();
  std::vector<double> values(out * static_cast<std::size_t>(draws));
  for_each_index(static_cast<std::size_t>(draws), execution, threads, [&](std::size_t l) {
    auto eng = rng.child(l).engine();
    std::normal_distribution<double> z(0.0, 1.0);
    const double u = sd_u * z(eng);
    double* dst = values.data() + l * out;
    for (std::size_t j = 0; j < out; ++j) dst[j] = mu[j] + u + sd_e * z(eng);
  });
  const double inv_n = 1.0 / static_cast<double>(c.population_size);
  std::vector<double> w(values.size(), inv_n / static_cast<double>(draws));
  for (Index j = 0; j < a.size(); ++j) {
    values.push_back(a.y(j));
    w.push_back(inv_n);
  }
  return CdfEstimate::mc_mixture(StepFunction::from_atoms(std::move(values), std::move(w)));
}

}  // namespace saqe
