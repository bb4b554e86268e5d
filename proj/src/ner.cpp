#include "saqe/ner.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "saqe/error.hpp"

namespace saqe {
namespace {

// Within-area centred design (intercept column included, centring zeroes it)
// plus area means. Everything the profile likelihood needs.
struct NerProblem {
  bool intercept = true;
  Index p = 0;
  Index n_total = 0;
  std::vector<MatrixXd> xc;
  std::vector<VectorXd> yc;
  std::vector<VectorXd> xbar;  // length p
  std::vector<double> ybar;
  std::vector<double> n;
  MatrixXd sxx;  // sum of xc' xc
  VectorXd sxy;  // sum of xc' yc
  double yy_scale = 0.0;

  NerProblem(const SurveySample& sample, bool with_intercept) : intercept(with_intercept) {
    const Index d = sample.dim();
    const Index off = intercept ? 1 : 0;
    p = d + off;
    sxx = MatrixXd::Zero(p, p);
    sxy = VectorXd::Zero(p);
    MatrixXd slopes(sample.total_size(), d);
    Index row = 0;
    for (const auto& a : sample.areas()) {
      MatrixXd design(a.size(), p);
      if (intercept) design.col(0).setOnes();
      design.rightCols(d) = a.x;
      VectorXd mx = design.colwise().mean().transpose();
      MatrixXd c = design.rowwise() - mx.transpose();
      if (intercept) c.col(0).setZero();
      const double my = a.y.mean();
      VectorXd cy = a.y.array() - my;
      sxx.noalias() += c.transpose() * c;
      sxy.noalias() += c.transpose() * cy;
      slopes.middleRows(row, a.size()) = c.rightCols(d);
      row += a.size();
      yy_scale += cy.squaredNorm() + static_cast<double>(a.size()) * my * my;
      xc.push_back(std::move(c));
      yc.push_back(std::move(cy));
      xbar.push_back(std::move(mx));
      ybar.push_back(my);
      n.push_back(static_cast<double>(a.size()));
      n_total += a.size();
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(slopes);
    qr.setThreshold(1e-10);
    if (d > 0 && qr.rank() < d) {
      throw SingularDesignError("within-area centred design has rank " + std::to_string(qr.rank()) + " < d = " +
                                std::to_string(d));
    }
  }

  struct Eval {
    double rss;
    double loglik;
    double gradient;
    VectorXd beta;
  };

  VectorXd gls_beta(double phi) const {
    MatrixXd a = sxx;
    VectorXd b = sxy;
    for (std::size_t k = 0; k < n.size(); ++k) {
      const double w = n[k] / (1.0 + n[k] * phi);
      a.noalias() += w * xbar[k] * xbar[k].transpose();
      b.noalias() += (w * ybar[k]) * xbar[k];
    }
    return a.ldlt().solve(b);
  }

  // RSS(phi) = sum_k ||yc - xc beta||^2 + n_k rbar_k^2 / (1 + n_k phi).
  Eval evaluate(double phi) const {
    Eval e;
    e.beta = gls_beta(phi);
    double rss = 0.0, drss = 0.0, logdet = 0.0, dlogdet = 0.0;
    for (std::size_t k = 0; k < n.size(); ++k) {
      const double rbar = ybar[k] - xbar[k].dot(e.beta);
      const double denom = 1.0 + n[k] * phi;
      rss += (yc[k] - xc[k] * e.beta).squaredNorm() + n[k] * rbar * rbar / denom;
      drss -= n[k] * n[k] * rbar * rbar / (denom * denom);
      logdet += std::log(denom);
      dlogdet += n[k] / denom;
    }
    const double nt = static_cast<double>(n_total);
    e.rss = rss;
    e.loglik = -0.5 * nt * (std::log(2.0 * std::numbers::pi) + 1.0 + std::log(rss / nt)) - 0.5 * logdet;
    e.gradient = -0.5 * nt * drss / rss - 0.5 * dlogdet;
    return e;
  }
};

double phi_of(double t) { return t / (1.0 - t); }

}  // namespace

double NerFit::linear_predictor(const Eigen::Ref<const VectorXd>& x) const {
  if (intercept) return beta(0) + x.dot(beta.tail(beta.size() - 1));
  return x.dot(beta);
}

double NerFit::sigma_e() const { return std::sqrt(sigma_e2); }

NerProfilePoint ner_profile(const SurveySample& sample, double phi, bool intercept) {
  if (!(phi >= 0.0)) throw DomainError("phi must be >= 0");
  NerProblem prob(sample, intercept);
  auto e = prob.evaluate(phi);
  return {phi, e.loglik, e.gradient, e.rss / static_cast<double>(prob.n_total), e.beta};
}

double ner_loglik(const SurveySample& sample, double sigma_v2, double sigma_e2, bool intercept) {
  if (!(sigma_e2 > 0.0) || !(sigma_v2 >= 0.0)) throw DomainError("ner_loglik needs sigma_e2 > 0, sigma_v2 >= 0");
  NerProblem prob(sample, intercept);
  const double phi = sigma_v2 / sigma_e2;
  auto e = prob.evaluate(phi);
  double logdet = 0.0;
  for (double nk : prob.n) logdet += nk * std::log(sigma_e2) + std::log(1.0 + nk * phi);
  const double nt = static_cast<double>(prob.n_total);
  return -0.5 * nt * std::log(2.0 * std::numbers::pi) - 0.5 * logdet - 0.5 * e.rss / sigma_e2;
}

NerFit fit_ner_mle(const SurveySample& sample, const CensusFrame* census, const NerOptions& options) {
  NerProblem prob(sample, options.intercept);
  NerFit fit;
  fit.area_ids = sample.area_ids();
  fit.intercept = options.intercept;

  const auto at_zero = prob.evaluate(0.0);
  const double nt = static_cast<double>(prob.n_total);
  if (at_zero.rss <= 1e-24 * (prob.yy_scale + 1.0)) {
    fit.sigma_e2_degenerate = true;
    fit.sigma_v2_at_boundary = true;
    fit.phi = 0.0;
    fit.beta = at_zero.beta;
    fit.sigma_e2 = 0.0;
    fit.loglik = std::numeric_limits<double>::infinity();
    fit.warnings.push_back("residual variance is numerically zero; sigma_e2 sits at the 0 boundary");
  } else {
    // Coarse scan over t = phi / (1 + phi) locates the global maximum, golden
    // section refines it, Newton on the analytic gradient polishes.
    const int g = std::max(options.grid_points, 4);
    const double t_max = options.phi_max / (1.0 + options.phi_max);
    std::vector<double> ts(static_cast<std::size_t>(g + 1));
    std::vector<double> ll(ts.size());
    std::size_t best = 0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      ts[i] = t_max * static_cast<double>(i) / static_cast<double>(g);
      ll[i] = prob.evaluate(phi_of(ts[i])).loglik;
      if (ll[i] > ll[best]) best = i;
    }
    std::vector<std::string> trace;
    double phi_hat = 0.0;
    if (best == 0 && at_zero.gradient <= 0.0) {
      phi_hat = 0.0;
      fit.sigma_v2_at_boundary = true;
    } else if (best + 1 == ts.size()) {
      phi_hat = options.phi_max;
      fit.warnings.push_back("profile likelihood still increasing at phi_max; sigma_v2 / sigma_e2 capped");
    } else {
      double a = ts[best == 0 ? 0 : best - 1];
      double b = ts[best + 1];
      const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
      double c = b - ratio * (b - a);
      double d = a + ratio * (b - a);
      double fc = prob.evaluate(phi_of(c)).loglik;
      double fd = prob.evaluate(phi_of(d)).loglik;
      int it = 0;
      for (; it < options.max_iter; ++it) {
        const double pa = phi_of(a), pb = phi_of(b);
        if (pb - pa <= options.phi_tol * std::max(1.0, 0.5 * (pa + pb))) break;
        if (fc >= fd) {
          b = d;
          d = c;
          fd = fc;
          c = b - ratio * (b - a);
          fc = prob.evaluate(phi_of(c)).loglik;
        } else {
          a = c;
          c = d;
          fc = fd;
          d = a + ratio * (b - a);
          fd = prob.evaluate(phi_of(d)).loglik;
        }
        if (it % 10 == 0) {
          std::ostringstream os;
          os << "golden " << it << ": phi in [" << pa << ", " << pb << "]";
          trace.push_back(os.str());
        }
      }
      fit.iterations = it;
      if (it >= options.max_iter) {
        throw ConvergenceError("NER profile search did not converge in " + std::to_string(options.max_iter) + " iterations",
                               std::move(trace));
      }
      const double lo = phi_of(a), hi = phi_of(b);
      phi_hat = 0.5 * (lo + hi);
      double f_hat = prob.evaluate(phi_hat).loglik;
      for (int k = 0; k < 5; ++k) {
        const double h = 1e-6 * std::max(phi_hat, 1e-3);
        const double g0 = prob.evaluate(phi_hat).gradient;
        const double gp = prob.evaluate(phi_hat + h).gradient;
        const double gm = prob.evaluate(std::max(phi_hat - h, 0.0)).gradient;
        const double curv = (gp - gm) / (phi_hat + h - std::max(phi_hat - h, 0.0));
        if (!(curv < 0.0)) break;
        const double cand = phi_hat - g0 / curv;
        if (!(cand >= 0.0) || std::abs(cand - phi_hat) > 10.0 * (hi - lo) + 1e-12) break;
        const double f_cand = prob.evaluate(cand).loglik;
        if (f_cand < f_hat) break;
        phi_hat = cand;
        f_hat = f_cand;
      }
    }
    const auto e = prob.evaluate(phi_hat);
    fit.phi = phi_hat;
    fit.beta = e.beta;
    fit.sigma_e2 = e.rss / nt;
    fit.loglik = e.loglik;
    fit.profile_gradient = e.gradient;
  }
  fit.sigma_v2 = fit.phi * fit.sigma_e2;

  fit.xbar_from_census = census != nullptr;
  if (!census) fit.warnings.push_back("no census supplied; EBLUP uses sample covariate means in place of population means");
  for (std::size_t k = 0; k < sample.num_areas(); ++k) {
    const auto& a = sample.area(k);
    const double nk = static_cast<double>(a.size());
    fit.n.push_back(a.size());
    fit.ybar.push_back(a.y_mean());
    fit.xbar_sample.push_back(a.x_mean());
    if (census) {
      const auto& c = census->find(a.area_id);
      if (c.mean.size() != sample.dim()) throw DataError("census dimension mismatch for area '" + a.area_id + "'");
      fit.xbar_pop.push_back(c.mean);
    } else {
      fit.xbar_pop.push_back(fit.xbar_sample.back());
    }
    const double gamma = fit.sigma_e2_degenerate ? 0.0 : nk * fit.sigma_v2 / (fit.sigma_e2 + nk * fit.sigma_v2);
    const double nu = fit.ybar.back() - fit.linear_predictor(fit.xbar_sample.back());
    fit.gamma.push_back(gamma);
    fit.nu.push_back(nu);
    fit.eblup_mean.push_back(fit.linear_predictor(fit.xbar_pop.back()) + gamma * nu);
  }
  return fit;
}

CdfEstimate cdf_ner(const NerFit& fit, const SurveySample& sample, std::size_t area) {
  if (!(fit.sigma_e2 > 0.0)) throw DegenerateDistributionError("NER predictor needs sigma_e > 0");
  const auto& a = sample.area(area);
  if (fit.area_ids.at(area) != a.area_id) throw DataError("NER fit and sample disagree on area '" + a.area_id + "'");
  const VectorXd slopes = fit.intercept ? VectorXd(fit.beta.tail(fit.beta.size() - 1)) : fit.beta;
  const VectorXd xbar = a.x_mean();
  std::vector<double> shifts(static_cast<std::size_t>(a.size()));
  for (Index j = 0; j < a.size(); ++j) {
    shifts[static_cast<std::size_t>(j)] = (a.x.row(j) - xbar.transpose()).dot(slopes) + fit.eblup_mean[area];
  }
  std::vector<double> w(shifts.size(), 1.0 / static_cast<double>(a.size()));
  return CdfEstimate::gaussian_mixture(std::move(shifts), std::move(w), fit.sigma_e());
}

CdfEstimate cdf_eb(const NerFit& fit, const SurveySample& sample, const CensusFrame& census, std::size_t area,
                   EbVariant variant) {
  if (!(fit.sigma_e2 > 0.0)) throw DegenerateDistributionError("EB predictor needs sigma_e > 0");
  const auto& a = sample.area(area);
  const auto& c = census.find(a.area_id);
  if (!c.full()) throw ConfigError("EB predictors need full census x for area '" + a.area_id + "'");
  const MatrixXd& x = *c.x;
  const double inv_n = 1.0 / static_cast<double>(c.population_size);
  const double nu = fit.nu.at(area);
  std::vector<char> sampled(static_cast<std::size_t>(x.rows()), 0);
  StepFunction points;
  if (variant == EbVariant::eb1) {
    if (!c.sample_link) throw ConfigError("EB1 needs the census sample link for area '" + a.area_id + "'");
    for (Index i : *c.sample_link) sampled[static_cast<std::size_t>(i)] = 1;
    std::vector<double> yv(a.y.data(), a.y.data() + a.y.size());
    points = StepFunction::from_atoms(std::move(yv), std::vector<double>(static_cast<std::size_t>(a.size()), inv_n));
  }
  std::vector<double> shifts;
  shifts.reserve(static_cast<std::size_t>(x.rows()));
  for (Index j = 0; j < x.rows(); ++j) {
    if (sampled[static_cast<std::size_t>(j)]) continue;
    shifts.push_back(nu + fit.linear_predictor(x.row(j).transpose()));
  }
  std::vector<double> w(shifts.size(), inv_n);
  return CdfEstimate::gaussian_mixture(std::move(shifts), std::move(w), fit.sigma_e(), std::move(points));
}

}  // namespace saqe
