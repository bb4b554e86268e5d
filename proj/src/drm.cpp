#include "saqe/drm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "saqe/error.hpp"

namespace saqe {

// ---------------------------------------------------------------------------
// Basis

BasisQ BasisQ::from_name(std::string_view name) {
  if (name == "signroot" || name == "sign-root") return BasisQ(Kind::signroot);
  if (name == "linear") return BasisQ(Kind::linear);
  if (name == "quadratic") return BasisQ(Kind::quadratic);
  if (name == "sqrtabs" || name == "linear-sqrtabs") return BasisQ(Kind::linear_sqrtabs);
  throw ConfigError("unknown basis '" + std::string(name) + "' (expected signroot, linear, quadratic, sqrtabs)");
}

std::string BasisQ::name() const {
  switch (kind_) {
    case Kind::signroot: return "signroot";
    case Kind::linear: return "linear";
    case Kind::quadratic: return "quadratic";
    case Kind::linear_sqrtabs: return "sqrtabs";
  }
  return "signroot";
}

Index BasisQ::dim() const noexcept {
  switch (kind_) {
    case Kind::signroot:
    case Kind::linear: return 2;
    case Kind::quadratic:
    case Kind::linear_sqrtabs: return 3;
  }
  return 2;
}

void BasisQ::eval(double t, double* out) const {
  out[0] = 1.0;
  switch (kind_) {
    case Kind::signroot:
      out[1] = std::copysign(std::sqrt(std::abs(t)), t);
      break;
    case Kind::linear:
      out[1] = t;
      break;
    case Kind::quadratic:
      out[1] = t;
      out[2] = t * t;
      break;
    case Kind::linear_sqrtabs:
      out[1] = t;
      out[2] = std::sqrt(std::abs(t));
      break;
  }
}

VectorXd BasisQ::operator()(double t) const {
  VectorXd v(dim());
  eval(t, v.data());
  return v;
}

// ---------------------------------------------------------------------------
// Centralized least squares

CentralizedFit fit_beta_centralized(const SurveySample& sample) {
  const Index d = sample.dim();
  MatrixXd stacked(sample.total_size(), d);
  VectorXd ystacked(sample.total_size());
  std::vector<VectorXd> xbar;
  std::vector<double> ybar;
  Index row = 0;
  for (const auto& a : sample.areas()) {
    const VectorXd mx = a.x_mean();
    const double my = a.y_mean();
    stacked.middleRows(row, a.size()) = a.x.rowwise() - mx.transpose();
    ystacked.segment(row, a.size()) = a.y.array() - my;
    xbar.push_back(mx);
    ybar.push_back(my);
    row += a.size();
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(stacked);
  qr.setThreshold(1e-10);
  if (qr.rank() < d) {
    throw SingularDesignError("within-area centred design has rank " + std::to_string(qr.rank()) + " < d = " +
                              std::to_string(d));
  }
  CentralizedFit fit;
  const MatrixXd sxx = stacked.transpose() * stacked;
  fit.beta = sxx.ldlt().solve(stacked.transpose() * ystacked);
  row = 0;
  for (std::size_t k = 0; k < sample.num_areas(); ++k) {
    const Index nk = sample.area(k).size();
    fit.residuals.push_back(ystacked.segment(row, nk) - stacked.middleRows(row, nk) * fit.beta);
    fit.nu_hat.push_back(ybar[k] - xbar[k].dot(fit.beta));
    row += nk;
  }
  return fit;
}

// ---------------------------------------------------------------------------
// Dual objective

DualObjective::DualObjective(const std::vector<VectorXd>& samples, BasisQ basis, std::size_t baseline)
    : basis_(basis), baseline_(baseline), d2_(basis.dim()) {
  if (samples.size() < 2) throw DataError("density ratio model needs at least 2 samples");
  if (baseline >= samples.size()) throw ConfigError("baseline index out of range");
  Index n = 0;
  for (const auto& s : samples) {
    if (s.size() == 0) throw DataError("empty residual sample");
    offsets_.push_back(n);
    sizes_.push_back(s.size());
    n += s.size();
  }
  q_.resize(n, d2_);
  own_q_sum_ = MatrixXd::Zero(static_cast<Index>(samples.size()), d2_);
  VectorXd row(d2_);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    for (Index j = 0; j < samples[k].size(); ++j) {
      basis_.eval(samples[k](j), row.data());
      q_.row(offsets_[k] + j) = row.transpose();
      own_q_sum_.row(static_cast<Index>(k)) += row.transpose();
    }
    rho_.push_back(static_cast<double>(sizes_[k]) / static_cast<double>(n));
    log_rho_.push_back(std::log(rho_.back()));
  }
}

VectorXd DualObjective::flatten(const MatrixXd& theta) const {
  VectorXd p(num_params());
  Index at = 0;
  for (std::size_t r = 0; r < sizes_.size(); ++r) {
    if (r == baseline_) continue;
    p.segment(at, d2_) = theta.row(static_cast<Index>(r)).transpose();
    at += d2_;
  }
  return p;
}

MatrixXd DualObjective::unflatten(const VectorXd& params) const {
  MatrixXd theta = MatrixXd::Zero(static_cast<Index>(sizes_.size()), d2_);
  Index at = 0;
  for (std::size_t r = 0; r < sizes_.size(); ++r) {
    if (r == baseline_) continue;
    theta.row(static_cast<Index>(r)) = params.segment(at, d2_).transpose();
    at += d2_;
  }
  return theta;
}

VectorXd DualObjective::log_normalizer(const MatrixXd& theta) const {
  MatrixXd s = q_ * theta.transpose();
  for (Index r = 0; r < s.cols(); ++r) s.col(r).array() += log_rho_[static_cast<std::size_t>(r)];
  VectorXd lse(s.rows());
  for (Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    lse(i) = mx + std::log((s.row(i).array() - mx).exp().sum());
  }
  return lse;
}

double DualObjective::evaluate(const MatrixXd& theta, VectorXd* gradient, MatrixXd* hessian) const {
  const Index n = q_.rows();
  const Index areas = static_cast<Index>(sizes_.size());
  MatrixXd s = q_ * theta.transpose();
  for (Index r = 0; r < areas; ++r) s.col(r).array() += log_rho_[static_cast<std::size_t>(r)];
  VectorXd lse(n);
  for (Index i = 0; i < n; ++i) {
    const double mx = s.row(i).maxCoeff();
    lse(i) = mx + std::log((s.row(i).array() - mx).exp().sum());
  }
  double value = -lse.sum();
  for (Index r = 0; r < areas; ++r) value += theta.row(r).dot(own_q_sum_.row(r));
  if (!gradient && !hessian) return value;

  // h_r(e_i) = rho_r exp(theta_r' q_i) / sum_s rho_s exp(theta_s' q_i), free areas only.
  const Index m = areas - 1;
  MatrixXd h(n, m);
  std::vector<Index> free_area;
  for (Index r = 0, c = 0; r < areas; ++r) {
    if (static_cast<std::size_t>(r) == baseline_) continue;
    h.col(c++) = (s.col(r) - lse).array().exp().matrix();
    free_area.push_back(r);
  }
  if (gradient) {
    gradient->resize(m * d2_);
    const MatrixXd hq = h.transpose() * q_;  // m x d2
    for (Index c = 0; c < m; ++c) {
      gradient->segment(c * d2_, d2_) = (own_q_sum_.row(free_area[static_cast<std::size_t>(c)]) - hq.row(c)).transpose();
    }
  }
  if (hessian) {
    hessian->setZero(m * d2_, m * d2_);
    for (Index a = 0; a < d2_; ++a) {
      for (Index b = a; b < d2_; ++b) {
        const VectorXd dab = q_.col(a).cwiseProduct(q_.col(b));
        const VectorXd t = h.transpose() * dab;
        const MatrixXd cross = h.transpose() * (dab.asDiagonal() * h);
        for (Index r = 0; r < m; ++r) {
          for (Index c = 0; c < m; ++c) {
            const double v = cross(r, c) - (r == c ? t(r) : 0.0);
            (*hessian)(r * d2_ + a, c * d2_ + b) = v;
            (*hessian)(r * d2_ + b, c * d2_ + a) = v;
          }
        }
      }
    }
  }
  return value;
}

double DualObjective::value(const MatrixXd& theta) const { return evaluate(theta, nullptr, nullptr); }

VectorXd DualObjective::gradient(const MatrixXd& theta) const {
  VectorXd g;
  evaluate(theta, &g, nullptr);
  return g;
}

// ---------------------------------------------------------------------------
// Newton fit

namespace {

VectorXd newton_direction(const MatrixXd& hessian, const VectorXd& gradient) {
  const MatrixXd neg = -hessian;
  const double diag_scale = std::max(neg.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  double ridge = 0.0;
  for (int attempt = 0; attempt < 20; ++attempt) {
    MatrixXd a = neg;
    a.diagonal().array() += ridge;
    Eigen::LLT<MatrixXd> llt(a);
    if (llt.info() == Eigen::Success) {
      VectorXd dir = llt.solve(gradient);
      if (dir.allFinite()) return dir;
    }
    ridge = ridge == 0.0 ? 1e-12 * diag_scale : ridge * 10.0;
  }
  return gradient;
}

std::string describe(const DrmIteration& it) {
  std::ostringstream os;
  os << "iter " << it.iteration << ": objective " << it.objective << ", max|grad| " << it.grad_max << ", step "
     << it.step;
  return os.str();
}

[[noreturn]] void fail(const std::string& msg, const std::vector<DrmIteration>& trace) {
  std::vector<std::string> lines;
  for (const auto& t : trace) lines.push_back(describe(t));
  throw ConvergenceError(msg, std::move(lines));
}

}  // namespace

DrmFit fit_drm(const std::vector<VectorXd>& residuals, const BasisQ& basis, const DrmOptions& options) {
  std::set<double> distinct;
  for (const auto& r : residuals) {
    for (Index j = 0; j < r.size(); ++j) {
      distinct.insert(r(j));
      if (distinct.size() > static_cast<std::size_t>(basis.dim())) break;
    }
    if (distinct.size() > static_cast<std::size_t>(basis.dim())) break;
  }
  if (distinct.size() <= static_cast<std::size_t>(basis.dim())) {
    throw DataError("residuals have too few distinct values for a basis of dimension " + std::to_string(basis.dim()));
  }

  DualObjective obj(residuals, basis, options.baseline);
  const Index areas = static_cast<Index>(residuals.size());
  MatrixXd theta = MatrixXd::Zero(areas, basis.dim());
  if (options.theta_start) {
    if (options.theta_start->rows() != areas || options.theta_start->cols() != basis.dim()) {
      throw ConfigError("warm-start theta has the wrong shape");
    }
    const MatrixXd& s = *options.theta_start;
    theta = s.rowwise() - s.row(static_cast<Index>(options.baseline));
  }
  const double n = static_cast<double>(obj.total_size());
  const double tol = options.grad_tol_per_n * n;

  DrmFit fit;
  fit.basis = basis;
  fit.baseline = options.baseline;
  VectorXd g;
  MatrixXd hess;
  double f = obj.evaluate(theta, &g, &hess);
  bool converged = false;
  for (int it = 0; it < options.max_iter; ++it) {
    const double gmax = g.lpNorm<Eigen::Infinity>();
    if (!std::isfinite(f) || !g.allFinite()) fail("dual objective became non-finite", fit.trace);
    if (gmax <= tol) {
      converged = true;
      fit.trace.push_back({it, f, gmax, 0.0});
      break;
    }
    const VectorXd dir = newton_direction(hess, g);
    const VectorXd params = obj.flatten(theta);
    const double slope = g.dot(dir);
    double step = 1.0;
    MatrixXd cand;
    double fc = 0.0;
    for (;;) {
      cand = obj.unflatten(params + step * dir);
      fc = obj.value(cand);
      if (std::isfinite(fc) && fc >= f + 1e-4 * step * slope) break;
      step *= 0.5;
      if (step < 1e-14) {
        fit.trace.push_back({it, f, gmax, step});
        fail("line search failed in the dual EL fit", fit.trace);
      }
    }
    fit.trace.push_back({it, f, gmax, step});
    theta = cand;
    if (theta.cwiseAbs().maxCoeff() > 1e4) {
      fail("tilt parameters diverge; samples may be separable in the basis space", fit.trace);
    }
    f = obj.evaluate(theta, &g, &hess);
  }
  if (!converged) {
    fail("dual EL fit did not converge in " + std::to_string(options.max_iter) + " iterations", fit.trace);
  }
  // Quadratic convergence makes a couple of extra full steps nearly free and
  // pushes the constraint error far below the stopping tolerance.
  for (int polish = 0; polish < 3; ++polish) {
    const double gmax = g.lpNorm<Eigen::Infinity>();
    if (gmax <= 1e-13 * n) break;
    const VectorXd dir = newton_direction(hess, g);
    const MatrixXd cand = obj.unflatten(obj.flatten(theta) + dir);
    VectorXd gc;
    MatrixXd hc;
    const double fc = obj.evaluate(cand, &gc, &hc);
    if (!(fc >= f - 1e-12 * std::abs(f)) || !(gc.lpNorm<Eigen::Infinity>() < gmax)) break;
    theta = cand;
    f = fc;
    g = std::move(gc);
    hess = std::move(hc);
  }

  // Separable samples let the dual climb towards a supremum at infinity; the
  // gradient test passes once the curvature has collapsed with it.
  {
    VectorXd g0;
    MatrixXd h0;
    obj.evaluate(MatrixXd::Zero(areas, basis.dim()), &g0, &h0);
    const double c0 = Eigen::SelfAdjointEigenSolver<MatrixXd>(-h0, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    const double c1 = Eigen::SelfAdjointEigenSolver<MatrixXd>(-hess, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    if (c0 > 0.0 && !(c1 > 1e-6 * c0)) {
      fail("dual EL curvature vanished at the optimum; samples look separable in the basis space", fit.trace);
    }
  }

  fit.theta = theta;
  fit.residuals = residuals;
  fit.rho = obj.rho();
  fit.loglik_dual = f;
  fit.grad_max = g.lpNorm<Eigen::Infinity>();
  fit.pooled.resize(obj.total_size());
  Index at = 0;
  for (const auto& r : residuals) {
    fit.pooled.segment(at, r.size()) = r;
    at += r.size();
  }
  fit.log_normalizer = obj.log_normalizer(theta);
  fit.p_base = ((-fit.log_normalizer).array().exp() / n).matrix();
  for (std::size_t k = 0; k < residuals.size(); ++k) fit.area_ids.push_back(std::to_string(k));
  return fit;
}

DrmFit fit_drm(const SurveySample& sample, const BasisQ& basis, const DrmOptions& options) {
  auto c = fit_beta_centralized(sample);
  DrmFit fit = fit_drm(c.residuals, basis, options);
  fit.area_ids = sample.area_ids();
  fit.beta_ls = std::move(c.beta);
  fit.nu_hat = std::move(c.nu_hat);
  return fit;
}

VectorXd DrmFit::area_weights(std::size_t k) const {
  if (k == baseline) return p_base;
  const Index n = pooled.size();
  VectorXd w(n);
  VectorXd qv(basis.dim());
  const auto row = theta.row(static_cast<Index>(k));
  for (Index i = 0; i < n; ++i) {
    basis.eval(pooled(i), qv.data());
    w(i) = std::exp(row.dot(qv) - log_normalizer(i)) / static_cast<double>(n);
  }
  return w;
}

double DrmFit::constraint_residual() const {
  double worst = 0.0;
  for (Index r = 0; r < theta.rows(); ++r) worst = std::max(worst, std::abs(area_weights(static_cast<std::size_t>(r)).sum() - 1.0));
  return worst;
}

// ---------------------------------------------------------------------------
// G_k and the EL predictors

StepFunction GkCdf::step() const { return StepFunction::from_atoms(support, weights); }

double GkCdf::total() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

GkCdf gk_cdf(const DrmFit& fit, std::size_t area) {
  if (area >= static_cast<std::size_t>(fit.theta.rows())) throw DataError("area index out of range");
  const VectorXd w = fit.area_weights(area);
  std::vector<std::size_t> idx(static_cast<std::size_t>(fit.pooled.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return fit.pooled(static_cast<Index>(a)) < fit.pooled(static_cast<Index>(b));
  });
  GkCdf g;
  g.support.reserve(idx.size());
  g.weights.reserve(idx.size());
  for (std::size_t i : idx) {
    g.support.push_back(fit.pooled(static_cast<Index>(i)));
    g.weights.push_back(w(static_cast<Index>(i)));
  }
  return g;
}

CdfEstimate cdf_el(const DrmFit& drm, const NerFit& ner, const SurveySample& sample, std::size_t area) {
  const auto& a = sample.area(area);
  if (drm.area_ids.size() != sample.num_areas() || ner.area_ids.size() != sample.num_areas() ||
      drm.area_ids[area] != a.area_id || ner.area_ids[area] != a.area_id) {
    throw DataError("EL predictor: DRM fit, NER fit and sample disagree on area '" + a.area_id + "'");
  }
  if (drm.beta_ls.size() != sample.dim()) throw ConfigError("EL predictor needs a DRM fit with centralized beta");
  const VectorXd xbar = a.x_mean();
  std::vector<double> shifts(static_cast<std::size_t>(a.size()));
  for (Index j = 0; j < a.size(); ++j) {
    shifts[static_cast<std::size_t>(j)] = (a.x.row(j) - xbar.transpose()).dot(drm.beta_ls) + ner.eblup_mean[area];
  }
  std::vector<double> w(shifts.size(), 1.0 / static_cast<double>(a.size()));
  return CdfEstimate::step_mixture(gk_cdf(drm, area).step(), std::move(shifts), std::move(w));
}

CdfEstimate cdf_ebel(const DrmFit& drm, const SurveySample& sample, const CensusFrame& census, std::size_t area,
                     EbelVariant variant) {
  const auto& a = sample.area(area);
  if (drm.area_ids.size() != sample.num_areas() || drm.area_ids[area] != a.area_id) {
    throw DataError("EBEL predictor: DRM fit and sample disagree on area '" + a.area_id + "'");
  }
  if (drm.beta_ls.size() != sample.dim()) throw ConfigError("EBEL predictor needs a DRM fit with centralized beta");
  const auto& c = census.find(a.area_id);
  if (!c.full()) throw ConfigError("EBEL predictors need full census x for area '" + a.area_id + "'");
  const MatrixXd& x = *c.x;
  const double inv_n = 1.0 / static_cast<double>(c.population_size);
  std::vector<char> sampled(static_cast<std::size_t>(x.rows()), 0);
  StepFunction points;
  if (variant == EbelVariant::ebel1) {
    if (!c.sample_link) throw ConfigError("EBEL1 needs the census sample link for area '" + a.area_id + "'");
    for (Index i : *c.sample_link) sampled[static_cast<std::size_t>(i)] = 1;
    std::vector<double> yv(a.y.data(), a.y.data() + a.y.size());
    points = StepFunction::from_atoms(std::move(yv), std::vector<double>(static_cast<std::size_t>(a.size()), inv_n));
  }
  const VectorXd pred = x * drm.beta_ls;
  std::vector<double> shifts;
  shifts.reserve(static_cast<std::size_t>(x.rows()));
  for (Index j = 0; j < x.rows(); ++j) {
    if (sampled[static_cast<std::size_t>(j)]) continue;
    shifts.push_back(drm.nu_hat[area] + pred(j));
  }
  std::vector<double> w(shifts.size(), inv_n);
  return CdfEstimate::step_mixture(gk_cdf(drm, area).step(), std::move(shifts), std::move(w), std::move(points));
}

}  // namespace saqe
