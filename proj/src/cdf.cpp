#include "saqe/cdf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "saqe/error.hpp"

namespace saqe {
namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

void sort_shifts(std::vector<double>& shifts, std::vector<double>& weights) {
  if (shifts.size() != weights.size()) throw ConfigError("shift and weight vectors differ in length");
  if (std::is_sorted(shifts.begin(), shifts.end())) return;
  std::vector<std::size_t> idx(shifts.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return shifts[a] < shifts[b]; });
  std::vector<double> s(shifts.size()), w(shifts.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    s[i] = shifts[idx[i]];
    w[i] = weights[idx[i]];
  }
  shifts = std::move(s);
  weights = std::move(w);
}

// Weighted mean and variance of a step function's atoms.
std::pair<double, double> step_moments(const StepFunction& f) {
  const auto& v = f.values();
  const auto& c = f.cumulative();
  double total = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double w = c[i] - (i ? c[i - 1] : 0.0);
    total += w;
    mean += w * v[i];
  }
  if (total <= 0.0) return {0.0, 0.0};
  mean /= total;
  double var = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double w = c[i] - (i ? c[i - 1] : 0.0);
    var += w * (v[i] - mean) * (v[i] - mean);
  }
  return {mean, var / total};
}

std::pair<double, double> weighted_moments(const std::vector<double>& x, const std::vector<double>& w) {
  double total = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += w[i];
    mean += w[i] * x[i];
  }
  if (total <= 0.0) return {0.0, 0.0};
  mean /= total;
  double var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) var += w[i] * (x[i] - mean) * (x[i] - mean);
  return {mean, var / total};
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1), got " + std::to_string(alpha));
}

}  // namespace

// ---------------------------------------------------------------------------
// StepFunction

StepFunction StepFunction::from_atoms(std::vector<double> values, std::vector<double> weights) {
  if (values.size() != weights.size()) throw ConfigError("atom and weight vectors differ in length");
  sort_shifts(values, weights);
  StepFunction f;
  f.values_ = std::move(values);
  f.cumulative_.resize(weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw NumericError("negative or NaN atom weight");
    acc += weights[i];
    f.cumulative_[i] = acc;
  }
  return f;
}

StepFunction StepFunction::empirical(std::span<const double> values) {
  StepFunction f;
  f.values_.assign(values.begin(), values.end());
  std::sort(f.values_.begin(), f.values_.end());
  const double n = static_cast<double>(values.size());
  f.cumulative_.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) f.cumulative_[i] = static_cast<double>(i + 1) / n;
  return f;
}

std::size_t StepFunction::rank(double t) const {
  return static_cast<std::size_t>(std::upper_bound(values_.begin(), values_.end(), t) - values_.begin());
}

double StepFunction::operator()(double t) const {
  const std::size_t r = rank(t);
  return r == 0 ? 0.0 : cumulative_[r - 1];
}

// ---------------------------------------------------------------------------
// CdfEstimate

CdfEstimate CdfEstimate::step(StepFunction f) {
  CdfEstimate c;
  c.kind_ = Kind::step;
  c.points_ = std::move(f);
  return c;
}

CdfEstimate CdfEstimate::mc_mixture(StepFunction f) {
  CdfEstimate c = step(std::move(f));
  c.kind_ = Kind::mc_mixture;
  return c;
}

CdfEstimate CdfEstimate::gaussian_mixture(std::vector<double> shifts, std::vector<double> weights, double sigma,
                                          StepFunction points) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw DegenerateDistributionError("gaussian mixture needs sigma > 0");
  }
  CdfEstimate c;
  c.kind_ = Kind::gaussian_mixture;
  sort_shifts(shifts, weights);
  c.shifts_ = std::move(shifts);
  c.weights_ = std::move(weights);
  c.sigma_ = sigma;
  c.points_ = std::move(points);
  return c;
}

CdfEstimate CdfEstimate::step_mixture(StepFunction base, std::vector<double> shifts, std::vector<double> weights,
                                      StepFunction points) {
  CdfEstimate c;
  c.kind_ = Kind::step_mixture;
  sort_shifts(shifts, weights);
  c.shifts_ = std::move(shifts);
  c.weights_ = std::move(weights);
  c.base_ = std::move(base);
  c.points_ = std::move(points);
  return c;
}

double CdfEstimate::eval_base_sum(double y) const {
  double acc = 0.0;
  if (kind_ == Kind::gaussian_mixture) {
    for (std::size_t j = 0; j < shifts_.size(); ++j) acc += weights_[j] * normal_cdf((y - shifts_[j]) / sigma_);
    return acc;
  }
  if (kind_ != Kind::step_mixture || shifts_.empty()) return 0.0;
  const auto& v = base_.values();
  const auto& cum = base_.cumulative();
  // Shifts ascend, so y - a_j descends and the rank pointer only moves left.
  const bool sweep = v.size() < 8 * shifts_.size();
  std::size_t p = base_.rank(y - shifts_.front());
  for (std::size_t j = 0; j < shifts_.size(); ++j) {
    const double t = y - shifts_[j];
    if (sweep) {
      while (p > 0 && v[p - 1] > t) --p;
    } else {
      p = static_cast<std::size_t>(std::upper_bound(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(p), t) - v.begin());
    }
    if (p > 0) acc += weights_[j] * cum[p - 1];
  }
  return acc;
}

double CdfEstimate::operator()(double y) const { return eval_base_sum(y) + points_(y); }

double CdfEstimate::density(double y) const {
  if (kind_ != Kind::gaussian_mixture) return 0.0;
  double acc = 0.0;
  for (std::size_t j = 0; j < shifts_.size(); ++j) {
    const double z = (y - shifts_[j]) / sigma_;
    acc += weights_[j] * kInvSqrt2Pi * std::exp(-0.5 * z * z);
  }
  return acc / sigma_;
}

double CdfEstimate::total_mass() const {
  double acc = points_.total();
  const double base_total = kind_ == Kind::step_mixture ? base_.total() : 1.0;
  for (double w : weights_) acc += w * base_total;
  return acc;
}

double CdfEstimate::center() const {
  const auto [sm, sv] = weighted_moments(shifts_, weights_);
  const double sw = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  const auto [pm, pv] = step_moments(points_);
  const double pw = points_.total();
  double base_mean = 0.0;
  if (kind_ == Kind::step_mixture) base_mean = step_moments(base_).first;
  const double total = sw + pw;
  if (total <= 0.0) return 0.0;
  return (sw * (sm + base_mean) + pw * pm) / total;
}

double CdfEstimate::scale() const {
  const auto [sm, sv] = weighted_moments(shifts_, weights_);
  const auto [pm, pv] = step_moments(points_);
  double var = sv + pv;
  if (kind_ == Kind::gaussian_mixture) var += sigma_ * sigma_;
  if (kind_ == Kind::step_mixture) var += step_moments(base_).second;
  var += (sm - pm) * (sm - pm) * (!shifts_.empty() && !points_.empty() ? 1.0 : 0.0);
  const double s = std::sqrt(var);
  return std::max(s, 1e-12 * std::max(1.0, std::abs(center())));
}

std::size_t CdfEstimate::count_atoms(double lo, double hi) const {
  std::size_t n = points_.rank(hi) - points_.rank(lo);
  if (kind_ != Kind::step_mixture || shifts_.empty()) return n;
  const auto& v = base_.values();
  if (v.size() >= 8 * shifts_.size()) {
    for (double a : shifts_) n += base_.rank(hi - a) - base_.rank(lo - a);
    return n;
  }
  // Same descending sweep as the evaluation, once for each end.
  std::size_t ph = base_.rank(hi - shifts_.front());
  std::size_t pl = base_.rank(lo - shifts_.front());
  for (double a : shifts_) {
    while (ph > 0 && v[ph - 1] > hi - a) --ph;
    while (pl > 0 && v[pl - 1] > lo - a) --pl;
    n += ph - pl;
  }
  return n;
}

std::vector<double> CdfEstimate::atoms_in(double lo, double hi) const {
  std::vector<double> out;
  const auto& pv = points_.values();
  for (std::size_t i = points_.rank(lo); i < points_.rank(hi); ++i) out.push_back(pv[i]);
  if (kind_ == Kind::step_mixture) {
    const auto& bv = base_.values();
    for (double a : shifts_) {
      for (std::size_t i = base_.rank(lo - a); i < base_.rank(hi - a); ++i) {
        // Smallest y with y - a >= b, where the evaluated F actually jumps.
        double y = a + bv[i];
        while (y - a < bv[i]) y = std::nextafter(y, std::numeric_limits<double>::infinity());
        out.push_back(y);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inversion

namespace {

double invert_points(const StepFunction& f, double alpha) {
  const auto& cum = f.cumulative();
  if (cum.empty()) throw NumericError("cannot invert an empty step function");
  auto it = std::lower_bound(cum.begin(), cum.end(), alpha);
  if (it == cum.end()) {
    throw NumericError("alpha " + std::to_string(alpha) + " exceeds the total mass " + std::to_string(cum.back()));
  }
  return f.values()[static_cast<std::size_t>(it - cum.begin())];
}

// Finds lo < hi with F(lo) < alpha <= F(hi).
std::pair<double, double> bracket(const CdfEstimate& F, double alpha) {
  const double c = F.center();
  double w = 6.0 * F.scale();
  for (int i = 0; i <= 60; ++i) {
    if (F(c - w) < alpha && F(c + w) >= alpha) return {c - w, c + w};
    w *= 2.0;
  }
  throw NumericError("could not bracket the alpha = " + std::to_string(alpha) + " quantile");
}

double invert_step_mixture(const CdfEstimate& F, double alpha) {
  auto [lo, hi] = bracket(F, alpha);
  // While the mass in (lo, hi] exceeds 64 heaviest atoms the interval surely
  // holds more than 64 atoms, so the count can be skipped.
  double max_atom = 0.0;
  for (std::size_t i = 0; i < F.points().size(); ++i) {
    const auto& c = F.points().cumulative();
    max_atom = std::max(max_atom, c[i] - (i ? c[i - 1] : 0.0));
  }
  if (!F.shifts().empty()) {
    double wmax = *std::max_element(F.weights().begin(), F.weights().end());
    const auto& c = F.base().cumulative();
    double bmax = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) bmax = std::max(bmax, c[i] - (i ? c[i - 1] : 0.0));
    max_atom = std::max(max_atom, wmax * bmax);
  }
  double flo = F(lo), fhi = F(hi);
  for (int it = 0; it < 400; ++it) {
    if (!(fhi - flo > 64.0 * max_atom) && F.count_atoms(lo, hi) <= 64) break;
    const double mid = lo + 0.5 * (hi - lo);
    if (!(mid > lo && mid < hi)) break;
    const double fm = F(mid);
    if (fm >= alpha) {
      hi = mid;
      fhi = fm;
    } else {
      lo = mid;
      flo = fm;
    }
  }
  std::vector<double> cand = F.atoms_in(lo, hi);
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  // F is monotone over the sorted candidates: find the first with F >= alpha.
  std::size_t a = 0, b = cand.size();
  while (a < b) {
    const std::size_t m = a + (b - a) / 2;
    if (F(cand[m]) >= alpha) {
      b = m;
    } else {
      a = m + 1;
    }
  }
  return a < cand.size() ? cand[a] : hi;
}

double invert_smooth(const CdfEstimate& F, double alpha) {
  auto [lo, hi] = bracket(F, alpha);
  const double width_tol = 1e-12 * F.scale();
  double x = 0.5 * (lo + hi);
  double prev_step = hi - lo;
  for (int it = 0; it < 500; ++it) {
    const double fx = F(x) - alpha;
    if (std::abs(fx) <= 1e-10) return x;
    if (fx >= 0.0) {
      hi = x;
    } else {
      lo = x;
    }
    if (hi - lo <= width_tol) return hi;
    const double d = F.density(x);
    double next = 0.5 * (lo + hi);
    if (d > 0.0) {
      const double newton = x - fx / d;
      if (newton > lo && newton < hi && std::abs(newton - x) < 0.5 * prev_step) next = newton;
    }
    prev_step = std::abs(next - x);
    x = next;
  }
  return hi;
}

}  // namespace

double invert(const CdfEstimate& cdf, double alpha) {
  check_alpha(alpha);
  // Accumulated atom weights such as 9 x (1/30) can land a few ulps below an
  // exact level; a small fuzz keeps the jump at the intended atom.
  constexpr double kFuzz = 1e-12;
  switch (cdf.kind()) {
    case CdfEstimate::Kind::step:
    case CdfEstimate::Kind::mc_mixture:
      return invert_points(cdf.points(), alpha - kFuzz);
    case CdfEstimate::Kind::step_mixture:
      return invert_step_mixture(cdf, alpha - kFuzz);
    case CdfEstimate::Kind::gaussian_mixture:
      if (cdf.shifts().empty()) return invert_points(cdf.points(), alpha - kFuzz);
      return invert_smooth(cdf, alpha);
  }
  throw NumericError("unknown CDF kind");
}

double empirical_quantile(std::span<const double> values, double alpha) {
  check_alpha(alpha);
  if (values.empty()) throw NumericError("empirical quantile of an empty sample");
  return invert_points(StepFunction::empirical(values), alpha);
}

// ---------------------------------------------------------------------------
// Metrics

bool QuantileTable::monotone_in_alpha() const {
  for (Eigen::Index k = 0; k < values.rows(); ++k) {
    for (Eigen::Index a = 1; a < values.cols(); ++a) {
      if (values(k, a) < values(k, a - 1)) return false;
    }
  }
  return true;
}

std::vector<double> amse(std::span<const QuantileTable> predictions, std::span<const QuantileTable> truths) {
  if (predictions.size() != truths.size() || predictions.empty()) {
    throw ConfigError("amse: prediction and truth lists must be non-empty and of equal length");
  }
  const auto rows = predictions.front().values.rows();
  const auto cols = predictions.front().values.cols();
  std::vector<double> out(static_cast<std::size_t>(cols), 0.0);
  for (std::size_t r = 0; r < predictions.size(); ++r) {
    const auto& p = predictions[r].values;
    const auto& t = truths[r].values;
    if (p.rows() != rows || p.cols() != cols || t.rows() != rows || t.cols() != cols) {
      throw ConfigError("amse: dimension mismatch in repetition " + std::to_string(r));
    }
    for (Eigen::Index a = 0; a < cols; ++a) {
      for (Eigen::Index k = 0; k < rows; ++k) {
        const double e = p(k, a) - t(k, a);
        out[static_cast<std::size_t>(a)] += e * e;
      }
    }
  }
  const double denom = static_cast<double>(predictions.size()) * static_cast<double>(rows);
  for (double& v : out) v /= denom;
  return out;
}

double trimmed_ratio(std::span<const double> estimated_mse, std::span<const double> simulated_mse) {
  if (estimated_mse.size() != simulated_mse.size()) throw ConfigError("trimmed_ratio: length mismatch");
  if (simulated_mse.size() < 5) throw ConfigError("trimmed_ratio needs at least 5 areas");
  std::vector<std::size_t> idx(simulated_mse.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return simulated_mse[a] < simulated_mse[b]; });
  double acc = 0.0;
  for (std::size_t i = 2; i + 2 < idx.size(); ++i) acc += estimated_mse[idx[i]] / simulated_mse[idx[i]];
  return acc / static_cast<double>(idx.size() - 4);
}

std::vector<double> default_alphas() { return {0.05, 0.25, 0.5, 0.75, 0.95}; }

}  // namespace saqe
