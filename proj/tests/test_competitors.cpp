#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "saqe/competitors.hpp"
#include "saqe/error.hpp"
#include "saqe/simbench.hpp"

using namespace saqe;

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double check_loss(const MatrixXd& X, const VectorXd& y, const VectorXd& b, double q) {
  double acc = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double r = y(i) - X.row(i).dot(b);
    acc += r > 0 ? q * r : (q - 1.0) * r;
  }
  return acc;
}

DrawnSample scenario_draw(std::uint64_t seed) {
  const Population pop = gen_population(ScenarioSpec{}, RngStream(seed).child(0));
  return draw_sample(pop, 30, RngStream(seed).child(1));
}

}  // namespace

TEST_CASE("direct: inf-type sample quantiles") {
  std::vector<AreaSample> areas;
  areas.push_back(AreaSample{"a", MatrixXd::Zero(4, 1), (VectorXd(4) << 3, 1, 4, 2).finished()});
  areas.push_back(AreaSample{"b", MatrixXd::Zero(3, 1), VectorXd::Constant(3, 7.5)});
  std::mt19937_64 eng(3);
  std::normal_distribution<double> z;
  VectorXd y30(30);
  for (Index j = 0; j < 30; ++j) y30(j) = z(eng);
  areas.push_back(AreaSample{"c", MatrixXd::Zero(30, 1), y30});
  const SurveySample s(std::move(areas));
  CHECK(quantile_direct(s, 0, 0.5) == 2.0);
  CHECK(quantile_direct(s, 0, 0.25) == 1.0);
  CHECK(quantile_direct(s, 0, 0.2501) == 2.0);
  for (double a : {0.01, 0.5, 0.99}) CHECK(quantile_direct(s, 1, a) == 7.5);
  std::vector<double> sorted(y30.data(), y30.data() + 30);
  std::sort(sorted.begin(), sorted.end());
  CHECK(quantile_direct(s, 2, 0.95) == sorted[28]);
  double prev = -1e300;
  for (int i = 1; i < 100; ++i) {
    const double v = quantile_direct(s, 2, i / 100.0);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK_THROWS_AS(quantile_direct(s, 0, 1.0), DomainError);
  CHECK(cdf_direct(s, 0)(2.5) == 0.5);
}

TEST_CASE("quantile regression: smoothed IRLS matches a check-loss grid search") {
  MatrixXd X(5, 2);
  X << 1, 0.3, 1, 1.1, 1, 2.0, 1, 2.7, 1, 4.2;
  VectorXd y(5);
  y << 0.9, 1.4, 3.3, 2.6, 4.8;
  for (double q : {0.25, 0.5, 0.8}) {
    const VectorXd b = fit_smoothed_quantile_regression(X, y, q, 1e-4 * 1.0);
    const auto [g0, g1] = oracle::grid_argmax_2d(
        [&](double a, double c) { return -check_loss(X, y, (VectorXd(2) << a, c).finished(), q); }, -3.0, 3.0, -1.0,
        3.0, 0.01, 0.001);
    const double best = check_loss(X, y, (VectorXd(2) << g0, g1).finished(), q);
    // No grid point beats the returned coefficients.
    CHECK(check_loss(X, y, b, q) <= best + 1e-12);
    if (q == 0.5) {
      CHECK(std::abs(b(0) - g0) <= 1e-3);
      CHECK(std::abs(b(1) - g1) <= 1e-3);
    }
  }
}

TEST_CASE("mq: symmetry, endpoints and grid membership") {
  std::vector<AreaSample> areas;
  for (int k = 0; k < 3; ++k) {
    AreaSample a{"a" + std::to_string(k), MatrixXd(20, 1), VectorXd(20)};
    for (int j = 0; j < 20; ++j) {
      // Pairs of units at the same x, symmetric about the line 1 + 0.5 x.
      const int i = j / 2;
      a.x(j, 0) = i;
      a.y(j) = 1.0 + 0.5 * i + (j % 2 ? 1.0 : -1.0) * (0.5 + 0.1 * ((3 * i) % 7));
    }
    if (k == 2) {
      a.y(0) -= 1e3;
      a.y(19) += 1e3;
    }
    areas.push_back(std::move(a));
  }
  const SurveySample s(std::move(areas));
  const MqFit fit = fit_mq(s);
  REQUIRE(fit.grid.size() == 199);
  CHECK(fit.grid.front() == 1.0 / 200.0);
  CHECK(fit.grid.back() == 199.0 / 200.0);
  for (std::size_t k = 0; k < 2; ++k) CHECK(std::abs(fit.q_area[k] - 0.5) <= 0.05);
  // A unit far below every other is interpolated by the lowest line.
  CHECK(fit.q_unit[2](0) == 1.0 / 200.0);
  // A unit far above is reached only by high lines; it takes the first that interpolates it.
  const double qtop = fit.q_unit[2](19);
  CHECK(qtop >= 0.9);
  const auto g = static_cast<Index>(std::find(fit.grid.begin(), fit.grid.end(), qtop) - fit.grid.begin());
  const VectorXd bq = fit.beta_by_q[2].col(g);
  CHECK(std::abs(s.area(2).y(19) - bq(0) - bq(1) * 9.0) <= 1e-9);
  for (std::size_t k = 0; k < 3; ++k) {
    for (Index j = 0; j < fit.q_unit[k].size(); ++j) {
      const double q = fit.q_unit[k](j);
      CHECK(std::find(fit.grid.begin(), fit.grid.end(), q) != fit.grid.end());
    }
    CHECK(fit.q_area[k] >= 1.0 / 200.0);
    CHECK(fit.q_area[k] <= 199.0 / 200.0);
  }
}

TEST_CASE("mq: degenerate area design names the area") {
  std::vector<AreaSample> areas;
  areas.push_back(AreaSample{"good", (MatrixXd(3, 1) << 1, 2, 3).finished(), (VectorXd(3) << 1, 3, 2).finished()});
  areas.push_back(AreaSample{"flat", MatrixXd::Constant(3, 1, 2.0), (VectorXd(3) << 1, 3, 2).finished()});
  try {
    fit_mq(SurveySample(std::move(areas)));
    FAIL("expected SingularDesignError");
  } catch (const SingularDesignError& e) {
    CHECK(std::string(e.what()).find("'flat'") != std::string::npos);
  }
}

TEST_CASE("mq: census predictor edge cases") {
  const DrawnSample d = scenario_draw(40);
  MqOptions opt;
  opt.grid_size = 39;
  const MqFit fit = fit_mq(d.sample, opt);
  // All units sampled: the area EDF.
  std::vector<CensusArea> all;
  for (const auto& a : d.sample.areas()) {
    std::vector<Index> link(static_cast<std::size_t>(a.size()));
    for (Index j = 0; j < a.size(); ++j) link[static_cast<std::size_t>(j)] = j;
    all.push_back(CensusArea{a.area_id, a.x, VectorXd(), 0, link});
  }
  const CdfEstimate F = cdf_mq(fit, d.sample, CensusFrame(all), 3);
  const CdfEstimate E = cdf_direct(d.sample, 3);
  for (double a : {0.05, 0.3, 0.5, 0.95}) CHECK(invert(F, a) == invert(E, a));
  // Shifting responses and the fitted surface together shifts every quantile.
  const double c = 3.75;
  MqFit moved = fit;
  moved.beta_area[5](0) += c;
  std::vector<AreaSample> areas = d.sample.areas();
  areas[5].y.array() += c;
  const SurveySample s2(areas);
  const CdfEstimate F0 = cdf_mq(fit, d.sample, d.census, 5);
  const CdfEstimate F1 = cdf_mq(moved, s2, d.census, 5);
  for (double a : {0.05, 0.25, 0.5, 0.75, 0.95}) CHECK(invert(F1, a) - invert(F0, a) == doctest::Approx(c).epsilon(1e-12));
  // Bounded and monotone.
  double prev = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double v = F0(-50.0 + 300.0 * i / 999.0);
    CHECK(v >= prev);
    CHECK(v <= 1.0 + 1e-12);
    prev = v;
  }
  std::vector<CensusArea> nolink;
  for (const auto& a : d.census.areas()) nolink.push_back(CensusArea{a.area_id, a.x, VectorXd(), 0, std::nullopt});
  CHECK_THROWS_AS(cdf_mq(fit, d.sample, CensusFrame(nolink), 0), ConfigError);
}

TEST_CASE("mq: warm-started serial and parallel fits agree") {
  const DrawnSample d = scenario_draw(41);
  MqOptions a, b;
  a.execution = Execution::serial;
  b.execution = Execution::parallel;
  const MqFit fa = fit_mq(d.sample, a), fb = fit_mq(d.sample, b);
  for (std::size_t k = 0; k < fa.q_area.size(); ++k) {
    CHECK(fa.q_area[k] == fb.q_area[k]);
    CHECK(fa.beta_area[k] == fb.beta_area[k]);
  }
}

TEST_CASE("mr: converges to the analytic normal mixture") {
  const DrawnSample d = scenario_draw(42);
  const NerFit ner = fit_ner_mle(d.sample, &d.census);
  const std::size_t k = 7;
  const CdfEstimate F = cdf_mr(ner, d.sample, d.census, k, 10000, RngStream(5));
  const auto& c = d.census.area(k);
  std::vector<char> in(static_cast<std::size_t>(c.population_size), 0);
  for (Index i : *c.sample_link) in[static_cast<std::size_t>(i)] = 1;
  const double sd = std::sqrt((1.0 - ner.gamma[k]) * ner.sigma_v2 + ner.sigma_e2);
  const double N = static_cast<double>(c.population_size);
  auto analytic = [&](double t) {
    double acc = 0.0;
    for (Index j = 0; j < c.population_size; ++j) {
      if (in[static_cast<std::size_t>(j)]) continue;
      const double mu = ner.linear_predictor(c.x->row(j).transpose()) + ner.gamma[k] * ner.nu[k];
      acc += normal_cdf((t - mu) / sd);
    }
    for (Index j = 0; j < d.sample.area(k).size(); ++j) acc += d.sample.area(k).y(j) <= t ? 1.0 : 0.0;
    return acc / N;
  };
  const double lo = invert(F, 0.001) - 1.0, hi = invert(F, 0.999) + 1.0;
  double sup = 0.0;
  for (int i = 0; i <= 400; ++i) {
    const double t = lo + (hi - lo) * i / 400.0;
    sup = std::max(sup, std::abs(F(t) - analytic(t)));
  }
  CHECK(sup < 0.02);
  CHECK(std::abs(F.total_mass() - 1.0) <= 1e-9);
}

TEST_CASE("mr: reproducible streams and configuration errors") {
  const DrawnSample d = scenario_draw(43);
  const NerFit ner = fit_ner_mle(d.sample, &d.census);
  const CdfEstimate a = cdf_mr(ner, d.sample, d.census, 2, 100, RngStream(9), Execution::serial);
  const CdfEstimate b = cdf_mr(ner, d.sample, d.census, 2, 100, RngStream(9), Execution::parallel, 3);
  const CdfEstimate c = cdf_mr(ner, d.sample, d.census, 2, 100, RngStream(10));
  CHECK(a.points().values() == b.points().values());
  CHECK(a.points().cumulative() == b.points().cumulative());
  CHECK(a.points().values() != c.points().values());
  std::vector<CensusArea> nolink;
  for (const auto& x : d.census.areas()) nolink.push_back(CensusArea{x.area_id, x.x, VectorXd(), 0, std::nullopt});
  CHECK_THROWS_AS(cdf_mr(ner, d.sample, CensusFrame(nolink), 0, 10, RngStream(1)), ConfigError);
  CHECK_THROWS_AS(cdf_mr(ner, d.sample, d.census, 0, 0, RngStream(1)), ConfigError);
}
