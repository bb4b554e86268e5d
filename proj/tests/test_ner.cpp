#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "saqe/error.hpp"
#include "saqe/ner.hpp"
#include "saqe/simbench.hpp"

using namespace saqe;

namespace {

// y = 1 + 0.5 x + v_k + e with v ~ N(0, sv^2), e ~ N(0, se^2).
SurveySample ner_sample(int areas, int nk, double sv, double se, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 4.0);
  std::vector<AreaSample> out;
  for (int k = 0; k < areas; ++k) {
    AreaSample a{"k" + std::to_string(k), MatrixXd(nk, 1), VectorXd(nk)};
    const double v = sv * z(eng);
    for (int j = 0; j < nk; ++j) {
      a.x(j, 0) = u(eng);
      a.y(j) = 1.0 + 0.5 * a.x(j, 0) + v + se * z(eng);
    }
    out.push_back(std::move(a));
  }
  return SurveySample(std::move(out));
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("ner: noiseless data recovers beta and flags sigma_e2") {
  std::vector<AreaSample> areas;
  for (int k = 0; k < 2; ++k) {
    AreaSample a{"a" + std::to_string(k), MatrixXd(3, 1), VectorXd(3)};
    for (int j = 0; j < 3; ++j) {
      a.x(j, 0) = j + 2.0 * k;
      a.y(j) = 2.0 + 3.0 * a.x(j, 0);
    }
    areas.push_back(std::move(a));
  }
  const NerFit fit = fit_ner_mle(SurveySample(std::move(areas)));
  CHECK(fit.sigma_e2_degenerate);
  CHECK(std::abs(fit.beta(0) - 2.0) <= 1e-10);
  CHECK(std::abs(fit.beta(1) - 3.0) <= 1e-10);
  CHECK_THROWS_AS(cdf_ner(fit, SurveySample({AreaSample{"a0", MatrixXd::Ones(2, 1), VectorXd::Ones(2)},
                                             AreaSample{"a1", MatrixXd::Ones(2, 1), VectorXd::Ones(2)}}),
                          0),
                  DegenerateDistributionError);
}

TEST_CASE("ner: no between-area variation puts sigma_v2 on the boundary") {
  std::vector<AreaSample> areas;
  const double ys[4] = {1.0, 2.5, 1.7, 3.1};
  for (int k = 0; k < 3; ++k) {
    AreaSample a{"a" + std::to_string(k), MatrixXd(4, 1), VectorXd(4)};
    for (int j = 0; j < 4; ++j) {
      a.x(j, 0) = j;
      a.y(j) = ys[j];
    }
    areas.push_back(std::move(a));
  }
  const SurveySample s(std::move(areas));
  const NerFit fit = fit_ner_mle(s);
  CHECK(fit.sigma_v2_at_boundary);
  CHECK(fit.sigma_v2 == 0.0);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(fit.gamma[k] == 0.0);
    CHECK(fit.eblup_mean[k] == doctest::Approx(fit.linear_predictor(fit.xbar_pop[k])).epsilon(1e-14));
  }
}

TEST_CASE("ner: profile optimum matches a brute-force variance grid") {
  const SurveySample s = ner_sample(3, 4, 1.0, 0.6, 17);
  const NerFit fit = fit_ner_mle(s);
  const auto [sv2, se2] = oracle::grid_argmax_2d(
      [&](double a, double b) { return oracle::ner_dense_loglik(s, a, b); }, 0.0, 4.0, 0.01, 4.0, 0.01, 0.001);
  CHECK(std::abs(fit.sigma_v2 - sv2) <= 1e-3);
  CHECK(std::abs(fit.sigma_e2 - se2) <= 1e-3);
  CHECK(fit.loglik == doctest::Approx(oracle::ner_dense_loglik(s, fit.sigma_v2, fit.sigma_e2)).epsilon(1e-10));
  CHECK(fit.loglik >= oracle::ner_dense_loglik(s, sv2, se2) - 1e-12);
}

TEST_CASE("ner: loglik helpers agree with the dense form") {
  const SurveySample s = ner_sample(4, 5, 0.8, 1.1, 3);
  for (double sv2 : {0.0, 0.3, 2.0}) {
    for (double se2 : {0.5, 1.7}) {
      CHECK(ner_loglik(s, sv2, se2) == doctest::Approx(oracle::ner_dense_loglik(s, sv2, se2)).epsilon(1e-11));
    }
  }
  const auto p = ner_profile(s, 0.4);
  CHECK(p.loglik == doctest::Approx(oracle::ner_dense_loglik(s, 0.4 * p.sigma_e2, p.sigma_e2)).epsilon(1e-11));
  const double h = 1e-6;
  const double fd = (ner_profile(s, 0.4 + h).loglik - ner_profile(s, 0.4 - h).loglik) / (2 * h);
  CHECK(p.gradient == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("ner: local maximum under random perturbations") {
  const SurveySample s = ner_sample(8, 6, 1.0, 1.0, 99);
  const NerFit fit = fit_ner_mle(s);
  REQUIRE(fit.sigma_v2 > 0.0);
  std::mt19937_64 eng(5);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (int i = 0; i < 50; ++i) {
    const double sv2 = fit.sigma_v2 * (1.0 + u(eng));
    const double se2 = fit.sigma_e2 * (1.0 + u(eng));
    CHECK(ner_loglik(s, sv2, se2) <= fit.loglik + 1e-10);
  }
  CHECK(std::abs(fit.profile_gradient) <= 1e-6 * s.total_size());
}

TEST_CASE("ner: shrinkage and EBLUP identities") {
  const SurveySample s = ner_sample(6, 5, 1.0, 1.0, 8);
  const NerFit fit = fit_ner_mle(s);
  for (std::size_t k = 0; k < 6; ++k) {
    const double nk = static_cast<double>(fit.n[k]);
    CHECK(fit.gamma[k] == doctest::Approx(nk * fit.sigma_v2 / (fit.sigma_e2 + nk * fit.sigma_v2)).epsilon(1e-15));
    CHECK(fit.gamma[k] >= 0.0);
    CHECK(fit.gamma[k] < 1.0);
    const double nu = fit.ybar[k] - fit.linear_predictor(fit.xbar_sample[k]);
    CHECK(std::abs(fit.eblup_mean[k] - (fit.linear_predictor(fit.xbar_pop[k]) + fit.gamma[k] * nu)) <= 1e-12);
  }
  // gamma grows with n_k and with sigma_v2.
  auto gamma = [&](double n, double sv2) { return n * sv2 / (fit.sigma_e2 + n * sv2); };
  CHECK(gamma(10, fit.sigma_v2) > gamma(5, fit.sigma_v2));
  CHECK(gamma(5, 2 * fit.sigma_v2) > gamma(5, fit.sigma_v2));
  CHECK(fit.warnings.size() == 1);
}

TEST_CASE("ner: Monte-Carlo recovery on the scenario (i) design") {
  ScenarioSpec spec;
  double se = 0.0, sv = 0.0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    const Population pop = gen_population(spec, RngStream(1000 + r));
    const DrawnSample d = draw_sample(pop, 30, RngStream(2000 + r));
    const NerFit fit = fit_ner_mle(d.sample, &d.census);
    se += fit.sigma_e2;
    sv += fit.sigma_v2;
  }
  CHECK(std::abs(se / reps - 2.0) <= 0.3);
  CHECK(std::abs(sv / reps - 1.0) <= 0.5);
}

TEST_CASE("ner: singular centred design") {
  std::vector<AreaSample> areas;
  for (int k = 0; k < 2; ++k) {
    AreaSample a{"a" + std::to_string(k), MatrixXd(3, 2), VectorXd(3)};
    for (int j = 0; j < 3; ++j) {
      a.x(j, 0) = j;
      a.x(j, 1) = 2.0 * j + k;
      a.y(j) = j + k;
    }
    areas.push_back(std::move(a));
  }
  CHECK_THROWS_AS(fit_ner_mle(SurveySample(std::move(areas))), SingularDesignError);
}

TEST_CASE("cdf_ner: mean, median and shape") {
  // Symmetric design within each area.
  std::vector<AreaSample> areas;
  std::mt19937_64 eng(4);
  std::normal_distribution<double> z;
  for (int k = 0; k < 5; ++k) {
    AreaSample a{"a" + std::to_string(k), MatrixXd(6, 1), VectorXd(6)};
    const double xs[6] = {-2.5, -1.0, -0.5, 0.5, 1.0, 2.5};
    for (int j = 0; j < 6; ++j) {
      a.x(j, 0) = xs[j] + k;
      a.y(j) = 1.0 + 0.7 * a.x(j, 0) + 0.8 * k + z(eng);
    }
    areas.push_back(std::move(a));
  }
  const SurveySample s(std::move(areas));
  const NerFit fit = fit_ner_mle(s);
  for (std::size_t k = 0; k < 5; ++k) {
    const CdfEstimate F = cdf_ner(fit, s, k);
    const double m = fit.eblup_mean[k];
    const double sd = fit.sigma_e();
    // E[Y] = int_0^inf (1 - F) - int_-inf^0 F, Simpson on each side of 0.
    const double lo = std::min(0.0, m) - 14 * sd, hi = std::max(0.0, m) + 14 * sd;
    auto simpson = [](double a, double b, auto&& fn) {
      const int nn = 200000;
      const double hh = (b - a) / nn;
      double acc2 = fn(a) + fn(b);
      for (int i = 1; i < nn; ++i) acc2 += (i % 2 ? 4.0 : 2.0) * fn(a + i * hh);
      return acc2 * hh / 3.0;
    };
    const double acc =
        simpson(0.0, hi, [&](double y) { return 1.0 - F(y); }) - simpson(lo, 0.0, [&](double y) { return F(y); });
    CHECK(std::abs(acc - m) <= 1e-8);
    CHECK(std::abs(invert(F, 0.5) - m) <= 1e-6);
    double prev = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double v = F(m - 10 + 20.0 * i / 999.0);
      CHECK(v >= prev);
      CHECK(v <= 1.0);
      prev = v;
    }
  }
}

TEST_CASE("cdf_ner: single-atom mixture is a normal CDF") {
  std::vector<AreaSample> areas;
  for (int k = 0; k < 3; ++k) {
    AreaSample a{"a" + std::to_string(k), MatrixXd(4, 1), VectorXd(4)};
    const double ys[4] = {0.3, 1.9, 1.1, 2.6};
    for (int j = 0; j < 4; ++j) {
      a.x(j, 0) = j;
      a.y(j) = ys[j] + 0.5 * k;
    }
    areas.push_back(std::move(a));
  }
  const SurveySample s(std::move(areas));
  const NerFit fit = fit_ner_mle(s);
  // Row equal to the area mean: a single-row area built from x = xbar.
  const SurveySample one({AreaSample{"a0", MatrixXd::Constant(2, 1, 1.5), VectorXd::Zero(2)},
                          AreaSample{"a1", MatrixXd::Constant(2, 1, 1.5), VectorXd::Zero(2)},
                          AreaSample{"a2", MatrixXd::Constant(2, 1, 1.5), VectorXd::Zero(2)}});
  const CdfEstimate F = cdf_ner(fit, one, 1);
  for (double y : {-2.0, 0.0, 1.3, 4.0}) {
    CHECK(F(y) == doctest::Approx(normal_cdf((y - fit.eblup_mean[1]) / fit.sigma_e())).epsilon(1e-14));
  }
}

TEST_CASE("cdf_eb: degenerate forms") {
  const SurveySample s = ner_sample(3, 4, 1.0, 1.0, 21);
  const NerFit fit = fit_ner_mle(s);
  // Every census row sampled: EB1 is the sample EDF.
  std::vector<CensusArea> all;
  for (const auto& a : s.areas()) {
    std::vector<Index> link = {0, 1, 2, 3};
    all.push_back(CensusArea{a.area_id, a.x, VectorXd(), 0, link});
  }
  const CensusFrame c(std::move(all));
  const CdfEstimate eb1 = cdf_eb(fit, s, c, 2, EbVariant::eb1);
  const auto& y = s.area(2).y;
  for (double t : {-5.0, y(0), y(1) - 1e-9, y(2), y(3), 50.0}) {
    double edf = 0.0;
    for (Index j = 0; j < 4; ++j) edf += y(j) <= t ? 0.25 : 0.0;
    CHECK(eb1(t) == doctest::Approx(edf).epsilon(1e-15));
  }
  // EB1 without a link is a configuration error.
  std::vector<CensusArea> nolink;
  for (const auto& a : s.areas()) nolink.push_back(CensusArea{a.area_id, a.x, VectorXd(), 0, std::nullopt});
  CHECK_THROWS_AS(cdf_eb(fit, s, CensusFrame(std::move(nolink)), 0, EbVariant::eb1), ConfigError);
  // EB2 over one census row is a single normal CDF centred at nu + x' beta.
  std::vector<CensusArea> one;
  for (const auto& a : s.areas()) one.push_back(CensusArea{a.area_id, MatrixXd::Constant(1, 1, 2.0), VectorXd(), 0, std::nullopt});
  const CdfEstimate eb2 = cdf_eb(fit, s, CensusFrame(std::move(one)), 1, EbVariant::eb2);
  const double centre = fit.nu[1] + fit.linear_predictor(VectorXd::Constant(1, 2.0));
  for (double t : {-1.0, 1.0, 3.0}) {
    CHECK(eb2(t) == doctest::Approx(normal_cdf((t - centre) / fit.sigma_e())).epsilon(1e-14));
  }
}

TEST_CASE("cdf_eb: EB1 and EB2 quantiles are close on a simulated population") {
  const Population pop = gen_population(ScenarioSpec{}, RngStream(31));
  const DrawnSample d = draw_sample(pop, 30, RngStream(32));
  const NerFit fit = fit_ner_mle(d.sample, &d.census);
  for (std::size_t k = 0; k < 20; k += 5) {
    const CdfEstimate f1 = cdf_eb(fit, d.sample, d.census, k, EbVariant::eb1);
    const CdfEstimate f2 = cdf_eb(fit, d.sample, d.census, k, EbVariant::eb2);
    for (double a : {0.05, 0.5, 0.95}) {
      // n_k / N_k = 0.03 of the mass moves; on a spread of a few units that is well under 0.3.
      CHECK(std::abs(invert(f1, a) - invert(f2, a)) < 0.3);
    }
  }
}
