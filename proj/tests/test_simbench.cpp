#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "saqe/error.hpp"
#include "saqe/simbench.hpp"

using namespace saqe;

namespace {

// Pooled within-area central moments of y - x' beta (area effects removed by centring).
std::pair<double, double> within_moments(const Population& pop, double scale) {
  const Eigen::Vector3d beta = scale * Eigen::Vector3d(0.019, 0.022, 0.074);
  double m2 = 0.0, m3 = 0.0, n = 0.0;
  for (std::size_t k = 0; k < pop.y.size(); ++k) {
    const VectorXd e = pop.y[k] - *pop.census.area(k).x * beta;
    const VectorXd c = e.array() - e.mean();
    m2 += c.squaredNorm();
    m3 += c.array().cube().sum();
    n += static_cast<double>(c.size());
  }
  return {m2 / n, m3 / n};
}

}  // namespace

TEST_CASE("population: layout, covariate ranges and scenario moments") {
  ScenarioSpec spec;
  const Population pop = gen_population(spec, RngStream(1));
  REQUIRE(pop.y.size() == 20);
  CHECK(pop.area_ids().front() == "area01");
  CHECK(pop.area_ids().back() == "area20");
  for (std::size_t k = 0; k < 20; ++k) {
    const MatrixXd& x = *pop.census.area(k).x;
    REQUIRE(x.rows() == 1000);
    CHECK(x.col(0).minCoeff() >= 0.0);
    CHECK(x.col(0).maxCoeff() <= 50.0);
    CHECK(x.col(1).minCoeff() >= 0.0);
    CHECK(x.col(1).maxCoeff() <= 50.0);
    for (Index j = 0; j < x.rows(); ++j) {
      CHECK(x(j, 2) == std::round(x(j, 2)));
      CHECK(x(j, 2) >= 0.0);
      CHECK(x(j, 2) <= 12.0);
    }
  }
  // N(0, 2) errors.
  CHECK(std::abs(within_moments(pop, 1.5).first - 2.0) <= 0.1);
  // Mixtures: variance 1 + E[mu^2] / 36 = 1.771 for (ii) and 1 + 0.09 (5 mu / 9)^2 = 1.771 for (iii), (iv).
  spec.scenario = Scenario::ii;
  const auto [v2, s2] = within_moments(gen_population(spec, RngStream(2)), 1.5);
  CHECK(std::abs(v2 - 1.771) <= 0.1);
  CHECK(std::abs(s2) <= 0.15);
  spec.scenario = Scenario::iii;
  const auto [v3, s3] = within_moments(gen_population(spec, RngStream(3)), 1.5);
  spec.scenario = Scenario::iv;
  const auto [v4, s4] = within_moments(gen_population(spec, RngStream(4)), 1.5);
  CHECK(std::abs(v3 - 1.771) <= 0.1);
  CHECK(std::abs(v4 - 1.771) <= 0.1);
  // Third moment 0.1 * 0.9 * 0.8 * (5 mu / 9)^3 averaged over mu: about 1.18 in size.
  CHECK(s3 < -0.8);
  CHECK(s4 > 0.8);
  CHECK(std::abs(s3 + s4) <= 0.3);
}

TEST_CASE("population: deterministic in its stream") {
  ScenarioSpec spec;
  spec.areas = 3;
  spec.population_size = 50;
  const Population a = gen_population(spec, RngStream(5)), b = gen_population(spec, RngStream(5));
  const Population c = gen_population(spec, RngStream(6));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(a.y[k] == b.y[k]);
    CHECK(*a.census.area(k).x == *b.census.area(k).x);
    CHECK(a.y[k] != c.y[k]);
  }
  spec.binom_p = BinomP::raw_clamped;
  const Population r = gen_population(spec, RngStream(5));
  CHECK(*r.census.area(0).x != *a.census.area(0).x);
  CHECK(parse_binom_p(binom_p_name(BinomP::raw_clamped)) == BinomP::raw_clamped);
}

TEST_CASE("draw_sample: distinct linked units") {
  ScenarioSpec spec;
  const Population pop = gen_population(spec, RngStream(7));
  const DrawnSample d = draw_sample(pop, 30, RngStream(8));
  REQUIRE(d.sample.num_areas() == 20);
  for (std::size_t k = 0; k < 20; ++k) {
    const auto& link = *d.census.area(k).sample_link;
    REQUIRE(link.size() == 30);
    CHECK(std::set<Index>(link.begin(), link.end()).size() == 30);
    for (std::size_t j = 0; j < 30; ++j) {
      CHECK(link[j] >= 0);
      CHECK(link[j] < 1000);
      CHECK(d.sample.area(k).y(static_cast<Index>(j)) == pop.y[k](link[j]));
    }
  }
  CHECK_THROWS_AS(draw_sample(pop, 1001, RngStream(1)), ConfigError);
}

TEST_CASE("scenario spec validation and names") {
  ScenarioSpec spec;
  spec.areas = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = ScenarioSpec{};
  spec.sample_size = 2000;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  for (auto s : {Scenario::i, Scenario::ii, Scenario::iii, Scenario::iv}) CHECK(parse_scenario(scenario_name(s)) == s);
  CHECK_THROWS_AS(parse_scenario("v"), ConfigError);
}

TEST_CASE("experiment: one repetition is the single squared error") {
  ExperimentConfig cfg;
  cfg.spec.repetitions = 1;
  cfg.spec.seed = 4;
  cfg.methods = {Method::dir};
  cfg.alphas = {0.5};
  const ExperimentResult r = run_experiment(cfg);
  const RngStream rep = RngStream(4).child(0);
  const Population pop = gen_population(cfg.spec, rep.child(0));
  const DrawnSample d = draw_sample(pop, cfg.spec.sample_size, rep.child(1));
  const MatrixXd truth = pop.true_quantiles({0.5});
  double acc = 0.0;
  for (std::size_t k = 0; k < 20; ++k) acc += std::pow(quantile_direct(d.sample, k, 0.5) - truth(static_cast<Index>(k), 0), 2);
  CHECK(r.amse_of("dir", 0.5) == doctest::Approx(acc / 20.0).epsilon(1e-14));
  CHECK(r.repetitions == 1);
}

TEST_CASE("experiment: identical across execution modes") {
  ExperimentConfig cfg;
  cfg.spec.repetitions = 3;
  cfg.spec.areas = 6;
  cfg.spec.population_size = 200;
  cfg.methods = {Method::dir, Method::ner, Method::el, Method::ebel2, Method::mr, Method::mq};
  cfg.bootstrap_B = 4;
  cfg.bootstrap_methods = {Method::el, Method::ebel2};
  cfg.pipeline.mq.grid_size = 19;
  cfg.execution = Execution::serial;
  const ExperimentResult a = run_experiment(cfg);
  cfg.execution = Execution::parallel;
  cfg.pipeline.threads = 3;
  const ExperimentResult b = run_experiment(cfg);
  CHECK(a.amse == b.amse);
  CHECK(a.ratios == b.ratios);
  for (std::size_t m = 0; m < a.area_mse.size(); ++m) CHECK(a.area_mse[m] == b.area_mse[m]);
  CHECK(a.max_constraint_residual <= 1e-6);
}

TEST_CASE("experiment: larger signal hurts predictors built on sampled x more than census ones") {
  // The noise is fixed while x' beta spreads out, so absolute quantile error
  // does not fall; NER mixes over the 30 sampled x rows, EB2 over all 1000.
  ExperimentConfig cfg;
  cfg.spec.repetitions = 100;
  cfg.methods = {Method::ner, Method::eb2};
  std::vector<MatrixXd> amse;
  for (double s : {1.0, 1.5}) {
    cfg.spec.beta_scale = s;
    amse.push_back(run_experiment(cfg).amse);
  }
  const double ner_growth = amse[1].row(0).mean() / amse[0].row(0).mean();
  const double eb2_growth = amse[1].row(1).mean() / amse[0].row(1).mean();
  MESSAGE("AMSE growth from beta scale 1.0 to 1.5: ner " << ner_growth << ", eb2 " << eb2_growth);
  CHECK(ner_growth > 1.0);
  CHECK(ner_growth > eb2_growth);
}

TEST_CASE("shadow population: permuted residuals around fixed fitted values") {
  ScenarioSpec spec;
  spec.areas = 5;
  spec.population_size = 60;
  const Population pop = gen_population(spec, RngStream(20));
  std::vector<AreaSample> areas;
  for (std::size_t k = 0; k < 5; ++k) areas.push_back(AreaSample{pop.area_ids()[k], *pop.census.area(k).x, pop.y[k]});
  const SurveySample real(std::move(areas));
  const ShadowPopulation shadow(real);
  const Population a = shadow.draw(RngStream(1)), b = shadow.draw(RngStream(1)), c = shadow.draw(RngStream(2));
  const NerFit& f = shadow.fit();
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(a.y[k] == b.y[k]);
    const MatrixXd& x = real.area(k).x;
    std::vector<double> ra, rc, rr;
    for (Index j = 0; j < x.rows(); ++j) {
      const double yhat = f.linear_predictor(x.row(j).transpose()) + f.gamma[k] * f.nu[k];
      ra.push_back(a.y[k](j) - yhat);
      rc.push_back(c.y[k](j) - yhat);
      rr.push_back(real.area(k).y(j) - yhat);
    }
    std::sort(ra.begin(), ra.end());
    std::sort(rc.begin(), rc.end());
    std::sort(rr.begin(), rr.end());
    for (std::size_t j = 0; j < ra.size(); ++j) {
      CHECK(std::abs(ra[j] - rr[j]) <= 1e-9);
      CHECK(std::abs(rc[j] - rr[j]) <= 1e-9);
    }
  }
}
