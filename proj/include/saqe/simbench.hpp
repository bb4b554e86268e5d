#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "saqe/bootstrap.hpp"
#include "saqe/data.hpp"
#include "saqe/pipeline.hpp"
#include "saqe/rng.hpp"

namespace saqe {

enum class Scenario { i, ii, iii, iv };
// How the Binomial success probability of x3 is formed:
// z_clamped uses clamp(0.6 + 0.1 z), raw_clamped uses clamp(0.6 + 0.1 x2).
enum class BinomP { z_clamped, raw_clamped };

Scenario parse_scenario(std::string_view name);
std::string scenario_name(Scenario s);
BinomP parse_binom_p(std::string_view name);
std::string binom_p_name(BinomP p);

struct ScenarioSpec {
  Scenario scenario = Scenario::i;
  double beta_scale = 1.5;
  int areas = 20;
  int population_size = 1000;
  int sample_size = 30;
  int repetitions = 200;
  std::uint64_t seed = 1;
  BinomP binom_p = BinomP::z_clamped;

  void validate() const;
};

// A finite population: full census x and the responses, area by area.
struct Population {
  CensusFrame census;
  std::vector<VectorXd> y;

  std::vector<std::string> area_ids() const;
  // Quantiles of each area's population EDF (areas x alphas).
  MatrixXd true_quantiles(const std::vector<double>& alphas) const;
};

// x1 ~ U(0, 50), x2 = 50 z with z ~ Beta(0.6, 0.6), x3 ~ Binom(12, p),
// y = x' (beta_scale beta0) + nu_k + eps with nu_k ~ N(8, 1).
Population gen_population(const ScenarioSpec& spec, const RngStream& rng);

// Simple random sample without replacement of n units per area; the census of
// the result carries the sample link.
struct DrawnSample {
  SurveySample sample;
  CensusFrame census;
};
DrawnSample draw_sample(const Population& population, int per_area, const RngStream& rng);

// Residual-permutation populations built on a real survey treated as the population:
// y = yhat + eps_hat[pi(j)] with yhat = x' beta + gamma_k nu_k from a NER fit.
class ShadowPopulation {
 public:
  explicit ShadowPopulation(const SurveySample& real, const NerOptions& options = {});
  Population draw(const RngStream& rng) const;
  const NerFit& fit() const noexcept { return fit_; }

 private:
  CensusFrame census_;
  std::vector<VectorXd> fitted_;
  std::vector<VectorXd> residuals_;
  NerFit fit_;
};

using PopulationSource = std::function<Population(const RngStream&)>;

struct ExperimentConfig {
  ScenarioSpec spec;
  std::vector<Method> methods;
  std::vector<double> alphas = default_alphas();
  int bootstrap_B = 0;                   // 0 disables the MSE ratios
  std::vector<Method> bootstrap_methods;  // subset of methods
  PipelineOptions pipeline;
  Execution execution = Execution::parallel;
};

struct ExperimentResult {
  std::vector<std::string> methods;
  std::vector<double> alphas;
  std::vector<std::string> area_ids;
  MatrixXd amse;                          // methods x alphas
  std::vector<MatrixXd> area_mse;         // per method: areas x alphas
  std::vector<std::string> ratio_methods;
  MatrixXd ratios;                        // ratio_methods x alphas
  std::vector<MatrixXd> bootstrap_mse;    // per ratio method: mean bootstrap mse, areas x alphas
  int repetitions = 0;
  int failures = 0;
  std::vector<std::string> log;
  double max_constraint_residual = 0.0;
  int drm_fits = 0;

  Index method_index(std::string_view method) const;
  double amse_of(std::string_view method, double alpha) const;
  double ratio_of(std::string_view method, double alpha) const;
};

// Bootstrap variant used when assessing a method inside an experiment.
BootstrapVariant experiment_variant(Method m);

// Repetition r uses stream RngStream(seed).child(r): child 0 builds the
// population, 1 draws the sample, 2 feeds MR, 3 the bootstrap.
ExperimentResult run_experiment(const ExperimentConfig& config, const PopulationSource& source = {});

}  // namespace saqe
