#include "saqe/simbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "saqe/error.hpp"

namespace saqe {

Scenario parse_scenario(std::string_view name) {
  if (name == "i" || name == "1") return Scenario::i;
  if (name == "ii" || name == "2") return Scenario::ii;
  if (name == "iii" || name == "3") return Scenario::iii;
  if (name == "iv" || name == "4") return Scenario::iv;
  throw ConfigError("unknown scenario '" + std::string(name) + "' (expected i, ii, iii, iv)");
}

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::i: return "i";
    case Scenario::ii: return "ii";
    case Scenario::iii: return "iii";
    case Scenario::iv: return "iv";
  }
  return "?";
}

BinomP parse_binom_p(std::string_view name) {
  if (name == "z-clamped") return BinomP::z_clamped;
  if (name == "raw-clamped") return BinomP::raw_clamped;
  throw ConfigError("unknown binom_p '" + std::string(name) + "' (expected z-clamped, raw-clamped)");
}

std::string binom_p_name(BinomP p) { return p == BinomP::z_clamped ? "z-clamped" : "raw-clamped"; }

void ScenarioSpec::validate() const {
  if (!(beta_scale > 0.0) || !std::isfinite(beta_scale)) throw ConfigError("beta scale must be positive");
  if (areas < 2) throw ConfigError("need at least 2 areas");
  if (sample_size < 2) throw ConfigError("need at least 2 sampled units per area");
  if (population_size < sample_size) throw ConfigError("population size must be at least the sample size");
  if (repetitions < 1) throw ConfigError("need at least one repetition");
}

std::vector<std::string> Population::area_ids() const {
  std::vector<std::string> ids;
  for (const auto& a : census.areas()) ids.push_back(a.area_id);
  return ids;
}

MatrixXd Population::true_quantiles(const std::vector<double>& alphas) const {
  MatrixXd q(static_cast<Index>(y.size()), static_cast<Index>(alphas.size()));
  for (std::size_t k = 0; k < y.size(); ++k) {
    const StepFunction f =
        StepFunction::empirical(std::span<const double>(y[k].data(), static_cast<std::size_t>(y[k].size())));
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      q(static_cast<Index>(k), static_cast<Index>(a)) = invert(CdfEstimate::step(f), alphas[a]);
    }
  }
  return q;
}

namespace {

std::string area_label(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "area%02d", k + 1);
  return buf;
}

double draw_error(Scenario s, double mu, std::mt19937_64& eng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (s) {
    case Scenario::i:
      return std::sqrt(2.0) * z(eng);
    case Scenario::ii: {
      const double c = u(eng) < 0.5 ? -mu / 6.0 : mu / 6.0;
      return c + z(eng);
    }
    case Scenario::iii: {
      const double c = u(eng) < 0.1 ? -mu / 2.0 : mu / 18.0;
      return c + z(eng);
    }
    case Scenario::iv: {
      const double c = u(eng) < 0.9 ? -mu / 18.0 : mu / 2.0;
      return c + z(eng);
    }
  }
  return 0.0;
}

}  // namespace

Population gen_population(const ScenarioSpec& spec, const RngStream& rng) {
  spec.validate();
  static constexpr double beta0[3] = {0.019, 0.022, 0.074};
  auto eng = rng.engine();
  std::uniform_real_distribution<double> ux(0.0, 50.0);
  std::uniform_real_distribution<double> umu(4.5, 6.0);
  std::gamma_distribution<double> g(0.6, 1.0);
  std::normal_distribution<double> nu_dist(8.0, 1.0);
  Population pop;
  std::vector<CensusArea> areas;
  const Index N = spec.population_size;
  for (int k = 0; k < spec.areas; ++k) {
    const double nu = nu_dist(eng);
    const double mu = umu(eng);
    MatrixXd x(N, 3);
    VectorXd y(N);
    for (Index j = 0; j < N; ++j) {
      const double x1 = ux(eng);
      const double g1 = g(eng);
      const double g2 = g(eng);
      const double z = g1 / (g1 + g2);
      const double x2 = 50.0 * z;
      const double praw = spec.binom_p == BinomP::z_clamped ? 0.6 + 0.1 * z : 0.6 + 0.1 * x2;
      std::binomial_distribution<int> bin(12, std::clamp(praw, 0.01, 0.99));
      const double x3 = bin(eng);
      x(j, 0) = x1;
      x(j, 1) = x2;
      x(j, 2) = x3;
      const double lin = spec.beta_scale * (beta0[0] * x1 + beta0[1] * x2 + beta0[2] * x3);
      y(j) = lin + nu + draw_error(spec.scenario, mu, eng);
    }
    areas.push_back(CensusArea{area_label(k), std::move(x), VectorXd(), 0, std::nullopt});
    pop.y.push_back(std::move(y));
  }
  pop.census = CensusFrame(std::move(areas));
  return pop;
}

DrawnSample draw_sample(const Population& population, int per_area, const RngStream& rng) {
  if (per_area < 2) throw ConfigError("need at least 2 sampled units per area");
  auto eng = rng.engine();
  std::vector<AreaSample> samples;
  std::vector<CensusArea> linked;
  for (std::size_t k = 0; k < population.census.num_areas(); ++k) {
    const CensusArea& c = population.census.area(k);
    const Index N = c.x->rows();
    if (N < per_area) throw ConfigError("area '" + c.area_id + "' is smaller than the sample size");
    std::vector<Index> all(static_cast<std::size_t>(N));
    std::iota(all.begin(), all.end(), Index{0});
    std::vector<Index> pick;
    pick.reserve(static_cast<std::size_t>(per_area));
    std::sample(all.begin(), all.end(), std::back_inserter(pick), per_area, eng);
    AreaSample s{c.area_id, MatrixXd(per_area, c.x->cols()), VectorXd(per_area)};
    for (int j = 0; j < per_area; ++j) {
      s.x.row(j) = c.x->row(pick[static_cast<std::size_t>(j)]);
      s.y(j) = population.y[k](pick[static_cast<std::size_t>(j)]);
    }
    samples.push_back(std::move(s));
    CensusArea l = c;
    l.sample_link = std::move(pick);
    linked.push_back(std::move(l));
  }
  return DrawnSample{SurveySample(std::move(samples)), CensusFrame(std::move(linked))};
}

// ---------------------------------------------------------------------------
// Shadow populations

ShadowPopulation::ShadowPopulation(const SurveySample& real, const NerOptions& options) {
  std::vector<CensusArea> areas;
  for (const auto& a : real.areas()) areas.push_back(CensusArea{a.area_id, a.x, VectorXd(), 0, std::nullopt});
  census_ = CensusFrame(std::move(areas));
  fit_ = fit_ner_mle(real, &census_, options);
  for (std::size_t k = 0; k < real.num_areas(); ++k) {
    const auto& a = real.area(k);
    VectorXd yhat(a.size());
    for (Index j = 0; j < a.size(); ++j) {
      yhat(j) = fit_.linear_predictor(a.x.row(j).transpose()) + fit_.gamma[k] * fit_.nu[k];
    }
    residuals_.push_back(a.y - yhat);
    fitted_.push_back(std::move(yhat));
  }
}

Population ShadowPopulation::draw(const RngStream& rng) const {
  auto eng = rng.engine();
  Population pop;
  pop.census = census_;
  for (std::size_t k = 0; k < fitted_.size(); ++k) {
    std::vector<Index> perm(static_cast<std::size_t>(fitted_[k].size()));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), eng);
    VectorXd y(fitted_[k].size());
    for (Index j = 0; j < y.size(); ++j) y(j) = fitted_[k](j) + residuals_[k](perm[static_cast<std::size_t>(j)]);
    pop.y.push_back(std::move(y));
  }
  return pop;
}

// ---------------------------------------------------------------------------
// Experiment driver

BootstrapVariant experiment_variant(Method m) {
  switch (m) {
    case Method::ner:
    case Method::mr:
    case Method::eb1:
    case Method::eb2:
      return BootstrapVariant::census_ner;
    default:
      return BootstrapVariant::census_drm;
  }
}

Index ExperimentResult::method_index(std::string_view method) const {
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (methods[i] == method) return static_cast<Index>(i);
  }
  throw ConfigError("experiment has no method '" + std::string(method) + "'");
}

namespace {

Index alpha_index(const std::vector<double>& alphas, double alpha) {
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (std::abs(alphas[i] - alpha) < 1e-12) return static_cast<Index>(i);
  }
  throw ConfigError("experiment has no alpha " + std::to_string(alpha));
}

struct RepOutcome {
  bool ok = false;
  std::string error;
  std::vector<MatrixXd> sq;    // per method
  std::vector<MatrixXd> boot;  // per bootstrap method
  double constraint = 0.0;
  int drm_fits = 0;
  std::vector<std::string> area_ids;
};

}  // namespace

double ExperimentResult::amse_of(std::string_view method, double alpha) const {
  return amse(method_index(method), alpha_index(alphas, alpha));
}

double ExperimentResult::ratio_of(std::string_view method, double alpha) const {
  for (std::size_t i = 0; i < ratio_methods.size(); ++i) {
    if (ratio_methods[i] == method) return ratios(static_cast<Index>(i), alpha_index(alphas, alpha));
  }
  throw ConfigError("experiment has no bootstrap ratio for '" + std::string(method) + "'");
}

ExperimentResult run_experiment(const ExperimentConfig& config, const PopulationSource& source) {
  config.spec.validate();
  validate_alphas(config.alphas);
  if (config.methods.empty()) throw ConfigError("experiment needs at least one method");
  for (Method m : config.bootstrap_methods) {
    if (std::find(config.methods.begin(), config.methods.end(), m) == config.methods.end()) {
      throw ConfigError("bootstrap method " + method_name(m) + " is not among the simulated methods");
    }
  }
  const bool boot = config.bootstrap_B > 0 && !config.bootstrap_methods.empty();
  if (boot && config.spec.areas < 5) throw ConfigError("bootstrap ratios need at least 5 areas");
  const ScenarioSpec& spec = config.spec;
  const PopulationSource gen = source ? source : PopulationSource([&spec](const RngStream& r) {
    return gen_population(spec, r);
  });

  // Bootstrap variants in first-use order, each with its methods.
  std::vector<BootstrapVariant> variants;
  std::vector<std::vector<Method>> variant_methods;
  for (Method m : config.bootstrap_methods) {
    const BootstrapVariant v = experiment_variant(m);
    auto it = std::find(variants.begin(), variants.end(), v);
    if (it == variants.end()) {
      variants.push_back(v);
      variant_methods.push_back({m});
    } else {
      variant_methods[static_cast<std::size_t>(it - variants.begin())].push_back(m);
    }
  }
  std::vector<Method> fit_methods = config.methods;
  if (boot) {
    // Every bootstrap world needs sigma_v2; the DRM variant also needs G_k.
    fit_methods.push_back(Method::ner);
    if (std::find(variants.begin(), variants.end(), BootstrapVariant::census_drm) != variants.end()) {
      fit_methods.push_back(Method::ebel2);
    }
  }

  PipelineOptions inner = config.pipeline;
  const RngStream root(spec.seed);
  const std::size_t R = static_cast<std::size_t>(spec.repetitions);
  std::vector<RepOutcome> outcomes(R);

  for_each_index(R, config.execution, config.pipeline.threads, [&](std::size_t r) {
    RepOutcome& out = outcomes[r];
    const RngStream rr = root.child(r);
    try {
      const Population pop = gen(rr.child(0));
      const MatrixXd truth = pop.true_quantiles(config.alphas);
      out.area_ids = pop.area_ids();
      const DrawnSample ds = draw_sample(pop, spec.sample_size, rr.child(1));
      const PipelineFits fits = fit_pipeline(fit_methods, ds.sample, &ds.census, inner);
      if (fits.drm) {
        out.constraint = fits.drm->constraint_residual();
        out.drm_fits = 1;
      }
      for (Method m : config.methods) {
        const QuantileTable t = predict_quantiles(m, fits, ds.sample, &ds.census, config.alphas, inner, rr.child(2));
        out.sq.push_back((t.values - truth).cwiseAbs2());
      }
      std::vector<MatrixXd> by_method(config.bootstrap_methods.size());
      for (std::size_t v = 0; boot && v < variants.size(); ++v) {
        BootstrapPlan plan;
        plan.B = config.bootstrap_B;
        plan.variant = variants[v];
        plan.alphas = config.alphas;
        plan.methods = variant_methods[v];
        plan.seed = spec.seed;
        plan.pipeline = inner;
        const DrmFit* drm = variant_uses_drm(variants[v]) ? &*fits.drm : nullptr;
        const MseReport rep = bootstrap_mse(plan, ds.sample, &ds.census, *fits.ner, drm,
                                            rr.child(3).child(v), Execution::serial);
        out.constraint = std::max(out.constraint, rep.max_constraint_residual);
        out.drm_fits += drm ? plan.B - rep.failures : 0;
        for (const auto& mm : rep.methods) {
          for (std::size_t i = 0; i < config.bootstrap_methods.size(); ++i) {
            if (method_name(config.bootstrap_methods[i]) == mm.method) by_method[i] = mm.mse;
          }
        }
      }
      out.boot = std::move(by_method);
      out.ok = true;
    } catch (const NumericError& e) {
      out.error = e.what();
    } catch (const DataError& e) {
      out.error = e.what();
    }
  });

  ExperimentResult res;
  for (Method m : config.methods) res.methods.push_back(method_name(m));
  res.alphas = config.alphas;
  for (std::size_t r = 0; r < R; ++r) {
    if (!outcomes[r].ok) {
      ++res.failures;
      res.log.push_back("repetition " + std::to_string(r) + " failed: " + outcomes[r].error);
    }
  }
  const int ok = static_cast<int>(R) - res.failures;
  if (static_cast<double>(res.failures) > 0.05 * static_cast<double>(R) || ok == 0) {
    throw ConvergenceError("experiment: " + std::to_string(res.failures) + " of " + std::to_string(R) +
                               " repetitions failed",
                           res.log);
  }
  res.repetitions = ok;
  for (const auto& o : outcomes) {
    if (o.ok) {
      res.area_ids = o.area_ids;
      break;
    }
  }
  const Index areas = static_cast<Index>(res.area_ids.size());
  const Index na = static_cast<Index>(config.alphas.size());
  res.amse.resize(static_cast<Index>(config.methods.size()), na);
  for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
    MatrixXd acc = MatrixXd::Zero(areas, na);
    for (const auto& o : outcomes) {
      if (o.ok) acc += o.sq[mi];
    }
    acc /= static_cast<double>(ok);
    res.amse.row(static_cast<Index>(mi)) = acc.colwise().mean();
    res.area_mse.push_back(std::move(acc));
  }
  for (const auto& o : outcomes) {
    if (!o.ok) continue;
    res.max_constraint_residual = std::max(res.max_constraint_residual, o.constraint);
    res.drm_fits += o.drm_fits;
  }
  if (boot) {
    res.ratios.resize(static_cast<Index>(config.bootstrap_methods.size()), na);
    for (std::size_t bi = 0; bi < config.bootstrap_methods.size(); ++bi) {
      const Method m = config.bootstrap_methods[bi];
      res.ratio_methods.push_back(method_name(m));
      MatrixXd acc = MatrixXd::Zero(areas, na);
      for (const auto& o : outcomes) {
        if (o.ok) acc += o.boot[bi];
      }
      acc /= static_cast<double>(ok);
      const MatrixXd& sim = res.area_mse[static_cast<std::size_t>(res.method_index(method_name(m)))];
      for (Index a = 0; a < na; ++a) {
        const VectorXd est = acc.col(a);
        const VectorXd s = sim.col(a);
        res.ratios(static_cast<Index>(bi), a) =
            trimmed_ratio(std::span<const double>(est.data(), static_cast<std::size_t>(areas)),
                          std::span<const double>(s.data(), static_cast<std::size_t>(areas)));
      }
      res.bootstrap_mse.push_back(std::move(acc));
    }
  }
  return res;
}

}  // namespace saqe
