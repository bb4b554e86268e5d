#include "saqe/bootstrap.hpp"

#include <algorithm>
#include <cmath>

#include "saqe/error.hpp"

namespace saqe {

BootstrapVariant parse_variant(std::string_view name) {
  if (name == "census-drm") return BootstrapVariant::census_drm;
  if (name == "census-ner") return BootstrapVariant::census_ner;
  if (name == "nocensus-drm") return BootstrapVariant::nocensus_drm;
  throw ConfigError("unknown bootstrap variant '" + std::string(name) +
                    "' (expected census-drm, census-ner, nocensus-drm)");
}

std::string variant_name(BootstrapVariant v) {
  switch (v) {
    case BootstrapVariant::census_drm: return "census-drm";
    case BootstrapVariant::census_ner: return "census-ner";
    case BootstrapVariant::nocensus_drm: return "nocensus-drm";
  }
  return "?";
}

bool variant_uses_census(BootstrapVariant v) { return v != BootstrapVariant::nocensus_drm; }
bool variant_uses_drm(BootstrapVariant v) { return v != BootstrapVariant::census_ner; }

std::vector<double> sample_gk(const GkCdf& gk, std::size_t count, std::mt19937_64& engine) {
  if (gk.support.empty()) throw DataError("cannot sample from an empty distribution");
  std::discrete_distribution<std::size_t> pick(gk.weights.begin(), gk.weights.end());
  std::vector<double> out(count);
  for (auto& v : out) v = gk.support[pick(engine)];
  return out;
}

std::vector<double> sample_gk(const GkCdf& gk, std::size_t count, const RngStream& rng) {
  auto eng = rng.engine();
  return sample_gk(gk, count, eng);
}

const MethodMse& MseReport::find(std::string_view method) const {
  for (const auto& m : methods) {
    if (m.method == method) return m;
  }
  throw ConfigError("no bootstrap MSE for method '" + std::string(method) + "'");
}

namespace {

struct ReplicateOutcome {
  bool ok = false;
  std::string error;
  std::vector<MatrixXd> diff;  // per method: prediction - truth
  double constraint = 0.0;
};

}  // namespace

MseReport bootstrap_mse(const BootstrapPlan& plan, const SurveySample& survey, const CensusFrame* census,
                        const NerFit& ner, const DrmFit* drm, const RngStream& root, Execution execution,
                        const ReplicatePredictor& custom) {
  if (plan.B < 2) throw ConfigError("bootstrap needs B >= 2");
  validate_alphas(plan.alphas);
  if (!custom && plan.methods.empty()) throw ConfigError("bootstrap needs at least one method");
  const bool use_census = variant_uses_census(plan.variant);
  const bool use_drm = variant_uses_drm(plan.variant);
  std::optional<CensusFrame> aligned;
  if (use_census) {
    if (!census) throw ConfigError("bootstrap variant " + variant_name(plan.variant) + " needs a census");
    if (!census->full() || !census->has_sample_link()) {
      throw ConfigError("census bootstrap variants need full census x with a sample link");
    }
    aligned = census->aligned_to(survey);
  } else {
    for (Method m : plan.methods) {
      if (needs_census(m)) throw ConfigError("method " + method_name(m) + " needs a census; use a census variant");
    }
  }
  if (use_drm && !drm) throw ConfigError("bootstrap variant " + variant_name(plan.variant) + " needs a DRM fit");
  if (ner.area_ids != survey.area_ids()) throw DataError("bootstrap: NER fit does not match the survey areas");
  if (drm && drm->area_ids != survey.area_ids()) throw DataError("bootstrap: DRM fit does not match the survey areas");

  const std::size_t areas = survey.num_areas();
  const Index nalpha = static_cast<Index>(plan.alphas.size());
  std::vector<GkCdf> gk;
  if (use_drm) {
    for (std::size_t k = 0; k < areas; ++k) gk.push_back(gk_cdf(*drm, k));
  }
  const double sd_v = std::sqrt(std::max(0.0, ner.sigma_v2));
  const double sd_e = std::sqrt(ner.sigma_e2);
  const CensusFrame* cen = aligned ? &*aligned : nullptr;
  const MatrixXd* warm = drm ? &drm->theta : nullptr;

  std::vector<ReplicateOutcome> outcomes(static_cast<std::size_t>(plan.B));
  for_each_index(outcomes.size(), execution, plan.pipeline.threads, [&](std::size_t bi) {
    ReplicateOutcome& out = outcomes[bi];
    const RngStream stream = root.child(bi);
    auto eng = stream.engine();
    std::normal_distribution<double> z(0.0, 1.0);
    BootstrapReplicate rep;
    rep.b = static_cast<int>(bi);
    rep.census = cen;
    rep.truth.resize(static_cast<Index>(areas), nalpha);
    std::vector<AreaSample> rs;
    rs.reserve(areas);
    for (std::size_t k = 0; k < areas; ++k) {
      const auto& a = survey.area(k);
      const MatrixXd& X = use_census ? *cen->area(k).x : a.x;
      VectorXd base = plan.variant == BootstrapVariant::census_ner ? VectorXd(X.rows()) : VectorXd(X * drm->beta_ls);
      if (plan.variant == BootstrapVariant::census_ner) {
        for (Index j = 0; j < X.rows(); ++j) base(j) = ner.linear_predictor(X.row(j).transpose());
      }
      const double nu = sd_v * z(eng);
      VectorXd y(X.rows());
      if (use_drm) {
        const auto e = sample_gk(gk[k], static_cast<std::size_t>(X.rows()), eng);
        for (Index j = 0; j < X.rows(); ++j) y(j) = base(j) + nu + e[static_cast<std::size_t>(j)];
      } else {
        for (Index j = 0; j < X.rows(); ++j) y(j) = base(j) + nu + sd_e * z(eng);
      }
      for (Index c = 0; c < nalpha; ++c) {
        rep.truth(static_cast<Index>(k), c) =
            empirical_quantile(std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
                               plan.alphas[static_cast<std::size_t>(c)]);
      }
      AreaSample s{a.area_id, MatrixXd(), VectorXd()};
      if (use_census) {
        const auto& link = *cen->area(k).sample_link;
        s.x.resize(a.size(), X.cols());
        s.y.resize(a.size());
        for (std::size_t j = 0; j < link.size(); ++j) {
          s.x.row(static_cast<Index>(j)) = X.row(link[j]);
          s.y(static_cast<Index>(j)) = y(link[j]);
        }
      } else {
        s.x = a.x;
        s.y = y;
      }
      rs.push_back(std::move(s));
      rep.population.push_back(std::move(y));
    }
    try {
      const SurveySample sample(std::move(rs));
      rep.sample = &sample;
      if (custom) {
        out.diff.push_back(custom(rep) - rep.truth);
      } else {
        const PipelineFits fits = fit_pipeline(plan.methods, sample, cen, plan.pipeline, warm);
        if (fits.drm) out.constraint = fits.drm->constraint_residual();
        for (Method m : plan.methods) {
          const QuantileTable t = predict_quantiles(m, fits, sample, cen, plan.alphas, plan.pipeline, stream.child(1));
          out.diff.push_back(t.values - rep.truth);
        }
      }
      out.ok = true;
    } catch (const NumericError& e) {
      out.error = e.what();
    } catch (const DataError& e) {
      out.error = e.what();
    }
  });

  MseReport report;
  report.variant = plan.variant;
  report.area_ids = survey.area_ids();
  report.alphas = plan.alphas;
  report.B = plan.B;
  report.max_constraint_residual = drm ? drm->constraint_residual() : 0.0;
  std::vector<std::string> names;
  if (custom) {
    names.push_back("custom");
  } else {
    for (Method m : plan.methods) names.push_back(method_name(m));
  }
  int ok = 0;
  for (std::size_t b = 0; b < outcomes.size(); ++b) {
    if (outcomes[b].ok) {
      ++ok;
      report.max_constraint_residual = std::max(report.max_constraint_residual, outcomes[b].constraint);
    } else {
      ++report.failures;
      report.warnings.push_back("replicate " + std::to_string(b) + " failed: " + outcomes[b].error);
    }
  }
  if (static_cast<double>(report.failures) > 0.05 * plan.B || ok < 2) {
    std::vector<std::string> log = report.warnings;
    throw ConvergenceError("bootstrap: " + std::to_string(report.failures) + " of " + std::to_string(plan.B) +
                               " replicates failed",
                           std::move(log));
  }
  if (report.failures > 0) {
    report.warnings.push_back(std::to_string(report.failures) + " failed replicates excluded");
  }
  for (std::size_t mi = 0; mi < names.size(); ++mi) {
    MatrixXd sum = MatrixXd::Zero(static_cast<Index>(areas), nalpha);
    MatrixXd sq = MatrixXd::Zero(static_cast<Index>(areas), nalpha);
    for (const auto& o : outcomes) {
      if (!o.ok) continue;
      sum += o.diff[mi];
      sq += o.diff[mi].cwiseAbs2();
    }
    MethodMse mm{names[mi], MatrixXd()};
    const double n = static_cast<double>(ok);
    if (plan.variant == BootstrapVariant::nocensus_drm) {
      // Sample variance of the differences, accumulated around the mean.
      const MatrixXd mean = sum / n;
      MatrixXd var = MatrixXd::Zero(static_cast<Index>(areas), nalpha);
      for (const auto& o : outcomes) {
        if (o.ok) var += (o.diff[mi] - mean).cwiseAbs2();
      }
      mm.mse = var / (n - 1.0);
    } else {
      mm.mse = sq / n;
    }
    report.methods.push_back(std::move(mm));
  }
  return report;
}

MseReport bootstrap_mse(const BootstrapPlan& plan, const SurveySample& survey, const CensusFrame* census,
                        const NerFit& ner, const DrmFit* drm, Execution execution, const ReplicatePredictor& custom) {
  return bootstrap_mse(plan, survey, census, ner, drm, RngStream(plan.seed), execution, custom);
}

}  // namespace saqe
