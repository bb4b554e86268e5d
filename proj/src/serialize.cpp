#include "saqe/serialize.hpp"

#include <fstream>
#include <ostream>

#include "saqe/csv.hpp"
#include "saqe/error.hpp"

namespace saqe {

namespace {

nlohmann::json vec(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json mat(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vec(m.row(i).transpose()));
  return rows;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  return f;
}

}  // namespace

nlohmann::json to_json(const NerFit& fit) {
  nlohmann::json j;
  j["model"] = "ner";
  j["intercept"] = fit.intercept;
  j["beta"] = vec(fit.beta);
  j["sigma_v2"] = fit.sigma_v2;
  j["sigma_e2"] = fit.sigma_e2;
  j["phi"] = fit.phi;
  j["loglik"] = fit.loglik;
  j["profile_gradient"] = fit.profile_gradient;
  j["iterations"] = fit.iterations;
  j["sigma_v2_at_boundary"] = fit.sigma_v2_at_boundary;
  j["sigma_e2_degenerate"] = fit.sigma_e2_degenerate;
  j["xbar_from_census"] = fit.xbar_from_census;
  nlohmann::json areas = nlohmann::json::array();
  for (std::size_t k = 0; k < fit.area_ids.size(); ++k) {
    areas.push_back({{"area_id", fit.area_ids[k]},
                     {"n", fit.n[k]},
                     {"gamma", fit.gamma[k]},
                     {"nu", fit.nu[k]},
                     {"eblup_mean", fit.eblup_mean[k]},
                     {"ybar", fit.ybar[k]},
                     {"xbar_pop", vec(fit.xbar_pop[k])}});
  }
  j["areas"] = areas;
  j["warnings"] = fit.warnings;
  return j;
}

nlohmann::json to_json(const DrmFit& fit) {
  nlohmann::json j;
  j["model"] = "drm";
  j["basis"] = fit.basis.name();
  j["baseline"] = fit.baseline < fit.area_ids.size() ? fit.area_ids[fit.baseline] : std::string();
  j["beta_ls"] = vec(fit.beta_ls);
  j["area_ids"] = fit.area_ids;
  j["rho"] = fit.rho;
  j["nu_hat"] = fit.nu_hat;
  j["theta"] = mat(fit.theta);
  j["loglik_dual"] = fit.loglik_dual;
  j["grad_max"] = fit.grad_max;
  j["constraint_residual"] = fit.constraint_residual();
  nlohmann::json res = nlohmann::json::array();
  for (const auto& r : fit.residuals) res.push_back(vec(r));
  j["residuals"] = res;
  j["p_base"] = vec(fit.p_base);
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& t : fit.trace) {
    trace.push_back({{"iteration", t.iteration}, {"objective", t.objective}, {"grad_max", t.grad_max}, {"step", t.step}});
  }
  j["trace"] = trace;
  return j;
}

nlohmann::json to_json(const ScenarioSpec& spec) {
  return {{"scenario", scenario_name(spec.scenario)},
          {"beta_scale", spec.beta_scale},
          {"areas", spec.areas},
          {"population_size", spec.population_size},
          {"sample_size", spec.sample_size},
          {"repetitions", spec.repetitions},
          {"seed", spec.seed},
          {"binom_p", binom_p_name(spec.binom_p)}};
}

void write_quantiles_csv(std::ostream& out, const std::vector<QuantileTable>& tables) {
  out << "area_id,alpha,quantile,method\n";
  for (const auto& t : tables) {
    for (std::size_t k = 0; k < t.area_ids.size(); ++k) {
      for (std::size_t a = 0; a < t.alphas.size(); ++a) {
        out << t.area_ids[k] << ',' << format_double(t.alphas[a]) << ','
            << format_double(t.values(static_cast<Index>(k), static_cast<Index>(a))) << ',' << t.method << '\n';
      }
    }
  }
}

void write_mse_csv(std::ostream& out, const MseReport& report) {
  out << "method,area_id,alpha,mse,failures\n";
  for (const auto& m : report.methods) {
    for (std::size_t k = 0; k < report.area_ids.size(); ++k) {
      for (std::size_t a = 0; a < report.alphas.size(); ++a) {
        out << m.method << ',' << report.area_ids[k] << ',' << format_double(report.alphas[a]) << ','
            << format_double(m.mse(static_cast<Index>(k), static_cast<Index>(a))) << ',' << report.failures << '\n';
      }
    }
  }
}

void write_experiment(const std::filesystem::path& dir, const ExperimentResult& r) {
  std::filesystem::create_directories(dir);
  {
    auto f = open_out(dir / "amse.csv");
    f << "method,alpha,amse\n";
    for (std::size_t m = 0; m < r.methods.size(); ++m) {
      for (std::size_t a = 0; a < r.alphas.size(); ++a) {
        f << r.methods[m] << ',' << format_double(r.alphas[a]) << ','
          << format_double(r.amse(static_cast<Index>(m), static_cast<Index>(a))) << '\n';
      }
    }
  }
  {
    auto f = open_out(dir / "area_mse.csv");
    f << "method,area_id,alpha,mse\n";
    for (std::size_t m = 0; m < r.methods.size(); ++m) {
      for (std::size_t k = 0; k < r.area_ids.size(); ++k) {
        for (std::size_t a = 0; a < r.alphas.size(); ++a) {
          f << r.methods[m] << ',' << r.area_ids[k] << ',' << format_double(r.alphas[a]) << ','
            << format_double(r.area_mse[m](static_cast<Index>(k), static_cast<Index>(a))) << '\n';
        }
      }
    }
  }
  {
    auto f = open_out(dir / "ratios.csv");
    f << "method,alpha,ratio\n";
    for (std::size_t m = 0; m < r.ratio_methods.size(); ++m) {
      for (std::size_t a = 0; a < r.alphas.size(); ++a) {
        f << r.ratio_methods[m] << ',' << format_double(r.alphas[a]) << ','
          << format_double(r.ratios(static_cast<Index>(m), static_cast<Index>(a))) << '\n';
      }
    }
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto f = open_out(path);
  f << text;
}

}  // namespace saqe
