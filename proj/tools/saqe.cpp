// saqe: small-area quantile estimation from the command line.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "saqe/bootstrap.hpp"
#include "saqe/csv.hpp"
#include "saqe/drm.hpp"
#include "saqe/error.hpp"
#include "saqe/ner.hpp"
#include "saqe/pipeline.hpp"
#include "saqe/serialize.hpp"
#include "saqe/simbench.hpp"

#ifndef SAQE_VERSION
#define SAQE_VERSION "0.1.0"
#endif

namespace fs = std::filesystem;
using namespace saqe;

namespace {

struct Options {
  std::string survey, census, out;
  std::string area_col = "area", y_col = "y", x_cols, sampled_col = "sampled", type_col = "type", size_col = "N";
  std::string method = "el", methods = "dir,ner,el,mr,ebel";
  std::string alphas = "0.05,0.25,0.5,0.75,0.95";
  std::string basis = "signroot", baseline;
  std::string variant;
  std::string bootstrap_methods;
  std::string scenario = "i", binom_p = "z-clamped";
  std::string metadata;
  int threads = 0;
  int B = 100;
  int L = 100;
  int bootstrap_B = 0;
  int nk = 30, Nk = 1000, areas = 20, reps = 200;
  double beta_scale = 1.5;
  std::uint64_t seed = 1;
  bool no_intercept = false;
};

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    while (end && (*end == ' ' || *end == '\t')) ++end;
    if (!end || *end != '\0') throw DomainError("invalid alpha '" + item + "'");
    out.push_back(v);
  }
  validate_alphas(out);
  return out;
}

CsvSchema schema_of(const Options& o) {
  CsvSchema s;
  s.area_col = o.area_col;
  s.y_col = o.y_col;
  s.sampled_col = o.sampled_col;
  s.type_col = o.type_col;
  s.size_col = o.size_col;
  std::stringstream in(o.x_cols);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) s.x_cols.push_back(item);
  }
  return s;
}

PipelineOptions pipeline_of(const Options& o, const SurveySample* sample) {
  PipelineOptions p;
  p.basis = BasisQ::from_name(o.basis);
  p.mr_draws = o.L;
  p.threads = o.threads;
  p.ner.intercept = !o.no_intercept;
  if (!o.baseline.empty() && sample) p.baseline = sample->index_of(o.baseline);
  return p;
}

void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

struct Loaded {
  SurveySample sample;
  std::optional<CensusFrame> census;
  const CensusFrame* census_ptr() const { return census ? &*census : nullptr; }
};

Loaded load_inputs(const Options& o) {
  if (o.survey.empty()) throw ConfigError("--survey is required");
  const CsvSchema schema = schema_of(o);
  Loaded in{load_survey_csv(o.survey, schema), std::nullopt};
  if (!o.census.empty()) in.census = load_census_csv(o.census, schema).aligned_to(in.sample);
  return in;
}

void require_out(const Options& o) {
  if (o.out.empty()) throw ConfigError("--out is required");
}

std::ofstream open_file(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  return f;
}

nlohmann::json base_metadata(const std::vector<std::string>& argv, const std::string& command, const Options& o) {
  // --threads is left out: results do not depend on it.
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (argv[i] == "--threads") {
      ++i;
      continue;
    }
    if (argv[i].rfind("--threads=", 0) == 0) continue;
    kept.push_back(argv[i]);
  }
  return {{"argv", kept}, {"command", command}, {"seed", o.seed}, {"version", SAQE_VERSION}};
}

void write_metadata(const fs::path& path, const nlohmann::json& meta) { write_text(path, meta.dump(2) + "\n"); }

int cmd_fit_ner(const Options& o, nlohmann::json meta) {
  require_out(o);
  const Loaded in = load_inputs(o);
  NerOptions opt;
  opt.intercept = !o.no_intercept;
  const NerFit fit = fit_ner_mle(in.sample, in.census_ptr(), opt);
  warn(fit.warnings);
  write_text(o.out, to_json(fit).dump(2) + "\n");
  write_metadata(o.out + ".meta.json", meta);
  return 0;
}

int cmd_fit_drm(const Options& o, nlohmann::json meta) {
  require_out(o);
  const Loaded in = load_inputs(o);
  DrmOptions d;
  if (!o.baseline.empty()) d.baseline = in.sample.index_of(o.baseline);
  const DrmFit fit = fit_drm(in.sample, BasisQ::from_name(o.basis), d);
  write_text(o.out, to_json(fit).dump(2) + "\n");
  meta["basis"] = fit.basis.name();
  write_metadata(o.out + ".meta.json", meta);
  return 0;
}

int cmd_predict(const Options& o, nlohmann::json meta) {
  require_out(o);
  const std::vector<double> alphas = parse_alphas(o.alphas);
  const std::vector<Method> methods = parse_methods(o.method);
  const Loaded in = load_inputs(o);
  const PipelineOptions p = pipeline_of(o, &in.sample);
  const PipelineFits fits = fit_pipeline(methods, in.sample, in.census_ptr(), p);
  if (fits.ner) warn(fits.ner->warnings);
  std::vector<QuantileTable> tables;
  const RngStream root(o.seed);
  for (Method m : methods) tables.push_back(predict_quantiles(m, fits, in.sample, in.census_ptr(), alphas, p, root));
  auto f = open_file(o.out);
  write_quantiles_csv(f, tables);
  write_metadata(o.out + ".meta.json", meta);
  return 0;
}

int cmd_mse(const Options& o, nlohmann::json meta) {
  require_out(o);
  const std::vector<double> alphas = parse_alphas(o.alphas);
  const std::vector<Method> methods = parse_methods(o.method);
  const Loaded in = load_inputs(o);
  const PipelineOptions p = pipeline_of(o, &in.sample);
  // Group the methods by bootstrap world.
  std::vector<BootstrapVariant> variants;
  std::vector<std::vector<Method>> groups;
  for (Method m : methods) {
    BootstrapVariant v;
    if (!o.variant.empty()) {
      v = parse_variant(o.variant);
    } else {
      v = in.census ? experiment_variant(m) : BootstrapVariant::nocensus_drm;
    }
    auto it = std::find(variants.begin(), variants.end(), v);
    if (it == variants.end()) {
      variants.push_back(v);
      groups.push_back({m});
    } else {
      groups[static_cast<std::size_t>(it - variants.begin())].push_back(m);
    }
  }
  const NerFit ner = fit_ner_mle(in.sample, in.census_ptr(), p.ner);
  warn(ner.warnings);
  std::optional<DrmFit> drm;
  for (auto v : variants) {
    if (variant_uses_drm(v) && !drm) {
      DrmOptions d;
      d.baseline = p.baseline;
      drm = fit_drm(in.sample, p.basis, d);
    }
  }
  std::ostringstream csv;
  bool header = true;
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t g = 0; g < variants.size(); ++g) {
    BootstrapPlan plan;
    plan.B = o.B;
    plan.variant = variants[g];
    plan.alphas = alphas;
    plan.methods = groups[g];
    plan.seed = o.seed;
    plan.pipeline = p;
    const MseReport rep = bootstrap_mse(plan, in.sample, in.census_ptr(), ner, drm ? &*drm : nullptr,
                                        RngStream(o.seed).child(g), Execution::parallel);
    warn(rep.warnings);
    std::ostringstream part;
    write_mse_csv(part, rep);
    std::string text = part.str();
    if (!header) text = text.substr(text.find('\n') + 1);
    header = false;
    csv << text;
    runs.push_back({{"variant", variant_name(rep.variant)},
                    {"failures", rep.failures},
                    {"max_constraint_residual", rep.max_constraint_residual}});
  }
  write_text(o.out, csv.str());
  meta["bootstrap"] = runs;
  write_metadata(o.out + ".meta.json", meta);
  return 0;
}

int run_experiment_cmd(const Options& o, nlohmann::json meta, const ScenarioSpec& spec, const PopulationSource& src) {
  require_out(o);
  ExperimentConfig cfg;
  cfg.spec = spec;
  cfg.methods = parse_methods(o.methods);
  cfg.alphas = parse_alphas(o.alphas);
  cfg.bootstrap_B = o.bootstrap_B;
  if (o.bootstrap_B > 0) {
    if (o.bootstrap_methods.empty()) {
      for (Method m : cfg.methods) {
        if (m == Method::dir || m == Method::el || m == Method::mr || m == Method::ebel1 || m == Method::ebel2) {
          cfg.bootstrap_methods.push_back(m);
        }
      }
    } else {
      cfg.bootstrap_methods = parse_methods(o.bootstrap_methods);
    }
  }
  cfg.pipeline = pipeline_of(o, nullptr);
  if (!o.baseline.empty()) cfg.pipeline.baseline = static_cast<std::size_t>(std::stoul(o.baseline));
  const ExperimentResult r = run_experiment(cfg, src);
  warn(r.log);
  write_experiment(o.out, r);
  meta["spec"] = to_json(spec);
  meta["methods"] = r.methods;
  meta["alphas"] = r.alphas;
  meta["bootstrap_B"] = o.bootstrap_B;
  meta["repetitions_used"] = r.repetitions;
  meta["failed_repetitions"] = r.failures;
  meta["max_constraint_residual"] = r.max_constraint_residual;
  write_metadata(fs::path(o.out) / "run-metadata.json", meta);
  return 0;
}

int cmd_simulate(const Options& o, nlohmann::json meta) {
  ScenarioSpec spec;
  spec.scenario = parse_scenario(o.scenario);
  spec.beta_scale = o.beta_scale;
  spec.areas = o.areas;
  spec.population_size = o.Nk;
  spec.sample_size = o.nk;
  spec.repetitions = o.reps;
  spec.seed = o.seed;
  spec.binom_p = parse_binom_p(o.binom_p);
  if (spec.binom_p == BinomP::z_clamped) meta["binom_p_note"] = "p = clamp(0.6 + 0.1 z, 0.01, 0.99) with z the Beta draw";
  return run_experiment_cmd(o, std::move(meta), spec, {});
}

int cmd_shadow(const Options& o, nlohmann::json meta) {
  if (o.survey.empty()) throw ConfigError("--survey is required");
  const SurveySample real = load_survey_csv(o.survey, schema_of(o));
  NerOptions opt;
  opt.intercept = !o.no_intercept;
  auto shadow = std::make_shared<ShadowPopulation>(real, opt);
  ScenarioSpec spec;
  spec.areas = static_cast<int>(real.num_areas());
  spec.sample_size = o.nk;
  spec.population_size = static_cast<int>(real.area(0).size());
  for (const auto& a : real.areas()) {
    spec.population_size = std::min(spec.population_size, static_cast<int>(a.size()));
  }
  spec.repetitions = o.reps;
  spec.seed = o.seed;
  meta["population"] = o.survey;
  return run_experiment_cmd(o, std::move(meta), spec, [shadow](const RngStream& r) { return shadow->draw(r); });
}

int run(const std::vector<std::string>& args);

int cmd_replay(const Options& o) {
  if (o.metadata.empty()) throw ConfigError("--metadata is required");
  std::ifstream f(o.metadata);
  if (!f) throw ConfigError("cannot read '" + o.metadata + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid metadata: ") + e.what());
  }
  if (!meta.contains("argv")) throw ConfigError("metadata has no argv record");
  std::vector<std::string> args = meta["argv"].get<std::vector<std::string>>();
  if (o.threads > 0) {
    args.push_back("--threads");
    args.push_back(std::to_string(o.threads));
  }
  return run(args);
}

void add_schema(CLI::App* c, Options& o) {
  c->add_option("--area-col", o.area_col, "Area id column")->capture_default_str();
  c->add_option("--y-col", o.y_col, "Response column")->capture_default_str();
  c->add_option("--x-cols", o.x_cols, "Comma list of covariate columns (default: all other columns)");
  c->add_option("--sampled-col", o.sampled_col, "Census 0/1 sampled-flag column")->capture_default_str();
  c->add_option("--type-col", o.type_col, "Census row-type column (value 'mean' for area means)")->capture_default_str();
  c->add_option("--size-col", o.size_col, "Census N_k column for mean rows")->capture_default_str();
}

void add_common(CLI::App* c, Options& o) {
  c->add_option("--threads", o.threads, "Worker threads (0 = all cores)")->capture_default_str();
  c->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  c->add_flag("--no-intercept", o.no_intercept, "Fit the NER model without an intercept");
}

void add_model(CLI::App* c, Options& o) {
  c->add_option("--basis", o.basis, "DRM basis: signroot, linear, quadratic, sqrtabs")->capture_default_str();
  c->add_option("--L", o.L, "Monte-Carlo draws for MR")->capture_default_str();
  c->add_option("--alpha,--alphas", o.alphas, "Comma list of quantile levels in (0, 1)")->capture_default_str();
}

int run(const std::vector<std::string>& args) {
  Options o;
  CLI::App app{"saqe: small-area quantile estimation"};
  app.set_version_flag("--version", SAQE_VERSION);
  app.set_config("--config", "", "INI config; keys of a subcommand go under its [section]");
  app.config_formatter(std::make_shared<CLI::ConfigINI>());
  app.require_subcommand(1);

  auto* fner = app.add_subcommand("fit-ner", "Maximum-likelihood NER fit written as JSON");
  auto* fdrm = app.add_subcommand("fit-drm", "Density ratio model fit written as JSON");
  auto* pred = app.add_subcommand("predict", "Quantile predictions as CSV");
  auto* mse = app.add_subcommand("mse", "Bootstrap MSE of quantile predictions as CSV");
  auto* sim = app.add_subcommand("simulate", "Simulation experiment on generated populations");
  auto* shd = app.add_subcommand("shadow", "Simulation experiment on residual-permutation populations");
  auto* rep = app.add_subcommand("replay", "Re-run a command from its metadata record");

  for (auto* c : {fner, fdrm, pred, mse, shd}) {
    c->add_option("--survey", o.survey, "Survey CSV");
    add_schema(c, o);
  }
  for (auto* c : {fner, pred, mse}) c->add_option("--census", o.census, "Census CSV (full rows or area means)");
  for (auto* c : {fner, fdrm, pred, mse, sim, shd}) {
    add_common(c, o);
    c->add_option("--out", o.out, "Output file (or directory for simulate/shadow)");
  }
  for (auto* c : {fdrm, pred, mse, sim, shd}) {
    c->add_option("--baseline", o.baseline, "DRM baseline area (id; index for simulate/shadow)");
  }
  fdrm->add_option("--basis", o.basis, "DRM basis: signroot, linear, quadratic, sqrtabs")->capture_default_str();
  for (auto* c : {pred, mse, sim, shd}) add_model(c, o);
  for (auto* c : {pred, mse}) {
    c->add_option("--method,--methods", o.method, "Comma list: dir, ner, el, mq, mr, eb1, eb2, ebel1, ebel2")
        ->capture_default_str();
  }
  mse->add_option("--B", o.B, "Bootstrap replicates")->capture_default_str();
  mse->add_option("--variant", o.variant, "census-drm, census-ner or nocensus-drm (default: by method)");
  for (auto* c : {sim, shd}) {
    c->add_option("--methods,--method", o.methods, "Comma list of methods")->capture_default_str();
    c->add_option("--reps", o.reps, "Repetitions")->capture_default_str();
    c->add_option("--nk", o.nk, "Sample size per area")->capture_default_str();
    c->add_option("--bootstrap-B", o.bootstrap_B, "Bootstrap replicates per repetition (0 = none)")
        ->capture_default_str();
    c->add_option("--bootstrap-methods", o.bootstrap_methods, "Methods with bootstrap MSE ratios");
  }
  sim->add_option("--scenario", o.scenario, "Error scenario: i, ii, iii, iv")->capture_default_str();
  sim->add_option("--beta-scale", o.beta_scale, "Multiplier on beta0")->capture_default_str();
  sim->add_option("--Nk", o.Nk, "Population size per area")->capture_default_str();
  sim->add_option("--areas", o.areas, "Number of areas")->capture_default_str();
  sim->add_option("--binom-p", o.binom_p, "z-clamped or raw-clamped")->capture_default_str();
  rep->add_option("--metadata", o.metadata, "Metadata JSON written by an earlier run")->required();
  rep->add_option("--threads", o.threads, "Worker threads (0 = all cores)");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (o.threads < 0) throw ConfigError("--threads must be >= 0");
  const std::string command = app.get_subcommands().front()->get_name();
  const nlohmann::json meta = base_metadata(args, command, o);
  if (command == "fit-ner") return cmd_fit_ner(o, meta);
  if (command == "fit-drm") return cmd_fit_drm(o, meta);
  if (command == "predict") return cmd_predict(o, meta);
  if (command == "mse") return cmd_mse(o, meta);
  if (command == "simulate") return cmd_simulate(o, meta);
  if (command == "shadow") return cmd_shadow(o, meta);
  return cmd_replay(o);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  try {
    return run(args);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    for (const auto& line : e.trace()) std::cerr << "  " << line << '\n';
    return e.exit_code();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
