#include "saqe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "saqe/error.hpp"

namespace saqe {

Method parse_method(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "dir") return Method::dir;
  if (s == "ner") return Method::ner;
  if (s == "el") return Method::el;
  if (s == "mq") return Method::mq;
  if (s == "mr") return Method::mr;
  if (s == "eb1") return Method::eb1;
  if (s == "eb2" || s == "eb") return Method::eb2;
  if (s == "ebel1") return Method::ebel1;
  if (s == "ebel2" || s == "ebel") return Method::ebel2;
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

std::vector<Method> parse_methods(std::string_view comma_list) {
  std::vector<Method> out;
  std::string item;
  std::istringstream in{std::string(comma_list)};
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    const Method m = parse_method(item);
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  if (out.empty()) throw ConfigError("empty method list");
  return out;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::dir: return "dir";
    case Method::ner: return "ner";
    case Method::el: return "el";
    case Method::mq: return "mq";
    case Method::mr: return "mr";
    case Method::eb1: return "eb1";
    case Method::eb2: return "eb2";
    case Method::ebel1: return "ebel1";
    case Method::ebel2: return "ebel2";
  }
  return "?";
}

bool needs_census(Method m) {
  return m == Method::mq || m == Method::mr || m == Method::eb1 || m == Method::eb2 || m == Method::ebel1 ||
         m == Method::ebel2;
}

bool needs_sample_link(Method m) {
  return m == Method::mq || m == Method::mr || m == Method::eb1 || m == Method::ebel1;
}

bool needs_ner(Method m) {
  return m == Method::ner || m == Method::el || m == Method::mr || m == Method::eb1 || m == Method::eb2;
}

bool needs_drm(Method m) { return m == Method::el || m == Method::ebel1 || m == Method::ebel2; }

void validate_alphas(const std::vector<double>& alphas) {
  if (alphas.empty()) throw DomainError("empty alpha list");
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw DomainError("alpha must lie in (0, 1), got " + std::to_string(a));
  }
}

PipelineFits fit_pipeline(const std::vector<Method>& methods, const SurveySample& sample, const CensusFrame* census,
                          const PipelineOptions& options, const MatrixXd* theta_start) {
  bool ner = false, drm = false, mq = false;
  for (Method m : methods) {
    if (needs_census(m)) {
      if (!census) throw ConfigError("method " + method_name(m) + " needs a census");
      if (!census->full()) throw ConfigError("method " + method_name(m) + " needs full census x");
      if (needs_sample_link(m) && !census->has_sample_link()) {
        throw ConfigError("method " + method_name(m) + " needs a census sample link");
      }
    }
    ner = ner || needs_ner(m);
    drm = drm || needs_drm(m);
    mq = mq || m == Method::mq;
  }
  PipelineFits fits;
  if (ner) fits.ner = fit_ner_mle(sample, census, options.ner);
  if (drm) {
    DrmOptions d;
    d.baseline = options.baseline;
    if (theta_start) d.theta_start = *theta_start;
    fits.drm = fit_drm(sample, options.basis, d);
  }
  if (mq) {
    MqOptions o = options.mq;
    o.execution = options.execution;
    o.threads = options.threads;
    fits.mq = fit_mq(sample, o);
  }
  return fits;
}

CdfEstimate predict_cdf(Method method, const PipelineFits& fits, const SurveySample& sample, const CensusFrame* census,
                        std::size_t area, const PipelineOptions& options, const RngStream& mr_rng) {
  auto need_census = [&]() -> const CensusFrame& {
    if (!census) throw ConfigError("method " + method_name(method) + " needs a census");
    return *census;
  };
  auto need_ner = [&]() -> const NerFit& {
    if (!fits.ner) throw ConfigError("method " + method_name(method) + " needs a NER fit");
    return *fits.ner;
  };
  auto need_drm = [&]() -> const DrmFit& {
    if (!fits.drm) throw ConfigError("method " + method_name(method) + " needs a DRM fit");
    return *fits.drm;
  };
  switch (method) {
    case Method::dir: return cdf_direct(sample, area);
    case Method::ner: return cdf_ner(need_ner(), sample, area);
    case Method::el: return cdf_el(need_drm(), need_ner(), sample, area);
    case Method::mq:
      if (!fits.mq) throw ConfigError("method mq needs an M-quantile fit");
      return cdf_mq(*fits.mq, sample, need_census(), area);
    case Method::mr:
      return cdf_mr(need_ner(), sample, need_census(), area, options.mr_draws, mr_rng, options.execution,
                    options.threads);
    case Method::eb1: return cdf_eb(need_ner(), sample, need_census(), area, EbVariant::eb1);
    case Method::eb2: return cdf_eb(need_ner(), sample, need_census(), area, EbVariant::eb2);
    case Method::ebel1: return cdf_ebel(need_drm(), sample, need_census(), area, EbelVariant::ebel1);
    case Method::ebel2: return cdf_ebel(need_drm(), sample, need_census(), area, EbelVariant::ebel2);
  }
  throw ConfigError("unknown method");
}

QuantileTable predict_quantiles(Method method, const PipelineFits& fits, const SurveySample& sample,
                                const CensusFrame* census, const std::vector<double>& alphas,
                                const PipelineOptions& options, const RngStream& mr_rng) {
  validate_alphas(alphas);
  QuantileTable t;
  t.method = method_name(method);
  t.area_ids = sample.area_ids();
  t.alphas = alphas;
  t.values.resize(static_cast<Index>(sample.num_areas()), static_cast<Index>(alphas.size()));
  for (std::size_t k = 0; k < sample.num_areas(); ++k) {
    if (method == Method::dir) {
      for (std::size_t a = 0; a < alphas.size(); ++a) {
        t.values(static_cast<Index>(k), static_cast<Index>(a)) = quantile_direct(sample, k, alphas[a]);
      }
      continue;
    }
    const CdfEstimate F = predict_cdf(method, fits, sample, census, k, options, mr_rng.child(k));
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      t.values(static_cast<Index>(k), static_cast<Index>(a)) = invert(F, alphas[a]);
    }
  }
  return t;
}

}  // namespace saqe
