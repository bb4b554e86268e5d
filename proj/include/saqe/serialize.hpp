#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "saqe/bootstrap.hpp"
#include "saqe/cdf.hpp"
#include "saqe/drm.hpp"
#include "saqe/ner.hpp"
#include "saqe/simbench.hpp"

namespace saqe {

nlohmann::json to_json(const NerFit& fit);
// Includes theta, fitted weights, residuals and the Newton trace.
nlohmann::json to_json(const DrmFit& fit);
nlohmann::json to_json(const ScenarioSpec& spec);

// Columns area_id, alpha, quantile, method.
void write_quantiles_csv(std::ostream& out, const std::vector<QuantileTable>& tables);
// Columns method, area_id, alpha, mse, failures.
void write_mse_csv(std::ostream& out, const MseReport& report);

// amse.csv (method, alpha, amse), area_mse.csv (method, area_id, alpha, mse)
// and ratios.csv (method, alpha, ratio) inside dir.
void write_experiment(const std::filesystem::path& dir, const ExperimentResult& result);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace saqe
