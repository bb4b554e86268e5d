#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "saqe/data.hpp"

namespace saqe {

// Column mapping for survey and census files. An empty x_cols means "every
// column not claimed by another role", in header order.
struct CsvSchema {
  std::string area_col = "area";
  std::string y_col = "y";
  std::vector<std::string> x_cols;
  std::string sampled_col = "sampled";
  std::string type_col = "type";
  std::string size_col = "N";
};

// Minimal RFC-4180 table: header plus rows of raw cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::size_t column(const std::string& name) const;  // throws DataError
  bool has_column(const std::string& name) const;
};

CsvTable read_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

// Areas appear in first-appearance order, rows keep file order within an area.
SurveySample load_survey_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
SurveySample parse_survey_csv(std::istream& in, const CsvSchema& schema = {});

// Full mode: one row per unit, optional 0/1 sampled column filling sample_link.
// Means-only mode: every row has type == "mean" and carries N_k in size_col.
CensusFrame load_census_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
CensusFrame parse_census_csv(std::istream& in, const CsvSchema& schema = {});

void write_survey_csv(std::ostream& out, const SurveySample& sample, const CsvSchema& schema = {});

// 17 significant digits, round-trip exact.
std::string format_double(double v);

}  // namespace saqe
