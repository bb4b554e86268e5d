#include "saqe/csv.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "saqe/error.hpp"

namespace saqe {
namespace {

std::vector<std::string> split_record(const std::string& line, std::size_t line_no) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw DataError("line " + std::to_string(line_no) + ": unterminated quote");
  cells.push_back(std::move(cur));
  return cells;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_number(const std::string& cell, std::size_t line_no, const std::string& col) {
  const std::string t = trim(cell);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw DataError("line " + std::to_string(line_no) + ", column '" + col + "': non-numeric value '" + cell + "'");
  }
  return v;
}

std::vector<std::string> resolve_x_cols(const CsvTable& t, const CsvSchema& s, const std::vector<std::string>& reserved) {
  if (!s.x_cols.empty()) {
    for (const auto& c : s.x_cols) (void)t.column(c);
    return s.x_cols;
  }
  std::vector<std::string> cols;
  for (const auto& h : t.header) {
    if (std::find(reserved.begin(), reserved.end(), h) == reserved.end()) cols.push_back(h);
  }
  if (cols.empty()) throw DataError("no covariate columns found");
  return cols;
}

std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw DataError("missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

bool CsvTable::has_column(const std::string& name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto cells = split_record(line, line_no);
    if (t.header.empty()) {
      for (auto& c : cells) c = trim(c);
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                      " cells, found " + std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw DataError("CSV input has no header row");
  return t;
}

CsvTable read_csv(const std::filesystem::path& path) {
  auto in = open_or_throw(path);
  return read_csv(in);
}

SurveySample parse_survey_csv(std::istream& in, const CsvSchema& schema) {
  const CsvTable t = read_csv(in);
  const std::size_t area_c = t.column(schema.area_col);
  const std::size_t y_c = t.column(schema.y_col);
  const auto x_names = resolve_x_cols(t, schema, {schema.area_col, schema.y_col});
  std::vector<std::size_t> x_c;
  for (const auto& n : x_names) x_c.push_back(t.column(n));

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> rows_by_area;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string id = trim(t.rows[r][area_c]);
    if (id.empty()) throw DataError("line " + std::to_string(t.line_numbers[r]) + ": empty area id");
    auto [it, inserted] = rows_by_area.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(r);
  }
  std::vector<AreaSample> areas;
  for (const auto& id : order) {
    const auto& rows = rows_by_area[id];
    if (rows.size() < 2) {
      throw DataError("area '" + id + "' has " + std::to_string(rows.size()) + " row (line " +
                      std::to_string(t.line_numbers[rows.front()]) + "); at least 2 are required");
    }
    AreaSample a;
    a.area_id = id;
    a.x.resize(static_cast<Index>(rows.size()), static_cast<Index>(x_c.size()));
    a.y.resize(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& row = t.rows[rows[i]];
      const std::size_t ln = t.line_numbers[rows[i]];
      a.y(static_cast<Index>(i)) = parse_number(row[y_c], ln, schema.y_col);
      for (std::size_t c = 0; c < x_c.size(); ++c) {
        a.x(static_cast<Index>(i), static_cast<Index>(c)) = parse_number(row[x_c[c]], ln, x_names[c]);
      }
    }
    areas.push_back(std::move(a));
  }
  return SurveySample(std::move(areas));
}

SurveySample load_survey_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  auto in = open_or_throw(path);
  return parse_survey_csv(in, schema);
}

CensusFrame parse_census_csv(std::istream& in, const CsvSchema& schema) {
  const CsvTable t = read_csv(in);
  const std::size_t area_c = t.column(schema.area_col);
  const bool has_type = t.has_column(schema.type_col);
  const bool has_sampled = t.has_column(schema.sampled_col);
  const bool has_size = t.has_column(schema.size_col);
  const auto x_names =
      resolve_x_cols(t, schema, {schema.area_col, schema.y_col, schema.sampled_col, schema.type_col, schema.size_col});
  std::vector<std::size_t> x_c;
  for (const auto& n : x_names) x_c.push_back(t.column(n));

  bool means_only = false;
  if (has_type) {
    const std::size_t tc = t.column(schema.type_col);
    std::size_t n_mean = 0;
    for (const auto& row : t.rows) n_mean += trim(row[tc]) == "mean";
    if (n_mean != 0 && n_mean != t.rows.size()) {
      throw DataError("census mixes '" + schema.type_col + " = mean' rows with unit rows");
    }
    means_only = n_mean != 0 && !t.rows.empty();
  }

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> rows_by_area;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string id = trim(t.rows[r][area_c]);
    if (id.empty()) throw DataError("line " + std::to_string(t.line_numbers[r]) + ": empty area id");
    auto [it, inserted] = rows_by_area.try_emplace(id);
    if (inserted) order.push_back(id);
    it->second.push_back(r);
  }

  std::vector<CensusArea> areas;
  for (const auto& id : order) {
    const auto& rows = rows_by_area[id];
    CensusArea a;
    a.area_id = id;
    if (means_only) {
      if (!has_size) throw DataError("means-only census requires column '" + schema.size_col + "'");
      if (rows.size() != 1) throw DataError("means-only census has " + std::to_string(rows.size()) + " rows for area '" + id + "'");
      const auto& row = t.rows[rows.front()];
      const std::size_t ln = t.line_numbers[rows.front()];
      a.mean.resize(static_cast<Index>(x_c.size()));
      for (std::size_t c = 0; c < x_c.size(); ++c) a.mean(static_cast<Index>(c)) = parse_number(row[x_c[c]], ln, x_names[c]);
      const double n = parse_number(row[t.column(schema.size_col)], ln, schema.size_col);
      if (n < 1 || n != std::floor(n)) throw DataError("line " + std::to_string(ln) + ": invalid population size");
      a.population_size = static_cast<Index>(n);
    } else {
      MatrixXd x(static_cast<Index>(rows.size()), static_cast<Index>(x_c.size()));
      std::vector<Index> link;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = t.rows[rows[i]];
        const std::size_t ln = t.line_numbers[rows[i]];
        for (std::size_t c = 0; c < x_c.size(); ++c) {
          x(static_cast<Index>(i), static_cast<Index>(c)) = parse_number(row[x_c[c]], ln, x_names[c]);
        }
        if (has_sampled) {
          const double f = parse_number(row[t.column(schema.sampled_col)], ln, schema.sampled_col);
          if (f != 0.0 && f != 1.0) throw DataError("line " + std::to_string(ln) + ": sampled flag must be 0 or 1");
          if (f == 1.0) link.push_back(static_cast<Index>(i));
        }
      }
      a.population_size = x.rows();
      a.mean = x.colwise().mean().transpose();
      a.x = std::move(x);
      if (has_sampled) a.sample_link = std::move(link);
    }
    areas.push_back(std::move(a));
  }
  return CensusFrame(std::move(areas));
}

CensusFrame load_census_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  auto in = open_or_throw(path);
  return parse_census_csv(in, schema);
}

std::string format_double(double v) {
  // Shortest text that reads back to the same double.
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_survey_csv(std::ostream& out, const SurveySample& sample, const CsvSchema& schema) {
  std::vector<std::string> x_names = schema.x_cols;
  if (x_names.empty()) {
    for (Index c = 0; c < sample.dim(); ++c) x_names.push_back("x" + std::to_string(c + 1));
  }
  out << schema.area_col << ',' << schema.y_col;
  for (const auto& n : x_names) out << ',' << n;
  out << '\n';
  for (const auto& a : sample.areas()) {
    for (Index j = 0; j < a.size(); ++j) {
      out << a.area_id << ',' << format_double(a.y(j));
      for (Index c = 0; c < a.x.cols(); ++c) out << ',' << format_double(a.x(j, c));
      out << '\n';
    }
  }
}

}  // namespace saqe
