#pragma once

// Comma-separated input for grouped designs, and the matching writer.
//
// Numbers are written with std::to_chars shortest round-trip form, so a
// design written and read back is bit-identical.

#include "wmqre/design.hpp"
#include "wmqre/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace wmqre {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line;  // 1-based source line of each row
};

namespace detail {

// Splits one record; handles double-quoted fields with "" escapes. Quoted
// fields may not span lines.
inline std::vector<std::string> split_csv_record(std::string_view s, std::size_t line_no) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char ch = s[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < s.size() && s[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"' && field.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      field.push_back(ch);
    }
  }
  if (quoted) throw InputError("line " + std::to_string(line_no) + ": unterminated quoted field");
  out.push_back(std::move(field));
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

inline bool is_missing(std::string_view s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == ".";
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos && trim(s) == s) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  return out + '"';
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_record(line, line_no);
    for (auto& f : fields) f = detail::trim(f);
    if (!have_header) {
      t.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw InputError("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                       " fields, found " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.line.push_back(line_no);
  }
  if (!have_header) throw InputError("input has no header row");
  return t;
}

inline CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read_csv(in);
}

struct DatasetSchema {
  std::string response;
  std::vector<std::string> covariates;
  std::string cluster;
  std::optional<std::string> unit_weight;
  std::optional<std::string> cluster_weight;
  bool intercept = true;
};

struct LoadedData {
  GroupedDesign design;
  std::vector<std::string> coefficient_names;
  std::size_t rows_read = 0;
  std::size_t rows_dropped = 0;
};

// Rows with a missing value in any mapped column are dropped and counted.
// Clusters keep the order of first appearance.
inline LoadedData load_design(const CsvTable& table, const DatasetSchema& schema) {
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (!col.emplace(table.header[i], i).second) {
      throw InputError("duplicate column '" + table.header[i] + "' in header");
    }
  }
  const auto need = [&](const std::string& name, const char* role) {
    const auto it = col.find(name);
    if (it == col.end()) throw InputError("missing column '" + name + "' (" + role + ") in header");
    return it->second;
  };
  if (schema.response.empty() || schema.cluster.empty()) {
    throw InputError("response and cluster columns must be named");
  }
  const std::size_t y_col = need(schema.response, "response");
  const std::size_t g_col = need(schema.cluster, "cluster id");
  std::vector<std::size_t> x_cols;
  for (const auto& name : schema.covariates) x_cols.push_back(need(name, "covariate"));
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  const std::size_t w1_col = schema.unit_weight ? need(*schema.unit_weight, "unit weight") : none;
  const std::size_t w2_col = schema.cluster_weight ? need(*schema.cluster_weight, "cluster weight") : none;

  LoadedData out;
  if (schema.intercept) out.coefficient_names.push_back("(Intercept)");
  for (const auto& name : schema.covariates) out.coefficient_names.push_back(name);
  const std::size_t p = out.coefficient_names.size();
  if (p == 0) throw InputError("model has no fixed effects");

  struct Acc {
    std::vector<double> y, x, w1;
    double w2 = 1.0;
    std::size_t w2_line = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> acc;

  out.rows_read = table.rows.size();
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t line = table.line[r];
    const auto value = [&](std::size_t c, const std::string& name) -> std::optional<double> {
      if (detail::is_missing(row[c])) return std::nullopt;
      const auto v = detail::parse_double(row[c]);
      if (!v || !std::isfinite(*v)) {
        throw InputError("line " + std::to_string(line) + ": column '" + name + "' has non-numeric value '" +
                         row[c] + "'");
      }
      return v;
    };
    const std::string& gid = row[g_col];
    if (detail::is_missing(gid)) {
      ++out.rows_dropped;
      continue;
    }
    if (acc.find(gid) == acc.end()) {
      order.push_back(gid);
      acc[gid];
    }
    Acc& a = acc[gid];

    bool missing = false;
    const auto y = value(y_col, schema.response);
    missing |= !y;
    std::vector<double> xs;
    for (std::size_t k = 0; k < x_cols.size(); ++k) {
      const auto v = value(x_cols[k], schema.covariates[k]);
      missing |= !v;
      xs.push_back(v.value_or(0.0));
    }
    std::optional<double> w1 = 1.0, w2 = 1.0;
    if (w1_col != none) {
      w1 = value(w1_col, *schema.unit_weight);
      missing |= !w1;
    }
    if (w2_col != none) {
      w2 = value(w2_col, *schema.cluster_weight);
      missing |= !w2;
    }
    if (missing) {
      ++out.rows_dropped;
      continue;
    }
    if (!(*w1 > 0.0)) throw InputError("line " + std::to_string(line) + ": unit weight must be positive");
    if (!(*w2 > 0.0)) throw InputError("line " + std::to_string(line) + ": cluster weight must be positive");
    if (a.y.empty()) {
      a.w2 = *w2;
      a.w2_line = line;
    } else if (std::abs(*w2 - a.w2) > 1e-12 * std::max(1.0, std::abs(a.w2))) {
      throw InputError("cluster '" + gid + "': cluster weight is not constant (" + detail::format_double(a.w2) +
                       " on line " + std::to_string(a.w2_line) + ", " + detail::format_double(*w2) + " on line " +
                       std::to_string(line) + ")");
    }
    a.y.push_back(*y);
    if (schema.intercept) a.x.push_back(1.0);
    a.x.insert(a.x.end(), xs.begin(), xs.end());
    a.w1.push_back(*w1);
  }

  out.design.p = p;
  for (const auto& gid : order) {
    const Acc& a = acc[gid];
    if (a.y.empty()) throw InputError("cluster '" + gid + "' has no complete rows after dropping missing values");
    ClusterBlock b;
    b.id = gid;
    b.w2 = a.w2;
    const auto n = static_cast<Eigen::Index>(a.y.size());
    b.y = Eigen::Map<const Vector>(a.y.data(), n);
    b.w1 = Eigen::Map<const Vector>(a.w1.data(), n);
    b.X = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        a.x.data(), n, static_cast<Eigen::Index>(p));
    out.design.clusters.push_back(std::move(b));
  }
  if (out.design.clusters.size() < 2) throw InputError("need at least two clusters with complete rows");
  return out;
}

inline LoadedData load_design_file(const std::string& path, const DatasetSchema& schema) {
  return load_design(read_csv_file(path), schema);
}

// Writes columns cluster, y, covariates..., w_unit, w_cluster. With
// intercept set, the first design column is taken as the constant and not
// written.
inline void write_design_csv(std::ostream& out, const GroupedDesign& design,
                             const std::vector<std::string>& covariate_names, bool intercept = true) {
  const std::size_t skip = intercept ? 1 : 0;
  if (covariate_names.size() + skip != design.p) {
    throw std::invalid_argument("write_design_csv: covariate names do not match the design width");
  }
  out << "cluster,y";
  for (const auto& n : covariate_names) out << ',' << detail::quote_field(n);
  out << ",w_unit,w_cluster\n";
  for (const auto& c : design.clusters) {
    for (Eigen::Index i = 0; i < c.y.size(); ++i) {
      out << detail::quote_field(c.id) << ',' << detail::format_double(c.y[i]);
      for (std::size_t k = skip; k < design.p; ++k) {
        out << ',' << detail::format_double(c.X(i, static_cast<Eigen::Index>(k)));
      }
      out << ',' << detail::format_double(c.w1[i]) << ',' << detail::format_double(c.w2) << '\n';
    }
  }
}

inline DatasetSchema written_design_schema(const std::vector<std::string>& covariate_names) {
  return {"y", covariate_names, "cluster", std::string("w_unit"), std::string("w_cluster"), true};
}

}  // namespace wmqre
