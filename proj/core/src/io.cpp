#include "bpcf/io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bpcf {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

int CsvTable::column(const std::string& name) const {
  for (std::size_t j = 0; j < headers.size(); ++j) {
    if (headers[j] == name) return static_cast<int>(j);
  }
  return -1;
}

double CsvTable::number_at(std::size_t row, int col) const {
  const std::string& cell = rows[row][col];
  // strtod rather than stod: stod turns the ERANGE underflow on subnormal
  // values into out_of_range, but those cells are legitimate doubles.
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(v)) {
    throw std::runtime_error("csv: row " + std::to_string(row + 2) + ", column '" +
                             headers[col] + "': cannot parse '" + cell + "' as a number");
  }
  return v;
}

CsvTable read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.headers = split_line(line);
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != t.headers.size()) {
      throw std::runtime_error("csv: row " + std::to_string(t.rows.size() + 2) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(t.headers.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

ColumnMapping parse_mapping(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("mapping: cannot open " + path);
  ColumnMapping m;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string trimmed;
    for (char c : line) {
      if (c != ' ' && c != '\t' && c != '\r') trimmed += c;
    }
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("mapping: " + path + ":" + std::to_string(line_no) +
                               ": expected key=value");
    }
    const std::string key = trimmed.substr(0, eq);
    const std::string value = trimmed.substr(eq + 1);
    if (key == "id") {
      m.id = value;
    } else if (key == "treatment") {
      m.treatment = value;
    } else if (key == "intermediate") {
      m.intermediate = value;
    } else if (key == "outcome") {
      m.outcome = value;
    } else if (key == "covariates") {
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) m.covariates.push_back(item);
      }
    } else {
      throw std::runtime_error("mapping: unknown key '" + key + "'");
    }
  }
  if (m.treatment.empty() || m.intermediate.empty() || m.outcome.empty() ||
      m.covariates.empty()) {
    throw std::runtime_error(
        "mapping: treatment, intermediate, outcome and covariates are all required");
  }
  return m;
}

Dataset dataset_from_csv(const std::string& csv_path, const ColumnMapping& mapping) {
  const CsvTable t = read_csv(csv_path);
  auto require = [&](const std::string& name) {
    const int c = t.column(name);
    if (c < 0) throw std::runtime_error("csv: required column '" + name + "' is missing");
    return c;
  };
  const int ca = require(mapping.treatment);
  const int cm = require(mapping.intermediate);
  const int cy = require(mapping.outcome);
  std::vector<int> cx;
  for (const auto& name : mapping.covariates) cx.push_back(require(name));
  const int cid = mapping.id.empty() ? -1 : require(mapping.id);

  const std::size_t n = t.rows.size();
  Matrix X(n, cx.size());
  std::vector<double> A(n), M(n), Y(n);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    A[i] = t.number_at(i, ca);
    M[i] = t.number_at(i, cm);
    Y[i] = t.number_at(i, cy);
    for (std::size_t j = 0; j < cx.size(); ++j) X(i, j) = t.number_at(i, cx[j]);
    if (cid >= 0) ids.push_back(t.rows[i][cid]);
  }
  return Dataset::make(std::move(X), std::move(A), std::move(M), std::move(Y), std::move(ids));
}

void write_csv(const std::string& path, const std::vector<std::string>& headers,
               const std::vector<std::vector<double>>& columns,
               const std::vector<std::string>* id_column) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("csv: cannot open " + path + " for writing");
  const std::size_t expected = headers.size() - (id_column != nullptr ? 1 : 0);
  if (columns.size() != expected) throw std::invalid_argument("write_csv: header/column mismatch");
  for (std::size_t j = 0; j < headers.size(); ++j) {
    if (j > 0) os << ",";
    os << headers[j];
  }
  os << "\n";
  const std::size_t n = columns.empty() ? (id_column ? id_column->size() : 0)
                                        : columns.front().size();
  for (const auto& c : columns) {
    if (c.size() != n) throw std::invalid_argument("write_csv: ragged columns");
  }
  for (std::size_t i = 0; i < n; ++i) {
    bool first = true;
    if (id_column != nullptr) {
      os << (*id_column)[i];
      first = false;
    }
    for (const auto& c : columns) {
      if (!first) os << ",";
      os << format_double(c[i]);
      first = false;
    }
    os << "\n";
  }
  if (!os) throw std::runtime_error("csv: write failed for " + path);
}

namespace {

void write_draw_matrix(const std::string& path, const std::vector<std::vector<double>>& draws,
                       const std::vector<std::string>& unit_ids) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("draws: cannot open " + path + " for writing");
  for (std::size_t j = 0; j < unit_ids.size(); ++j) {
    if (j > 0) os << ",";
    os << unit_ids[j];
  }
  os << "\n";
  for (const auto& row : draws) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j > 0) os << ",";
      os << format_double(row[j]);
    }
    os << "\n";
  }
  if (!os) throw std::runtime_error("draws: write failed for " + path);
}

std::vector<std::vector<double>> read_draw_matrix(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("draws: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("draws: " + path + " is empty");
  std::vector<std::vector<double>> out;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

void write_draws(const std::string& dir, const PosteriorDraws& draws,
                 const std::vector<std::string>& unit_ids) {
  fs::create_directories(dir);
  write_draw_matrix(dir + "/m0.csv", draws.m0, unit_ids);
  write_draw_matrix(dir + "/m1.csv", draws.m1, unit_ids);
  write_draw_matrix(dir + "/y0.csv", draws.y0, unit_ids);
  write_draw_matrix(dir + "/y1.csv", draws.y1, unit_ids);
  write_csv(dir + "/scalars.csv", {"sigma_m", "sigma_y", "loglik"},
            {draws.sigma_m, draws.sigma_y, draws.loglik});

  std::ofstream meta(dir + "/meta.txt", std::ios::binary);
  if (!meta) throw std::runtime_error("draws: cannot write meta.txt");
  char buf[64];
  meta << "format=bpcf-draws v1\n";
  meta << "draws=" << draws.n_draws() << "\n";
  meta << "units=" << draws.n_units() << "\n";
  meta << "modifier_mode=" << (draws.modifier_mode == ModifierMode::full ? "full" : "m_only")
       << "\n";
  std::snprintf(buf, sizeof buf, "%a", draws.snapshot_y_sd);
  meta << "y_sd=" << buf << "\n";
  const std::pair<const char*, double> rates[] = {
      {"mmis_accept_rate", draws.mmis_accept_rate},
      {"accept_m_prognostic", draws.accept_rate_m_prognostic},
      {"accept_m_modifier", draws.accept_rate_m_modifier},
      {"accept_y_prognostic", draws.accept_rate_y_prognostic},
      {"accept_y_modifier", draws.accept_rate_y_modifier},
  };
  for (const auto& [key, value] : rates) {
    std::snprintf(buf, sizeof buf, "%a", value);
    meta << key << "=" << buf << "\n";
  }
  meta << "snapshots=" << draws.modifier_snapshots.size() << "\n";

  if (!draws.modifier_snapshots.empty()) {
    std::ofstream os(dir + "/snapshots.txt", std::ios::binary);
    if (!os) throw std::runtime_error("draws: cannot write snapshots.txt");
    for (const Forest& f : draws.modifier_snapshots) serialize_forest(f, 0.0, os);
    if (!draws.snapshot_x.empty()) {
      std::vector<std::vector<double>> cols;
      std::vector<std::string> headers;
      for (std::size_t j = 0; j < draws.snapshot_x.cols(); ++j) {
        cols.push_back(draws.snapshot_x.column(j));
        headers.push_back("x" + std::to_string(j + 1));
      }
      write_csv(dir + "/snapshot_x.csv", headers, cols);
    }
  }
}

PosteriorDraws read_draws(const std::string& dir) {
  PosteriorDraws draws;
  draws.m0 = read_draw_matrix(dir + "/m0.csv");
  draws.m1 = read_draw_matrix(dir + "/m1.csv");
  draws.y0 = read_draw_matrix(dir + "/y0.csv");
  draws.y1 = read_draw_matrix(dir + "/y1.csv");

  const CsvTable scalars = read_csv(dir + "/scalars.csv");
  for (std::size_t i = 0; i < scalars.rows.size(); ++i) {
    draws.sigma_m.push_back(scalars.number_at(i, 0));
    draws.sigma_y.push_back(scalars.number_at(i, 1));
    draws.loglik.push_back(scalars.number_at(i, 2));
  }

  std::ifstream meta(dir + "/meta.txt");
  if (!meta) throw std::runtime_error("draws: cannot open " + dir + "/meta.txt");
  std::string line;
  std::size_t snapshots = 0;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "modifier_mode") {
      draws.modifier_mode = value == "m_only" ? ModifierMode::m_only : ModifierMode::full;
    } else if (key == "y_sd") {
      draws.snapshot_y_sd = std::strtod(value.c_str(), nullptr);
    } else if (key == "mmis_accept_rate") {
      draws.mmis_accept_rate = std::strtod(value.c_str(), nullptr);
    } else if (key == "accept_m_prognostic") {
      draws.accept_rate_m_prognostic = std::strtod(value.c_str(), nullptr);
    } else if (key == "accept_m_modifier") {
      draws.accept_rate_m_modifier = std::strtod(value.c_str(), nullptr);
    } else if (key == "accept_y_prognostic") {
      draws.accept_rate_y_prognostic = std::strtod(value.c_str(), nullptr);
    } else if (key == "accept_y_modifier") {
      draws.accept_rate_y_modifier = std::strtod(value.c_str(), nullptr);
    } else if (key == "snapshots") {
      snapshots = static_cast<std::size_t>(std::stoul(value));
    }
  }
  if (snapshots > 0) {
    std::ifstream os(dir + "/snapshots.txt");
    if (!os) throw std::runtime_error("draws: snapshots.txt missing");
    for (std::size_t k = 0; k < snapshots; ++k) {
      draws.modifier_snapshots.push_back(deserialize_forest(os).first);
    }
    if (fs::exists(dir + "/snapshot_x.csv")) {
      const CsvTable t = read_csv(dir + "/snapshot_x.csv");
      Matrix X(t.rows.size(), t.headers.size());
      for (std::size_t i = 0; i < t.rows.size(); ++i) {
        for (std::size_t j = 0; j < t.headers.size(); ++j) {
          X(i, j) = t.number_at(i, static_cast<int>(j));
        }
      }
      draws.snapshot_x = std::move(X);
    }
  }
  return draws;
}

}  // namespace bpcf
