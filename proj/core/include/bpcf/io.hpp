#pragma once

#include <string>
#include <vector>

#include "bpcf/engine.hpp"
#include "bpcf/matrix.hpp"

namespace bpcf {

struct CsvTable {
  std::vector<std::string> headers;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
  // Numeric parse with row/column context in the error message.
  double number_at(std::size_t row, int col) const;
};

CsvTable read_csv(const std::string& path);

// Which CSV columns play which role.  Parsed from a key=value sidecar:
// treatment=, intermediate=, outcome=, covariates= (comma list), id= (optional).
struct ColumnMapping {
  std::string id, treatment, intermediate, outcome;
  std::vector<std::string> covariates;
};
ColumnMapping parse_mapping(const std::string& path);

Dataset dataset_from_csv(const std::string& csv_path, const ColumnMapping& mapping);

// Numeric table writer; one formatting path so reruns are byte-identical.
void write_csv(const std::string& path, const std::vector<std::string>& headers,
               const std::vector<std::vector<double>>& columns,
               const std::vector<std::string>* id_column = nullptr);

// Posterior draws as a directory of CSVs plus a key=value meta file and the
// optional modifier snapshots; read_draws restores everything write_draws
// stored, bit-exact.
void write_draws(const std::string& dir, const PosteriorDraws& draws,
                 const std::vector<std::string>& unit_ids);
PosteriorDraws read_draws(const std::string& dir);

}  // namespace bpcf
