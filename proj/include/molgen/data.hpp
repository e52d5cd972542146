#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "molgen/chem.hpp"
#include "molgen/graphs.hpp"
#include "molgen/rng.hpp"

namespace molgen::data {

class FileNotFoundError : public std::runtime_error {
 public:
  explicit FileNotFoundError(const std::string& what) : std::runtime_error(what) {}
};

class NoParseableRowsError : public std::runtime_error {
 public:
  explicit NoParseableRowsError(const std::string& what) : std::runtime_error(what) {}
};

struct MoleculeDataset {
  std::string name;
  std::vector<chem::Molecule> molecules;
  std::set<std::string> canonical_set;
  std::string provenance;
  int dropped_rows = 0;

  void rebuild_canonical() {
    canonical_set.clear();
    for (const auto& m : molecules) canonical_set.insert(chem::canonical_key(m));
  }
};

namespace detail {

// RFC-4180-style row split: quoted fields, doubled quotes as escapes.
inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

/// Loads molecules from either a CSV with a named SMILES column or a plain
/// one-SMILES-per-line file ('#' lines are comments). Rows that fail the
/// grammar or valence rules are dropped and counted, never fatal.
inline MoleculeDataset load_smiles_file(const std::string& path,
                                        const std::string& column = "") {
  std::ifstream in(path);
  if (!in) throw FileNotFoundError("cannot open '" + path + "'");

  const bool csv = !column.empty() || detail::ends_with(path, ".csv");
  MoleculeDataset ds;
  ds.name = path;

  int col_index = -1;
  std::string line;
  bool header_done = false;
  std::vector<std::string> smiles_rows;
  while (std::getline(in, line)) {
    if (csv) {
      auto fields = detail::split_csv_row(line);
      if (!header_done) {
        header_done = true;
        const std::string want = column.empty() ? "smiles" : column;
        for (std::size_t i = 0; i < fields.size(); ++i)
          if (fields[i] == want) col_index = static_cast<int>(i);
        if (col_index < 0)
          throw NoParseableRowsError("column '" + want + "' not found in '" + path + "'");
        continue;
      }
      if (col_index < static_cast<int>(fields.size()))
        smiles_rows.push_back(fields[static_cast<std::size_t>(col_index)]);
      else
        ++ds.dropped_rows;
    } else {
      if (line.empty() || line[0] == '#') continue;
      // trim trailing CR and surrounding spaces
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      std::size_t start = line.find_first_not_of(' ');
      if (start == std::string::npos) continue;
      smiles_rows.push_back(line.substr(start));
    }
  }

  for (const auto& s : smiles_rows) {
    if (s.empty()) {
      ++ds.dropped_rows;
      continue;
    }
    try {
      auto m = chem::parse_smiles(s);
      if (!chem::check_valence(m)) {
        ++ds.dropped_rows;
        continue;
      }
      ds.molecules.push_back(std::move(m));
    } catch (const chem::ParseError&) {
      ++ds.dropped_rows;
    }
  }
  if (ds.molecules.empty())
    throw NoParseableRowsError("no parseable SMILES rows in '" + path + "'");
  ds.provenance = "loaded from " + path;
  ds.rebuild_canonical();
  return ds;
}

/// Keeps molecules whose elements all fit the node vocabulary and whose
/// atom count fits the graph size.
inline MoleculeDataset filter_for_molgan(const MoleculeDataset& ds,
                                         const graphs::GraphSpec& spec) {
  MoleculeDataset out;
  out.name = ds.name;
  out.dropped_rows = ds.dropped_rows;
  for (const auto& m : ds.molecules) {
    if (m.atom_count() > spec.max_atoms) continue;
    bool ok = true;
    for (int i = 0; i < m.atom_count() && ok; ++i)
      if (static_cast<int>(m.atom(i)) >= spec.node_types - 1) ok = false;
    if (ok) out.molecules.push_back(m);
  }
  out.provenance = ds.provenance + "; filtered to <=" + std::to_string(spec.max_atoms) +
                   " atoms over the " + std::to_string(spec.node_types - 1) +
                   "-element vocabulary";
  out.rebuild_canonical();
  return out;
}

/// Uniform subset without replacement, deterministic in the seed.
inline MoleculeDataset subsample(const MoleculeDataset& ds, int k, std::uint64_t seed) {
  const int n = static_cast<int>(ds.molecules.size());
  if (k > n)
    throw std::invalid_argument("subsample size " + std::to_string(k) +
                                " exceeds dataset size " + std::to_string(n));
  Rng rng(seed);
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  MoleculeDataset out;
  out.name = ds.name;
  out.dropped_rows = ds.dropped_rows;
  for (int i = 0; i < k; ++i)
    out.molecules.push_back(ds.molecules[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  out.provenance = ds.provenance + "; random " + std::to_string(k) + "-subset (seed " +
                   std::to_string(seed) + ")";
  out.rebuild_canonical();
  return out;
}

inline std::vector<graphs::GraphTensors> featurize_all(const MoleculeDataset& ds,
                                                       const graphs::GraphSpec& spec) {
  std::vector<graphs::GraphTensors> out;
  out.reserve(ds.molecules.size());
  for (const auto& m : ds.molecules) out.push_back(graphs::featurize(m, spec));
  return out;
}

}  // namespace molgen::data
