#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "molgen/chem.hpp"

namespace molgen::metrics {

/// Validity convention: valence-correct, connected, at least one atom.
inline bool is_valid(const chem::Molecule& m) {
  return m.atom_count() >= 1 && chem::check_valence(m) && chem::connected(m);
}

inline double validity(const std::vector<chem::Molecule>& mols) {
  if (mols.empty()) return 0.0;
  int valid = 0;
  for (const auto& m : mols)
    if (is_valid(m)) ++valid;
  return 100.0 * valid / static_cast<double>(mols.size());
}

/// Distinct canonical forms among valid molecules, as a percentage of the
/// valid count. Defined as 0 when nothing is valid.
inline double uniqueness(const std::vector<chem::Molecule>& mols) {
  std::set<std::string> distinct;
  int valid = 0;
  for (const auto& m : mols)
    if (is_valid(m)) {
      ++valid;
      distinct.insert(chem::canonical_key(m));
    }
  if (valid == 0) return 0.0;
  return 100.0 * static_cast<double>(distinct.size()) / valid;
}

/// Valid molecules whose canonical form is absent from the training set,
/// counted per occurrence, as a percentage of the valid count.
inline double novelty(const std::vector<chem::Molecule>& mols,
                      const std::set<std::string>& training_canonical) {
  int valid = 0, novel = 0;
  for (const auto& m : mols)
    if (is_valid(m)) {
      ++valid;
      if (!training_canonical.count(chem::canonical_key(m))) ++novel;
    }
  if (valid == 0) return 0.0;
  return 100.0 * novel / static_cast<double>(valid);
}

struct MoleculeRecord {
  std::string smiles;     // as written; empty for the empty molecule
  std::string canonical;  // empty when invalid molecules cannot be keyed
  bool valid = false;
  bool novel = false;
};

struct GenerationReport {
  int n_generated = 0;
  int n_valid = 0;
  double validity = 0.0;
  double uniqueness = 0.0;
  double novelty = 0.0;
  std::uint64_t seed = 0;
  bool degenerate = false;  // set when n_valid == 0 (Uni/Nov forced to 0)
  std::vector<MoleculeRecord> molecules;
};

inline GenerationReport evaluate(const std::vector<chem::Molecule>& mols,
                                 const std::set<std::string>& training_canonical,
                                 std::uint64_t seed, bool keep_records = true) {
  GenerationReport r;
  r.seed = seed;
  r.n_generated = static_cast<int>(mols.size());
  std::set<std::string> distinct;
  int novel = 0;
  for (const auto& m : mols) {
    MoleculeRecord rec;
    rec.valid = is_valid(m);
    if (rec.valid) {
      ++r.n_valid;
      rec.canonical = chem::canonical_key(m);
      distinct.insert(rec.canonical);
      rec.novel = !training_canonical.count(rec.canonical);
      if (rec.novel) ++novel;
    }
    rec.smiles = chem::write_smiles(m);
    if (keep_records) r.molecules.push_back(std::move(rec));
  }
  if (r.n_generated > 0)
    r.validity = 100.0 * r.n_valid / static_cast<double>(r.n_generated);
  if (r.n_valid > 0) {
    r.uniqueness = 100.0 * static_cast<double>(distinct.size()) / r.n_valid;
    r.novelty = 100.0 * novel / static_cast<double>(r.n_valid);
  } else {
    r.degenerate = true;
  }
  return r;
}

}  // namespace molgen::metrics
