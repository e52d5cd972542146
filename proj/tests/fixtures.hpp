#pragma once

// Shared test fixtures: a hand-built SMILES corpus covering the supported
// grammar, and deterministic CNOF molecule sets for training smoke tests.

#include <array>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "molgen/chem.hpp"
#include "molgen/rng.hpp"
#include "molgen/selfies.hpp"

namespace fixtures {

// 100 kekulized SMILES over C/N/O/F/S: chains, branches, multiple bonds,
// rings, fused and spiro systems, plus a few >9-atom entries for the parser.
inline constexpr std::array<std::string_view, 100> kCorpus{
    // atoms and short chains
    "C", "N", "O", "CC", "CO", "CN", "CF", "CS", "OO", "CCO", "CCN", "CCC", "COC",
    "CNC", "CCF", "OCO", "CSC", "NCN",
    // branched saturated
    "CCCC", "CC(C)C", "CC(N)O", "CC(F)F", "C(F)(F)F", "FC(F)(F)F", "CCCCC",
    "CC(C)(C)C", "CCOCC", "CCNCC", "CC(C)CO", "CC(CC)CC", "CC(C)(O)CN", "OCC(F)CF",
    // longer chains
    "CCCCCC", "CCCCCCC", "CCCCCCCC", "CCCCCCCCC", "CCCCCCCCCC",
    // double and triple bonds
    "C=C", "C=O", "C=N", "N=N", "C#C", "C#N", "CC=C", "CC#C", "CC=O", "C=CC=C",
    "CC(=O)C", "CC(=O)O", "CC(=O)N", "C=C=C", "N#CC#N", "O=C=O", "CC#CC", "C=S",
    "CN=O", "OC=O", "C=CF", "FC=CF", "S=C=S", "NC=O", "CC=NC", "C#CC#C",
    // rings
    "C1CC1", "C1CCC1", "C1CCCC1", "C1CCCCC1", "C1CCCCCC1", "C1CO1", "C1CN1",
    "C1CS1", "C1COC1", "C1CCOC1", "C1CCNC1", "C1CCOCC1", "C1CC1C", "CC1CCC1",
    "C1=CC=CC=C1", "C1=CC=C1", "O=C1CCC1", "C1CC1=O", "N1CC1", "OC1CCCC1",
    "FC1CC1F",
    // fused, bridged, spiro
    "C1CC2CCC12", "C1CCC2(C1)CC2", "C1CC2CC1C2", "C1=CC2CCC2C1", "CC12CC1C2",
    "C1CCC(CC1)C1CCCC1",
    // mixed functional groups
    "CC(=O)OC", "COC(=O)N", "CC(O)C(C)O", "NCCO", "OCCO", "FCCF", "SCCS", "NCCCN",
    "OC(=O)C(N)C", "CCC(=O)CC"};

/// Deterministic set of distinct, connected, valence-valid CNOF molecules
/// with at most max_atoms atoms, produced through the total decoder.
inline std::vector<molgen::chem::Molecule> cnof_fixture(int count, std::uint64_t seed,
                                                        int max_atoms = 9) {
  molgen::Rng rng(seed);
  const auto& vocab = molgen::selfies::vocabulary();
  std::vector<molgen::chem::Molecule> out;
  std::set<std::string> seen;
  while (static_cast<int>(out.size()) < count) {
    const int len = 3 + static_cast<int>(rng.below(12));
    std::vector<molgen::selfies::Token> toks;
    for (int i = 0; i < len; ++i)
      toks.push_back(vocab[static_cast<std::size_t>(rng.below(vocab.size()))]);
    auto m = molgen::selfies::decode(toks);
    if (m.atom_count() > max_atoms) continue;
    auto key = molgen::chem::canonical_key(m);
    if (seen.insert(key).second) out.push_back(std::move(m));
  }
  return out;
}

inline void write_smiles_file(const std::string& path,
                              const std::vector<molgen::chem::Molecule>& mols) {
  std::ofstream out(path);
  for (const auto& m : mols) out << molgen::chem::write_smiles(m) << "\n";
}

}  // namespace fixtures
