#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "molgen/chem.hpp"
#include "molgen/rng.hpp"
#include "oracles.hpp"

using namespace molgen;
using chem::Bond;
using chem::Element;
using chem::Molecule;
using chem::ParseError;

TEST_CASE("single atom parses") {
  auto m = chem::parse_smiles("C");
  REQUIRE(m.atom_count() == 1);
  REQUIRE(m.bonds().empty());
  REQUIRE(m.atom(0) == Element::C);
}

TEST_CASE("cyclopropane is a triangle") {
  auto m = chem::parse_smiles("C1CC1");
  Molecule expected({Element::C, Element::C, Element::C},
                    {{0, 1, 1}, {1, 2, 1}, {0, 2, 1}});
  REQUIRE(m.atom_count() == 3);
  REQUIRE(m.bonds().size() == 3);
  REQUIRE(oracle::isomorphic(m, expected));
}

TEST_CASE("explicit triple bond") {
  auto m = chem::parse_smiles("C#N");
  REQUIRE(m.atom_count() == 2);
  REQUIRE(m.bonds().size() == 1);
  REQUIRE(m.bonds()[0].order == 3);
}

TEST_CASE("five substituents on carbon exceed valence") {
  REQUIRE_THROWS_MATCHES(chem::parse_smiles("C(C)(C)(C)(C)C"), ParseError,
                         Catch::Matchers::Predicate<ParseError>([](const ParseError& e) {
                           return e.kind() == ParseError::Kind::ValenceExceeded;
                         }));
}

TEST_CASE("parser error kinds") {
  auto kind_of = [](const std::string& s) {
    try {
      chem::parse_smiles(s);
    } catch (const ParseError& e) {
      return e.kind();
    }
    return ParseError::Kind::Syntax;  // placeholder; REQUIRE below guards
  };
  REQUIRE(kind_of("Cl") == ParseError::Kind::UnknownAtom);
  REQUIRE(kind_of("c1ccccc1") == ParseError::Kind::UnknownAtom);
  REQUIRE(kind_of("C(C") == ParseError::Kind::UnbalancedParenthesis);
  REQUIRE(kind_of("CC)C") == ParseError::Kind::UnbalancedParenthesis);
  REQUIRE(kind_of("C1CC") == ParseError::Kind::DanglingRingClosure);
  REQUIRE(kind_of("1CC") == ParseError::Kind::DanglingRingClosure);
  REQUIRE(kind_of("C=") == ParseError::Kind::Syntax);
  REQUIRE(kind_of("C==C") == ParseError::Kind::Syntax);
  REQUIRE_THROWS_AS(chem::parse_smiles(""), ParseError);
  REQUIRE_THROWS_AS(chem::parse_smiles("N(=O)=O"), ParseError);  // valence
}

TEST_CASE("aromatic input names kekulization in the message") {
  try {
    chem::parse_smiles("c1ccccc1");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find("kekulize") != std::string::npos);
  }
}

TEST_CASE("writer round-trips simple cases") {
  REQUIRE(chem::write_smiles(chem::parse_smiles("C")) == "C");
  auto tri = chem::parse_smiles("C1CC1");
  auto re = chem::parse_smiles(chem::write_smiles(tri));
  REQUIRE(re.atom_count() == 3);
  REQUIRE(re.bonds().size() == 3);
  auto ethene = chem::parse_smiles("C=C");
  REQUIRE(chem::write_smiles(ethene).find('=') != std::string::npos);
}

TEST_CASE("disconnected molecules are written with dots") {
  Molecule m({Element::C, Element::O}, {});
  const auto s = chem::write_smiles(m);
  REQUIRE(s.find('.') != std::string::npos);
  REQUIRE(oracle::isomorphic(chem::parse_smiles(s), m));
}

TEST_CASE("dense ring systems use two-digit closures and round-trip") {
  // 24-cycle plus all antipodal chords: 3-regular and valence-valid on
  // carbon, and the DFS keeps twelve ring closures open at once
  const int n = 24;
  std::vector<Element> atoms(n, Element::C);
  std::vector<Bond> bonds;
  for (int i = 0; i < n; ++i) bonds.push_back({i, (i + 1) % n, 1});
  for (int i = 0; i < n / 2; ++i) bonds.push_back({i, i + n / 2, 1});
  Molecule m(atoms, bonds);
  REQUIRE(chem::check_valence(m));
  const auto s = chem::write_smiles(m);
  REQUIRE(s.find('%') != std::string::npos);
  REQUIRE(oracle::isomorphic(chem::parse_smiles(s), m));
}

TEST_CASE("check_valence on hand-built molecules") {
  Molecule c4({Element::C, Element::C, Element::C, Element::C, Element::C},
              {{0, 1, 1}, {0, 2, 1}, {0, 3, 1}, {0, 4, 1}});
  REQUIRE(chem::check_valence(c4));
  Molecule n4({Element::N, Element::C, Element::C, Element::C, Element::C},
              {{0, 1, 1}, {0, 2, 1}, {0, 3, 1}, {0, 4, 1}});
  REQUIRE_FALSE(chem::check_valence(n4));
  Molecule o2({Element::O, Element::C}, {{0, 1, 2}});
  REQUIRE(chem::check_valence(o2));
}

TEST_CASE("connectivity check") {
  REQUIRE(chem::connected(chem::parse_smiles("CCO")));
  REQUIRE_FALSE(chem::connected(Molecule({Element::C, Element::C}, {})));
  REQUIRE_FALSE(chem::connected(Molecule({}, {})));
  REQUIRE(chem::connected(Molecule({Element::C}, {})));
}

TEST_CASE("canonicalize identifies traversal-direction duplicates") {
  REQUIRE(chem::canonicalize(chem::parse_smiles("CCO")) ==
          chem::canonicalize(chem::parse_smiles("OCC")));
  REQUIRE(chem::canonicalize(chem::parse_smiles("C")) !=
          chem::canonicalize(chem::parse_smiles("N")));
}

TEST_CASE("canonicalize is invariant over all triangle relabelings") {
  auto tri = chem::parse_smiles("C1CC1");
  const auto canon = chem::canonicalize(tri);
  std::vector<int> perm{0, 1, 2};
  do {
    REQUIRE(chem::canonicalize(oracle::permute_atoms(tri, perm)) == canon);
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("canonicalize rejects oversized molecules") {
  std::vector<Element> atoms(33, Element::C);
  std::vector<Bond> bonds;
  for (int i = 0; i + 1 < 33; ++i) bonds.push_back({i, i + 1, 1});
  REQUIRE_THROWS_AS(chem::canonicalize(Molecule(atoms, bonds)), chem::TooLargeError);
}

TEST_CASE("round trip over the corpus") {
  for (auto s : fixtures::kCorpus) {
    auto m = chem::parse_smiles(s);
    auto again = chem::parse_smiles(chem::write_smiles(m));
    INFO("corpus entry " << s);
    REQUIRE(oracle::isomorphic(m, again));
  }
}

TEST_CASE("canonical form is permutation invariant on random molecules") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = oracle::random_molecule(rng);
    const auto canon = chem::canonical_key(m);
    auto p = oracle::random_permutation(m.atom_count(), rng);
    REQUIRE(chem::canonical_key(oracle::permute_atoms(m, p)) == canon);
  }
}

TEST_CASE("canonical equality matches brute-force isomorphism") {
  Rng rng(88);
  std::vector<Molecule> mols;
  for (int i = 0; i < 60; ++i) mols.push_back(oracle::random_molecule(rng, 10));
  for (std::size_t i = 0; i < mols.size(); ++i)
    for (std::size_t j = i + 1; j < mols.size(); ++j) {
      const bool same_canon =
          chem::canonical_key(mols[i]) == chem::canonical_key(mols[j]);
      const bool iso = oracle::isomorphic(mols[i], mols[j]);
      INFO("pair " << chem::write_smiles(mols[i]) << " / " << chem::write_smiles(mols[j]));
      REQUIRE(same_canon == iso);
    }
}

TEST_CASE("check_valence is invariant under atom permutation") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = oracle::random_graph(rng);
    auto p = oracle::random_permutation(m.atom_count(), rng);
    REQUIRE(chem::check_valence(m) == chem::check_valence(oracle::permute_atoms(m, p)));
  }
}

TEST_CASE("molecule constructor enforces structural invariants") {
  REQUIRE_THROWS_AS(Molecule({Element::C}, {{0, 0, 1}}), std::invalid_argument);
  REQUIRE_THROWS_AS(Molecule({Element::C, Element::C}, {{0, 1, 1}, {1, 0, 2}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(Molecule({Element::C}, {{0, 1, 1}}), std::invalid_argument);
  REQUIRE_THROWS_AS(Molecule({Element::C, Element::C}, {{0, 1, 4}}),
                    std::invalid_argument);
}
