#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <map>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

namespace molgen::chem {

enum class Element : std::uint8_t { C = 0, N = 1, O = 2, F = 3, S = 4 };

constexpr int kElementCount = 5;

constexpr int max_valence(Element e) noexcept {
  constexpr std::array<int, kElementCount> table{4, 3, 2, 1, 2};
  return table[static_cast<int>(e)];
}

constexpr char symbol(Element e) noexcept {
  constexpr std::array<char, kElementCount> table{'C', 'N', 'O', 'F', 'S'};
  return table[static_cast<int>(e)];
}

class ParseError : public std::runtime_error {
 public:
  enum class Kind {
    UnknownAtom,
    UnbalancedParenthesis,
    DanglingRingClosure,
    ValenceExceeded,
    Syntax,
  };

  ParseError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class TooLargeError : public std::runtime_error {
 public:
  explicit TooLargeError(const std::string& what) : std::runtime_error(what) {}
};

struct Bond {
  int a;      // lower atom index
  int b;      // higher atom index
  int order;  // 1, 2 or 3

  friend auto operator<=>(const Bond&, const Bond&) = default;
};

/// Heavy-atom graph with explicit bond orders. Hydrogens are implicit
/// everywhere. Immutable once constructed; the constructor enforces the
/// structural invariants (index range, no self bonds, no duplicate pairs)
/// but deliberately not valence, which is a separate check.
class Molecule {
 public:
  Molecule() = default;

  Molecule(std::vector<Element> atoms, std::vector<Bond> bonds)
      : atoms_(std::move(atoms)), bonds_(std::move(bonds)) {
    const int n = static_cast<int>(atoms_.size());
    for (auto& bd : bonds_) {
      if (bd.a > bd.b) std::swap(bd.a, bd.b);
      if (bd.a < 0 || bd.b >= n)
        throw std::invalid_argument("bond index out of range");
      if (bd.a == bd.b) throw std::invalid_argument("self bond");
      if (bd.order < 1 || bd.order > 3)
        throw std::invalid_argument("bond order must be 1, 2 or 3");
    }
    std::sort(bonds_.begin(), bonds_.end());
    for (std::size_t i = 1; i < bonds_.size(); ++i)
      if (bonds_[i].a == bonds_[i - 1].a && bonds_[i].b == bonds_[i - 1].b)
        throw std::invalid_argument("duplicate bond");
  }

  int atom_count() const noexcept { return static_cast<int>(atoms_.size()); }
  Element atom(int i) const { return atoms_.at(static_cast<std::size_t>(i)); }
  const std::vector<Element>& atoms() const noexcept { return atoms_; }
  const std::vector<Bond>& bonds() const noexcept { return bonds_; }

  /// Sum of incident bond orders at atom i.
  int valence_sum(int i) const {
    int s = 0;
    for (const auto& bd : bonds_)
      if (bd.a == i || bd.b == i) s += bd.order;
    return s;
  }

  /// (neighbor, order) pairs for atom i, ascending by neighbor index.
  std::vector<std::pair<int, int>> neighbors(int i) const {
    std::vector<std::pair<int, int>> out;
    for (const auto& bd : bonds_) {
      if (bd.a == i) out.emplace_back(bd.b, bd.order);
      if (bd.b == i) out.emplace_back(bd.a, bd.order);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  friend bool operator==(const Molecule& x, const Molecule& y) {
    return x.atoms_ == y.atoms_ && x.bonds_ == y.bonds_;
  }

 private:
  std::vector<Element> atoms_;
  std::vector<Bond> bonds_;
};

inline bool check_valence(const Molecule& m) {
  std::vector<int> used(static_cast<std::size_t>(m.atom_count()), 0);
  for (const auto& bd : m.bonds()) {
    used[static_cast<std::size_t>(bd.a)] += bd.order;
    used[static_cast<std::size_t>(bd.b)] += bd.order;
  }
  for (int i = 0; i < m.atom_count(); ++i)
    if (used[static_cast<std::size_t>(i)] > max_valence(m.atom(i))) return false;
  return true;
}

inline bool connected(const Molecule& m) {
  const int n = m.atom_count();
  if (n <= 1) return n == 1;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
  for (const auto& bd : m.bonds()) {
    adj[static_cast<std::size_t>(bd.a)].push_back(bd.b);
    adj[static_cast<std::size_t>(bd.b)].push_back(bd.a);
  }
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int count = 1;
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (int w : adj[static_cast<std::size_t>(v)])
      if (!seen[static_cast<std::size_t>(w)]) {
        seen[static_cast<std::size_t>(w)] = 1;
        ++count;
        q.push(w);
      }
  }
  return count == n;
}

// ---------------------------------------------------------------------------
// SMILES subset parser.
//
// Grammar: atoms C N O F S (uppercase, kekulized input only), bonds
// {implicit single, =, #}, branches (...), single-digit ring closures 1-9,
// '.' as a top-level component separator. No charges, isotopes, stereo or
// aromatic perception.
// ---------------------------------------------------------------------------

inline Molecule parse_smiles(std::string_view text) {
  if (text.empty()) throw ParseError(ParseError::Kind::Syntax, "empty SMILES string");

  std::vector<Element> atoms;
  std::vector<Bond> bonds;
  std::vector<int> used;  // running valence per atom

  int cur = -1;
  int pending = 0;  // 0 = unset (implicit single)
  std::vector<int> branch_stack;
  std::map<int, std::pair<int, int>> open_rings;  // ring id -> (atom, order spec)

  auto add_bond = [&](int a, int b, int order) {
    if (a == b)
      throw ParseError(ParseError::Kind::Syntax, "ring closure bonds an atom to itself");
    for (const auto& bd : bonds) {
      const int lo = std::min(a, b), hi = std::max(a, b);
      if (bd.a == lo && bd.b == hi)
        throw ParseError(ParseError::Kind::Syntax, "duplicate bond between atoms");
    }
    bonds.push_back({std::min(a, b), std::max(a, b), order});
    used[static_cast<std::size_t>(a)] += order;
    used[static_cast<std::size_t>(b)] += order;
    for (int i : {a, b})
      if (used[static_cast<std::size_t>(i)] > max_valence(atoms[static_cast<std::size_t>(i)]))
        throw ParseError(ParseError::Kind::ValenceExceeded,
                         std::string("valence of atom ") + std::to_string(i) +
                             " ('" + symbol(atoms[static_cast<std::size_t>(i)]) +
                             "') exceeds " +
                             std::to_string(max_valence(atoms[static_cast<std::size_t>(i)])));
  };

  auto ring_closure = [&](int ring_id) {
    if (cur < 0)
      throw ParseError(ParseError::Kind::DanglingRingClosure,
                       "ring closure digit before any atom");
    auto it = open_rings.find(ring_id);
    if (it == open_rings.end()) {
      open_rings.emplace(ring_id, std::make_pair(cur, pending));
    } else {
      const auto [other, open_order] = it->second;
      open_rings.erase(it);
      if (open_order != 0 && pending != 0 && open_order != pending)
        throw ParseError(ParseError::Kind::Syntax,
                         "conflicting bond orders on ring closure");
      add_bond(other, cur, open_order != 0 ? open_order : (pending != 0 ? pending : 1));
    }
    pending = 0;
  };

  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    const char c = text[pos];
    switch (c) {
      case 'C':
      case 'N':
      case 'O':
      case 'F':
      case 'S': {
        Element e = c == 'C'   ? Element::C
                    : c == 'N' ? Element::N
                    : c == 'O' ? Element::O
                    : c == 'F' ? Element::F
                               : Element::S;
        atoms.push_back(e);
        used.push_back(0);
        const int idx = static_cast<int>(atoms.size()) - 1;
        if (cur >= 0) add_bond(cur, idx, pending == 0 ? 1 : pending);
        cur = idx;
        pending = 0;
        break;
      }
      case '=':
      case '#': {
        if (pending != 0)
          throw ParseError(ParseError::Kind::Syntax, "consecutive bond symbols");
        pending = c == '=' ? 2 : 3;
        break;
      }
      case '(': {
        if (cur < 0)
          throw ParseError(ParseError::Kind::UnbalancedParenthesis,
                           "branch opened before any atom");
        if (pending != 0)
          throw ParseError(ParseError::Kind::Syntax, "bond symbol before '('");
        branch_stack.push_back(cur);
        break;
      }
      case ')': {
        if (branch_stack.empty())
          throw ParseError(ParseError::Kind::UnbalancedParenthesis,
                           "')' without matching '('");
        if (pending != 0)
          throw ParseError(ParseError::Kind::Syntax, "dangling bond symbol before ')'");
        cur = branch_stack.back();
        branch_stack.pop_back();
        break;
      }
      case '.': {
        if (!branch_stack.empty())
          throw ParseError(ParseError::Kind::Syntax, "'.' inside a branch");
        if (pending != 0)
          throw ParseError(ParseError::Kind::Syntax, "bond symbol before '.'");
        cur = -1;
        break;
      }
      case '%': {
        if (pos + 2 >= text.size() || !std::isdigit(static_cast<unsigned char>(text[pos + 1])) ||
            !std::isdigit(static_cast<unsigned char>(text[pos + 2])))
          throw ParseError(ParseError::Kind::Syntax,
                           "'%' must be followed by two ring closure digits");
        ring_closure((text[pos + 1] - '0') * 10 + (text[pos + 2] - '0'));
        pos += 2;
        break;
      }
      default: {
        if (c >= '1' && c <= '9') {
          ring_closure(c - '0');
          break;
        }
        if (c == 'c' || c == 'n' || c == 'o' || c == 's' || c == 'p')
          throw ParseError(ParseError::Kind::UnknownAtom,
                           std::string("aromatic atom '") + c +
                               "' not supported; kekulize the input first");
        throw ParseError(ParseError::Kind::UnknownAtom,
                         std::string("unsupported character '") + c + "' at position " +
                             std::to_string(pos));
      }
    }
  }

  if (!branch_stack.empty())
    throw ParseError(ParseError::Kind::UnbalancedParenthesis, "unclosed '('");
  if (!open_rings.empty())
    throw ParseError(ParseError::Kind::DanglingRingClosure,
                     "unclosed ring closure '" + std::to_string(open_rings.begin()->first) +
                         "'");
  if (pending != 0)
    throw ParseError(ParseError::Kind::Syntax, "trailing bond symbol");
  if (atoms.empty())
    throw ParseError(ParseError::Kind::Syntax, "no atoms in SMILES string");

  return Molecule(std::move(atoms), std::move(bonds));
}

// ---------------------------------------------------------------------------
// SMILES writer. DFS spanning tree per component, ring digits for the
// back edges, '.' between components. Output reparses to an isomorphic
// molecule; it is not normalized in any other way.
// ---------------------------------------------------------------------------

namespace detail {

struct Writer {
  const Molecule& m;
  std::vector<std::vector<std::pair<int, int>>> adj;  // (neighbor, order)
  std::vector<char> visited;
  std::vector<std::vector<std::pair<int, int>>> tree_children;  // (child, order)
  struct BackEdge {
    int order;
    int digit = 0;  // assigned during emission; 1..9 bare, 10..99 as %nn
  };
  std::vector<BackEdge> back_edges;
  std::vector<std::vector<int>> back_at;  // atom -> back edge ids, discovery order
  std::vector<char> digit_free = std::vector<char>(100, 1);
  std::vector<int> roots;
  std::string out;

  explicit Writer(const Molecule& mol) : m(mol) {
    const auto n = static_cast<std::size_t>(m.atom_count());
    adj.resize(n);
    for (const auto& bd : m.bonds()) {
      adj[static_cast<std::size_t>(bd.a)].emplace_back(bd.b, bd.order);
      adj[static_cast<std::size_t>(bd.b)].emplace_back(bd.a, bd.order);
    }
    for (auto& lst : adj) std::sort(lst.begin(), lst.end());
    visited.assign(n, 0);
    tree_children.resize(n);
    back_at.resize(n);
    for (int v = 0; v < m.atom_count(); ++v)
      if (!visited[static_cast<std::size_t>(v)]) {
        roots.push_back(v);
        classify(v, -1);
      }
  }

  // Pass 1: split edges into a DFS spanning forest and back edges. A back
  // edge is discovered exactly once, at its later-visited endpoint.
  void classify(int v, int parent) {
    visited[static_cast<std::size_t>(v)] = 1;
    for (const auto& [w, order] : adj[static_cast<std::size_t>(v)]) {
      if (w == parent) continue;
      if (visited[static_cast<std::size_t>(w)]) {
        const int id = static_cast<int>(back_edges.size());
        back_edges.push_back({order, 0});
        back_at[static_cast<std::size_t>(w)].push_back(id);
        back_at[static_cast<std::size_t>(v)].push_back(id);
      }
    }
    for (const auto& [w, order] : adj[static_cast<std::size_t>(v)])
      if (!visited[static_cast<std::size_t>(w)]) {
        tree_children[static_cast<std::size_t>(v)].emplace_back(w, order);
        classify(w, v);
      }
  }

  int take_digit() {
    for (int d = 1; d <= 99; ++d)
      if (digit_free[static_cast<std::size_t>(d)]) {
        digit_free[static_cast<std::size_t>(d)] = 0;
        return d;
      }
    throw TooLargeError("more than 99 simultaneously open ring closures");
  }

  void put_digit(int d) {
    if (d < 10) {
      out += static_cast<char>('0' + d);
    } else {
      out += '%';
      out += static_cast<char>('0' + d / 10);
      out += static_cast<char>('0' + d % 10);
    }
  }

  static const char* bond_symbol(int order) {
    return order == 2 ? "=" : order == 3 ? "#" : "";
  }

  // Pass 2: emit along the precomputed tree; ring digits open at the first
  // endpoint reached and close (freeing the digit) at the second.
  void emit(int v) {
    out += symbol(m.atom(v));
    for (int id : back_at[static_cast<std::size_t>(v)]) {
      auto& be = back_edges[static_cast<std::size_t>(id)];
      out += bond_symbol(be.order);
      if (be.digit == 0) {
        be.digit = take_digit();
        put_digit(be.digit);
      } else {
        put_digit(be.digit);
        digit_free[static_cast<std::size_t>(be.digit)] = 1;
      }
    }
    const auto& children = tree_children[static_cast<std::size_t>(v)];
    for (std::size_t i = 0; i < children.size(); ++i) {
      const auto [w, order] = children[i];
      const bool last = i + 1 == children.size();
      if (!last) out += '(';
      out += bond_symbol(order);
      emit(w);
      if (!last) out += ')';
    }
  }

  std::string run() {
    for (std::size_t i = 0; i < roots.size(); ++i) {
      if (i > 0) out += '.';
      emit(roots[i]);
    }
    return out;
  }
};

}  // namespace detail

inline std::string write_smiles(const Molecule& m) {
  if (m.atom_count() == 0) return std::string();
  return detail::Writer(m).run();
}

// ---------------------------------------------------------------------------
// Canonicalization: iterative neighborhood refinement over
// (element, degree, incident-order) invariants, with exhaustive branching
// over residual rank ties. Two molecules map to the same string iff they
// are isomorphic with matching elements and bond orders.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<int> dense_ranks(std::vector<std::pair<std::vector<long long>, int>>& keys) {
  std::sort(keys.begin(), keys.end());
  std::vector<int> ranks(keys.size());
  int r = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (i > 0 && keys[i].first != keys[i - 1].first) ++r;
    ranks[static_cast<std::size_t>(keys[i].second)] = r;
  }
  return ranks;
}

inline std::vector<int> refine_ranks(const Molecule& m, std::vector<int> ranks) {
  const int n = m.atom_count();
  std::vector<std::vector<std::pair<int, int>>> adj(static_cast<std::size_t>(n));
  for (const auto& bd : m.bonds()) {
    adj[static_cast<std::size_t>(bd.a)].emplace_back(bd.b, bd.order);
    adj[static_cast<std::size_t>(bd.b)].emplace_back(bd.a, bd.order);
  }
  while (true) {
    std::vector<std::pair<std::vector<long long>, int>> keys;
    keys.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      std::vector<long long> key{ranks[static_cast<std::size_t>(i)]};
      std::vector<long long> nb;
      for (const auto& [j, order] : adj[static_cast<std::size_t>(i)])
        nb.push_back(order * 1000000LL + ranks[static_cast<std::size_t>(j)]);
      std::sort(nb.begin(), nb.end());
      key.insert(key.end(), nb.begin(), nb.end());
      keys.emplace_back(std::move(key), i);
    }
    auto next = dense_ranks(keys);
    if (next == ranks) return ranks;
    ranks = std::move(next);
  }
}

inline int rank_class_count(const std::vector<int>& ranks) {
  int mx = -1;
  for (int r : ranks) mx = std::max(mx, r);
  return mx + 1;
}

struct CanonState {
  const Molecule& m;
  std::size_t leaves = 0;
  std::size_t leaf_budget;
  std::string best;

  void visit(std::vector<int> ranks) {
    ranks = refine_ranks(m, std::move(ranks));
    const int n = m.atom_count();
    if (rank_class_count(ranks) == n) {
      if (++leaves > leaf_budget)
        throw TooLargeError("canonicalization branch budget exhausted");
      // Relabel atoms by rank and write deterministically.
      std::vector<int> pos(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(ranks[static_cast<std::size_t>(i)])] = i;
      std::vector<Element> atoms;
      atoms.reserve(static_cast<std::size_t>(n));
      for (int r = 0; r < n; ++r) atoms.push_back(m.atom(pos[static_cast<std::size_t>(r)]));
      std::vector<Bond> bonds;
      for (const auto& bd : m.bonds())
        bonds.push_back({ranks[static_cast<std::size_t>(bd.a)],
                         ranks[static_cast<std::size_t>(bd.b)], bd.order});
      const std::string s = write_smiles(Molecule(std::move(atoms), std::move(bonds)));
      if (best.empty() || s < best) best = s;
      return;
    }
    // Smallest tied rank class, break ties by branching over every member.
    int target = -1;
    std::vector<int> members;
    for (int r = 0; r < n && target < 0; ++r) {
      members.clear();
      for (int i = 0; i < n; ++i)
        if (ranks[static_cast<std::size_t>(i)] == r) members.push_back(i);
      if (members.size() > 1) target = r;
    }
    for (int pick : members) {
      std::vector<int> forced(ranks.size());
      for (std::size_t i = 0; i < ranks.size(); ++i) forced[i] = ranks[i] * 2 + 1;
      forced[static_cast<std::size_t>(pick)] -= 1;
      visit(std::move(forced));
    }
  }
};

inline std::string canonical_impl(const Molecule& m, std::size_t leaf_budget) {
  const int n = m.atom_count();
  if (n == 0) return std::string();
  std::vector<std::pair<std::vector<long long>, int>> keys;
  for (int i = 0; i < n; ++i) {
    keys.emplace_back(std::vector<long long>{static_cast<long long>(m.atom(i)),
                                             static_cast<long long>(m.neighbors(i).size()),
                                             static_cast<long long>(m.valence_sum(i))},
                      i);
  }
  CanonState st{m, 0, leaf_budget, {}};
  st.visit(dense_ranks(keys));
  return st.best;
}

}  // namespace detail

constexpr int kCanonicalAtomLimit = 32;

inline std::string canonicalize(const Molecule& m) {
  if (m.atom_count() > kCanonicalAtomLimit)
    throw TooLargeError("canonicalize supports at most " +
                        std::to_string(kCanonicalAtomLimit) + " atoms, got " +
                        std::to_string(m.atom_count()));
  return detail::canonical_impl(m, 100000);
}

/// Same canonical form without the public size guard; used by batch metric
/// code where generated molecules can exceed the documented bound.
inline std::string canonical_key(const Molecule& m) {
  return detail::canonical_impl(m, 1000000);
}

}  // namespace molgen::chem
