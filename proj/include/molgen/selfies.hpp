#pragma once

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "molgen/chem.hpp"

namespace molgen::selfies {

class UnencodableError : public std::runtime_error {
 public:
  explicit UnencodableError(const std::string& what) : std::runtime_error(what) {}
};

class IndexOutOfVocabularyError : public std::runtime_error {
 public:
  explicit IndexOutOfVocabularyError(const std::string& what)
      : std::runtime_error(what) {}
};

struct Token {
  enum class Kind { Pad, Atom, BondAtom, Branch, Ring };

  Kind kind = Kind::Pad;
  chem::Element element = chem::Element::C;  // Atom / BondAtom
  int order = 1;                             // BondAtom / Ring bond order
  int digits = 1;                            // Branch / Ring: length digit count

  friend bool operator==(const Token& a, const Token& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
      case Kind::Pad:
        return true;
      case Kind::Atom:
        return a.element == b.element;
      case Kind::BondAtom:
        return a.element == b.element && a.order == b.order;
      case Kind::Branch:
        return a.digits == b.digits;
      case Kind::Ring:
        return a.order == b.order && a.digits == b.digits;
    }
    return false;
  }

  static Token pad() { return {}; }
  static Token atom(chem::Element e) { return {Kind::Atom, e, 1, 1}; }
  static Token bond_atom(int order, chem::Element e) { return {Kind::BondAtom, e, order, 1}; }
  static Token branch(int digits) { return {Kind::Branch, chem::Element::C, 1, digits}; }
  static Token ring(int order, int digits) { return {Kind::Ring, chem::Element::C, order, digits}; }
};

/// Padded token vector; pads are only ever a suffix.
struct TokenSequence {
  std::vector<Token> tokens;
  int fixed_length = 0;
};

/// Fixed 22-token alphabet. Index 0 is the pad token; the ordering below is
/// part of the on-disk contract (checkpoints store raw indices).
///
///   0 [nop]
///   1-4   [C] [N] [O] [F]            attach with a single bond
///   5-8   [-C] [-N] [-O] [-F]        explicit single-bond variants
///   9-11  [=C] [=N] [=O]             double bond (skips F, valence 1)
///   12-13 [#C] [#N]                  triple bond (skips O and F)
///   14-15 [Branch1] [Branch2]        branch, 1 or 2 length digits
///   16-18 [Ring1] [=Ring1] [#Ring1]  ring closure, 1 length digit
///   19-21 [Ring2] [=Ring2] [#Ring2]  ring closure, 2 length digits
inline const std::vector<Token>& vocabulary() {
  static const std::vector<Token> vocab = [] {
    using E = chem::Element;
    std::vector<Token> v;
    v.push_back(Token::pad());
    for (E e : {E::C, E::N, E::O, E::F}) v.push_back(Token::atom(e));
    for (E e : {E::C, E::N, E::O, E::F}) v.push_back(Token::bond_atom(1, e));
    for (E e : {E::C, E::N, E::O}) v.push_back(Token::bond_atom(2, e));
    for (E e : {E::C, E::N}) v.push_back(Token::bond_atom(3, e));
    v.push_back(Token::branch(1));
    v.push_back(Token::branch(2));
    for (int o : {1, 2, 3}) v.push_back(Token::ring(o, 1));
    for (int o : {1, 2, 3}) v.push_back(Token::ring(o, 2));
    return v;
  }();
  return vocab;
}

inline int vocabulary_size() { return static_cast<int>(vocabulary().size()); }

inline int token_index(const Token& t) {
  const auto& v = vocabulary();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] == t) return static_cast<int>(i);
  throw IndexOutOfVocabularyError("token not present in vocabulary");
}

inline std::string token_name(const Token& t) {
  const char* order_prefix = t.order == 2 ? "=" : t.order == 3 ? "#" : "";
  switch (t.kind) {
    case Token::Kind::Pad:
      return "[nop]";
    case Token::Kind::Atom:
      return std::string("[") + chem::symbol(t.element) + "]";
    case Token::Kind::BondAtom:
      return std::string("[") + (t.order == 1 ? "-" : order_prefix) +
             chem::symbol(t.element) + "]";
    case Token::Kind::Branch:
      return std::string("[Branch") + std::to_string(t.digits) + "]";
    case Token::Kind::Ring:
      return std::string("[") + order_prefix + "Ring" + std::to_string(t.digits) + "]";
  }
  return "[?]";
}

inline std::string to_string(const TokenSequence& seq) {
  std::string out;
  for (const auto& t : seq.tokens) out += token_name(t);
  return out;
}

inline std::vector<int> tokens_to_indices(const TokenSequence& seq) {
  std::vector<int> out;
  out.reserve(seq.tokens.size());
  for (const auto& t : seq.tokens) out.push_back(token_index(t));
  return out;
}

inline TokenSequence indices_to_tokens(std::span<const int> indices) {
  const auto& v = vocabulary();
  TokenSequence seq;
  seq.tokens.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || i >= static_cast<int>(v.size()))
      throw IndexOutOfVocabularyError("token index " + std::to_string(i) +
                                      " outside vocabulary of size " +
                                      std::to_string(v.size()));
    seq.tokens.push_back(v[static_cast<std::size_t>(i)]);
  }
  seq.fixed_length = static_cast<int>(seq.tokens.size());
  return seq;
}

inline TokenSequence pad_to(TokenSequence seq, int fixed_length) {
  if (fixed_length < static_cast<int>(seq.tokens.size()))
    throw std::invalid_argument("fixed_length shorter than token sequence");
  seq.tokens.resize(static_cast<std::size_t>(fixed_length), Token::pad());
  seq.fixed_length = fixed_length;
  return seq;
}

// ---------------------------------------------------------------------------
// Decoding. Total: every sequence over the vocabulary yields a connected,
// valence-correct molecule. A per-atom free-valence budget downgrades bond
// orders, drops rings and skips branches that no longer fit; derivation
// stops at the first pad or when the attachment point is saturated with no
// enclosing branch to fall back to.
// ---------------------------------------------------------------------------

namespace detail {

// Length digits are the vocabulary indices of the tokens following a Branch
// or Ring marker, shifted down by one so the pad index never encodes a
// digit: index i in 1..V-1 carries value i-1 in base V-1. A pad (or a
// missing token) in digit position stops the derivation, which keeps
// decoding invariant under pad-extension.
inline long long region_length(std::span<const Token> toks, std::size_t pos, int ndigits,
                               bool* ok) {
  const long long base = vocabulary_size() - 1;
  long long value = 0;
  for (int k = 0; k < ndigits; ++k) {
    if (pos + static_cast<std::size_t>(k) >= toks.size() ||
        toks[pos + static_cast<std::size_t>(k)].kind == Token::Kind::Pad) {
      *ok = false;
      return 0;
    }
    value = value * base + (token_index(toks[pos + static_cast<std::size_t>(k)]) - 1);
  }
  *ok = true;
  return value + 1;
}

}  // namespace detail

inline chem::Molecule decode(std::span<const Token> toks) {
  std::vector<chem::Element> atoms;
  std::vector<chem::Bond> bonds;
  std::vector<int> remaining;
  int cur = -1;

  struct Frame {
    std::size_t end_pos;
    int saved_cur;
  };
  std::vector<Frame> stack;

  auto bond_exists = [&](int a, int b) {
    const int lo = std::min(a, b), hi = std::max(a, b);
    for (const auto& bd : bonds)
      if (bd.a == lo && bd.b == hi) return true;
    return false;
  };

  std::size_t pos = 0;
  while (pos < toks.size()) {
    while (!stack.empty() && pos >= stack.back().end_pos) {
      cur = stack.back().saved_cur;
      stack.pop_back();
    }
    const Token& t = toks[pos];

    if (t.kind == Token::Kind::Pad) break;

    if (t.kind == Token::Kind::Atom || t.kind == Token::Kind::BondAtom) {
      const int want = t.kind == Token::Kind::Atom ? 1 : t.order;
      if (atoms.empty()) {
        atoms.push_back(t.element);
        remaining.push_back(chem::max_valence(t.element));
        cur = 0;
        ++pos;
        continue;
      }
      if (remaining[static_cast<std::size_t>(cur)] == 0) {
        if (stack.empty()) break;  // derivation dead, nothing can attach
        pos = stack.back().end_pos;
        continue;
      }
      const int order = std::min({want, remaining[static_cast<std::size_t>(cur)],
                                  chem::max_valence(t.element)});
      const int idx = static_cast<int>(atoms.size());
      atoms.push_back(t.element);
      bonds.push_back({cur, idx, order});
      remaining[static_cast<std::size_t>(cur)] -= order;
      remaining.push_back(chem::max_valence(t.element) - order);
      cur = idx;
      ++pos;
      continue;
    }

    if (t.kind == Token::Kind::Branch) {
      bool ok = false;
      const long long len = detail::region_length(toks, pos + 1, t.digits, &ok);
      if (!ok) break;  // digits run past the end
      const std::size_t start = pos + 1 + static_cast<std::size_t>(t.digits);
      const std::size_t enclosing = stack.empty() ? toks.size() : stack.back().end_pos;
      const std::size_t end = std::min(start + static_cast<std::size_t>(len), enclosing);
      // A branch needs spare valence for both the branch and the chain
      // continuing after it; otherwise the marker is skipped and the region
      // tokens derive in place.
      if (cur < 0 || remaining[static_cast<std::size_t>(cur)] < 2 || start >= end) {
        pos = start;
        continue;
      }
      stack.push_back({end, cur});
      pos = start;
      continue;
    }

    // Ring closure.
    {
      bool ok = false;
      const long long len = detail::region_length(toks, pos + 1, t.digits, &ok);
      if (!ok) break;
      pos += 1 + static_cast<std::size_t>(t.digits);
      if (cur < 0) continue;
      const int target = cur - static_cast<int>(len) - 1;
      if (target < 0 || target == cur || bond_exists(target, cur)) continue;
      const int order = std::min({t.order, remaining[static_cast<std::size_t>(cur)],
                                  remaining[static_cast<std::size_t>(target)]});
      if (order < 1) continue;
      bonds.push_back({target, cur, order});
      remaining[static_cast<std::size_t>(cur)] -= order;
      remaining[static_cast<std::size_t>(target)] -= order;
    }
  }

  if (atoms.empty()) {
    // An effectively empty derivation still yields a molecule.
    atoms.push_back(chem::Element::C);
  }
  return chem::Molecule(std::move(atoms), std::move(bonds));
}

inline chem::Molecule decode(const TokenSequence& seq) {
  return decode(std::span<const Token>(seq.tokens));
}

// ---------------------------------------------------------------------------
// Encoding. DFS over the molecule; tree children become chains/branches and
// back edges become ring closures, mirroring the decoder's derivation rules
// exactly so that decode(encode(m)) reproduces m.
// ---------------------------------------------------------------------------

namespace detail {

struct Encoder {
  const chem::Molecule& m;
  std::vector<std::vector<std::pair<int, int>>> adj;
  std::vector<char> visited;
  std::vector<int> emit_pos;  // atom -> derivation position
  int next_pos = 0;

  explicit Encoder(const chem::Molecule& mol) : m(mol) {
    const auto n = static_cast<std::size_t>(m.atom_count());
    adj.resize(n);
    for (const auto& bd : m.bonds()) {
      adj[static_cast<std::size_t>(bd.a)].emplace_back(bd.b, bd.order);
      adj[static_cast<std::size_t>(bd.b)].emplace_back(bd.a, bd.order);
    }
    for (auto& lst : adj) std::sort(lst.begin(), lst.end());
    visited.assign(n, 0);
    emit_pos.assign(n, -1);
  }

  static void append_length(std::vector<Token>& out, Token base, long long length,
                            const char* what) {
    const long long b = vocabulary_size() - 1;  // digit base; pad never a digit
    if (length >= 1 && length <= b) {
      base.digits = 1;
      out.push_back(base);
      out.push_back(vocabulary()[static_cast<std::size_t>(length)]);
    } else if (length > b && length <= b * b) {
      base.digits = 2;
      out.push_back(base);
      out.push_back(vocabulary()[static_cast<std::size_t>((length - 1) / b + 1)]);
      out.push_back(vocabulary()[static_cast<std::size_t>((length - 1) % b + 1)]);
    } else {
      throw UnencodableError(std::string(what) + " length " + std::to_string(length) +
                             " exceeds the two-digit limit");
    }
  }

  void emit(int v, int parent, int order, std::vector<Token>& out) {
    visited[static_cast<std::size_t>(v)] = 1;
    emit_pos[static_cast<std::size_t>(v)] = next_pos++;
    out.push_back(parent < 0 || order == 1 ? Token::atom(m.atom(v))
                                           : Token::bond_atom(order, m.atom(v)));

    // Ring closures to ancestors.
    for (const auto& [w, o] : adj[static_cast<std::size_t>(v)]) {
      if (w == parent || !visited[static_cast<std::size_t>(w)]) continue;
      const long long gap = emit_pos[static_cast<std::size_t>(v)] -
                            emit_pos[static_cast<std::size_t>(w)] - 1;
      append_length(out, Token::ring(o, 1), gap, "ring");
    }

    std::vector<std::pair<int, int>> children;
    for (const auto& [w, o] : adj[static_cast<std::size_t>(v)])
      if (!visited[static_cast<std::size_t>(w)]) children.emplace_back(w, o);
    for (std::size_t i = 0; i < children.size(); ++i) {
      const auto [w, o] = children[i];
      if (visited[static_cast<std::size_t>(w)]) continue;  // claimed via a ring path
      std::vector<Token> sub;
      emit(w, v, o, sub);
      const bool more_children = [&] {
        for (std::size_t j = i + 1; j < children.size(); ++j)
          if (!visited[static_cast<std::size_t>(children[j].first)]) return true;
        return false;
      }();
      if (more_children) {
        append_length(out, Token::branch(1), static_cast<long long>(sub.size()), "branch");
      }
      out.insert(out.end(), sub.begin(), sub.end());
    }
  }
};

}  // namespace detail

inline TokenSequence encode(const chem::Molecule& m) {
  if (m.atom_count() == 0) throw std::invalid_argument("cannot encode an empty molecule");
  if (!chem::check_valence(m))
    throw std::invalid_argument("cannot encode a valence-violating molecule");
  if (!chem::connected(m))
    throw std::invalid_argument("cannot encode a disconnected molecule");
  for (int i = 0; i < m.atom_count(); ++i)
    if (m.atom(i) == chem::Element::S)
      throw UnencodableError("element 'S' is outside the token vocabulary");

  detail::Encoder enc(m);
  std::vector<Token> out;
  enc.emit(0, -1, 1, out);
  TokenSequence seq;
  seq.tokens = std::move(out);
  seq.fixed_length = static_cast<int>(seq.tokens.size());
  return seq;
}

}  // namespace molgen::selfies
