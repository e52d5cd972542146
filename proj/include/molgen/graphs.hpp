#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "molgen/chem.hpp"

namespace molgen::graphs {

class TooManyAtomsError : public std::runtime_error {
 public:
  explicit TooManyAtomsError(const std::string& what) : std::runtime_error(what) {}
};

class ElementNotInVocabularyError : public std::runtime_error {
 public:
  explicit ElementNotInVocabularyError(const std::string& what)
      : std::runtime_error(what) {}
};

/// Tensor layout parameters. Node channels are the leading elements of
/// {C, N, O, F, S} with PAD as the last channel; edge channel 0 is no-bond
/// and channels 1..3 are single/double/triple, so the channel index doubles
/// as the bond order.
struct GraphSpec {
  int max_atoms = 9;
  int node_types = 5;
  int edge_types = 4;

  void validate() const {
    if (max_atoms < 1) throw std::invalid_argument("max_atoms must be >= 1");
    if (node_types < 2 || node_types > chem::kElementCount + 1)
      throw std::invalid_argument("node_types must be in [2, 6]");
    if (edge_types < 2 || edge_types > 4)
      throw std::invalid_argument("edge_types must be in [2, 4]");
  }

  int pad_index() const { return node_types - 1; }

  chem::Element element_of(int node_index) const {
    return static_cast<chem::Element>(node_index);
  }

  int node_index_of(chem::Element e) const {
    const int idx = static_cast<int>(e);
    if (idx >= node_types - 1)
      throw ElementNotInVocabularyError(std::string("element '") + chem::symbol(e) +
                                        "' not in the node vocabulary");
    return idx;
  }
};

/// Dense one-hot pair: node matrix X (N x D) and adjacency tensor
/// A (N x N x Y), stored row-major.
struct GraphTensors {
  int n = 0, d = 0, y = 0;
  std::vector<double> x;  // n*d
  std::vector<double> a;  // n*n*y

  GraphTensors() = default;
  GraphTensors(int n_, int d_, int y_)
      : n(n_), d(d_), y(y_),
        x(static_cast<std::size_t>(n_) * static_cast<std::size_t>(d_), 0.0),
        a(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_) *
              static_cast<std::size_t>(y_),
          0.0) {}

  double& xat(int i, int k) { return x[static_cast<std::size_t>(i * d + k)]; }
  double xat(int i, int k) const { return x[static_cast<std::size_t>(i * d + k)]; }
  double& aat(int i, int j, int k) {
    return a[static_cast<std::size_t>((i * n + j) * y + k)];
  }
  double aat(int i, int j, int k) const {
    return a[static_cast<std::size_t>((i * n + j) * y + k)];
  }
};

inline GraphTensors featurize(const chem::Molecule& m, const GraphSpec& spec) {
  spec.validate();
  if (m.atom_count() > spec.max_atoms)
    throw TooManyAtomsError("molecule has " + std::to_string(m.atom_count()) +
                            " atoms, spec allows " + std::to_string(spec.max_atoms));
  GraphTensors g(spec.max_atoms, spec.node_types, spec.edge_types);
  for (int i = 0; i < spec.max_atoms; ++i) {
    const int k = i < m.atom_count() ? spec.node_index_of(m.atom(i)) : spec.pad_index();
    g.xat(i, k) = 1.0;
  }
  for (int i = 0; i < spec.max_atoms; ++i)
    for (int j = 0; j < spec.max_atoms; ++j) g.aat(i, j, 0) = 1.0;
  for (const auto& bd : m.bonds()) {
    if (bd.order >= spec.edge_types)
      throw std::invalid_argument("bond order outside the edge vocabulary");
    g.aat(bd.a, bd.b, 0) = 0.0;
    g.aat(bd.b, bd.a, 0) = 0.0;
    g.aat(bd.a, bd.b, bd.order) = 1.0;
    g.aat(bd.b, bd.a, bd.order) = 1.0;
  }
  return g;
}

/// Inverse of featurize for one-hot tensors: drops PAD rows, no-bond pairs
/// and bonds touching PAD. The result can violate valence; that is for the
/// validity metric to judge, not this function.
inline chem::Molecule defeaturize(const GraphTensors& g, const GraphSpec& spec) {
  spec.validate();
  auto row_argmax = [&](int i) {
    int best = 0;
    for (int k = 1; k < g.d; ++k)
      if (g.xat(i, k) > g.xat(i, best)) best = k;
    return best;
  };
  auto pair_argmax = [&](int i, int j) {
    int best = 0;
    for (int k = 1; k < g.y; ++k)
      if (g.aat(i, j, k) > g.aat(i, j, best)) best = k;
    return best;
  };

  std::vector<int> compact(static_cast<std::size_t>(g.n), -1);
  std::vector<chem::Element> atoms;
  for (int i = 0; i < g.n; ++i) {
    const int k = row_argmax(i);
    if (k == spec.pad_index()) continue;
    compact[static_cast<std::size_t>(i)] = static_cast<int>(atoms.size());
    atoms.push_back(spec.element_of(k));
  }
  std::vector<chem::Bond> bonds;
  for (int i = 0; i < g.n; ++i) {
    if (compact[static_cast<std::size_t>(i)] < 0) continue;
    for (int j = i + 1; j < g.n; ++j) {
      if (compact[static_cast<std::size_t>(j)] < 0) continue;
      const int k = pair_argmax(i, j);
      if (k == 0) continue;
      bonds.push_back({compact[static_cast<std::size_t>(i)],
                       compact[static_cast<std::size_t>(j)], k});
    }
  }
  return chem::Molecule(std::move(atoms), std::move(bonds));
}

/// Discretizes continuous generator outputs: symmetrizes A by averaging the
/// (i,j) and (j,i) channel vectors, takes per-row / per-pair argmax (ties to
/// the lowest index), forces the diagonal to no-bond and clears every edge
/// touching a PAD row.
inline GraphTensors one_hot_argmax(const GraphTensors& in, const GraphSpec& spec) {
  spec.validate();
  GraphTensors g(in.n, in.d, in.y);

  std::vector<char> is_pad(static_cast<std::size_t>(in.n), 0);
  for (int i = 0; i < in.n; ++i) {
    int best = 0;
    for (int k = 1; k < in.d; ++k)
      if (in.xat(i, k) > in.xat(i, best)) best = k;
    g.xat(i, best) = 1.0;
    is_pad[static_cast<std::size_t>(i)] = best == spec.pad_index();
  }
  for (int i = 0; i < in.n; ++i) {
    for (int j = 0; j < in.n; ++j) {
      int best = 0;
      if (i != j && !is_pad[static_cast<std::size_t>(i)] &&
          !is_pad[static_cast<std::size_t>(j)]) {
        double best_v = -HUGE_VAL;
        for (int k = 0; k < in.y; ++k) {
          const double v = 0.5 * (in.aat(i, j, k) + in.aat(j, i, k));
          if (v > best_v) {
            best_v = v;
            best = k;
          }
        }
      }
      g.aat(i, j, best) = 1.0;
    }
  }
  return g;
}

}  // namespace molgen::graphs
