#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bpcf/matrix.hpp"
#include "bpcf/rng.hpp"

namespace bpcf {

// Candidate split thresholds per design column.  Thresholds are midpoints
// between adjacent distinct observed values, taken at up to `max_cuts`
// evenly spaced quantile positions and deduplicated, so every threshold lies
// strictly inside the column's observed range.  A binary column contributes
// the single midpoint of its two levels.
class CutpointGrid {
 public:
  static CutpointGrid from_design(const Matrix& design, int max_cuts = 100);

  const std::vector<double>& cuts(int var) const { return cuts_[var]; }
  int n_vars() const { return static_cast<int>(cuts_.size()); }

 private:
  std::vector<std::vector<double>> cuts_;
};

struct TreeNode {
  int var = -1;        // split variable, interior nodes only
  double cut = 0.0;    // rows with x[var] < cut go left; ties go right
  double leaf = 0.0;   // terminal value, leaves only
  int left = -1, right = -1, parent = -1;
  int depth = 0;
  bool is_leaf() const { return left < 0; }
};

// Binary regression tree stored as a flat node vector, root at index 0.
// Node ids are stable under grow; collapse() moves at most the two removed
// slots, so callers must not hold ids across a structural edit.
class Tree {
 public:
  Tree() : nodes_(1) {}

  const TreeNode& node(int id) const { return nodes_[id]; }
  int size() const { return static_cast<int>(nodes_.size()); }
  int n_leaves() const;
  int max_depth() const;

  double evaluate(std::span<const double> row) const;
  // Terminal node id reached by the row.
  int leaf_for(std::span<const double> row) const;
  void predict(const Matrix& design, std::span<double> out) const;

  std::vector<int> leaf_ids() const;
  std::vector<int> interior_ids() const;
  // Interior nodes whose children are both leaves.
  std::vector<int> prunable_ids() const;
  bool is_ancestor(int candidate, int id) const;

  void split_leaf(int leaf_id, int var, double cut);
  // Prunes a node whose children are both leaves; returns the node's index
  // after the removal compacts the vector (it can move).
  int collapse(int parent_id);
  void set_rule(int id, int var, double cut) {
    nodes_[id].var = var;
    nodes_[id].cut = cut;
  }
  void set_leaf_value(int id, double v) { nodes_[id].leaf = v; }

  // Line-oriented preorder text: "I <var> <cut>" / "L <value>" with hexfloat
  // numbers, exact round-trip through deserialize().
  std::string serialize() const;
  static Tree deserialize(std::string_view text);

 private:
  void serialize_node(int id, std::string& out) const;
  std::vector<TreeNode> nodes_;
};

// Prior probability that a node at the given depth is interior.
double split_probability(int depth, double alpha, double beta);

struct TreePrior {
  double alpha = 0.95;
  double beta = 2.0;
  double p_grow = 0.4;
  double p_prune = 0.4;
  double p_change = 0.2;
  int min_leaf_n = 5;
};

enum class MoveKind { grow, prune, change };

// A structural proposal.  `valid == false` means the sampled move kind had no
// legal realization (prune or change on a stump, no usable cutpoint, or a
// changed rule starving a downstream leaf); the caller counts it as a
// Metropolis-Hastings rejection and keeps the current tree.
//
// log_structural_ratio is the tree-prior ratio times the transition ratio
// with the rule-probability terms cancelled algebraically, which is the
// quantity the accept step needs and stays finite even when a rule priced in
// the separate fields has degenerated.
struct Proposal {
  MoveKind kind = MoveKind::grow;
  bool valid = false;
  Tree tree;
  int node_old = -1;  // affected subtree root in the current tree
  int node_new = -1;  // the same subtree root in the proposed tree
  double log_tree_prior_ratio = 0.0;
  double log_transition_ratio = 0.0;
  double log_structural_ratio = 0.0;
};

// Draws a grow/prune/change proposal for `tree` under the prior's move
// mixture.  `leaf_of[i]` must hold the terminal node id of design row i in
// the current tree.  Rule proposals are uniform over the variables with at
// least one cutpoint that leaves both children with min_leaf_n rows, then
// uniform over that variable's valid cutpoints, evaluated on the rows that
// reach the node being edited.
Proposal propose_move(const Tree& tree, const CutpointGrid& grid,
                      const Matrix& design, std::span<const int> leaf_of,
                      const TreePrior& prior, Rng& rng);

// Routes every design row through the tree; out[i] = terminal node id.
void assign_leaves(const Tree& tree, const Matrix& design, std::span<int> out);

}  // namespace bpcf
