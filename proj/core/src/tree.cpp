#include "bpcf/tree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <stdexcept>

namespace bpcf {

CutpointGrid CutpointGrid::from_design(const Matrix& design, int max_cuts) {
  if (max_cuts < 1) throw std::invalid_argument("from_design: max_cuts must be >= 1");
  CutpointGrid grid;
  grid.cuts_.resize(design.cols());
  const std::size_t n = design.rows();
  std::vector<double> values(n);
  for (std::size_t j = 0; j < design.cols(); ++j) {
    for (std::size_t i = 0; i < n; ++i) values[i] = design(i, j);
    std::sort(values.begin(), values.end());
    std::vector<double> distinct;
    for (double v : values) {
      if (distinct.empty() || v != distinct.back()) distinct.push_back(v);
    }
    auto& cuts = grid.cuts_[j];
    if (distinct.size() < 2) continue;  // constant column, nothing to split on
    const std::size_t gaps = distinct.size() - 1;
    if (gaps <= static_cast<std::size_t>(max_cuts)) {
      cuts.reserve(gaps);
      for (std::size_t g = 0; g < gaps; ++g) {
        cuts.push_back(0.5 * (distinct[g] + distinct[g + 1]));
      }
    } else {
      // Quantiles of the observed values, each mapped to the midpoint above
      // the distinct value containing that quantile.
      std::set<std::size_t> chosen;
      for (int k = 1; k <= max_cuts; ++k) {
        const double pos = static_cast<double>(k) / (max_cuts + 1) * (n - 1);
        const double q = values[static_cast<std::size_t>(pos)];
        const auto it = std::upper_bound(distinct.begin(), distinct.end(), q);
        std::size_t g = static_cast<std::size_t>(it - distinct.begin());
        if (g == 0) g = 1;
        chosen.insert(std::min(g - 1, gaps - 1));
      }
      cuts.reserve(chosen.size());
      for (std::size_t g : chosen) cuts.push_back(0.5 * (distinct[g] + distinct[g + 1]));
    }
  }
  return grid;
}

int Tree::n_leaves() const {
  int c = 0;
  for (const auto& nd : nodes_) c += nd.is_leaf();
  return c;
}

int Tree::max_depth() const {
  int d = 0;
  for (const auto& nd : nodes_) d = std::max(d, nd.depth);
  return d;
}

double Tree::evaluate(std::span<const double> row) const {
  return nodes_[leaf_for(row)].leaf;
}

int Tree::leaf_for(std::span<const double> row) const {
  int id = 0;
  while (!nodes_[id].is_leaf()) {
    const TreeNode& nd = nodes_[id];
    id = row[nd.var] < nd.cut ? nd.left : nd.right;
  }
  return id;
}

void Tree::predict(const Matrix& design, std::span<double> out) const {
  for (std::size_t i = 0; i < design.rows(); ++i) out[i] = evaluate(design.row(i));
}

std::vector<int> Tree::leaf_ids() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    if (nodes_[i].is_leaf()) out.push_back(i);
  }
  return out;
}

std::vector<int> Tree::interior_ids() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    if (!nodes_[i].is_leaf()) out.push_back(i);
  }
  return out;
}

std::vector<int> Tree::prunable_ids() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i) {
    const TreeNode& nd = nodes_[i];
    if (!nd.is_leaf() && nodes_[nd.left].is_leaf() && nodes_[nd.right].is_leaf()) {
      out.push_back(i);
    }
  }
  return out;
}

bool Tree::is_ancestor(int candidate, int id) const {
  int p = nodes_[id].parent;
  while (p >= 0) {
    if (p == candidate) return true;
    p = nodes_[p].parent;
  }
  return false;
}

void Tree::split_leaf(int leaf_id, int var, double cut) {
  TreeNode& nd = nodes_[leaf_id];
  if (!nd.is_leaf()) throw std::logic_error("split_leaf: node is interior");
  const int d = nd.depth;
  nd.var = var;
  nd.cut = cut;
  nd.leaf = 0.0;
  nd.left = size();
  nd.right = size() + 1;
  TreeNode child;
  child.parent = leaf_id;
  child.depth = d + 1;
  nodes_.push_back(child);
  nodes_.push_back(child);
}

namespace {

// Removes slot k from a flat node vector by moving the last node into it.
// Returns the index the previous last node now occupies, or -1 if none moved.
int remove_slot(std::vector<TreeNode>& nodes, int k) {
  const int last = static_cast<int>(nodes.size()) - 1;
  int moved = -1;
  if (k != last) {
    nodes[k] = nodes[last];
    const TreeNode& m = nodes[k];
    if (m.parent >= 0) {
      if (nodes[m.parent].left == last) {
        nodes[m.parent].left = k;
      } else {
        nodes[m.parent].right = k;
      }
    }
    if (m.left >= 0) nodes[m.left].parent = k;
    if (m.right >= 0) nodes[m.right].parent = k;
    moved = last;
  }
  nodes.pop_back();
  return moved;
}

}  // namespace

int Tree::collapse(int parent_id) {
  TreeNode& p = nodes_[parent_id];
  if (p.is_leaf() || !nodes_[p.left].is_leaf() || !nodes_[p.right].is_leaf()) {
    throw std::logic_error("collapse: node has non-leaf children");
  }
  const int hi = std::max(p.left, p.right);
  const int lo = std::min(p.left, p.right);
  p.var = -1;
  p.cut = 0.0;
  p.leaf = 0.0;
  p.left = p.right = -1;
  int idx = parent_id;
  if (remove_slot(nodes_, hi) == idx) idx = hi;
  if (remove_slot(nodes_, lo) == idx) idx = lo;
  return idx;
}

std::string Tree::serialize() const {
  std::string out;
  serialize_node(0, out);
  return out;
}

void Tree::serialize_node(int id, std::string& out) const {
  char buf[96];
  const TreeNode& nd = nodes_[id];
  if (nd.is_leaf()) {
    std::snprintf(buf, sizeof buf, "L %a\n", nd.leaf);
    out += buf;
  } else {
    std::snprintf(buf, sizeof buf, "I %d %a\n", nd.var, nd.cut);
    out += buf;
    serialize_node(nd.left, out);
    serialize_node(nd.right, out);
  }
}

namespace {

struct LineCursor {
  std::string_view text;
  std::size_t pos = 0;
  std::string_view next() {
    while (pos < text.size() && (text[pos] == '\n' || text[pos] == '\r')) ++pos;
    if (pos >= text.size()) throw std::runtime_error("tree parse: unexpected end");
    const std::size_t start = pos;
    while (pos < text.size() && text[pos] != '\n') ++pos;
    return text.substr(start, pos - start);
  }
  bool done() {
    while (pos < text.size() && (text[pos] == '\n' || text[pos] == '\r' || text[pos] == ' ')) ++pos;
    return pos >= text.size();
  }
};

int parse_node(LineCursor& cur, std::vector<TreeNode>& nodes, int parent, int depth) {
  const std::string_view line = cur.next();
  const int id = static_cast<int>(nodes.size());
  nodes.emplace_back();
  nodes[id].parent = parent;
  nodes[id].depth = depth;
  if (line.size() >= 1 && line[0] == 'L') {
    char* end = nullptr;
    nodes[id].leaf = std::strtod(line.data() + 1, &end);
    if (end == line.data() + 1) throw std::runtime_error("tree parse: bad leaf line");
  } else if (line.size() >= 1 && line[0] == 'I') {
    char* end = nullptr;
    const long var = std::strtol(line.data() + 1, &end, 10);
    const double cut = std::strtod(end, &end);
    nodes[id].var = static_cast<int>(var);
    nodes[id].cut = cut;
    const int left = parse_node(cur, nodes, id, depth + 1);
    const int right = parse_node(cur, nodes, id, depth + 1);
    nodes[id].left = left;
    nodes[id].right = right;
  } else {
    throw std::runtime_error("tree parse: unknown node kind");
  }
  return id;
}

}  // namespace

Tree Tree::deserialize(std::string_view text) {
  LineCursor cur{text};
  Tree t;
  t.nodes_.clear();
  parse_node(cur, t.nodes_, -1, 0);
  if (!cur.done()) throw std::runtime_error("tree parse: trailing content");
  return t;
}

double split_probability(int depth, double alpha, double beta) {
  return alpha * std::pow(1.0 + depth, -beta);
}

namespace {

// Inclusive index range of a variable's valid cutpoints at a node, given the
// sorted order statistics of the node's rows: a cut c keeps min_leaf_n rows
// on each side iff v_(m) < c <= v_(k-m+1).
struct CutRange {
  int lo = 0;
  int count = 0;
};

struct LocalRules {
  std::vector<CutRange> per_var;
  int usable = 0;
};

LocalRules local_rules(const std::vector<int>& rows, const CutpointGrid& grid,
                       const Matrix& design, int min_leaf_n,
                       std::vector<double>& scratch) {
  LocalRules out;
  out.per_var.resize(grid.n_vars());
  const int k = static_cast<int>(rows.size());
  if (k < 2 * min_leaf_n) return out;
  for (int j = 0; j < grid.n_vars(); ++j) {
    const auto& cuts = grid.cuts(j);
    if (cuts.empty()) continue;
    scratch.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) scratch[r] = design(rows[r], j);
    std::nth_element(scratch.begin(), scratch.begin() + (min_leaf_n - 1), scratch.end());
    const double vm = scratch[min_leaf_n - 1];
    std::nth_element(scratch.begin(), scratch.begin() + (k - min_leaf_n), scratch.end());
    const double vkm = scratch[k - min_leaf_n];
    const auto lo_it = std::upper_bound(cuts.begin(), cuts.end(), vm);
    const auto hi_it = std::upper_bound(cuts.begin(), cuts.end(), vkm);
    const int count = static_cast<int>(hi_it - lo_it);
    if (count > 0) {
      out.per_var[j] = {static_cast<int>(lo_it - cuts.begin()), count};
      ++out.usable;
    }
  }
  return out;
}

std::vector<int> rows_at_leaf(std::span<const int> leaf_of, int leaf) {
  std::vector<int> out;
  for (std::size_t i = 0; i < leaf_of.size(); ++i) {
    if (leaf_of[i] == leaf) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> rows_under(const Tree& tree, std::span<const int> leaf_of, int node) {
  std::vector<int> out;
  for (std::size_t i = 0; i < leaf_of.size(); ++i) {
    if (leaf_of[i] == node || tree.is_ancestor(node, leaf_of[i])) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}

// Uniform draw over the usable variables, returned as a variable index.
int pick_usable_var(const LocalRules& rules, Rng& rng) {
  int target = rng.uniform_int(rules.usable);
  for (int j = 0; j < static_cast<int>(rules.per_var.size()); ++j) {
    if (rules.per_var[j].count > 0 && target-- == 0) return j;
  }
  throw std::logic_error("pick_usable_var: inconsistent rule table");
}

// Cut-count for an existing rule's variable.  A rule whose variable has lost
// all valid cuts under the current design (possible when modifier columns
// are refreshed between sweeps) is priced as a single-cut rule so that the
// returned log ratios stay finite.
int old_rule_count(const LocalRules& rules, int var) {
  const int c = rules.per_var[var].count;
  return c > 0 ? c : 1;
}

int descend(const Tree& tree, int from, std::span<const double> row) {
  int id = from;
  while (!tree.node(id).is_leaf()) {
    const TreeNode& nd = tree.node(id);
    id = row[nd.var] < nd.cut ? nd.left : nd.right;
  }
  return id;
}

}  // namespace

Proposal propose_move(const Tree& tree, const CutpointGrid& grid,
                      const Matrix& design, std::span<const int> leaf_of,
                      const TreePrior& prior, Rng& rng) {
  Proposal prop;
  const double u = rng.uniform();
  prop.kind = u < prior.p_grow              ? MoveKind::grow
              : u < prior.p_grow + prior.p_prune ? MoveKind::prune
                                                 : MoveKind::change;
  std::vector<double> scratch;

  if (prop.kind == MoveKind::grow) {
    const std::vector<int> leaves = tree.leaf_ids();
    const int target = leaves[rng.uniform_int(static_cast<int>(leaves.size()))];
    const std::vector<int> rows = rows_at_leaf(leaf_of, target);
    const LocalRules rules = local_rules(rows, grid, design, prior.min_leaf_n, scratch);
    if (rules.usable == 0) return prop;
    const int var = pick_usable_var(rules, rng);
    const CutRange range = rules.per_var[var];
    const double cut = grid.cuts(var)[range.lo + rng.uniform_int(range.count)];

    prop.tree = tree;
    prop.tree.split_leaf(target, var, cut);
    prop.node_old = prop.node_new = target;

    const int d = tree.node(target).depth;
    const double ps_d = split_probability(d, prior.alpha, prior.beta);
    const double ps_d1 = split_probability(d + 1, prior.alpha, prior.beta);
    const double log_rule = -std::log(static_cast<double>(rules.usable)) -
                            std::log(static_cast<double>(range.count));
    const int b = static_cast<int>(leaves.size());
    const int w2_new = static_cast<int>(prop.tree.prunable_ids().size());

    prop.log_tree_prior_ratio =
        std::log(ps_d) + 2.0 * std::log1p(-ps_d1) - std::log1p(-ps_d) + log_rule;
    prop.log_transition_ratio = std::log(prior.p_prune) - std::log(static_cast<double>(w2_new)) -
                                (std::log(prior.p_grow) - std::log(static_cast<double>(b)) + log_rule);
    prop.log_structural_ratio =
        std::log(ps_d) + 2.0 * std::log1p(-ps_d1) - std::log1p(-ps_d) +
        std::log(prior.p_prune) - std::log(prior.p_grow) +
        std::log(static_cast<double>(b)) - std::log(static_cast<double>(w2_new));
    prop.valid = true;
    return prop;
  }

  if (prop.kind == MoveKind::prune) {
    const std::vector<int> prunable = tree.prunable_ids();
    if (prunable.empty()) return prop;
    const int target = prunable[rng.uniform_int(static_cast<int>(prunable.size()))];
    std::vector<int> rows = rows_at_leaf(leaf_of, tree.node(target).left);
    {
      std::vector<int> right_rows = rows_at_leaf(leaf_of, tree.node(target).right);
      rows.insert(rows.end(), right_rows.begin(), right_rows.end());
    }
    const LocalRules rules = local_rules(rows, grid, design, prior.min_leaf_n, scratch);
    const int usable = rules.usable > 0 ? rules.usable : 1;
    const int count_old = old_rule_count(rules, tree.node(target).var);
    const double log_rule_old = -std::log(static_cast<double>(usable)) -
                                std::log(static_cast<double>(count_old));

    prop.tree = tree;
    prop.node_old = target;
    prop.node_new = prop.tree.collapse(target);

    const int d = tree.node(target).depth;
    const double ps_d = split_probability(d, prior.alpha, prior.beta);
    const double ps_d1 = split_probability(d + 1, prior.alpha, prior.beta);
    const int w2 = static_cast<int>(prunable.size());
    const int b_new = prop.tree.n_leaves();

    prop.log_tree_prior_ratio =
        std::log1p(-ps_d) - std::log(ps_d) - 2.0 * std::log1p(-ps_d1) - log_rule_old;
    prop.log_transition_ratio =
        std::log(prior.p_grow) - std::log(static_cast<double>(b_new)) + log_rule_old -
        (std::log(prior.p_prune) - std::log(static_cast<double>(w2)));
    prop.log_structural_ratio =
        std::log1p(-ps_d) - std::log(ps_d) - 2.0 * std::log1p(-ps_d1) +
        std::log(prior.p_grow) - std::log(prior.p_prune) +
        std::log(static_cast<double>(w2)) - std::log(static_cast<double>(b_new));
    prop.valid = true;
    return prop;
  }

  // change
  const std::vector<int> interior = tree.interior_ids();
  if (interior.empty()) return prop;
  const int target = interior[rng.uniform_int(static_cast<int>(interior.size()))];
  const std::vector<int> rows = rows_under(tree, leaf_of, target);
  const LocalRules rules = local_rules(rows, grid, design, prior.min_leaf_n, scratch);
  if (rules.usable == 0) return prop;
  const int var = pick_usable_var(rules, rng);
  const CutRange range = rules.per_var[var];
  const double cut = grid.cuts(var)[range.lo + rng.uniform_int(range.count)];
  const int count_old = old_rule_count(rules, tree.node(target).var);

  prop.tree = tree;
  prop.tree.set_rule(target, var, cut);
  prop.node_old = prop.node_new = target;

  // A changed rule must leave every leaf below the node with enough rows.
  {
    std::vector<int> leaf_counts(prop.tree.size(), 0);
    for (int i : rows) ++leaf_counts[descend(prop.tree, target, design.row(i))];
    for (int id = 0; id < prop.tree.size(); ++id) {
      const bool below = id == target || prop.tree.is_ancestor(target, id);
      if (below && prop.tree.node(id).is_leaf() && leaf_counts[id] < prior.min_leaf_n) {
        prop.valid = false;
        return prop;
      }
    }
  }

  prop.log_tree_prior_ratio = std::log(static_cast<double>(count_old)) -
                              std::log(static_cast<double>(range.count));
  prop.log_transition_ratio = -prop.log_tree_prior_ratio;
  prop.log_structural_ratio = 0.0;
  prop.valid = true;
  return prop;
}

void assign_leaves(const Tree& tree, const Matrix& design, std::span<int> out) {
  for (std::size_t i = 0; i < design.rows(); ++i) out[i] = tree.leaf_for(design.row(i));
}

}  // namespace bpcf
