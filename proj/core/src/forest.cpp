#include "bpcf/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "bpcf/special.hpp"

namespace bpcf {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454836;
}

NoisePrior NoisePrior::calibrated(double response_sd, double nu, double quantile) {
  NoisePrior p;
  p.nu = nu;
  p.lambda = solve_noise_lambda(nu, response_sd, quantile);
  return p;
}

Forest::Forest(int n_trees) : trees_(n_trees) {}

std::vector<double> Forest::predict(const Matrix& design) const {
  std::vector<double> out(design.rows(), 0.0);
  for (const Tree& t : trees_) {
    for (std::size_t i = 0; i < design.rows(); ++i) out[i] += t.evaluate(design.row(i));
  }
  eval_count_ += design.rows();
  return out;
}

double Forest::predict_row(std::span<const double> row) const {
  double s = 0.0;
  for (const Tree& t : trees_) s += t.evaluate(row);
  ++eval_count_;
  return s;
}

std::vector<double> Forest::leaf_values() const {
  std::vector<double> out;
  for (const Tree& t : trees_) {
    for (int id : t.leaf_ids()) out.push_back(t.node(id).leaf);
  }
  return out;
}

void serialize_forest(const Forest& forest, double sigma, std::ostream& os) {
  char buf[96];
  os << "bpcf-forest v1\n";
  std::snprintf(buf, sizeof buf, "sigma %a\n", sigma);
  os << buf;
  std::snprintf(buf, sizeof buf, "leaf_scale %a\n", forest.leaf_scale());
  os << buf;
  os << "trees " << forest.n_trees() << "\n";
  for (const Tree& t : forest.trees()) {
    os << "tree " << t.size() << "\n";
    os << t.serialize();
  }
}

std::pair<Forest, double> deserialize_forest(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "bpcf-forest v1") {
    throw std::runtime_error("forest parse: bad header");
  }
  auto read_tagged = [&](const char* tag) {
    if (!std::getline(is, line)) throw std::runtime_error("forest parse: truncated");
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word != tag) throw std::runtime_error(std::string("forest parse: expected ") + tag);
    std::string value;
    ls >> value;
    return value;
  };
  const double sigma = std::strtod(read_tagged("sigma").c_str(), nullptr);
  const double leaf_scale = std::strtod(read_tagged("leaf_scale").c_str(), nullptr);
  const int n_trees = std::atoi(read_tagged("trees").c_str());
  Forest forest(n_trees);
  forest.set_leaf_scale(leaf_scale);
  for (int h = 0; h < n_trees; ++h) {
    const int n_nodes = std::atoi(read_tagged("tree").c_str());
    std::string block;
    for (int k = 0; k < n_nodes; ++k) {
      if (!std::getline(is, line)) throw std::runtime_error("forest parse: truncated tree");
      block += line;
      block += '\n';
    }
    forest.trees()[h] = Tree::deserialize(block);
  }
  return {std::move(forest), sigma};
}

double log_marginal_leaf(int n, double sum_resid, double sum_sq_resid,
                         double sigma, double sigma0) {
  if (n == 0) return 0.0;
  const double s2 = sigma * sigma;
  const double t2 = sigma0 * sigma0;
  const double denom = s2 + n * t2;
  return -0.5 * n * (kLogTwoPi + std::log(s2)) + 0.5 * std::log(s2 / denom) -
         sum_sq_resid / (2.0 * s2) + t2 * sum_resid * sum_resid / (2.0 * s2 * denom);
}

double update_sigma(std::span<const double> residuals, const NoisePrior& prior, Rng& rng) {
  double ss = 0.0;
  for (double r : residuals) ss += r * r;
  const double shape = 0.5 * (prior.nu + residuals.size());
  const double scale = 0.5 * (prior.nu * prior.lambda + ss);
  return std::sqrt(rng.inverse_gamma(shape, scale));
}

namespace {

double leaf_scale_log_density(double s, double sum_sq, std::size_t n_leaves, double hc_scale) {
  if (s <= 0.0) return -std::numeric_limits<double>::infinity();
  const double r = s / hc_scale;
  return -static_cast<double>(n_leaves) * std::log(s) - sum_sq / (2.0 * s * s) -
         std::log1p(r * r);
}

}  // namespace

double update_leaf_scale(std::span<const double> leaf_values, double hc_scale,
                         double current, Rng& rng) {
  double sum_sq = 0.0;
  for (double v : leaf_values) sum_sq += v * v;
  const std::size_t J = leaf_values.size();
  constexpr double floor = 1e-12;
  const double x0 = std::max(current, floor);
  const double log_y = leaf_scale_log_density(x0, sum_sq, J, hc_scale) - rng.exponential(1.0);

  // Stepping out with fixed width, then shrinkage.
  const double w = hc_scale;
  double lo = x0 - w * rng.uniform();
  double hi = lo + w;
  for (int i = 0; i < 50 && lo > floor &&
                  leaf_scale_log_density(lo, sum_sq, J, hc_scale) > log_y;
       ++i) {
    lo -= w;
  }
  lo = std::max(lo, floor);
  for (int i = 0; i < 50 && leaf_scale_log_density(hi, sum_sq, J, hc_scale) > log_y; ++i) {
    hi += w;
  }
  for (int i = 0; i < 200; ++i) {
    const double x1 = rng.uniform(lo, hi);
    if (leaf_scale_log_density(x1, sum_sq, J, hc_scale) > log_y) return x1;
    if (x1 < x0) {
      lo = x1;
    } else {
      hi = x1;
    }
  }
  return x0;  // shrinkage exhausted; keep the current value
}

void SweepStats::add(const SweepStats& o) {
  for (int k = 0; k < 3; ++k) {
    accepted[k] += o.accepted[k];
    proposed[k] += o.proposed[k];
  }
}

double SweepStats::accept_rate() const {
  std::int64_t acc = 0, tot = 0;
  for (int k = 0; k < 3; ++k) {
    acc += accepted[k];
    tot += proposed[k];
  }
  return tot > 0 ? static_cast<double>(acc) / static_cast<double>(tot) : 0.0;
}

namespace {

struct LeafStats {
  std::unordered_map<int, std::pair<int, double>> by_leaf;  // leaf id -> (n, sum)
  void add(int leaf, double r) {
    auto& e = by_leaf[leaf];
    ++e.first;
    e.second += r;
  }
};

}  // namespace

SweepStats backfit_sweep(Forest& forest, std::span<const double> response,
                         std::span<const double> fixed_offset, const Matrix& design,
                         const CutpointGrid& grid, const TreePrior& prior,
                         double sigma, Rng& rng) {
  const std::size_t n = design.rows();
  if (response.size() != n || fixed_offset.size() != n) {
    throw std::invalid_argument("backfit_sweep: length mismatch");
  }
  SweepStats stats;
  const double sigma0 = forest.leaf_scale();

  // Per-tree prediction cache and the running forest total.
  const int H = forest.n_trees();
  std::vector<std::vector<double>> preds(H, std::vector<double>(n));
  std::vector<double> total(n, 0.0);
  for (int h = 0; h < H; ++h) {
    forest.trees()[h].predict(design, preds[h]);
    for (std::size_t i = 0; i < n; ++i) total[i] += preds[h][i];
  }

  std::vector<double> resid(n);
  std::vector<int> leaf_of(n);

  for (int h = 0; h < H; ++h) {
    Tree& tree = forest.trees()[h];
    for (std::size_t i = 0; i < n; ++i) {
      resid[i] = response[i] - fixed_offset[i] - (total[i] - preds[h][i]);
      if (!std::isfinite(resid[i])) {
        throw std::runtime_error("backfit_sweep: non-finite residual");
      }
    }
    assign_leaves(tree, design, leaf_of);

    Proposal prop = propose_move(tree, grid, design, leaf_of, prior, rng);
    ++stats.proposed[static_cast<int>(prop.kind)];
    if (prop.valid) {
      // Marginal-likelihood difference over the affected subtree only.
      LeafStats old_stats, new_stats;
      for (std::size_t i = 0; i < n; ++i) {
        const int leaf = leaf_of[i];
        if (leaf == prop.node_old || tree.is_ancestor(prop.node_old, leaf)) {
          old_stats.add(leaf, resid[i]);
          int id = prop.node_new;
          const auto row = design.row(i);
          while (!prop.tree.node(id).is_leaf()) {
            const TreeNode& nd = prop.tree.node(id);
            id = row[nd.var] < nd.cut ? nd.left : nd.right;
          }
          new_stats.add(id, resid[i]);
        }
      }
      // Sum-of-squares terms cancel between old and new (same affected rows),
      // so both sides pass 0 for them.
      auto sum_marginal = [&](const LeafStats& ls) {
        double out = 0.0;
        for (const auto& [leaf, e] : ls.by_leaf) {
          (void)leaf;
          out += log_marginal_leaf(e.first, e.second, 0.0, sigma, sigma0);
        }
        return out;
      };
      const double delta_lik = sum_marginal(new_stats) - sum_marginal(old_stats);
      const double log_alpha = delta_lik + prop.log_structural_ratio;
      if (std::log(rng.uniform()) < log_alpha) {
        tree = std::move(prop.tree);
        assign_leaves(tree, design, leaf_of);
        ++stats.accepted[static_cast<int>(prop.kind)];
      }
    }

    // Conjugate leaf redraw for every terminal node.
    std::unordered_map<int, std::pair<int, double>> by_leaf;
    for (std::size_t i = 0; i < n; ++i) {
      auto& e = by_leaf[leaf_of[i]];
      ++e.first;
      e.second += resid[i];
    }
    const double prec0 = 1.0 / (sigma0 * sigma0);
    const double prec_obs = 1.0 / (sigma * sigma);
    for (int id : tree.leaf_ids()) {
      const auto it = by_leaf.find(id);
      if (it == by_leaf.end()) {
        tree.set_leaf_value(id, rng.normal(0.0, sigma0));
      } else {
        const double prec = it->second.first * prec_obs + prec0;
        const double mean = it->second.second * prec_obs / prec;
        tree.set_leaf_value(id, rng.normal(mean, std::sqrt(1.0 / prec)));
      }
    }

    for (std::size_t i = 0; i < n; ++i) {
      const double v = tree.node(leaf_of[i]).leaf;
      total[i] += v - preds[h][i];
      preds[h][i] = v;
    }
  }
  return stats;
}

}  // namespace bpcf
