// Microbenchmarks for the hot paths: single-tree prediction, one backfitting
// sweep, one full sampler iteration and the stratum estimator.  Fixtures are
// built once per benchmark and sized like a small real run, so the numbers
// track the cost a user sees per MCMC iteration.

#include <benchmark/benchmark.h>

#include <vector>

#include "bpcf/engine.hpp"
#include "bpcf/estimands.hpp"
#include "bpcf/forest.hpp"
#include "bpcf/rng.hpp"
#include "bpcf/simgen.hpp"
#include "bpcf/tree.hpp"

using namespace bpcf;

namespace {

Matrix random_design(int n, int p, Rng& rng) {
  Matrix design(n, p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) design(i, j) = rng.normal();
  }
  return design;
}

// A tree grown to the requested number of leaves by repeatedly splitting the
// first growable leaf, giving a deterministic unbalanced shape.
Tree grown_tree(int leaves, int p, Rng& rng) {
  Tree tree;
  while (tree.n_leaves() < leaves) {
    const std::vector<int> ids = tree.leaf_ids();
    tree.split_leaf(ids.front(), rng.uniform_int(p), rng.normal());
  }
  for (int id : tree.leaf_ids()) tree.set_leaf_value(id, rng.normal());
  return tree;
}

void bm_tree_predict(benchmark::State& state) {
  Rng rng(11);
  const int n = 1000;
  const Matrix design = random_design(n, 8, rng);
  const Tree tree = grown_tree(static_cast<int>(state.range(0)), 8, rng);
  std::vector<double> out(n);
  for (auto _ : state) {
    tree.predict(design, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

void bm_backfit_sweep(benchmark::State& state) {
  Rng rng(13);
  const int n = 500;
  const Matrix design = random_design(n, 8, rng);
  const CutpointGrid grid = CutpointGrid::from_design(design);
  Forest forest(static_cast<int>(state.range(0)));
  forest.set_leaf_scale(0.2);
  std::vector<double> response(n), offset(n, 0.0);
  for (int i = 0; i < n; ++i) response[i] = design(i, 0) + 0.3 * rng.normal();
  const TreePrior prior{0.95, 2.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        backfit_sweep(forest, response, offset, design, grid, prior, 1.0, rng));
  }
}

void bm_mcmc_iteration(benchmark::State& state) {
  const SimDraw sim = gen_scenario1(static_cast<int>(state.range(0)), 17);
  SamplerConfig config;
  config.trees_prognostic_m = 50;
  config.trees_prognostic_y = 50;
  config.trees_modifier_m = 20;
  config.trees_modifier_y = 20;
  config.iterations = 10;
  config.burn_in = 5;
  const std::vector<double> pihat = sim.true_propensity;
  std::vector<double> clipped(pihat);
  for (double& v : clipped) v = std::min(0.99, std::max(0.01, v));
  BpcfState mcmc = init_state(sim.data, clipped, config);
  Rng rng(19);
  for (auto _ : state) {
    mcmc_iteration(mcmc, sim.data, rng);
  }
}

void bm_pce(benchmark::State& state) {
  Rng rng(23);
  const int draws_n = 500, units = static_cast<int>(state.range(0));
  PosteriorDraws draws;
  for (int d = 0; d < draws_n; ++d) {
    std::vector<double> m0(units), m1(units), y0(units), y1(units);
    for (int i = 0; i < units; ++i) {
      m0[i] = rng.normal();
      m1[i] = m0[i] + 2.0 + 0.1 * rng.normal();
      y0[i] = rng.normal();
      y1[i] = y0[i] - 4.0 + 0.1 * rng.normal();
    }
    draws.m0.push_back(std::move(m0));
    draws.m1.push_back(std::move(m1));
    draws.y0.push_back(std::move(y0));
    draws.y1.push_back(std::move(y1));
  }
  const StratumInterval interval{1.8, 2.2};
  for (auto _ : state) {
    benchmark::DoNotOptimize(pce(draws, interval));
  }
  state.SetItemsProcessed(state.iterations() * draws_n * units);
}

}  // namespace

BENCHMARK(bm_tree_predict)->Arg(4)->Arg(16)->Arg(64);
BENCHMARK(bm_backfit_sweep)->Arg(20)->Arg(50)->Arg(200);
BENCHMARK(bm_mcmc_iteration)->Arg(100)->Arg(300)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_pce)->Arg(300)->Arg(1000);

BENCHMARK_MAIN();
