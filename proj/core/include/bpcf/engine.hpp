#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bpcf/bcf.hpp"
#include "bpcf/matrix.hpp"
#include "bpcf/rng.hpp"

namespace bpcf {

// Observed data: covariates, binary treatment, continuous intermediate and
// outcome.  The factory validates shape, finiteness, A in {0,1} and at least
// one unit per arm.
struct Dataset {
  Matrix X;
  std::vector<double> A, M, Y;
  std::vector<std::string> ids;

  std::size_t n() const { return A.size(); }
  static Dataset make(Matrix X, std::vector<double> A, std::vector<double> M,
                      std::vector<double> Y, std::vector<std::string> ids = {});
};

enum class ModifierMode { full, m_only };

// Order of the latent-intermediate imputation within one Gibbs iteration:
// after the full intermediate-model update (default), or between its
// prognostic and modifier backfits.
enum class ImputeOrder { after_m_fit, before_m_modifier };

struct SamplerConfig {
  int trees_prognostic_m = 200;
  int trees_modifier_m = 50;
  int trees_prognostic_y = 200;
  int trees_modifier_y = 50;
  TreePrior prognostic_prior{0.95, 2.0};
  TreePrior modifier_prior{0.25, 3.0};
  int iterations = 10000;
  int burn_in = 5000;
  int thin = 1;
  ModifierMode modifier_mode = ModifierMode::full;
  ImputeOrder impute_order = ImputeOrder::after_m_fit;
  bool noisy_impute = true;
  double nu = 3.0;
  double sigma_quantile = 0.9;
  bool save_modifier_snapshots = false;
  // Keep at most this many outcome-modifier snapshots, evenly strided over
  // the kept draws; 0 keeps every one.
  int max_snapshots = 200;
  int bart_pce_trees = 200;

  int kept_draws() const { return (iterations - burn_in) / thin; }
  void validate() const;
};

// Centering/scaling applied to each response before fitting; draws are
// mapped back before they are emitted.
struct ResponseTransform {
  double mean = 0.0, sd = 1.0;
  double apply(double v) const { return (v - mean) / sd; }
  double invert(double v) const { return mean + sd * v; }
  static ResponseTransform from(std::span<const double> v);
};

struct MmisCounters {
  std::int64_t accepted = 0, proposed = 0;
  double rate() const {
    return proposed > 0 ? static_cast<double>(accepted) / proposed : 0.0;
  }
};

// Full sampler state.  counterfactual_m holds M_i(1 - A_i) in original
// units; the observed intermediate never moves.
struct BpcfState {
  BcfModel m_model, y_model;
  BcfData m_data, y_data;
  std::vector<double> counterfactual_m;
  std::vector<double> propensity;
  std::vector<double> m_t, y_t;  // transformed responses
  ResponseTransform m_scale, y_scale;
  NoisePrior noise_prior_m, noise_prior_y;
  SamplerConfig config;
  long iteration = 0;
  double last_loglik = 0.0;

  MmisCounters mmis;
  SweepStats m_prog_stats, m_mod_stats, y_prog_stats, y_mod_stats;

  double m1_of(const Dataset& data, std::size_t i) const {
    return data.A[i] == 1.0 ? data.M[i] : counterfactual_m[i];
  }
  double m0_of(const Dataset& data, std::size_t i) const {
    return data.A[i] == 1.0 ? counterfactual_m[i] : data.M[i];
  }
};

struct PosteriorDraws {
  // draws indexed [draw][unit], original units; observed slots are copied
  // bit-exactly from the input data.
  std::vector<std::vector<double>> m0, m1, y0, y1;
  std::vector<double> sigma_m, sigma_y, loglik;

  double mmis_accept_rate = 0.0;
  double accept_rate_m_prognostic = 0.0, accept_rate_m_modifier = 0.0;
  double accept_rate_y_prognostic = 0.0, accept_rate_y_modifier = 0.0;

  // Optional outcome-modifier snapshots for effect-surface evaluation.
  std::vector<Forest> modifier_snapshots;
  Matrix snapshot_x;   // covariate block of the modifier design (empty in m_only mode)
  double snapshot_y_sd = 1.0;
  ModifierMode modifier_mode = ModifierMode::full;

  std::size_t n_draws() const { return y1.size(); }
  std::size_t n_units() const { return y1.empty() ? 0 : y1.front().size(); }
};

BpcfState init_state(const Dataset& data, std::span<const double> propensity,
                     const SamplerConfig& config);

// One Metropolis-within-Gibbs update of every latent intermediate.  Control
// units draw the treated-arm intermediate directly from the intermediate
// model (the outcome model is never consulted for them); treated units
// propose from the intermediate model's control-arm factor and accept by the
// outcome-density ratio.
void impute_m_mis(BpcfState& state, const Dataset& data, Rng& rng);

// One full iteration: intermediate model, latent imputation, outcome-model
// modifier design refresh, outcome model, joint log-likelihood bookkeeping.
void mcmc_iteration(BpcfState& state, const Dataset& data, Rng& rng);

// Potential outcome draws in original units.  Observed slots are the input
// values; missing slots are model draws (posterior mean when noisy == false).
struct PotentialDraw {
  std::vector<double> y0, y1;
};
PotentialDraw impute_potential_outcomes(const BpcfState& state, const Dataset& data,
                                        Rng& rng, bool noisy);

struct RunOptions {
  int checkpoint_every = 0;
  std::string checkpoint_path;
  bool resume = false;  // load checkpoint_path before iterating
};

PosteriorDraws run(const Dataset& data, std::span<const double> propensity,
                   const SamplerConfig& config, Rng& rng,
                   const RunOptions& options = {});

// Four independent single-forest regressions (intermediate and outcome per
// arm) with cross-arm imputation of the missing slots; the naive baseline the
// coupled sampler is compared against.  Emits the same draw structure.
PosteriorDraws run_bart_pce(const Dataset& data, const SamplerConfig& config, Rng& rng);

// Also renumbers the live trees into serialized preorder, the layout a load
// reconstructs.  Proposal enumeration walks node storage, so a run that
// continues past a checkpoint and a run resumed from it then consume the RNG
// identically and produce the same draw stream.
void save_checkpoint(BpcfState& state, const Rng& rng, const std::string& path);
// Restores state and rng; `data` and `propensity` must match the original run.
void load_checkpoint(BpcfState& state, Rng& rng, const Dataset& data,
                     const std::string& path);

}  // namespace bpcf
