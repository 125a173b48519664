#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seldiff/ddpm.hpp"
#include "seldiff/optim.hpp"
#include "seldiff/selective.hpp"

namespace seldiff {

/// Clean forget and retain samples for one loss evaluation. Timesteps and
/// noise are drawn inside each objective from the supplied Rng.
struct UnlearnBatch {
  Tensor forget;  // (n_forget, D)
  Tensor retain;  // (n_retain, D), may be empty for forget-only objectives
  /// Image geometry of a row; 0 for point data.
  std::size_t image_h = 0;
  std::size_t image_w = 0;
};

/// Scalar loss plus its reported parts.
struct LossTerms {
  Var total;
  double forget_term = 0.0;
  double retain_term = 0.0;
  /// Every timestep drawn while building the loss.
  std::vector<int> timesteps;
};

/// Noisy inputs for one branch: x_t (possibly low-passed) and its regression target.
struct NoisyBatch {
  std::vector<int> t;
  Tensor eps;
  Tensor x_t;
  Tensor target;
};

/// Draws t then eps for every row and builds the (filtered) noisy batch.
/// Consumes rows() timestep draws followed by rows()*cols() normal draws.
NoisyBatch draw_noisy(const Tensor& x0, const NoiseSchedule& sched, Rng& rng, const NoisingPolicy& policy,
                      bool forget_branch);

struct SissConfig {
  double lambda = 0.5;
  double beta_siss = 0.0;
  bool importance_sampling = true;

  void validate() const;
  friend bool operator==(const SissConfig&, const SissConfig&) = default;
};

struct PreferenceConfig {
  double beta_pref = 1.0;
  double w_desirable = 1.0;
  double w_undesirable = 1.0;

  void validate() const;
  friend bool operator==(const PreferenceConfig&, const PreferenceConfig&) = default;
};

// Objective signature shared by all losses below.
using PolicyObjective = std::function<LossTerms(Graph&, const Denoiser&, std::span<const Var>, const UnlearnBatch&,
                                                const NoiseSchedule&, Rng&, const NoisingPolicy&)>;
using LossFn = std::function<LossTerms(Graph&, const Denoiser&, std::span<const Var>, const UnlearnBatch&,
                                       const NoiseSchedule&, Rng&)>;

/// Negated epsilon-matching loss on the forget batch.
LossTerms ga_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const UnlearnBatch& batch,
                  const NoiseSchedule& sched, Rng& rng, const NoisingPolicy& policy = {});

/// Forget inputs regressed onto independent noise eps', plus beta_retain times the retain loss.
LossTerms erasediff_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const UnlearnBatch& batch,
                         const NoiseSchedule& sched, double beta_retain, Rng& rng, const NoisingPolicy& policy = {});

/// One draw from q_lambda(m_t | x, x') = (1-lambda) q(m_t|x') + lambda q(m_t|x).
struct MixtureDraw {
  Tensor m_t;
  bool forget_branch;
};
MixtureDraw siss_sample_mixture(const Tensor& x, const Tensor& x_retain, int t, double lambda,
                                const NoiseSchedule& sched, Rng& rng);

struct SissWeights {
  double w_keep;
  double w_forget;
};

/// Importance weights q(m|x')/q_lambda and q(m|x)/q_lambda from Gaussian
/// log-densities. Returns (1, 1) when importance sampling is off.
SissWeights siss_weights(const Tensor& m_t, const Tensor& x, const Tensor& x_retain, int t, double lambda,
                         const NoiseSchedule& sched, bool importance_sampling = true);

/// w_keep ||eps_hat(m) - eps_keep||^2 - (1 + beta) w_forget ||eps_hat(m) - eps_forget||^2,
/// averaged over forget rows each paired with a random retain row.
///
/// With importance sampling off, the keep and forget terms use separate draws
/// m ~ q(.|x') and m ~ q(.|x) with unit weights.
LossTerms siss_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const UnlearnBatch& batch,
                    const NoiseSchedule& sched, const SissConfig& cfg, Rng& rng, const NoisingPolicy& policy = {});

/// Diffusion DPO with retain rows as winners and forget rows as losers:
/// softplus(-beta * [(e_theta(f) - e_ref(f)) - (e_theta(r) - e_ref(r))]) averaged over pairs.
/// Each pair shares one timestep and one noise draw.
LossTerms dpo_forget_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const UnlearnBatch& batch,
                          const NoiseSchedule& sched, const Denoiser& reference, const PreferenceConfig& cfg,
                          Rng& rng, const NoisingPolicy& policy = {});

/// Pair-free KTO. With reward rho = -beta (e_theta - e_ref) and reference point
/// z = max(0, mean rho) held constant: w_u mean_f sigmoid(rho - z) + w_d mean_r (1 - sigmoid(rho - z)).
LossTerms kto_forget_loss(Graph& g, const Denoiser& model, std::span<const Var> params, const UnlearnBatch& batch,
                          const NoiseSchedule& sched, const Denoiser& reference, const PreferenceConfig& cfg,
                          Rng& rng, const NoisingPolicy& policy = {});

/// Binds `objective` to a policy that draws t from the time window and low-passes
/// noisy inputs of the selected branches.
LossFn selective_wrap(PolicyObjective objective, const TimeWindowConfig& time_cfg,
                      const FrequencyFilterConfig& freq_cfg, FilterTarget apply_filter_to = FilterTarget::forget_only,
                      TargetMode target_mode = TargetMode::input_only);

/// Binds `objective` to the default (uniform, unfiltered) policy.
LossFn unwrapped(PolicyObjective objective);

// ---------------------------------------------------------------------------
// Unlearning runs

enum class ObjectiveKind { ga, erasediff, siss, dpo, kto };

std::string to_string(ObjectiveKind k);
ObjectiveKind objective_kind_from_string(const std::string& s);

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::ga;
  /// GA only: adds retain_weight * epsilon loss on retain rows (-L_F + L_R).
  double retain_weight = 0.0;
  double beta_retain = 1.0;
  SissConfig siss;
  PreferenceConfig pref;

  friend bool operator==(const ObjectiveConfig&, const ObjectiveConfig&) = default;
};

struct StepRecord {
  long step = 0;
  double loss = 0.0;
  double forget_term = 0.0;
  double retain_term = 0.0;
  /// Global gradient norm before clipping.
  double grad_norm = 0.0;
  std::vector<int> timesteps;
};

/// Thrown when a step produces a non-finite loss; the model is left untouched.
class StepAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Configuration plus mutable state of one unlearning experiment.
struct UnlearnRun {
  Denoiser model;
  /// Frozen snapshot for the preference objectives.
  std::optional<Denoiser> reference;
  NoiseSchedule sched;
  Adam optimizer;
  double clip_norm = 1.0;
  ObjectiveConfig objective;
  NoisingPolicy policy;
  Tensor forget;
  Tensor retain;
  /// Rows per step; 0 uses the whole set.
  std::size_t forget_batch = 0;
  std::size_t retain_batch = 64;
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  long step = 0;
  std::vector<StepRecord> history;

  /// The objective with this run's policy bound.
  LossFn loss_fn() const;
};

/// One optimiser update on the configured loss. Throws StepAborted on a
/// non-finite loss or gradient.
StepRecord unlearn_step(UnlearnRun& run, Rng& rng);

}  // namespace seldiff
