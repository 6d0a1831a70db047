#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bidrl/agent.hpp"
#include "bidrl/base_policy.hpp"
#include "bidrl/dataset.hpp"
#include "bidrl/mlp.hpp"
#include "bidrl/random.hpp"

namespace bidrl {

/// Hyper-parameters of the conservative actor-critic procedure.
/// Defaults are the `paper` profile; `desk_profile()` is the workstation-sized variant.
struct TrainConfig {
    std::string profile = "paper";
    std::int64_t gradient_steps = 600000;
    int batch_size = 20000;
    double critic_lr = 3e-4;
    double actor_lr = 3e-5;
    double gamma = 0.9998;
    double cql_alpha = 0.1;
    int penalty_samples = 50;
    double tau = 0.01;
    std::int64_t pretrain_steps = 300000;
    double sigma_beta = 0.05;
    double clip_lo = -0.5;
    double clip_hi = 0.5;
    /// Half-width of the relative penalty interval; matches the clip bound.
    double interval_epsilon = 0.5;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 50000;
    std::int64_t log_every = 1000;
    std::vector<int> critic_hidden{512, 512};
    std::vector<int> variance_hidden{512, 512};
    bool twin_critics = true;
    /// Weight of alpha * log(pi) in the actor loss. 0 = pure Q maximization.
    double actor_entropy_weight = 0.0;
    /// Next-state actions averaged per transition in the Bellman target.
    int target_action_samples = 1;
    /// Multiplier applied to rewards before regression. 0 = one over the mean episode return in the dataset.
    double reward_scale = 1.0;
    /// Transitions used to fit input standardization.
    int normalization_samples = 20000;
    double min_mean_rel_std = 0.005;
    double max_mean_rel_std = 0.6;

    static TrainConfig paper_profile() { return {}; }
    static TrainConfig desk_profile();

    void validate() const;
    BehaviorNoiseSpec behavior_noise() const { return {sigma_beta, clip_lo, clip_hi}; }
    nlohmann::json to_json() const;
    /// Starts from the named "profile" (default paper) and applies every other key as an override.
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::filesystem::path& path);
    std::uint64_t hash() const;
};

/// Matrix form of a sampled batch for critic regression.
struct CriticBatch {
    Mat states;               ///< standardized critic state features, one column per transition
    Vec action_features;      ///< logged actions
    Vec rewards;              ///< already multiplied by the reward scale
    Vec not_done;
    Mat next_states;
    Mat next_action_features; ///< target_action_samples rows, sampled from the current actor
    Vec behavior_means;
    Vec reference_bids;       ///< controller reference of each state, anchors the action features

    Eigen::Index size() const { return states.cols(); }
};

CriticBatch make_critic_batch(std::span<const Transition* const> transitions, const HybridActor& actor,
                              const TwinCritic& critic, int target_action_samples, Rng& rng);

/// y = r + gamma (1 - done) mean_j min_h Q_target,h(s', a'_j). No entropy term.
Vec critic_target(const CriticBatch& batch, const TwinCritic& critic, double gamma);

/// Batch mean of log((1/K) sum_i exp Q(s, a_i)), a_i uniform on [(1-eps) m, (1+eps) m].
double cql_term1(const CriticBatch& batch, const TwinCritic& critic, int head, int k, double epsilon, Rng& rng);
/// Batch mean of (1/K) sum_i Q(s, a_i), a_i drawn from the truncated multiplicative behavior law.
double cql_term2(const CriticBatch& batch, const TwinCritic& critic, int head, int k, const BehaviorNoiseSpec& noise,
                 Rng& rng);

struct LossReport {
    std::int64_t step = 0;
    double bellman_loss = 0.0;
    double cql_term1 = 0.0;
    double cql_term2 = 0.0;
    double cql_penalty = 0.0;
    double actor_loss = 0.0;
    double mean_rel_std = 0.0;
    double critic_grad_norm = 0.0;
    double actor_grad_norm_w = 0.0;
    double actor_grad_norm_phi = 0.0;
    bool actor_updated = false;

    static std::string csv_header();
    std::string csv_row() const;
};

struct CriticOptimizers {
    std::array<AdamState, 2> heads;
};

/// One penalized regression step on every head, then Polyak target update.
LossReport critic_update(const CriticBatch& batch, TwinCritic& critic, CriticOptimizers& opt, const TrainConfig& cfg,
                         Rng& rng);

struct ActorBatch {
    std::vector<ActorObservation> obs;
    Mat actor_features;  ///< standardized variance-network inputs
    Mat critic_states;   ///< standardized critic state features
};

ActorBatch make_actor_batch(std::span<const Transition* const> transitions, const HybridActor& actor,
                            const TwinCritic& critic);

struct ActorGradient {
    double loss = 0.0;
    Vec grad_w;
    Vec grad_phi;
    double mean_rel_std = 0.0;
};

/// Loss -mean(q_min(s, F_w(s) + sigma_phi(s) xi)) (+ entropy weight * mean log pi) and its exact gradient
/// for fixed standard-normal draws `xi`.
ActorGradient actor_loss_and_grad(const ActorBatch& batch, const HybridActor& actor, const TwinCritic& critic,
                                  const Vec& xi, double entropy_weight);

struct ActorOptimizers {
    AdamState base;
    AdamState variance;
};

LossReport actor_update(const ActorBatch& batch, HybridActor& actor, const TwinCritic& critic, ActorOptimizers& opt,
                        const TrainConfig& cfg, Rng& rng);

inline constexpr std::uint32_t kCheckpointSchemaVersion = 1;

/// Complete trainer state. Binary container: magic "BIDRLCK1", u32 schema_version,
/// u64 config hash, length-prefixed sections, u32 CRC-32 footer.
struct Checkpoint {
    std::uint32_t schema_version = kCheckpointSchemaVersion;
    std::uint64_t config_hash = 0;
    std::string config_json;
    std::int64_t step = 0;
    HybridActor actor;
    BasePolicyParams default_params;
    TwinCritic critic;
    CriticOptimizers critic_opt;
    ActorOptimizers actor_opt;
    std::string rng_state;
    std::string sampler_state;
    std::string dataset_digest;

    std::string serialize() const;
    static Checkpoint deserialize(std::string_view bytes);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

/// Owns the training state and advances it one gradient step at a time.
class Trainer {
public:
    /// Fresh run. The actor starts as the behavior policy built from `default_policy`.
    Trainer(const Dataset& dataset, TrainConfig config, const BasePolicy& default_policy);
    /// Resumes from a checkpoint taken on the same dataset.
    Trainer(const Dataset& dataset, const Checkpoint& checkpoint);

    LossReport step();
    std::int64_t steps_done() const { return step_; }
    bool finished() const { return step_ >= cfg_.gradient_steps; }

    Checkpoint checkpoint() const;
    const HybridActor& actor() const { return actor_; }
    const TwinCritic& critic() const { return critic_; }
    TwinCritic& mutable_critic() { return critic_; }
    const TrainConfig& config() const { return cfg_; }
    const BasePolicyParams& default_params() const { return default_params_; }

private:
    const Dataset* dataset_;
    TrainConfig cfg_;
    HybridActor actor_;
    TwinCritic critic_;
    CriticOptimizers critic_opt_;
    ActorOptimizers actor_opt_;
    BasePolicyParams default_params_;
    std::int64_t step_ = 0;
    Rng rng_;
    ReplaySampler sampler_;
    std::string dataset_digest_;
    LossReport last_report_;
};

/// Runs critic-only updates until `cfg.pretrain_steps` gradient steps have been taken.
void pretrain_critic(Trainer& trainer);

struct TrainOutput {
    std::vector<std::filesystem::path> checkpoints;
    std::filesystem::path loss_csv;
};

/// Full run: writes ckpt-<step>.bin at step 0, every checkpoint_every steps and at the end,
/// plus losses.csv. `progress` (optional) sees every logged report.
TrainOutput train(const Dataset& dataset, const TrainConfig& config, const BasePolicy& default_policy,
                  const std::filesystem::path& out_dir, const std::function<void(const LossReport&)>& progress = {});

/// Continues a run from a checkpoint into the same directory layout.
TrainOutput resume_training(const Dataset& dataset, const Checkpoint& from, const std::filesystem::path& out_dir,
                            const std::function<void(const LossReport&)>& progress = {});

/// Content digest used to bind checkpoints to their training data.
std::string dataset_digest(const Dataset& dataset);

}  // namespace bidrl
