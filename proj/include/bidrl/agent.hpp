#pragma once

#include <array>
#include <span>
#include <vector>

#include "bidrl/base_policy.hpp"
#include "bidrl/mdp.hpp"
#include "bidrl/mlp.hpp"
#include "bidrl/random.hpp"

namespace bidrl {

inline constexpr double kMinRelStd = 0.01;
inline constexpr double kMaxRelStd = 0.5;

/// Per-feature affine normalization fitted on dataset statistics.
struct Standardizer {
    Vec mean;
    Vec inv_scale;

    static Standardizer identity(Eigen::Index n);
    /// Columns of `samples` are observations. Constant features get unit scale.
    static Standardizer fit(const Mat& samples);
    Eigen::Index size() const { return mean.size(); }
    Vec apply(const Vec& x) const { return (x - mean).cwiseProduct(inv_scale); }
    void apply_inplace(Mat& x) const {
        x.colwise() -= mean;
        x.array().colwise() *= inv_scale.array();
    }

    bool operator==(const Standardizer& o) const { return mean == o.mean && inv_scale == o.inv_scale; }
};

inline constexpr int kActorFeatureCount = 7;
inline constexpr int kCriticStateFeatureCount = 13;

/// Network inputs derived from observations. Currency amounts enter in log scale
/// because bids differ by orders of magnitude across campaigns.
Vec actor_features(const ActorObservation& obs);
Vec critic_state_features(const CriticObservation& obs);
/// Log of the bid relative to the controller's reference bid.
double raw_action_feature(double action, double reference_bid);

/// Gaussian policy whose mean is the heuristic base policy and whose
/// relative spread comes from a small network.
class HybridActor {
public:
    HybridActor() = default;
    /// `hidden` are the variance network's hidden widths. The network starts at
    /// relative std `initial_rel_std` everywhere.
    HybridActor(BasePolicy base, const std::vector<int>& hidden, Rng& rng, double initial_rel_std = 0.05);

    BasePolicy base = BasePolicy::pi_controller(0.0, 0.0);
    MlpNet variance_net;
    Standardizer norm = Standardizer::identity(kActorFeatureCount);

    /// Deterministic deployed bid F_w(obs).
    double act_mean(const ActorObservation& obs) const { return base.forward(obs); }
    /// sigma(obs) / F_w(obs), clamped to [kMinRelStd, kMaxRelStd].
    double rel_std(const ActorObservation& obs) const;
    double sigma(const ActorObservation& obs) const { return act_mean(obs) * rel_std(obs); }

    struct Sample {
        double action;
        double xi;
    };
    Sample act_sample(const ActorObservation& obs, Rng& rng) const;
    /// Reparameterized action for a given standard-normal draw.
    double act_with_noise(const ActorObservation& obs, double xi) const;
    /// Gaussian log density of the unclamped action variable.
    double log_prob(const ActorObservation& obs, double action) const;

    bool operator==(const HybridActor& o) const {
        return base == o.base && variance_net == o.variance_net && norm == o.norm;
    }
};

struct QValues {
    double q1 = 0.0;
    double q2 = 0.0;
    double q_min = 0.0;
};

/// One or two Q networks over (critic observation, action) with Polyak-averaged targets.
/// Outputs are in training units: value units times `reward_scale`.
class TwinCritic {
public:
    TwinCritic() = default;
    TwinCritic(int state_dim, const std::vector<int>& hidden, bool twin, Rng& rng, double output_scale = 1e-3);

    std::array<MlpNet, 2> online;
    std::array<MlpNet, 2> target;
    bool twin = true;
    Standardizer state_norm;
    double action_mean = 0.0;
    double action_inv_scale = 1.0;
    double reward_scale = 1.0;

    int heads() const { return twin ? 2 : 1; }
    int state_dim() const { return static_cast<int>(state_norm.size()); }

    double action_feature(double action, double reference_bid) const {
        return (raw_action_feature(action, reference_bid) - action_mean) * action_inv_scale;
    }
    /// d(action_feature)/d(action).
    double action_feature_grad(double action) const { return action_inv_scale / action; }
    Vec state_features(const CriticObservation& obs) const { return state_norm.apply(critic_state_features(obs)); }

    /// Stacks standardized state columns over a row of action features.
    static Mat inputs(const Mat& states, const Vec& action_features);

    QValues q_value(const CriticObservation& obs, double action) const;
    QValues q_value_target(const CriticObservation& obs, double action) const;

    bool operator==(const TwinCritic& o) const {
        return online == o.online && target == o.target && twin == o.twin && state_norm == o.state_norm &&
               action_mean == o.action_mean && action_inv_scale == o.action_inv_scale &&
               reward_scale == o.reward_scale;
    }
};

}  // namespace bidrl
