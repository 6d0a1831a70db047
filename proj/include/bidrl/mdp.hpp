#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bidrl {

inline constexpr int kDefaultHorizon = 1440;

/// How rewards are produced from won auctions.
enum class RewardMode : std::uint8_t {
    sampled_conversions = 0,  ///< Bernoulli conversion per win.
    expected_value = 1,       ///< value × eCVR per win, no sampling noise.
};

/// One simulated campaign. Everything the environment needs to run an episode.
struct CampaignConfig {
    std::string id;
    double budget = 0.0;
    int horizon = kDefaultHorizon;
    double audience_size = 0.0;
    std::vector<double> opportunity_density;  ///< expected arrivals per step, sums to audience_size
    double value_per_conversion = 1.0;
    double true_cvr_mean = 0.05;
    double competitor_price_scale = 1.0;
    std::uint64_t seed = 0;

    /// Bid used as `last_action` before the first decision.
    double initial_bid = 1.0;
    RewardMode reward_mode = RewardMode::sampled_conversions;
    /// Per-step probability that the advertiser stops the campaign early. Zero disables it.
    double early_stop_hazard = 0.0;

    /// Throws ConfigError naming the first violated invariant.
    void validate() const;
};

struct ActorObservation {
    double fraction_budget_spent = 0.0;
    double fraction_time_elapsed = 0.0;
    double fraction_opportunities_passed = 0.0;
    double avg_past_bid = 0.0;
    double last_action = 0.0;
    double pacing_error = 0.0;
    double cumulative_pacing_error = 0.0;

    static constexpr std::size_t kSize = 7;
    static const std::array<std::string_view, kSize>& field_names();
    std::array<double, kSize> to_array() const;
    static ActorObservation from_array(std::span<const double> v);

    bool operator==(const ActorObservation&) const = default;
};

struct CriticObservation {
    ActorObservation actor;
    double remaining_budget = 0.0;
    double total_budget = 0.0;
    double audience_size = 0.0;
    double current_step_density = 0.0;
    double step_index = 0.0;
    double recent_win_rate = 0.0;

    static constexpr std::size_t kSize = ActorObservation::kSize + 6;
    static const std::array<std::string_view, kSize>& field_names();
    std::array<double, kSize> to_array() const;
    static CriticObservation from_array(std::span<const double> v);

    bool operator==(const CriticObservation&) const = default;
};

/// Raw campaign counters from which observations are derived.
struct ObservationCounters {
    double budget = 0.0;
    double spent = 0.0;
    int step_index = 0;
    int horizon = 1;
    double opportunities_passed = 0.0;
    double audience_size = 1.0;
    double bid_sum = 0.0;
    int bid_count = 0;
    double last_action = 0.0;
    double past_pacing_error_sum = 0.0;  ///< sum of pacing errors at earlier decision steps
};

ActorObservation make_actor_observation(const ObservationCounters& c);

struct Transition {
    ActorObservation actor_obs;
    CriticObservation critic_obs;
    double action = 0.0;
    double behavior_mean = 0.0;
    double reward = 0.0;
    ActorObservation next_actor_obs;
    CriticObservation next_critic_obs;
    bool done = false;
    std::uint64_t episode_id = 0;
    std::uint32_t step_index = 0;

    bool operator==(const Transition&) const = default;
};

enum class TerminalReason : std::uint8_t { none = 0, budget_exhausted = 1, horizon_reached = 2, advertiser_stopped = 3 };

std::string_view to_string(TerminalReason r);

struct EpisodeReturn {
    double undiscounted = 0.0;
    double discounted = 0.0;
    int length = 0;
    TerminalReason terminal_reason = TerminalReason::none;
};

/// Sum over k of gamma^k * rewards[k].
double discounted_return(std::span<const double> rewards, double gamma);

/// out[t] = discounted_return(rewards[t..], gamma).
std::vector<double> returns_to_go(std::span<const double> rewards, double gamma);

}  // namespace bidrl
