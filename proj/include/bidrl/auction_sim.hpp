#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "bidrl/mdp.hpp"
#include "bidrl/random.hpp"

namespace bidrl {

/// Episodes stop once the remaining budget falls to this fraction of the total.
inline constexpr double kBudgetEpsilonFraction = 1e-6;
/// Trailing window (in steps) used for `recent_win_rate`.
inline constexpr int kWinRateWindow = 10;
/// Log-normal shape parameters of the per-auction draws.
inline constexpr double kEcvrLogSigma = 0.5;
inline constexpr double kCompetitorLogSigma = 0.3;

struct EnvState {
    std::shared_ptr<const CampaignConfig> config;
    int step_index = 0;
    double remaining_budget = 0.0;
    double opportunities_passed = 0.0;
    double bid_sum = 0.0;
    int bid_count = 0;
    double last_action = 0.0;
    double past_pacing_error_sum = 0.0;
    std::vector<double> spend_history;
    std::vector<double> bid_history;
    std::vector<std::uint32_t> entered_history;
    std::vector<std::uint32_t> win_history;
    bool done = false;
    TerminalReason terminal_reason = TerminalReason::none;
    Rng rng;

    /// Everything except the random stream.
    bool same_counters(const EnvState& other) const;
    bool operator==(const EnvState& other) const { return same_counters(other) && rng == other.rng; }
};

struct StepOutcome {
    double reward = 0.0;
    std::uint32_t auctions_entered = 0;
    std::uint32_t auctions_won = 0;
    double conversions = 0.0;
    double spend = 0.0;
    bool done = false;
    TerminalReason terminal_reason = TerminalReason::none;

    bool operator==(const StepOutcome&) const = default;
};

/// Starts an episode. The random stream depends on both the campaign seed and `seed`.
EnvState reset(std::shared_ptr<const CampaignConfig> config, std::uint64_t seed);
EnvState reset(const CampaignConfig& config, std::uint64_t seed);

/// Advances one decision step in place. Hot path for rollouts.
///
/// `reference_bid` is what the controller carries forward as its previous
/// output (the `last_action` observation). It defaults to the executed bid;
/// a noised behavior policy passes its noiseless mean so exploration noise
/// does not accumulate inside the controller state.
StepOutcome step_in_place(EnvState& state, double action, std::optional<double> reference_bid = std::nullopt);

/// Value-semantics wrapper around `step_in_place`.
std::pair<EnvState, StepOutcome> step(const EnvState& state, double action,
                                      std::optional<double> reference_bid = std::nullopt);

ActorObservation observe(const EnvState& state);
CriticObservation observe_critic(const EnvState& state);

/// Bounds for randomized campaign generation.
struct ConfigRanges {
    double budget_lo = 200.0, budget_hi = 2000.0;              ///< log-uniform
    double audience_lo = 5000.0, audience_hi = 50000.0;        ///< log-uniform
    int horizon = kDefaultHorizon;
    double value_lo = 0.5, value_hi = 2.0;
    double cvr_lo = 0.02, cvr_hi = 0.08;
    double price_scale_lo = 0.5, price_scale_hi = 1.5;
    int max_bumps = 3;
    /// Log-uniform multiplier applied to the heuristic starting bid.
    double initial_bid_factor_lo = 0.5, initial_bid_factor_hi = 2.0;
    RewardMode reward_mode = RewardMode::sampled_conversions;
    double early_stop_hazard = 0.0;

    void validate() const;
};

/// Mean amount paid per arriving auction when bidding `bid` (quadrature over the auction draws).
double expected_spend_per_auction(double bid, double cvr_mean, double price_scale);
/// Constant bid whose expected spend over the whole audience equals the budget.
/// Sampled campaigns open at a random multiple of it.
double budget_clearing_bid(double budget, double audience_size, double cvr_mean, double price_scale);

std::vector<CampaignConfig> sample_configs(int n, const ConfigRanges& ranges, std::uint64_t seed);

inline constexpr int kConfigSchemaVersion = 1;

/// JSON campaign-set file: {"schema_version": 1, "campaigns": [...]}.
void save_configs(const std::filesystem::path& path, const std::vector<CampaignConfig>& configs);
std::vector<CampaignConfig> load_configs(const std::filesystem::path& path);
/// Canonical JSON text of a campaign set (what `save_configs` writes).
std::string configs_to_json_text(const std::vector<CampaignConfig>& configs);
/// SHA-256 of the canonical JSON text.
std::string configs_digest(const std::vector<CampaignConfig>& configs);
ConfigRanges load_ranges(const std::filesystem::path& path);
void save_ranges(const std::filesystem::path& path, const ConfigRanges& ranges);

}  // namespace bidrl
