#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bidrl/agent.hpp"
#include "bidrl/base_policy.hpp"
#include "bidrl/mdp.hpp"
#include "bidrl/trainer.hpp"

namespace bidrl {

/// What is rolled out during evaluation: the deterministic base policy, optionally
/// with the multiplicative behavior noise switched on.
struct EvalPolicy {
    BasePolicy base;
    std::optional<BehaviorNoiseSpec> noise;
};

/// Undiscounted return of every episode, config-major: index c * episodes_per_config + e.
/// Episode (c, e) uses the same simulator seed for every policy evaluated with the same `seed`.
std::vector<double> episode_returns(const EvalPolicy& policy, const std::vector<CampaignConfig>& configs,
                                    int episodes_per_config, std::uint64_t seed, int workers = 1);

struct EvalResult {
    std::string checkpoint_id;
    std::int64_t step = 0;
    std::vector<double> per_config_mean;
    double pooled_mean = 0.0;
    /// 1.96 * sample std / sqrt(n); empty when n < 2.
    std::optional<double> ci_half_width;
    double baseline_mean = 0.0;
    /// 100 * (pooled_mean - baseline_mean) / baseline_mean.
    double relative_gain_pct = 0.0;
    /// Paired (common random numbers) 95% half-width of the gain, in percent; empty when n < 2.
    std::optional<double> gain_ci_half_width_pct;
    std::int64_t episodes = 0;
    std::vector<double> returns;
    std::vector<double> baseline_returns;

    bool gain_significant() const {
        return gain_ci_half_width_pct && relative_gain_pct - *gain_ci_half_width_pct > 0.0;
    }
};

/// Paired summary of two aligned return vectors.
EvalResult summarize(const std::vector<double>& returns, const std::vector<double>& baseline,
                     std::size_t n_configs);

EvalResult evaluate(const EvalPolicy& policy, const EvalPolicy& baseline, const std::vector<CampaignConfig>& configs,
                    int episodes_per_config, std::uint64_t seed, int workers = 1);

struct CurvePoint {
    std::string id;
    std::int64_t step = 0;
    BasePolicy policy;
};

/// Evaluates every point against `baseline` with the same seed, so all rows share common random numbers.
std::vector<EvalResult> learning_curve(const std::vector<CurvePoint>& points, const EvalPolicy& baseline,
                                       const std::vector<CampaignConfig>& configs, int episodes_per_config,
                                       std::uint64_t seed, int workers = 1);

/// Header: checkpoint,step,episodes,mean_return,ci_half_width,baseline_mean,gain_pct,gain_ci_half_width_pct.
void write_eval_csv(const std::vector<EvalResult>& rows, const std::filesystem::path& path);
/// Plot data with columns x,y,err (step, gain percent, gain half-width).
void write_curve_plot_data(const std::vector<EvalResult>& rows, const std::filesystem::path& path);

/// Sample variance of the change in gain from one checkpoint to the next (percent squared).
double checkpoint_gain_variance(const std::vector<EvalResult>& rows);

struct CampaignDiagnostic {
    std::string config_id;
    double budget = 0.0;
    double predicted_q = 0.0;  ///< mean over episodes of Q(s0, a ~ pi), in return units
    double empirical_mean = 0.0;
    double empirical_std = 0.0;
    int episodes = 0;
};

struct TimestepCurve {
    std::string config_id;
    std::vector<double> q_mean, q_std;
    std::vector<double> rtg_mean, rtg_std;
    std::vector<int> count;  ///< episodes still running at each step

    /// Share of timesteps where |q_mean - rtg_mean| <= k * rtg_std.
    double fraction_within(double k) const;
};

struct CriticDiagnostic {
    std::vector<CampaignDiagnostic> campaigns;  ///< ordered by budget
    std::vector<TimestepCurve> curves;
    double pearson = 0.0;
};

/// Rolls the stochastic trained actor on fresh episodes and compares the critic with
/// empirical discounted returns. `probe_configs` indexes into the budget-ordered list.
CriticDiagnostic critic_diagnostics(const HybridActor& actor, const TwinCritic& critic, double gamma,
                                    const std::vector<CampaignConfig>& configs, int episodes_per_config,
                                    std::uint64_t seed, const std::vector<std::size_t>& probe_configs,
                                    int workers = 1);

/// Header: config_id,budget,predicted_q,empirical_mean,empirical_std,episodes.
void write_campaign_csv(const CriticDiagnostic& d, const std::filesystem::path& path);
/// Header: config_id,step,q_mean,q_std,rtg_mean,rtg_std,count.
void write_timestep_csv(const CriticDiagnostic& d, const std::filesystem::path& path);

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace bidrl
