#include "bidrl/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bidrl/error.hpp"

namespace bidrl {

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

void check_inputs(std::span<const double> rewards, double gamma) {
    if (!std::isfinite(gamma) || gamma < 0.0 || gamma > 1.0) {
        throw InvalidArgument("discount factor must lie in [0, 1]");
    }
    for (double r : rewards) {
        if (!std::isfinite(r)) throw InvalidArgument("reward sequence contains a non-finite value");
    }
}

}  // namespace

void CampaignConfig::validate() const {
    auto fail = [this](const std::string& what) { throw ConfigError("campaign '" + id + "': " + what); };
    if (!(budget > 0.0) || !std::isfinite(budget)) fail("budget must be positive");
    if (horizon < 1) fail("horizon must be at least 1");
    if (!(audience_size > 0.0) || !std::isfinite(audience_size)) fail("audience_size must be positive");
    if (opportunity_density.size() != static_cast<std::size_t>(horizon)) {
        fail("opportunity_density must have one entry per step");
    }
    double total = 0.0;
    for (double d : opportunity_density) {
        if (!(d >= 0.0) || !std::isfinite(d)) fail("opportunity_density entries must be finite and >= 0");
        total += d;
    }
    if (std::fabs(total - audience_size) > 1e-6 * audience_size) {
        fail("opportunity_density must sum to audience_size");
    }
    if (!(value_per_conversion > 0.0)) fail("value_per_conversion must be positive");
    if (!(true_cvr_mean > 0.0 && true_cvr_mean < 1.0)) fail("true_cvr_mean must lie in (0, 1)");
    if (!(competitor_price_scale > 0.0)) fail("competitor_price_scale must be positive");
    if (!(initial_bid > 0.0) || !std::isfinite(initial_bid)) fail("initial_bid must be positive");
    if (!(early_stop_hazard >= 0.0 && early_stop_hazard < 1.0)) fail("early_stop_hazard must lie in [0, 1)");
}

const std::array<std::string_view, ActorObservation::kSize>& ActorObservation::field_names() {
    static const std::array<std::string_view, kSize> names{
        "fraction_budget_spent", "fraction_time_elapsed", "fraction_opportunities_passed",
        "avg_past_bid",          "last_action",           "pacing_error",
        "cumulative_pacing_error"};
    return names;
}

std::array<double, ActorObservation::kSize> ActorObservation::to_array() const {
    return {fraction_budget_spent, fraction_time_elapsed, fraction_opportunities_passed, avg_past_bid,
            last_action,           pacing_error,          cumulative_pacing_error};
}

ActorObservation ActorObservation::from_array(std::span<const double> v) {
    if (v.size() < kSize) throw ContractViolation("ActorObservation::from_array: short input");
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

const std::array<std::string_view, CriticObservation::kSize>& CriticObservation::field_names() {
    static const std::array<std::string_view, kSize> names = [] {
        std::array<std::string_view, kSize> out{};
        const auto& a = ActorObservation::field_names();
        std::copy(a.begin(), a.end(), out.begin());
        out[7] = "remaining_budget";
        out[8] = "total_budget";
        out[9] = "audience_size";
        out[10] = "current_step_density";
        out[11] = "step_index";
        out[12] = "recent_win_rate";
        return out;
    }();
    return names;
}

std::array<double, CriticObservation::kSize> CriticObservation::to_array() const {
    std::array<double, kSize> out{};
    const auto a = actor.to_array();
    std::copy(a.begin(), a.end(), out.begin());
    out[7] = remaining_budget;
    out[8] = total_budget;
    out[9] = audience_size;
    out[10] = current_step_density;
    out[11] = step_index;
    out[12] = recent_win_rate;
    return out;
}

CriticObservation CriticObservation::from_array(std::span<const double> v) {
    if (v.size() < kSize) throw ContractViolation("CriticObservation::from_array: short input");
    CriticObservation c;
    c.actor = ActorObservation::from_array(v.first(ActorObservation::kSize));
    c.remaining_budget = v[7];
    c.total_budget = v[8];
    c.audience_size = v[9];
    c.current_step_density = v[10];
    c.step_index = v[11];
    c.recent_win_rate = v[12];
    return c;
}

ActorObservation make_actor_observation(const ObservationCounters& c) {
    ActorObservation o;
    o.fraction_budget_spent = clamp01(c.spent / c.budget);
    o.fraction_time_elapsed = clamp01(static_cast<double>(c.step_index) / static_cast<double>(c.horizon));
    o.fraction_opportunities_passed = clamp01(c.opportunities_passed / c.audience_size);
    o.avg_past_bid = c.bid_count > 0 ? c.bid_sum / static_cast<double>(c.bid_count) : 0.0;
    o.last_action = c.last_action;
    o.pacing_error = o.fraction_budget_spent - o.fraction_opportunities_passed;
    o.cumulative_pacing_error = c.past_pacing_error_sum + o.pacing_error;
    return o;
}

std::string_view to_string(TerminalReason r) {
    switch (r) {
        case TerminalReason::none: return "none";
        case TerminalReason::budget_exhausted: return "budget_exhausted";
        case TerminalReason::horizon_reached: return "horizon_reached";
        case TerminalReason::advertiser_stopped: return "advertiser_stopped";
    }
    return "unknown";
}

double discounted_return(std::span<const double> rewards, double gamma) {
    check_inputs(rewards, gamma);
    double acc = 0.0;
    for (auto it = rewards.rbegin(); it != rewards.rend(); ++it) acc = *it + gamma * acc;
    return acc;
}

std::vector<double> returns_to_go(std::span<const double> rewards, double gamma) {
    check_inputs(rewards, gamma);
    std::vector<double> out(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    return out;
}

}  // namespace bidrl
