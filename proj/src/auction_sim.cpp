#include "bidrl/auction_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bidrl/binio.hpp"
#include "bidrl/error.hpp"

namespace bidrl {

using nlohmann::json;

bool EnvState::same_counters(const EnvState& o) const {
    const bool same_config = config == o.config || (config && o.config && config->id == o.config->id &&
                                                     config->seed == o.config->seed);
    return same_config && step_index == o.step_index && remaining_budget == o.remaining_budget &&
           opportunities_passed == o.opportunities_passed && bid_sum == o.bid_sum && bid_count == o.bid_count &&
           last_action == o.last_action && past_pacing_error_sum == o.past_pacing_error_sum &&
           spend_history == o.spend_history && bid_history == o.bid_history &&
           entered_history == o.entered_history && win_history == o.win_history && done == o.done &&
           terminal_reason == o.terminal_reason;
}

EnvState reset(std::shared_ptr<const CampaignConfig> config, std::uint64_t seed) {
    if (!config) throw ConfigError("reset: null campaign config");
    config->validate();
    EnvState s;
    s.remaining_budget = config->budget;
    s.last_action = config->initial_bid;
    s.rng = Rng(derive_seed(config->seed, seed));
    s.spend_history.reserve(static_cast<std::size_t>(config->horizon));
    s.bid_history.reserve(static_cast<std::size_t>(config->horizon));
    s.config = std::move(config);
    return s;
}

EnvState reset(const CampaignConfig& config, std::uint64_t seed) {
    return reset(std::make_shared<const CampaignConfig>(config), seed);
}

namespace {

ObservationCounters counters_of(const EnvState& s) {
    const CampaignConfig& c = *s.config;
    ObservationCounters k;
    k.budget = c.budget;
    k.spent = c.budget - s.remaining_budget;
    k.step_index = s.step_index;
    k.horizon = c.horizon;
    k.opportunities_passed = s.opportunities_passed;
    k.audience_size = c.audience_size;
    k.bid_sum = s.bid_sum;
    k.bid_count = s.bid_count;
    k.last_action = s.last_action;
    k.past_pacing_error_sum = s.past_pacing_error_sum;
    return k;
}

}  // namespace

ActorObservation observe(const EnvState& state) { return make_actor_observation(counters_of(state)); }

CriticObservation observe_critic(const EnvState& state) {
    const CampaignConfig& c = *state.config;
    CriticObservation o;
    o.actor = observe(state);
    o.remaining_budget = std::clamp(state.remaining_budget, 0.0, c.budget);
    o.total_budget = c.budget;
    o.audience_size = c.audience_size;
    o.current_step_density =
        state.step_index < c.horizon ? c.opportunity_density[static_cast<std::size_t>(state.step_index)] : 0.0;
    o.step_index = static_cast<double>(state.step_index);
    const std::size_t n = state.entered_history.size();
    const std::size_t from = n > kWinRateWindow ? n - kWinRateWindow : 0;
    double entered = 0.0, won = 0.0;
    for (std::size_t i = from; i < n; ++i) {
        entered += state.entered_history[i];
        won += state.win_history[i];
    }
    o.recent_win_rate = entered > 0.0 ? won / entered : 0.0;
    return o;
}

StepOutcome step_in_place(EnvState& s, double action, std::optional<double> reference_bid) {
    if (s.done) throw ContractViolation("step: episode already terminated");
    if (!std::isfinite(action) || action < 0.0) throw InvalidArgument("step: action must be finite and >= 0");
    if (reference_bid && (!std::isfinite(*reference_bid) || *reference_bid < 0.0)) {
        throw InvalidArgument("step: reference bid must be finite and >= 0");
    }
    const CampaignConfig& c = *s.config;

    const double pacing_error = observe(s).pacing_error;
    const double density = c.opportunity_density[static_cast<std::size_t>(s.step_index)];
    const auto arrivals = s.rng.poisson(density);

    StepOutcome out;
    out.auctions_entered = static_cast<std::uint32_t>(arrivals);
    const double cvr_mu = std::log(c.true_cvr_mean) - 0.5 * kEcvrLogSigma * kEcvrLogSigma;
    const double price_mu = std::log(c.competitor_price_scale);
    // Every auction consumes the same draws whatever the bid, so two policies
    // fed the same seed see the same auctions.
    for (std::uint64_t i = 0; i < arrivals; ++i) {
        const double ecvr = std::min(0.999, s.rng.lognormal(cvr_mu, kEcvrLogSigma));
        const double price = s.rng.lognormal(price_mu, kCompetitorLogSigma);
        const double u_conv = s.rng.uniform();
        const bool win = action * ecvr > price && price <= s.remaining_budget;
        if (!win) continue;
        s.remaining_budget -= price;
        out.spend += price;
        ++out.auctions_won;
        if (c.reward_mode == RewardMode::expected_value) {
            out.conversions += ecvr;
        } else if (u_conv < ecvr) {
            out.conversions += 1.0;
        }
    }
    if (s.remaining_budget < 0.0) s.remaining_budget = 0.0;
    out.reward = c.value_per_conversion * out.conversions;

    s.opportunities_passed = std::min(c.audience_size, s.opportunities_passed + static_cast<double>(arrivals));
    s.past_pacing_error_sum += pacing_error;
    s.bid_sum += action;
    ++s.bid_count;
    s.last_action = reference_bid.value_or(action);
    s.spend_history.push_back(out.spend);
    s.bid_history.push_back(action);
    s.entered_history.push_back(out.auctions_entered);
    s.win_history.push_back(out.auctions_won);
    ++s.step_index;

    const bool stopped = c.early_stop_hazard > 0.0 && s.rng.uniform() < c.early_stop_hazard;
    if (s.remaining_budget <= kBudgetEpsilonFraction * c.budget) {
        s.terminal_reason = TerminalReason::budget_exhausted;
    } else if (s.step_index >= c.horizon) {
        s.terminal_reason = TerminalReason::horizon_reached;
    } else if (stopped) {
        s.terminal_reason = TerminalReason::advertiser_stopped;
    }
    s.done = s.terminal_reason != TerminalReason::none;
    out.done = s.done;
    out.terminal_reason = s.terminal_reason;
    return out;
}

std::pair<EnvState, StepOutcome> step(const EnvState& state, double action, std::optional<double> reference_bid) {
    EnvState next = state;
    StepOutcome out = step_in_place(next, action, reference_bid);
    return {std::move(next), out};
}

void ConfigRanges::validate() const {
    auto ordered = [](double lo, double hi, const char* name) {
        if (!(lo > 0.0) || !(hi >= lo) || !std::isfinite(hi)) {
            throw ConfigError(std::string("config ranges: '") + name + "' bounds must be positive and ordered");
        }
    };
    ordered(budget_lo, budget_hi, "budget");
    ordered(audience_lo, audience_hi, "audience");
    ordered(value_lo, value_hi, "value_per_conversion");
    ordered(cvr_lo, cvr_hi, "cvr");
    ordered(price_scale_lo, price_scale_hi, "price_scale");
    ordered(initial_bid_factor_lo, initial_bid_factor_hi, "initial_bid_factor");
    if (cvr_hi >= 1.0) throw ConfigError("config ranges: cvr must stay below 1");
    if (horizon < 1) throw ConfigError("config ranges: horizon must be >= 1");
    if (max_bumps < 1) throw ConfigError("config ranges: max_bumps must be >= 1");
    if (!(early_stop_hazard >= 0.0 && early_stop_hazard < 1.0)) {
        throw ConfigError("config ranges: early_stop_hazard must lie in [0, 1)");
    }
}

double expected_spend_per_auction(double bid, double cvr_mean, double price_scale) {
    // Midpoint quadrature over the two standard-normal factors of the log-normal draws.
    constexpr int kNodes = 48;
    static const std::vector<double> nodes = [] {
        std::vector<double> z(kNodes);
        for (int i = 0; i < kNodes; ++i) {
            // Inverse-normal of the midpoint quantile via bisection on erfc.
            const double q = (i + 0.5) / kNodes;
            double lo = -8.0, hi = 8.0;
            for (int it = 0; it < 80; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < q) lo = mid; else hi = mid;
            }
            z[static_cast<std::size_t>(i)] = 0.5 * (lo + hi);
        }
        return z;
    }();
    const double cvr_mu = std::log(cvr_mean) - 0.5 * kEcvrLogSigma * kEcvrLogSigma;
    const double price_mu = std::log(price_scale);
    double total = 0.0;
    for (double zc : nodes) {
        const double ecvr = std::min(0.999, std::exp(cvr_mu + kEcvrLogSigma * zc));
        for (double zp : nodes) {
            const double price = std::exp(price_mu + kCompetitorLogSigma * zp);
            if (bid * ecvr > price) total += price;
        }
    }
    return total / (kNodes * kNodes);
}

double budget_clearing_bid(double budget, double audience_size, double cvr_mean, double price_scale) {
    const double target = budget / audience_size;
    double lo = 1e-6, hi = 1.0;
    while (expected_spend_per_auction(hi, cvr_mean, price_scale) < target && hi < 1e12) hi *= 2.0;
    if (expected_spend_per_auction(hi, cvr_mean, price_scale) < target) return hi;
    for (int it = 0; it < 60; ++it) {
        const double mid = std::sqrt(lo * hi);
        if (expected_spend_per_auction(mid, cvr_mean, price_scale) < target) lo = mid; else hi = mid;
    }
    return std::sqrt(lo * hi);
}

std::vector<CampaignConfig> sample_configs(int n, const ConfigRanges& ranges, std::uint64_t seed) {
    if (n < 1) throw ConfigError("sample_configs: n must be >= 1");
    ranges.validate();
    Rng rng(seed);
    auto log_uniform = [&rng](double lo, double hi) { return std::exp(rng.uniform(std::log(lo), std::log(hi))); };

    std::vector<CampaignConfig> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        CampaignConfig c;
        c.id = "campaign-" + std::to_string(i);
        c.horizon = ranges.horizon;
        c.budget = log_uniform(ranges.budget_lo, ranges.budget_hi);
        c.audience_size = log_uniform(ranges.audience_lo, ranges.audience_hi);
        c.value_per_conversion = rng.uniform(ranges.value_lo, ranges.value_hi);
        c.true_cvr_mean = rng.uniform(ranges.cvr_lo, ranges.cvr_hi);
        c.competitor_price_scale = rng.uniform(ranges.price_scale_lo, ranges.price_scale_hi);

        // Smooth arrival profile: flat floor plus a few Gaussian bumps.
        const int bumps = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(ranges.max_bumps)));
        const double h = static_cast<double>(c.horizon);
        const double floor_weight = rng.uniform(0.1, 0.5);
        std::vector<double> centers, widths, weights;
        for (int b = 0; b < bumps; ++b) {
            centers.push_back(rng.uniform(0.0, h));
            widths.push_back(rng.uniform(0.05, 0.25) * h);
            weights.push_back(rng.uniform(0.2, 1.0));
        }
        c.opportunity_density.resize(static_cast<std::size_t>(c.horizon));
        double total = 0.0;
        for (int t = 0; t < c.horizon; ++t) {
            double v = floor_weight;
            for (int b = 0; b < bumps; ++b) {
                const double z = (t + 0.5 - centers[b]) / widths[b];
                v += weights[b] * std::exp(-0.5 * z * z);
            }
            c.opportunity_density[static_cast<std::size_t>(t)] = v;
            total += v;
        }
        for (double& v : c.opportunity_density) v *= c.audience_size / total;

        const double factor = log_uniform(ranges.initial_bid_factor_lo, ranges.initial_bid_factor_hi);
        c.initial_bid = factor * budget_clearing_bid(c.budget, c.audience_size, c.true_cvr_mean, c.competitor_price_scale);
        c.reward_mode = ranges.reward_mode;
        c.early_stop_hazard = ranges.early_stop_hazard;
        c.seed = rng.next_u64();
        c.validate();
        out.push_back(std::move(c));
    }
    return out;
}

namespace {

json to_json(const CampaignConfig& c) {
    return json{{"id", c.id},
                {"budget", c.budget},
                {"horizon", c.horizon},
                {"audience_size", c.audience_size},
                {"opportunity_density", c.opportunity_density},
                {"value_per_conversion", c.value_per_conversion},
                {"true_cvr_mean", c.true_cvr_mean},
                {"competitor_price_scale", c.competitor_price_scale},
                {"seed", c.seed},
                {"initial_bid", c.initial_bid},
                {"reward_mode", c.reward_mode == RewardMode::expected_value ? "expected_value" : "sampled_conversions"},
                {"early_stop_hazard", c.early_stop_hazard}};
}

RewardMode parse_reward_mode(const std::string& s) {
    if (s == "sampled_conversions") return RewardMode::sampled_conversions;
    if (s == "expected_value") return RewardMode::expected_value;
    throw ConfigError("unknown reward_mode '" + s + "'");
}

CampaignConfig config_from_json(const json& j) {
    CampaignConfig c;
    c.id = j.at("id").get<std::string>();
    c.budget = j.at("budget").get<double>();
    c.horizon = j.at("horizon").get<int>();
    c.audience_size = j.at("audience_size").get<double>();
    c.opportunity_density = j.at("opportunity_density").get<std::vector<double>>();
    c.value_per_conversion = j.at("value_per_conversion").get<double>();
    c.true_cvr_mean = j.at("true_cvr_mean").get<double>();
    c.competitor_price_scale = j.at("competitor_price_scale").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.initial_bid = j.at("initial_bid").get<double>();
    c.reward_mode = parse_reward_mode(j.value("reward_mode", std::string("sampled_conversions")));
    c.early_stop_hazard = j.value("early_stop_hazard", 0.0);
    c.validate();
    return c;
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("path", "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw LoadError("json", path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace

std::string configs_to_json_text(const std::vector<CampaignConfig>& configs) {
    json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["campaigns"] = json::array();
    for (const auto& c : configs) j["campaigns"].push_back(to_json(c));
    return j.dump(2) + "\n";
}

std::string configs_digest(const std::vector<CampaignConfig>& configs) {
    return sha256_hex(configs_to_json_text(configs));
}

void save_configs(const std::filesystem::path& path, const std::vector<CampaignConfig>& configs) {
    write_file_atomic(path, configs_to_json_text(configs));
}

std::vector<CampaignConfig> load_configs(const std::filesystem::path& path) {
    const json j = read_json(path);
    if (!j.contains("schema_version")) throw LoadError("schema_version", "missing");
    if (j["schema_version"].get<int>() != kConfigSchemaVersion) {
        throw LoadError("schema_version", "unsupported config schema version " + j["schema_version"].dump());
    }
    std::vector<CampaignConfig> out;
    try {
        for (const auto& c : j.at("campaigns")) out.push_back(config_from_json(c));
    } catch (const json::exception& e) {
        throw LoadError("campaigns", e.what());
    }
    if (out.empty()) throw ConfigError("config file contains no campaigns");
    return out;
}

ConfigRanges load_ranges(const std::filesystem::path& path) {
    const json j = read_json(path);
    ConfigRanges r;
    try {
        r.budget_lo = j.value("budget_lo", r.budget_lo);
        r.budget_hi = j.value("budget_hi", r.budget_hi);
        r.audience_lo = j.value("audience_lo", r.audience_lo);
        r.audience_hi = j.value("audience_hi", r.audience_hi);
        r.horizon = j.value("horizon", r.horizon);
        r.value_lo = j.value("value_lo", r.value_lo);
        r.value_hi = j.value("value_hi", r.value_hi);
        r.cvr_lo = j.value("cvr_lo", r.cvr_lo);
        r.cvr_hi = j.value("cvr_hi", r.cvr_hi);
        r.price_scale_lo = j.value("price_scale_lo", r.price_scale_lo);
        r.price_scale_hi = j.value("price_scale_hi", r.price_scale_hi);
        r.max_bumps = j.value("max_bumps", r.max_bumps);
        r.initial_bid_factor_lo = j.value("initial_bid_factor_lo", r.initial_bid_factor_lo);
        r.initial_bid_factor_hi = j.value("initial_bid_factor_hi", r.initial_bid_factor_hi);
        r.reward_mode = parse_reward_mode(j.value("reward_mode", std::string("sampled_conversions")));
        r.early_stop_hazard = j.value("early_stop_hazard", r.early_stop_hazard);
    } catch (const json::exception& e) {
        throw LoadError("ranges", e.what());
    }
    r.validate();
    return r;
}

void save_ranges(const std::filesystem::path& path, const ConfigRanges& r) {
    write_json(path, json{{"budget_lo", r.budget_lo},
                          {"budget_hi", r.budget_hi},
                          {"audience_lo", r.audience_lo},
                          {"audience_hi", r.audience_hi},
                          {"horizon", r.horizon},
                          {"value_lo", r.value_lo},
                          {"value_hi", r.value_hi},
                          {"cvr_lo", r.cvr_lo},
                          {"cvr_hi", r.cvr_hi},
                          {"price_scale_lo", r.price_scale_lo},
                          {"price_scale_hi", r.price_scale_hi},
                          {"max_bumps", r.max_bumps},
                          {"initial_bid_factor_lo", r.initial_bid_factor_lo},
                          {"initial_bid_factor_hi", r.initial_bid_factor_hi},
                          {"reward_mode", r.reward_mode == RewardMode::expected_value ? "expected_value"
                                                                                      : "sampled_conversions"},
                          {"early_stop_hazard", r.early_stop_hazard}});
}

}  // namespace bidrl
