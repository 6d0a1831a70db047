#include "bidrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>

#include "bidrl/auction_sim.hpp"
#include "bidrl/dataset.hpp"
#include "bidrl/error.hpp"
#include "bidrl/parallel.hpp"

namespace bidrl {

namespace {

constexpr double kZ95 = 1.96;

std::uint64_t episode_seed(std::uint64_t seed, std::size_t config, std::size_t episode) {
    return derive_seed(derive_seed(seed, config), episode);
}

std::vector<std::shared_ptr<const CampaignConfig>> share(const std::vector<CampaignConfig>& configs) {
    if (configs.empty()) throw ConfigError("evaluation needs at least one campaign config");
    std::vector<std::shared_ptr<const CampaignConfig>> out;
    for (const auto& c : configs) {
        c.validate();
        out.push_back(std::make_shared<const CampaignConfig>(c));
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v, double mean) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::ofstream open_csv(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); }

}  // namespace

std::vector<double> episode_returns(const EvalPolicy& policy, const std::vector<CampaignConfig>& configs,
                                    int episodes_per_config, std::uint64_t seed, int workers) {
    if (episodes_per_config < 1) throw InvalidArgument("episodes_per_config must be >= 1");
    if (policy.noise) policy.noise->validate();
    const auto shared = share(configs);
    const auto epc = static_cast<std::size_t>(episodes_per_config);
    std::vector<double> out(shared.size() * epc);
    parallel_for(out.size(), workers, [&](std::size_t i) {
        const std::size_t c = i / epc, e = i % epc;
        const std::uint64_t s = episode_seed(seed, c, e);
        EnvState state = reset(shared[c], s);
        Rng noise_rng(derive_seed(s, 2));
        double total = 0.0;
        while (!state.done) {
            const double mean = policy.base.forward(observe(state));
            const double bid = policy.noise ? behavior_sample_from_mean(mean, *policy.noise, noise_rng) : mean;
            total += step_in_place(state, bid, mean).reward;
        }
        out[i] = total;
    });
    return out;
}

EvalResult summarize(const std::vector<double>& returns, const std::vector<double>& baseline, std::size_t n_configs) {
    if (returns.empty() || returns.size() != baseline.size() || n_configs == 0 || returns.size() % n_configs != 0) {
        throw ContractViolation("summarize: return vectors must be non-empty, aligned and config-major");
    }
    EvalResult r;
    const std::size_t n = returns.size(), epc = n / n_configs;
    r.episodes = static_cast<std::int64_t>(n);
    r.returns = returns;
    r.baseline_returns = baseline;
    r.pooled_mean = mean_of(returns);
    r.baseline_mean = mean_of(baseline);
    for (std::size_t c = 0; c < n_configs; ++c) {
        const auto first = returns.begin() + static_cast<std::ptrdiff_t>(c * epc);
        r.per_config_mean.push_back(std::accumulate(first, first + static_cast<std::ptrdiff_t>(epc), 0.0) /
                                    static_cast<double>(epc));
    }
    if (r.baseline_mean != 0.0) r.relative_gain_pct = 100.0 * (r.pooled_mean - r.baseline_mean) / r.baseline_mean;
    if (n >= 2) {
        r.ci_half_width = kZ95 * sample_std(returns, r.pooled_mean) / std::sqrt(static_cast<double>(n));
        if (r.baseline_mean != 0.0) {
            // Ratio estimator: residuals p_i - ratio * b_i carry the paired variance of mean(p) / mean(b).
            const double ratio = r.pooled_mean / r.baseline_mean;
            std::vector<double> d(n);
            for (std::size_t i = 0; i < n; ++i) d[i] = returns[i] - ratio * baseline[i];
            const double se = sample_std(d, mean_of(d)) / (std::sqrt(static_cast<double>(n)) * std::abs(r.baseline_mean));
            r.gain_ci_half_width_pct = 100.0 * kZ95 * se;
        }
    }
    return r;
}

EvalResult evaluate(const EvalPolicy& policy, const EvalPolicy& baseline, const std::vector<CampaignConfig>& configs,
                    int episodes_per_config, std::uint64_t seed, int workers) {
    return summarize(episode_returns(policy, configs, episodes_per_config, seed, workers),
                     episode_returns(baseline, configs, episodes_per_config, seed, workers), configs.size());
}

std::vector<EvalResult> learning_curve(const std::vector<CurvePoint>& points, const EvalPolicy& baseline,
                                       const std::vector<CampaignConfig>& configs, int episodes_per_config,
                                       std::uint64_t seed, int workers) {
    if (points.empty()) throw InvalidArgument("learning_curve: no checkpoints");
    const auto base_returns = episode_returns(baseline, configs, episodes_per_config, seed, workers);
    std::vector<EvalResult> rows;
    for (const auto& p : points) {
        EvalResult r = summarize(episode_returns({p.policy, std::nullopt}, configs, episodes_per_config, seed, workers),
                                 base_returns, configs.size());
        r.checkpoint_id = p.id;
        r.step = p.step;
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_eval_csv(const std::vector<EvalResult>& rows, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "checkpoint,step,episodes,mean_return,ci_half_width,baseline_mean,gain_pct,gain_ci_half_width_pct\n";
    for (const auto& r : rows) {
        out << r.checkpoint_id << ',' << r.step << ',' << r.episodes << ',' << fmt(r.pooled_mean) << ','
            << fmt(r.ci_half_width) << ',' << fmt(r.baseline_mean) << ',' << fmt(r.relative_gain_pct) << ','
            << fmt(r.gain_ci_half_width_pct) << '\n';
    }
}

void write_curve_plot_data(const std::vector<EvalResult>& rows, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "x,y,err\n";
    for (const auto& r : rows) {
        out << r.step << ',' << fmt(r.relative_gain_pct) << ',' << fmt(r.gain_ci_half_width_pct.value_or(0.0)) << '\n';
    }
}

double checkpoint_gain_variance(const std::vector<EvalResult>& rows) {
    if (rows.size() < 3) return 0.0;
    std::vector<double> d;
    for (std::size_t i = 1; i < rows.size(); ++i) d.push_back(rows[i].relative_gain_pct - rows[i - 1].relative_gain_pct);
    return std::pow(sample_std(d, mean_of(d)), 2);
}

double TimestepCurve::fraction_within(double k) const {
    if (q_mean.empty()) return 0.0;
    std::size_t ok = 0;
    for (std::size_t t = 0; t < q_mean.size(); ++t) {
        if (std::abs(q_mean[t] - rtg_mean[t]) <= k * rtg_std[t]) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(q_mean.size());
}

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("pearson_correlation: need two aligned samples");
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

namespace {

struct EpisodeTrace {
    double q0 = 0.0;
    double discounted = 0.0;
    std::vector<double> q;
    std::vector<double> rtg;
};

}  // namespace

CriticDiagnostic critic_diagnostics(const HybridActor& actor, const TwinCritic& critic, double gamma,
                                    const std::vector<CampaignConfig>& configs, int episodes_per_config,
                                    std::uint64_t seed, const std::vector<std::size_t>& probe_configs, int workers) {
    if (episodes_per_config < 1) throw InvalidArgument("episodes_per_config must be >= 1");
    auto shared = share(configs);
    std::stable_sort(shared.begin(), shared.end(), [](const auto& a, const auto& b) { return a->budget < b->budget; });
    std::vector<bool> probe(shared.size(), false);
    for (std::size_t p : probe_configs) {
        if (p >= shared.size()) throw InvalidArgument("critic_diagnostics: probe index out of range");
        probe[p] = true;
    }
    const double to_value = 1.0 / critic.reward_scale;
    const auto epc = static_cast<std::size_t>(episodes_per_config);
    std::vector<EpisodeTrace> traces(shared.size() * epc);
    parallel_for(traces.size(), workers, [&](std::size_t i) {
        const std::size_t c = i / epc, e = i % epc;
        const std::uint64_t s = episode_seed(seed, c, e);
        Rng policy_rng(derive_seed(s, 3));
        EpisodeTrace& tr = traces[i];
        std::vector<double> rewards;
        const auto steps = rollout_episode(shared[c], s, e, [&](const ActorObservation& obs, const EnvState& st) {
            const double mean = actor.act_mean(obs);
            const double a = actor.act_sample(obs, policy_rng).action;
            if (st.step_index == 0 || probe[c]) {
                const double q = critic.q_value(observe_critic(st), a).q_min * to_value;
                if (st.step_index == 0) tr.q0 = q;
                if (probe[c]) tr.q.push_back(q);
            }
            return std::pair{a, mean};
        });
        for (const auto& t : steps) rewards.push_back(t.reward);
        tr.discounted = discounted_return(rewards, gamma);
        if (probe[c]) tr.rtg = returns_to_go(rewards, gamma);
    });

    CriticDiagnostic d;
    std::vector<double> pred, emp;
    for (std::size_t c = 0; c < shared.size(); ++c) {
        CampaignDiagnostic cd;
        cd.config_id = shared[c]->id;
        cd.budget = shared[c]->budget;
        cd.episodes = episodes_per_config;
        std::vector<double> ret;
        for (std::size_t e = 0; e < epc; ++e) {
            cd.predicted_q += traces[c * epc + e].q0 / static_cast<double>(epc);
            ret.push_back(traces[c * epc + e].discounted);
        }
        cd.empirical_mean = mean_of(ret);
        cd.empirical_std = ret.size() > 1 ? sample_std(ret, cd.empirical_mean) : 0.0;
        pred.push_back(cd.predicted_q);
        emp.push_back(cd.empirical_mean);
        d.campaigns.push_back(cd);

        if (!probe[c]) continue;
        TimestepCurve curve;
        curve.config_id = cd.config_id;
        std::size_t len = 0;
        for (std::size_t e = 0; e < epc; ++e) len = std::max(len, traces[c * epc + e].q.size());
        for (std::size_t t = 0; t < len; ++t) {
            std::vector<double> q, g;
            for (std::size_t e = 0; e < epc; ++e) {
                const auto& tr = traces[c * epc + e];
                if (t < tr.q.size()) {
                    q.push_back(tr.q[t]);
                    g.push_back(tr.rtg[t]);
                }
            }
            curve.count.push_back(static_cast<int>(q.size()));
            curve.q_mean.push_back(mean_of(q));
            curve.rtg_mean.push_back(mean_of(g));
            curve.q_std.push_back(q.size() > 1 ? sample_std(q, curve.q_mean.back()) : 0.0);
            curve.rtg_std.push_back(g.size() > 1 ? sample_std(g, curve.rtg_mean.back()) : 0.0);
        }
        d.curves.push_back(std::move(curve));
    }
    d.pearson = pred.size() >= 2 ? pearson_correlation(pred, emp) : 0.0;
    return d;
}

void write_campaign_csv(const CriticDiagnostic& d, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "config_id,budget,predicted_q,empirical_mean,empirical_std,episodes\n";
    for (const auto& c : d.campaigns) {
        out << c.config_id << ',' << fmt(c.budget) << ',' << fmt(c.predicted_q) << ',' << fmt(c.empirical_mean) << ','
            << fmt(c.empirical_std) << ',' << c.episodes << '\n';
    }
}

void write_timestep_csv(const CriticDiagnostic& d, const std::filesystem::path& path) {
    auto out = open_csv(path);
    out << "config_id,step,q_mean,q_std,rtg_mean,rtg_std,count\n";
    for (const auto& c : d.curves) {
        for (std::size_t t = 0; t < c.q_mean.size(); ++t) {
            out << c.config_id << ',' << t << ',' << fmt(c.q_mean[t]) << ',' << fmt(c.q_std[t]) << ','
                << fmt(c.rtg_mean[t]) << ',' << fmt(c.rtg_std[t]) << ',' << c.count[t] << '\n';
        }
    }
}

}  // namespace bidrl
