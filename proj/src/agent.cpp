#include "bidrl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bidrl/error.hpp"

namespace bidrl {

Standardizer Standardizer::identity(Eigen::Index n) { return {Vec::Zero(n), Vec::Ones(n)}; }

Standardizer Standardizer::fit(const Mat& samples) {
    if (samples.cols() < 1) throw InvalidArgument("Standardizer::fit: no samples");
    Standardizer s;
    s.mean = samples.rowwise().mean();
    const Mat centered = samples.colwise() - s.mean;
    const Vec var = centered.rowwise().squaredNorm() / static_cast<double>(samples.cols());
    s.inv_scale = var.unaryExpr([](double v) { return v > 1e-16 ? 1.0 / std::sqrt(v) : 1.0; });
    return s;
}

namespace {

double safe_log(double x) { return std::log(std::max(x, kActionFloor)); }

}  // namespace

Vec actor_features(const ActorObservation& o) {
    Vec f(kActorFeatureCount);
    const double log_last = safe_log(o.last_action);
    f << o.fraction_budget_spent, o.fraction_time_elapsed, o.fraction_opportunities_passed,
        o.avg_past_bid > 0.0 ? safe_log(o.avg_past_bid) - log_last : 0.0, log_last, o.pacing_error,
        o.cumulative_pacing_error;
    return f;
}

Vec critic_state_features(const CriticObservation& o) {
    Vec f(kCriticStateFeatureCount);
    f.head(kActorFeatureCount) = actor_features(o.actor);
    f.tail(6) << (o.total_budget > 0.0 ? o.remaining_budget / o.total_budget : 0.0), std::log(std::max(o.total_budget, 1e-12)),
        std::log(std::max(o.audience_size, 1.0)), std::log1p(o.current_step_density), o.step_index, o.recent_win_rate;
    return f;
}

double raw_action_feature(double action, double reference_bid) { return safe_log(action) - safe_log(reference_bid); }

HybridActor::HybridActor(BasePolicy base_policy, const std::vector<int>& hidden, Rng& rng, double initial_rel_std)
    : base(std::move(base_policy)) {
    std::vector<int> widths{kActorFeatureCount};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(1);
    variance_net = MlpNet(widths);
    variance_net.init(rng, 1e-3);
    variance_net.bias(variance_net.layer_count() - 1)(0) = std::log(initial_rel_std);
}

double HybridActor::rel_std(const ActorObservation& obs) const {
    const double raw = forward(variance_net, norm.apply(actor_features(obs)))(0);
    return std::exp(std::clamp(raw, std::log(kMinRelStd), std::log(kMaxRelStd)));
}

double HybridActor::act_with_noise(const ActorObservation& obs, double xi) const {
    const double mean = act_mean(obs);
    return std::max(kActionFloor, mean + mean * rel_std(obs) * xi);
}

HybridActor::Sample HybridActor::act_sample(const ActorObservation& obs, Rng& rng) const {
    const double xi = rng.normal();
    return {act_with_noise(obs, xi), xi};
}

double HybridActor::log_prob(const ActorObservation& obs, double action) const {
    if (!std::isfinite(action)) throw InvalidArgument("log_prob: action must be finite");
    const double mean = act_mean(obs);
    const double sd = mean * rel_std(obs);
    const double z = (action - mean) / sd;
    return -std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * z * z;
}

TwinCritic::TwinCritic(int state_dim, const std::vector<int>& hidden, bool use_twin, Rng& rng, double output_scale)
    : twin(use_twin), state_norm(Standardizer::identity(state_dim)) {
    std::vector<int> widths{state_dim + 1};
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(1);
    for (int h = 0; h < 2; ++h) {
        online[static_cast<std::size_t>(h)] = MlpNet(widths);
        online[static_cast<std::size_t>(h)].init(rng, output_scale);
        target[static_cast<std::size_t>(h)] = online[static_cast<std::size_t>(h)];
    }
}

Mat TwinCritic::inputs(const Mat& states, const Vec& action_features) {
    if (states.cols() != action_features.size()) throw ContractViolation("TwinCritic::inputs: batch size mismatch");
    Mat x(states.rows() + 1, states.cols());
    x.topRows(states.rows()) = states;
    x.row(states.rows()) = action_features.transpose();
    return x;
}

namespace {

QValues eval_heads(const TwinCritic& c, const std::array<MlpNet, 2>& nets, const CriticObservation& obs,
                   double action) {
    Vec x(c.state_dim() + 1);
    x.head(c.state_dim()) = c.state_features(obs);
    x(c.state_dim()) = c.action_feature(action, obs.actor.last_action);
    QValues q;
    q.q1 = forward(nets[0], x)(0);
    q.q2 = c.twin ? forward(nets[1], x)(0) : q.q1;
    q.q_min = std::min(q.q1, q.q2);
    return q;
}

}  // namespace

QValues TwinCritic::q_value(const CriticObservation& obs, double action) const {
    return eval_heads(*this, online, obs, action);
}

QValues TwinCritic::q_value_target(const CriticObservation& obs, double action) const {
    return eval_heads(*this, target, obs, action);
}

}  // namespace bidrl
