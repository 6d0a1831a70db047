#include "bidrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bidrl/binio.hpp"
#include "bidrl/error.hpp"

namespace bidrl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

TrainConfig TrainConfig::desk_profile() {
    TrainConfig c;
    c.profile = "desk";
    c.gradient_steps = 10000;
    c.batch_size = 512;
    c.critic_lr = 1e-3;
    c.actor_lr = 3e-5;
    c.tau = 0.05;
    c.pretrain_steps = 5000;
    c.penalty_samples = 10;
    c.checkpoint_every = 500;
    c.log_every = 100;
    c.critic_hidden = {64, 64};
    c.variance_hidden = {32, 32};
    c.normalization_samples = 20000;
    return c;
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
    if (gradient_steps < 0) fail("gradient_steps must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(critic_lr > 0.0) || !(actor_lr > 0.0)) fail("learning rates must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
    if (!(cql_alpha >= 0.0)) fail("cql_alpha must be >= 0");
    if (penalty_samples < 2) fail("penalty_samples must be >= 2");
    if (!(tau > 0.0 && tau <= 1.0)) fail("tau must lie in (0, 1]");
    if (pretrain_steps < 0) fail("pretrain_steps must be >= 0");
    behavior_noise().validate();
    if (!(interval_epsilon > 0.0 && interval_epsilon < 1.0)) fail("interval_epsilon must lie in (0, 1)");
    if (checkpoint_every < 1 || log_every < 1) fail("checkpoint_every and log_every must be >= 1");
    if (critic_hidden.empty() || variance_hidden.empty()) fail("hidden layer lists must be non-empty");
    for (int h : critic_hidden) {
        if (h < 1) fail("hidden widths must be positive");
    }
    for (int h : variance_hidden) {
        if (h < 1) fail("hidden widths must be positive");
    }
    if (actor_entropy_weight < 0.0) fail("actor_entropy_weight must be >= 0");
    if (target_action_samples < 1) fail("target_action_samples must be >= 1");
    if (reward_scale < 0.0) fail("reward_scale must be >= 0");
    if (normalization_samples < 1) fail("normalization_samples must be >= 1");
}

json TrainConfig::to_json() const {
    return json{{"profile", profile},
                {"gradient_steps", gradient_steps},
                {"batch_size", batch_size},
                {"critic_lr", critic_lr},
                {"actor_lr", actor_lr},
                {"gamma", gamma},
                {"cql_alpha", cql_alpha},
                {"penalty_samples", penalty_samples},
                {"tau", tau},
                {"pretrain_steps", pretrain_steps},
                {"sigma_beta", sigma_beta},
                {"clip_lo", clip_lo},
                {"clip_hi", clip_hi},
                {"interval_epsilon", interval_epsilon},
                {"seed", seed},
                {"checkpoint_every", checkpoint_every},
                {"log_every", log_every},
                {"critic_hidden", critic_hidden},
                {"variance_hidden", variance_hidden},
                {"twin_critics", twin_critics},
                {"actor_entropy_weight", actor_entropy_weight},
                {"target_action_samples", target_action_samples},
                {"reward_scale", reward_scale},
                {"normalization_samples", normalization_samples},
                {"min_mean_rel_std", min_mean_rel_std},
                {"max_mean_rel_std", max_mean_rel_std}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    const std::string profile = j.value("profile", std::string("paper"));
    TrainConfig c;
    if (profile == "desk") {
        c = desk_profile();
    } else if (profile != "paper") {
        throw ConfigError("train config: unknown profile '" + profile + "'");
    }
    try {
        const json base = c.to_json();
        for (const auto& [key, value] : j.items()) {
            if (!base.contains(key)) throw ConfigError("train config: unknown key '" + key + "'");
        }
        c.gradient_steps = j.value("gradient_steps", c.gradient_steps);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.critic_lr = j.value("critic_lr", c.critic_lr);
        c.actor_lr = j.value("actor_lr", c.actor_lr);
        c.gamma = j.value("gamma", c.gamma);
        c.cql_alpha = j.value("cql_alpha", c.cql_alpha);
        c.penalty_samples = j.value("penalty_samples", c.penalty_samples);
        c.tau = j.value("tau", c.tau);
        c.pretrain_steps = j.value("pretrain_steps", c.pretrain_steps);
        c.sigma_beta = j.value("sigma_beta", c.sigma_beta);
        c.clip_lo = j.value("clip_lo", c.clip_lo);
        c.clip_hi = j.value("clip_hi", c.clip_hi);
        c.interval_epsilon = j.value("interval_epsilon", c.interval_epsilon);
        c.seed = j.value("seed", c.seed);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.log_every = j.value("log_every", c.log_every);
        c.critic_hidden = j.value("critic_hidden", c.critic_hidden);
        c.variance_hidden = j.value("variance_hidden", c.variance_hidden);
        c.twin_critics = j.value("twin_critics", c.twin_critics);
        c.actor_entropy_weight = j.value("actor_entropy_weight", c.actor_entropy_weight);
        c.target_action_samples = j.value("target_action_samples", c.target_action_samples);
        c.reward_scale = j.value("reward_scale", c.reward_scale);
        c.normalization_samples = j.value("normalization_samples", c.normalization_samples);
        c.min_mean_rel_std = j.value("min_mean_rel_std", c.min_mean_rel_std);
        c.max_mean_rel_std = j.value("max_mean_rel_std", c.max_mean_rel_std);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw LoadError("json", path.string() + ": " + e.what());
    }
}

std::uint64_t TrainConfig::hash() const { return hash64(to_json().dump()); }

// ---------------------------------------------------------------------------
// Batches

namespace {

/// Relative std for standardized actor features; also reports which columns hit a clamp bound.
Vec rel_std_batch(const HybridActor& actor, const Mat& features, ForwardCache* cache,
                  std::vector<bool>* unclamped) {
    const Mat raw = forward_batch(actor.variance_net, features, cache);
    const double lo = std::log(kMinRelStd), hi = std::log(kMaxRelStd);
    Vec out(raw.cols());
    if (unclamped) unclamped->assign(static_cast<std::size_t>(raw.cols()), true);
    for (Eigen::Index i = 0; i < raw.cols(); ++i) {
        const double r = raw(0, i);
        if (unclamped && (r < lo || r > hi)) (*unclamped)[static_cast<std::size_t>(i)] = false;
        out(i) = std::exp(std::clamp(r, lo, hi));
    }
    return out;
}

Mat standardized_actor_features(std::span<const ActorObservation* const> obs, const HybridActor& actor) {
    Mat f(kActorFeatureCount, static_cast<Eigen::Index>(obs.size()));
    for (std::size_t i = 0; i < obs.size(); ++i) f.col(static_cast<Eigen::Index>(i)) = actor_features(*obs[i]);
    actor.norm.apply_inplace(f);
    return f;
}

Mat standardized_critic_states(std::span<const CriticObservation* const> obs, const TwinCritic& critic) {
    Mat f(kCriticStateFeatureCount, static_cast<Eigen::Index>(obs.size()));
    for (std::size_t i = 0; i < obs.size(); ++i) f.col(static_cast<Eigen::Index>(i)) = critic_state_features(*obs[i]);
    critic.state_norm.apply_inplace(f);
    return f;
}

Mat head_forward(const MlpNet& net, const Mat& states, const Vec& action_features, ForwardCache* cache = nullptr) {
    return forward_batch(net, TwinCritic::inputs(states, action_features), cache);
}

/// Repeats each state column k times (state-major order).
Mat repeat_states(const Mat& states, int k) {
    Mat out(states.rows(), states.cols() * k);
    for (Eigen::Index i = 0; i < states.cols(); ++i) {
        for (int j = 0; j < k; ++j) out.col(i * k + j) = states.col(i);
    }
    return out;
}

Vec sample_interval_features(const CriticBatch& b, const TwinCritic& critic, int k, double epsilon, Rng& rng) {
    Vec f(b.size() * k);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        const auto [lo, hi] = behavior_interval(b.behavior_means(i), epsilon);
        for (int j = 0; j < k; ++j) f(i * k + j) = critic.action_feature(rng.uniform(lo, hi), b.reference_bids(i));
    }
    return f;
}

Vec sample_behavior_features(const CriticBatch& b, const TwinCritic& critic, int k, const BehaviorNoiseSpec& noise,
                             Rng& rng) {
    Vec f(b.size() * k);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
        for (int j = 0; j < k; ++j) {
            f(i * k + j) =
                critic.action_feature(behavior_sample_from_mean(b.behavior_means(i), noise, rng), b.reference_bids(i));
        }
    }
    return f;
}

/// Value of a penalty estimate together with dValue/dQ for every sampled action.
struct PenaltyPass {
    double value = 0.0;
    ForwardCache cache;
    Mat cotangent;
};

PenaltyPass log_mean_exp_pass(const MlpNet& net, const Mat& repeated_states, const Vec& features, int k,
                              bool keep_cache) {
    PenaltyPass p;
    const Mat q = head_forward(net, repeated_states, features, keep_cache ? &p.cache : nullptr);
    const Eigen::Index n = q.cols() / k;
    p.cotangent.resize(1, q.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto block = q.block(0, i * k, 1, k);
        const double m = block.maxCoeff();
        const Eigen::RowVectorXd e = (block.array() - m).exp().matrix();
        const double s = e.sum();
        total += m + std::log(s / k);
        p.cotangent.block(0, i * k, 1, k) = e / (s * static_cast<double>(n));
    }
    p.value = total / static_cast<double>(n);
    return p;
}

PenaltyPass mean_pass(const MlpNet& net, const Mat& repeated_states, const Vec& features, bool keep_cache) {
    PenaltyPass p;
    const Mat q = head_forward(net, repeated_states, features, keep_cache ? &p.cache : nullptr);
    p.value = q.mean();
    p.cotangent = Mat::Constant(1, q.cols(), 1.0 / static_cast<double>(q.cols()));
    return p;
}

}  // namespace

CriticBatch make_critic_batch(std::span<const Transition* const> ts, const HybridActor& actor,
                              const TwinCritic& critic, int target_action_samples, Rng& rng) {
    const auto n = static_cast<Eigen::Index>(ts.size());
    CriticBatch b;
    std::vector<const CriticObservation*> cs, next_cs;
    std::vector<const ActorObservation*> next_as;
    for (const Transition* t : ts) {
        cs.push_back(&t->critic_obs);
        next_cs.push_back(&t->next_critic_obs);
        next_as.push_back(&t->next_actor_obs);
    }
    b.states = standardized_critic_states(cs, critic);
    b.next_states = standardized_critic_states(next_cs, critic);
    b.action_features.resize(n);
    b.rewards.resize(n);
    b.not_done.resize(n);
    b.behavior_means.resize(n);
    b.reference_bids.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Transition& t = *ts[static_cast<std::size_t>(i)];
        b.reference_bids(i) = t.actor_obs.last_action;
        b.action_features(i) = critic.action_feature(t.action, t.actor_obs.last_action);
        b.rewards(i) = t.reward * critic.reward_scale;
        b.not_done(i) = t.done ? 0.0 : 1.0;
        b.behavior_means(i) = t.behavior_mean;
    }
    const Vec rel = rel_std_batch(actor, standardized_actor_features(next_as, actor), nullptr, nullptr);
    b.next_action_features.resize(target_action_samples, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const ActorObservation& o = *next_as[static_cast<std::size_t>(i)];
        const double mean = actor.act_mean(o);
        for (int j = 0; j < target_action_samples; ++j) {
            const double a = std::max(kActionFloor, mean * (1.0 + rel(i) * rng.normal()));
            b.next_action_features(j, i) = critic.action_feature(a, o.last_action);
        }
    }
    return b;
}

Vec critic_target(const CriticBatch& b, const TwinCritic& critic, double gamma) {
    Vec next_q = Vec::Zero(b.size());
    const auto m = b.next_action_features.rows();
    for (Eigen::Index j = 0; j < m; ++j) {
        const Vec feats = b.next_action_features.row(j).transpose();
        Mat q = head_forward(critic.target[0], b.next_states, feats);
        if (critic.twin) q = q.cwiseMin(head_forward(critic.target[1], b.next_states, feats));
        next_q += q.row(0).transpose();
    }
    next_q /= static_cast<double>(m);
    return b.rewards + gamma * b.not_done.cwiseProduct(next_q);
}

double cql_term1(const CriticBatch& b, const TwinCritic& critic, int head, int k, double epsilon, Rng& rng) {
    if (k < 2) throw ConfigError("cql_term1: need at least 2 samples");
    const Vec f = sample_interval_features(b, critic, k, epsilon, rng);
    return log_mean_exp_pass(critic.online[static_cast<std::size_t>(head)], repeat_states(b.states, k), f, k, false)
        .value;
}

double cql_term2(const CriticBatch& b, const TwinCritic& critic, int head, int k, const BehaviorNoiseSpec& noise,
                 Rng& rng) {
    if (k < 1) throw ConfigError("cql_term2: need at least 1 sample");
    const Vec f = sample_behavior_features(b, critic, k, noise, rng);
    return mean_pass(critic.online[static_cast<std::size_t>(head)], repeat_states(b.states, k), f, false).value;
}

// ---------------------------------------------------------------------------
// Updates

std::string LossReport::csv_header() {
    return "step,bellman_loss,cql_term1,cql_term2,cql_penalty,actor_loss,mean_rel_std,critic_grad_norm,"
           "actor_grad_norm_w,actor_grad_norm_phi,actor_updated";
}

std::string LossReport::csv_row() const {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%d",
                  static_cast<long long>(step), bellman_loss, cql_term1, cql_term2, cql_penalty, actor_loss,
                  mean_rel_std, critic_grad_norm, actor_grad_norm_w, actor_grad_norm_phi, actor_updated ? 1 : 0);
    return buf;
}

LossReport critic_update(const CriticBatch& b, TwinCritic& critic, CriticOptimizers& opt, const TrainConfig& cfg,
                         Rng& rng) {
    const Vec y = critic_target(b, critic, cfg.gamma);
    const auto n = static_cast<double>(b.size());
    const bool penalize = cfg.cql_alpha > 0.0;
    const int k = cfg.penalty_samples;

    Mat rep_states;
    Vec f1, f2;
    if (penalize) {
        rep_states = repeat_states(b.states, k);
        f1 = sample_interval_features(b, critic, k, cfg.interval_epsilon, rng);
        f2 = sample_behavior_features(b, critic, k, cfg.behavior_noise(), rng);
    }

    LossReport r;
    double grad_sq = 0.0;
    for (int h = 0; h < critic.heads(); ++h) {
        MlpNet& net = critic.online[static_cast<std::size_t>(h)];
        ForwardCache cache;
        const Mat q = head_forward(net, b.states, b.action_features, &cache);
        const Vec residual = q.row(0).transpose() - y;
        const double bellman = 0.5 * residual.squaredNorm() / n;
        if (!std::isfinite(bellman)) throw TrainingFault("critic_update: non-finite Bellman loss");
        Vec grad = Vec::Zero(net.param_count());
        backward_accumulate(net, cache, residual.transpose() / n, grad);
        r.bellman_loss += bellman / critic.heads();
        if (penalize) {
            PenaltyPass p1 = log_mean_exp_pass(net, rep_states, f1, k, true);
            PenaltyPass p2 = mean_pass(net, rep_states, f2, true);
            if (!std::isfinite(p1.value) || !std::isfinite(p2.value)) {
                throw TrainingFault("critic_update: non-finite penalty term");
            }
            backward_accumulate(net, p1.cache, cfg.cql_alpha * p1.cotangent, grad);
            backward_accumulate(net, p2.cache, -cfg.cql_alpha * p2.cotangent, grad);
            r.cql_term1 += p1.value / critic.heads();
            r.cql_term2 += p2.value / critic.heads();
        }
        grad_sq += grad.squaredNorm();
        adam_step(opt.heads[static_cast<std::size_t>(h)], net.params(), grad);
    }
    r.cql_penalty = cfg.cql_alpha * (r.cql_term1 - r.cql_term2);
    r.critic_grad_norm = std::sqrt(grad_sq);
    for (int h = 0; h < critic.heads(); ++h) {
        soft_update(critic.target[static_cast<std::size_t>(h)], critic.online[static_cast<std::size_t>(h)], cfg.tau);
    }
    return r;
}

ActorBatch make_actor_batch(std::span<const Transition* const> ts, const HybridActor& actor,
                            const TwinCritic& critic) {
    ActorBatch b;
    std::vector<const ActorObservation*> as;
    std::vector<const CriticObservation*> cs;
    for (const Transition* t : ts) {
        b.obs.push_back(t->actor_obs);
        as.push_back(&t->actor_obs);
        cs.push_back(&t->critic_obs);
    }
    b.actor_features = standardized_actor_features(as, actor);
    b.critic_states = standardized_critic_states(cs, critic);
    return b;
}

ActorGradient actor_loss_and_grad(const ActorBatch& b, const HybridActor& actor, const TwinCritic& critic,
                                  const Vec& xi, double entropy_weight) {
    const auto n = static_cast<Eigen::Index>(b.obs.size());
    if (xi.size() != n) throw ContractViolation("actor_loss_and_grad: noise size mismatch");
    const auto p = static_cast<Eigen::Index>(actor.base.params().size());

    ForwardCache var_cache;
    std::vector<bool> unclamped;
    const Vec rel = rel_std_batch(actor, b.actor_features, &var_cache, &unclamped);

    Vec mean(n), action(n), feats(n);
    std::vector<bool> floored(static_cast<std::size_t>(n), false);
    for (Eigen::Index i = 0; i < n; ++i) {
        const ActorObservation& o = b.obs[static_cast<std::size_t>(i)];
        mean(i) = actor.act_mean(o);
        const double raw = mean(i) * (1.0 + rel(i) * xi(i));
        floored[static_cast<std::size_t>(i)] = raw <= kActionFloor;
        action(i) = std::max(kActionFloor, raw);
        feats(i) = critic.action_feature(action(i), o.last_action);
    }

    // q_min and dq_min/d(action feature), routed through whichever head is smaller.
    const Mat x = TwinCritic::inputs(b.critic_states, feats);
    std::array<ForwardCache, 2> caches;
    std::array<Mat, 2> q;
    for (int h = 0; h < critic.heads(); ++h) {
        q[static_cast<std::size_t>(h)] = forward_batch(critic.online[static_cast<std::size_t>(h)], x, &caches[static_cast<std::size_t>(h)]);
    }
    Vec q_min(n);
    std::array<Mat, 2> select{Mat::Zero(1, n), Mat::Zero(1, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const int h = critic.twin && q[1](0, i) < q[0](0, i) ? 1 : 0;
        q_min(i) = q[static_cast<std::size_t>(h)](0, i);
        select[static_cast<std::size_t>(h)](0, i) = 1.0;
    }
    Vec dq_dfeat = Vec::Zero(n);
    for (int h = 0; h < critic.heads(); ++h) {
        Vec unused;
        Mat in_grad;
        backward_accumulate(critic.online[static_cast<std::size_t>(h)], caches[static_cast<std::size_t>(h)],
                            select[static_cast<std::size_t>(h)], unused, &in_grad);
        dq_dfeat += in_grad.row(in_grad.rows() - 1).transpose();
    }

    ActorGradient g;
    g.grad_w = Vec::Zero(p);
    Mat var_cot(1, n);
    double log_pi_sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const ActorObservation& o = b.obs[static_cast<std::size_t>(i)];
        const bool free = unclamped[static_cast<std::size_t>(i)];
        double dl_da = 0.0;
        if (!floored[static_cast<std::size_t>(i)]) {
            dl_da = -dq_dfeat(i) * critic.action_feature_grad(action(i)) / static_cast<double>(n);
        }
        // a = F (1 + rho xi): da/dF = 1 + rho xi, da/d(raw) = F rho xi when the clamp is inactive.
        double dl_dmean = dl_da * (1.0 + rel(i) * xi(i));
        double dl_draw = free ? dl_da * mean(i) * rel(i) * xi(i) : 0.0;
        if (entropy_weight > 0.0) {
            // log pi = -log(F rho) - log(2 pi)/2 - xi^2/2 under reparameterization.
            const double sd = mean(i) * rel(i);
            log_pi_sum += -std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * xi(i) * xi(i);
            dl_dmean += -entropy_weight / (static_cast<double>(n) * mean(i));
            if (free) dl_draw += -entropy_weight / static_cast<double>(n);
        }
        if (dl_dmean != 0.0) {
            const std::vector<double> dF = actor.base.grad(o);
            for (Eigen::Index j = 0; j < p; ++j) g.grad_w(j) += dl_dmean * dF[static_cast<std::size_t>(j)];
        }
        var_cot(0, i) = dl_draw;
    }
    g.grad_phi = Vec::Zero(actor.variance_net.param_count());
    backward_accumulate(actor.variance_net, var_cache, var_cot, g.grad_phi);
    g.loss = -q_min.mean() + entropy_weight * log_pi_sum / static_cast<double>(n);
    g.mean_rel_std = rel.mean();
    return g;
}

LossReport actor_update(const ActorBatch& b, HybridActor& actor, const TwinCritic& critic, ActorOptimizers& opt,
                        const TrainConfig& cfg, Rng& rng) {
    Vec xi(static_cast<Eigen::Index>(b.obs.size()));
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = rng.normal();
    const ActorGradient g = actor_loss_and_grad(b, actor, critic, xi, cfg.actor_entropy_weight);
    if (!std::isfinite(g.loss)) throw TrainingFault("actor_update: non-finite actor loss");
    if (g.mean_rel_std < cfg.min_mean_rel_std || g.mean_rel_std > cfg.max_mean_rel_std) {
        throw TrainingFault("actor_update: mean relative std left the allowed range");
    }
    Vec w = Eigen::Map<const Vec>(actor.base.params().values.data(),
                                  static_cast<Eigen::Index>(actor.base.params().values.size()));
    adam_step(opt.base, w, g.grad_w);
    actor.base.set_values(std::vector<double>(w.data(), w.data() + w.size()));
    adam_step(opt.variance, actor.variance_net.params(), g.grad_phi);

    LossReport r;
    r.actor_loss = g.loss;
    r.mean_rel_std = g.mean_rel_std;
    r.actor_grad_norm_w = g.grad_w.norm();
    r.actor_grad_norm_phi = g.grad_phi.norm();
    r.actor_updated = true;
    return r;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kCkptMagic = "BIDRLCK1";

void write_net(BinaryWriter& w, const MlpNet& net) {
    w.u32(static_cast<std::uint32_t>(net.widths().size()));
    for (int x : net.widths()) w.u32(static_cast<std::uint32_t>(x));
    w.vec(net.params());
}

MlpNet read_net(BinaryReader& r) {
    const auto n = r.u32();
    if (n < 2 || n > 64) throw LoadError("network", "implausible layer count");
    std::vector<int> widths;
    for (std::uint32_t i = 0; i < n; ++i) widths.push_back(static_cast<int>(r.u32()));
    MlpNet net(widths);
    Vec p = r.vec();
    if (p.size() != net.param_count()) throw LoadError("network", "parameter count does not match topology");
    net.params() = std::move(p);
    return net;
}

void write_adam(BinaryWriter& w, const AdamState& a) {
    w.vec(a.m);
    w.vec(a.v);
    w.i64(a.step);
    w.f64(a.lr);
    w.f64(a.beta1);
    w.f64(a.beta2);
    w.f64(a.eps);
}

AdamState read_adam(BinaryReader& r) {
    AdamState a;
    a.m = r.vec();
    a.v = r.vec();
    a.step = r.i64();
    a.lr = r.f64();
    a.beta1 = r.f64();
    a.beta2 = r.f64();
    a.eps = r.f64();
    return a;
}

void write_standardizer(BinaryWriter& w, const Standardizer& s) {
    w.vec(s.mean);
    w.vec(s.inv_scale);
}

Standardizer read_standardizer(BinaryReader& r) {
    Standardizer s;
    s.mean = r.vec();
    s.inv_scale = r.vec();
    if (s.mean.size() != s.inv_scale.size()) throw LoadError("standardizer", "size mismatch");
    return s;
}

}  // namespace

std::string Checkpoint::serialize() const {
    BinaryWriter w;
    w.bytes(kCkptMagic);
    w.u32(schema_version);
    w.u64(config_hash);
    w.str(config_json);
    w.str(dataset_digest);
    w.i64(step);
    w.str(actor.base.to_json().dump());
    w.f64s(default_params.values);
    write_standardizer(w, actor.norm);
    write_net(w, actor.variance_net);
    w.u8(critic.twin ? 1 : 0);
    write_standardizer(w, critic.state_norm);
    w.f64(critic.action_mean);
    w.f64(critic.action_inv_scale);
    w.f64(critic.reward_scale);
    for (int h = 0; h < 2; ++h) {
        write_net(w, critic.online[static_cast<std::size_t>(h)]);
        write_net(w, critic.target[static_cast<std::size_t>(h)]);
        write_adam(w, critic_opt.heads[static_cast<std::size_t>(h)]);
    }
    write_adam(w, actor_opt.base);
    write_adam(w, actor_opt.variance);
    w.str(rng_state);
    w.str(sampler_state);
    w.u32(crc32_of(w.buffer()));
    return std::move(w.buffer());
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
    if (bytes.size() < kCkptMagic.size() + 8) throw LoadError("checksum", "file too short to hold a checkpoint");
    const std::string_view body = bytes.substr(0, bytes.size() - 4);
    {
        BinaryReader f(bytes.substr(bytes.size() - 4));
        f.field("checksum");
        if (f.u32() != crc32_of(body)) throw LoadError("checksum", "checksum mismatch (file truncated or corrupted)");
    }
    BinaryReader r(body);
    Checkpoint c;
    r.field("magic");
    if (r.bytes(kCkptMagic.size()) != kCkptMagic) throw LoadError("magic", "not a checkpoint file");
    r.field("schema_version");
    c.schema_version = r.u32();
    if (c.schema_version != kCheckpointSchemaVersion) {
        throw LoadError("schema_version", "unsupported checkpoint schema version " + std::to_string(c.schema_version));
    }
    r.field("config");
    c.config_hash = r.u64();
    c.config_json = r.str();
    if (TrainConfig::from_json(json::parse(c.config_json)).hash() != c.config_hash) {
        throw LoadError("config_hash", "stored config does not match its hash");
    }
    c.dataset_digest = r.str();
    r.field("step");
    c.step = r.i64();
    r.field("actor");
    c.actor.base = BasePolicy::from_json(json::parse(r.str()));
    c.default_params = c.actor.base.params();
    c.default_params.values = r.f64s();
    if (c.default_params.values.size() != c.actor.base.params().size()) {
        throw LoadError("actor", "default parameter count mismatch");
    }
    c.actor.norm = read_standardizer(r);
    c.actor.variance_net = read_net(r);
    r.field("critic");
    c.critic.twin = r.u8() == 1;
    c.critic.state_norm = read_standardizer(r);
    c.critic.action_mean = r.f64();
    c.critic.action_inv_scale = r.f64();
    c.critic.reward_scale = r.f64();
    for (int h = 0; h < 2; ++h) {
        c.critic.online[static_cast<std::size_t>(h)] = read_net(r);
        c.critic.target[static_cast<std::size_t>(h)] = read_net(r);
        c.critic_opt.heads[static_cast<std::size_t>(h)] = read_adam(r);
    }
    r.field("optimizers");
    c.actor_opt.base = read_adam(r);
    c.actor_opt.variance = read_adam(r);
    r.field("rng_state");
    c.rng_state = r.str();
    c.sampler_state = r.str();
    if (r.remaining() != 0) throw LoadError("trailer", "unexpected bytes after checkpoint body");
    return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

// ---------------------------------------------------------------------------
// Trainer

std::string dataset_digest(const Dataset& dataset) { return sha256_hex(serialize_dataset(dataset)); }

namespace {

std::vector<std::size_t> normalization_indices(std::size_t n, int want) {
    const std::size_t k = std::min<std::size_t>(n, static_cast<std::size_t>(want));
    std::vector<std::size_t> idx(k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = i * n / k;
    return idx;
}

}  // namespace

Trainer::Trainer(const Dataset& dataset, TrainConfig config, const BasePolicy& default_policy)
    : dataset_(&dataset),
      cfg_(std::move(config)),
      default_params_(default_policy.params()),
      rng_(derive_seed(cfg_.seed, 0)),
      sampler_(dataset.size(), derive_seed(cfg_.seed, 1)) {
    cfg_.validate();
    if (dataset.size() == 0) throw InvalidArgument("Trainer: empty dataset");
    actor_ = HybridActor(default_policy, cfg_.variance_hidden, rng_, cfg_.sigma_beta);
    critic_ = TwinCritic(kCriticStateFeatureCount, cfg_.critic_hidden, cfg_.twin_critics, rng_);

    const auto idx = normalization_indices(dataset.size(), cfg_.normalization_samples);
    Mat af(kActorFeatureCount, static_cast<Eigen::Index>(idx.size()));
    Mat cf(kCriticStateFeatureCount, static_cast<Eigen::Index>(idx.size()));
    Mat act(1, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Transition& t = dataset.transitions[idx[i]];
        af.col(static_cast<Eigen::Index>(i)) = actor_features(t.actor_obs);
        cf.col(static_cast<Eigen::Index>(i)) = critic_state_features(t.critic_obs);
        act(0, static_cast<Eigen::Index>(i)) = raw_action_feature(t.action, t.actor_obs.last_action);
    }
    actor_.norm = Standardizer::fit(af);
    critic_.state_norm = Standardizer::fit(cf);
    const Standardizer an = Standardizer::fit(act);
    critic_.action_mean = an.mean(0);
    critic_.action_inv_scale = an.inv_scale(0);

    if (cfg_.reward_scale > 0.0) {
        critic_.reward_scale = cfg_.reward_scale;
    } else {
        double total = 0.0;
        for (const auto& t : dataset.transitions) total += t.reward;
        const double per_episode = total / static_cast<double>(std::max<std::size_t>(1, dataset.episodes()));
        critic_.reward_scale = per_episode > 0.0 ? 1.0 / per_episode : 1.0;
    }

    for (int h = 0; h < 2; ++h) {
        critic_opt_.heads[static_cast<std::size_t>(h)] =
            AdamState(critic_.online[static_cast<std::size_t>(h)].param_count(), cfg_.critic_lr);
    }
    actor_opt_.base = AdamState(static_cast<Eigen::Index>(default_params_.size()), cfg_.actor_lr);
    actor_opt_.variance = AdamState(actor_.variance_net.param_count(), cfg_.actor_lr);
    dataset_digest_ = dataset_digest(dataset);
}

Trainer::Trainer(const Dataset& dataset, const Checkpoint& ck)
    : dataset_(&dataset),
      cfg_(TrainConfig::from_json(json::parse(ck.config_json))),
      actor_(ck.actor),
      critic_(ck.critic),
      critic_opt_(ck.critic_opt),
      actor_opt_(ck.actor_opt),
      default_params_(ck.default_params),
      step_(ck.step),
      sampler_(dataset.size(), 0) {
    dataset_digest_ = dataset_digest(dataset);
    if (dataset_digest_ != ck.dataset_digest) {
        throw LoadError("dataset_digest", "checkpoint was trained on a different dataset");
    }
    rng_.deserialize(ck.rng_state);
    sampler_.rng().deserialize(ck.sampler_state);
}

LossReport Trainer::step() {
    const auto batch = sample_batch(sampler_, *dataset_, cfg_.batch_size);
    const CriticBatch cb = make_critic_batch(batch, actor_, critic_, cfg_.target_action_samples, rng_);
    LossReport r = critic_update(cb, critic_, critic_opt_, cfg_, rng_);
    if (step_ >= cfg_.pretrain_steps) {
        const ActorBatch ab = make_actor_batch(batch, actor_, critic_);
        const LossReport a = actor_update(ab, actor_, critic_, actor_opt_, cfg_, rng_);
        r.actor_loss = a.actor_loss;
        r.mean_rel_std = a.mean_rel_std;
        r.actor_grad_norm_w = a.actor_grad_norm_w;
        r.actor_grad_norm_phi = a.actor_grad_norm_phi;
        r.actor_updated = true;
    }
    ++step_;
    r.step = step_;
    last_report_ = r;
    return r;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config_json = cfg_.to_json().dump();
    c.config_hash = cfg_.hash();
    c.dataset_digest = dataset_digest_;
    c.step = step_;
    c.actor = actor_;
    c.default_params = default_params_;
    c.critic = critic_;
    c.critic_opt = critic_opt_;
    c.actor_opt = actor_opt_;
    c.rng_state = rng_.serialize();
    c.sampler_state = sampler_.rng().serialize();
    return c;
}

void pretrain_critic(Trainer& trainer) {
    while (trainer.steps_done() < trainer.config().pretrain_steps) trainer.step();
}

namespace {

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t step) {
    char name[64];
    std::snprintf(name, sizeof name, "ckpt-%09lld.bin", static_cast<long long>(step));
    return dir / name;
}

TrainOutput run_loop(Trainer& trainer, const std::filesystem::path& out_dir, bool fresh,
                     const std::function<void(const LossReport&)>& progress) {
    std::filesystem::create_directories(out_dir);
    TrainOutput out;
    out.loss_csv = out_dir / "losses.csv";
    std::ofstream csv(out.loss_csv, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw Error("cannot write " + out.loss_csv.string());
    if (fresh) csv << LossReport::csv_header() << '\n';

    auto save = [&] {
        const auto path = checkpoint_path(out_dir, trainer.steps_done());
        trainer.checkpoint().save(path);
        out.checkpoints.push_back(path);
    };
    if (fresh) save();
    const TrainConfig& cfg = trainer.config();
    while (!trainer.finished()) {
        LossReport r;
        try {
            r = trainer.step();
        } catch (const TrainingFault& f) {
            const std::string last = out.checkpoints.empty() ? std::string() : out.checkpoints.back().string();
            throw TrainingFault(std::string(f.what()) + " at step " + std::to_string(trainer.steps_done()), last);
        }
        if (r.step % cfg.log_every == 0 || trainer.finished()) {
            csv << r.csv_row() << '\n';
            csv.flush();
            if (progress) progress(r);
        }
        if (r.step % cfg.checkpoint_every == 0 || trainer.finished()) save();
    }
    return out;
}

}  // namespace

TrainOutput train(const Dataset& dataset, const TrainConfig& config, const BasePolicy& default_policy,
                  const std::filesystem::path& out_dir, const std::function<void(const LossReport&)>& progress) {
    if (dataset.size() == 0) throw InvalidArgument("train: empty dataset");
    Trainer trainer(dataset, config, default_policy);
    return run_loop(trainer, out_dir, true, progress);
}

TrainOutput resume_training(const Dataset& dataset, const Checkpoint& from, const std::filesystem::path& out_dir,
                            const std::function<void(const LossReport&)>& progress) {
    Trainer trainer(dataset, from);
    return run_loop(trainer, out_dir, false, progress);
}

}  // namespace bidrl
