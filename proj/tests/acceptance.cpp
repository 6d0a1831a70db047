// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <thread>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bidrl/auction_sim.hpp"
#include "bidrl/binio.hpp"
#include "bidrl/dataset.hpp"
#include "bidrl/eval.hpp"
#include "bidrl/mlp.hpp"
#include "bidrl/parallel.hpp"
#include "bidrl/trainer.hpp"

using namespace bidrl;
namespace fs = std::filesystem;

namespace {

struct Options {
    fs::path work_dir = "acceptance_work";
    fs::path configs_dir = "configs";
    std::set<int> only;
    int workers = 1;
};

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

void log(const std::string& s) {
    std::fprintf(stderr, "[acceptance] %s\n", s.c_str());
    std::fflush(stderr);
}

/// |a - f| / max(|a|, |f|, 1e-6): relative error, with a floor so exact zeros compare absolutely.
double rel_err(double a, double f) { return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-6}); }

// ---------------------------------------------------------------------------
// Desk experiment shared by criteria 1, 2, 4 and 9.

constexpr int kDeskConfigs = 20;
constexpr std::uint64_t kDeskConfigSeed = 7;
constexpr int kDeskEpisodes = 2000;
constexpr std::uint64_t kDeskCollectSeed = 11;
constexpr std::uint64_t kDeskTrainSeed = 3;
constexpr int kEvalEpisodesPerConfig = 25;  // 20 x 25 = 500 paired episodes per checkpoint
constexpr std::uint64_t kEvalSeed = 555;
constexpr int kDiagEpisodesPerConfig = 30;
constexpr std::uint64_t kDiagSeed = 777;

struct DeskRun {
    double alpha = 0.0;
    std::vector<fs::path> checkpoints;
    std::vector<EvalResult> curve;
    Checkpoint final_checkpoint;
};

class Desk {
public:
    explicit Desk(const Options& o) : opt_(o) {}

    const std::vector<CampaignConfig>& configs() {
        if (configs_.empty()) {
            configs_ = sample_configs(kDeskConfigs, load_ranges(opt_.configs_dir / "ranges-desk.json"), kDeskConfigSeed);
        }
        return configs_;
    }

    const TrainConfig& train_config() {
        if (!cfg_) cfg_ = TrainConfig::load(opt_.configs_dir / "train-desk.json");
        return *cfg_;
    }

    const Dataset& dataset() {
        if (!dataset_) {
            const auto t0 = std::chrono::steady_clock::now();
            dataset_ = collect(configs(), BasePolicy::default_piecewise_poly(), train_config().behavior_noise(),
                               CollectOptions{kDeskEpisodes, kDeskCollectSeed, opt_.workers});
            log(fmt("desk dataset: %zu episodes, %zu transitions (%.1fs)", dataset_->episodes(), dataset_->size(),
                    seconds_since(t0)));
        }
        return *dataset_;
    }

    /// Trains every requested alpha (concurrently when workers allow) and evaluates each learning curve.
    const DeskRun& run(double alpha) {
        ensure_runs({alpha});
        return runs_.at(alpha);
    }

    void ensure_runs(const std::vector<double>& alphas) {
        std::vector<double> todo;
        for (double a : alphas) {
            if (!runs_.count(a)) todo.push_back(a);
        }
        if (todo.empty()) return;
        const Dataset& ds = dataset();
        std::vector<DeskRun> done(todo.size());
        const auto t0 = std::chrono::steady_clock::now();
        const int inner = std::max(1, opt_.workers / static_cast<int>(todo.size()));
        parallel_for(todo.size(), opt_.workers, [&](std::size_t i) {
            TrainConfig cfg = train_config();
            cfg.cql_alpha = todo[i];
            cfg.seed = kDeskTrainSeed;
            const fs::path dir = opt_.work_dir / fmt("desk_alpha_%g", todo[i]);
            fs::remove_all(dir);
            DeskRun r;
            r.alpha = todo[i];
            r.checkpoints = train(ds, cfg, BasePolicy::default_piecewise_poly(), dir).checkpoints;
            std::vector<CurvePoint> points;
            for (const auto& p : r.checkpoints) {
                Checkpoint ck = Checkpoint::load(p);
                points.push_back({p.filename().string(), ck.step, ck.actor.base});
            }
            r.final_checkpoint = Checkpoint::load(r.checkpoints.back());
            r.curve = learning_curve(points, EvalPolicy{BasePolicy::default_piecewise_poly(), std::nullopt}, configs(),
                                     kEvalEpisodesPerConfig, kEvalSeed, inner);
            write_eval_csv(r.curve, dir / "eval.csv");
            write_curve_plot_data(r.curve, dir / "learning_curve.dat");
            done[i] = std::move(r);
        });
        for (std::size_t i = 0; i < todo.size(); ++i) {
            log(fmt("desk alpha=%g trained and evaluated", todo[i]));
            runs_.emplace(todo[i], std::move(done[i]));
        }
        log(fmt("desk training for %zu run(s): %.0fs", todo.size(), seconds_since(t0)));
    }

    static double seconds_since(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

private:
    const Options& opt_;
    std::vector<CampaignConfig> configs_;
    std::optional<TrainConfig> cfg_;
    std::optional<Dataset> dataset_;
    std::map<double, DeskRun> runs_;
};

std::string curve_summary(const std::vector<EvalResult>& rows) {
    std::ostringstream os;
    for (const auto& r : rows) {
        os << "    step " << r.step << ": gain " << fmt("%+.3f%%", r.relative_gain_pct);
        if (r.gain_ci_half_width_pct) os << fmt(" +- %.3f", *r.gain_ci_half_width_pct);
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// 1. Desk-scale improvement

Outcome desk_improvement(Desk& desk) {
    const DeskRun& run = desk.run(0.1);
    const std::int64_t total = desk.train_config().gradient_steps;
    Outcome o;
    const EvalResult* best = nullptr;
    for (const auto& r : run.curve) {
        if (r.step <= total / 2) continue;
        if (!best || r.relative_gain_pct - r.gain_ci_half_width_pct.value_or(0) >
                         best->relative_gain_pct - best->gain_ci_half_width_pct.value_or(0)) {
            best = &r;
        }
        if (r.episodes >= 500 && r.relative_gain_pct > 0.0 && r.gain_significant()) o.pass = true;
    }
    o.detail = fmt("alpha=0.1, %lld episodes per checkpoint", static_cast<long long>(run.curve.front().episodes));
    if (best) {
        o.detail += fmt("; best late checkpoint step %lld gain %+.3f%% (95%% half-width %.3f)",
                        static_cast<long long>(best->step), best->relative_gain_pct,
                        best->gain_ci_half_width_pct.value_or(0.0));
    }
    o.detail += "\n" + curve_summary(run.curve);
    return o;
}

// ---------------------------------------------------------------------------
// 2. Penalty-weight ordering

double displacement(const Checkpoint& ck) {
    const auto& w = ck.actor.base.params().values;
    const auto& w0 = ck.default_params.values;
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] - w0[i]) * (w[i] - w0[i]);
    return std::sqrt(s);
}

Outcome penalty_ordering(Desk& desk) {
    desk.ensure_runs({0.01, 0.1, 1.0});
    const std::int64_t pretrain = desk.train_config().pretrain_steps;
    std::map<double, double> disp, var;
    for (double a : {0.01, 0.1, 1.0}) {
        const DeskRun& r = desk.run(a);
        disp[a] = displacement(r.final_checkpoint);
        std::vector<EvalResult> learning;
        for (const auto& row : r.curve) {
            if (row.step >= pretrain) learning.push_back(row);
        }
        var[a] = checkpoint_gain_variance(learning);
    }
    const bool a_ok = disp[1.0] < disp[0.1] && disp[1.0] < disp[0.01];
    const bool b_ok = var[0.01] > var[0.1];
    Outcome o;
    o.pass = a_ok && b_ok;
    o.detail = fmt("(a) |w-w0|: alpha=0.01 %.4g, 0.1 %.4g, 1.0 %.4g -> %s; "
                   "(b) gain-change variance: alpha=0.01 %.4g vs 0.1 %.4g -> %s",
                   disp[0.01], disp[0.1], disp[1.0], a_ok ? "ok" : "violated", var[0.01], var[0.1],
                   b_ok ? "ok" : "violated");
    o.detail += "\n  alpha=0.01 curve:\n" + curve_summary(desk.run(0.01).curve);
    o.detail += "  alpha=1.0 curve:\n" + curve_summary(desk.run(1.0).curve);
    return o;
}

// ---------------------------------------------------------------------------
// 3. Behavior-policy cost

Outcome behavior_cost(Desk& desk, const Options& opt) {
    const auto& cs = desk.configs();
    const int per_config = (1000 + static_cast<int>(cs.size()) - 1) / static_cast<int>(cs.size());
    const EvalPolicy clean{BasePolicy::default_piecewise_poly(), std::nullopt};
    const EvalPolicy noised{BasePolicy::default_piecewise_poly(), desk.train_config().behavior_noise()};
    const EvalResult r = evaluate(noised, clean, cs, per_config, 4242, opt.workers);
    Outcome o;
    o.pass = r.episodes >= 1000 && r.relative_gain_pct < 0.0 && r.relative_gain_pct >= -1.0;
    o.detail = fmt("%lld paired episodes, gain %+.3f%% (95%% half-width %.3f)", static_cast<long long>(r.episodes),
                   r.relative_gain_pct, r.gain_ci_half_width_pct.value_or(0.0));
    return o;
}

// ---------------------------------------------------------------------------
// 4. Critic accuracy

Outcome critic_accuracy(Desk& desk, const Options& opt) {
    const DeskRun& run = desk.run(0.1);
    const Checkpoint& ck = run.final_checkpoint;
    const auto& cs = desk.configs();
    const CriticDiagnostic d = critic_diagnostics(ck.actor, ck.critic, desk.train_config().gamma, cs,
                                                  kDiagEpisodesPerConfig, kDiagSeed, {0, cs.size() - 1}, opt.workers);
    const fs::path dir = opt.work_dir / "desk_alpha_0.1";
    write_campaign_csv(d, dir / "initial_q.csv");
    write_timestep_csv(d, dir / "timestep_q.csv");
    const double f0 = d.curves[0].fraction_within(2.0), f1 = d.curves[1].fraction_within(2.0);
    Outcome o;
    o.pass = d.campaigns.size() >= 20 && d.pearson > 0.8 && f0 >= 0.8 && f1 >= 0.8;
    o.detail = fmt("%zu configs x %d episodes: pearson %.3f; within 2 std: %s %.1f%%, %s %.1f%%", d.campaigns.size(),
                   kDiagEpisodesPerConfig, d.pearson, d.curves[0].config_id.c_str(), 100 * f0,
                   d.curves[1].config_id.c_str(), 100 * f1);
    std::ostringstream os;
    for (const auto& c : d.campaigns) {
        os << fmt("    %-12s budget %8.1f  Q %9.2f  empirical %9.2f +- %.2f\n", c.config_id.c_str(), c.budget,
                  c.predicted_q, c.empirical_mean, c.empirical_std);
    }
    o.detail += "\n" + os.str();
    return o;
}

// ---------------------------------------------------------------------------
// 5. Gradient integrity

/// Smallest |pre-activation| over hidden units; central differences are unreliable near a ReLU kink.
double min_kink_distance(const MlpNet& net, const Vec& x) {
    double d = std::numeric_limits<double>::infinity();
    Vec h = x;
    for (int l = 0; l < net.layer_count(); ++l) {
        Vec z = net.weight(l) * h + net.bias(l);
        if (l + 1 < net.layer_count()) {
            d = std::min(d, z.cwiseAbs().minCoeff());
            h = z.cwiseMax(0.0);
        }
    }
    return d;
}

struct GradTally {
    long cases = 0;
    long failures = 0;
    double worst = 0.0;

    void add(double analytic, double fd) {
        const double e = rel_err(analytic, fd);
        ++cases;
        worst = std::max(worst, e);
        if (!(e < 1e-4)) ++failures;
    }
};

MlpNet random_net(Rng& rng) {
    std::vector<int> widths{1 + static_cast<int>(rng.below(8))};
    const int hidden = 1 + static_cast<int>(rng.below(3));
    for (int i = 0; i < hidden; ++i) widths.push_back(1 + static_cast<int>(rng.below(16)));
    widths.push_back(1);
    MlpNet net(widths);
    net.init(rng, 1.0);
    for (Eigen::Index i = 0; i < net.param_count(); ++i) net.params()(i) += 0.1 * rng.normal();
    return net;
}

ActorObservation random_obs(Rng& rng) {
    ActorObservation o;
    o.fraction_budget_spent = rng.uniform();
    o.fraction_time_elapsed = rng.uniform();
    o.fraction_opportunities_passed = rng.uniform();
    o.avg_past_bid = std::exp(rng.uniform(-2, 2));
    o.last_action = std::exp(rng.uniform(-2, 2));
    o.pacing_error = rng.uniform(-0.15, 0.15);
    o.cumulative_pacing_error = rng.uniform(-2, 2);
    return o;
}

Outcome gradient_integrity() {
    Rng rng(2024);
    const double h = 1e-5;
    GradTally mlp_params, mlp_inputs, policy, actor_path;
    long skipped = 0;

    while (mlp_params.cases < 4000 || mlp_inputs.cases < 2000) {
        const MlpNet net = random_net(rng);
        const Vec x = Vec::NullaryExpr(net.input_size(), [&] { return rng.normal(); });
        if (min_kink_distance(net, x) < 1e-3) {
            ++skipped;
            continue;
        }
        ForwardCache cache;
        forward_batch(net, x, &cache);
        Vec g = Vec::Zero(net.param_count());
        Mat in_grad;
        backward_accumulate(net, cache, Mat::Ones(1, 1), g, &in_grad);
        for (Eigen::Index i = 0; i < net.param_count(); ++i) {
            MlpNet up = net, dn = net;
            up.params()(i) += h;
            dn.params()(i) -= h;
            mlp_params.add(g(i), (forward(up, x)(0) - forward(dn, x)(0)) / (2 * h));
        }
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            Vec up = x, dn = x;
            up(i) += h;
            dn(i) -= h;
            mlp_inputs.add(in_grad(i, 0), (forward(net, up)(0) - forward(net, dn)(0)) / (2 * h));
        }
    }

    // Base policy: both families, random parameters. Perturbing w never moves a knot.
    while (policy.cases < 2000) {
        const bool pi = rng.bernoulli(0.3);
        BasePolicy p = pi ? BasePolicy::pi_controller(rng.uniform(-2, 2), rng.uniform(-0.5, 0.5))
                          : BasePolicy::default_piecewise_poly();
        std::vector<double> w = p.params().values;
        if (!pi) {
            for (auto& v : w) v += 0.5 * rng.normal();
        }
        const ActorObservation o = random_obs(rng);
        if (p.forward(w, o) < 1e-3) {
            ++skipped;
            continue;
        }
        const auto g = p.grad(w, o);
        for (std::size_t j = 0; j < w.size(); ++j) {
            auto up = w, dn = w;
            up[j] += h;
            dn[j] -= h;
            policy.add(g[j], (p.forward(up, o) - p.forward(dn, o)) / (2 * h));
        }
    }

    // Reparameterized actor path: loss -q_min(s, F_w(s)(1 + sigma_phi(s) xi)) for one state.
    while (actor_path.cases < 2500) {
        Rng init(rng.next_u64());
        HybridActor actor(BasePolicy::default_piecewise_poly(), {8, 8}, init, 0.05);
        std::vector<double> w = actor.base.params().values;
        for (auto& v : w) v += 0.3 * rng.normal();
        actor.base.set_values(w);
        for (Eigen::Index i = 0; i < actor.variance_net.param_count(); ++i) {
            actor.variance_net.params()(i) += 0.2 * rng.normal();
        }
        TwinCritic critic(kCriticStateFeatureCount, {16, 16}, true, init, 1.0);
        critic.action_mean = rng.uniform(-0.1, 0.1);
        critic.action_inv_scale = rng.uniform(2.0, 20.0);

        ActorBatch b;
        b.obs.push_back(random_obs(rng));
        b.actor_features = actor.norm.apply(actor_features(b.obs[0]));
        b.critic_states = Vec::NullaryExpr(kCriticStateFeatureCount, [&] { return rng.normal(); });
        const Vec xi = Vec::Constant(1, rng.normal());

        // Exclusions: relative-std clamp, ReLU kinks in either network, near-tied critic heads.
        const double raw = forward(actor.variance_net, b.actor_features.col(0))(0);
        const double a = actor.act_with_noise(b.obs[0], xi(0));
        const Vec x = TwinCritic::inputs(b.critic_states, Vec::Constant(1, critic.action_feature(a, b.obs[0].last_action)));
        const double q0 = forward(critic.online[0], x.col(0))(0), q1 = forward(critic.online[1], x.col(0))(0);
        if (std::min(std::abs(raw - std::log(kMinRelStd)), std::abs(raw - std::log(kMaxRelStd))) < 1e-3 ||
            min_kink_distance(actor.variance_net, b.actor_features.col(0)) < 1e-3 ||
            min_kink_distance(critic.online[0], x.col(0)) < 1e-3 ||
            min_kink_distance(critic.online[1], x.col(0)) < 1e-3 || std::abs(q0 - q1) < 1e-4) {
            ++skipped;
            continue;
        }

        const ActorGradient g = actor_loss_and_grad(b, actor, critic, xi, 0.0);
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (g.grad_w(static_cast<Eigen::Index>(j)) == 0.0) continue;  // inactive segment
            HybridActor up = actor, dn = actor;
            auto wu = w, wd = w;
            wu[j] += h;
            wd[j] -= h;
            up.base.set_values(wu);
            dn.base.set_values(wd);
            actor_path.add(g.grad_w(static_cast<Eigen::Index>(j)),
                           (actor_loss_and_grad(b, up, critic, xi, 0.0).loss -
                            actor_loss_and_grad(b, dn, critic, xi, 0.0).loss) / (2 * h));
        }
        for (Eigen::Index j = 0; j < actor.variance_net.param_count(); ++j) {
            HybridActor up = actor, dn = actor;
            up.variance_net.params()(j) += h;
            dn.variance_net.params()(j) -= h;
            actor_path.add(g.grad_phi(j), (actor_loss_and_grad(b, up, critic, xi, 0.0).loss -
                                           actor_loss_and_grad(b, dn, critic, xi, 0.0).loss) / (2 * h));
        }
    }

    const long total = mlp_params.cases + mlp_inputs.cases + policy.cases + actor_path.cases;
    const long failures = mlp_params.failures + mlp_inputs.failures + policy.failures + actor_path.failures;
    Outcome o;
    o.pass = total >= 10000 && failures == 0;
    o.detail = fmt("%ld cases (mlp params %ld, mlp inputs %ld, base policy %ld, actor path %ld), %ld above 1e-4, "
                   "worst %.2e / %.2e / %.2e / %.2e; %ld draws excluded near kinks or clamps",
                   total, mlp_params.cases, mlp_inputs.cases, policy.cases, actor_path.cases, failures,
                   mlp_params.worst, mlp_inputs.worst, policy.worst, actor_path.worst, skipped);
    return o;
}

// ---------------------------------------------------------------------------
// 6. Tabular oracle

Outcome tabular_oracle() {
    constexpr int S = 3, A = 2;
    constexpr double gamma = 0.9;
    // P[s][a] in tenths, so a dataset of ten transitions per pair reproduces it exactly.
    const int P[S][A][S] = {{{7, 3, 0}, {1, 6, 3}}, {{0, 5, 5}, {4, 4, 2}}, {{2, 2, 6}, {9, 0, 1}}};
    const double R[S][A] = {{0.2, 1.0}, {0.5, 0.0}, {0.8, 0.3}};
    const int pi[S] = {1, 0, 1};
    const double feature[A] = {-1.0, 1.0};

    // Value iteration for Q^pi.
    double Q[S][A] = {};
    for (int it = 0; it < 2000; ++it) {
        double next[S][A];
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) {
                double v = 0.0;
                for (int t = 0; t < S; ++t) v += P[s][a][t] / 10.0 * Q[t][pi[t]];
                next[s][a] = R[s][a] + gamma * v;
            }
        }
        std::copy(&next[0][0], &next[0][0] + S * A, &Q[0][0]);
    }

    CriticBatch b;
    const int n = S * A * 10;
    b.states = Mat::Zero(S, n);
    b.next_states = Mat::Zero(S, n);
    b.action_features.resize(n);
    b.rewards.resize(n);
    b.not_done = Vec::Ones(n);
    b.next_action_features.resize(1, n);
    b.behavior_means = Vec::Ones(n);
    b.reference_bids = Vec::Ones(n);
    int col = 0;
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            for (int t = 0; t < S; ++t) {
                for (int k = 0; k < P[s][a][t]; ++k, ++col) {
                    b.states(s, col) = 1.0;
                    b.action_features(col) = feature[a];
                    b.rewards(col) = R[s][a];
                    b.next_states(t, col) = 1.0;
                    b.next_action_features(0, col) = feature[pi[t]];
                }
            }
        }
    }

    TrainConfig cfg;
    cfg.cql_alpha = 0.0;
    cfg.gamma = gamma;
    cfg.tau = 0.05;
    cfg.critic_lr = 1e-3;
    Rng rng(6);
    TwinCritic critic(S, {32, 32}, true, rng, 1.0);
    CriticOptimizers opt;
    for (int h = 0; h < 2; ++h) opt.heads[static_cast<std::size_t>(h)] = AdamState(critic.online[static_cast<std::size_t>(h)].param_count(), cfg.critic_lr);

    auto sup_error = [&] {
        double e = 0.0;
        for (int s = 0; s < S; ++s) {
            for (int a = 0; a < A; ++a) {
                Vec x = Vec::Zero(S + 1);
                x(s) = 1.0;
                x(S) = feature[a];
                const double q = std::min(forward(critic.online[0], x)(0), forward(critic.online[1], x)(0));
                e = std::max(e, std::abs(q - Q[s][a]));
            }
        }
        return e;
    };
    const int steps = 30000;
    for (int i = 0; i < steps; ++i) critic_update(b, critic, opt, cfg, rng);
    const double err = sup_error();

    Outcome o;
    o.pass = err <= 0.05;
    o.detail = fmt("3 states x 2 actions, gamma %.1f, %d full-batch steps: sup |Q - Q_vi| = %.4f (Q_vi in [%.3f, %.3f])",
                   gamma, steps, err, *std::min_element(&Q[0][0], &Q[0][0] + S * A),
                   *std::max_element(&Q[0][0], &Q[0][0] + S * A));
    return o;
}

// ---------------------------------------------------------------------------
// 7. Determinism

Outcome determinism(Desk& desk, const Options& opt) {
    const auto& cs = desk.configs();
    std::vector<std::string> failed;
    const BasePolicy pol = BasePolicy::default_piecewise_poly();
    const BehaviorNoiseSpec noise = desk.train_config().behavior_noise();

    const std::string d1 = serialize_dataset(collect(cs, pol, noise, {200, 99, 1}));
    const std::string d2 = serialize_dataset(collect(cs, pol, noise, {200, 99, 1}));
    const std::string d3 = serialize_dataset(collect(cs, pol, noise, {200, 99, std::max(2, opt.workers)}));
    if (d1 != d2 || d1 != d3) failed.push_back("collection");
    const Dataset ds = collect(cs, pol, noise, {200, 99, 1});

    TrainConfig cfg = desk.train_config();
    cfg.gradient_steps = 40;
    cfg.pretrain_steps = 10;
    cfg.checkpoint_every = 20;
    cfg.log_every = 5;
    cfg.seed = 17;
    const fs::path a = opt.work_dir / "det_a", b = opt.work_dir / "det_b", c = opt.work_dir / "det_resume";
    for (const auto& p : {a, b, c}) fs::remove_all(p);
    const TrainOutput ta = train(ds, cfg, pol, a);
    const TrainOutput tb = train(ds, cfg, pol, b);
    bool same = ta.checkpoints.size() == tb.checkpoints.size() && read_file(ta.loss_csv) == read_file(tb.loss_csv);
    for (std::size_t i = 0; same && i < ta.checkpoints.size(); ++i) {
        same = read_file(ta.checkpoints[i]) == read_file(tb.checkpoints[i]);
    }
    if (!same) failed.push_back("training");

    // Resume from the middle checkpoint; the final state must match the uninterrupted run bit for bit.
    const TrainOutput tc = resume_training(ds, Checkpoint::load(ta.checkpoints[1]), c);
    if (read_file(tc.checkpoints.back()) != read_file(ta.checkpoints.back())) failed.push_back("resume");

    std::vector<CurvePoint> points;
    for (const auto& p : ta.checkpoints) {
        const Checkpoint ck = Checkpoint::load(p);
        points.push_back({p.filename().string(), ck.step, ck.actor.base});
    }
    const EvalPolicy base{pol, std::nullopt};
    write_eval_csv(learning_curve(points, base, cs, 3, 5, 1), a / "eval.csv");
    write_eval_csv(learning_curve(points, base, cs, 3, 5, std::max(2, opt.workers)), b / "eval.csv");
    if (read_file(a / "eval.csv") != read_file(b / "eval.csv")) failed.push_back("evaluation");

    Outcome o;
    o.pass = failed.empty();
    o.detail = o.pass ? fmt("collection (%zu bytes), training (%zu checkpoints), resume and evaluation byte-identical",
                            d1.size(), ta.checkpoints.size())
                      : "differences in:";
    for (const auto& f : failed) o.detail += " " + f;
    return o;
}

// ---------------------------------------------------------------------------
// 8. Simulator invariants

Outcome simulator_invariants(const Options& opt) {
    constexpr int kEpisodes = 100000;
    constexpr int kPool = 500;
    ConfigRanges ranges;
    ranges.horizon = kDefaultHorizon;
    ranges.budget_lo = 1.0;
    ranges.budget_hi = 5000.0;
    ranges.audience_lo = 200.0;
    ranges.audience_hi = 50000.0;
    std::vector<std::shared_ptr<const CampaignConfig>> pool;
    Rng meta(8);
    for (const auto& c : sample_configs(kPool, ranges, 88)) {
        CampaignConfig x = c;
        if (meta.bernoulli(0.2)) x.early_stop_hazard = meta.uniform(0.0, 0.01);
        pool.push_back(std::make_shared<const CampaignConfig>(x));
    }

    struct Tally {
        long overspend = 0, overrun = 0, bad_terminal = 0, steps = 0;
        std::map<int, long> reasons;
    };
    const int workers = std::max(1, opt.workers);
    std::vector<Tally> tallies(static_cast<std::size_t>(workers));
    parallel_for(static_cast<std::size_t>(workers), workers, [&](std::size_t w) {
        Tally& t = tallies[w];
        for (int e = static_cast<int>(w); e < kEpisodes; e += workers) {
            Rng rng(derive_seed(1234, static_cast<std::uint64_t>(e)));
            const auto& cfg = pool[rng.below(kPool)];
            EnvState s = reset(cfg, rng.next_u64());
            double spent = 0.0;
            int steps = 0;
            const double scale = cfg->initial_bid;
            while (!s.done && steps <= cfg->horizon) {
                const double u = rng.uniform();
                const double bid = u < 0.05 ? 0.0 : u < 0.1 ? 1e6 * scale : scale * std::exp(rng.uniform(-6.0, 4.0));
                const StepOutcome out = step_in_place(s, bid);
                spent += out.spend;
                ++steps;
                if (s.remaining_budget < 0.0 || spent > cfg->budget * (1.0 + 1e-12)) ++t.overspend;
            }
            t.steps += steps;
            if (steps > cfg->horizon || s.step_index > kDefaultHorizon) ++t.overrun;
            if (!s.done || s.terminal_reason == TerminalReason::none) ++t.bad_terminal;
            ++t.reasons[static_cast<int>(s.terminal_reason)];
        }
    });
    Tally all;
    for (const auto& t : tallies) {
        all.overspend += t.overspend;
        all.overrun += t.overrun;
        all.bad_terminal += t.bad_terminal;
        all.steps += t.steps;
        for (auto [k, v] : t.reasons) all.reasons[k] += v;
    }
    Outcome o;
    o.pass = all.overspend == 0 && all.overrun == 0 && all.bad_terminal == 0;
    o.detail = fmt("%d episodes, %ld steps: overspend %ld, horizon overrun %ld, invalid terminal %ld; "
                   "terminals budget %ld / horizon %ld / stopped %ld",
                   kEpisodes, all.steps, all.overspend, all.overrun, all.bad_terminal,
                   all.reasons[static_cast<int>(TerminalReason::budget_exhausted)],
                   all.reasons[static_cast<int>(TerminalReason::horizon_reached)],
                   all.reasons[static_cast<int>(TerminalReason::advertiser_stopped)]);
    return o;
}

// ---------------------------------------------------------------------------
// 9. Behavior noise law

Outcome behavior_law(Desk& desk) {
    const Dataset& ds = desk.dataset();
    const double sigma = desk.train_config().sigma_beta;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0, sq = 0.0;
    for (const auto& t : ds.transitions) {
        const double r = t.action / t.behavior_mean;
        lo = std::min(lo, r);
        hi = std::max(hi, r);
        sum += r;
        sq += r * r;
    }
    const double n = static_cast<double>(ds.size());
    const double sd = std::sqrt((sq - sum * sum / n) / (n - 1));
    Outcome o;
    o.pass = ds.size() >= 100000 && lo >= 0.5 && hi <= 1.5 && std::abs(sd - sigma) <= 0.03 * sigma;
    o.detail = fmt("%zu transitions: ratio range [%.4f, %.4f], std %.5f vs sigma_beta %.3f (%+.2f%%)", ds.size(), lo,
                   hi, sd, sigma, 100.0 * (sd - sigma) / sigma);
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    Options opt;
    std::string only;
    CLI::App app{"bidrl acceptance checks"};
    app.add_option("--work-dir", opt.work_dir, "scratch directory for runs and reports");
    app.add_option("--configs", opt.configs_dir, "directory holding ranges-desk.json and train-desk.json")
        ->check(CLI::ExistingDirectory);
    app.add_option("--only", only, "comma-separated criterion numbers to run");
    app.add_option("--workers", opt.workers, "threads (default: hardware concurrency)");
    opt.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    CLI11_PARSE(app, argc, argv);
    std::stringstream ss(only);
    for (std::string tok; std::getline(ss, tok, ',');) {
        if (!tok.empty()) opt.only.insert(std::stoi(tok));
    }
    fs::create_directories(opt.work_dir);

    Desk desk(opt);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"desk-scale improvement over the base policy", [&] { return desk_improvement(desk); }},
        {"penalty-weight ordering", [&] { return penalty_ordering(desk); }},
        {"behavior-policy cost", [&] { return behavior_cost(desk, opt); }},
        {"critic accuracy", [&] { return critic_accuracy(desk, opt); }},
        {"gradient integrity", [] { return gradient_integrity(); }},
        {"tabular oracle", [] { return tabular_oracle(); }},
        {"determinism", [&] { return determinism(desk, opt); }},
        {"simulator invariants", [&] { return simulator_invariants(opt); }},
        {"behavior noise law", [&] { return behavior_law(desk); }},
    };
    // Cheap criteria first; the desk training runs are shared by 1, 2 and 4.
    const int order[] = {5, 6, 8, 9, 3, 7, 2, 1, 4};
    std::map<int, Outcome> results;
    for (int id : order) {
        if (!opt.only.empty() && !opt.only.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        log(fmt("criterion %d (%s) ...", id, criteria[static_cast<std::size_t>(id - 1)].first.c_str()));
        try {
            results[id] = criteria[static_cast<std::size_t>(id - 1)].second();
        } catch (const std::exception& e) {
            results[id] = {false, std::string("error: ") + e.what()};
        }
        log(fmt("criterion %d done in %.0fs", id, Desk::seconds_since(t0)));
    }

    int failures = 0;
    std::printf("\n");
    for (const auto& [id, r] : results) {
        std::printf("[%s] %d. %s: %s\n", r.pass ? "PASS" : "FAIL", id,
                    criteria[static_cast<std::size_t>(id - 1)].first.c_str(), r.detail.c_str());
        failures += r.pass ? 0 : 1;
    }
    std::printf("\n%zu criteria run, %d failed\n", results.size(), failures);
    return failures == 0 ? 0 : 1;
}
