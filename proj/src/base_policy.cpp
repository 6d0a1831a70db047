#include "bidrl/base_policy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bidrl/error.hpp"

namespace bidrl {

namespace {

void require_finite(std::span<const double> v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw InvalidArgument(std::string(what) + ": non-finite value");
    }
}

void require_finite_obs(const ActorObservation& obs) {
    const auto a = obs.to_array();
    require_finite(a, "observation");
}

}  // namespace

void BasePolicyParams::validate() const {
    require_finite(values, "policy parameters");
    if (!names.empty() && names.size() != values.size()) throw InvalidArgument("policy parameters: name count mismatch");
    if (bounds.empty()) return;
    if (bounds.size() != values.size()) throw InvalidArgument("policy parameters: bound count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] < bounds[i].first || values[i] > bounds[i].second) {
            throw InvalidArgument("policy parameter '" + (names.empty() ? std::to_string(i) : names[i]) +
                                  "' outside its bounds");
        }
    }
}

std::string BasePolicyParams::dump_text() const {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < values.size(); ++i) {
        os << (names.empty() ? "w" + std::to_string(i) : names[i]) << " = " << values[i] << '\n';
    }
    return os.str();
}

double pi_forward(std::span<const double> params, const ActorObservation& obs) {
    if (params.size() != 2) throw InvalidArgument("pi controller expects [K_p, K_i]");
    require_finite(params, "pi gains");
    if (!(obs.last_action >= 0.0)) throw InvalidArgument("pi controller: last_action must be >= 0");
    const double raw = obs.last_action + params[0] * obs.pacing_error + params[1] * obs.cumulative_pacing_error;
    return std::max(kActionFloor, raw);
}

std::vector<double> pi_grad(std::span<const double> params, const ActorObservation& obs) {
    if (params.size() != 2) throw InvalidArgument("pi controller expects [K_p, K_i]");
    require_finite(params, "pi gains");
    const double raw = obs.last_action + params[0] * obs.pacing_error + params[1] * obs.cumulative_pacing_error;
    if (raw <= kActionFloor) return {0.0, 0.0};
    return {obs.pacing_error, obs.cumulative_pacing_error};
}

int PiecewisePolyShape::segment_of(double pacing_error) const {
    return static_cast<int>(std::upper_bound(knots.begin(), knots.end(), pacing_error) - knots.begin());
}

void PiecewisePolyShape::validate() const {
    if (degree < 0) throw ConfigError("piecewise polynomial: degree must be >= 0");
    for (std::size_t i = 1; i < knots.size(); ++i) {
        if (!(knots[i] > knots[i - 1])) throw ConfigError("piecewise polynomial: knots must be strictly increasing");
    }
    require_finite(knots, "knots");
}

namespace {

// Exponent sum_j w_{b,j} e^j for the active segment; also returns the segment.
std::pair<double, int> poly_exponent(const PiecewisePolyShape& shape, std::span<const double> params, double e) {
    const int b = shape.segment_of(e);
    const auto base = static_cast<std::size_t>(b * (shape.degree + 1));
    double acc = 0.0;
    for (int j = shape.degree; j >= 0; --j) acc = acc * e + params[base + static_cast<std::size_t>(j)];
    return {acc, b};
}

void check_poly_args(const PiecewisePolyShape& shape, std::span<const double> params, const ActorObservation& obs) {
    if (params.size() != shape.param_count()) throw InvalidArgument("piecewise polynomial: parameter count mismatch");
    require_finite(params, "piecewise polynomial parameters");
    require_finite_obs(obs);
}

}  // namespace

double piecewise_poly_forward(const PiecewisePolyShape& shape, std::span<const double> params,
                              const ActorObservation& obs) {
    check_poly_args(shape, params, obs);
    const auto [expo, seg] = poly_exponent(shape, params, obs.pacing_error);
    return std::max(kActionFloor, obs.last_action * std::exp(expo));
}

std::vector<double> piecewise_poly_grad(const PiecewisePolyShape& shape, std::span<const double> params,
                                        const ActorObservation& obs) {
    check_poly_args(shape, params, obs);
    std::vector<double> g(params.size(), 0.0);
    const auto [expo, seg] = poly_exponent(shape, params, obs.pacing_error);
    const double out = obs.last_action * std::exp(expo);
    if (out <= kActionFloor) return g;
    const auto base = static_cast<std::size_t>(seg * (shape.degree + 1));
    double p = 1.0;
    for (int j = 0; j <= shape.degree; ++j) {
        g[base + static_cast<std::size_t>(j)] = out * p;
        p *= obs.pacing_error;
    }
    return g;
}

BasePolicy::BasePolicy(Shape shape, BasePolicyParams params) : shape_(std::move(shape)), params_(std::move(params)) {
    if (const auto* poly = std::get_if<PiecewisePolyShape>(&shape_)) {
        poly->validate();
        if (params_.size() != poly->param_count()) throw ConfigError("piecewise polynomial: parameter count mismatch");
    } else if (params_.size() != 2) {
        throw ConfigError("pi controller: expected 2 parameters");
    }
    params_.validate();
}

BasePolicy BasePolicy::pi_controller(double k_p, double k_i) {
    return BasePolicy(PiShape{}, BasePolicyParams{{k_p, k_i}, {"K_p", "K_i"}, {}});
}

BasePolicy BasePolicy::piecewise_poly(PiecewisePolyShape shape, std::vector<double> values) {
    BasePolicyParams p;
    p.values = std::move(values);
    for (int b = 0; b < shape.segments(); ++b) {
        for (int j = 0; j <= shape.degree; ++j) p.names.push_back("seg" + std::to_string(b) + "_c" + std::to_string(j));
    }
    return BasePolicy(std::move(shape), std::move(p));
}

BasePolicy BasePolicy::default_piecewise_poly() {
    PiecewisePolyShape shape{{-0.1, -0.05, -0.02, 0.0, 0.02, 0.05, 0.1}, 2};
    // Same proportional response in every segment: log-bid moves by -gain * error per step.
    constexpr double kGain = 2.0;
    std::vector<double> w(shape.param_count(), 0.0);
    for (int b = 0; b < shape.segments(); ++b) w[static_cast<std::size_t>(b * (shape.degree + 1) + 1)] = -kGain;
    return piecewise_poly(std::move(shape), std::move(w));
}

std::string BasePolicy::kind() const {
    return std::holds_alternative<PiShape>(shape_) ? "pi" : "piecewise_poly";
}

void BasePolicy::set_values(std::vector<double> values) {
    BasePolicyParams next = params_;
    if (values.size() != next.values.size()) throw InvalidArgument("set_values: parameter count mismatch");
    next.values = std::move(values);
    next.validate();
    params_ = std::move(next);
}

double BasePolicy::forward(std::span<const double> values, const ActorObservation& obs) const {
    if (const auto* poly = std::get_if<PiecewisePolyShape>(&shape_)) return piecewise_poly_forward(*poly, values, obs);
    return pi_forward(values, obs);
}

std::vector<double> BasePolicy::grad(std::span<const double> values, const ActorObservation& obs) const {
    if (const auto* poly = std::get_if<PiecewisePolyShape>(&shape_)) return piecewise_poly_grad(*poly, values, obs);
    return pi_grad(values, obs);
}

nlohmann::json BasePolicy::to_json() const {
    nlohmann::json j;
    j["kind"] = kind();
    if (const auto* poly = std::get_if<PiecewisePolyShape>(&shape_)) {
        j["knots"] = poly->knots;
        j["degree"] = poly->degree;
    }
    j["names"] = params_.names;
    j["values"] = params_.values;
    return j;
}

BasePolicy BasePolicy::from_json(const nlohmann::json& j) {
    try {
        const auto kind = j.at("kind").get<std::string>();
        auto values = j.at("values").get<std::vector<double>>();
        if (kind == "pi") {
            if (values.size() != 2) throw ConfigError("pi controller: expected 2 parameters");
            return pi_controller(values[0], values[1]);
        }
        if (kind == "piecewise_poly") {
            PiecewisePolyShape shape{j.at("knots").get<std::vector<double>>(), j.at("degree").get<int>()};
            return piecewise_poly(std::move(shape), std::move(values));
        }
        throw ConfigError("unknown base policy kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("base policy description: ") + e.what());
    }
}

void BehaviorNoiseSpec::validate() const {
    if (!(sigma_beta > 0.0) || !std::isfinite(sigma_beta)) throw ConfigError("behavior noise: sigma_beta must be > 0");
    if (!(clip_lo < 0.0 && clip_hi > 0.0)) throw ConfigError("behavior noise: clip range must straddle 0");
    if (clip_lo <= -1.0) throw ConfigError("behavior noise: clip_lo must be > -1 to keep bids positive");
}

double behavior_sample_from_mean(double mean, const BehaviorNoiseSpec& noise, Rng& rng) {
    const double eps = std::clamp(rng.normal(0.0, noise.sigma_beta), noise.clip_lo, noise.clip_hi);
    return mean * (1.0 + eps);
}

double behavior_sample(const BasePolicy& policy, const ActorObservation& obs, const BehaviorNoiseSpec& noise,
                       Rng& rng) {
    return behavior_sample_from_mean(policy.forward(obs), noise, rng);
}

std::pair<double, double> behavior_interval(double behavior_mean, double epsilon) {
    if (!(behavior_mean > 0.0) || !std::isfinite(behavior_mean)) {
        throw InvalidArgument("behavior_interval: mean must be positive");
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("behavior_interval: epsilon must lie in (0, 1)");
    return {(1.0 - epsilon) * behavior_mean, (1.0 + epsilon) * behavior_mean};
}

}  // namespace bidrl
