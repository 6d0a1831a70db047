#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bidrl/mdp.hpp"
#include "bidrl/random.hpp"

namespace bidrl {

/// Bids never go below this, so relative noise and the penalty interval stay well defined.
inline constexpr double kActionFloor = 1e-8;

struct BasePolicyParams {
    std::vector<double> values;
    std::vector<std::string> names;
    std::vector<std::pair<double, double>> bounds;  ///< empty, or one [lo, hi] per value

    std::size_t size() const { return values.size(); }
    /// Throws InvalidArgument on non-finite or out-of-bound values.
    void validate() const;
    /// Human-readable "name = value" lines.
    std::string dump_text() const;

    bool operator==(const BasePolicyParams&) const = default;
};

/// a_t = max(floor, a_{t-1} + K_p e_t + K_i sum(e)). Params: [K_p, K_i].
double pi_forward(std::span<const double> params, const ActorObservation& obs);
std::vector<double> pi_grad(std::span<const double> params, const ActorObservation& obs);

/// Piecewise polynomial in the pacing error, applied as a multiplicative
/// correction to the previous bid. Segment b covers [knot_{b-1}, knot_b).
struct PiecewisePolyShape {
    std::vector<double> knots;  ///< strictly increasing
    int degree = 2;

    int segments() const { return static_cast<int>(knots.size()) + 1; }
    std::size_t param_count() const { return static_cast<std::size_t>(segments() * (degree + 1)); }
    int segment_of(double pacing_error) const;
    void validate() const;

    bool operator==(const PiecewisePolyShape&) const = default;
};

double piecewise_poly_forward(const PiecewisePolyShape& shape, std::span<const double> params,
                              const ActorObservation& obs);
std::vector<double> piecewise_poly_grad(const PiecewisePolyShape& shape, std::span<const double> params,
                                        const ActorObservation& obs);

struct PiShape {
    bool operator==(const PiShape&) const = default;
};

/// A differentiable heuristic bidding function F_w plus its parameter vector.
class BasePolicy {
public:
    using Shape = std::variant<PiShape, PiecewisePolyShape>;

    BasePolicy(Shape shape, BasePolicyParams params);

    /// PI controller with the given gains.
    static BasePolicy pi_controller(double k_p, double k_i);
    /// Multiplicative piecewise-quadratic controller used by the pipeline by default.
    static BasePolicy default_piecewise_poly();
    static BasePolicy piecewise_poly(PiecewisePolyShape shape, std::vector<double> values);

    std::string kind() const;
    const Shape& shape() const { return shape_; }
    const BasePolicyParams& params() const { return params_; }
    void set_values(std::vector<double> values);

    double forward(const ActorObservation& obs) const { return forward(params_.values, obs); }
    double forward(std::span<const double> values, const ActorObservation& obs) const;
    std::vector<double> grad(const ActorObservation& obs) const { return grad(params_.values, obs); }
    std::vector<double> grad(std::span<const double> values, const ActorObservation& obs) const;

    nlohmann::json to_json() const;
    static BasePolicy from_json(const nlohmann::json& j);

    bool operator==(const BasePolicy&) const = default;

private:
    Shape shape_;
    BasePolicyParams params_;
};

struct BehaviorNoiseSpec {
    double sigma_beta = 0.05;
    double clip_lo = -0.5;
    double clip_hi = 0.5;

    void validate() const;
};

/// F_w(obs) * (1 + clip(eps)), eps ~ N(0, sigma_beta^2).
double behavior_sample(const BasePolicy& policy, const ActorObservation& obs, const BehaviorNoiseSpec& noise,
                       Rng& rng);
/// Same law applied to an already computed mean.
double behavior_sample_from_mean(double mean, const BehaviorNoiseSpec& noise, Rng& rng);

/// [(1 - eps) m, (1 + eps) m].
std::pair<double, double> behavior_interval(double behavior_mean, double epsilon = 0.5);

}  // namespace bidrl
