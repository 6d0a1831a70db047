#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "bidrl/random.hpp"

namespace bidrl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Fully connected network: rectifier on hidden layers, linear output.
///
/// All weights and biases live in one flat vector (layer by layer, weight
/// matrix column-major then bias), so optimizers, target averaging and
/// serialization operate on a single buffer.
class MlpNet {
public:
    MlpNet() = default;
    /// Zero-initialized network with the given layer widths [in, hidden..., out].
    explicit MlpNet(std::vector<int> widths);

    /// Fan-in scaled uniform weights, zero biases; output layer weights scaled by `output_scale`.
    void init(Rng& rng, double output_scale = 1.0);

    const std::vector<int>& widths() const { return widths_; }
    int input_size() const { return widths_.front(); }
    int output_size() const { return widths_.back(); }
    int layer_count() const { return static_cast<int>(widths_.size()) - 1; }
    Eigen::Index param_count() const { return params_.size(); }

    Vec& params() { return params_; }
    const Vec& params() const { return params_; }

    Eigen::Map<Mat> weight(int layer);
    Eigen::Map<const Mat> weight(int layer) const;
    Eigen::Map<Vec> bias(int layer);
    Eigen::Map<const Vec> bias(int layer) const;

    bool same_topology(const MlpNet& other) const { return widths_ == other.widths_; }
    bool operator==(const MlpNet& other) const { return widths_ == other.widths_ && params_ == other.params_; }

private:
    std::vector<int> widths_;
    std::vector<Eigen::Index> offsets_;  ///< start of each layer's weights
    Vec params_;
};

/// Per-layer inputs and rectifier masks kept from a batched forward pass.
struct ForwardCache {
    std::vector<Mat> inputs;                   ///< input to layer l, columns = batch
    std::vector<Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>> active;  ///< hidden pre-activation > 0
};

Vec forward(const MlpNet& net, const Vec& input);
/// Columns of `inputs` are samples. Fills `cache` when non-null.
Mat forward_batch(const MlpNet& net, const Mat& inputs, ForwardCache* cache = nullptr);

struct BackwardResult {
    Vec param_grad;  ///< same layout as MlpNet::params()
    Mat input_grad;  ///< in x batch
};

/// Reverse-mode pass. `output_cotangent` is out x batch; parameter gradients are summed over the batch.
BackwardResult backward(const MlpNet& net, const ForwardCache& cache, const Mat& output_cotangent);
/// Adds the parameter gradient into `param_grad` without materializing the input gradient unless asked.
void backward_accumulate(const MlpNet& net, const ForwardCache& cache, const Mat& output_cotangent, Vec& param_grad,
                         Mat* input_grad = nullptr);

struct AdamState {
    Vec m;
    Vec v;
    std::int64_t step = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(Eigen::Index n, double learning_rate) : m(Vec::Zero(n)), v(Vec::Zero(n)), lr(learning_rate) {}

    bool operator==(const AdamState& o) const {
        return m == o.m && v == o.v && step == o.step && lr == o.lr && beta1 == o.beta1 && beta2 == o.beta2 &&
               eps == o.eps;
    }
};

/// Bias-corrected adaptive-moment update. Throws TrainingFault on non-finite gradients.
void adam_step(AdamState& state, Vec& params, const Vec& grads);

/// target <- (1 - tau) target + tau online.
void soft_update(MlpNet& target, const MlpNet& online, double tau);

}  // namespace bidrl
