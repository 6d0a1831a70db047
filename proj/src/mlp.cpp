#include "bidrl/mlp.hpp"

#include <cmath>

#include "bidrl/error.hpp"

namespace bidrl {

MlpNet::MlpNet(std::vector<int> widths) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw ContractViolation("MlpNet: need at least input and output widths");
    Eigen::Index total = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        if (widths_[l] < 1 || widths_[l + 1] < 1) throw ContractViolation("MlpNet: widths must be positive");
        offsets_.push_back(total);
        total += static_cast<Eigen::Index>(widths_[l]) * widths_[l + 1] + widths_[l + 1];
    }
    params_ = Vec::Zero(total);
}

void MlpNet::init(Rng& rng, double output_scale) {
    for (int l = 0; l < layer_count(); ++l) {
        auto w = weight(l);
        const double limit = 1.0 / std::sqrt(static_cast<double>(widths_[static_cast<std::size_t>(l)]));
        const double scale = l + 1 == layer_count() ? output_scale : 1.0;
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * rng.uniform(-limit, limit);
        }
        bias(l).setZero();
    }
}

Eigen::Map<Mat> MlpNet::weight(int l) {
    const auto i = static_cast<std::size_t>(l);
    return {params_.data() + offsets_[i], widths_[i + 1], widths_[i]};
}

Eigen::Map<const Mat> MlpNet::weight(int l) const {
    const auto i = static_cast<std::size_t>(l);
    return {params_.data() + offsets_[i], widths_[i + 1], widths_[i]};
}

Eigen::Map<Vec> MlpNet::bias(int l) {
    const auto i = static_cast<std::size_t>(l);
    return {params_.data() + offsets_[i] + static_cast<Eigen::Index>(widths_[i]) * widths_[i + 1], widths_[i + 1]};
}

Eigen::Map<const Vec> MlpNet::bias(int l) const {
    const auto i = static_cast<std::size_t>(l);
    return {params_.data() + offsets_[i] + static_cast<Eigen::Index>(widths_[i]) * widths_[i + 1], widths_[i + 1]};
}

Vec forward(const MlpNet& net, const Vec& input) {
    return forward_batch(net, Mat(input), nullptr).col(0);
}

Mat forward_batch(const MlpNet& net, const Mat& inputs, ForwardCache* cache) {
    if (inputs.rows() != net.input_size()) throw ContractViolation("MlpNet forward: input width mismatch");
    if (cache) {
        cache->inputs.clear();
        cache->active.clear();
    }
    Mat h = inputs;
    for (int l = 0; l < net.layer_count(); ++l) {
        Mat z = net.weight(l) * h;
        z.colwise() += net.bias(l);
        if (cache) cache->inputs.push_back(std::move(h));
        if (l + 1 < net.layer_count()) {
            if (cache) cache->active.push_back(z.array() > 0.0);
            h = z.cwiseMax(0.0);
        } else {
            h = std::move(z);
        }
    }
    return h;
}

void backward_accumulate(const MlpNet& net, const ForwardCache& cache, const Mat& output_cotangent, Vec& param_grad,
                         Mat* input_grad) {
    if (cache.inputs.size() != static_cast<std::size_t>(net.layer_count())) {
        throw ContractViolation("MlpNet backward: cache does not match network");
    }
    if (output_cotangent.rows() != net.output_size() || output_cotangent.cols() != cache.inputs.front().cols()) {
        throw ContractViolation("MlpNet backward: cotangent shape mismatch");
    }
    if (param_grad.size() != net.param_count()) param_grad = Vec::Zero(net.param_count());
    // Scratch net shares the layout, so its maps address the right slices of the gradient.
    MlpNet layout(net.widths());
    layout.params().swap(param_grad);
    Mat g = output_cotangent;
    for (int l = net.layer_count() - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        layout.weight(l).noalias() += g * cache.inputs[li].transpose();
        layout.bias(l) += g.rowwise().sum();
        if (l == 0 && input_grad == nullptr) break;
        Mat prev = net.weight(l).transpose() * g;
        if (l > 0) prev = cache.active[li - 1].select(prev, 0.0);
        g = std::move(prev);
    }
    layout.params().swap(param_grad);
    if (input_grad) *input_grad = std::move(g);
}

BackwardResult backward(const MlpNet& net, const ForwardCache& cache, const Mat& output_cotangent) {
    BackwardResult r;
    r.param_grad = Vec::Zero(net.param_count());
    backward_accumulate(net, cache, output_cotangent, r.param_grad, &r.input_grad);
    return r;
}

void adam_step(AdamState& s, Vec& params, const Vec& grads) {
    if (grads.size() != params.size() || s.m.size() != params.size()) {
        throw ContractViolation("adam_step: shape mismatch");
    }
    if (!grads.allFinite()) throw TrainingFault("adam_step: non-finite gradient");
    ++s.step;
    s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
    s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    params.array() -= s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

void soft_update(MlpNet& target, const MlpNet& online, double tau) {
    if (!target.same_topology(online)) throw ContractViolation("soft_update: topology mismatch");
    if (tau == 1.0) {
        target.params() = online.params();
        return;
    }
    target.params() = (1.0 - tau) * target.params() + tau * online.params();
}

}  // namespace bidrl
