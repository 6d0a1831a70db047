#include <doctest.h>

#include <cmath>

#include "bidrl/error.hpp"
#include "bidrl/mlp.hpp"

using namespace bidrl;

namespace {

// Plain nested loops over the documented parameter layout: per layer, column-major W then b.
Vec naive_forward(const MlpNet& net, const Vec& x) {
    const auto& w = net.widths();
    const Vec& p = net.params();
    std::vector<double> h(x.data(), x.data() + x.size());
    Eigen::Index off = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        const int in = w[l], out = w[l + 1];
        std::vector<double> z(static_cast<std::size_t>(out), 0.0);
        for (int i = 0; i < out; ++i) {
            double acc = 0.0;
            for (int j = 0; j < in; ++j) acc += p(off + static_cast<Eigen::Index>(j) * out + i) * h[static_cast<std::size_t>(j)];
            acc += p(off + static_cast<Eigen::Index>(in) * out + i);
            z[static_cast<std::size_t>(i)] = (l + 2 < w.size()) ? std::max(0.0, acc) : acc;
        }
        off += static_cast<Eigen::Index>(in) * out + out;
        h = z;
    }
    return Eigen::Map<Vec>(h.data(), static_cast<Eigen::Index>(h.size()));
}

MlpNet random_net(Rng& rng) {
    std::vector<int> widths{1 + static_cast<int>(rng.below(8))};
    const int hidden = static_cast<int>(rng.below(3));
    for (int i = 0; i < hidden; ++i) widths.push_back(1 + static_cast<int>(rng.below(16)));
    widths.push_back(1);
    MlpNet net(widths);
    net.init(rng, 1.0);
    for (Eigen::Index i = 0; i < net.param_count(); ++i) net.params()(i) += 0.1 * rng.normal();
    return net;
}

Vec random_vec(Eigen::Index n, Rng& rng) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// Distance of every hidden pre-activation from the rectifier kink.
double min_kink_distance(const MlpNet& net, const Vec& x) {
    ForwardCache cache;
    forward_batch(net, x, &cache);
    double d = 1e300;
    for (int l = 1; l < net.layer_count(); ++l) {
        const Vec z = net.weight(l - 1) * cache.inputs[static_cast<std::size_t>(l - 1)].col(0) + net.bias(l - 1);
        d = std::min(d, z.cwiseAbs().minCoeff());
    }
    return d;
}

}  // namespace

TEST_CASE("zero network outputs zero") {
    MlpNet net({4, 5, 5, 2});
    Rng rng(1);
    CHECK(forward(net, random_vec(4, rng)).isZero(0.0));
}

TEST_CASE("1-1-1-1 network by hand") {
    MlpNet net({1, 1, 1, 1});
    net.weight(0)(0, 0) = 2.0;
    net.bias(0)(0) = -1.0;
    net.weight(1)(0, 0) = 3.0;
    net.bias(1)(0) = 0.5;
    net.weight(2)(0, 0) = -1.5;
    net.bias(2)(0) = 0.25;
    // x = 2: relu(3) = 3 -> relu(9.5) = 9.5 -> -14.25 + 0.25
    CHECK(forward(net, Vec::Constant(1, 2.0))(0) == doctest::Approx(-14.0));
    // x = 0: relu(-1) = 0 -> relu(0.5) -> -0.75 + 0.25
    CHECK(forward(net, Vec::Constant(1, 0.0))(0) == doctest::Approx(-0.5));
}

TEST_CASE("forward matches the naive loop oracle and is pure") {
    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        const MlpNet net = random_net(rng);
        const Vec x = random_vec(net.input_size(), rng);
        const Vec got = forward(net, x);
        CHECK((got - naive_forward(net, x)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(forward(net, x) == got);
        Mat batch(net.input_size(), 3);
        batch << x, x, x;
        CHECK((forward_batch(net, batch).col(2) - got).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("shape mismatches are contract violations") {
    MlpNet net({3, 4, 1});
    CHECK_THROWS_AS(forward(net, Vec::Zero(2)), ContractViolation);
    MlpNet other({3, 5, 1});
    CHECK_THROWS_AS(soft_update(net, other, 0.5), ContractViolation);
    AdamState s(net.param_count(), 1e-3);
    CHECK_THROWS_AS(adam_step(s, net.params(), Vec::Zero(3)), ContractViolation);
}

TEST_CASE("linear network input gradient is the transposed weight") {
    MlpNet net({3, 2});
    Rng rng(3);
    net.init(rng);
    ForwardCache cache;
    forward_batch(net, random_vec(3, rng), &cache);
    const Mat cot = random_vec(2, rng);
    const BackwardResult r = backward(net, cache, cot);
    CHECK((r.input_grad - net.weight(0).transpose() * cot).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("parameter and input gradients match central differences") {
    Rng rng(4);
    int checked = 0;
    for (int t = 0; t < 100; ++t) {
        MlpNet net = random_net(rng);
        const Vec x = random_vec(net.input_size(), rng);
        if (min_kink_distance(net, x) < 1e-4) continue;
        ForwardCache cache;
        forward_batch(net, x, &cache);
        const BackwardResult r = backward(net, cache, Mat::Ones(1, 1));
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < net.param_count(); ++i) {
            MlpNet up = net, dn = net;
            up.params()(i) += h;
            dn.params()(i) -= h;
            const double fd = (forward(up, x)(0) - forward(dn, x)(0)) / (2 * h);
            CHECK(rel_err(fd, r.param_grad(i)) < 1e-5);
        }
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            Vec up = x, dn = x;
            up(i) += h;
            dn(i) -= h;
            const double fd = (forward(net, up)(0) - forward(net, dn)(0)) / (2 * h);
            CHECK(rel_err(fd, r.input_grad(i, 0)) < 1e-5);
        }
        ++checked;
    }
    CHECK(checked > 50);
}

TEST_CASE("batched backward sums per-sample gradients") {
    Rng rng(5);
    MlpNet net({3, 6, 6, 1});
    net.init(rng);
    Mat x(3, 4);
    for (int j = 0; j < 4; ++j) x.col(j) = random_vec(3, rng);
    const Mat cot = Mat::Random(1, 4);
    ForwardCache cache;
    forward_batch(net, x, &cache);
    const Vec total = backward(net, cache, cot).param_grad;
    Vec sum = Vec::Zero(net.param_count());
    for (int j = 0; j < 4; ++j) {
        ForwardCache c1;
        forward_batch(net, x.col(j), &c1);
        sum += backward(net, c1, cot.col(j)).param_grad;
    }
    CHECK((total - sum).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("Adam first step, zero gradient and constant-gradient limit") {
    Vec p = Vec::LinSpaced(4, -1.0, 2.0);
    const Vec g = (Vec(4) << 0.3, -2.0, 1e-3, 5.0).finished();
    AdamState s(4, 0.01);
    Vec q = p;
    adam_step(s, q, g);
    for (int i = 0; i < 4; ++i) CHECK(q(i) - p(i) == doctest::Approx(-0.01 * g(i) / (std::abs(g(i)) + 1e-8)));

    const Vec m = s.m, v = s.v;
    const Vec before = q;
    adam_step(s, q, Vec::Zero(4));
    CHECK((s.m - 0.9 * m).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((s.v - 0.999 * v).cwiseAbs().maxCoeff() < 1e-18);
    (void)before;

    AdamState c(2, 0.001);
    Vec w = Vec::Zero(2);
    const Vec cg = (Vec(2) << 4.0, -0.25).finished();
    Vec last = w;
    for (int i = 0; i < 5000; ++i) {
        last = w;
        adam_step(c, w, cg);
    }
    CHECK(std::abs(w(0) - last(0)) == doctest::Approx(0.001).epsilon(1e-3));
    CHECK(std::abs(w(1) - last(1)) == doctest::Approx(0.001).epsilon(1e-3));
    CHECK(c.step == 5000);
}

TEST_CASE("Adam refuses non-finite gradients") {
    AdamState s(2, 0.01);
    Vec p = Vec::Zero(2);
    CHECK_THROWS_AS(adam_step(s, p, (Vec(2) << 1.0, std::nan("")).finished()), TrainingFault);
    CHECK(s.step == 0);
}

TEST_CASE("soft update extremes and geometric decay") {
    Rng rng(6);
    MlpNet online({3, 4, 1}), target({3, 4, 1});
    online.init(rng);
    target.init(rng);
    MlpNet t0 = target;
    soft_update(t0, online, 0.0);
    CHECK(t0 == target);
    MlpNet t1 = target;
    soft_update(t1, online, 1.0);
    CHECK(t1 == online);

    double gap = (target.params() - online.params()).cwiseAbs().maxCoeff();
    for (int i = 0; i < 50; ++i) {
        soft_update(target, online, 0.1);
        const double next = (target.params() - online.params()).cwiseAbs().maxCoeff();
        CHECK(next == doctest::Approx(0.9 * gap).epsilon(1e-9));
        gap = next;
    }
}

TEST_CASE("initialization scales the output layer") {
    Rng rng(7);
    MlpNet net({13, 64, 64, 1});
    net.init(rng, 1e-3);
    CHECK(net.weight(2).cwiseAbs().maxCoeff() <= 1e-3 / 8.0);
    CHECK(net.bias(0).isZero(0.0));
    CHECK(net.weight(0).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(13.0));
}
