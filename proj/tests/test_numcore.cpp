#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "moie/numcore.hpp"

using namespace moie;
using namespace moie::numcore;

namespace {

DenseNet single_layer(std::initializer_list<std::initializer_list<double>> w, std::initializer_list<double> b,
                      Activation act) {
    DenseNet net;
    Layer l;
    l.w = Matrix::from_rows(w);
    l.b = b;
    l.act = act;
    net.layers.push_back(std::move(l));
    return net;
}

Matrix row(std::initializer_list<double> vals) {
    Matrix m(1, static_cast<int>(vals.size()));
    int c = 0;
    for (double v : vals) m(0, c++) = v;
    return m;
}

}  // namespace

TEST_CASE("forward: identity single layer") {
    auto net = single_layer({{1, 0}, {0, 1}}, {0, 0}, Activation::Identity);
    const Matrix out = forward(net, row({1, 2}));
    CHECK(out(0, 0) == doctest::Approx(1.0));
    CHECK(out(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("forward: zero logit sigmoid gives 0.5") {
    auto net = single_layer({{0}}, {0}, Activation::Sigmoid);
    CHECK(forward(net, row({5}))(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("forward: relu clips the negative branch") {
    auto net = single_layer({{1}, {-1}}, {0, 0}, Activation::Relu);
    const Matrix out = forward(net, row({3}));
    CHECK(out(0, 0) == doctest::Approx(3.0));
    CHECK(out(0, 1) == doctest::Approx(0.0));
}

TEST_CASE("forward: dimension mismatch raises") {
    auto net = single_layer({{1, 0}}, {0}, Activation::Identity);
    CHECK_THROWS_AS(forward(net, row({1, 2, 3})), ContractError);
}

TEST_CASE("forward is referentially transparent (bit-identical repeats)") {
    auto net = init_dense({4, 8, 3}, {Activation::Relu, Activation::Identity}, 99);
    Matrix batch(5, 4);
    Rng rng(7);
    for (double& v : batch.data) v = rng.normal();
    const Matrix a = forward(net, batch);
    const Matrix b = forward(net, batch);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("backward: linear layer hand chain rule") {
    auto net = single_layer({{1}}, {0}, Activation::Identity);
    const auto cache = forward_cached(net, row({2}));
    Matrix dout(1, 1);
    dout(0, 0) = 1.0;  // scalar loss = y
    std::vector<double> grad(net.param_count(), 0.0);
    backward(net, cache, dout, grad);
    CHECK(grad[0] == doctest::Approx(2.0));  // dL/dW
    CHECK(grad[1] == doctest::Approx(1.0));  // dL/db
}

TEST_CASE("backward: zero upstream gradient gives zero parameter gradients") {
    auto net = init_dense({3, 4, 2}, {Activation::Sigmoid, Activation::Identity}, 5);
    Matrix batch(2, 3);
    Rng rng(11);
    for (double& v : batch.data) v = rng.normal();
    const auto cache = forward_cached(net, batch);
    Matrix dout(2, 2);
    std::vector<double> grad(net.param_count(), 0.0);
    backward(net, cache, dout, grad);
    for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("backward: sigmoid local gradient at logit zero is 0.25") {
    auto net = single_layer({{1}}, {0}, Activation::Sigmoid);
    const auto cache = forward_cached(net, row({0}));
    Matrix dout(1, 1);
    dout(0, 0) = 1.0;
    std::vector<double> grad(net.param_count(), 0.0);
    Matrix dinput;
    backward(net, cache, dout, grad, &dinput);
    CHECK(dinput(0, 0) == doctest::Approx(0.25));
}

TEST_CASE("backward without a recorded forward raises a state error") {
    auto net = single_layer({{1}}, {0}, Activation::Identity);
    ForwardCache empty;
    Matrix dout(1, 1);
    std::vector<double> grad(net.param_count(), 0.0);
    CHECK_THROWS_AS(backward(net, empty, dout, grad), StateError);
}

TEST_CASE("grad_check: quadratic loss is exact under central differences") {
    LossWithGrad fn = [](std::span<const double> p, std::vector<double>* g) {
        if (g) *g = {p[0]};
        return 0.5 * p[0] * p[0];
    };
    const double err = grad_check(fn, {3.0}, 1e-3, 1e-6);
    CHECK(err <= 1e-10);
}

TEST_CASE("grad_check: constant loss has zero error") {
    LossWithGrad fn = [](std::span<const double> p, std::vector<double>* g) {
        if (g) g->assign(p.size(), 0.0);
        return 42.0;
    };
    CHECK(grad_check(fn, {1.0, -2.0}, 1e-3, 1e-6) == doctest::Approx(0.0));
}

TEST_CASE("grad_check: non-finite loss raises") {
    LossWithGrad fn = [](std::span<const double> p, std::vector<double>* g) {
        if (g) g->assign(p.size(), 0.0);
        return std::numeric_limits<double>::quiet_NaN();
    };
    CHECK_THROWS_AS(grad_check(fn, {1.0}, 1e-3, 1e-6), NumericError);
}

TEST_CASE("grad_check: dense net cross-entropy matches finite differences") {
    auto net = init_dense({4, 6, 3}, {Activation::Relu, Activation::Identity}, 17);
    Matrix batch(5, 4);
    std::vector<int> labels{0, 2, 1, 0, 2};
    Rng rng(23);
    for (double& v : batch.data) v = rng.normal();

    DenseNet scratch = net;
    LossWithGrad fn = [&](std::span<const double> p, std::vector<double>* g) {
        scratch.set_params(p);
        const auto cache = forward_cached(scratch, batch);
        const Matrix& out = cache.post.back();
        double loss = 0.0;
        Matrix dout(out.rows, out.cols);
        for (int j = 0; j < out.rows; ++j) {
            loss += cross_entropy(out.row(j), labels[static_cast<std::size_t>(j)]) / out.rows;
            const auto sm = softmax(out.row(j));
            for (int c = 0; c < out.cols; ++c) {
                dout(j, c) = sm[static_cast<std::size_t>(c)];
                if (c == labels[static_cast<std::size_t>(j)]) dout(j, c) -= 1.0;
                dout(j, c) /= out.rows;
            }
        }
        if (g) {
            g->assign(p.size(), 0.0);
            backward(scratch, cache, dout, *g);
        }
        return loss;
    };
    CHECK(grad_check(fn, net.get_params(), 1e-3, 1e-4) < 1e-4);
}

TEST_CASE("optimizers are deterministic and keep parameters finite") {
    for (OptKind kind : {OptKind::Sgd, OptKind::SgdMomentum, OptKind::Adam}) {
        OptState a({kind, 0.05}, 3, 1);
        OptState b({kind, 0.05}, 3, 1);
        std::vector<double> pa{1.0, -2.0, 0.5}, pb{1.0, -2.0, 0.5};
        const std::vector<double> g{0.3, -0.1, 0.7};
        for (int step = 0; step < 50; ++step) {
            a.apply(pa, g);
            b.apply(pb, g);
        }
        for (int i = 0; i < 3; ++i) CHECK(pa[static_cast<std::size_t>(i)] == pb[static_cast<std::size_t>(i)]);
        CHECK(a.step == 50);
    }
}

TEST_CASE("optimizer rejects non-finite updates") {
    OptState opt({OptKind::Sgd, 1.0}, 1, 0);
    std::vector<double> p{1.0};
    const std::vector<double> g{std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(opt.apply(p, g), NumericError);
}

TEST_CASE("checkpoint round trip is value-exact") {
    auto net = init_dense({3, 5, 2}, {Activation::Sigmoid, Activation::Identity}, 12345);
    const auto j = dense_to_json(net);
    const DenseNet back = dense_from_json(j);
    REQUIRE(back.layers.size() == net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        CHECK(back.layers[i].act == net.layers[i].act);
        for (std::size_t k = 0; k < net.layers[i].w.data.size(); ++k)
            CHECK(back.layers[i].w.data[k] == net.layers[i].w.data[k]);
        for (std::size_t k = 0; k < net.layers[i].b.size(); ++k)
            CHECK(back.layers[i].b[k] == net.layers[i].b[k]);
    }
}

TEST_CASE("softmax utility behaviors") {
    std::vector<double> logits{0.0, 0.0};
    const auto p = softmax(logits);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(argmax(std::vector<double>{0.4, 0.4, 0.2}) == 0);  // tie -> lower index
    CHECK(cross_entropy(std::vector<double>{0.0, 0.0}, 1) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("training layer dimensions must chain") {
    DenseNet net;
    Layer a;
    a.w = Matrix(3, 2);
    a.w.data = {1, 0, 0, 1, 1, 1};
    a.b = {0, 0, 0};
    a.act = Activation::Identity;
    Layer b;
    b.w = Matrix(1, 4);  // mismatched input
    b.w.data = {1, 1, 1, 1};
    b.b = {0};
    b.act = Activation::Identity;
    net.layers = {a, b};
    CHECK_THROWS_AS(net.validate(), ContractError);
}
