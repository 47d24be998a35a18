#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sparef/grad_check.hpp"
#include "sparef/loss.hpp"
#include "sparef/optim.hpp"

using namespace sparef;

namespace {

CoordSetPtr random_coords(Rng& rng, int64_t h, int64_t w, double density) {
    std::vector<Coord> coords;
    for (int32_t y = 0; y < h; ++y)
        for (int32_t x = 0; x < w; ++x)
            if (rng.uniform() < density) coords.push_back({0, y, x});
    if (coords.empty()) coords.push_back({0, 0, 0});
    return make_coord_set(std::move(coords), 1);
}

MatX<double> random_mat(Rng& rng, int64_t r, int64_t c, double scale = 1.0) {
    MatX<double> m(r, c);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) m(i, j) = rng.normal() * scale;
    return m;
}

// Loss functional: sum(out .* probe) with a fixed random probe, a linear
// functional so d(loss)/d(out) = probe.
template <class Net>
GradCheckReport check_layer(Net& net, CoordSetPtr coords, int64_t cin, Rng& rng,
                            bool check_input = true) {
    MatX<double> input = random_mat(rng, int64_t(coords->size()), cin);
    MatX<double> input_grad;
    CoordinateManager mgr;
    RunCtx train_ctx{&mgr, true, true};
    RunCtx probe_ctx{&mgr, true, false};

    MatX<double> probe;

    auto forward_loss = [&]() {
        SparseTensor<double> x(coords, input);
        SparseTensor<double> out = net.forward(x, probe_ctx);
        return double((out.feats.array() * probe.array()).sum());
    };
    auto backward = [&]() {
        std::vector<Parameter<double>*> ps;
        net.params(ps);
        for (auto* p : ps) p->zero_grad();
        SparseTensor<double> x(coords, input);
        SparseTensor<double> out = net.forward(x, train_ctx);
        if (probe.size() == 0) {
            // O(1) loss keeps finite-difference cancellation below tolerance
            probe = random_mat(rng, out.rows(), out.channels()) / double(out.feats.size());
        }
        input_grad = net.backward(probe);
    };

    std::vector<Parameter<double>*> ps;
    net.params(ps);
    auto slots = slots_of<double>(ps);
    if (check_input) slots.push_back({&input, &input_grad});
    return grad_check(slots, forward_loss, backward, rng, 60);
}

}  // namespace

TEST_CASE("relu backward masks upstream by input sign") {
    Rng rng(1);
    auto coords = random_coords(rng, 4, 4, 1.0);
    ReluLayer<double> layer;
    RunCtx ctx{nullptr, true, true};
    MatX<double> in = random_mat(rng, int64_t(coords->size()), 3);
    SparseTensor<double> x(coords, in);
    layer.forward(x, ctx);
    MatX<double> up = random_mat(rng, in.rows(), 3);
    MatX<double> g = layer.backward(up);
    for (int64_t i = 0; i < in.rows(); ++i)
        for (int64_t j = 0; j < 3; ++j)
            CHECK(g(i, j) == (in(i, j) > 0 ? up(i, j) : 0.0));
}

TEST_CASE("linear backward with identity weights passes upstream through") {
    Rng rng(2);
    LinearLayer<double> lin(3, 3);
    lin.weight().value = MatX<double>::Identity(3, 3);
    RunCtx ctx{nullptr, true, true};
    MatX<double> in = random_mat(rng, 5, 3);
    lin.forward_mat(in, ctx);
    MatX<double> up = random_mat(rng, 5, 3);
    CHECK((lin.backward(up) - up).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("3x3 submanifold conv backward matches finite differences") {
    Rng rng(3);
    for (int inst = 0; inst < 3; ++inst) {
        auto coords = random_coords(rng, 8, 8, 0.4);
        SubmConvLayer<double> conv(3, 4, 5);
        conv.init_params(rng);
        auto report = check_layer(conv, coords, 4, rng);
        CHECK(report.max_rel_err < 1e-6);
    }
}

TEST_CASE("strided and inverse conv backward match finite differences") {
    Rng rng(4);
    for (int inst = 0; inst < 3; ++inst) {
        auto coords = random_coords(rng, 8, 8, 0.5);
        StridedConvLayer<double> down(3, 4);
        down.init_params(rng);
        auto report = check_layer(down, coords, 3, rng);
        CHECK(report.max_rel_err < 1e-6);

        // inverse conv needs the fine level registered first
        CoordinateManager mgr;
        RunCtx ctx{&mgr, true, true};
        RunCtx probe{&mgr, true, false};
        auto [coarse, km] = mgr.strided_transition(coords);
        (void)km;
        InverseConvLayer<double> up(4, 3);
        up.init_params(rng);
        MatX<double> input = random_mat(rng, int64_t(coarse->size()), 4);
        MatX<double> input_grad;
        MatX<double> probe_mat =
            random_mat(rng, int64_t(coords->size()), 3) / double(coords->size() * 3);
        auto forward_loss = [&]() {
            SparseTensor<double> x(coarse, input);
            return double((up.forward(x, probe).feats.array() * probe_mat.array()).sum());
        };
        auto backward = [&]() {
            std::vector<Parameter<double>*> ps;
            up.params(ps);
            for (auto* p : ps) p->zero_grad();
            SparseTensor<double> x(coarse, input);
            up.forward(x, ctx);
            input_grad = up.backward(probe_mat);
        };
        std::vector<Parameter<double>*> ps;
        up.params(ps);
        auto slots = slots_of<double>(ps);
        slots.push_back({&input, &input_grad});
        auto report2 = grad_check(slots, forward_loss, backward, rng, 60);
        CHECK(report2.max_rel_err < 1e-6);
    }
}

TEST_CASE("batch norm train-mode backward matches finite differences") {
    Rng rng(5);
    for (int inst = 0; inst < 3; ++inst) {
        auto coords = random_coords(rng, 6, 6, 0.6);
        BatchNormLayer<double> bn(4);
        auto report = check_layer(bn, coords, 4, rng);
        CHECK(report.max_rel_err < 1e-6);
    }
}

TEST_CASE("basic block backward matches finite differences") {
    Rng rng(6);
    auto coords = random_coords(rng, 8, 8, 0.4);
    BasicBlock<double> block(3, 6);  // projection path exercised
    block.init_params(rng);
    auto report = check_layer(block, coords, 3, rng);
    CHECK(report.max_rel_err < 1e-6);

    BasicBlock<double> same(4, 4);  // identity skip
    same.init_params(rng);
    auto report2 = check_layer(same, coords, 4, rng);
    CHECK(report2.max_rel_err < 1e-6);
}

TEST_CASE("conv backward without recorded forward raises state error") {
    SubmConvLayer<double> conv(3, 2, 2);
    MatX<double> up = MatX<double>::Zero(1, 2);
    CHECK_THROWS_AS(conv.backward(up), StateError);
}

TEST_CASE("cross entropy values") {
    // one-hot aligned with huge margin -> ~0
    MatX<float> sharp(1, 4);
    sharp << 50, 0, 0, 0;
    std::vector<int32_t> t0{0};
    CHECK(cross_entropy<float>(sharp, t0).loss == doctest::Approx(0.0f).epsilon(1e-6));

    // uniform logits, C=19 -> ln 19
    MatX<float> uni = MatX<float>::Zero(3, 19);
    std::vector<int32_t> t1{4, 7, 0};
    CHECK(cross_entropy<float>(uni, t1).loss == doctest::Approx(std::log(19.0f)));

    // 2-row case with one ignored equals the 1-row loss
    Rng rng(7);
    MatX<double> two = random_mat(rng, 2, 5);
    std::vector<int32_t> t2{3, 255};
    std::vector<int32_t> t3{3};
    MatX<double> one = two.topRows(1);
    CHECK(cross_entropy<double>(two, t2).loss ==
          doctest::Approx(cross_entropy<double>(one, t3).loss).epsilon(1e-12));

    // all rows ignored -> defined zero loss, zero grad
    std::vector<int32_t> t4{255, 255};
    auto res = cross_entropy<double>(two, t4);
    CHECK(res.loss == 0.0);
    CHECK(res.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(8);
    MatX<double> logits = random_mat(rng, 6, 5);
    std::vector<int32_t> targets{0, 3, 255, 2, 4, 1};
    auto res = cross_entropy<double>(logits, targets);
    auto forward = [&]() { return double(cross_entropy<double>(logits, targets).loss); };
    auto backward = [&]() {};
    std::vector<GradSlot> slots{{&logits, &res.grad}};
    auto report = grad_check(slots, forward, backward, rng, 60);
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("adamw: zero gradients and zero weight decay leave parameters unchanged") {
    Parameter<double> p;
    p.resize(2, 3);
    p.value.setConstant(0.7);
    std::vector<Parameter<double>*> ps{&p};
    adamw_step(ps, 1e-3, 0.0, 1);
    CHECK((p.value.array() == 0.7).all());
}

TEST_CASE("cosine schedule hits the floor at t = T") {
    CHECK(cosine_lr(3e-4, 1e-6, 100, 100) == doctest::Approx(1e-6).epsilon(1e-12));
    CHECK(cosine_lr(3e-4, 1e-6, 0, 100) == doctest::Approx(3e-4));
    CHECK(cosine_lr(3e-4, 1e-6, 50, 100) ==
          doctest::Approx(1e-6 + 0.5 * (3e-4 - 1e-6)).epsilon(1e-12));
}

TEST_CASE("adamw trajectory matches a hand-iterated scalar update") {
    const double grads[5] = {0.3, -0.2, 0.1, 0.05, -0.4};
    const double lr = 1e-2, wd = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;

    // hand iteration of the update rule
    double w = 0.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 5; ++t) {
        const double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        w -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w);
    }

    Parameter<double> p;
    p.resize(1, 1);
    p.value(0, 0) = 0.5;
    std::vector<Parameter<double>*> ps{&p};
    for (int t = 1; t <= 5; ++t) {
        p.zero_grad();
        p.grad(0, 0) = grads[t - 1];
        adamw_step(ps, lr, wd, t);
    }
    CHECK(p.value(0, 0) == doctest::Approx(w).epsilon(1e-14));
}

TEST_CASE("decoupled decay shrinks weights by exactly lr*wd*w with zero grads") {
    Parameter<double> p;
    p.resize(1, 2);
    p.value << 2.0, -3.0;
    std::vector<Parameter<double>*> ps{&p};
    const double lr = 1e-3, wd = 0.05;
    const MatX<double> before = p.value;
    adamw_step(ps, lr, wd, 1);
    CHECK(p.value(0, 0) == doctest::Approx(before(0, 0) * (1.0 - lr * wd)).epsilon(1e-15));
    CHECK(p.value(0, 1) == doctest::Approx(before(0, 1) * (1.0 - lr * wd)).epsilon(1e-15));
}

TEST_CASE("one step on a positive-curvature quadratic decreases the loss") {
    Parameter<double> p;
    p.resize(1, 1);
    p.value(0, 0) = 3.0;
    auto loss = [&]() { return p.value(0, 0) * p.value(0, 0); };
    const double before = loss();
    p.zero_grad();
    p.grad(0, 0) = 2.0 * p.value(0, 0);
    std::vector<Parameter<double>*> ps{&p};
    adamw_step(ps, 1e-2, 0.05, 1);
    CHECK(loss() < before);
}

TEST_CASE("grad_check flags a corrupted analytic gradient") {
    Rng rng(55);
    MatX<double> w = random_mat(rng, 4, 3), grad(4, 3);
    MatX<double> x = random_mat(rng, 6, 4), probe = random_mat(rng, 6, 3);
    auto loss = [&]() { return double((x * w).cwiseProduct(probe).sum()); };
    auto backward = [&]() { grad = 1.01 * (x.transpose() * probe); };  // wrong by 1%
    std::vector<GradSlot> slots{{&w, &grad}};
    auto rep = grad_check(slots, loss, backward, rng, 50);
    CHECK(rep.max_rel_err > 1e-3);
}

TEST_CASE("training steps are bit-reproducible given seed and data order") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        auto coords = random_coords(rng, 6, 6, 0.7);
        SubmConvLayer<float> conv(3, 3, 4);
        BatchNormLayer<float> bn(4);
        ReluLayer<float> act;
        LinearLayer<float> head(4, 3);
        conv.init_params(rng);
        head.init_params(rng);
        MatX<float> input = random_mat(rng, int64_t(coords->size()), 3).cast<float>();
        std::vector<int32_t> targets(coords->size());
        for (auto& t : targets) t = int32_t(rng.uniform_index(3));

        std::vector<Parameter<float>*> ps;
        conv.params(ps);
        bn.params(ps);
        head.params(ps);
        TrainConfig cfg;
        cfg.total_steps = 10;
        for (int step = 1; step <= 10; ++step) {
            CoordinateManager mgr;
            RunCtx ctx{&mgr, true, true};
            SparseTensor<float> x(coords, input);
            auto out = head.forward(act.forward(bn.forward(conv.forward(x, ctx), ctx), ctx), ctx);
            auto res = cross_entropy<float>(out.feats, targets);
            conv.backward(bn.backward(act.backward(head.backward(res.grad))));
            optimizer_step(ps, cfg, step);
        }
        return head.weight().value;
    };
    const MatX<float> a = run(42), b = run(42), c = run(43);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((a - c).cwiseAbs().maxCoeff() != 0.0f);
}
