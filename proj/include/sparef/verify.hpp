#pragma once

#include <functional>
#include <sstream>

#include "sparef/dense_reference.hpp"
#include "sparef/ensembler.hpp"
#include "sparef/grad_check.hpp"
#include "sparef/loss.hpp"
#include "sparef/refiner.hpp"
#include "sparef/sparse_tensor.hpp"

namespace sparef {

struct VerifyResult {
    bool pass = true;
    double worst = 0.0;
    int64_t cases = 0;
    std::string detail;
};

namespace detail {

inline SelectionMask random_mask(Rng& rng, int64_t h, int64_t w, double density) {
    std::vector<uint8_t> bits(size_t(h * w), 0);
    for (auto& b : bits) b = rng.uniform() < density ? 1 : 0;
    return SelectionMask::from_bits(h, w, std::move(bits));
}

template <class S>
Tensor<S> random_chw(Rng& rng, int64_t c, int64_t h, int64_t w) {
    Tensor<S> t({c, h, w});
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = S(rng.normal());
    return t;
}

template <class S>
MatX<S> random_mat(Rng& rng, int64_t r, int64_t c, double scale = 1.0) {
    MatX<S> m(r, c);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) m(i, j) = S(rng.normal() * scale);
    return m;
}

}  // namespace detail

/// Randomized sparse/dense equivalence: submanifold convolution vs the
/// brute-force dense oracle on the zero-filled input, restricted to active
/// sites.
template <class S>
VerifyResult verify_conv_equivalence(int64_t cases, uint64_t seed, double tolerance,
                                     int64_t max_hw = 32, int64_t max_c = 16) {
    Rng rng(seed);
    const double densities[4] = {0.05, 0.1, 0.5, 1.0};
    VerifyResult res;
    for (int64_t n = 0; n < cases; ++n) {
        const int64_t h = rng.uniform_int(4, max_hw);
        const int64_t w = rng.uniform_int(4, max_hw);
        const int64_t cin = rng.uniform_int(1, max_c);
        const int64_t cout = rng.uniform_int(1, max_c);
        const int kernel = rng.uniform() < 0.5 ? 1 : 3;
        const double density = densities[rng.uniform_index(4)];

        auto mask = detail::random_mask(rng, h, w, density);
        if (mask.count() == 0) continue;
        auto dense = detail::random_chw<S>(rng, cin, h, w);
        auto x = dense_to_sparse(dense, mask);
        auto weights = detail::random_mat<S>(rng, kernel * kernel * cin, cout, 0.5);
        VecX<S> bias = detail::random_mat<S>(rng, cout, 1).col(0);

        auto y = submanifold_conv(x, weights, bias, kernel);
        auto oracle = dense_conv_naive(sparse_to_dense(x, h, w), weights, bias, kernel);
        for (int64_t i = 0; i < y.rows(); ++i) {
            const Coord& c = x.coords->coords[size_t(i)];
            for (int64_t co = 0; co < cout; ++co)
                res.worst = std::max(res.worst,
                                     double(std::abs(y.feats(i, co) - oracle.at(co, c.y, c.x))));
        }
        ++res.cases;
    }
    res.pass = res.cases > 0 && res.worst < tolerance;
    std::ostringstream os;
    os << "conv equivalence: " << res.cases << " cases, max abs err " << res.worst;
    res.detail = os.str();
    return res;
}

/// Finite-difference verification of every layer type plus the composite
/// 2-stage refiner + gated ensembler, f64, `instances` random instances each.
inline VerifyResult verify_gradients(int64_t instances, uint64_t seed, double tolerance) {
    Rng rng(seed);
    VerifyResult res;

    auto note = [&](const GradCheckReport& r) {
        res.worst = std::max(res.worst, r.max_rel_err);
        ++res.cases;
    };

    // single layers driven by a linear probe functional
    auto probe_layer = [&](auto& net, CoordSetPtr coords, int64_t cin) {
        MatX<double> input = detail::random_mat<double>(rng, int64_t(coords->size()), cin);
        MatX<double> input_grad;
        CoordinateManager mgr;
        RunCtx train_ctx{&mgr, true, true};
        RunCtx probe_ctx{&mgr, true, false};
        MatX<double> probe;
        auto forward_loss = [&]() {
            SparseTensor<double> x(coords, input);
            return double((net.forward(x, probe_ctx).feats.array() * probe.array()).sum());
        };
        auto backward = [&]() {
            std::vector<Parameter<double>*> ps;
            net.params(ps);
            for (auto* p : ps) p->zero_grad();
            SparseTensor<double> x(coords, input);
            auto out = net.forward(x, train_ctx);
            if (probe.size() == 0)
                probe = detail::random_mat<double>(rng, out.rows(), out.channels()) /
                        double(out.feats.size());
            input_grad = net.backward(probe);
        };
        std::vector<Parameter<double>*> ps;
        net.params(ps);
        auto slots = slots_of<double>(ps);
        slots.push_back({&input, &input_grad});
        note(grad_check(slots, forward_loss, backward, rng, 50));
    };

    for (int64_t i = 0; i < instances; ++i) {
        auto coords_of = [&](int64_t hw, double density) {
            auto mask = detail::random_mask(rng, hw, hw, density);
            std::vector<Coord> cs;
            for (auto [y, x] : mask.selected) cs.push_back({0, y, x});
            if (cs.empty()) cs.push_back({0, 0, 0});
            return make_coord_set(std::move(cs), 1);
        };

        {
            SubmConvLayer<double> conv(3, 3, 4);
            Rng init = rng.derive(1);
            conv.init_params(init);
            probe_layer(conv, coords_of(8, 0.4), 3);
        }
        {
            SubmConvLayer<double> conv(1, 4, 3);
            Rng init = rng.derive(2);
            conv.init_params(init);
            probe_layer(conv, coords_of(6, 0.5), 4);
        }
        {
            StridedConvLayer<double> down(3, 4);
            Rng init = rng.derive(3);
            down.init_params(init);
            probe_layer(down, coords_of(8, 0.5), 3);
        }
        {
            BatchNormLayer<double> bn(4);
            probe_layer(bn, coords_of(6, 0.6), 4);
        }
        {
            BasicBlock<double> block(3, 5);
            Rng init = rng.derive(4);
            block.init_params(init);
            probe_layer(block, coords_of(8, 0.4), 3);
        }
        {
            // inverse conv: fine level must be registered first
            auto fine = coords_of(8, 0.5);
            CoordinateManager mgr;
            auto [coarse, km0] = mgr.strided_transition(fine);
            (void)km0;
            InverseConvLayer<double> up(4, 3);
            Rng init = rng.derive(5);
            up.init_params(init);
            MatX<double> input = detail::random_mat<double>(rng, int64_t(coarse->size()), 4);
            MatX<double> input_grad;
            RunCtx train_ctx{&mgr, true, true};
            RunCtx probe_ctx{&mgr, true, false};
            MatX<double> probe = detail::random_mat<double>(rng, int64_t(fine->size()), 3) /
                                 double(fine->size() * 3);
            auto forward_loss = [&]() {
                SparseTensor<double> x(coarse, input);
                return double((up.forward(x, probe_ctx).feats.array() * probe.array()).sum());
            };
            auto backward = [&]() {
                std::vector<Parameter<double>*> ps;
                up.params(ps);
                for (auto* p : ps) p->zero_grad();
                SparseTensor<double> x(coarse, input);
                up.forward(x, train_ctx);
                input_grad = up.backward(probe);
            };
            std::vector<Parameter<double>*> ps;
            up.params(ps);
            auto slots = slots_of<double>(ps);
            slots.push_back({&input, &input_grad});
            note(grad_check(slots, forward_loss, backward, rng, 50));
        }
        {
            // full 2-stage refiner + gated ensembler under cross entropy
            RefinerConfig cfg;
            cfg.channels = {5, 7};
            cfg.num_classes = 4;
            cfg.in_channels = 3;
            RefinerNet<double> net(cfg);
            net.init_params(rng.next());
            GatedEnsembler<double> ens(cfg.num_classes);
            Rng ens_init = rng.derive(6);
            ens.init_params(ens_init);

            CoordSetPtr coords;
            do {
                coords = coords_of(8, 0.5);
            } while (coords->size() < 16);
            const int64_t n = int64_t(coords->size());
            MatX<double> input = detail::random_mat<double>(rng, n, 3);
            MatX<double> y1 = detail::random_mat<double>(rng, n, cfg.num_classes);
            std::vector<int32_t> targets(static_cast<size_t>(n));
            for (auto& t : targets) t = int32_t(rng.uniform_index(uint64_t(cfg.num_classes)));
            MatX<double> input_grad;

            auto forward_only = [&]() {
                CoordinateManager mgr;
                RunCtx ctx{&mgr, true, false};
                SparseTensor<double> x(coords, input);
                auto y2 = net.forward(x, ctx);
                auto fused = ens.forward(y1, y2.feats, ctx);
                return double(cross_entropy<double>(fused, targets).loss);
            };
            auto backward = [&]() {
                std::vector<Parameter<double>*> ps;
                net.params(ps);
                ens.params(ps);
                for (auto* p : ps) p->zero_grad();
                CoordinateManager mgr;
                RunCtx ctx{&mgr, true, true};
                SparseTensor<double> x(coords, input);
                auto y2 = net.forward(x, ctx);
                auto fused = ens.forward(y1, y2.feats, ctx);
                auto lr = cross_entropy<double>(fused, targets);
                input_grad = net.backward(ens.backward(lr.grad));
            };
            std::vector<Parameter<double>*> ps;
            net.params(ps);
            ens.params(ps);
            auto slots = slots_of<double>(ps);
            slots.push_back({&input, &input_grad});
            note(grad_check(slots, forward_only, backward, rng, 60));
        }
    }
    res.pass = res.worst < tolerance;
    std::ostringstream os;
    os << "gradients: " << res.cases << " checks, max rel err " << res.worst;
    res.detail = os.str();
    return res;
}

/// Random masks through the 6-stage topology: decoder coordinate sets must
/// equal the encoder sets exactly at every level, and residual_add must
/// never raise alignment errors inside a built network.
inline VerifyResult verify_coord_roundtrip(int64_t cases, uint64_t seed,
                                           std::vector<int64_t> channels = {4, 4, 4, 4, 4, 4}) {
    Rng rng(seed);
    VerifyResult res;
    RefinerConfig cfg;
    cfg.channels = std::move(channels);
    cfg.num_classes = 4;
    cfg.in_channels = 3;
    RefinerNet<float> net(cfg);
    net.init_params(seed);
    const int64_t levels = cfg.num_stages() - 1;
    for (int64_t n = 0; n < cases; ++n) {
        const int64_t h = 64, w = 64;
        auto mask = detail::random_mask(rng, h, w, rng.uniform(0.02, 0.5));
        if (mask.count() == 0) continue;
        auto dense = detail::random_chw<float>(rng, 3, h, w);
        auto x = dense_to_sparse(dense, mask);

        CoordinateManager mgr;
        RunCtx ctx{&mgr, false, false};
        SparseTensor<float> out;
        try {
            out = net.forward(x, ctx);
        } catch (const AlignmentError& e) {
            res.pass = false;
            res.detail = std::string("alignment error in built network: ") + e.what();
            return res;
        }
        if (out.coords.get() != x.coords.get()) {
            res.pass = false;
            res.detail = "output coordinate set differs from input";
            return res;
        }
        // every registered level must round-trip: stride 2^k set feeds back
        // to exactly the cached finer set
        for (int64_t lvl = levels; lvl >= 1; --lvl) {
            auto coarse = mgr.level(int32_t(1) << lvl);
            auto fine = mgr.level(int32_t(1) << (lvl - 1));
            if (!coarse || !fine) {
                res.pass = false;
                res.detail = "missing cached level";
                return res;
            }
            auto [fine2, km] = mgr.inverse_transition(coarse);
            (void)km;
            if (fine2.get() != fine.get()) {
                res.pass = false;
                res.detail = "inverse transition returned a different set";
                return res;
            }
        }
        ++res.cases;
    }
    std::ostringstream os;
    os << "coordinate round trip: " << res.cases << " masks through " << cfg.num_stages()
       << "-stage topology";
    res.detail = os.str();
    return res;
}

}  // namespace sparef
