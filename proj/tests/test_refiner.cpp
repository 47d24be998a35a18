#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "sparef/checkpoint.hpp"
#include "sparef/verify.hpp"

using namespace sparef;
namespace fs = std::filesystem;

namespace {

SelectionMask random_mask(Rng& rng, int64_t h, int64_t w, double density) {
    std::vector<uint8_t> bits(size_t(h * w), 0);
    for (auto& b : bits) b = rng.uniform() < density ? 1 : 0;
    return SelectionMask::from_bits(h, w, std::move(bits));
}

template <class S>
SparseTensor<S> random_input(Rng& rng, int64_t h, int64_t w, double density, int64_t c = 3) {
    Tensor<S> d({c, h, w});
    for (int64_t i = 0; i < d.numel(); ++i) d[i] = S(rng.normal());
    return dense_to_sparse(d, random_mask(rng, h, w, density));
}

// Closed-form parameter count from the architecture definition: conv KxK is
// K^2*Cin*Cout + Cout, batch norm is 2C, linear is Cin*Cout + Cout. Written
// independently of the layer code.
int64_t formula_param_count(const RefinerConfig& cfg) {
    auto conv = [](int64_t k, int64_t cin, int64_t cout) { return k * k * cin * cout + cout; };
    auto bn = [](int64_t c) { return 2 * c; };
    auto block = [&](int64_t cin, int64_t cout) {
        int64_t n = conv(3, cin, cout) + bn(cout) + conv(3, cout, cout) + bn(cout);
        if (cin != cout) n += conv(1, cin, cout) + bn(cout);
        return n;
    };
    const int64_t s = cfg.num_stages();
    int64_t n = conv(3, cfg.in_channels, cfg.channels[0]) + bn(cfg.channels[0]);
    for (int64_t i = 0; i + 1 < s; ++i) {
        for (int64_t b = 0; b < cfg.blocks_per_encoder_stage; ++b)
            n += block(cfg.channels[size_t(i)], cfg.channels[size_t(i)]);
        n += 4 * cfg.channels[size_t(i)] * cfg.channels[size_t(i + 1)] +
             cfg.channels[size_t(i + 1)] + bn(cfg.channels[size_t(i + 1)]);
    }
    for (int64_t b = 0; b < cfg.blocks_per_encoder_stage; ++b)
        n += block(cfg.channels[size_t(s - 1)], cfg.channels[size_t(s - 1)]);
    for (int64_t d = 0; d + 1 < s; ++d) {
        const int64_t level = s - 2 - d;
        const int64_t cc = cfg.channels[size_t(level + 1)], cf = cfg.channels[size_t(level)];
        n += 4 * cc * cf + cf + bn(cf);
        for (int64_t b = 0; b < cfg.blocks_per_decoder_stage; ++b)
            n += block(b == 0 ? 2 * cf : cf, cf);
    }
    n += cfg.channels[0] * cfg.num_classes + cfg.num_classes;
    return n;
}

}  // namespace

TEST_CASE("default six-stage parameter count matches the closed form") {
    RefinerConfig cfg;
    cfg.channels = {32, 64, 128, 256, 512, 1024};
    cfg.num_classes = 19;
    RefinerNet<float> net(cfg);
    CHECK(net.num_params() == formula_param_count(cfg));
}

TEST_CASE("desk-scale parameter count matches the closed form") {
    RefinerConfig cfg;
    cfg.channels = {16, 32, 64, 128};
    cfg.num_classes = 6;
    RefinerNet<float> net(cfg);
    CHECK(net.num_params() == formula_param_count(cfg));
}

TEST_CASE("one-stage config degenerates to stem + blocks + head") {
    Rng rng(1);
    RefinerConfig cfg;
    cfg.channels = {8};
    cfg.num_classes = 5;
    RefinerNet<float> net(cfg);
    net.init_params(7);
    CHECK(net.num_params() == formula_param_count(cfg));

    auto x = random_input<float>(rng, 8, 8, 0.4);
    CoordinateManager mgr;
    RunCtx ctx{&mgr, false, false};
    auto y = net.forward(x, ctx);
    CHECK(y.coords.get() == x.coords.get());
    CHECK(y.channels() == 5);
    CHECK(mgr.level(2) == nullptr);  // no downsampling happened
}

TEST_CASE("same seed gives bit-identical initial weights") {
    RefinerConfig cfg;
    cfg.channels = {6, 9};
    cfg.num_classes = 4;
    RefinerNet<float> a(cfg), b(cfg), c(cfg);
    a.init_params(123);
    b.init_params(123);
    c.init_params(124);
    std::vector<Parameter<float>*> pa, pb, pc;
    a.params(pa);
    b.params(pb);
    c.params(pc);
    bool all_equal = true, any_diff = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        if (pa[i]->value != pb[i]->value) all_equal = false;
        if (pa[i]->value != pc[i]->value) any_diff = true;
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("forward preserves the coordinate set on random masks") {
    Rng rng(2);
    RefinerConfig cfg;
    cfg.channels = {6, 8, 10};
    cfg.num_classes = 4;
    RefinerNet<float> net(cfg);
    net.init_params(5);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_input<float>(rng, 16, 16, rng.uniform(0.05, 0.8));
        CoordinateManager mgr;
        RunCtx ctx{&mgr, false, false};
        auto y = net.forward(x, ctx);
        CHECK(y.coords.get() == x.coords.get());
        CHECK(y.channels() == 4);
    }
}

TEST_CASE("empty input gives empty output") {
    RefinerConfig cfg;
    cfg.channels = {4, 6};
    cfg.num_classes = 3;
    RefinerNet<float> net(cfg);
    net.init_params(3);
    SparseTensor<float> empty(make_coord_set({}, 1), MatX<float>(0, 3));
    CoordinateManager mgr;
    RunCtx ctx{&mgr, false, false};
    auto y = net.forward(empty, ctx);
    CHECK(y.rows() == 0);
    CHECK(y.channels() == 3);
}

TEST_CASE("zero-initialized head yields all-zero logits") {
    Rng rng(3);
    RefinerConfig cfg;
    cfg.channels = {4, 6};
    cfg.num_classes = 3;
    RefinerNet<float> net(cfg);
    net.init_params(4);
    StateMap<float> st;
    net.state("r", st);
    for (auto& [name, mat] : st)
        if (name == "r.head.W" || name == "r.head.b") mat->setZero();
    auto x = random_input<float>(rng, 10, 10, 0.5);
    CoordinateManager mgr;
    RunCtx ctx{&mgr, false, false};
    auto y = net.forward(x, ctx);
    CHECK(y.feats.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("permutation equivariance") {
    Rng rng(4);
    RefinerConfig cfg;
    cfg.channels = {5, 7};
    cfg.num_classes = 4;

    auto x = random_input<double>(rng, 12, 12, 0.4);
    const int64_t n = x.rows();
    if (n < 4) return;
    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    shuffle_in_place(perm, rng);
    std::vector<Coord> pcoords(static_cast<size_t>(n));
    MatX<double> pfeats(n, x.channels());
    for (int64_t i = 0; i < n; ++i) {
        pcoords[size_t(i)] = x.coords->coords[size_t(perm[size_t(i)])];
        pfeats.row(i) = x.feats.row(perm[size_t(i)]);
    }
    SparseTensor<double> px(make_coord_set(std::move(pcoords), 1), std::move(pfeats));

    RefinerNet<double> net(cfg);
    net.init_params(11);

    // eval mode: per-row affine normalization, bit-exact under permutation
    CoordinateManager m1, m2;
    RunCtx e1{&m1, false, false}, e2{&m2, false, false};
    auto y = net.forward(x, e1);
    auto py = net.forward(px, e2);
    double worst_eval = 0;
    for (int64_t i = 0; i < n; ++i)
        worst_eval = std::max(worst_eval,
                              (py.feats.row(i) - y.feats.row(perm[size_t(i)])).cwiseAbs().maxCoeff());
    CHECK(worst_eval == 0.0);

    // train mode: batch statistics are order-invariant sums up to rounding
    CoordinateManager m3, m4;
    RunCtx t1{&m3, true, false}, t2{&m4, true, false};
    auto yt = net.forward(x, t1);
    auto pyt = net.forward(px, t2);
    double worst_train = 0;
    for (int64_t i = 0; i < n; ++i)
        worst_train = std::max(
            worst_train, (pyt.feats.row(i) - yt.feats.row(perm[size_t(i)])).cwiseAbs().maxCoeff());
    CHECK(worst_train < 1e-10);
}

TEST_CASE("two-stage refiner passes the finite-difference check") {
    auto res = verify_gradients(1, 99, 1e-6);
    CHECK(res.pass);
    CHECK(res.worst < 1e-6);
}

TEST_CASE("coordinate round trip through the six-stage topology") {
    auto res = verify_coord_roundtrip(5, 17);
    CHECK(res.pass);
    CHECK(res.cases > 0);
}

TEST_CASE("checkpoint round trip preserves forward outputs bit-exactly") {
    Rng rng(5);
    const auto dir = fs::temp_directory_path() / "sparef_refiner_ckpt";
    fs::create_directories(dir);
    const std::string path = (dir / "net.srck").string();

    RefinerConfig cfg;
    cfg.channels = {6, 8};
    cfg.num_classes = 4;
    RefinerNet<float> net(cfg);
    net.init_params(21);

    auto x = random_input<float>(rng, 10, 10, 0.5);
    CoordinateManager m1;
    RunCtx ctx{&m1, false, false};
    auto y_before = net.forward(x, ctx);

    Checkpoint ckpt;
    ckpt.config = Json{{"refiner", refiner_config_to_json(cfg)}};
    StateMap<float> st;
    net.state("refiner", st);
    checkpoint_put_state(ckpt, st);
    checkpoint_save(ckpt, path);

    Checkpoint loaded = checkpoint_load(path);
    RefinerConfig cfg2 = refiner_config_from_json(loaded.config.at("refiner"));
    CHECK(cfg2 == cfg);
    RefinerNet<float> net2(cfg2);
    StateMap<float> st2;
    net2.state("refiner", st2);
    checkpoint_get_state(loaded, st2);

    CoordinateManager m2;
    RunCtx ctx2{&m2, false, false};
    auto y_after = net2.forward(x, ctx2);
    CHECK((y_after.feats - y_before.feats).cwiseAbs().maxCoeff() == 0.0f);

    // tampered dims -> error naming the parameter
    Checkpoint tampered = loaded;
    for (auto& [name, tensor] : tampered.tensors)
        if (name == "refiner.head.W") tensor = Tensor<float>({2, 2});
    checkpoint_save(tampered, path + ".bad");
    Checkpoint bad = checkpoint_load(path + ".bad");
    RefinerNet<float> net3(cfg);
    StateMap<float> st3;
    net3.state("refiner", st3);
    try {
        checkpoint_get_state(bad, st3);
        CHECK(false);
    } catch (const CheckpointError& e) {
        CHECK(std::string(e.what()).find("refiner.head.W") != std::string::npos);
    }

    // missing tensor
    Checkpoint missing = loaded;
    missing.tensors.erase(missing.tensors.begin());
    CHECK_THROWS_AS(checkpoint_get_state(missing, st3), CheckpointError);

    // unknown version byte
    std::string bytes = detail::slurp_file(path);
    bytes[4] = char(9);
    detail::dump_file(path + ".ver", bytes);
    CHECK_THROWS_AS(checkpoint_load(path + ".ver"), CheckpointError);

    fs::remove_all(dir);
}

TEST_CASE("invalid configs are rejected") {
    RefinerConfig empty;
    CHECK_THROWS_AS(RefinerNet<float>{empty}, ConfigError);
    RefinerConfig bad;
    bad.channels = {4, 0};
    CHECK_THROWS_AS(RefinerNet<float>{bad}, ConfigError);
    RefinerConfig one_class;
    one_class.channels = {4};
    one_class.num_classes = 1;
    CHECK_THROWS_AS(RefinerNet<float>{one_class}, ConfigError);
}

TEST_CASE("dense-reference mac formula agrees with a measured fully active run") {
    RefinerConfig cfg;
    cfg.channels = {4, 6};
    cfg.num_classes = 3;
    RefinerNet<float> net(cfg);
    net.init_params(9);
    const int64_t h = 16, w = 16;
    Tensor<float> dense({3, h, w}, 0.5f);
    auto x = dense_to_sparse(dense, SelectionMask::full(h, w));
    CoordinateManager mgr;
    int64_t measured = 0;
    RunCtx ctx{&mgr, false, false, &measured};
    net.forward(x, ctx);
    const int64_t padded = refiner_dense_reference_macs(cfg, h, w);
    // fully active interior pairs are fewer than padded positions, never more
    CHECK(measured <= padded);
    CHECK(measured > padded / 2);
}
