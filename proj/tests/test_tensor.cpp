#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "sparef/dense_ops.hpp"
#include "sparef/image_io.hpp"
#include "sparef/rng.hpp"
#include "sparef/tensor.hpp"

using namespace sparef;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("sparef_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

template <class T>
Tensor<T> random_tensor(std::vector<int64_t> dims, Rng& rng) {
    Tensor<T> t(std::move(dims));
    for (int64_t i = 0; i < t.numel(); ++i) {
        if constexpr (std::is_floating_point_v<T>)
            t[i] = T(rng.uniform(-10.0, 10.0));
        else
            t[i] = T(rng.uniform_int(0, 200));
    }
    return t;
}

}  // namespace

TEST_CASE("srt1 round trip is bit exact") {
    TempDir tmp;

    Tensor<float> a({2, 2});
    a.at(0, 0) = 1;
    a.at(0, 1) = 2;
    a.at(1, 0) = 3;
    a.at(1, 1) = 4;
    tensor_write(a, tmp.file("a.srt"));
    CHECK(tensor_read<float>(tmp.file("a.srt")) == a);

    Tensor<double> z({1, 1, 1});
    tensor_write(z, tmp.file("z.srt"));
    CHECK(tensor_read<double>(tmp.file("z.srt")) == z);

    Rng rng(7);
    // all dtypes, all ranks 1..4
    for (int nd = 1; nd <= 4; ++nd) {
        std::vector<int64_t> dims;
        for (int i = 0; i < nd; ++i) dims.push_back(rng.uniform_int(1, 5));
        auto tf = random_tensor<float>(dims, rng);
        auto td = random_tensor<double>(dims, rng);
        auto ti = random_tensor<int32_t>(dims, rng);
        auto tu = random_tensor<uint8_t>(dims, rng);
        tensor_write(tf, tmp.file("f.srt"));
        tensor_write(td, tmp.file("d.srt"));
        tensor_write(ti, tmp.file("i.srt"));
        tensor_write(tu, tmp.file("u.srt"));
        CHECK(tensor_read<float>(tmp.file("f.srt")) == tf);
        CHECK(tensor_read<double>(tmp.file("d.srt")) == td);
        CHECK(tensor_read<int32_t>(tmp.file("i.srt")) == ti);
        CHECK(tensor_read<uint8_t>(tmp.file("u.srt")) == tu);
    }
}

TEST_CASE("srt1 byte length follows the format definition") {
    TempDir tmp;
    Rng rng(3);
    auto t = random_tensor<float>({19, 64, 128}, rng);
    tensor_write(t, tmp.file("t.srt"));
    // magic(4) + dtype(1) + ndim(1) + reserved(2) + ndim*u32 + payload
    const int64_t expected = 4 + 1 + 1 + 2 + 3 * 4 + 4 * 19 * 64 * 128;
    CHECK(int64_t(fs::file_size(tmp.file("t.srt"))) == expected);
}

TEST_CASE("srt1 rejects malformed records") {
    TempDir tmp;
    Rng rng(4);
    auto t = random_tensor<float>({3, 3}, rng);
    tensor_write(t, tmp.file("t.srt"));
    std::string bytes = detail::slurp_file(tmp.file("t.srt"));

    std::string bad = bytes;
    bad[0] = 'X';
    detail::dump_file(tmp.file("bad_magic.srt"), bad);
    CHECK_THROWS_AS(tensor_read<float>(tmp.file("bad_magic.srt")), FormatError);

    bad = bytes;
    bad[4] = char(9);
    detail::dump_file(tmp.file("bad_dtype.srt"), bad);
    CHECK_THROWS_AS(tensor_read<float>(tmp.file("bad_dtype.srt")), FormatError);

    bad = bytes.substr(0, bytes.size() - 5);
    detail::dump_file(tmp.file("trunc.srt"), bad);
    CHECK_THROWS_AS(tensor_read<float>(tmp.file("trunc.srt")), FormatError);

    // f64 record read as f32
    auto td = random_tensor<double>({2}, rng);
    tensor_write(td, tmp.file("d.srt"));
    CHECK_THROWS_AS(tensor_read<float>(tmp.file("d.srt")), FormatError);

    CHECK(tensor_peek_dtype(tmp.file("d.srt")) == Dtype::F64);
}

TEST_CASE("nearest_upsample block-repeats") {
    Tensor<float> one({1, 1});
    one.at(0, 0) = 5.0f;
    auto up = nearest_upsample(one, 2);
    CHECK(up.dims() == std::vector<int64_t>{2, 2});
    for (int64_t i = 0; i < 4; ++i) CHECK(up[i] == 5.0f);

    Tensor<int32_t> m({2, 2});
    m.at(0, 0) = 1;
    m.at(0, 1) = 2;
    m.at(1, 0) = 3;
    m.at(1, 1) = 4;
    CHECK(nearest_upsample(m, 1) == m);

    auto m4 = nearest_upsample(m, 2);
    // direct index enumeration oracle
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x) CHECK(m4.at(y, x) == m.at(y / 2, x / 2));

    CHECK_THROWS_AS(nearest_upsample(m, 0), ArgumentError);
}

TEST_CASE("upsample then subsample recovers the input") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const int64_t f = rng.uniform_int(1, 4);
        auto t = random_tensor<float>({rng.uniform_int(1, 3), rng.uniform_int(1, 8),
                                       rng.uniform_int(1, 8)},
                                      rng);
        CHECK(subsample(nearest_upsample(t, f), f) == t);
    }
}

TEST_CASE("softmax_channels") {
    Tensor<float> z({3, 2, 2}, 0.0f);
    auto p = softmax_channels(z);
    for (int64_t i = 0; i < p.numel(); ++i) CHECK(p[i] == doctest::Approx(1.0f / 3.0f));

    Tensor<float> sat({3, 1, 1});
    sat.at(0, 0, 0) = 4.0f;
    sat.at(1, 0, 0) = -1e9f;
    sat.at(2, 0, 0) = -1e9f;
    auto ps = softmax_channels(sat);
    CHECK(ps.at(0, 0, 0) == doctest::Approx(1.0f));
    CHECK(ps.at(1, 0, 0) == doctest::Approx(0.0f));

    // direct formula evaluation oracle for logits [1,2,3]
    Tensor<double> t({3, 1, 1});
    t.at(0, 0, 0) = 1;
    t.at(1, 0, 0) = 2;
    t.at(2, 0, 0) = 3;
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    auto pt = softmax_channels(t);
    CHECK(pt.at(0, 0, 0) == doctest::Approx(std::exp(1.0) / denom).epsilon(1e-12));
    CHECK(pt.at(1, 0, 0) == doctest::Approx(std::exp(2.0) / denom).epsilon(1e-12));
    CHECK(pt.at(2, 0, 0) == doctest::Approx(std::exp(3.0) / denom).epsilon(1e-12));
    CHECK(pt.at(0, 0, 0) == doctest::Approx(0.0900).epsilon(1e-3));
    CHECK(pt.at(1, 0, 0) == doctest::Approx(0.2447).epsilon(1e-3));
    CHECK(pt.at(2, 0, 0) == doctest::Approx(0.6652).epsilon(1e-3));

    Tensor<float> bad({2, 1, 1});
    bad.at(0, 0, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(softmax_channels(bad), NumericError);
}

TEST_CASE("softmax sums to one for random logits in [-50, 50]") {
    Rng rng(13);
    Tensor<float> z({7, 9, 5});
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = float(rng.uniform(-50.0, 50.0));
    auto p = softmax_channels(z);
    for (int64_t y = 0; y < 9; ++y)
        for (int64_t x = 0; x < 5; ++x) {
            float s = 0;
            for (int64_t c = 0; c < 7; ++c) {
                CHECK(p.at(c, y, x) >= 0.0f);
                CHECK(p.at(c, y, x) <= 1.0f);
                s += p.at(c, y, x);
            }
            CHECK(std::abs(s - 1.0f) < 1e-6f);
        }
}

TEST_CASE("argmax_channels") {
    Tensor<float> onehot({4, 2, 2}, 0.0f);
    onehot.at(2, 0, 0) = 1;
    onehot.at(0, 0, 1) = 1;
    onehot.at(3, 1, 0) = 1;
    onehot.at(1, 1, 1) = 1;
    auto lm = argmax_channels(onehot);
    CHECK(lm.at(0, 0) == 2);
    CHECK(lm.at(0, 1) == 0);
    CHECK(lm.at(1, 0) == 3);
    CHECK(lm.at(1, 1) == 1);

    Tensor<float> equal({4, 2, 2}, 0.5f);
    auto le = argmax_channels(equal);
    for (auto v : le.labels) CHECK(v == 0);  // ties toward smallest index

    Tensor<float> two({2, 1, 1});
    two.at(0, 0, 0) = 0.1f;
    two.at(1, 0, 0) = 0.9f;
    CHECK(argmax_channels(two).at(0, 0) == 1);
}

TEST_CASE("argmax invariant under per-pixel constant shifts") {
    Rng rng(17);
    Tensor<float> z({5, 6, 4});
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = float(rng.uniform(-3.0, 3.0));
    Tensor<float> shifted = z;
    for (int64_t y = 0; y < 6; ++y)
        for (int64_t x = 0; x < 4; ++x) {
            const float delta = float(rng.uniform(-100.0, 100.0));
            for (int64_t c = 0; c < 5; ++c) shifted.at(c, y, x) += delta;
        }
    CHECK(argmax_channels(z) == argmax_channels(shifted));
}

TEST_CASE("area_downsample") {
    Tensor<float> c({4, 4}, 3.25f);
    auto cd = area_downsample(c, 2);
    for (int64_t i = 0; i < cd.numel(); ++i) CHECK(cd[i] == 3.25f);

    Tensor<float> m({2, 2});
    m.at(0, 0) = 0;
    m.at(0, 1) = 0;
    m.at(1, 0) = 4;
    m.at(1, 1) = 4;
    auto md = area_downsample(m, 2);
    CHECK(md.numel() == 1);
    CHECK(md[0] == 2.0f);

    CHECK(area_downsample(m, 1) == m);
    Tensor<float> odd({3, 3});
    CHECK_THROWS_AS(area_downsample(odd, 2), ArgumentError);
}

TEST_CASE("ppm/pgm round trips") {
    TempDir tmp;
    Rng rng(23);
    auto img = random_tensor<uint8_t>({3, 6, 10}, rng);
    write_ppm(img, tmp.file("i.ppm"));
    CHECK(read_ppm(tmp.file("i.ppm")) == img);

    auto gray = random_tensor<uint8_t>({5, 7}, rng);
    write_pgm(gray, tmp.file("g.pgm"));
    CHECK(read_pgm(tmp.file("g.pgm")) == gray);

    LabelMap lm(4, 3);
    lm.at(0, 0) = 2;
    lm.at(3, 2) = LabelMap::kIgnoreLabel;
    write_label_pgm(lm, tmp.file("l.pgm"));
    CHECK(read_label_pgm(tmp.file("l.pgm")) == lm);
}

TEST_CASE("tensor validates rank and extents") {
    CHECK_THROWS_AS(Tensor<float>(std::vector<int64_t>{}), ArgumentError);
    CHECK_THROWS_AS(Tensor<float>({1, 2, 3, 4, 5}), ArgumentError);
    CHECK_THROWS_AS(Tensor<float>({0, 2}), ArgumentError);
}
