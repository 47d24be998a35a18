#pragma once

#include <array>
#include <filesystem>

#include "json.hpp"

#include "sparef/image_io.hpp"
#include "sparef/rng.hpp"
#include "sparef/tensor.hpp"

namespace sparef {

using Json = nlohmann::ordered_json;

/// Synthetic thin-structures dataset. Scenes are colored blobs plus thin
/// lines (1-2 px) and small squares whose colors are chosen so that their
/// 2x downsampled blend with the background lands exactly on another class's
/// color: the low-resolution model cannot resolve them, the full-resolution
/// refiner can.
struct SynthSpec {
    int64_t height = 128, width = 256;
    int64_t num_classes = 6;
    int64_t blobs_min = 3, blobs_max = 6;
    int64_t blob_radius_min = 6, blob_radius_max = 16;
    int64_t lines_min = 3, lines_max = 6;
    int64_t line_thickness_min = 1, line_thickness_max = 2;
    int64_t squares_min = 3, squares_max = 6;
    int64_t square_size_min = 2, square_size_max = 3;
    double noise_std = 25.0;
    uint64_t seed = 1234;
    int64_t train_count = 200, val_count = 50;

    void validate() const {
        if (height < 8 || width < 8) throw ConfigError("synth dims too small");
        if (height % 2 || width % 2) throw ConfigError("synth dims must be even");
        if (num_classes != 6) throw ConfigError("the synthetic palette is built for 6 classes");
        if (blobs_min < 0 || blobs_max < blobs_min || lines_min < 0 || lines_max < lines_min ||
            squares_min < 0 || squares_max < squares_min)
            throw ConfigError("shape count ranges must be non-degenerate");
        if (train_count < 1 || val_count < 1) throw ConfigError("split counts must be >= 1");
    }
};

struct SynthSample {
    Tensor<uint8_t> image;  // 3xHxW
    LabelMap labels;
};

namespace synth_detail {

// class 0 is background; classes 2 and 4 sit exactly on the 50% blend of
// classes 1 and 3 with the background, which is what a 1-px structure
// becomes under 2x area downsampling.
inline std::array<std::array<int, 3>, 6> palette() {
    const std::array<int, 3> bg{45, 45, 45};
    const std::array<int, 3> red{215, 75, 75};
    const std::array<int, 3> blue{75, 75, 215};
    auto blend = [&](const std::array<int, 3>& a) {
        return std::array<int, 3>{(a[0] + bg[0]) / 2, (a[1] + bg[1]) / 2, (a[2] + bg[2]) / 2};
    };
    return {bg, red, blend(red), blue, blend(blue), std::array<int, 3>{75, 205, 75}};
}

inline void fill_ellipse(LabelMap& lm, int64_t cy, int64_t cx, int64_t ry, int64_t rx,
                         uint8_t cls) {
    for (int64_t y = std::max<int64_t>(0, cy - ry); y <= std::min(lm.height - 1, cy + ry); ++y)
        for (int64_t x = std::max<int64_t>(0, cx - rx); x <= std::min(lm.width - 1, cx + rx);
             ++x) {
            const double dy = double(y - cy) / double(ry);
            const double dx = double(x - cx) / double(rx);
            if (dy * dy + dx * dx <= 1.0) lm.at(y, x) = cls;
        }
}

inline void draw_line(LabelMap& lm, Rng& rng, int64_t thickness, uint8_t cls) {
    const int dirs[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
    const int* d = dirs[rng.uniform_index(4)];
    const int64_t span = std::min(lm.height, lm.width);
    const int64_t len = rng.uniform_int(span / 3, (4 * span) / 5);
    int64_t y = rng.uniform_int(0, lm.height - 1);
    int64_t x = rng.uniform_int(0, lm.width - 1);
    for (int64_t i = 0; i < len; ++i) {
        for (int64_t t = 0; t < thickness; ++t) {
            // widen perpendicular to the dominant direction
            const int64_t yy = d[0] == 0 ? y + t : y;
            const int64_t xx = d[0] == 0 ? x : x + t;
            if (yy >= 0 && yy < lm.height && xx >= 0 && xx < lm.width) lm.at(yy, xx) = cls;
        }
        y += d[0];
        x += d[1];
        if (y < 0 || y >= lm.height || x < 0 || x >= lm.width) break;
    }
}

}  // namespace synth_detail

/// Deterministic per (spec.seed, index); thin structures are drawn last so
/// nothing occludes them.
inline SynthSample synth_image(const SynthSpec& spec, uint64_t index) {
    spec.validate();
    uint64_t mix = spec.seed;
    Rng rng(splitmix64(mix) ^ (index * 0x9E3779B97F4A7C15ull));

    SynthSample s;
    s.labels = LabelMap(spec.height, spec.width, 0);

    const int64_t blobs = rng.uniform_int(spec.blobs_min, spec.blobs_max);
    for (int64_t i = 0; i < blobs; ++i) {
        const uint8_t cls = uint8_t(rng.uniform_int(1, spec.num_classes - 1));
        synth_detail::fill_ellipse(s.labels, rng.uniform_int(0, spec.height - 1),
                                   rng.uniform_int(0, spec.width - 1),
                                   rng.uniform_int(spec.blob_radius_min, spec.blob_radius_max),
                                   rng.uniform_int(spec.blob_radius_min, spec.blob_radius_max),
                                   cls);
    }
    const int64_t lines = rng.uniform_int(spec.lines_min, spec.lines_max);
    for (int64_t i = 0; i < lines; ++i) {
        const uint8_t cls = rng.uniform() < 0.5 ? 1 : 3;  // bright thin-structure classes
        synth_detail::draw_line(
            s.labels, rng, rng.uniform_int(spec.line_thickness_min, spec.line_thickness_max),
            cls);
    }
    const int64_t squares = rng.uniform_int(spec.squares_min, spec.squares_max);
    for (int64_t i = 0; i < squares; ++i) {
        const uint8_t cls = rng.uniform() < 0.5 ? 1 : 3;
        const int64_t sz = rng.uniform_int(spec.square_size_min, spec.square_size_max);
        const int64_t y0 = rng.uniform_int(0, spec.height - sz);
        const int64_t x0 = rng.uniform_int(0, spec.width - sz);
        for (int64_t y = y0; y < y0 + sz; ++y)
            for (int64_t x = x0; x < x0 + sz; ++x) s.labels.at(y, x) = cls;
    }

    const auto pal = synth_detail::palette();
    s.image = Tensor<uint8_t>({3, spec.height, spec.width});
    for (int64_t y = 0; y < spec.height; ++y)
        for (int64_t x = 0; x < spec.width; ++x) {
            const auto& color = pal[s.labels.at(y, x)];
            for (int64_t c = 0; c < 3; ++c) {
                const double v = double(color[size_t(c)]) + rng.normal() * spec.noise_std;
                s.image.at(c, y, x) = uint8_t(std::clamp(v, 0.0, 255.0));
            }
        }
    return s;
}

inline Json synth_spec_to_json(const SynthSpec& s) {
    return Json{{"height", s.height},
                {"width", s.width},
                {"num_classes", s.num_classes},
                {"blobs_min", s.blobs_min},
                {"blobs_max", s.blobs_max},
                {"blob_radius_min", s.blob_radius_min},
                {"blob_radius_max", s.blob_radius_max},
                {"lines_min", s.lines_min},
                {"lines_max", s.lines_max},
                {"line_thickness_min", s.line_thickness_min},
                {"line_thickness_max", s.line_thickness_max},
                {"squares_min", s.squares_min},
                {"squares_max", s.squares_max},
                {"square_size_min", s.square_size_min},
                {"square_size_max", s.square_size_max},
                {"noise_std", s.noise_std},
                {"seed", s.seed},
                {"train_count", s.train_count},
                {"val_count", s.val_count}};
}

inline SynthSpec synth_spec_from_json(const Json& j) {
    SynthSpec s;
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.blobs_min = j.value("blobs_min", s.blobs_min);
    s.blobs_max = j.value("blobs_max", s.blobs_max);
    s.blob_radius_min = j.value("blob_radius_min", s.blob_radius_min);
    s.blob_radius_max = j.value("blob_radius_max", s.blob_radius_max);
    s.lines_min = j.value("lines_min", s.lines_min);
    s.lines_max = j.value("lines_max", s.lines_max);
    s.line_thickness_min = j.value("line_thickness_min", s.line_thickness_min);
    s.line_thickness_max = j.value("line_thickness_max", s.line_thickness_max);
    s.squares_min = j.value("squares_min", s.squares_min);
    s.squares_max = j.value("squares_max", s.squares_max);
    s.square_size_min = j.value("square_size_min", s.square_size_min);
    s.square_size_max = j.value("square_size_max", s.square_size_max);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.seed = j.value("seed", s.seed);
    s.train_count = j.value("train_count", s.train_count);
    s.val_count = j.value("val_count", s.val_count);
    s.validate();
    return s;
}

/// Writes out_dir/{train,val}/img_NNNN.ppm + lbl_NNNN.pgm and dataset.json.
inline void synth_generate(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "train");
    fs::create_directories(fs::path(out_dir) / "val");
    auto emit = [&](const std::string& split, int64_t count, uint64_t base) {
        for (int64_t i = 0; i < count; ++i) {
            SynthSample s = synth_image(spec, base + uint64_t(i));
            char name[32];
            std::snprintf(name, sizeof(name), "img_%04d.ppm", int(i));
            write_ppm(s.image, (fs::path(out_dir) / split / name).string());
            std::snprintf(name, sizeof(name), "lbl_%04d.pgm", int(i));
            write_label_pgm(s.labels, (fs::path(out_dir) / split / name).string());
        }
    };
    emit("train", spec.train_count, 0);
    emit("val", spec.val_count, uint64_t(spec.train_count));
    std::ofstream meta((fs::path(out_dir) / "dataset.json").string(), std::ios::trunc);
    meta << synth_spec_to_json(spec).dump(2) << "\n";
}

}  // namespace sparef
