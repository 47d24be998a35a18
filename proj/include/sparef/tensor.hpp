#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sparef/error.hpp"

namespace sparef {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Dtype : uint8_t { F32 = 0, F64 = 1, I32 = 2, U8 = 3 };

template <class T> struct DtypeOf;
template <> struct DtypeOf<float>    { static constexpr Dtype value = Dtype::F32; };
template <> struct DtypeOf<double>   { static constexpr Dtype value = Dtype::F64; };
template <> struct DtypeOf<int32_t>  { static constexpr Dtype value = Dtype::I32; };
template <> struct DtypeOf<uint8_t>  { static constexpr Dtype value = Dtype::U8; };

/// Row-major n-dimensional array, 1 to 4 dims. The workhorse carrier for
/// images, logits and feature maps.
template <class T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> dims, T fill = T{}) : dims_(std::move(dims)) {
        if (dims_.empty() || dims_.size() > 4)
            throw ArgumentError("tensor rank must be between 1 and 4, got " +
                                std::to_string(dims_.size()));
        int64_t n = 1;
        for (int64_t d : dims_) {
            if (d < 1) throw ArgumentError("tensor extents must be >= 1");
            n *= d;
        }
        data_.assign(size_t(n), fill);
    }

    int64_t ndim() const { return int64_t(dims_.size()); }
    const std::vector<int64_t>& dims() const { return dims_; }
    int64_t dim(int64_t i) const { return dims_[size_t(i)]; }
    int64_t numel() const { return int64_t(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t i) { return data_[size_t(i)]; }
    const T& operator[](int64_t i) const { return data_[size_t(i)]; }

    T& at(int64_t i, int64_t j) { return data_[size_t(i * dims_[1] + j)]; }
    const T& at(int64_t i, int64_t j) const { return data_[size_t(i * dims_[1] + j)]; }

    T& at(int64_t c, int64_t y, int64_t x) {
        return data_[size_t((c * dims_[1] + y) * dims_[2] + x)];
    }
    const T& at(int64_t c, int64_t y, int64_t x) const {
        return data_[size_t((c * dims_[1] + y) * dims_[2] + x)];
    }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    /// Flat view of the payload as a rows x cols row-major matrix.
    Eigen::Map<MatX<T>> as_matrix(int64_t rows, int64_t cols) {
        if (rows * cols != numel())
            throw ShapeError("matrix view does not cover the tensor payload");
        return Eigen::Map<MatX<T>>(data_.data(), rows, cols);
    }
    Eigen::Map<const MatX<T>> as_matrix(int64_t rows, int64_t cols) const {
        if (rows * cols != numel())
            throw ShapeError("matrix view does not cover the tensor payload");
        return Eigen::Map<const MatX<T>>(data_.data(), rows, cols);
    }

    bool operator==(const Tensor& o) const {
        return dims_ == o.dims_ && data_ == o.data_;
    }

private:
    std::vector<int64_t> dims_;
    std::vector<T> data_;
};

/// Per-pixel class ids in [0, C), or kIgnoreLabel for unlabeled pixels.
struct LabelMap {
    static constexpr uint8_t kIgnoreLabel = 255;

    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> labels;

    LabelMap() = default;
    LabelMap(int64_t h, int64_t w, uint8_t fill = 0)
        : height(h), width(w), labels(size_t(h * w), fill) {}

    uint8_t& at(int64_t y, int64_t x) { return labels[size_t(y * width + x)]; }
    uint8_t at(int64_t y, int64_t x) const { return labels[size_t(y * width + x)]; }

    bool operator==(const LabelMap& o) const = default;
};

// ---------------------------------------------------------------------------
// SRT1 on-disk tensor format:
//   magic "SRT1" | u8 dtype {0:f32,1:f64,2:i32,3:u8} | u8 ndim | 2 reserved |
//   ndim x u32 dims | raw row-major payload. All little-endian.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void append_tensor_bytes(const Tensor<T>& t, std::string& out) {
    out.append("SRT1", 4);
    out.push_back(char(uint8_t(DtypeOf<T>::value)));
    out.push_back(char(uint8_t(t.ndim())));
    out.push_back(0);
    out.push_back(0);
    for (int64_t i = 0; i < t.ndim(); ++i) {
        const uint32_t d = uint32_t(t.dim(i));
        out.append(reinterpret_cast<const char*>(&d), 4);
    }
    out.append(reinterpret_cast<const char*>(t.data()), size_t(t.numel()) * sizeof(T));
}

// Reads one record starting at `pos`; advances `pos` past it.
template <class T>
Tensor<T> parse_tensor_bytes(const std::string& buf, size_t& pos, const std::string& what) {
    const auto need = [&](size_t n) {
        if (pos + n > buf.size())
            throw FormatError(what + ": truncated payload");
        return buf.data() + pos;
    };
    if (std::memcmp(need(4), "SRT1", 4) != 0)
        throw FormatError(what + ": bad magic");
    pos += 4;
    const uint8_t dtype = uint8_t(*need(1));
    if (dtype > 3) throw FormatError(what + ": bad dtype code");
    if (Dtype(dtype) != DtypeOf<T>::value)
        throw FormatError(what + ": dtype mismatch, record has code " + std::to_string(dtype));
    pos += 1;
    const uint8_t ndim = uint8_t(*need(1));
    if (ndim < 1 || ndim > 4) throw FormatError(what + ": bad rank " + std::to_string(ndim));
    pos += 1;
    pos += 2;  // reserved
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) {
        uint32_t v;
        std::memcpy(&v, need(4), 4);
        if (v == 0) throw FormatError(what + ": zero extent");
        d = int64_t(v);
        pos += 4;
    }
    Tensor<T> t(dims);
    const size_t payload = size_t(t.numel()) * sizeof(T);
    std::memcpy(t.data(), need(payload), payload);
    pos += payload;
    return t;
}

inline std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

inline void dump_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

}  // namespace detail

template <class T>
void tensor_write(const Tensor<T>& t, const std::string& path) {
    std::string bytes;
    bytes.reserve(8 + size_t(t.ndim()) * 4 + size_t(t.numel()) * sizeof(T));
    detail::append_tensor_bytes(t, bytes);
    detail::dump_file(path, bytes);
}

template <class T>
Tensor<T> tensor_read(const std::string& path) {
    const std::string buf = detail::slurp_file(path);
    size_t pos = 0;
    Tensor<T> t = detail::parse_tensor_bytes<T>(buf, pos, path);
    if (pos != buf.size()) throw FormatError(path + ": trailing bytes after payload");
    return t;
}

inline Dtype tensor_peek_dtype(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char hdr[5];
    if (!in.read(hdr, 5)) throw FormatError(path + ": truncated payload");
    if (std::memcmp(hdr, "SRT1", 4) != 0) throw FormatError(path + ": bad magic");
    if (uint8_t(hdr[4]) > 3) throw FormatError(path + ": bad dtype code");
    return Dtype(uint8_t(hdr[4]));
}

}  // namespace sparef
