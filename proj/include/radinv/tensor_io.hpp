#pragma once

// "DPT1" tensor files: 4-byte magic, 1-byte rank, little-endian uint32 dims,
// then row-major little-endian float32 payload.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "radinv/core.hpp"

namespace radinv {

class TensorIoError : public DataError {
public:
    enum class Kind { BadMagic, ShapeMismatch, Io };

    TensorIoError(Kind kind, const std::string& msg) : DataError(msg), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<float> values;

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline constexpr std::array<char, 4> kTensorMagic{'D', 'P', 'T', '1'};

inline std::string encode_tensor(std::span<const std::uint32_t> dims, std::span<const float> values) {
    if (dims.size() > 255) throw TensorIoError(TensorIoError::Kind::ShapeMismatch, "tensor rank exceeds 255");
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    if (n != values.size())
        throw TensorIoError(TensorIoError::Kind::ShapeMismatch,
                            "tensor dims describe " + std::to_string(n) + " values but " +
                                std::to_string(values.size()) + " were supplied");
    for (float v : values)
        if (!std::isfinite(v)) throw NumericError("refusing to write non-finite tensor value");

    std::string out;
    out.reserve(5 + 4 * dims.size() + 4 * values.size());
    out.append(kTensorMagic.data(), 4);
    out.push_back(static_cast<char>(dims.size()));
    for (auto d : dims) detail::put_u32(out, d);
    for (float v : values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

inline Tensor decode_tensor(std::span<const unsigned char> bytes) {
    if (bytes.size() < 5 || std::memcmp(bytes.data(), kTensorMagic.data(), 4) != 0)
        throw TensorIoError(TensorIoError::Kind::BadMagic, "not a DPT1 tensor (bad magic)");
    const std::size_t ndim = bytes[4];
    if (bytes.size() < 5 + 4 * ndim)
        throw TensorIoError(TensorIoError::Kind::ShapeMismatch, "tensor header truncated");
    Tensor t;
    std::size_t n = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        t.dims.push_back(detail::get_u32(bytes.data() + 5 + 4 * i));
        n *= t.dims.back();
    }
    const std::size_t payload = bytes.size() - 5 - 4 * ndim;
    if (payload != 4 * n)
        throw TensorIoError(TensorIoError::Kind::ShapeMismatch,
                            "tensor payload has " + std::to_string(payload) + " bytes, dims require " +
                                std::to_string(4 * n));
    t.values.resize(n);
    const unsigned char* p = bytes.data() + 5 + 4 * ndim;
    for (std::size_t i = 0; i < n; ++i) t.values[i] = std::bit_cast<float>(detail::get_u32(p + 4 * i));
    return t;
}

inline void write_tensor(const std::filesystem::path& path, std::span<const std::uint32_t> dims,
                         std::span<const float> values) {
    const std::string bytes = encode_tensor(dims, values);
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw TensorIoError(TensorIoError::Kind::Io, "cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw TensorIoError(TensorIoError::Kind::Io, "write failed: " + path.string());
}

inline void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    write_tensor(path, t.dims, t.values);
}

inline Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw TensorIoError(TensorIoError::Kind::Io, "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw TensorIoError(TensorIoError::Kind::Io, "read failed: " + path.string());
    return decode_tensor(bytes);
}

// Conversions between in-memory grids (64-bit) and persisted tensors (32-bit).

inline std::vector<float> to_float(std::span<const double> v) {
    return std::vector<float>(v.begin(), v.end());
}

inline std::vector<double> to_double(std::span<const float> v) {
    return std::vector<double>(v.begin(), v.end());
}

/// Stacks equally-shaped images into a [n, height, width] tensor.
inline Tensor stack_images(std::span<const ImageGrid> images) {
    RADINV_CHECK(!images.empty(), DataError, "cannot stack zero images");
    const auto& g = images.front().geometry;
    Tensor t;
    t.dims = {static_cast<std::uint32_t>(images.size()), static_cast<std::uint32_t>(g.height),
              static_cast<std::uint32_t>(g.width)};
    t.values.reserve(images.size() * g.size());
    for (const auto& im : images) {
        RADINV_CHECK(im.geometry == g, GeometryError, "stacked images must share a geometry");
        t.values.insert(t.values.end(), im.values.begin(), im.values.end());
    }
    return t;
}

inline Tensor stack_sinograms(std::span<const Sinogram> sinos) {
    RADINV_CHECK(!sinos.empty(), DataError, "cannot stack zero sinograms");
    const auto& g = sinos.front().geometry;
    Tensor t;
    t.dims = {static_cast<std::uint32_t>(sinos.size()), static_cast<std::uint32_t>(g.num_angles),
              static_cast<std::uint32_t>(g.num_bins)};
    t.values.reserve(sinos.size() * g.size());
    for (const auto& s : sinos) {
        RADINV_CHECK(s.geometry == g, GeometryError, "stacked sinograms must share a geometry");
        t.values.insert(t.values.end(), s.values.begin(), s.values.end());
    }
    return t;
}

/// Splits a [n, h, w] (or [h, w]) tensor into images with the given geometry.
inline std::vector<ImageGrid> unstack_images(const Tensor& t, const ImageGeometry& g) {
    std::size_t n = 0;
    if (t.dims.size() == 2) n = 1;
    else if (t.dims.size() == 3) n = t.dims[0];
    else throw GeometryError("image tensor must be rank 2 or 3");
    RADINV_CHECK(t.dims[t.dims.size() - 2] == static_cast<std::uint32_t>(g.height) &&
                     t.dims.back() == static_cast<std::uint32_t>(g.width),
                 GeometryError, "image tensor shape does not match image geometry");
    std::vector<ImageGrid> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::span<const float> slice(t.values.data() + i * g.size(), g.size());
        out.emplace_back(g, to_double(slice));
    }
    return out;
}

inline std::vector<Sinogram> unstack_sinograms(const Tensor& t, const SinogramGeometry& g) {
    std::size_t n = 0;
    if (t.dims.size() == 2) n = 1;
    else if (t.dims.size() == 3) n = t.dims[0];
    else throw GeometryError("sinogram tensor must be rank 2 or 3");
    RADINV_CHECK(t.dims[t.dims.size() - 2] == static_cast<std::uint32_t>(g.num_angles) &&
                     t.dims.back() == static_cast<std::uint32_t>(g.num_bins),
                 GeometryError, "sinogram tensor shape does not match sinogram geometry");
    std::vector<Sinogram> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::span<const float> slice(t.values.data() + i * g.size(), g.size());
        out.emplace_back(g, to_double(slice));
    }
    return out;
}

}  // namespace radinv
