#pragma once

// Geometry, grid containers, error types and seeding shared by every module.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace radinv {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or specification values.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Incompatible image/sinogram geometries or shapes.
class GeometryError : public Error {
public:
    using Error::Error;
};

/// Malformed or unreadable data files.
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, divergence, degenerate numerics.
class NumericError : public Error {
public:
    using Error::Error;
};

#define RADINV_CHECK(cond, ErrType, msg)                                       \
    do {                                                                       \
        if (!(cond)) throw ErrType(msg);                                       \
    } while (0)

inline constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and an item index.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(mix_seed(seed, stream));
}

/// Uniform double in [lo, hi) drawn from the raw 64-bit engine output so the
/// result does not depend on the standard library's distribution code.
inline double uniform(Rng& rng, double lo, double hi) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

struct PixelIndex {
    int row = 0;
    int col = 0;
    friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

/// Square image grid with a circular field of view centred on the grid.
struct ImageGeometry {
    int width = 64;
    int height = 64;
    double pixel_size = 1.0;
    double fov_radius = 32.0;

    static ImageGeometry square(int n, double pixel_size = 1.0) {
        return ImageGeometry{n, n, pixel_size, 0.5 * n * pixel_size};
    }

    void validate() const {
        RADINV_CHECK(width >= 1 && height >= 1, GeometryError, "image dimensions must be positive");
        RADINV_CHECK(width == height, GeometryError, "only square image grids are supported");
        RADINV_CHECK(pixel_size > 0.0, GeometryError, "pixel_size must be positive");
        RADINV_CHECK(fov_radius > 0.0 && fov_radius <= 0.5 * width * pixel_size + 1e-12,
                     GeometryError, "fov_radius must lie in (0, width/2 * pixel_size]");
    }

    std::size_t size() const { return static_cast<std::size_t>(width) * height; }

    /// Physical x of a pixel centre (x grows with column).
    double x_of(int col) const { return (col - 0.5 * (width - 1)) * pixel_size; }
    /// Physical y of a pixel centre (y grows upward, i.e. with decreasing row).
    double y_of(int row) const { return (0.5 * (height - 1) - row) * pixel_size; }

    bool in_fov(int row, int col) const {
        const double x = x_of(col);
        const double y = y_of(row);
        return x * x + y * y < fov_radius * fov_radius;
    }

    friend bool operator==(const ImageGeometry&, const ImageGeometry&) = default;
};

/// Parallel-beam sinogram layout: views uniformly spanning [0, pi), centred radial axis.
struct SinogramGeometry {
    int num_angles = 100;
    int num_bins = 64;
    double bin_spacing = 1.0;

    void validate() const {
        RADINV_CHECK(num_angles >= 1 && num_bins >= 1, GeometryError,
                     "sinogram needs at least one angle and one bin");
        RADINV_CHECK(bin_spacing > 0.0, GeometryError, "bin_spacing must be positive");
    }

    std::size_t size() const { return static_cast<std::size_t>(num_angles) * num_bins; }
    double angle(int i) const { return kPi * i / num_angles; }
    double offset(int j) const { return (j - 0.5 * (num_bins - 1)) * bin_spacing; }
    /// Fractional bin coordinate of a radial offset.
    double bin_of(double s) const { return s / bin_spacing + 0.5 * (num_bins - 1); }
    double radial_extent() const { return num_bins * bin_spacing; }

    friend bool operator==(const SinogramGeometry&, const SinogramGeometry&) = default;
};

/// Row-major pixels whose centre lies strictly inside the FOV circle.
inline std::vector<PixelIndex> fov_pixel_list(const ImageGeometry& geom) {
    geom.validate();
    std::vector<PixelIndex> out;
    for (int r = 0; r < geom.height; ++r)
        for (int c = 0; c < geom.width; ++c)
            if (geom.in_fov(r, c)) out.push_back({r, c});
    return out;
}

inline std::vector<std::uint8_t> fov_mask(const ImageGeometry& geom) {
    std::vector<std::uint8_t> m(geom.size(), 0);
    for (int r = 0; r < geom.height; ++r)
        for (int c = 0; c < geom.width; ++c)
            m[static_cast<std::size_t>(r) * geom.width + c] = geom.in_fov(r, c) ? 1 : 0;
    return m;
}

// ---------------------------------------------------------------------------
// Containers
// ---------------------------------------------------------------------------

struct ImageGrid {
    ImageGeometry geometry;
    std::vector<double> values;

    ImageGrid() = default;
    explicit ImageGrid(const ImageGeometry& g, double fill = 0.0)
        : geometry(g), values(g.size(), fill) {}
    ImageGrid(const ImageGeometry& g, std::vector<double> v) : geometry(g), values(std::move(v)) {
        RADINV_CHECK(values.size() == g.size(), GeometryError, "image value count does not match geometry");
    }

    double& at(int r, int c) { return values[static_cast<std::size_t>(r) * geometry.width + c]; }
    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * geometry.width + c]; }

    /// Zeroes every pixel outside the FOV.
    void clip_to_fov() {
        for (int r = 0; r < geometry.height; ++r)
            for (int c = 0; c < geometry.width; ++c)
                if (!geometry.in_fov(r, c)) at(r, c) = 0.0;
    }
};

struct Sinogram {
    SinogramGeometry geometry;
    std::vector<double> values;

    Sinogram() = default;
    explicit Sinogram(const SinogramGeometry& g, double fill = 0.0)
        : geometry(g), values(g.size(), fill) {}
    Sinogram(const SinogramGeometry& g, std::vector<double> v) : geometry(g), values(std::move(v)) {
        RADINV_CHECK(values.size() == g.size(), GeometryError, "sinogram value count does not match geometry");
    }

    double& at(int a, int b) { return values[static_cast<std::size_t>(a) * geometry.num_bins + b]; }
    double at(int a, int b) const { return values[static_cast<std::size_t>(a) * geometry.num_bins + b]; }

    double total() const {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
};

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    RADINV_CHECK(a.size() == b.size(), GeometryError, "dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace radinv
