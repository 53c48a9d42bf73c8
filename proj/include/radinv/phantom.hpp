#pragma once

// Randomised ellipse phantoms and counting-noise realisations.

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

#include "radinv/config.hpp"
#include "radinv/core.hpp"

namespace radinv {

/// Ranges from which a phantom's ellipses are drawn. Axes are semi-axes in pixels.
struct PhantomSpec {
    int num_ellipses_min = 3;
    int num_ellipses_max = 8;
    double intensity_min = 0.2;
    double intensity_max = 1.0;
    double axis_min = 2.0;
    double axis_max = 10.0;
    /// Fraction of the admissible radius over which ellipse centres may wander.
    double center_jitter = 1.0;
    double rotation_min = 0.0;
    double rotation_max = kPi;
    /// Background disk intensity range; both zero disables the disk.
    double background_min = 0.5;
    double background_max = 1.0;
    /// Background disk radius range as a fraction of the FOV radius.
    double background_radius_min = 0.75;
    double background_radius_max = 0.95;

    bool has_background() const { return background_max > 0.0; }

    void validate(const ImageGeometry& g) const {
        RADINV_CHECK(num_ellipses_min >= 0 && num_ellipses_max >= num_ellipses_min, ConfigError,
                     "phantom: invalid ellipse count range");
        RADINV_CHECK(intensity_min >= 0.0 && intensity_max >= intensity_min, ConfigError,
                     "phantom: intensities must be a non-negative range");
        RADINV_CHECK(axis_min > 0.0 && axis_max >= axis_min, ConfigError, "phantom: invalid axis range");
        RADINV_CHECK(center_jitter >= 0.0 && center_jitter <= 1.0, ConfigError,
                     "phantom: center_jitter must lie in [0, 1]");
        RADINV_CHECK(rotation_max >= rotation_min, ConfigError, "phantom: invalid rotation range");
        RADINV_CHECK(background_min >= 0.0 && background_max >= background_min, ConfigError,
                     "phantom: invalid background intensity range");
        RADINV_CHECK(background_radius_min > 0.0 && background_radius_max >= background_radius_min &&
                         background_radius_max <= 1.0,
                     ConfigError, "phantom: background radius fractions must lie in (0, 1]");
        if (num_ellipses_max > 0)
            RADINV_CHECK(axis_max * g.pixel_size < g.fov_radius, ConfigError,
                         "phantom: ellipses with the maximum axis cannot fit inside the FOV");
    }

    static PhantomSpec from_config(const KeyValues& kv, const std::string& prefix = "phantom.") {
        PhantomSpec s;
        kv.get(prefix + "num_ellipses_min", s.num_ellipses_min);
        kv.get(prefix + "num_ellipses_max", s.num_ellipses_max);
        kv.get(prefix + "intensity_min", s.intensity_min);
        kv.get(prefix + "intensity_max", s.intensity_max);
        kv.get(prefix + "axis_min", s.axis_min);
        kv.get(prefix + "axis_max", s.axis_max);
        kv.get(prefix + "center_jitter", s.center_jitter);
        kv.get(prefix + "rotation_min", s.rotation_min);
        kv.get(prefix + "rotation_max", s.rotation_max);
        kv.get(prefix + "background_min", s.background_min);
        kv.get(prefix + "background_max", s.background_max);
        kv.get(prefix + "background_radius_min", s.background_radius_min);
        kv.get(prefix + "background_radius_max", s.background_radius_max);
        return s;
    }
};

struct Ellipse {
    double cx = 0.0, cy = 0.0;  // physical centre
    double a = 1.0, b = 1.0;    // physical semi-axes
    double rotation = 0.0;
    double intensity = 1.0;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(rotation), s = std::sin(rotation);
        const double u = (dx * c + dy * s) / a;
        const double v = (-dx * s + dy * c) / b;
        return u * u + v * v <= 1.0;
    }
};

/// Adds each ellipse's intensity to the pixels whose centres it contains; zero outside the FOV.
inline ImageGrid rasterize(const ImageGeometry& g, std::span<const Ellipse> ellipses) {
    ImageGrid img(g);
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) {
            if (!g.in_fov(r, c)) continue;
            const double x = g.x_of(c), y = g.y_of(r);
            double v = 0.0;
            for (const auto& e : ellipses)
                if (e.contains(x, y)) v += e.intensity;
            img.at(r, c) = v;
        }
    return img;
}

inline std::vector<Ellipse> sample_ellipses(const PhantomSpec& spec, const ImageGeometry& g, std::uint64_t seed) {
    spec.validate(g);
    Rng rng = make_rng(seed, 0x5048414E);  // "PHAN"
    std::vector<Ellipse> out;
    if (spec.has_background()) {
        Ellipse bg;
        const double frac = uniform(rng, spec.background_radius_min, spec.background_radius_max);
        bg.a = bg.b = frac * g.fov_radius;
        bg.intensity = uniform(rng, spec.background_min, spec.background_max);
        out.push_back(bg);
    }
    const int span = spec.num_ellipses_max - spec.num_ellipses_min + 1;
    const int n = spec.num_ellipses_min + static_cast<int>(rng() % static_cast<std::uint64_t>(span));
    for (int i = 0; i < n; ++i) {
        Ellipse e;
        e.a = uniform(rng, spec.axis_min, spec.axis_max) * g.pixel_size;
        e.b = uniform(rng, spec.axis_min, spec.axis_max) * g.pixel_size;
        e.rotation = uniform(rng, spec.rotation_min, spec.rotation_max);
        e.intensity = uniform(rng, spec.intensity_min, spec.intensity_max);
        // Keep the ellipse's bounding circle inside the FOV.
        const double reach = std::max(0.0, g.fov_radius - std::max(e.a, e.b) - 0.5 * g.pixel_size);
        const double rad = spec.center_jitter * reach * std::sqrt(uniform(rng, 0.0, 1.0));
        const double phi = uniform(rng, 0.0, 2.0 * kPi);
        e.cx = rad * std::cos(phi);
        e.cy = rad * std::sin(phi);
        out.push_back(e);
    }
    return out;
}

/// Single-disk phantoms whose centres are stratified over the FOV: the disk is
/// cut into at most `count` square cells and phantom i sits within `jitter`
/// cell widths of the centre of cell i mod cells. Every FOV pixel is then
/// covered by some phantom, which lets a dense layer learn a localized map for
/// every pixel.
inline std::vector<ImageGrid> stratified_blob_phantoms(const ImageGeometry& g, int count, double radius_min,
                                                       double radius_max, std::uint64_t seed,
                                                       double jitter = 0.25) {
    g.validate();
    RADINV_CHECK(count >= 1, ConfigError, "blob phantoms: count must be >= 1");
    RADINV_CHECK(radius_min > 0.0 && radius_max >= radius_min, ConfigError, "blob phantoms: invalid radius range");
    RADINV_CHECK(jitter >= 0.0 && jitter <= 0.5, ConfigError, "blob phantoms: jitter must lie in [0, 0.5]");
    const double R = g.fov_radius;
    double cell = std::sqrt(kPi * R * R / count);
    std::vector<std::pair<double, double>> centres;
    for (;; cell *= 1.01) {
        centres.clear();
        const int m = static_cast<int>(std::ceil(R / cell)) + 1;
        for (int i = -m; i < m; ++i)
            for (int j = -m; j < m; ++j) {
                const double cx = (i + 0.5) * cell, cy = (j + 0.5) * cell;
                if (std::hypot(cx, cy) < R + 0.5 * cell) centres.emplace_back(cx, cy);
            }
        if (static_cast<int>(centres.size()) <= count) break;
    }
    if (centres.empty()) centres.emplace_back(0.0, 0.0);
    std::vector<ImageGrid> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
        const auto [cx, cy] = centres[static_cast<std::size_t>(i) % centres.size()];
        Ellipse e;
        e.a = e.b = uniform(rng, radius_min, radius_max) * g.pixel_size;
        e.cx = cx + uniform(rng, -jitter, jitter) * cell;
        e.cy = cy + uniform(rng, -jitter, jitter) * cell;
        e.intensity = uniform(rng, 0.2, 1.0);
        out.push_back(rasterize(g, std::span<const Ellipse>(&e, 1)));
    }
    return out;
}

inline ImageGrid generate_phantom(const PhantomSpec& spec, const ImageGeometry& g, std::uint64_t seed) {
    return rasterize(g, sample_ellipses(spec, g, seed));
}

namespace detail {

inline void require_counts(const Sinogram& s) {
    for (double v : s.values)
        RADINV_CHECK(v >= 0.0 && v == std::floor(v) && std::isfinite(v), DataError,
                     "count thinning requires a non-negative integer-valued sinogram");
}

}  // namespace detail

/// Independent Poisson draws with means scaled so the expected total equals mean_total_counts.
inline Sinogram apply_poisson(const Sinogram& s, double mean_total_counts, std::uint64_t seed) {
    RADINV_CHECK(mean_total_counts > 0.0 && std::isfinite(mean_total_counts), ConfigError,
                 "mean_total_counts must be positive");
    for (double v : s.values) RADINV_CHECK(v >= 0.0 && std::isfinite(v), DataError, "Poisson input must be >= 0");
    const double total = s.total();
    RADINV_CHECK(total > 0.0, NumericError, "cannot scale an all-zero sinogram to a count total");
    const double scale = mean_total_counts / total;
    Rng rng = make_rng(seed, 0x504F4953);  // "POIS"
    Sinogram out(s.geometry);
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        const double mean = s.values[i] * scale;
        if (mean <= 0.0) continue;
        std::poisson_distribution<long long> d(mean);
        out.values[i] = static_cast<double>(d(rng));
    }
    return out;
}

/// Binomial split of every count: each survives with probability `fraction`.
/// Returns (kept, removed); kept + removed reproduces the input exactly.
inline std::pair<Sinogram, Sinogram> split_counts(const Sinogram& s, double fraction, std::uint64_t seed) {
    RADINV_CHECK(fraction > 0.0 && fraction <= 1.0, ConfigError, "thinning fraction must lie in (0, 1]");
    detail::require_counts(s);
    Sinogram kept(s.geometry), removed(s.geometry);
    if (fraction == 1.0) return {s, removed};
    Rng rng = make_rng(seed, 0x5448494E);  // "THIN"
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        const auto n = static_cast<long long>(s.values[i]);
        if (n == 0) continue;
        std::binomial_distribution<long long> d(n, fraction);
        const long long k = d(rng);
        kept.values[i] = static_cast<double>(k);
        removed.values[i] = static_cast<double>(n - k);
    }
    return {kept, removed};
}

inline Sinogram thin_counts(const Sinogram& s, double fraction, std::uint64_t seed) {
    return split_counts(s, fraction, seed).first;
}

}  // namespace radinv
