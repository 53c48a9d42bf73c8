#pragma once

// Image-quality metrics: VOI SNR and bias, non-zero-voxel MAE, line profiles and FWHM.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "radinv/core.hpp"
#include "radinv/objective.hpp"

namespace radinv {

/// Disk-shaped volume of interest in pixel coordinates.
struct Voi {
    int row = 0, col = 0;
    double radius = 5.0;

    std::vector<std::size_t> pixels(const ImageGeometry& g) const {
        std::vector<std::size_t> out;
        const int r = static_cast<int>(std::ceil(radius));
        for (int dr = -r; dr <= r; ++dr)
            for (int dc = -r; dc <= r; ++dc) {
                if (dr * dr + dc * dc > radius * radius) continue;
                const int rr = row + dr, cc = col + dc;
                RADINV_CHECK(rr >= 0 && rr < g.height && cc >= 0 && cc < g.width && g.in_fov(rr, cc), GeometryError,
                             "VOI at (" + std::to_string(row) + "," + std::to_string(col) + ") leaves the FOV");
                out.push_back(static_cast<std::size_t>(rr) * g.width + cc);
            }
        return out;
    }

    bool inside(const ImageGeometry& g) const {
        try {
            pixels(g);
            return true;
        } catch (const GeometryError&) {
            return false;
        }
    }
};

namespace detail {

struct MeanSd {
    double mean = 0.0, sd = 0.0;
};

inline MeanSd voi_stats(const ImageGrid& img, const Voi& v) {
    const auto px = v.pixels(img.geometry);
    RADINV_CHECK(px.size() >= 2, DataError, "VOI needs at least two pixels");
    double s = 0.0;
    for (auto p : px) s += img.values[p];
    const double mean = s / static_cast<double>(px.size());
    double ss = 0.0;
    for (auto p : px) ss += (img.values[p] - mean) * (img.values[p] - mean);
    return {mean, std::sqrt(ss / static_cast<double>(px.size() - 1))};
}

inline void require_same(const ImageGrid& a, const ImageGrid& b) {
    RADINV_CHECK(a.geometry == b.geometry, GeometryError, "metric: image geometries differ");
}

}  // namespace detail

/// Mean / sample standard deviation of one VOI.
inline double voi_snr(const ImageGrid& img, const Voi& v) {
    const auto st = detail::voi_stats(img, v);
    RADINV_CHECK(st.sd > 0.0, NumericError, "VOI has zero standard deviation");
    return st.mean / st.sd;
}

/// Average VOI SNR. VOIs with zero spread are skipped and reported in `skipped`.
inline double snr_voi(const ImageGrid& img, const std::vector<Voi>& vois, std::vector<std::string>* skipped = nullptr) {
    RADINV_CHECK(!vois.empty(), ConfigError, "snr needs at least one VOI");
    double sum = 0.0;
    int n = 0;
    for (const auto& v : vois) {
        try {
            sum += voi_snr(img, v);
            ++n;
        } catch (const NumericError& e) {
            if (skipped) skipped->push_back(e.what());
        }
    }
    RADINV_CHECK(n > 0, NumericError, "snr undefined: every VOI has zero standard deviation");
    return sum / n;
}

/// Percent bias of VOI means relative to a reference, averaged over VOIs.
inline double bias_voi(const ImageGrid& test, const ImageGrid& ref, const std::vector<Voi>& vois) {
    detail::require_same(test, ref);
    RADINV_CHECK(!vois.empty(), ConfigError, "bias needs at least one VOI");
    double sum = 0.0;
    for (const auto& v : vois) {
        const double mr = detail::voi_stats(ref, v).mean;
        RADINV_CHECK(mr != 0.0, NumericError, "bias undefined: reference VOI mean is zero");
        sum += 100.0 * (detail::voi_stats(test, v).mean - mr) / mr;
    }
    return sum / static_cast<double>(vois.size());
}

/// Mean absolute difference over voxels where the reference is non-zero.
inline double mae_nonzero(const ImageGrid& test, const ImageGrid& ref) {
    detail::require_same(test, ref);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < ref.values.size(); ++i)
        if (ref.values[i] != 0.0) {
            s += std::abs(test.values[i] - ref.values[i]);
            ++n;
        }
    RADINV_CHECK(n > 0, DataError, "mae_nonzero: reference image is all zero");
    return s / static_cast<double>(n);
}

/// Picks `count` non-overlapping disks with the lowest local coefficient of
/// variation in the reference image, i.e. its most uniform regions.
inline std::vector<Voi> auto_place_vois(const ImageGrid& ref, int count = 3, double radius = 5.0) {
    const auto& g = ref.geometry;
    struct Candidate {
        double cv;
        Voi voi;
    };
    std::vector<Candidate> cands;
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c) {
            const Voi v{r, c, radius};
            if (!v.inside(g)) continue;
            const auto st = detail::voi_stats(ref, v);
            if (!(st.mean > 0.0)) continue;
            cands.push_back({st.sd / st.mean, v});
        }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.cv < b.cv; });
    std::vector<Voi> out;
    for (const auto& cand : cands) {
        if (static_cast<int>(out.size()) == count) break;
        bool clear = true;
        for (const auto& v : out)
            clear = clear && std::hypot(v.row - cand.voi.row, v.col - cand.voi.col) >= 2.0 * radius;
        if (clear) out.push_back(cand.voi);
    }
    RADINV_CHECK(static_cast<int>(out.size()) == count, DataError,
                 "could not place " + std::to_string(count) + " VOIs with positive mean");
    return out;
}

// ---------------------------------------------------------------------------
// Line profiles
// ---------------------------------------------------------------------------

/// A point in fractional pixel coordinates.
struct PixelPoint {
    double row = 0.0, col = 0.0;
};

struct LineProfile {
    /// Physical distance from the start point.
    std::vector<double> distance;
    std::vector<double> values;
};

inline double sample_bilinear(const ImageGrid& img, double row, double col) {
    const auto& g = img.geometry;
    const int r0 = std::clamp(static_cast<int>(std::floor(row)), 0, std::max(0, g.height - 2));
    const int c0 = std::clamp(static_cast<int>(std::floor(col)), 0, std::max(0, g.width - 2));
    const int r1 = std::min(r0 + 1, g.height - 1), c1 = std::min(c0 + 1, g.width - 1);
    const double fr = row - r0, fc = col - c0;
    return (1 - fr) * ((1 - fc) * img.at(r0, c0) + fc * img.at(r0, c1)) +
           fr * ((1 - fc) * img.at(r1, c0) + fc * img.at(r1, c1));
}

inline LineProfile line_profile(const ImageGrid& img, PixelPoint p0, PixelPoint p1, int samples) {
    const auto& g = img.geometry;
    RADINV_CHECK(samples >= 16, ConfigError, "line profile needs at least 16 samples");
    for (const auto& p : {p0, p1})
        RADINV_CHECK(p.row >= 0.0 && p.row <= g.height - 1 && p.col >= 0.0 && p.col <= g.width - 1, GeometryError,
                     "line profile segment leaves the image");
    LineProfile out;
    const double len = std::hypot(p1.row - p0.row, p1.col - p0.col) * g.pixel_size;
    for (int i = 0; i < samples; ++i) {
        const double t = static_cast<double>(i) / (samples - 1);
        out.distance.push_back(t * len);
        out.values.push_back(sample_bilinear(img, p0.row + t * (p1.row - p0.row), p0.col + t * (p1.col - p0.col)));
    }
    return out;
}

/// Full width at half maximum around the global peak, measured from the profile
/// minimum, with linearly interpolated crossings. Returned in distance units.
inline double fwhm(const LineProfile& p) {
    const auto& v = p.values;
    RADINV_CHECK(v.size() >= 2 && v.size() == p.distance.size(), DataError, "fwhm: malformed profile");
    const std::size_t peak = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    const double base = *std::min_element(v.begin(), v.end());
    RADINV_CHECK(v[peak] > base, NumericError, "fwhm undefined: flat profile");
    const double half = base + 0.5 * (v[peak] - base);
    auto at = [&](std::size_t i, std::size_t j) {
        const double t = (half - v[i]) / (v[j] - v[i]);
        return p.distance[i] + t * (p.distance[j] - p.distance[i]);
    };
    double left = std::numeric_limits<double>::quiet_NaN(), right = left;
    for (std::size_t i = peak; i > 0; --i)
        if (v[i - 1] <= half) {
            left = at(i - 1, i);
            break;
        }
    for (std::size_t i = peak; i + 1 < v.size(); ++i)
        if (v[i + 1] <= half) {
            right = at(i, i + 1);
            break;
        }
    RADINV_CHECK(std::isfinite(left) && std::isfinite(right), NumericError,
                 "fwhm undefined: profile does not fall to half maximum on both sides of the peak");
    return right - left;
}

struct ProfileFwhm {
    LineProfile profile;
    double fwhm = 0.0;
};

inline ProfileFwhm line_profile_fwhm(const ImageGrid& img, PixelPoint p0, PixelPoint p1, int samples) {
    ProfileFwhm out{line_profile(img, p0, p1, samples), 0.0};
    out.fwhm = fwhm(out.profile);
    return out;
}

inline void write_profile_csv(const std::filesystem::path& path, const LineProfile& p) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    RADINV_CHECK(f.good(), DataError, "cannot write " + path.string());
    f.precision(10);
    f << "distance,value\n";
    for (std::size_t i = 0; i < p.values.size(); ++i) f << p.distance[i] << ',' << p.values[i] << '\n';
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricReport {
    std::string volume;
    std::string method;
    double snr = std::numeric_limits<double>::quiet_NaN();
    double bias_percent = std::numeric_limits<double>::quiet_NaN();
    double mae_nonzero = std::numeric_limits<double>::quiet_NaN();
    double ms_ssim = std::numeric_limits<double>::quiet_NaN();
    double fwhm = std::numeric_limits<double>::quiet_NaN();
};

/// All metrics of `test` against `ref`. Undefined metrics are left as NaN.
inline MetricReport evaluate_volume(const std::string& volume, const std::string& method, const ImageGrid& test,
                                    const ImageGrid& ref, const std::vector<Voi>& vois, const LossConfig& loss,
                                    const std::pair<PixelPoint, PixelPoint>* profile = nullptr, int samples = 64) {
    MetricReport r{volume, method};
    try {
        r.snr = snr_voi(test, vois);
    } catch (const NumericError&) {
    }
    try {
        r.bias_percent = bias_voi(test, ref, vois);
    } catch (const NumericError&) {
    }
    r.mae_nonzero = mae_nonzero(test, ref);
    r.ms_ssim = 1.0 - ms_ssim_loss(test, ref, loss);
    if (profile) {
        try {
            r.fwhm = line_profile_fwhm(test, profile->first, profile->second, samples).fwhm;
        } catch (const NumericError&) {
        }
    }
    return r;
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricReport>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    RADINV_CHECK(f.good(), DataError, "cannot write " + path.string());
    f.precision(10);
    f << "volume,method,snr,bias_percent,mae_nonzero,ms_ssim,fwhm\n";
    for (const auto& r : rows)
        f << r.volume << ',' << r.method << ',' << r.snr << ',' << r.bias_percent << ',' << r.mae_nonzero << ','
          << r.ms_ssim << ',' << r.fwhm << '\n';
}

}  // namespace radinv
