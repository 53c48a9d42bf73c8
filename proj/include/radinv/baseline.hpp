#pragma once

// Classical reconstructions: OSEM/MLEM and filtered back-projection.

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "radinv/config.hpp"
#include "radinv/core.hpp"
#include "radinv/imageops.hpp"
#include "radinv/projector.hpp"

namespace radinv {

struct EmConfig {
    int iterations = 8;
    int subsets = 4;
    /// Gaussian post-filter width in pixels; 0 disables.
    double post_filter_sigma = 1.0;
    double initial_value = 1.0;

    void validate(const SinogramGeometry& sg) const {
        RADINV_CHECK(iterations >= 0, ConfigError, "em: iterations must be >= 0");
        RADINV_CHECK(subsets >= 1 && subsets <= sg.num_angles, ConfigError,
                     "em: subsets must lie in [1, num_angles]");
        RADINV_CHECK(post_filter_sigma >= 0.0, ConfigError, "em: post_filter_sigma must be >= 0");
        RADINV_CHECK(initial_value > 0.0, ConfigError, "em: initial value must be positive");
    }

    /// Moderately smoothed training targets at desk scale.
    static EmConfig target_recipe() { return EmConfig{8, 4, 1.0, 1.0}; }

    static EmConfig from_config(const KeyValues& kv, const std::string& prefix = "osem.") {
        EmConfig c = target_recipe();
        kv.get(prefix + "iterations", c.iterations);
        kv.get(prefix + "subsets", c.subsets);
        kv.get(prefix + "post_filter_sigma", c.post_filter_sigma);
        return c;
    }
};

/// Angle-interleaved subsets: subset m holds views m, m + M, m + 2M, ...
inline std::vector<std::vector<int>> angle_subsets(int num_angles, int subsets) {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(subsets));
    for (int a = 0; a < num_angles; ++a) out[static_cast<std::size_t>(a % subsets)].push_back(a);
    return out;
}

/// Poisson log-likelihood sum(y log(Ax) - Ax), skipping bins with Ax = 0 and y = 0.
inline double poisson_log_likelihood(const Sinogram& measured, const Sinogram& expected) {
    double ll = 0.0;
    for (std::size_t i = 0; i < measured.values.size(); ++i) {
        const double m = expected.values[i];
        const double y = measured.values[i];
        if (m > 0.0) ll += y * std::log(m) - m;
        else if (y > 0.0) return -std::numeric_limits<double>::infinity();
    }
    return ll;
}

inline ImageGrid gaussian_post_filter(const ImageGrid& img, double sigma) {
    if (sigma <= 0.0) return img;
    auto v = gaussian_blur(img.values, img.geometry.height, img.geometry.width, sigma, Boundary::Zero);
    ImageGrid out(img.geometry, std::move(v));
    out.clip_to_fov();
    return out;
}

/// Ordered-subsets EM with per-subset sensitivity images computed once.
class OsemReconstructor {
public:
    OsemReconstructor(const ImageGeometry& ig, const SinogramGeometry& sg, EmConfig cfg,
                      ProjectorConfig pcfg = {})
        : proj_(ig, sg, pcfg), cfg_(cfg), fov_(fov_mask(ig)) {
        cfg_.validate(sg);
        subsets_ = angle_subsets(sg.num_angles, cfg_.subsets);
        Sinogram ones(sg, 1.0);
        for (const auto& sub : subsets_) sens_.push_back(proj_.back(ones, sub));
    }

    const Projector& projector() const { return proj_; }
    const EmConfig& config() const { return cfg_; }

    ImageGrid initial_image() const {
        ImageGrid x(proj_.image_geometry());
        for (std::size_t i = 0; i < x.values.size(); ++i) x.values[i] = fov_[i] ? cfg_.initial_value : 0.0;
        return x;
    }

    /// One multiplicative update using subset m.
    void subiterate(ImageGrid& x, const Sinogram& y, std::size_t m) const {
        const auto& sub = subsets_[m];
        const Sinogram est = proj_.forward(x, sub);
        Sinogram ratio(y.geometry);
        for (int a : sub)
            for (int b = 0; b < y.geometry.num_bins; ++b) {
                const double e = est.at(a, b);
                ratio.at(a, b) = e > 0.0 ? y.at(a, b) / e : 0.0;
            }
        const ImageGrid corr = proj_.back(ratio, sub);
        const auto& s = sens_[m];
        for (std::size_t i = 0; i < x.values.size(); ++i) {
            if (!fov_[i] || s.values[i] <= 0.0) {
                x.values[i] = 0.0;
                continue;
            }
            x.values[i] *= corr.values[i] / s.values[i];
        }
    }

    /// One full pass over all subsets in order.
    void iterate(ImageGrid& x, const Sinogram& y) const {
        for (std::size_t m = 0; m < subsets_.size(); ++m) subiterate(x, y, m);
    }

    /// Iterations without the post-filter.
    ImageGrid reconstruct_unfiltered(const Sinogram& y) const {
        check_input(y);
        ImageGrid x = initial_image();
        for (int it = 0; it < cfg_.iterations; ++it) iterate(x, y);
        return x;
    }

    ImageGrid reconstruct(const Sinogram& y) const {
        return gaussian_post_filter(reconstruct_unfiltered(y), cfg_.post_filter_sigma);
    }

private:
    void check_input(const Sinogram& y) const {
        RADINV_CHECK(y.geometry == proj_.sinogram_geometry(), GeometryError, "osem: sinogram geometry mismatch");
        for (double v : y.values) RADINV_CHECK(v >= 0.0 && std::isfinite(v), DataError, "osem: sinogram must be >= 0");
    }

    Projector proj_;
    EmConfig cfg_;
    std::vector<std::uint8_t> fov_;
    std::vector<std::vector<int>> subsets_;
    std::vector<ImageGrid> sens_;
};

inline ImageGrid osem_reconstruct(const Sinogram& s, const ImageGeometry& ig, const EmConfig& cfg,
                                  const ProjectorConfig& pcfg = {}) {
    return OsemReconstructor(ig, s.geometry, cfg, pcfg).reconstruct(s);
}

// ---------------------------------------------------------------------------
// Filtered back-projection
// ---------------------------------------------------------------------------

enum class FbpFilter { Ramp, Hann };

inline FbpFilter parse_fbp_filter(const std::string& name) {
    if (name == "ramp") return FbpFilter::Ramp;
    if (name == "hann") return FbpFilter::Hann;
    throw ConfigError("unknown FBP filter '" + name + "' (expected ramp or hann)");
}

/// Frequency response of the band-limited ramp filter, built as the DFT of the
/// sampled spatial kernel so the zero-frequency term is handled correctly.
inline std::vector<double> ramp_response(int num_bins, double spacing, FbpFilter filter, int& padded) {
    padded = 1;
    while (padded < 2 * num_bins) padded <<= 1;
    std::vector<double> h(static_cast<std::size_t>(padded), 0.0);
    const double tau2 = spacing * spacing;
    h[0] = 1.0 / (4.0 * tau2);
    for (int n = 1; n < padded / 2; ++n) {
        if (n % 2 == 0) continue;
        const double v = -1.0 / (n * n * kPi * kPi * tau2);
        h[static_cast<std::size_t>(n)] = v;
        h[static_cast<std::size_t>(padded - n)] = v;
    }
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> H;
    fft.fwd(H, h);
    std::vector<double> resp(static_cast<std::size_t>(padded));
    for (int k = 0; k < padded; ++k) {
        double r = std::abs(H[static_cast<std::size_t>(k)].real()) * spacing;
        if (filter == FbpFilter::Hann) {
            const int kk = k <= padded / 2 ? k : padded - k;
            r *= 0.5 * (1.0 + std::cos(kPi * kk / (padded / 2)));
        }
        resp[static_cast<std::size_t>(k)] = r;
    }
    return resp;
}

inline Sinogram ramp_filter(const Sinogram& s, FbpFilter filter) {
    const auto& g = s.geometry;
    int padded = 0;
    const auto resp = ramp_response(g.num_bins, g.bin_spacing, filter, padded);
    Eigen::FFT<double> fft;
    Sinogram out(g);
    std::vector<double> row(static_cast<std::size_t>(padded));
    std::vector<std::complex<double>> spec;
    std::vector<double> back;
    for (int a = 0; a < g.num_angles; ++a) {
        std::fill(row.begin(), row.end(), 0.0);
        for (int b = 0; b < g.num_bins; ++b) row[static_cast<std::size_t>(b)] = s.at(a, b);
        fft.fwd(spec, row);
        for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= resp[k];
        fft.inv(back, spec);
        for (int b = 0; b < g.num_bins; ++b) out.at(a, b) = back[static_cast<std::size_t>(b)];
    }
    return out;
}

inline ImageGrid fbp_reconstruct(const Sinogram& s, const ImageGeometry& ig, FbpFilter filter,
                                 const ProjectorConfig& pcfg = {}) {
    check_compatible(ig, s.geometry);
    const Sinogram q = ramp_filter(s, filter);
    ImageGrid img = Projector(ig, s.geometry, pcfg).back(q);
    const double scale = kPi / s.geometry.num_angles * s.geometry.bin_spacing / (ig.pixel_size * ig.pixel_size);
    for (double& v : img.values) v *= scale;
    img.clip_to_fov();
    return img;
}

}  // namespace radinv
