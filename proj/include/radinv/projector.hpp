#pragma once

// Ray-driven parallel-beam Radon transform with bilinear interpolation, and
// its exact transpose. Both directions walk the same sample positions, so
// back_project is the matrix transpose of forward_project, not an
// independent pixel-driven approximation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "radinv/core.hpp"
#include "radinv/parallel.hpp"

namespace radinv {

struct ProjectorConfig {
    /// Distance between ray samples, as a fraction of the pixel size.
    double sampling_step = 0.5;

    void validate() const {
        RADINV_CHECK(sampling_step > 0.0 && sampling_step <= 1.0, ConfigError,
                     "sampling_step must lie in (0, 1]");
    }
};

inline void check_compatible(const ImageGeometry& ig, const SinogramGeometry& sg) {
    ig.validate();
    sg.validate();
    RADINV_CHECK(sg.radial_extent() + 1e-9 >= 2.0 * ig.fov_radius, GeometryError,
                 "sinogram radial extent (" + std::to_string(sg.radial_extent()) +
                     ") does not cover the FOV diameter (" + std::to_string(2.0 * ig.fov_radius) + ")");
}

class Projector {
public:
    /// Number of fixed angle blocks used to partition back-projection work.
    static constexpr int kAngleBlocks = 8;

    Projector(const ImageGeometry& ig, const SinogramGeometry& sg, ProjectorConfig cfg = {})
        : ig_(ig), sg_(sg), cfg_(cfg) {
        check_compatible(ig, sg);
        cfg.validate();
        step_ = cfg.sampling_step * ig.pixel_size;
        const double half_diag = 0.5 * std::sqrt(2.0) * ig.width * ig.pixel_size + ig.pixel_size;
        half_samples_ = static_cast<long>(std::ceil(half_diag / step_));
        cos_.resize(sg.num_angles);
        sin_.resize(sg.num_angles);
        for (int a = 0; a < sg.num_angles; ++a) {
            cos_[a] = std::cos(sg.angle(a));
            sin_[a] = std::sin(sg.angle(a));
        }
    }

    const ImageGeometry& image_geometry() const { return ig_; }
    const SinogramGeometry& sinogram_geometry() const { return sg_; }

    Sinogram forward(const ImageGrid& img) const { return forward(img, all_angles()); }

    /// Projects only the listed views; other rows of the result stay zero.
    Sinogram forward(const ImageGrid& img, std::span<const int> angles) const {
        RADINV_CHECK(img.geometry == ig_, GeometryError, "forward_project: image geometry mismatch");
        Box box = support_box(img);
        Sinogram out(sg_);
        if (box.empty()) return out;
        parallel_for(angles.size(), [&](std::size_t i) {
            const int a = angles[i];
            for (int b = 0; b < sg_.num_bins; ++b) {
                double acc = 0.0;
                walk(a, b, box, [&](std::size_t idx, double w) { acc += w * img.values[idx]; });
                out.at(a, b) = acc * step_;
            }
        });
        return out;
    }

    ImageGrid back(const Sinogram& sino) const { return back(sino, all_angles()); }

    /// Transpose of forward() restricted to the listed views.
    ImageGrid back(const Sinogram& sino, std::span<const int> angles) const {
        RADINV_CHECK(sino.geometry == sg_, GeometryError, "back_project: sinogram geometry mismatch");
        const Box full{0, ig_.height - 1, 0, ig_.width - 1};
        const std::size_t blocks = std::min<std::size_t>(kAngleBlocks, std::max<std::size_t>(1, angles.size()));
        std::vector<std::vector<double>> partial(blocks, std::vector<double>(ig_.size(), 0.0));
        parallel_for(blocks, [&](std::size_t blk) {
            auto& acc = partial[blk];
            for (std::size_t i = blk; i < angles.size(); i += blocks) {
                const int a = angles[i];
                for (int b = 0; b < sg_.num_bins; ++b) {
                    const double v = sino.at(a, b) * step_;
                    if (v == 0.0) continue;
                    walk(a, b, full, [&](std::size_t idx, double w) { acc[idx] += w * v; });
                }
            }
        });
        ImageGrid out(ig_);
        for (const auto& p : partial)
            for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += p[i];
        return out;
    }

    std::vector<int> all_angles() const {
        std::vector<int> a(static_cast<std::size_t>(sg_.num_angles));
        for (int i = 0; i < sg_.num_angles; ++i) a[static_cast<std::size_t>(i)] = i;
        return a;
    }

    /// Calls fn(pixel_index, weight) for every bilinear tap along ray (a, b)
    /// that falls on a pixel inside the given row/column box.
    template <class Fn>
    void for_each_tap(int a, int b, Fn&& fn) const {
        walk(a, b, Box{0, ig_.height - 1, 0, ig_.width - 1}, fn);
    }

    struct Box {
        int r0 = 0, r1 = -1, c0 = 0, c1 = -1;
        bool empty() const { return r1 < r0 || c1 < c0; }
    };

    /// Forward projection restricted to rays that can touch the given pixel box;
    /// returns, per bin, whether any tap lands on a box pixel.
    std::vector<std::uint8_t> touched_bins(const Box& box) const {
        std::vector<std::uint8_t> hit(sg_.size(), 0);
        if (box.empty()) return hit;
        for (int a = 0; a < sg_.num_angles; ++a)
            for (int b = 0; b < sg_.num_bins; ++b) {
                bool any = false;
                walk(a, b, box, [&](std::size_t, double w) { any = any || w > 0.0; });
                hit[static_cast<std::size_t>(a) * sg_.num_bins + b] = any ? 1 : 0;
            }
        return hit;
    }

private:
    Box support_box(const ImageGrid& img) const {
        Box box{ig_.height, -1, ig_.width, -1};
        for (int r = 0; r < ig_.height; ++r)
            for (int c = 0; c < ig_.width; ++c)
                if (img.at(r, c) != 0.0) {
                    box.r0 = std::min(box.r0, r);
                    box.r1 = std::max(box.r1, r);
                    box.c0 = std::min(box.c0, c);
                    box.c1 = std::max(box.c1, c);
                }
        return box;
    }

    // Open interval of t for which a linear coordinate u(t) = u0 + t*du lies in (lo, hi).
    static void clip(double u0, double du, double lo, double hi, double& tlo, double& thi) {
        if (std::abs(du) < 1e-15) {
            if (!(u0 > lo && u0 < hi)) {
                tlo = 1.0;
                thi = -1.0;
            }
            return;
        }
        double ta = (lo - u0) / du;
        double tb = (hi - u0) / du;
        if (ta > tb) std::swap(ta, tb);
        tlo = std::max(tlo, ta);
        thi = std::min(thi, tb);
    }

    template <class Fn>
    void walk(int a, int b, const Box& box, Fn&& fn) const {
        const double c = cos_[a], s = sin_[a];
        const double off = sg_.offset(b);
        const double ps = ig_.pixel_size;
        // Fractional pixel coordinates along the ray: p(t) = off*n + t*d, d = (-sin, cos).
        const double col0 = (off * c) / ps + 0.5 * (ig_.width - 1);
        const double dcol = -s / ps;
        const double row0 = 0.5 * (ig_.height - 1) - (off * s) / ps;
        const double drow = -c / ps;
        double tlo = -std::numeric_limits<double>::infinity();
        double thi = std::numeric_limits<double>::infinity();
        clip(col0, dcol, box.c0 - 1.0, box.c1 + 1.0, tlo, thi);
        clip(row0, drow, box.r0 - 1.0, box.r1 + 1.0, tlo, thi);
        if (!(tlo < thi)) return;
        // Sample k sits at t_k = (k + 0.5 - half_samples) * step for k in [0, 2*half_samples).
        long k0 = static_cast<long>(std::floor(tlo / step_ + half_samples_ - 0.5)) - 1;
        long k1 = static_cast<long>(std::ceil(thi / step_ + half_samples_ - 0.5)) + 1;
        k0 = std::max(k0, 0L);
        k1 = std::min(k1, 2 * half_samples_ - 1);
        const int W = ig_.width;
        for (long k = k0; k <= k1; ++k) {
            const double t = (static_cast<double>(k) + 0.5 - static_cast<double>(half_samples_)) * step_;
            const double cf = col0 + t * dcol;
            const double rf = row0 + t * drow;
            const double cfl = std::floor(cf), rfl = std::floor(rf);
            const int ci = static_cast<int>(cfl), ri = static_cast<int>(rfl);
            if (ci < box.c0 - 1 || ci > box.c1 || ri < box.r0 - 1 || ri > box.r1) continue;
            const double fc = cf - cfl, fr = rf - rfl;
            const double w00 = (1.0 - fr) * (1.0 - fc), w01 = (1.0 - fr) * fc;
            const double w10 = fr * (1.0 - fc), w11 = fr * fc;
            const bool c0ok = ci >= box.c0, c1ok = ci + 1 <= box.c1;
            if (ri >= box.r0) {
                const std::size_t base = static_cast<std::size_t>(ri) * W;
                if (c0ok) fn(base + ci, w00);
                if (c1ok) fn(base + ci + 1, w01);
            }
            if (ri + 1 <= box.r1) {
                const std::size_t base = static_cast<std::size_t>(ri + 1) * W;
                if (c0ok) fn(base + ci, w10);
                if (c1ok) fn(base + ci + 1, w11);
            }
        }
    }

    ImageGeometry ig_;
    SinogramGeometry sg_;
    ProjectorConfig cfg_;
    double step_ = 0.5;
    long half_samples_ = 0;
    std::vector<double> cos_, sin_;
};

inline Sinogram forward_project(const ImageGrid& img, const SinogramGeometry& sg, const ProjectorConfig& cfg = {}) {
    return Projector(img.geometry, sg, cfg).forward(img);
}

inline ImageGrid back_project(const Sinogram& s, const ImageGeometry& ig, const ProjectorConfig& cfg = {}) {
    return Projector(ig, s.geometry, cfg).back(s);
}

}  // namespace radinv
