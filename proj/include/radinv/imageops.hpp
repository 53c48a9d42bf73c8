#pragma once

// 2-D array filters shared by the baselines and mask refinement: separable
// Gaussian smoothing, grayscale morphology with a disk, connected components.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "radinv/core.hpp"

namespace radinv {

enum class Boundary { Zero, Clamp };

/// Normalised 1-D Gaussian taps out to ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
    RADINV_CHECK(sigma > 0.0, ConfigError, "gaussian sigma must be positive");
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

/// Separable convolution of a rows x cols array with a symmetric 1-D kernel on both axes.
inline std::vector<double> convolve_separable(std::span<const double> in, int rows, int cols,
                                              std::span<const double> kernel, Boundary bnd) {
    const int radius = static_cast<int>(kernel.size() / 2);
    auto fetch = [&](const std::vector<double>& src, int r, int c) -> double {
        if (r < 0 || r >= rows || c < 0 || c >= cols) {
            if (bnd == Boundary::Zero) return 0.0;
            r = std::clamp(r, 0, rows - 1);
            c = std::clamp(c, 0, cols - 1);
        }
        return src[static_cast<std::size_t>(r) * cols + c];
    };
    std::vector<double> src(in.begin(), in.end());
    std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * fetch(src, r, c + k);
            tmp[static_cast<std::size_t>(r) * cols + c] = acc;
        }
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * fetch(tmp, r + k, c);
            out[static_cast<std::size_t>(r) * cols + c] = acc;
        }
    return out;
}

inline std::vector<double> gaussian_blur(std::span<const double> in, int rows, int cols, double sigma,
                                         Boundary bnd) {
    const auto k = gaussian_kernel(sigma);
    return convolve_separable(in, rows, cols, k, bnd);
}

/// Offsets of a discrete disk structuring element: all (dr, dc) with dr^2 + dc^2 <= radius^2.
inline std::vector<std::pair<int, int>> disk_offsets(int radius) {
    RADINV_CHECK(radius >= 0, ConfigError, "disk radius must be non-negative");
    std::vector<std::pair<int, int>> out;
    for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc)
            if (dr * dr + dc * dc <= radius * radius) out.emplace_back(dr, dc);
    return out;
}

namespace detail {

// Grayscale erosion (min) or dilation (max) over in-bounds neighbours only.
template <bool Max>
std::vector<double> rank_filter(std::span<const double> in, int rows, int cols, int radius) {
    const auto offs = disk_offsets(radius);
    std::vector<double> out(in.size());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double best = Max ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
            for (auto [dr, dc] : offs) {
                const int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= rows || cc < 0 || cc >= cols) continue;
                const double v = in[static_cast<std::size_t>(rr) * cols + cc];
                best = Max ? std::max(best, v) : std::min(best, v);
            }
            out[static_cast<std::size_t>(r) * cols + c] = best;
        }
    return out;
}

}  // namespace detail

inline std::vector<double> erode(std::span<const double> in, int rows, int cols, int radius) {
    return detail::rank_filter<false>(in, rows, cols, radius);
}

inline std::vector<double> dilate(std::span<const double> in, int rows, int cols, int radius) {
    return detail::rank_filter<true>(in, rows, cols, radius);
}

inline std::vector<double> open(std::span<const double> in, int rows, int cols, int radius) {
    const auto e = erode(in, rows, cols, radius);
    return dilate(e, rows, cols, radius);
}

inline std::vector<double> close(std::span<const double> in, int rows, int cols, int radius) {
    const auto d = dilate(in, rows, cols, radius);
    return erode(d, rows, cols, radius);
}

/// 4-connected components of a binary array.
inline int count_components(std::span<const std::uint8_t> mask, int rows, int cols) {
    std::vector<int> label(mask.size(), 0);
    std::vector<std::size_t> stack;
    int n = 0;
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask[start] || label[start]) continue;
        ++n;
        label[start] = n;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            const int r = static_cast<int>(i / cols), c = static_cast<int>(i % cols);
            const int nr[4] = {r - 1, r + 1, r, r};
            const int nc[4] = {c, c, c - 1, c + 1};
            for (int k = 0; k < 4; ++k) {
                if (nr[k] < 0 || nr[k] >= rows || nc[k] < 0 || nc[k] >= cols) continue;
                const std::size_t j = static_cast<std::size_t>(nr[k]) * cols + nc[k];
                if (mask[j] && !label[j]) {
                    label[j] = n;
                    stack.push_back(j);
                }
            }
        }
    }
    return n;
}

}  // namespace radinv
