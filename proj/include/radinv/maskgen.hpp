#pragma once

// Per-patch sinogram masks: from a trained dense layer's activation maps
// (smooth, open, close, Li threshold) or from forward projection of the patch.

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "radinv/config.hpp"
#include "radinv/core.hpp"
#include "radinv/imageops.hpp"
#include "radinv/inversion.hpp"
#include "radinv/objective.hpp"
#include "radinv/parallel.hpp"
#include "radinv/projector.hpp"
#include "radinv/tiling.hpp"

namespace radinv {

// ---------------------------------------------------------------------------
// Activation atlas
// ---------------------------------------------------------------------------

/// Per-FOV-pixel weight maps over the sinogram, from a dense sinogram->image layer.
struct ActivationAtlas {
    ImageGeometry image;
    SinogramGeometry sinogram;
    std::vector<std::size_t> pixels;  // flat FOV pixel indices, row-major
    std::vector<float> weights;       // pixels.size() x sinogram.size()
    std::vector<int> row_of;          // flat pixel -> atlas row, -1 outside the FOV

    std::span<const float> map(std::size_t flat_pixel) const {
        const int r = row_of.at(flat_pixel);
        RADINV_CHECK(r >= 0, GeometryError, "atlas has no map for pixel " + std::to_string(flat_pixel));
        return std::span<const float>(weights).subspan(static_cast<std::size_t>(r) * sinogram.size(),
                                                       sinogram.size());
    }

    static ActivationAtlas from_layer(const InversionLayer<float>& dense) {
        RADINV_CHECK(dense.num_patches() == 1 && dense.cols(0) == dense.sinogram_geometry().size(), GeometryError,
                     "atlas: expected a single full-FOV patch with an all-bins mask");
        ActivationAtlas a;
        a.image = dense.image_geometry();
        a.sinogram = dense.sinogram_geometry();
        a.pixels = dense.tiling().patches[0].pixels;
        a.weights = dense.weights()[0];
        a.row_of.assign(a.image.size(), -1);
        for (std::size_t i = 0; i < a.pixels.size(); ++i) a.row_of[a.pixels[i]] = static_cast<int>(i);
        return a;
    }
};

/// Layer with one patch covering the whole FOV and every bin kept.
inline InversionLayer<float> make_dense_layer(const ImageGeometry& ig, const SinogramGeometry& sg) {
    check_compatible(ig, sg);
    auto tiling = tile_patches(ig, ig.width);
    std::vector<SinogramMask> masks{SinogramMask::all(0, sg)};
    return InversionLayer<float>(std::move(tiling), std::move(masks));
}

struct DenseTrainConfig {
    int epochs = 250;
    double learning_rate = 0.05;
    int batch_size = 8;
    std::uint64_t seed = 1;
    /// Start from zero weights (true) or the layer's uniform initialisation.
    bool zero_init = true;

    void validate() const {
        RADINV_CHECK(epochs >= 1, ConfigError, "dense training: epochs must be >= 1");
        RADINV_CHECK(learning_rate > 0.0, ConfigError, "dense training: learning rate must be positive");
        RADINV_CHECK(batch_size >= 1, ConfigError, "dense training: batch size must be >= 1");
    }
};

struct DenseTrainResult {
    ActivationAtlas atlas;
    /// Mean MAE over the training pairs before training and after each epoch.
    std::vector<double> epoch_loss;
};

namespace detail {

inline double mean_mae(const InversionLayer<float>& layer, const std::vector<float>& sinos,
                       const std::vector<float>& images, std::size_t count) {
    const std::size_t N = layer.image_geometry().size();
    std::vector<float> out(count * N);
    layer.forward(sinos, count, out);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += std::abs(static_cast<double>(out[i]) - images[i]);
    return s / static_cast<double>(out.size());
}

}  // namespace detail

/// Mini-batch gradient descent on MAE for a single dense sinogram->FOV map.
/// Batches walk a seeded permutation of the pairs each epoch.
inline DenseTrainResult train_dense_layer(const std::vector<std::pair<Sinogram, ImageGrid>>& pairs,
                                          const DenseTrainConfig& cfg) {
    cfg.validate();
    RADINV_CHECK(!pairs.empty(), DataError, "dense training: need at least one training pair");
    const auto ig = pairs.front().second.geometry;
    const auto sg = pairs.front().first.geometry;
    for (const auto& [s, x] : pairs)
        RADINV_CHECK(s.geometry == sg && x.geometry == ig, GeometryError, "dense training: inconsistent geometries");
    auto layer = make_dense_layer(ig, sg);
    if (!cfg.zero_init) layer.init_uniform(cfg.seed);
    const std::size_t S = sg.size(), N = ig.size(), n = pairs.size();
    std::vector<float> sinos(n * S), images(n * N);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(pairs[i].first.values.begin(), pairs[i].first.values.end(), sinos.begin() + i * S);
        std::copy(pairs[i].second.values.begin(), pairs[i].second.values.end(), images.begin() + i * N);
    }
    DenseTrainResult res;
    res.epoch_loss.push_back(detail::mean_mae(layer, sinos, images, n));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = make_rng(cfg.seed, 0xD5);
    const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
    std::vector<float> bs, bx, out, up;
    WeightSet<float> grad;
    std::size_t iteration = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += B, ++iteration) {
            const std::size_t b = std::min(B, n - start);
            bs.resize(b * S);
            bx.resize(b * N);
            for (std::size_t j = 0; j < b; ++j) {
                std::copy_n(sinos.begin() + order[start + j] * S, S, bs.begin() + j * S);
                std::copy_n(images.begin() + order[start + j] * N, N, bx.begin() + j * N);
            }
            out.resize(b * N);
            up.resize(b * N);
            layer.forward(bs, b, out);
            const float w = static_cast<float>(1.0 / static_cast<double>(b * N));
            double loss = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) {
                const float d = out[i] - bx[i];
                loss += std::abs(d);
                up[i] = d > 0.0f ? w : (d < 0.0f ? -w : 0.0f);
            }
            if (!std::isfinite(loss))
                throw NumericError("dense training diverged at iteration " + std::to_string(iteration));
            layer.backward(bs, up, b, grad);
            const float lr = static_cast<float>(cfg.learning_rate);
            auto& W = layer.weights()[0];
            const auto& G = grad[0];
            for (std::size_t i = 0; i < W.size(); ++i) W[i] -= lr * G[i];
        }
        const double l = detail::mean_mae(layer, sinos, images, n);
        if (!std::isfinite(l))
            throw NumericError("dense training diverged at iteration " + std::to_string(iteration));
        res.epoch_loss.push_back(l);
    }
    res.atlas = ActivationAtlas::from_layer(layer);
    return res;
}

/// Fraction of a pixel's absolute weight mass lying within `half_width` bins of
/// the analytic sinusoid s = r cos(theta - phi) traced by the pixel centre.
inline double sinusoid_band_fraction(const ActivationAtlas& atlas, std::size_t flat_pixel, double half_width) {
    const auto m = atlas.map(flat_pixel);
    const auto& ig = atlas.image;
    const auto& sg = atlas.sinogram;
    const int row = static_cast<int>(flat_pixel / ig.width), col = static_cast<int>(flat_pixel % ig.width);
    const double x = ig.x_of(col), y = ig.y_of(row);
    double in = 0.0, total = 0.0;
    for (int a = 0; a < sg.num_angles; ++a) {
        const double s = x * std::cos(sg.angle(a)) + y * std::sin(sg.angle(a));
        for (int b = 0; b < sg.num_bins; ++b) {
            const double v = std::abs(static_cast<double>(m[static_cast<std::size_t>(a) * sg.num_bins + b]));
            total += v;
            if (std::abs(sg.offset(b) - s) <= half_width * sg.bin_spacing) in += v;
        }
    }
    return total > 0.0 ? in / total : 0.0;
}

// ---------------------------------------------------------------------------
// Refinement
// ---------------------------------------------------------------------------

struct MaskRefineConfig {
    double gaussian_sigma = 4.0;
    int disk_radius = 8;

    void validate() const {
        RADINV_CHECK(gaussian_sigma > 0.0, ConfigError, "mask refinement: gaussian sigma must be positive");
        RADINV_CHECK(disk_radius >= 1, ConfigError, "mask refinement: disk radius must be >= 1");
    }

    static MaskRefineConfig from_config(const KeyValues& kv, const std::string& prefix = "masks.") {
        MaskRefineConfig c;
        kv.get(prefix + "gaussian_sigma", c.gaussian_sigma);
        kv.get(prefix + "disk_radius", c.disk_radius);
        return c;
    }
};

/// Li's iterative minimum cross-entropy threshold. Values are normalised by
/// their maximum and shifted by machine epsilon so that no class mean is zero;
/// iteration starts at the mean and stops when the step falls below 1e-6.
inline double li_threshold(std::span<const double> values) {
    RADINV_CHECK(!values.empty(), DataError, "li threshold: empty input");
    double lo = values[0], hi = values[0];
    for (double v : values) {
        RADINV_CHECK(v >= 0.0 && std::isfinite(v), DataError, "li threshold: values must be finite and >= 0");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) throw NumericError("li threshold: input is constant, threshold is undefined");
    const double eps = std::numeric_limits<double>::epsilon();
    std::vector<double> u(values.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = values[i] / hi + eps;
    double t = 0.0;
    for (double v : u) t += v;
    t /= static_cast<double>(u.size());
    for (int it = 0; it < 100; ++it) {
        double sa = 0.0, sb = 0.0;
        std::size_t na = 0, nb = 0;
        for (double v : u) {
            if (v > t) {
                sa += v;
                ++na;
            } else {
                sb += v;
                ++nb;
            }
        }
        if (na == 0 || nb == 0) break;
        const double ma = sa / na, mb = sb / nb;
        const double next = (ma - mb) / (std::log(ma) - std::log(mb));
        const bool done = std::abs(next - t) < 1e-6;
        t = next;
        if (done) break;
    }
    return (t - eps) * hi;
}

/// Smooth, open, close and threshold a summed activation map [angles x bins].
inline std::vector<std::uint8_t> refine_map(std::span<const double> summed, const SinogramGeometry& sg,
                                            const MaskRefineConfig& cfg) {
    cfg.validate();
    RADINV_CHECK(summed.size() == sg.size(), GeometryError, "mask refinement: map does not match the sinogram");
    auto v = gaussian_blur(summed, sg.num_angles, sg.num_bins, cfg.gaussian_sigma, Boundary::Clamp);
    v = open(v, sg.num_angles, sg.num_bins, cfg.disk_radius);
    v = close(v, sg.num_angles, sg.num_bins, cfg.disk_radius);
    for (double& x : v) x = std::max(0.0, x);
    const double t = li_threshold(v);
    std::vector<std::uint8_t> bits(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) bits[i] = v[i] > t ? 1 : 0;
    return bits;
}

/// Sum of absolute activation maps over the patch's pixels.
inline std::vector<double> summed_activation(const ActivationAtlas& atlas, const Patch& patch) {
    std::vector<double> sum(atlas.sinogram.size(), 0.0);
    for (auto px : patch.pixels) {
        const auto m = atlas.map(px);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += std::abs(static_cast<double>(m[i]));
    }
    return sum;
}

inline SinogramMask refine_mask(const ActivationAtlas& atlas, const PatchTiling& tiling, int patch_id,
                                const MaskRefineConfig& cfg = {}) {
    RADINV_CHECK(atlas.image == tiling.geometry, GeometryError, "mask refinement: atlas and tiling disagree");
    RADINV_CHECK(patch_id >= 0 && patch_id < static_cast<int>(tiling.patches.size()), GeometryError,
                 "mask refinement: no patch " + std::to_string(patch_id));
    const auto sum = summed_activation(atlas, tiling.patches[static_cast<std::size_t>(patch_id)]);
    return SinogramMask::from_bits(patch_id, atlas.sinogram, refine_map(sum, atlas.sinogram, cfg));
}

inline std::vector<SinogramMask> learned_masks(const ActivationAtlas& atlas, const PatchTiling& tiling,
                                               const MaskRefineConfig& cfg = {}) {
    std::vector<SinogramMask> out(tiling.patches.size());
    parallel_for(out.size(), [&](std::size_t p) { out[p] = refine_mask(atlas, tiling, static_cast<int>(p), cfg); });
    return out;
}

/// Share of the patch's absolute activation mass that falls inside its mask.
inline double mask_capture_fraction(const ActivationAtlas& atlas, const Patch& patch, const SinogramMask& mask) {
    const auto sum = summed_activation(atlas, patch);
    double in = 0.0, total = 0.0;
    for (std::size_t i = 0; i < sum.size(); ++i) {
        total += sum[i];
        if (mask.bits[i]) in += sum[i];
    }
    return total > 0.0 ? in / total : 0.0;
}

// ---------------------------------------------------------------------------
// Projection masks
// ---------------------------------------------------------------------------

inline PixelBox dilate_box(const PixelBox& b, int buffer, const ImageGeometry& g) {
    return PixelBox{std::max(0, b.r0 - buffer), std::min(g.height - 1, b.r1 + buffer), std::max(0, b.c0 - buffer),
                    std::min(g.width - 1, b.c1 + buffer)};
}

/// Bins whose ray deposits weight on the patch's bounding box dilated by `buffer` pixels.
inline SinogramMask project_mask(const PatchTiling& tiling, int patch_id, const SinogramGeometry& sg, int buffer) {
    RADINV_CHECK(buffer >= 0, ConfigError, "projection mask: buffer must be >= 0");
    RADINV_CHECK(patch_id >= 0 && patch_id < static_cast<int>(tiling.patches.size()), GeometryError,
                 "projection mask: no patch " + std::to_string(patch_id));
    const Projector P(tiling.geometry, sg);
    const auto box = dilate_box(tiling.patches[static_cast<std::size_t>(patch_id)].box, buffer, tiling.geometry);
    return SinogramMask::from_bits(patch_id, sg, P.touched_bins(box));
}

inline std::vector<SinogramMask> projection_masks(const PatchTiling& tiling, const SinogramGeometry& sg,
                                                  int buffer) {
    std::vector<SinogramMask> out(tiling.patches.size());
    parallel_for(out.size(), [&](std::size_t p) { out[p] = project_mask(tiling, static_cast<int>(p), sg, buffer); });
    return out;
}

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

struct ParameterCount {
    std::vector<std::size_t> per_patch;
    std::size_t total = 0;
    std::size_t mask_count = 0;
    /// Single dense layer: every bin to every FOV pixel.
    std::size_t dense = 0;
};

inline ParameterCount count_parameters(const PatchTiling& tiling, const std::vector<SinogramMask>& masks) {
    RADINV_CHECK(masks.size() == tiling.patches.size(), GeometryError, "parameter count: masks do not cover tiling");
    ParameterCount c;
    for (std::size_t p = 0; p < masks.size(); ++p) {
        const std::size_t n = masks[p].count() * tiling.patches[p].pixels.size();
        c.per_patch.push_back(n);
        c.total += n;
    }
    c.mask_count = masks.size();
    c.dense = (masks.empty() ? 0 : masks.front().geometry.size()) * tiling.num_pixels();
    return c;
}

}  // namespace radinv
