#pragma once

// Patch-wise masked linear inversion layer, Adam, and the cyclic learning-rate
// schedule.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "radinv/config.hpp"
#include "radinv/core.hpp"
#include "radinv/parallel.hpp"
#include "radinv/tensor_io.hpp"
#include "radinv/tiling.hpp"

namespace radinv {

namespace detail {

inline constexpr int kLanes = 16;

// NB simultaneous dot products of w against NB rows of x (row stride `stride`).
// Every row is reduced with the same lane order, so a row's result does not
// depend on which other rows share the call.
template <class Real, int NB>
inline void multi_dot(const Real* __restrict w, const Real* __restrict x, std::size_t stride, std::size_t n,
                      Real* out) {
    Real acc[NB][kLanes] = {};
    std::size_t k = 0;
    for (; k + kLanes <= n; k += kLanes)
        for (int b = 0; b < NB; ++b) {
            const Real* xb = x + b * stride + k;
            for (int j = 0; j < kLanes; ++j) acc[b][j] += w[k + j] * xb[j];
        }
    for (int b = 0; b < NB; ++b) {
        const Real* xb = x + b * stride;
        for (std::size_t t = k; t < n; ++t) acc[b][t - k] += w[t] * xb[t];
        for (int h = kLanes / 2; h >= 1; h /= 2)
            for (int j = 0; j < h; ++j) acc[b][j] += acc[b][j + h];
        out[b] = acc[b][0];
    }
}

template <class Real>
inline void axpy(Real a, const Real* __restrict x, Real* __restrict y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace detail

template <class Real>
using WeightSet = std::vector<std::vector<Real>>;

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
    double beta1 = 0.5;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <class Real>
struct AdamState {
    AdamConfig config;
    WeightSet<Real> m, v;
    std::uint64_t t = 0;

    static AdamState for_weights(const WeightSet<Real>& w, AdamConfig cfg = {}) {
        AdamState s;
        s.config = cfg;
        s.m.resize(w.size());
        s.v.resize(w.size());
        for (std::size_t p = 0; p < w.size(); ++p) {
            s.m[p].assign(w[p].size(), Real(0));
            s.v[p].assign(w[p].size(), Real(0));
        }
        return s;
    }
};

namespace detail {

template <class Real>
struct AdamCoefficients {
    Real b1, b2, c1, c2, step, vscale, eps;

    AdamCoefficients(const AdamConfig& cfg, std::uint64_t t, double lr)
        : b1(static_cast<Real>(cfg.beta1)),
          b2(static_cast<Real>(cfg.beta2)),
          c1(static_cast<Real>(1.0 - cfg.beta1)),
          c2(static_cast<Real>(1.0 - cfg.beta2)),
          step(static_cast<Real>(lr / (1.0 - std::pow(cfg.beta1, static_cast<double>(t))))),
          vscale(static_cast<Real>(1.0 / std::sqrt(1.0 - std::pow(cfg.beta2, static_cast<double>(t))))),
          eps(static_cast<Real>(cfg.epsilon)) {}

    void apply(Real* __restrict w, Real* __restrict m, Real* __restrict v, const Real* __restrict g,
               std::size_t n) const {
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + c1 * g[i];
            v[i] = b2 * v[i] + c2 * g[i] * g[i];
            w[i] -= step * m[i] / (std::sqrt(v[i]) * vscale + eps);
        }
    }
};

template <class Real>
bool all_finite(const Real* g, std::size_t n) {
    Real probe = 0;
    for (std::size_t i = 0; i < n; ++i) probe += g[i] * Real(0);
    return std::isfinite(probe);
}

}  // namespace detail

/// Bias-corrected Adam update in place.
template <class Real>
void adam_step(AdamState<Real>& st, WeightSet<Real>& weights, const WeightSet<Real>& grads, double lr) {
    RADINV_CHECK(weights.size() == grads.size() && st.m.size() == weights.size(), GeometryError,
                 "adam: parameter groups do not match");
    for (std::size_t p = 0; p < grads.size(); ++p) {
        RADINV_CHECK(grads[p].size() == weights[p].size() && st.m[p].size() == weights[p].size(), GeometryError,
                     "adam: shape mismatch in patch " + std::to_string(p));
        if (!detail::all_finite(grads[p].data(), grads[p].size()))
            throw NumericError("adam: non-finite gradient in patch " + std::to_string(p));
    }
    st.t += 1;
    const detail::AdamCoefficients<Real> co(st.config, st.t, lr);
    parallel_for(grads.size(), [&](std::size_t p) {
        co.apply(weights[p].data(), st.m[p].data(), st.v[p].data(), grads[p].data(), weights[p].size());
    });
}


/// Independent linear maps, one per patch, from the patch's surviving sinogram
/// bins to its pixels. No bias terms.
template <class Real>
class InversionLayer {
public:
    InversionLayer() = default;

    InversionLayer(PatchTiling tiling, std::vector<SinogramMask> masks)
        : tiling_(std::move(tiling)), masks_(std::move(masks)) {
        RADINV_CHECK(masks_.size() == tiling_.patches.size(), GeometryError,
                     "layer: " + std::to_string(masks_.size()) + " masks for " +
                         std::to_string(tiling_.patches.size()) + " patches");
        RADINV_CHECK(!masks_.empty(), GeometryError, "layer: no patches");
        sg_ = masks_.front().geometry;
        for (const auto& m : masks_)
            RADINV_CHECK(m.geometry == sg_, GeometryError, "layer: masks disagree on sinogram geometry");
        weights_.resize(masks_.size());
        for (std::size_t p = 0; p < masks_.size(); ++p) weights_[p].assign(rows(p) * cols(p), Real(0));
    }

    /// Zero-mean uniform weights with half-width 1/sqrt(bins) per patch.
    void init_uniform(std::uint64_t seed) {
        for (std::size_t p = 0; p < weights_.size(); ++p) {
            Rng rng = make_rng(seed, p);
            const double h = cols(p) > 0 ? 1.0 / std::sqrt(static_cast<double>(cols(p))) : 0.0;
            for (auto& w : weights_[p]) w = static_cast<Real>(uniform(rng, -h, h));
        }
    }

    const PatchTiling& tiling() const { return tiling_; }
    const std::vector<SinogramMask>& masks() const { return masks_; }
    const ImageGeometry& image_geometry() const { return tiling_.geometry; }
    const SinogramGeometry& sinogram_geometry() const { return sg_; }
    std::size_t num_patches() const { return masks_.size(); }
    std::size_t rows(std::size_t p) const { return tiling_.patches[p].pixels.size(); }
    std::size_t cols(std::size_t p) const { return masks_[p].count(); }

    WeightSet<Real>& weights() { return weights_; }
    const WeightSet<Real>& weights() const { return weights_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t p = 0; p < num_patches(); ++p) n += rows(p) * cols(p);
        return n;
    }

    /// Multiply-adds counted as two operations.
    std::size_t flop_count() const { return 2 * parameter_count(); }

    WeightSet<Real> zeros_like() const {
        WeightSet<Real> z(weights_.size());
        for (std::size_t p = 0; p < z.size(); ++p) z[p].assign(weights_[p].size(), Real(0));
        return z;
    }

    /// sino: batch x sinogram-size, out: batch x image-size (overwritten; zero off-patch).
    void forward(std::span<const Real> sino, std::size_t batch, std::span<Real> out) const {
        const std::size_t S = sg_.size(), N = image_geometry().size();
        RADINV_CHECK(sino.size() == batch * S, GeometryError, "layer forward: sinogram batch has wrong size");
        RADINV_CHECK(out.size() == batch * N, GeometryError, "layer forward: output batch has wrong size");
        std::fill(out.begin(), out.end(), Real(0));
        parallel_for(num_patches(), [&](std::size_t p) {
            const std::size_t K = cols(p);
            const auto& pix = tiling_.patches[p].pixels;
            const std::vector<Real> x = gather(sino, batch, p);
            const Real* W = weights_[p].data();
            Real res[4];
            for (std::size_t i = 0; i < pix.size(); ++i) {
                const Real* w = W + i * K;
                std::size_t b = 0;
                for (; b + 4 <= batch; b += 4) {
                    detail::multi_dot<Real, 4>(w, x.data() + b * K, K, K, res);
                    for (int j = 0; j < 4; ++j) out[(b + j) * N + pix[i]] = res[j];
                }
                for (; b < batch; ++b) {
                    detail::multi_dot<Real, 1>(w, x.data() + b * K, K, K, res);
                    out[b * N + pix[i]] = res[0];
                }
            }
        });
    }

    ImageGrid forward(const Sinogram& s) const {
        RADINV_CHECK(s.geometry == sg_, GeometryError, "layer forward: sinogram geometry mismatch");
        std::vector<Real> in(s.values.begin(), s.values.end());
        std::vector<Real> out(image_geometry().size());
        forward(in, 1, out);
        return ImageGrid(image_geometry(), std::vector<double>(out.begin(), out.end()));
    }

    /// Overwrites grad with d(loss)/d(weights) given d(loss)/d(output) for the batch.
    void backward(std::span<const Real> sino, std::span<const Real> upstream, std::size_t batch,
                  WeightSet<Real>& grad) const {
        const std::size_t S = sg_.size(), N = image_geometry().size();
        RADINV_CHECK(sino.size() == batch * S, GeometryError, "layer backward: sinogram batch has wrong size");
        RADINV_CHECK(upstream.size() == batch * N, GeometryError, "layer backward: gradient batch has wrong size");
        if (grad.size() != weights_.size()) grad = zeros_like();
        parallel_for(num_patches(), [&](std::size_t p) {
            const std::size_t K = cols(p);
            const auto& pix = tiling_.patches[p].pixels;
            const std::vector<Real> x = gather(sino, batch, p);
            auto& G = grad[p];
            G.assign(weights_[p].size(), Real(0));
            for (std::size_t i = 0; i < pix.size(); ++i) {
                Real* g = G.data() + i * K;
                for (std::size_t b = 0; b < batch; ++b) {
                    const Real u = upstream[b * N + pix[i]];
                    if (u != Real(0)) detail::axpy(u, x.data() + b * K, g, K);
                }
            }
        });
    }

    /// Backward pass fused with an Adam update, row by row, so gradients are
    /// never materialised. Same arithmetic as backward() followed by adam_step().
    void backward_adam(std::span<const Real> sino, std::span<const Real> upstream, std::size_t batch,
                       AdamState<Real>& st, double lr) {
        const std::size_t S = sg_.size(), N = image_geometry().size();
        RADINV_CHECK(sino.size() == batch * S, GeometryError, "layer backward: sinogram batch has wrong size");
        RADINV_CHECK(upstream.size() == batch * N, GeometryError, "layer backward: gradient batch has wrong size");
        RADINV_CHECK(st.m.size() == weights_.size(), GeometryError, "layer backward: optimizer state mismatch");
        RADINV_CHECK(detail::all_finite(upstream.data(), upstream.size()), NumericError,
                     "layer backward: non-finite upstream gradient");
        st.t += 1;
        const detail::AdamCoefficients<Real> co(st.config, st.t, lr);
        parallel_for(num_patches(), [&](std::size_t p) {
            const std::size_t K = cols(p);
            const auto& pix = tiling_.patches[p].pixels;
            const std::vector<Real> x = gather(sino, batch, p);
            std::vector<Real> g(K);
            for (std::size_t i = 0; i < pix.size(); ++i) {
                std::fill(g.begin(), g.end(), Real(0));
                for (std::size_t b = 0; b < batch; ++b) {
                    const Real u = upstream[b * N + pix[i]];
                    if (u != Real(0)) detail::axpy(u, x.data() + b * K, g.data(), K);
                }
                if (!detail::all_finite(g.data(), K))
                    throw NumericError("adam: non-finite gradient in patch " + std::to_string(p));
                co.apply(weights_[p].data() + i * K, st.m[p].data() + i * K, st.v[p].data() + i * K, g.data(), K);
            }
        });
    }

private:
    std::vector<Real> gather(std::span<const Real> sino, std::size_t batch, std::size_t p) const {
        const std::size_t K = cols(p), S = sg_.size();
        const auto& bins = masks_[p].surviving;
        std::vector<Real> x(batch * K);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t k = 0; k < K; ++k) x[b * K + k] = sino[b * S + bins[k]];
        return x;
    }

    PatchTiling tiling_;
    std::vector<SinogramMask> masks_;
    SinogramGeometry sg_;
    WeightSet<Real> weights_;
};

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

struct SchedulerConfig {
    double eta_min = 0.5e-5;
    double eta_max = 9.0e-5;
    int period = 1000;
    double decay = 0.99995;

    void validate() const {
        RADINV_CHECK(eta_min > 0.0 && eta_min <= eta_max, ConfigError, "scheduler: need 0 < eta_min <= eta_max");
        RADINV_CHECK(period >= 2, ConfigError, "scheduler: period must be >= 2");
        RADINV_CHECK(decay > 0.0 && decay <= 1.0, ConfigError, "scheduler: decay must lie in (0, 1]");
    }

    static SchedulerConfig from_config(const KeyValues& kv, const std::string& prefix = "scheduler.") {
        SchedulerConfig c;
        kv.get(prefix + "eta_min", c.eta_min);
        kv.get(prefix + "eta_max", c.eta_max);
        kv.get(prefix + "period", c.period);
        kv.get(prefix + "decay", c.decay);
        return c;
    }
};

/// Triangle wave with unit peak at half periods and zeros at multiples of the period.
inline double triangle_wave(std::uint64_t k, int period) {
    const double q = static_cast<double>(k) / period;
    return 2.0 * std::abs(q - std::floor(q + 0.5));
}

inline double learning_rate(std::uint64_t k, const SchedulerConfig& cfg = {}) {
    return triangle_wave(k, cfg.period) * (cfg.eta_max - cfg.eta_min) * std::pow(cfg.decay, static_cast<double>(k)) +
           cfg.eta_min;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace detail {

inline std::string patch_file(std::size_t p) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "patch_%04zu.dpt", p);
    return buf;
}

template <class Real>
void write_weight_set(const std::filesystem::path& dir, const WeightSet<Real>& ws,
                      const std::vector<std::size_t>& rows) {
    std::filesystem::create_directories(dir);
    for (std::size_t p = 0; p < ws.size(); ++p) {
        const std::uint32_t r = static_cast<std::uint32_t>(rows[p]);
        const std::uint32_t c = r ? static_cast<std::uint32_t>(ws[p].size() / r) : 0;
        const std::vector<std::uint32_t> dims{r, c};
        const std::vector<float> vals(ws[p].begin(), ws[p].end());
        write_tensor(dir / patch_file(p), dims, vals);
    }
}

template <class Real>
void read_weight_set(const std::filesystem::path& dir, WeightSet<Real>& ws) {
    for (std::size_t p = 0; p < ws.size(); ++p) {
        const Tensor t = read_tensor(dir / patch_file(p));
        RADINV_CHECK(t.values.size() == ws[p].size(), DataError,
                     "checkpoint " + (dir / patch_file(p)).string() + " has the wrong shape");
        std::copy(t.values.begin(), t.values.end(), ws[p].begin());
    }
}

}  // namespace detail

/// Writes layer.txt (geometry and tiling), masks.dpt, manifest.csv and one
/// weight tensor per patch under dir/weights.
template <class Real>
void save_layer(const std::filesystem::path& dir, const InversionLayer<Real>& layer) {
    std::filesystem::create_directories(dir);
    const auto& ig = layer.image_geometry();
    const auto& sg = layer.sinogram_geometry();
    {
        std::ofstream f(dir / "layer.txt");
        RADINV_CHECK(f.good(), DataError, "cannot write " + (dir / "layer.txt").string());
        f.precision(17);
        f << "image.size = " << ig.width << "\nimage.pixel_size = " << ig.pixel_size
          << "\nimage.fov_radius = " << ig.fov_radius << "\nsinogram.num_angles = " << sg.num_angles
          << "\nsinogram.num_bins = " << sg.num_bins << "\nsinogram.bin_spacing = " << sg.bin_spacing
          << "\npatch_size = " << layer.tiling().patch_size << "\n";
    }
    write_masks(dir / "masks.dpt", layer.masks());
    {
        std::ofstream f(dir / "manifest.csv");
        f << "patch_id,rows,cols,file\n";
        for (std::size_t p = 0; p < layer.num_patches(); ++p)
            f << p << ',' << layer.rows(p) << ',' << layer.cols(p) << ",weights/" << detail::patch_file(p) << '\n';
    }
    std::vector<std::size_t> rows;
    for (std::size_t p = 0; p < layer.num_patches(); ++p) rows.push_back(layer.rows(p));
    detail::write_weight_set(dir / "weights", layer.weights(), rows);
}

template <class Real>
InversionLayer<Real> load_layer(const std::filesystem::path& dir) {
    RADINV_CHECK(std::filesystem::exists(dir / "layer.txt"), DataError,
                 "no layer checkpoint in " + dir.string() + " (layer.txt missing)");
    const auto kv = KeyValues::load(dir / "layer.txt");
    int size = 0, angles = 0, bins = 0, patch = 0;
    double ps = 1.0, fov = 0.0, spacing = 1.0;
    kv.get("image.size", size);
    kv.get("image.pixel_size", ps);
    kv.get("image.fov_radius", fov);
    kv.get("sinogram.num_angles", angles);
    kv.get("sinogram.num_bins", bins);
    kv.get("sinogram.bin_spacing", spacing);
    kv.get("patch_size", patch);
    const ImageGeometry ig{size, size, ps, fov};
    const SinogramGeometry sg{angles, bins, spacing};
    InversionLayer<Real> layer(tile_patches(ig, patch), read_masks(dir / "masks.dpt", sg));
    detail::read_weight_set(dir / "weights", layer.weights());
    return layer;
}

template <class Real>
void save_adam(const std::filesystem::path& dir, const AdamState<Real>& st, const InversionLayer<Real>& layer) {
    std::vector<std::size_t> rows;
    for (std::size_t p = 0; p < layer.num_patches(); ++p) rows.push_back(layer.rows(p));
    detail::write_weight_set(dir / "adam_m", st.m, rows);
    detail::write_weight_set(dir / "adam_v", st.v, rows);
    std::ofstream f(dir / "adam.txt");
    f.precision(17);
    f << "t = " << st.t << "\nbeta1 = " << st.config.beta1 << "\nbeta2 = " << st.config.beta2
      << "\nepsilon = " << st.config.epsilon << "\n";
}

template <class Real>
AdamState<Real> load_adam(const std::filesystem::path& dir, const InversionLayer<Real>& layer) {
    const auto kv = KeyValues::load(dir / "adam.txt");
    AdamState<Real> st = AdamState<Real>::for_weights(layer.weights());
    kv.get("t", st.t);
    kv.get("beta1", st.config.beta1);
    kv.get("beta2", st.config.beta2);
    kv.get("epsilon", st.config.epsilon);
    detail::read_weight_set(dir / "adam_m", st.m);
    detail::read_weight_set(dir / "adam_v", st.v);
    return st;
}

}  // namespace radinv
