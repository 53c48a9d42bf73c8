#pragma once

// Training losses: mean absolute error, multi-scale SSIM (with analytic
// gradient), and the running-window balance between them.

#include <algorithm>
#include <cmath>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "radinv/config.hpp"
#include "radinv/core.hpp"
#include "radinv/imageops.hpp"

namespace radinv {

struct LossConfig {
    int scales = 3;
    int window = 11;
    double window_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    /// Iterations of history used to balance MAE against MS-SSIM.
    int alpha_window = 100;

    void validate() const {
        RADINV_CHECK(scales >= 1, ConfigError, "loss: scales must be >= 1");
        RADINV_CHECK(window >= 1 && window % 2 == 1, ConfigError, "loss: window must be odd and positive");
        RADINV_CHECK(window_sigma > 0.0, ConfigError, "loss: window sigma must be positive");
        RADINV_CHECK(k1 > 0.0 && k2 > 0.0, ConfigError, "loss: K1 and K2 must be positive");
        RADINV_CHECK(alpha_window >= 1, ConfigError, "loss: alpha window must be >= 1");
    }

    /// Smallest image side that supports every scale.
    int min_side() const { return window * (1 << (scales - 1)); }

    static LossConfig from_config(const KeyValues& kv, const std::string& prefix = "loss.") {
        LossConfig c;
        kv.get(prefix + "scales", c.scales);
        kv.get(prefix + "k1", c.k1);
        kv.get(prefix + "k2", c.k2);
        kv.get(prefix + "alpha_window", c.alpha_window);
        return c;
    }
};

// ---------------------------------------------------------------------------
// MAE
// ---------------------------------------------------------------------------

inline double mae_loss(std::span<const double> pred, std::span<const double> target) {
    RADINV_CHECK(pred.size() == target.size(), GeometryError, "mae: shape mismatch");
    RADINV_CHECK(!pred.empty(), GeometryError, "mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

inline double mae_loss(const ImageGrid& pred, const ImageGrid& target) {
    RADINV_CHECK(pred.geometry == target.geometry, GeometryError, "mae: geometry mismatch");
    return mae_loss(pred.values, target.values);
}

/// Adds scale * d(MAE)/d(pred) into grad (subgradient 0 where pred == target).
inline void mae_gradient(std::span<const double> pred, std::span<const double> target, double scale,
                         std::span<double> grad) {
    const double w = scale / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        grad[i] += d > 0.0 ? w : (d < 0.0 ? -w : 0.0);
    }
}

// ---------------------------------------------------------------------------
// MS-SSIM
// ---------------------------------------------------------------------------

namespace detail {

struct Plane {
    int rows = 0, cols = 0;
    std::vector<double> v;
    Plane() = default;
    Plane(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

// Window taps: Gaussian of the configured width over `window` samples, normalised.
inline std::vector<double> window_taps(int window, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(window));
    const int h = window / 2;
    double sum = 0.0;
    for (int i = -h; i <= h; ++i) {
        k[static_cast<std::size_t>(i + h)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<std::size_t>(i + h)];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Valid-mode separable filtering: output is (rows-w+1) x (cols-w+1).
inline Plane filter_valid(const Plane& in, const std::vector<double>& k) {
    const int w = static_cast<int>(k.size());
    const int oc = in.cols - w + 1, orow = in.rows - w + 1;
    Plane tmp(in.rows, oc);
    for (int r = 0; r < in.rows; ++r)
        for (int c = 0; c < oc; ++c) {
            double acc = 0.0;
            for (int t = 0; t < w; ++t) acc += k[static_cast<std::size_t>(t)] * in.at(r, c + t);
            tmp.at(r, c) = acc;
        }
    Plane out(orow, oc);
    for (int r = 0; r < orow; ++r)
        for (int c = 0; c < oc; ++c) {
            double acc = 0.0;
            for (int t = 0; t < w; ++t) acc += k[static_cast<std::size_t>(t)] * tmp.at(r + t, c);
            out.at(r, c) = acc;
        }
    return out;
}

// Transpose of filter_valid: scatters a (rows-w+1) x (cols-w+1) map back to rows x cols.
inline Plane filter_valid_adjoint(const Plane& g, const std::vector<double>& k, int rows, int cols) {
    const int w = static_cast<int>(k.size());
    Plane tmp(rows, g.cols);
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const double v = g.at(r, c);
            for (int t = 0; t < w; ++t) tmp.at(r + t, c) += k[static_cast<std::size_t>(t)] * v;
        }
    Plane out(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const double v = tmp.at(r, c);
            for (int t = 0; t < w; ++t) out.at(r, c + t) += k[static_cast<std::size_t>(t)] * v;
        }
    return out;
}

inline Plane pool2(const Plane& in) {
    Plane out(in.rows / 2, in.cols / 2);
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c)
            out.at(r, c) = 0.25 * (in.at(2 * r, 2 * c) + in.at(2 * r, 2 * c + 1) + in.at(2 * r + 1, 2 * c) +
                                   in.at(2 * r + 1, 2 * c + 1));
    return out;
}

inline void pool2_adjoint_add(const Plane& g, Plane& into) {
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const double v = 0.25 * g.at(r, c);
            into.at(2 * r, 2 * c) += v;
            into.at(2 * r, 2 * c + 1) += v;
            into.at(2 * r + 1, 2 * c) += v;
            into.at(2 * r + 1, 2 * c + 1) += v;
        }
}

inline Plane product(const Plane& a, const Plane& b) {
    Plane out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

struct ScaleStats {
    double mean = 0.0;  // mean of the cs map (or l*cs map at the last scale)
    Plane grad_x;       // d(mean)/dX at this scale, when requested
};

// Mean contrast-structure (or full SSIM, when with_luminance) over the valid window positions.
inline ScaleStats scale_term(const Plane& X, const Plane& Y, const std::vector<double>& k, double C1, double C2,
                             bool with_luminance, bool want_grad) {
    const Plane mx = filter_valid(X, k), my = filter_valid(Y, k);
    const Plane exx = filter_valid(product(X, X), k);
    const Plane eyy = filter_valid(product(Y, Y), k);
    const Plane exy = filter_valid(product(X, Y), k);
    const std::size_t n = mx.v.size();
    ScaleStats out;
    Plane g_mx, g_exx, g_exy;
    if (want_grad) {
        g_mx = Plane(mx.rows, mx.cols);
        g_exx = Plane(mx.rows, mx.cols);
        g_exy = Plane(mx.rows, mx.cols);
    }
    double sum = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ux = mx.v[i], uy = my.v[i];
        const double sxx = exx.v[i] - ux * ux;
        const double syy = eyy.v[i] - uy * uy;
        const double sxy = exy.v[i] - ux * uy;
        const double A = 2.0 * sxy + C2, B = sxx + syy + C2;
        const double cs = A / B;
        double l = 1.0, P = 0.0, Q = 1.0;
        if (with_luminance) {
            P = 2.0 * ux * uy + C1;
            Q = ux * ux + uy * uy + C1;
            l = P / Q;
        }
        sum += l * cs;
        if (want_grad) {
            const double d_sxy = l * 2.0 / B * inv_n;
            const double d_sxx = -l * A / (B * B) * inv_n;
            double d_ux = -2.0 * ux * d_sxx - uy * d_sxy;
            if (with_luminance) d_ux += cs * (2.0 * uy * Q - P * 2.0 * ux) / (Q * Q) * inv_n;
            g_mx.v[i] = d_ux;
            g_exx.v[i] = d_sxx;
            g_exy.v[i] = d_sxy;
        }
    }
    out.mean = sum * inv_n;
    if (want_grad) {
        const Plane a = filter_valid_adjoint(g_mx, k, X.rows, X.cols);
        const Plane b = filter_valid_adjoint(g_exx, k, X.rows, X.cols);
        const Plane c = filter_valid_adjoint(g_exy, k, X.rows, X.cols);
        out.grad_x = Plane(X.rows, X.cols);
        for (std::size_t i = 0; i < X.v.size(); ++i)
            out.grad_x.v[i] = a.v[i] + 2.0 * X.v[i] * b.v[i] + Y.v[i] * c.v[i];
    }
    return out;
}

}  // namespace detail

/// MS-SSIM similarity of `pred` against `target` (rows x cols, row-major) with
/// dynamic range L. Contrast-structure terms are taken at every scale and the
/// luminance term at the coarsest one only. When grad is non-empty, adds
/// scale * d(similarity)/d(pred) into it.
inline double ms_ssim(std::span<const double> pred, std::span<const double> target, int rows, int cols,
                      const LossConfig& cfg, double dynamic_range, std::span<double> grad = {},
                      double grad_scale = 1.0) {
    cfg.validate();
    RADINV_CHECK(pred.size() == target.size() && pred.size() == static_cast<std::size_t>(rows) * cols,
                 GeometryError, "ms-ssim: shape mismatch");
    RADINV_CHECK(std::min(rows, cols) >= cfg.min_side(), GeometryError,
                 "ms-ssim: images of side " + std::to_string(std::min(rows, cols)) + " are too small for " +
                     std::to_string(cfg.scales) + " scales (need " + std::to_string(cfg.min_side()) + ")");
    const double L = dynamic_range > 0.0 ? dynamic_range : 1.0;
    const double C1 = (cfg.k1 * L) * (cfg.k1 * L);
    const double C2 = (cfg.k2 * L) * (cfg.k2 * L);
    const auto k = detail::window_taps(cfg.window, cfg.window_sigma);
    const bool want_grad = !grad.empty();

    std::vector<detail::Plane> xs, ys;
    xs.emplace_back(rows, cols);
    ys.emplace_back(rows, cols);
    std::copy(pred.begin(), pred.end(), xs[0].v.begin());
    std::copy(target.begin(), target.end(), ys[0].v.begin());
    for (int j = 1; j < cfg.scales; ++j) {
        xs.push_back(detail::pool2(xs.back()));
        ys.push_back(detail::pool2(ys.back()));
    }
    std::vector<detail::ScaleStats> terms;
    for (int j = 0; j < cfg.scales; ++j)
        terms.push_back(detail::scale_term(xs[static_cast<std::size_t>(j)], ys[static_cast<std::size_t>(j)], k, C1,
                                           C2, j == cfg.scales - 1, want_grad));
    double score = 1.0;
    for (const auto& t : terms) score *= t.mean;
    if (!want_grad) return score;

    RADINV_CHECK(grad.size() == pred.size(), GeometryError, "ms-ssim: gradient buffer size mismatch");
    // Coarse-to-fine accumulation through the pooling chain.
    detail::Plane acc;
    for (int j = cfg.scales - 1; j >= 0; --j) {
        double others = grad_scale;
        for (int i = 0; i < cfg.scales; ++i)
            if (i != j) others *= terms[static_cast<std::size_t>(i)].mean;
        const auto& gx = terms[static_cast<std::size_t>(j)].grad_x;
        detail::Plane level(gx.rows, gx.cols);
        for (std::size_t i = 0; i < gx.v.size(); ++i) level.v[i] = others * gx.v[i];
        if (j < cfg.scales - 1) detail::pool2_adjoint_add(acc, level);
        acc = std::move(level);
    }
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += acc.v[i];
    return score;
}

inline double max_value(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, x);
    return m;
}

/// 1 - MS-SSIM, with the dynamic range taken from the target.
inline double ms_ssim_loss(const ImageGrid& pred, const ImageGrid& target, const LossConfig& cfg = {}) {
    RADINV_CHECK(pred.geometry == target.geometry, GeometryError, "ms-ssim: geometry mismatch");
    return 1.0 - ms_ssim(pred.values, target.values, target.geometry.height, target.geometry.width, cfg,
                         max_value(target.values));
}

// ---------------------------------------------------------------------------
// Dynamic balance
// ---------------------------------------------------------------------------

/// Running window of raw loss values used to weight MAE against MS-SSIM.
class AlphaBalancer {
public:
    explicit AlphaBalancer(int window = 100) : window_(window) {
        RADINV_CHECK(window >= 1, ConfigError, "alpha window must be >= 1");
    }

    /// Weight on the MS-SSIM term from the recorded window; 0.5 without history.
    double alpha() const {
        double mae = 0.0, ms = 0.0;
        for (const auto& [a, b] : history_) {
            mae += a;
            ms += b;
        }
        if (history_.empty() || mae + ms == 0.0) return 0.5;
        return mae / (mae + ms);
    }

    void push(double mae, double ms_ssim_loss) {
        history_.emplace_back(mae, ms_ssim_loss);
        while (static_cast<int>(history_.size()) > window_) history_.pop_front();
    }

    int window() const { return window_; }
    const std::deque<std::pair<double, double>>& history() const { return history_; }
    void restore(std::deque<std::pair<double, double>> h) {
        history_ = std::move(h);
        while (static_cast<int>(history_.size()) > window_) history_.pop_front();
    }

private:
    int window_;
    std::deque<std::pair<double, double>> history_;
};

struct BalancedLoss {
    double value = 0.0;
    double mae = 0.0;
    double ms_ssim_loss = 0.0;
    double alpha = 0.5;
};

/// (1 - alpha) MAE + alpha (1 - MS-SSIM), with alpha from the balancer's
/// previous window; then records the current raw losses.
inline BalancedLoss balanced_loss(const ImageGrid& pred, const ImageGrid& target, AlphaBalancer& balancer,
                                  const LossConfig& cfg = {}) {
    BalancedLoss out;
    out.mae = mae_loss(pred, target);
    out.ms_ssim_loss = ms_ssim_loss(pred, target, cfg);
    out.alpha = balancer.alpha();
    out.value = (1.0 - out.alpha) * out.mae + out.alpha * out.ms_ssim_loss;
    balancer.push(out.mae, out.ms_ssim_loss);
    return out;
}

}  // namespace radinv
