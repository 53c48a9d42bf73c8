#pragma once

// Dependency-free artifact writers: 16-bit PGM previews, SVG line plots and
// run manifests with content hashes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "radinv/core.hpp"

namespace radinv {

inline void ensure_parent(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

/// Binary 16-bit PGM, min-max windowed. The window is written to `<path>.txt`.
inline void write_pgm16(const std::filesystem::path& path, std::span<const double> values, int rows, int cols) {
    RADINV_CHECK(rows >= 1 && cols >= 1 && values.size() == static_cast<std::size_t>(rows) * cols, GeometryError,
                 "pgm: value count does not match shape");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : values) {
        if (!std::isfinite(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi >= lo)) lo = hi = 0.0;
    ensure_parent(path);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    RADINV_CHECK(f.good(), DataError, "cannot write " + path.string());
    f << "P5\n" << cols << ' ' << rows << "\n65535\n";
    const double span = hi > lo ? hi - lo : 1.0;
    for (double v : values) {
        const double t = std::isfinite(v) ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.0;
        const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
        const char be[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xFF)};
        f.write(be, 2);
    }
    std::ofstream side(path.string() + ".txt");
    side.precision(17);
    side << "window_min = " << lo << "\nwindow_max = " << hi << '\n';
}

inline void write_pgm16(const std::filesystem::path& path, const ImageGrid& img) {
    write_pgm16(path, img.values, img.geometry.height, img.geometry.width);
}

inline void write_pgm16(const std::filesystem::path& path, const Sinogram& s) {
    write_pgm16(path, s.values, s.geometry.num_angles, s.geometry.num_bins);
}

struct PlotSeries {
    std::string name;
    std::vector<double> x, y;
};

/// Standalone SVG line plot with linear axes and a legend.
inline void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::vector<PlotSeries>& series) {
    constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!(x1 >= x0)) x0 = 0, x1 = 1;
    if (!(y1 >= y0)) y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + (y0 == 0 ? 1 : std::abs(y0));
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    std::ostringstream o;
    o.precision(6);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n"
      << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << xv << "</text>\n"
          << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
    }
    o << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << xlabel << "</text>\n"
      << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << H / 2 << ")\">"
      << ylabel << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* c = colors[s % 6];
        o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i)
            if (std::isfinite(series[s].x[i]) && std::isfinite(series[s].y[i]))
                o << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
        o << "\"/>\n<text x=\"" << W - R - 8 << "\" y=\"" << T + 16 + 16 * s << "\" text-anchor=\"end\" fill=\"" << c
          << "\">" << series[s].name << "</text>\n";
    }
    o << "</svg>\n";
    ensure_parent(path);
    std::ofstream f(path);
    RADINV_CHECK(f.good(), DataError, "cannot write " + path.string());
    f << o.str();
}

/// 64-bit FNV-1a of a file's bytes.
inline std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    RADINV_CHECK(f.good(), DataError, "cannot read " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 14];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

/// Records a subcommand's resolved config and the size and hash of each output.
/// Paths are stored relative to the run directory.
inline void write_manifest(const std::filesystem::path& run_dir, const std::string& command,
                           const std::vector<std::pair<std::string, std::string>>& config,
                           const std::vector<std::filesystem::path>& outputs) {
    std::ostringstream o;
    o << "command = " << command << "\n\n[config]\n";
    for (const auto& [k, v] : config) o << k << " = " << v << '\n';
    o << "\n[outputs]\n";
    for (const auto& p : outputs) {
        char hash[24];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(file_hash(p)));
        o << std::filesystem::relative(p, run_dir).generic_string() << ' ' << std::filesystem::file_size(p) << ' '
          << hash << '\n';
    }
    const auto path = run_dir / "manifests" / (command + ".txt");
    ensure_parent(path);
    std::ofstream f(path);
    RADINV_CHECK(f.good(), DataError, "cannot write " + path.string());
    f << o.str();
}

}  // namespace radinv
