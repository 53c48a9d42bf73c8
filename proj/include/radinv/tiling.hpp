#pragma once

// Square patch tiling of the field of view and per-patch sinogram masks.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "radinv/core.hpp"
#include "radinv/projector.hpp"
#include "radinv/tensor_io.hpp"

namespace radinv {

using PixelBox = Projector::Box;

struct Patch {
    int id = 0;
    int tile_row = 0, tile_col = 0;
    /// Flat row-major pixel indices, all inside the FOV.
    std::vector<std::size_t> pixels;
    /// Tight bounding box of `pixels`.
    PixelBox box;
};

struct PatchTiling {
    ImageGeometry geometry;
    int patch_size = 0;
    std::vector<Patch> patches;

    std::size_t num_pixels() const {
        std::size_t n = 0;
        for (const auto& p : patches) n += p.pixels.size();
        return n;
    }
};

/// Row-major tiling of the image square into patch_size blocks, each clipped to
/// the FOV. Blocks with no FOV pixel are dropped; ids are consecutive.
inline PatchTiling tile_patches(const ImageGeometry& g, int patch_size) {
    g.validate();
    RADINV_CHECK(patch_size >= 1 && patch_size <= g.width, ConfigError,
                 "patch size must lie in [1, width], got " + std::to_string(patch_size));
    PatchTiling t;
    t.geometry = g;
    t.patch_size = patch_size;
    const int tiles = (g.width + patch_size - 1) / patch_size;
    for (int tr = 0; tr < tiles; ++tr)
        for (int tc = 0; tc < tiles; ++tc) {
            Patch p;
            p.tile_row = tr;
            p.tile_col = tc;
            p.box = PixelBox{g.height, -1, g.width, -1};
            for (int r = tr * patch_size; r < std::min(g.height, (tr + 1) * patch_size); ++r)
                for (int c = tc * patch_size; c < std::min(g.width, (tc + 1) * patch_size); ++c) {
                    if (!g.in_fov(r, c)) continue;
                    p.pixels.push_back(static_cast<std::size_t>(r) * g.width + c);
                    p.box.r0 = std::min(p.box.r0, r);
                    p.box.r1 = std::max(p.box.r1, r);
                    p.box.c0 = std::min(p.box.c0, c);
                    p.box.c1 = std::max(p.box.c1, c);
                }
            if (p.pixels.empty()) continue;
            p.id = static_cast<int>(t.patches.size());
            t.patches.push_back(std::move(p));
        }
    return t;
}

struct SinogramMask {
    int patch_id = 0;
    SinogramGeometry geometry;
    std::vector<std::uint8_t> bits;
    /// Flat indices of the true entries, ascending (row-major).
    std::vector<std::uint32_t> surviving;

    std::size_t count() const { return surviving.size(); }

    static SinogramMask from_bits(int patch_id, const SinogramGeometry& g, std::vector<std::uint8_t> bits) {
        RADINV_CHECK(bits.size() == g.size(), GeometryError, "mask: bit array does not match sinogram geometry");
        SinogramMask m;
        m.patch_id = patch_id;
        m.geometry = g;
        m.bits = std::move(bits);
        for (std::size_t i = 0; i < m.bits.size(); ++i) {
            if (m.bits[i]) {
                m.bits[i] = 1;
                m.surviving.push_back(static_cast<std::uint32_t>(i));
            }
        }
        return m;
    }

    static SinogramMask from_bins(int patch_id, const SinogramGeometry& g, const std::vector<std::uint32_t>& bins) {
        std::vector<std::uint8_t> bits(g.size(), 0);
        for (auto b : bins) {
            RADINV_CHECK(b < g.size(), DataError, "mask: bin index out of range");
            bits[b] = 1;
        }
        return from_bits(patch_id, g, std::move(bits));
    }

    static SinogramMask all(int patch_id, const SinogramGeometry& g) {
        return from_bits(patch_id, g, std::vector<std::uint8_t>(g.size(), 1));
    }
};

/// Stores masks as a [num_patches, max_bins] tensor of bin indices padded with -1.
inline void write_masks(const std::filesystem::path& path, const std::vector<SinogramMask>& masks) {
    std::size_t width = 0;
    for (const auto& m : masks) width = std::max(width, m.count());
    RADINV_CHECK(width < (1u << 24), DataError, "mask too large for float32 index payload");
    std::vector<float> payload(masks.size() * width, -1.0f);
    for (std::size_t p = 0; p < masks.size(); ++p)
        for (std::size_t i = 0; i < masks[p].count(); ++i)
            payload[p * width + i] = static_cast<float>(masks[p].surviving[i]);
    const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(masks.size()), static_cast<std::uint32_t>(width)};
    write_tensor(path, dims, payload);
}

inline std::vector<SinogramMask> read_masks(const std::filesystem::path& path, const SinogramGeometry& g) {
    const Tensor t = read_tensor(path);
    RADINV_CHECK(t.dims.size() == 2, DataError, "mask file " + path.string() + " must have rank 2");
    std::vector<SinogramMask> out;
    for (std::uint32_t p = 0; p < t.dims[0]; ++p) {
        std::vector<std::uint32_t> bins;
        for (std::uint32_t i = 0; i < t.dims[1]; ++i) {
            const float v = t.values[static_cast<std::size_t>(p) * t.dims[1] + i];
            if (v < 0.0f) break;
            RADINV_CHECK(v == std::floor(v), DataError, "mask file holds a non-integer bin index");
            bins.push_back(static_cast<std::uint32_t>(v));
        }
        out.push_back(SinogramMask::from_bins(static_cast<int>(p), g, bins));
    }
    return out;
}

/// CSV manifest: patch_id, bin count, parameter count.
inline void write_mask_manifest(const std::filesystem::path& path, const PatchTiling& tiling,
                                const std::vector<SinogramMask>& masks) {
    RADINV_CHECK(masks.size() == tiling.patches.size(), GeometryError, "mask count does not match tiling");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    RADINV_CHECK(f.good(), DataError, "cannot write " + path.string());
    f << "patch_id,bins,parameters\n";
    for (std::size_t p = 0; p < masks.size(); ++p)
        f << p << ',' << masks[p].count() << ',' << masks[p].count() * tiling.patches[p].pixels.size() << '\n';
}

}  // namespace radinv
