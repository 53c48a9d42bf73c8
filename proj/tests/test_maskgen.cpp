#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "radinv/maskgen.hpp"
#include "radinv/phantom.hpp"

using namespace radinv;

namespace {

const ImageGeometry kImg = ImageGeometry::square(64);
const SinogramGeometry kSino{100, 64, 1.0};

// Band of half-width `hw` bins around the sinusoid of a point at radius r, angle phi.
std::vector<std::uint8_t> sinusoid_band(const SinogramGeometry& sg, double r, double phi, double hw) {
    std::vector<std::uint8_t> band(sg.size(), 0);
    for (int a = 0; a < sg.num_angles; ++a)
        for (int b = 0; b < sg.num_bins; ++b)
            band[static_cast<std::size_t>(a) * sg.num_bins + b] =
                std::abs(sg.offset(b) - r * std::cos(sg.angle(a) - phi)) <= hw;
    return band;
}

std::vector<double> salted(const std::vector<std::uint8_t>& band, double fraction, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::vector<double> v(band.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (band[i] || uniform(rng, 0.0, 1.0) < fraction) ? 1.0 : 0.0;
    return v;
}

double iou(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += a[i] && b[i];
        uni += a[i] || b[i];
    }
    return uni ? static_cast<double>(inter) / uni : 1.0;
}

ImageGrid box_indicator(const ImageGeometry& g, const PixelBox& b) {
    ImageGrid img(g);
    for (int r = b.r0; r <= b.r1; ++r)
        for (int c = b.c0; c <= b.c1; ++c) img.at(r, c) = 1.0;
    return img;
}

}  // namespace

TEST(TilePatches, FullWidthPatchIsWholeFov) {
    const auto t = tile_patches(kImg, 64);
    ASSERT_EQ(t.patches.size(), 1u);
    EXPECT_EQ(t.patches[0].pixels.size(), fov_pixel_list(kImg).size());
}

TEST(TilePatches, FullScaleGridFortyPixelPatches) {
    const auto t = tile_patches(ImageGeometry::square(200), 40);
    EXPECT_GE(t.patches.size(), 21u);
    EXPECT_LE(t.patches.size(), 28u);
}

TEST(TilePatches, PartitionFovExactly) {
    for (int ps : {1, 5, 7, 16, 23, 64}) {
        const auto t = tile_patches(kImg, ps);
        std::set<std::size_t> seen;
        std::size_t total = 0;
        for (const auto& p : t.patches) {
            EXPECT_FALSE(p.pixels.empty());
            for (auto px : p.pixels) {
                seen.insert(px);
                ++total;
                const int r = static_cast<int>(px) / 64, c = static_cast<int>(px) % 64;
                EXPECT_EQ(r / ps, p.tile_row);
                EXPECT_EQ(c / ps, p.tile_col);
            }
        }
        std::set<std::size_t> fov;
        for (const auto& q : fov_pixel_list(kImg)) fov.insert(static_cast<std::size_t>(q.row) * 64 + q.col);
        EXPECT_EQ(total, seen.size()) << "patch size " << ps;
        EXPECT_EQ(seen, fov) << "patch size " << ps;
    }
}

TEST(TilePatches, RejectsBadSize) {
    EXPECT_THROW(tile_patches(kImg, 0), ConfigError);
    EXPECT_THROW(tile_patches(kImg, 65), ConfigError);
}

TEST(LiThreshold, TwoClassFixtureMatchesFixedPointOracle) {
    std::vector<double> v;
    for (int i = 0; i < 500; ++i) {
        v.push_back(1.0);
        v.push_back(std::exp(1.0));
    }
    // Direct iteration on the raw values.
    double t = 0.0;
    for (double x : v) t += x;
    t /= v.size();
    for (int it = 0; it < 100; ++it) {
        double sa = 0, sb = 0;
        int na = 0, nb = 0;
        for (double x : v) (x > t ? (sa += x, ++na) : (sb += x, ++nb));
        const double next = (sa / na - sb / nb) / (std::log(sa / na) - std::log(sb / nb));
        if (std::abs(next - t) < 1e-9) break;
        t = next;
    }
    EXPECT_NEAR(li_threshold(v), t, 1e-3);
    EXPECT_NEAR(li_threshold(v), std::exp(1.0) - 1.0, 1e-3);
}

TEST(LiThreshold, ConstantInputIsAnError) {
    EXPECT_THROW(li_threshold(std::vector<double>(10, 2.0)), NumericError);
    EXPECT_THROW(li_threshold(std::vector<double>{1.0, -1.0}), DataError);
}

TEST(LiThreshold, BracketedByExtremes) {
    Rng rng = make_rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(200);
        for (auto& x : v) x = std::pow(uniform(rng, 0.0, 1.0), 1 + trial % 4) * (1 + trial);
        const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
        const double t = li_threshold(v);
        EXPECT_GT(t, lo);
        EXPECT_LT(t, hi);
    }
}

TEST(RefineMap, CleanBandRecoveredExactly) {
    const SinogramGeometry sg{40, 64, 1.0};
    std::vector<std::uint8_t> band(sg.size(), 0);
    std::vector<double> map(sg.size(), 0.0);
    for (int a = 0; a < sg.num_angles; ++a)
        for (int b = 26; b <= 37; ++b) {
            band[static_cast<std::size_t>(a) * 64 + b] = 1;
            map[static_cast<std::size_t>(a) * 64 + b] = 3.0;
        }
    const MaskRefineConfig cfg{0.25, 1};
    EXPECT_EQ(refine_map(map, sg, cfg), band);
}

TEST(RefineMap, SaltNoiseBandIouAtLeastPointEight) {
    // As wide as the summed support of a 16-pixel patch.
    const auto band = sinusoid_band(kSino, 12.0, 0.7, 16.0);
    const auto bits = refine_map(salted(band, 0.05, 1), kSino, MaskRefineConfig{});
    EXPECT_GE(iou(bits, band), 0.8);
}

TEST(RefineMap, LargerDiskNeverAddsComponents) {
    const auto band = sinusoid_band(kSino, 12.0, 0.7, 10.0);
    const auto noisy = salted(band, 0.05, 2);
    int prev = std::numeric_limits<int>::max();
    for (int radius = 1; radius <= 8; ++radius) {
        const auto bits = refine_map(noisy, kSino, MaskRefineConfig{4.0, radius});
        const int n = count_components(bits, kSino.num_angles, kSino.num_bins);
        EXPECT_LE(n, prev) << "radius " << radius;
        prev = n;
    }
}

TEST(RefineMap, InvariantToPositiveRescaling) {
    const auto noisy = salted(sinusoid_band(kSino, 8.0, 2.0, 9.0), 0.05, 3);
    const auto ref = refine_map(noisy, kSino, MaskRefineConfig{});
    for (double c : {0.01, 7.5, 1e4}) {
        auto scaled = noisy;
        for (auto& v : scaled) v *= c;
        EXPECT_EQ(refine_map(scaled, kSino, MaskRefineConfig{}), ref) << "scale " << c;
    }
}

TEST(RefineMap, ConstantMapIsDegenerate) {
    EXPECT_THROW(refine_map(std::vector<double>(kSino.size(), 1.0), kSino, MaskRefineConfig{}), NumericError);
    EXPECT_THROW(refine_map(std::vector<double>(kSino.size(), 1.0), kSino, MaskRefineConfig{0.0, 8}), ConfigError);
}

TEST(ProjectMask, FullImageMatchesFovProjectionSupport) {
    const auto t = tile_patches(kImg, 64);
    const auto m = project_mask(t, 0, kSino, 0);
    ImageGrid fov(kImg);
    for (const auto& p : fov_pixel_list(kImg)) fov.at(p.row, p.col) = 1.0;
    const auto s = forward_project(fov, kSino);
    std::size_t extra = 0;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
        if (s.values[i] > 0.0) {
            EXPECT_TRUE(m.bits[i]) << "bin " << i;
        }
        extra += m.bits[i] && !(s.values[i] > 0.0);
    }
    EXPECT_EQ(extra, 0u);
}

TEST(ProjectMask, MatchesForwardProjectionOfDilatedBox) {
    const auto t = tile_patches(kImg, 16);
    const Projector P(kImg, kSino);
    for (const auto& p : t.patches) {
        const auto m = project_mask(t, p.id, kSino, 2);
        const auto s = P.forward(box_indicator(kImg, dilate_box(p.box, 2, kImg)));
        for (std::size_t i = 0; i < s.values.size(); ++i) ASSERT_EQ(m.bits[i] != 0, s.values[i] > 0.0);
        EXPECT_FALSE(m.surviving.empty());
    }
}

TEST(ProjectMask, CentredPatchGivesBandAroundZeroOffset) {
    const auto g = ImageGeometry::square(24);
    const SinogramGeometry sg{30, 24, 1.0};
    const auto t = tile_patches(g, 8);
    const auto& centre = t.patches[4];
    ASSERT_EQ(centre.tile_row, 1);
    ASSERT_EQ(centre.tile_col, 1);
    const auto m = project_mask(t, centre.id, sg, 0);
    const double reach = 4.0 * std::sqrt(2.0) + 1.5;
    for (int a = 0; a < sg.num_angles; ++a) {
        EXPECT_TRUE(m.bits[static_cast<std::size_t>(a) * 24 + 11]);
        EXPECT_TRUE(m.bits[static_cast<std::size_t>(a) * 24 + 12]);
        for (int b = 0; b < 24; ++b)
            if (m.bits[static_cast<std::size_t>(a) * 24 + b]) {
                EXPECT_LE(std::abs(sg.offset(b)), reach);
            }
    }
}

TEST(ProjectMask, BufferMonotone) {
    const auto t = tile_patches(kImg, 16);
    for (const auto& p : t.patches) {
        auto prev = project_mask(t, p.id, kSino, 0);
        for (int buffer = 1; buffer <= 4; ++buffer) {
            const auto m = project_mask(t, p.id, kSino, buffer);
            for (std::size_t i = 0; i < m.bits.size(); ++i)
                if (prev.bits[i]) {
                    ASSERT_TRUE(m.bits[i]) << "patch " << p.id << " buffer " << buffer;
                }
            prev = m;
        }
    }
    EXPECT_THROW(project_mask(t, 0, kSino, -1), ConfigError);
}

TEST(CountParameters, MatchesRecountAndTableTrend) {
    const auto fov = fov_pixel_list(kImg).size();
    for (int ps : {8, 16, 32, 64}) {
        const auto t = tile_patches(kImg, ps);
        const auto masks = projection_masks(t, kSino, 0);
        const auto c = count_parameters(t, masks);
        std::size_t recount = 0;
        for (std::size_t p = 0; p < masks.size(); ++p) {
            std::size_t bins = 0;
            for (auto b : masks[p].bits) bins += b;
            recount += bins * t.patches[p].pixels.size();
        }
        EXPECT_EQ(c.total, recount);
        EXPECT_EQ(c.dense, kSino.size() * fov);
        EXPECT_LE(c.total, c.dense);
        if (ps == 16) {
            EXPECT_LT(c.total, c.dense);
        }
        EXPECT_GE(c.mask_count * static_cast<std::size_t>(ps * ps), fov);
    }
}

TEST(CountParameters, EmptyMaskContributesZero) {
    const auto t = tile_patches(kImg, 32);
    auto masks = projection_masks(t, kSino, 0);
    masks[1] = SinogramMask::from_bits(1, kSino, std::vector<std::uint8_t>(kSino.size(), 0));
    const auto c = count_parameters(t, masks);
    EXPECT_EQ(c.per_patch[1], 0u);
}

TEST(CountParameters, FullScaleDenseArithmetic) {
    const std::size_t bins = 200 * 168;
    EXPECT_EQ(bins * 31415u, 1055544000u);
}

TEST(BandFraction, ProjectorColumnsAreFullyInBand) {
    const auto g = ImageGeometry::square(32);
    const SinogramGeometry sg{40, 32, 1.0};
    auto layer = make_dense_layer(g, sg);
    const Projector P(g, sg);
    const auto& pix = layer.tiling().patches[0].pixels;
    for (std::size_t i = 0; i < pix.size(); ++i) {
        ImageGrid d(g);
        d.values[pix[i]] = 1.0;
        const auto s = P.forward(d);
        std::copy(s.values.begin(), s.values.end(), layer.weights()[0].begin() + i * sg.size());
    }
    const auto atlas = ActivationAtlas::from_layer(layer);
    for (auto px : pix) EXPECT_DOUBLE_EQ(sinusoid_band_fraction(atlas, px, 3.0), 1.0);
}

TEST(TrainDenseLayer, SinglePairLossDecreases) {
    const auto g = ImageGeometry::square(12);
    const SinogramGeometry sg{16, 12, 1.0};
    ImageGrid x(g);
    x.at(5, 6) = 1.0;
    std::vector<std::pair<Sinogram, ImageGrid>> pairs{{forward_project(x, sg), x}};
    DenseTrainConfig cfg;
    cfg.epochs = 10;
    cfg.learning_rate = 0.5;
    cfg.batch_size = 1;
    const auto res = train_dense_layer(pairs, cfg);
    ASSERT_EQ(res.epoch_loss.size(), 11u);
    for (std::size_t e = 1; e < res.epoch_loss.size(); ++e) EXPECT_LT(res.epoch_loss[e], res.epoch_loss[e - 1]);
}

TEST(TrainDenseLayer, ZeroTargetsShrinkRandomWeights) {
    const auto g = ImageGeometry::square(12);
    const SinogramGeometry sg{16, 12, 1.0};
    std::vector<std::pair<Sinogram, ImageGrid>> pairs;
    for (int i = 0; i < 4; ++i) pairs.emplace_back(Sinogram(sg, 1.0 + i), ImageGrid(g));
    DenseTrainConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 0.05;
    cfg.zero_init = false;
    const auto res = train_dense_layer(pairs, cfg);
    EXPECT_LT(res.epoch_loss.back(), 0.5 * res.epoch_loss.front());
}

TEST(TrainDenseLayer, DivergenceReportsIteration) {
    const auto g = ImageGeometry::square(12);
    const SinogramGeometry sg{16, 12, 1.0};
    std::vector<std::pair<Sinogram, ImageGrid>> pairs{{Sinogram(sg, 1e30), ImageGrid(g, 1.0)}};
    DenseTrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 1e30;
    cfg.batch_size = 1;
    try {
        train_dense_layer(pairs, cfg);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("iteration"), std::string::npos);
    }
}

TEST(MaskFiles, RoundTripWithManifest) {
    const auto t = tile_patches(kImg, 16);
    const auto masks = projection_masks(t, kSino, 1);
    const auto dir = std::filesystem::temp_directory_path() / "radinv_test_maskgen";
    write_masks(dir / "masks.dpt", masks);
    write_mask_manifest(dir / "masks.csv", t, masks);
    const auto back = read_masks(dir / "masks.dpt", kSino);
    ASSERT_EQ(back.size(), masks.size());
    for (std::size_t p = 0; p < masks.size(); ++p) EXPECT_EQ(back[p].bits, masks[p].bits);
    const auto tensor = read_tensor(dir / "masks.dpt");
    EXPECT_EQ(tensor.dims[0], masks.size());
}
