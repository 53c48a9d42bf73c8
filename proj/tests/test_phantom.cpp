#include <gtest/gtest.h>

#include <cmath>

#include "radinv/phantom.hpp"
#include "radinv/projector.hpp"

using namespace radinv;

namespace {

PhantomSpec empty_spec() {
    PhantomSpec s;
    s.num_ellipses_min = s.num_ellipses_max = 0;
    s.background_min = s.background_max = 0.0;
    return s;
}

Sinogram disk_sinogram() {
    PhantomSpec s = empty_spec();
    s.background_min = s.background_max = 1.0;
    s.background_radius_min = s.background_radius_max = 0.8;
    const auto g = ImageGeometry::square(64);
    return forward_project(generate_phantom(s, g, 1), SinogramGeometry{100, 64, 1.0});
}

}  // namespace

TEST(GeneratePhantom, EmptySpecGivesZeroImage) {
    const auto img = generate_phantom(empty_spec(), ImageGeometry::square(32), 5);
    for (double v : img.values) EXPECT_EQ(v, 0.0);
}

TEST(GeneratePhantom, CentredEllipseMatchesAnalyticMembership) {
    const auto g = ImageGeometry::square(64);
    PhantomSpec s = empty_spec();
    s.num_ellipses_min = s.num_ellipses_max = 1;
    s.intensity_min = s.intensity_max = 1.0;
    s.axis_min = s.axis_max = 9.5;
    s.center_jitter = 0.0;
    s.rotation_min = s.rotation_max = 0.0;
    const auto img = generate_phantom(s, g, 3);
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) {
            const double x = c - 31.5, y = 31.5 - r;
            const bool inside = (x * x) / (9.5 * 9.5) + (y * y) / (9.5 * 9.5) <= 1.0;
            EXPECT_EQ(img.at(r, c), inside ? 1.0 : 0.0) << r << "," << c;
        }
}

TEST(GeneratePhantom, AxisAlignedEllipseOracle) {
    const auto g = ImageGeometry::square(64);
    const Ellipse e{0.0, 0.0, 12.0, 5.0, 0.0, 1.0};
    const auto img = rasterize(g, std::span<const Ellipse>(&e, 1));
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) {
            const double x = c - 31.5, y = 31.5 - r;
            const bool inside = (x / 12.0) * (x / 12.0) + (y / 5.0) * (y / 5.0) <= 1.0;
            EXPECT_EQ(img.at(r, c), inside ? 1.0 : 0.0);
        }
}

TEST(GeneratePhantom, DeterministicNonNegativeAndFovBounded) {
    const auto g = ImageGeometry::square(64);
    PhantomSpec s;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto a = generate_phantom(s, g, seed);
        const auto b = generate_phantom(s, g, seed);
        EXPECT_EQ(a.values, b.values);
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c) {
                EXPECT_GE(a.at(r, c), 0.0);
                if (!g.in_fov(r, c)) {
                    EXPECT_EQ(a.at(r, c), 0.0);
                }
            }
    }
    EXPECT_NE(generate_phantom(s, g, 1).values, generate_phantom(s, g, 2).values);
}

TEST(GeneratePhantom, EllipsesStayInsideFov) {
    const auto g = ImageGeometry::square(64);
    PhantomSpec s;
    s.axis_min = 5.0;
    s.axis_max = 14.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed)
        for (const auto& e : sample_ellipses(s, g, seed))
            EXPECT_LE(std::hypot(e.cx, e.cy) + std::max(e.a, e.b), g.fov_radius);
}

TEST(GeneratePhantom, RejectsSpecThatCannotFit) {
    PhantomSpec s;
    s.axis_max = 40.0;
    EXPECT_THROW(generate_phantom(s, ImageGeometry::square(64), 0), ConfigError);
    PhantomSpec neg;
    neg.intensity_min = -1.0;
    EXPECT_THROW(generate_phantom(neg, ImageGeometry::square(64), 0), ConfigError);
}

TEST(PhantomSpec, ParsesKeyValues) {
    const auto kv = KeyValues::parse("phantom.num_ellipses_min = 1\nphantom.axis_max=4.5 # comment\n");
    const auto s = PhantomSpec::from_config(kv);
    EXPECT_EQ(s.num_ellipses_min, 1);
    EXPECT_DOUBLE_EQ(s.axis_max, 4.5);
    EXPECT_TRUE(kv.unused().empty());
}

TEST(ApplyPoisson, SingleBinSupportPreserved) {
    Sinogram s(SinogramGeometry{4, 4, 1.0});
    s.at(2, 1) = 3.0;
    const auto out = apply_poisson(s, 1000.0, 9);
    for (std::size_t i = 0; i < s.values.size(); ++i)
        if (s.values[i] == 0.0) {
            EXPECT_EQ(out.values[i], 0.0);
        }
    EXPECT_NEAR(out.at(2, 1), 1000.0, 5.0 * std::sqrt(1000.0));
}

TEST(ApplyPoisson, TotalWithinFiveSigmaOverSeeds) {
    const auto s = disk_sinogram();
    const double mean = 200000.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto out = apply_poisson(s, mean, seed);
        EXPECT_NEAR(out.total(), mean, 5.0 * std::sqrt(mean));
        for (double v : out.values) {
            EXPECT_GE(v, 0.0);
            EXPECT_EQ(v, std::floor(v));
        }
    }
}

TEST(ApplyPoisson, BinMeanMonteCarlo) {
    const auto s = disk_sinogram();
    const double mean_total = 50000.0;
    const double scale = mean_total / s.total();
    const std::size_t bin = 50 * 64 + 32;
    const double expected = s.values[bin] * scale;
    double acc = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) acc += apply_poisson(s, mean_total, seed).values[bin];
    EXPECT_NEAR(acc / 1000.0, expected, 5.0 * std::sqrt(expected) / std::sqrt(1000.0));
}

TEST(ApplyPoisson, Errors) {
    Sinogram zero(SinogramGeometry{3, 3, 1.0});
    EXPECT_THROW(apply_poisson(zero, 10.0, 0), NumericError);
    Sinogram one(SinogramGeometry{3, 3, 1.0}, 1.0);
    EXPECT_THROW(apply_poisson(one, 0.0, 0), ConfigError);
}

TEST(ThinCounts, FractionOneIsIdentity) {
    const auto counts = apply_poisson(disk_sinogram(), 20000.0, 4);
    EXPECT_EQ(thin_counts(counts, 1.0, 11).values, counts.values);
}

TEST(ThinCounts, BinomialBand) {
    Sinogram s(SinogramGeometry{1, 1, 1.0});
    s.values[0] = 1000.0;
    const double sigma = std::sqrt(1000.0 * 0.25);
    for (std::uint64_t seed = 0; seed < 50; ++seed)
        EXPECT_NEAR(thin_counts(s, 0.5, seed).values[0], 500.0, 5.0 * sigma);
}

TEST(ThinCounts, ComplementarySplitsRestoreTotals) {
    const auto counts = apply_poisson(disk_sinogram(), 20000.0, 4);
    double kept_sum = 0.0;
    const int trials = 200;
    for (int seed = 0; seed < trials; ++seed) {
        const auto [kept, removed] = split_counts(counts, 0.5, static_cast<std::uint64_t>(seed));
        for (std::size_t i = 0; i < counts.values.size(); ++i) {
            ASSERT_EQ(kept.values[i] + removed.values[i], counts.values[i]);
            ASSERT_LE(kept.values[i], counts.values[i]);
        }
        kept_sum += kept.total();
    }
    const double total = counts.total();
    EXPECT_NEAR(kept_sum / trials, 0.5 * total, 5.0 * std::sqrt(total * 0.25) / std::sqrt(trials));
}

TEST(ThinCounts, Errors) {
    Sinogram s(SinogramGeometry{1, 2, 1.0});
    s.values = {3.0, 1.5};
    EXPECT_THROW(thin_counts(s, 0.5, 0), DataError);
    s.values = {3.0, 1.0};
    EXPECT_THROW(thin_counts(s, 0.0, 0), ConfigError);
    EXPECT_THROW(thin_counts(s, 1.5, 0), ConfigError);
}

TEST(StratifiedBlobs, CoverFovAndStayDeterministic) {
    const auto g = ImageGeometry::square(32);
    const auto a = stratified_blob_phantoms(g, 200, 1.5, 2.0, 4);
    const auto b = stratified_blob_phantoms(g, 200, 1.5, 2.0, 4);
    ASSERT_EQ(a.size(), 200u);
    std::vector<int> cover(g.size(), 0);
    int empty = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].values, b[i].values);
        int support = 0;
        for (std::size_t p = 0; p < g.size(); ++p) {
            support += a[i].values[p] > 0.0;
            cover[p] += a[i].values[p] > 0.0;
        }
        empty += support == 0;
    }
    // Rim cells may place a disk just outside the FOV.
    EXPECT_LE(empty, 10);
    for (const auto& p : fov_pixel_list(g)) EXPECT_GT(cover[static_cast<std::size_t>(p.row) * 32 + p.col], 0);
    EXPECT_EQ(stratified_blob_phantoms(g, 1, 1.0, 1.0, 1).size(), 1u);
    EXPECT_THROW(stratified_blob_phantoms(g, 0, 1.0, 1.0, 1), ConfigError);
}
