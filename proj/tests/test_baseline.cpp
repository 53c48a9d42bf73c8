#include <gtest/gtest.h>

#include <cmath>

#include "radinv/baseline.hpp"
#include "radinv/objective.hpp"
#include "radinv/phantom.hpp"

using namespace radinv;

namespace {

ImageGrid disk_image(const ImageGeometry& g, double radius, double value = 1.0, double cx = 0.0, double cy = 0.0) {
    const Ellipse e{cx, cy, radius, radius, 0.0, value};
    return rasterize(g, std::span<const Ellipse>(&e, 1));
}

ImageGrid random_fov_image(const ImageGeometry& g, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    ImageGrid img(g);
    for (int r = 0; r < g.height; ++r)
        for (int c = 0; c < g.width; ++c)
            if (g.in_fov(r, c)) img.at(r, c) = uniform(rng, 0.2, 2.0);
    return img;
}

// Dense system matrix built column by column from unit images: A[bin][pixel].
std::vector<std::vector<double>> dense_system(const Projector& P) {
    const auto& ig = P.image_geometry();
    const auto& sg = P.sinogram_geometry();
    std::vector<std::vector<double>> A(sg.size(), std::vector<double>(ig.size(), 0.0));
    for (std::size_t j = 0; j < ig.size(); ++j) {
        ImageGrid e(ig);
        e.values[j] = 1.0;
        const auto col = P.forward(e);
        for (std::size_t i = 0; i < sg.size(); ++i) A[i][j] = col.values[i];
    }
    return A;
}

}  // namespace

TEST(Osem, NoiselessProjectionIsFixedPoint) {
    const auto g = ImageGeometry::square(32);
    const SinogramGeometry sg{24, 32, 1.0};
    const auto x = random_fov_image(g, 3);
    for (int subsets : {1, 4}) {
        const OsemReconstructor em(g, sg, EmConfig{1, subsets, 0.0, 1.0});
        const auto y = em.projector().forward(x);
        ImageGrid u = x;
        em.iterate(u, y);
        for (std::size_t i = 0; i < u.values.size(); ++i)
            EXPECT_NEAR(u.values[i], x.values[i], 1e-10 * std::max(1.0, x.values[i])) << "subsets " << subsets;
    }
}

TEST(Osem, MatchesDenseMatrixOracle) {
    const ImageGeometry g{4, 4, 1.0, 2.0};
    const SinogramGeometry sg{8, 6, 1.0};
    const OsemReconstructor em(g, sg, EmConfig{1, 1, 0.0, 1.0});
    const auto A = dense_system(em.projector());
    Sinogram y(sg);
    Rng rng = make_rng(8);
    for (auto& v : y.values) v = std::floor(uniform(rng, 0.0, 20.0));

    // x1 = x0 / (A^T 1) * A^T (y / A x0) restricted to the field of view.
    const auto fov = fov_mask(g);
    std::vector<double> x0(g.size());
    for (std::size_t j = 0; j < x0.size(); ++j) x0[j] = fov[j] ? 1.0 : 0.0;
    std::vector<double> ax(sg.size(), 0.0), sens(g.size(), 0.0), corr(g.size(), 0.0);
    for (std::size_t i = 0; i < sg.size(); ++i)
        for (std::size_t j = 0; j < g.size(); ++j) ax[i] += A[i][j] * x0[j];
    for (std::size_t i = 0; i < sg.size(); ++i)
        for (std::size_t j = 0; j < g.size(); ++j) {
            sens[j] += A[i][j];
            if (ax[i] > 0.0) corr[j] += A[i][j] * y.values[i] / ax[i];
        }
    ImageGrid got = em.initial_image();
    em.iterate(got, y);
    for (std::size_t j = 0; j < g.size(); ++j) {
        const double expected = (fov[j] && sens[j] > 0.0) ? x0[j] * corr[j] / sens[j] : 0.0;
        EXPECT_NEAR(got.values[j], expected, 1e-8) << "pixel " << j;
    }
}

TEST(Osem, SingleSubsetEqualsMlem) {
    const auto g = ImageGeometry::square(32);
    const SinogramGeometry sg{30, 32, 1.0};
    const Projector P(g, sg);
    const auto y = apply_poisson(P.forward(disk_image(g, 9.0)), 30000.0, 2);
    const auto got = OsemReconstructor(g, sg, EmConfig{5, 1, 0.0, 1.0}).reconstruct(y);

    const auto fov = fov_mask(g);
    const auto sens = P.back(Sinogram(sg, 1.0));
    ImageGrid x(g);
    for (std::size_t j = 0; j < x.values.size(); ++j) x.values[j] = fov[j] ? 1.0 : 0.0;
    for (int it = 0; it < 5; ++it) {
        auto est = P.forward(x);
        for (std::size_t i = 0; i < est.values.size(); ++i)
            est.values[i] = est.values[i] > 0.0 ? y.values[i] / est.values[i] : 0.0;
        const auto c = P.back(est);
        for (std::size_t j = 0; j < x.values.size(); ++j)
            x.values[j] = (fov[j] && sens.values[j] > 0.0) ? x.values[j] * c.values[j] / sens.values[j] : 0.0;
    }
    for (std::size_t j = 0; j < x.values.size(); ++j) EXPECT_NEAR(got.values[j], x.values[j], 1e-12);
}

TEST(Osem, LogLikelihoodNonDecreasing) {
    const auto g = ImageGeometry::square(32);
    const SinogramGeometry sg{30, 32, 1.0};
    const OsemReconstructor em(g, sg, EmConfig{1, 1, 0.0, 1.0});
    const auto y = apply_poisson(em.projector().forward(disk_image(g, 10.0)), 20000.0, 5);
    ImageGrid x = em.initial_image();
    double prev = poisson_log_likelihood(y, em.projector().forward(x));
    for (int it = 0; it < 20; ++it) {
        em.iterate(x, y);
        const double ll = poisson_log_likelihood(y, em.projector().forward(x));
        EXPECT_GE(ll, prev - 1e-9 * std::abs(prev)) << "iteration " << it;
        prev = ll;
    }
}

TEST(Osem, NonNegativeOnRandomCounts) {
    const auto g = ImageGeometry::square(24);
    const SinogramGeometry sg{16, 24, 1.0};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Sinogram y(sg);
        Rng rng = make_rng(seed, 4);
        for (auto& v : y.values) v = std::floor(uniform(rng, 0.0, 6.0));
        const auto x = osem_reconstruct(y, g, EmConfig{4, 4, 1.0, 1.0});
        for (double v : x.values) {
            EXPECT_GE(v, 0.0);
            EXPECT_TRUE(std::isfinite(v));
        }
    }
}

TEST(Osem, NoiselessDiskReachesHighSimilarity) {
    const auto g = ImageGeometry::square(64);
    const SinogramGeometry sg{100, 64, 1.0};
    const auto truth = disk_image(g, 20.0);
    const auto y = forward_project(truth, sg);
    const auto x = osem_reconstruct(y, g, EmConfig{50, 1, 0.0, 1.0});
    const double sim = 1.0 - ms_ssim_loss(x, truth);
    EXPECT_GE(sim, 0.90);
}

TEST(Osem, RejectsBadInput) {
    const auto g = ImageGeometry::square(16);
    const SinogramGeometry sg{8, 16, 1.0};
    EXPECT_THROW(OsemReconstructor(g, sg, EmConfig{1, 9, 0.0, 1.0}), ConfigError);
    EXPECT_THROW(OsemReconstructor(g, sg, EmConfig{-1, 1, 0.0, 1.0}), ConfigError);
    Sinogram neg(sg, 1.0);
    neg.values[3] = -1.0;
    EXPECT_THROW(osem_reconstruct(neg, g, EmConfig{1, 1, 0.0, 1.0}), DataError);
    EXPECT_THROW(osem_reconstruct(Sinogram(SinogramGeometry{8, 10, 1.0}), g, EmConfig{}).values.size(),
                 GeometryError);
}

TEST(AngleSubsets, InterleavedPartition) {
    const auto s = angle_subsets(10, 3);
    ASSERT_EQ(s.size(), 3u);
    EXPECT_EQ(s[0], (std::vector<int>{0, 3, 6, 9}));
    EXPECT_EQ(s[2], (std::vector<int>{2, 5, 8}));
}

TEST(Fbp, ZeroSinogramZeroImage) {
    const auto g = ImageGeometry::square(32);
    const auto img = fbp_reconstruct(Sinogram(SinogramGeometry{40, 32, 1.0}), g, FbpFilter::Ramp);
    for (double v : img.values) EXPECT_EQ(v, 0.0);
}

TEST(Fbp, DiskInteriorMeanWithinTenPercent) {
    const auto g = ImageGeometry::square(64);
    const SinogramGeometry sg{120, 64, 1.0};
    const auto s = forward_project(disk_image(g, 16.0, 2.0), sg);
    for (auto f : {FbpFilter::Ramp, FbpFilter::Hann}) {
        const auto img = fbp_reconstruct(s, g, f);
        double sum = 0.0;
        int n = 0;
        for (int r = 0; r < 64; ++r)
            for (int c = 0; c < 64; ++c)
                if (std::hypot(g.x_of(c), g.y_of(r)) < 12.0) {
                    sum += img.at(r, c);
                    ++n;
                }
        EXPECT_NEAR(sum / n, 2.0, 0.2);
    }
}

TEST(Fbp, PointSourcePeakAtSource) {
    const auto g = ImageGeometry::square(64);
    const SinogramGeometry sg{120, 64, 1.0};
    const auto src = disk_image(g, 1.6, 5.0, 10.5, -6.5);
    const auto img = fbp_reconstruct(forward_project(src, sg), g, FbpFilter::Ramp);
    std::size_t best = 0;
    for (std::size_t i = 1; i < img.values.size(); ++i)
        if (img.values[i] > img.values[best]) best = i;
    const int r = static_cast<int>(best) / 64, c = static_cast<int>(best) % 64;
    EXPECT_LE(std::hypot(g.x_of(c) - 10.5, g.y_of(r) + 6.5), 1.5);
}

TEST(Fbp, FilterNames) {
    EXPECT_EQ(parse_fbp_filter("ramp"), FbpFilter::Ramp);
    EXPECT_EQ(parse_fbp_filter("hann"), FbpFilter::Hann);
    EXPECT_THROW(parse_fbp_filter("shepp"), ConfigError);
}
