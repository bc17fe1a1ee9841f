#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "mproto/error.hpp"
#include "mproto/mask_partition.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace mproto;
using mproto::testing::mask_from;
using mproto::testing::random_mask;
using mproto::testing::oracle_split;

namespace {

void expect_valid_partition(const BinaryMask& mask, const Partition& p, int n) {
    ASSERT_EQ(p.parts.size(), static_cast<std::size_t>(n));
    ASSERT_EQ(p.centers.size(), static_cast<std::size_t>(n));
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            int owners = 0;
            for (const auto& part : p.parts) {
                owners += part.at(y, x);
            }
            EXPECT_EQ(owners, mask.at(y, x) ? 1 : 0) << "pixel " << x << "," << y;
        }
    }
    for (int k = 0; k < n; ++k) {
        EXPECT_GT(p.parts[k].foreground_count(), 0u);
        EXPECT_TRUE(p.parts[k].at(p.centers[k].y, p.centers[k].x)) << "center " << k << " outside its part";
    }
}

}  // namespace

TEST(MSplitting, SingleCenterOwnsEverything) {
    std::mt19937_64 rng(11);
    const BinaryMask m = random_mask(rng, 9, 7, 0.4);
    const Partition p = m_splitting(m, 1, 3);
    ASSERT_EQ(p.parts.size(), 1u);
    EXPECT_EQ(p.parts[0], m);
}

TEST(MSplitting, FourByFourTwoCenters) {
    const BinaryMask m(4, 4, 1);
    const Partition p = m_splitting_from(m, 2, {0, 0});
    ASSERT_EQ(p.centers.size(), 2u);
    EXPECT_EQ(p.centers[1], (Pixel{3, 3}));
    // Nearer to (0,0) or tied: x^2 + y^2 <= (3-x)^2 + (3-y)^2, i.e. x + y <= 3.
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            EXPECT_EQ(p.parts[0].at(y, x), x + y <= 3 ? 1 : 0);
        }
    }
    EXPECT_EQ(p.parts[0].foreground_count(), 10u);
    EXPECT_EQ(p.parts[1].foreground_count(), 6u);
}

TEST(MSplitting, ExactlyNPixelsGivesSingletons) {
    const BinaryMask m = mask_from({{1, 0, 0, 1}, {0, 0, 1, 0}, {1, 0, 0, 0}});
    const Partition p = m_splitting(m, 4, 9);
    expect_valid_partition(m, p, 4);
    for (const auto& part : p.parts) {
        EXPECT_EQ(part.foreground_count(), 1u);
    }
}

TEST(MSplitting, Errors) {
    EXPECT_THROW(m_splitting(BinaryMask(3, 3), 1, 0), EmptyMaskError);
    const BinaryMask two = mask_from({{1, 1, 0}});
    EXPECT_THROW(m_splitting(two, 3, 0), InsufficientPixelsError);
    EXPECT_THROW(m_splitting(two, 0, 0), InsufficientPixelsError);
    EXPECT_THROW(m_splitting_from(two, 1, {2, 0}), EmptyMaskError);
}

TEST(MSplitting, InvariantsOnRandomMasks) {
    std::mt19937_64 rng(12);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::uniform_int_distribution<int> dim(1, 20);
        const BinaryMask m = random_mask(rng, dim(rng), dim(rng), 0.5);
        std::uniform_int_distribution<int> pick_n(1, static_cast<int>(m.foreground_count()));
        const int n = pick_n(rng);
        expect_valid_partition(m, m_splitting(m, n, seed), n);
    }
}

TEST(MSplitting, MatchesExhaustiveOracle) {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 200; ++t) {
        std::uniform_int_distribution<int> dim(1, 16);
        const BinaryMask m = random_mask(rng, dim(rng), dim(rng), 0.6);
        const auto fg = m.foreground_pixels();
        std::uniform_int_distribution<int> pick_n(1, static_cast<int>(std::min<std::size_t>(fg.size(), 12)));
        std::uniform_int_distribution<std::size_t> pick_first(0, fg.size() - 1);
        const int n = pick_n(rng);
        const Pixel first = fg[pick_first(rng)];
        const Partition got = m_splitting_from(m, n, first);
        const Partition want = oracle_split(m, n, first);
        EXPECT_EQ(got.centers, want.centers);
        EXPECT_EQ(got.parts, want.parts);
    }
}

TEST(MSplitting, SeededFirstCenterIsReproducible) {
    std::mt19937_64 rng(14);
    const BinaryMask m = random_mask(rng, 30, 25, 0.5);
    const Partition a = m_splitting(m, 6, 77);
    const Partition b = m_splitting(m, 6, 77);
    EXPECT_EQ(a.centers, b.centers);
    EXPECT_EQ(a.parts, b.parts);
}

TEST(MSplitting, DisconnectedForegroundUsesCoordinateDistance) {
    // Two separate runs; the second center lands at the far end regardless of the gap.
    const BinaryMask m = mask_from({{1, 1, 0, 0, 0, 1}});
    const Partition p = m_splitting_from(m, 2, {0, 0});
    EXPECT_EQ(p.centers[1], (Pixel{5, 0}));
    EXPECT_EQ(p.parts[0].foreground_count(), 2u);
}

TEST(KMeansSplit, SingleClusterSnapsToCentroid) {
    // Centroid of the three pixels is (1/3, 1/3).
    const BinaryMask m = mask_from({{1, 1}, {1, 0}});
    const Partition p = kmeans_split(m, 1, 5, 0);
    EXPECT_EQ(p.parts[0], m);
    const double cx = 1.0 / 3.0;
    const double cy = 1.0 / 3.0;
    double best = 1e9;
    Pixel want{};
    for (const auto& px : m.foreground_pixels()) {
        const double d = (px.x - cx) * (px.x - cx) + (px.y - cy) * (px.y - cy);
        if (d < best) {
            best = d;
            want = px;
        }
    }
    EXPECT_EQ(p.centers[0], want);
}

TEST(KMeansSplit, TwoSeparatedBlobs) {
    const BinaryMask m = mask_from({{1, 1, 0, 0, 0, 0, 0},
                                    {1, 1, 0, 0, 0, 0, 0},
                                    {0, 0, 0, 0, 0, 0, 0},
                                    {0, 0, 0, 0, 0, 1, 1},
                                    {0, 0, 0, 0, 0, 1, 1}});
    const BinaryMask left = mask_from({{1, 1, 0, 0, 0, 0, 0},
                                       {1, 1, 0, 0, 0, 0, 0},
                                       {0, 0, 0, 0, 0, 0, 0},
                                       {0, 0, 0, 0, 0, 0, 0},
                                       {0, 0, 0, 0, 0, 0, 0}});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Partition p = kmeans_split(m, 2, 10, seed);
        expect_valid_partition(m, p, 2);
        EXPECT_TRUE(p.parts[0] == left || p.parts[1] == left) << "seed " << seed;
    }
}

TEST(KMeansSplit, SingletonsWhenNEqualsForeground) {
    const BinaryMask m = mask_from({{1, 0, 1}, {0, 1, 0}, {1, 0, 1}});
    const Partition p = kmeans_split(m, 5, 3, 4);
    expect_valid_partition(m, p, 5);
}

TEST(KMeansSplit, InvariantsOnRandomMasks) {
    std::mt19937_64 rng(15);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::uniform_int_distribution<int> dim(1, 16);
        const BinaryMask m = random_mask(rng, dim(rng), dim(rng), 0.5);
        std::uniform_int_distribution<int> pick_n(1, static_cast<int>(m.foreground_count()));
        const int n = pick_n(rng);
        expect_valid_partition(m, kmeans_split(m, n, 3, seed), n);
    }
}

TEST(KMeansSplit, Errors) {
    EXPECT_THROW(kmeans_split(BinaryMask(2, 2), 1, 3, 0), EmptyMaskError);
    EXPECT_THROW(kmeans_split(BinaryMask(2, 2, 1), 5, 3, 0), InsufficientPixelsError);
    EXPECT_THROW(kmeans_split(BinaryMask(2, 2, 1), 2, 0, 0), InsufficientPixelsError);
}

TEST(BinaryMaskType, RejectsNonBinaryBits) {
    EXPECT_THROW(BinaryMask(1, 2, std::vector<std::uint8_t>{0, 2}), ShapeError);
    EXPECT_THROW(BinaryMask(2, 2, std::vector<std::uint8_t>{0, 1}), ShapeError);
}

TEST(BinaryMaskType, ComplementAndUnion) {
    const BinaryMask a = mask_from({{1, 0}, {0, 0}});
    const BinaryMask b = mask_from({{0, 0}, {0, 1}});
    EXPECT_EQ(mask_union({a, b}, 2, 2), mask_from({{1, 0}, {0, 1}}));
    EXPECT_EQ(mask_union({a, b}, 2, 2).complement(), mask_from({{0, 1}, {1, 0}}));
}

TEST(Benchmark, ReportsMediansForEachConfiguration) {
    std::mt19937_64 rng(16);
    const BinaryMask m = random_mask(rng, 40, 40, 0.5);
    const SplitTiming t = benchmark_split(m, 3, 3, {3, 10}, 1);
    EXPECT_EQ(t.runs, 3);
    EXPECT_GT(t.m_splitting_median_s, 0.0);
    ASSERT_EQ(t.kmeans_median_s.size(), 2u);
    EXPECT_EQ(t.kmeans_median_s[1].first, 10);
}

TEST(MSplitting, SeededRunMatchesOracleFromSeededFirst) {
    std::mt19937_64 rng(19);
    for (int t = 0; t < 50; ++t) {
        const BinaryMask m = random_mask(rng, 9, 13, 0.4, 4);
        const std::uint64_t seed = rng();
        const Partition got = m_splitting(m, 4, seed);
        const Partition want = oracle_split(m, 4, mproto::testing::seeded_first(m, seed));
        EXPECT_EQ(got.centers, want.centers);
        EXPECT_EQ(got.parts, want.parts);
    }
}
