#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "trsgd/random.hpp"

using trsgd::CategoricalSampler;
using trsgd::RandomStream;

TEST(RandomStream, DerivedStreamsAreReproducibleAndDistinct) {
    auto a = RandomStream::derive(42, 3, 7);
    auto b = RandomStream::derive(42, 3, 7);
    auto c = RandomStream::derive(42, 3, 8);
    auto d = RandomStream::derive(43, 3, 7);
    for (int i = 0; i < 100; ++i) {
        const auto va = a();
        EXPECT_EQ(va, b());
        EXPECT_NE(va, c());
        EXPECT_NE(va, d());
    }
}

TEST(RandomStream, FixedOutputs) {
    // Frozen so that a change in the generator shows up as a reproducibility break.
    auto s = RandomStream::derive(0, 0, 0);
    const auto first = s();
    auto t = RandomStream::derive(0, 0, 0);
    EXPECT_EQ(first, t());
    RandomStream plain(0);
    // values recomputed with an independent SplitMix64 script
    EXPECT_EQ(plain(), 0x93118a61ed9e9e14ULL);
    EXPECT_EQ(plain(), 0xd94259df0d440a18ULL);
    EXPECT_EQ(RandomStream::derive(0, 0, 0)(), 0x9817c697f74d31e9ULL);
}

TEST(RandomStream, UniformInUnitInterval) {
    auto s = RandomStream::derive(1, 2);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = s.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    // mean 1/2, sd of mean sqrt(1/12/n)
    EXPECT_NEAR(sum / n, 0.5, 5 * std::sqrt(1.0 / 12.0 / n));
}

TEST(RandomStream, BelowIsUniform) {
    auto s = RandomStream::derive(3, 4);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i)
        ++counts[s.below(7)];
    for (int c : counts)
        EXPECT_NEAR(c, n / 7.0, 5 * std::sqrt(n * (1.0 / 7) * (6.0 / 7)));
    EXPECT_THROW(s.below(0), std::invalid_argument);
}

TEST(RandomStream, NormalMoments) {
    auto s = RandomStream::derive(5, 6);
    const int n = 400000;
    double m1 = 0, m2 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = s.normal();
        m1 += z;
        m2 += z * z;
    }
    m1 /= n;
    m2 /= n;
    EXPECT_NEAR(m1, 0.0, 5 / std::sqrt(double(n)));
    EXPECT_NEAR(m2, 1.0, 0.02);
}

TEST(CategoricalSampler, FrequenciesAndZeroWeights) {
    const std::vector<double> w{0.0, 1.0, 0.0, 3.0, 0.0};
    const CategoricalSampler cat(w);
    auto s = RandomStream::derive(9, 9);
    std::vector<int> counts(5, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        ++counts[cat(s)];
    EXPECT_EQ(counts[0], 0);
    EXPECT_EQ(counts[2], 0);
    EXPECT_EQ(counts[4], 0);
    EXPECT_NEAR(counts[1], n * 0.25, 5 * std::sqrt(n * 0.25 * 0.75));
    EXPECT_THROW(CategoricalSampler(std::vector<double>{0.0, 0.0}), std::invalid_argument);
    EXPECT_THROW(CategoricalSampler(std::vector<double>{1.0, -1.0}), std::invalid_argument);
}
