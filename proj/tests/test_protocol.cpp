#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cvqkd/protocol.hpp"

using namespace cvqkd;
using namespace cvqkd::protocol;

TEST(Constellation, EightPskAmplitudeAndAngles) {
    const auto c = build_constellation(8, 1.19);
    ASSERT_EQ(c.points.size(), 8u);
    EXPECT_NEAR(c.amplitude, 0.77136, 1e-5);
    EXPECT_NEAR(c.points[0].real(), 0.77136, 1e-5);
    EXPECT_NEAR(std::arg(c.points[1]), kPi / 4, 1e-12);
    EXPECT_DOUBLE_EQ(build_constellation(8, 2.0).amplitude, 1.0);
}

TEST(Constellation, FourPskQuadrantAngles) {
    const auto c = build_constellation(4, 1.0);
    EXPECT_NEAR(c.amplitude, std::sqrt(0.5), 1e-15);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(std::remainder(std::arg(c.points[k]) - k * kPi / 2, kTwoPi), 0.0, 1e-12);
}

TEST(Constellation, InvariantsForAllSupportedSizes) {
    for (int m : {4, 8, 12})
        for (double va : {0.3, 1.19, 2.5}) {
            const auto c = build_constellation(m, va);
            EXPECT_EQ(static_cast<int>(c.points.size()), m);
            EXPECT_NEAR(std::accumulate(c.probabilities.begin(), c.probabilities.end(), 0.0), 1.0, 1e-15);
            double vx = 0.0;
            for (int k = 0; k < m; ++k) {
                EXPECT_NEAR(std::abs(c.points[k]), c.amplitude, 1e-14);
                EXPECT_DOUBLE_EQ(c.probabilities[k], 1.0 / m);
                vx += std::pow(2.0 * c.points[k].real(), 2) / m;
            }
            EXPECT_NEAR(vx, va, 1e-12);
            EXPECT_NEAR(c.modulation_variance(), va, 1e-14);
        }
}

TEST(Constellation, RejectsBadInput) {
    EXPECT_THROW(build_constellation(16, 1.0), Error);
    EXPECT_THROW(build_constellation(8, 0.0), Error);
    EXPECT_THROW(build_constellation(8, -1.0), Error);
}

TEST(Sideband, PaperSuppressionRatio) {
    const auto s = sideband_model(19.4);
    EXPECT_NEAR(s.amplitude_fraction, 0.9943, 1e-4);
    EXPECT_NEAR(s.amplitude_fraction, std::sqrt(1.0 / (1.0 + std::pow(10.0, -1.94))), 1e-15);
}

TEST(Sideband, ClosedFormAndLimits) {
    const auto c = image_sideband_correction(10.0, 1.0);
    EXPECT_NEAR(c.amplitude_fraction, 0.95346, 1e-5);
    EXPECT_NEAR(c.corrected_amplitude, 1.04881, 1e-5);
    // two-sideband field power: unit signal plus image at -10 dB
    const double image = 1.0 / 10.0;
    EXPECT_NEAR(c.amplitude_fraction, std::sqrt(1.0 / (1.0 + image)), 1e-14);
    const auto inf = image_sideband_correction(std::numeric_limits<double>::infinity(), 0.7);
    EXPECT_EQ(inf.amplitude_fraction, 1.0);
    EXPECT_EQ(inf.corrected_amplitude, 0.7);
    EXPECT_THROW(sideband_model(-1.0), Error);
}

TEST(Sideband, MonotoneInSuppression) {
    double prev = 0.0;
    for (double db = 0.0; db <= 80.0; db += 0.5) {
        const double d = sideband_model(db).amplitude_fraction;
        EXPECT_GT(d, prev);
        EXPECT_LE(d, 1.0);
        prev = d;
    }
    EXPECT_NEAR(prev, 1.0, 1e-8);
}

TEST(KeyMap, RegionCentresAndBoundary) {
    EXPECT_EQ(key_map(std::polar(0.5, 0.0), 8), 0);
    EXPECT_EQ(key_map(std::polar(0.2, kPi / 4), 8), 1);
    EXPECT_EQ(key_map(std::polar(1.0, kPi / 8), 8), 1);
    EXPECT_EQ(key_map(std::polar(1.0, kPi / 8 - 1e-12), 8), 0);
    EXPECT_EQ(key_map(std::polar(1.0, -kPi / 8), 8), 0);
    EXPECT_EQ(key_map(std::polar(1.0, -kPi / 8 - 1e-12), 8), 7);
    EXPECT_EQ(key_map(std::polar(1.0, kPi), 8), 4);
}

TEST(KeyMap, ZeroMeasurementFlagged) {
    const auto r = key_map_checked({0.0, 0.0}, 8);
    EXPECT_EQ(r.symbol, 0);
    EXPECT_TRUE(r.zero_measurement);
}

TEST(KeyMap, PartitionsTheCircle) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, kTwoPi);
    for (int m : {4, 8, 12})
        for (int i = 0; i < 1000000 / 3; ++i) {
            const double th = u(rng);
            int hits = 0, which = -1;
            for (int j = 0; j < m; ++j) {
                double lo = (2.0 * j - 1.0) * kPi / m, hi = (2.0 * j + 1.0) * kPi / m;
                double t = th >= kTwoPi - kPi / m ? th - kTwoPi : th;
                if (t >= lo && t < hi) ++hits, which = j;
            }
            ASSERT_EQ(hits, 1);
            ASSERT_EQ(key_map(std::polar(1.0, th), m), which);
        }
}

TEST(KeyMap, DependsOnArgumentOnly) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> s(1e-3, 1e3);
    for (int i = 0; i < 10000; ++i) {
        const cplx y{g(rng), g(rng)};
        const double c = s(rng);
        EXPECT_EQ(key_map(c * y, 8), key_map(y, 8));
    }
}

TEST(EcLeakage, PerfectCorrelation) {
    std::vector<std::vector<double>> t(8, std::vector<double>(8, 0.0));
    for (int k = 0; k < 8; ++k) t[k][k] = 100.0;
    const auto ec = ec_leakage(t, 0.95);
    EXPECT_NEAR(ec.entropy_z, 3.0, 1e-12);
    EXPECT_NEAR(ec.conditional_entropy, 0.0, 1e-12);
    EXPECT_NEAR(ec.leakage, 0.15, 1e-12);
    EXPECT_EQ(ec.pass_probability, 1.0);
}

TEST(EcLeakage, BothFormsAgreeAndBetaOne) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> t(8, std::vector<double>(8));
        for (auto& r : t)
            for (auto& v : r) v = u(rng);
        const auto ec = ec_leakage(t, 0.95);
        EXPECT_NEAR(ec.leakage, ec.leakage_mutual_form, 1e-12);
        EXPECT_NEAR(ec_leakage(t, 1.0).leakage, ec.conditional_entropy, 1e-12);
    }
}

TEST(EcLeakage, UniformZWithOneBitConditionalEntropy) {
    // each k spreads evenly over two neighbouring z: H(Z|X) = 1, Z uniform
    std::vector<std::vector<double>> t(8, std::vector<double>(8, 0.0));
    for (int k = 0; k < 8; ++k) t[k][k] = t[k][(k + 1) % 8] = 1.0;
    const auto ec = ec_leakage(t, 0.95);
    EXPECT_NEAR(ec.entropy_z, 3.0, 1e-12);
    EXPECT_NEAR(ec.conditional_entropy, 1.0, 1e-12);
    EXPECT_NEAR(ec.leakage, 1.10, 1e-12);
}

TEST(EcLeakage, InvariantUnderRowPermutation) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::vector<double>> t(8, std::vector<double>(8));
    for (auto& r : t)
        for (auto& v : r) v = u(rng);
    auto p = t;
    std::shuffle(p.begin(), p.end(), rng);
    const auto a = ec_leakage(t, 0.9), b = ec_leakage(p, 0.9);
    EXPECT_NEAR(a.entropy_z, b.entropy_z, 1e-12);
    EXPECT_NEAR(a.leakage, b.leakage, 1e-12);
}

TEST(EcLeakage, RejectsBadTables) {
    std::vector<std::vector<double>> zero(8, std::vector<double>(8, 0.0));
    EXPECT_THROW(ec_leakage(zero, 0.95), Error);
    auto neg = zero;
    neg[0][0] = -1.0;
    EXPECT_THROW(ec_leakage(neg, 0.95), Error);
    neg[0][0] = 1.0;
    EXPECT_THROW(ec_leakage(neg, 1.5), Error);
}

TEST(SecretRate, TableRatesAndClamp) {
    EXPECT_NEAR(secret_fraction_to_rate(0.019872, 1.5625e9).bits_per_second / 1e6, 31.05, 0.01);
    EXPECT_NEAR(secret_fraction_to_rate(0.0032320, 1.5625e9).bits_per_second / 1e6, 5.05, 0.01);
    const auto r = secret_fraction_to_rate(-0.01, 1e9);
    EXPECT_EQ(r.bits_per_second, 0.0);
    EXPECT_TRUE(r.no_key);
}
