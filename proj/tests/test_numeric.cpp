#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <tuple>
#include <set>

#include "bdlab/numeric.hpp"

using namespace bdlab;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

}  // namespace

TEST(Matrix, MatmulMatchesTripleLoop) {
    Rng rng(1);
    for (auto [n, k, m] : {std::tuple{1u, 1u, 1u}, {3u, 5u, 2u}, {17u, 9u, 33u}, {64u, 64u, 4u}}) {
        const Matrix a = random_matrix(rng, n, k), b = random_matrix(rng, k, m);
        const Matrix c = matmul(a, b);
        ASSERT_EQ(c.rows(), n);
        ASSERT_EQ(c.cols(), m);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                double s = 0;
                for (std::size_t t = 0; t < k; ++t) s += a(i, t) * b(t, j);
                EXPECT_NEAR(c(i, j), s, 1e-12 * (1 + std::abs(s)));
            }
    }
}

TEST(Matrix, MatmulShapeMismatchThrows) { EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), Error); }

TEST(Matrix, TransposeIsInvolution) {
    Rng rng(2);
    const Matrix a = random_matrix(rng, 4, 7);
    const Matrix t = transpose(a);
    EXPECT_EQ(t.rows(), 7u);
    EXPECT_EQ(t(3, 2), a(2, 3));
    EXPECT_EQ(transpose(t), a);
}

TEST(Matrix, FromRowsRejectsRagged) {
    EXPECT_THROW(Matrix::from_rows({{1, 2}, {3}}), Error);
    const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
    EXPECT_EQ(m(1, 0), 3);
    EXPECT_EQ(Matrix::identity(3)(2, 2), 1);
    EXPECT_EQ(Matrix::identity(3)(2, 1), 0);
}

TEST(Softmax, RowsSumToOne) {
    Rng rng(3);
    for (double scale : {1e-3, 1.0, 30.0, 800.0}) {
        const Matrix p = softmax_rows(random_matrix(rng, 50, 13, scale));
        for (std::size_t i = 0; i < p.rows(); ++i) {
            double s = 0;
            for (double v : p.row(i)) {
                EXPECT_GE(v, 0.0);
                s += v;
            }
            EXPECT_NEAR(s, 1.0, 1e-9) << "scale " << scale;
        }
    }
}

TEST(Softmax, MatchesDirectFormulaAndIsShiftInvariant) {
    std::vector<double> row{0.3, -1.2, 2.5, 0.0};
    std::vector<double> shifted = row;
    for (double& v : shifted) v += 1000.0;
    double z = 0;
    for (double v : row) z += std::exp(v);
    softmax_inplace(row);
    softmax_inplace(shifted);
    const std::vector<double> raw{0.3, -1.2, 2.5, 0.0};
    for (std::size_t i = 0; i < row.size(); ++i) {
        EXPECT_NEAR(row[i], std::exp(raw[i]) / z, 1e-15);
        // Adding 1000 rounds each input to a spacing of about 1.1e-13.
        EXPECT_NEAR(shifted[i], row[i], 1e-12);
    }
}

TEST(LayerNorm, MatchesDirectComputation) {
    Rng rng(4);
    std::vector<double> x(16), g(16), b(16);
    for (std::size_t i = 0; i < 16; ++i) {
        x[i] = rng.normal(2.0, 3.0);
        g[i] = rng.normal();
        b[i] = rng.normal();
    }
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / 16;
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= 16;
    const auto y = layer_norm(x, g, b, 1e-5);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y[i], g[i] * (x[i] - mean) / std::sqrt(var + 1e-5) + b[i], 1e-12);
}

TEST(LayerNorm, ConstantInputMapsToBias) {
    const std::vector<double> x(8, 3.0), g(8, 2.0), b(8, 0.5);
    for (double v : layer_norm(x, g, b, 1e-5)) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Gelu, TanhApproximationAndDerivative) {
    for (double x = -6; x <= 6; x += 0.37) {
        const double expected = 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x)));
        EXPECT_NEAR(gelu(x), expected, 1e-15);
        const double h = 1e-5;
        EXPECT_NEAR(gelu_derivative(x), (gelu(x + h) - gelu(x - h)) / (2 * h), 1e-8);
    }
    EXPECT_EQ(gelu(0.0), 0.0);
}

TEST(Rng, StreamDependsOnlyOnSeedAndStream) {
    Rng a(42, 3), b(42, 3), c(42, 4), d(43, 3);
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        EXPECT_EQ(x, b.next_u64());
        EXPECT_NE(x, c.next_u64());
        EXPECT_NE(x, d.next_u64());
    }
}

TEST(Rng, UniformMomentsAndRange) {
    Rng rng(7);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        s += u;
        s2 += u * u;
    }
    EXPECT_NEAR(s / n, 0.5, 0.005);
    EXPECT_NEAR(s2 / n - (s / n) * (s / n), 1.0 / 12, 0.002);
}

TEST(Rng, NormalMoments) {
    Rng rng(8);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s += z;
        s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, BelowCoversRangeEvenly) {
    Rng rng(9);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 70000; ++i) ++hits[rng.below(7)];
    for (int h : hits) EXPECT_NEAR(h, 10000, 500);
    EXPECT_EQ(rng.below(1), 0u);
}

TEST(Rng, ShuffleIsAPermutation) {
    Rng rng(10);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    rng.shuffle(std::span<int>(v));
    EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 50u);
    EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(Rng, SplitDoesNotAdvanceParent) {
    Rng a(11), b(11);
    Rng child = a.split(5);
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_NE(child.next_u64(), Rng(11).split(6).next_u64());
}

TEST(Numeric, AllFinite) {
    EXPECT_TRUE(all_finite(std::vector<double>{1, 2, 3}));
    EXPECT_FALSE(all_finite(std::vector<double>{1, NAN}));
    EXPECT_FALSE(all_finite(std::vector<double>{INFINITY}));
}

TEST(Numeric, Mix64IsInjectiveOnSmallRange) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 10000; ++i) seen.insert(mix64(i));
    EXPECT_EQ(seen.size(), 10000u);
}

TEST(Matrix, HandComputedProducts) {
    const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    EXPECT_EQ(matmul(Matrix::identity(2), a), a);
    EXPECT_EQ(matmul(a, Matrix::from_rows({{0}, {1}})), Matrix::from_rows({{2}, {4}}));
    Rng rng(12);
    EXPECT_EQ(matmul(Matrix(2, 3), random_matrix(rng, 3, 4)), Matrix(2, 4));
}

TEST(Matrix, MatmulIsAssociative) {
    Rng rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        const Matrix a = random_matrix(rng, 4, 5), b = random_matrix(rng, 5, 3), c = random_matrix(rng, 3, 6);
        const Matrix l = matmul(matmul(a, b), c), r = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < l.size(); ++i)
            EXPECT_NEAR(l.data()[i], r.data()[i], 1e-9 * std::max(1.0, std::abs(l.data()[i])));
    }
}

TEST(Softmax, AnalyticRows) {
    const Matrix p = softmax_rows(Matrix::from_rows({{0, 0, 0}}));
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(p(0, j), 1.0 / 3, 1e-15);
    const Matrix q = softmax_rows(Matrix::from_rows({{0, std::log(2.0)}}));
    EXPECT_NEAR(q(0, 0), 1.0 / 3, 1e-15);
    EXPECT_NEAR(q(0, 1), 2.0 / 3, 1e-15);
}

TEST(Softmax, LargeGapDoesNotOverflow) {
    const Matrix p = softmax_rows(Matrix::from_rows({{1000, 0}}));
    // Oracle in long double, where exp(-1000) is still representable.
    const long double tail = std::exp(-1000.0L);
    EXPECT_EQ(p(0, 0), static_cast<double>(1.0L / (1.0L + tail)));
    EXPECT_EQ(p(0, 1), static_cast<double>(tail / (1.0L + tail)));
    EXPECT_TRUE(all_finite(p.data()));
}

TEST(LayerNorm, HandExamples) {
    const std::vector<double> ones(2, 1.0), zeros(2, 0.0);
    const auto a = layer_norm(std::vector<double>{-1, 1}, ones, zeros, 1e-12);
    EXPECT_NEAR(a[0], -1, 1e-9);
    EXPECT_NEAR(a[1], 1, 1e-9);
    const auto b = layer_norm(std::vector<double>{0, 2}, std::vector<double>{2, 2}, std::vector<double>{1, 1}, 1e-12);
    EXPECT_NEAR(b[0], -1, 1e-9);
    EXPECT_NEAR(b[1], 3, 1e-9);
    for (double v : layer_norm(std::vector<double>(5, 7.0), std::vector<double>(5, 1.0), std::vector<double>(5, 0.0), 1e-5))
        EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, ShiftInvariantAndStandardized) {
    Rng rng(14);
    const std::vector<double> g(32, 1.0), b(32, 0.0);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> x(32);
        for (double& v : x) v = rng.normal(0, 5);
        std::vector<double> shifted = x;
        const double c = rng.normal(0, 100);
        for (double& v : shifted) v += c;
        const auto y = layer_norm(x, g, b, 1e-5), ys = layer_norm(shifted, g, b, 1e-5);
        double mean = 0, var = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            EXPECT_NEAR(y[i], ys[i], 1e-9);
            mean += y[i];
        }
        mean /= 32;
        for (double v : y) var += (v - mean) * (v - mean);
        var /= 32;
        EXPECT_LE(std::abs(mean), 1e-9);
        EXPECT_NEAR(var, 1.0, 1e-5);
    }
}

TEST(LayerNorm, LengthMismatchThrows) {
    EXPECT_THROW(layer_norm(std::vector<double>{1, 2}, std::vector<double>{1}, std::vector<double>{0, 0}, 1e-5), Error);
}

TEST(Rng, FirstTenThousandDrawsReproduce) {
    Rng a(123), b(123);
    for (int i = 0; i < 10000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}
