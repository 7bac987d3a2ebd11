#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "qncd/rng.hpp"
#include "qncd/tensor.hpp"

using namespace qncd;

namespace {

Tensor naive_matmul(const Tensor &a, const Tensor &b)
{
    Tensor out({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double acc = 0;
            for (std::size_t k = 0; k < a.cols(); ++k)
                acc += static_cast<long double>(a.at(i, k)) * b.at(k, j);
            out.at(i, j) = static_cast<double>(acc);
        }
    return out;
}

}  // namespace

TEST(Tensor, ShapeContract)
{
    Rng rng(3);
    const Tensor t = randn(rng, {2, 3});
    EXPECT_EQ(t.size(), 6u);
    EXPECT_EQ(t.shape(), (Shape{2, 3}));
    EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, MatmulIdentity)
{
    const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
    const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
    EXPECT_EQ(matmul(m, eye), m);
}

TEST(Tensor, MatmulVariantsMatchNaive)
{
    Rng rng(11);
    const Tensor a = randn(rng, {7, 5});
    const Tensor b = randn(rng, {5, 4});
    const Tensor ref = naive_matmul(a, b);
    const Tensor got = matmul(a, b);
    const Tensor tn = matmul_tn(transpose(a), b);
    const Tensor nt = matmul_nt(a, transpose(b));
    for (std::size_t i = 0; i < ref.size(); ++i) {
        EXPECT_NEAR(got[i], ref[i], 1e-12);
        EXPECT_NEAR(tn[i], ref[i], 1e-12);
        EXPECT_NEAR(nt[i], ref[i], 1e-12);
    }
}

TEST(Tensor, ShapeErrorNamesBothShapes)
{
    const Tensor a({2, 3}), b({4, 5});
    try {
        matmul(a, b);
        FAIL() << "expected ShapeError";
    } catch (const ShapeError &e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4,5]"), std::string::npos) << msg;
    }
    EXPECT_THROW(add(a, b), ShapeError);
    EXPECT_THROW(cosine(a, b), ShapeError);
}

TEST(Tensor, Cosine)
{
    Rng rng(5);
    const Tensor v = randn(rng, {4, 3});
    EXPECT_NEAR(cosine(v, v), 1.0, 1e-15);
    EXPECT_NEAR(cosine(v, scale(v, -1.0)), -1.0, 1e-15);
    EXPECT_THROW(cosine(v, Tensor({4, 3})), std::domain_error);
}

TEST(Tensor, ReductionsMatchNaiveLoops)
{
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = rand_uniform(rng, {33, 4}, -5.0, 9.0);
        const auto m = column_mean(a);
        const auto s = column_std(a);
        for (std::size_t j = 0; j < a.cols(); ++j) {
            long double sum = 0;
            for (std::size_t r = 0; r < a.rows(); ++r)
                sum += a.at(r, j);
            const long double mu = sum / a.rows();
            long double ss = 0;
            for (std::size_t r = 0; r < a.rows(); ++r)
                ss += (a.at(r, j) - mu) * (a.at(r, j) - mu);
            const double sd = static_cast<double>(std::sqrt(ss / a.rows()));
            EXPECT_NEAR(m[j], static_cast<double>(mu), 1e-12 * std::abs(static_cast<double>(mu)) + 1e-15);
            EXPECT_NEAR(s[j], sd, 1e-12 * sd);
        }
        long double total = 0;
        for (double v : a.values())
            total += v;
        EXPECT_NEAR(mean(a), static_cast<double>(total / a.size()), 1e-12);
    }
}

TEST(Rng, SameSeedSameStream)
{
    Rng a(7), b(7);
    EXPECT_EQ(randn(a, {3, 4}), randn(b, {3, 4}));
    Rng c(7, 1);
    Rng d(7);
    EXPECT_NE(randn(c, {3, 4}), randn(d, {3, 4}));
}

TEST(Rng, ForkIsPureFunctionOfLabel)
{
    const Rng root(42);
    Rng a = root.fork("step", 3), b = root.fork("step", 3), c = root.fork("step", 4);
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
}

TEST(Rng, PhiloxKnownAnswer)
{
    // Random123 reference vector: counter 0, key 0.
    Rng zero(0, 0);
    EXPECT_EQ(zero.next_u64(), 0x6627e8d5e169c58dULL);
    EXPECT_EQ(zero.next_u64(), 0xbc57ac4c9b00dbd8ULL);

    Rng a(7);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 1000; ++i)
        seen.insert(a.next_u64());
    EXPECT_EQ(seen.size(), 1000u);
}

TEST(Rng, NormalMoments)
{
    Rng rng(2024);
    const Tensor z = randn(rng, {100000});
    EXPECT_NEAR(mean(z), 0.0, 0.02);
    EXPECT_GE(stddev(z), 0.98);
    EXPECT_LE(stddev(z), 1.02);
}

TEST(Rng, UniformChiSquare)
{
    Rng rng(99);
    const int bins = 20, n = 200000;
    std::vector<int> counts(bins, 0);
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GT(u, 0.0);
        ASSERT_LT(u, 1.0);
        ++counts[static_cast<int>(u * bins)];
    }
    double chi2 = 0.0;
    const double expected = static_cast<double>(n) / bins;
    for (int c : counts)
        chi2 += (c - expected) * (c - expected) / expected;
    // 19 degrees of freedom, 0.001 upper quantile
    EXPECT_LT(chi2, 43.82);
}

TEST(Rng, UniformIntCoversRangeOnly)
{
    Rng rng(5);
    std::set<std::int64_t> seen;
    for (int i = 0; i < 5000; ++i) {
        const auto v = rng.uniform_int(-2, 3);
        ASSERT_GE(v, -2);
        ASSERT_LE(v, 3);
        seen.insert(v);
    }
    EXPECT_EQ(seen.size(), 6u);
}

TEST(Rng, Fnv1aReferenceValues)
{
    EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}
