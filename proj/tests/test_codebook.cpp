#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cddvt/codebook.hpp"
#include "cddvt/gradcheck_suite.hpp"

using namespace cddvt;

namespace {
Codebook from_sub(const Matrix& m) {
    Codebook cb = init_codebook(1, m.rows(), m.cols(), 0);
    cb.entries[0] = m;
    return cb;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("cddvt_" + name)).string();
}
}  // namespace

TEST(InitCodebook, DeskShape) {
    const Codebook cb = init_codebook(4, 64, 4, 7);
    ASSERT_EQ(cb.entries.size(), 4u);
    for (const Matrix& e : cb.entries) {
        EXPECT_EQ(e.rows(), 64u);
        EXPECT_EQ(e.cols(), 4u);
        for (double v : e.data()) {
            EXPECT_GE(v, -1.0 / 64);
            EXPECT_LE(v, 1.0 / 64);
        }
    }
    EXPECT_EQ(cb.embed_dim(), 16u);
    EXPECT_EQ(cb.total_primitives(), 256u);
    for (const auto& u : cb.usage_counts)
        for (auto c : u) EXPECT_EQ(c, 0u);
}

TEST(InitCodebook, Deterministic) {
    EXPECT_EQ(init_codebook(4, 64, 4, 7), init_codebook(4, 64, 4, 7));
    EXPECT_FALSE(init_codebook(4, 64, 4, 7) == init_codebook(4, 64, 4, 8));
}

TEST(InitCodebook, SinglePrimitiveIsItsCentroid) {
    const Codebook cb = init_codebook(1, 1, 2, 3);
    const Matrix c = centroids(cb).centroids;
    EXPECT_EQ(c(0, 0), cb.entries[0](0, 0));
    EXPECT_EQ(c(0, 1), cb.entries[0](0, 1));
}

TEST(InitCodebook, ZeroDimensionsThrow) {
    EXPECT_THROW(init_codebook(0, 4, 4, 0), ArgumentError);
    EXPECT_THROW(init_codebook(4, 0, 4, 0), ArgumentError);
    EXPECT_THROW(init_codebook(4, 4, 0, 0), ArgumentError);
}

TEST(Centroids, Examples) {
    EXPECT_EQ(centroids(from_sub(Matrix::from_rows({{1, 0}, {0, 1}}))).centroids, Matrix::from_rows({{0.5, 0.5}}));
    EXPECT_EQ(centroids(from_sub(Matrix(3, 2))).centroids, Matrix(1, 2));
    EXPECT_EQ(centroids(from_sub(Matrix::from_rows({{2, 0}, {4, 0}, {0, 6}}))).centroids, Matrix::from_rows({{2, 2}}));
}

TEST(Centroids, MatchRowMeans) {
    const Codebook cb = init_codebook(3, 17, 5, 11);
    const Matrix c = centroids(cb).centroids;
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t k = 0; k < 5; ++k) {
            long double s = 0;
            for (std::size_t i = 0; i < 17; ++i) s += cb.entries[j](i, k);
            EXPECT_NEAR(c(j, k), static_cast<double>(s / 17), 1e-12);
        }
}

TEST(DiversityLoss, Examples) {
    EXPECT_EQ(diversity_loss(CentroidSet{Matrix::from_rows({{1, 0}, {0, 1}})}).value, 0.0);
    EXPECT_NEAR(diversity_loss(CentroidSet{Matrix::from_rows({{0.3, -2}, {0.3, -2}})}).value, 1.0, 1e-15);
    const double r = 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(diversity_loss(CentroidSet{Matrix::from_rows({{1, 0}, {0, 1}, {r, r}})}).value, 0.4714045207910316,
                1e-12);
}

TEST(DiversityLoss, SingleCentroidIsZero) {
    const LossWithGrad l = diversity_loss(CentroidSet{Matrix::from_rows({{1, 2, 3}})});
    EXPECT_EQ(l.value, 0.0);
    EXPECT_EQ(l.grad, Matrix(1, 3));
}

TEST(DiversityLoss, ScaleInvariantAndBounded) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Matrix c(4, 4);
        for (double& v : c.data()) v = rng.uniform(-1, 1);
        const double base = diversity_loss(CentroidSet{c}).value;
        EXPECT_GE(base, -1.0);
        EXPECT_LE(base, 1.0);
        Matrix scaled = c;
        const double s = rng.uniform(0.1, 10.0);
        for (std::size_t k = 0; k < 4; ++k) scaled(2, k) *= s;
        EXPECT_NEAR(diversity_loss(CentroidSet{scaled}).value, base, 1e-10);
    }
}

TEST(DiversityLoss, PositiveMultiplesGiveOne) {
    const Matrix c = Matrix::from_rows({{1, 2}, {2, 4}, {0.5, 1}});
    EXPECT_NEAR(diversity_loss(CentroidSet{c}).value, 1.0, 1e-12);
}

TEST(DiversityLoss, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const Matrix c0 = detail::random_matrix(4, 4, rng);
        const GradReport r = grad_check([](const Matrix& c) { return diversity_loss(CentroidSet{c}).value; },
                                        [](const Matrix& c) { return diversity_loss(CentroidSet{c}).grad; }, c0);
        EXPECT_TRUE(r.passed) << "seed " << seed << " rel " << r.max_rel_diff;
    }
}

TEST(ApplyCodebookGrads, ZeroGradientLeavesCodebook) {
    Codebook cb = init_codebook(2, 3, 2, 1);
    const Codebook before = cb;
    apply_codebook_grads(cb, {Matrix(3, 2), Matrix(3, 2)}, sgd_rule(0.5));
    EXPECT_EQ(cb, before);
}

TEST(ApplyCodebookGrads, PlainStep) {
    Codebook cb = from_sub(Matrix::from_rows({{1.0}}));
    apply_codebook_grads(cb, {Matrix::from_rows({{1.0}})}, sgd_rule(0.1));
    EXPECT_DOUBLE_EQ(cb.entries[0](0, 0), 0.9);
}

TEST(ApplyCodebookGrads, TwoStepsEqualOneCombined) {
    Codebook a = init_codebook(2, 4, 3, 5), b = a;
    Rng rng(2);
    const Matrix g1 = detail::random_matrix(4, 3, rng), g2 = detail::random_matrix(4, 3, rng);
    const Matrix g3 = detail::random_matrix(4, 3, rng), g4 = detail::random_matrix(4, 3, rng);
    apply_codebook_grads(a, {g1, g3}, sgd_rule(0.1));
    apply_codebook_grads(a, {g2, g4}, sgd_rule(0.1));
    Matrix s1 = g1, s2 = g3;
    for (std::size_t i = 0; i < s1.size(); ++i) {
        s1.data()[i] += g2.data()[i];
        s2.data()[i] += g4.data()[i];
    }
    apply_codebook_grads(b, {s1, s2}, sgd_rule(0.1));
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < a.entries[j].size(); ++i)
            EXPECT_NEAR(a.entries[j].data()[i], b.entries[j].data()[i], 1e-14);
}

TEST(ApplyCodebookGrads, ShapeMismatch) {
    Codebook cb = init_codebook(2, 3, 2, 1);
    EXPECT_THROW(apply_codebook_grads(cb, {Matrix(3, 2)}, sgd_rule(0.1)), ShapeError);
    EXPECT_THROW(apply_codebook_grads(cb, {Matrix(3, 2), Matrix(2, 2)}, sgd_rule(0.1)), ShapeError);
}

TEST(CentroidGradToEntries, ChainRuleThroughMean) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Codebook cb = init_codebook(3, 6, 2, seed);
        const GradReport r = grad_check(
            [&](const Matrix& e) {
                Codebook c = cb;
                c.entries[1] = e;
                return diversity_loss(centroids(c)).value;
            },
            [&](const Matrix& e) {
                Codebook c = cb;
                c.entries[1] = e;
                return centroid_grad_to_entries(c, diversity_loss(centroids(c)).grad)[1];
            },
            cb.entries[1]);
        EXPECT_TRUE(r.passed) << "seed " << seed;
    }
}

TEST(CodebookFile, HeaderLayout) {
    Codebook cb = init_codebook(2, 3, 1, 4);
    cb.usage_counts[1][2] = 9;
    ByteWriter w;
    write_codebook(w, cb);
    const Bytes& b = w.buffer();
    ASSERT_EQ(b.size(), 4u + 4 * 4 + 6 * 8 + 6 * 8);
    EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "CDDV");
    EXPECT_EQ(b[4], 1);  // version, little-endian
    EXPECT_EQ(b[8], 2);  // M
    EXPECT_EQ(b[12], 3);  // V'
    EXPECT_EQ(b[16], 1);  // D'
    EXPECT_EQ(b[b.size() - 8], 9);  // last usage counter
}

TEST(CodebookFile, RoundTrip) {
    Codebook cb = init_codebook(4, 8, 3, 21);
    cb.usage_counts[0][5] = 12345678901ULL;
    const std::string path = temp_path("codebook.bin");
    save_codebook(cb, path);
    EXPECT_EQ(load_codebook(path), cb);
    std::filesystem::remove(path);
}

TEST(CodebookFile, BadMagicReportsOffsetZero) {
    Bytes b{'X', 'D', 'D', 'V', 1, 0, 0, 0};
    ByteReader r(b);
    try {
        read_codebook(r);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset, 0u);
    }
}

TEST(CodebookFile, TruncatedPayload) {
    ByteWriter w;
    write_codebook(w, init_codebook(2, 2, 2, 0));
    Bytes b = w.take();
    b.resize(b.size() - 3);
    ByteReader r(b);
    EXPECT_THROW(read_codebook(r), ParseError);
}

TEST(CodebookFile, WrongVersion) {
    ByteWriter w;
    write_codebook(w, init_codebook(1, 1, 1, 0));
    Bytes b = w.take();
    b[4] = 2;
    ByteReader r(b);
    try {
        read_codebook(r);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset, 4u);
    }
}
