// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "coarseqca/matalg.hpp"

using namespace coarseqca;

namespace {

// Block-diagonal algebra: blocks (n_i, m_i) give M_{n_i} (x) 1_{m_i}, conjugated by u.
struct BlockAlgebra {
  int d = 0;
  std::vector<Mat> gens;
  int dim = 0;
  int commutant_dim = 0;
};

BlockAlgebra block_algebra(const std::vector<std::pair<int, int>>& blocks, const Mat& u) {
  BlockAlgebra out;
  for (auto [n, m] : blocks) out.d += n * m;
  int off = 0;
  for (auto [n, m] : blocks) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        Mat g = Mat::Zero(out.d, out.d);
        g.block(off, off, n * m, n * m) = kron(matrix_unit(n, i, j), identity(m));
        out.gens.push_back(u * g * u.adjoint());
      }
    out.dim += n * n;
    out.commutant_dim += m * m;
    off += n * m;
  }
  return out;
}

// Span dimension of all words in gens of length <= d^2, by direct enumeration.
int brute_span_dim(int d, const std::vector<Mat>& gens) {
  std::vector<Mat> words{identity(d)};
  std::vector<Vec> vs{vec(identity(d))};
  for (int len = 0; len < d * d; ++len) {
    std::vector<Mat> next;
    for (const auto& w : words)
      for (const auto& g : gens) {
        for (const Mat& x : {Mat(g * w), Mat(g.adjoint() * w)}) {
          next.push_back(x);
          vs.push_back(vec(x));
        }
      }
    Mat q = orthonormalize(vs, d * d);
    vs.clear();
    words.clear();
    for (Eigen::Index i = 0; i < q.cols(); ++i) {
      vs.push_back(q.col(i));
      words.push_back(unvec(q.col(i), d));
    }
    if (q.cols() == d * d) break;
  }
  return static_cast<int>(vs.size());
}

std::mt19937_64 rng_for(int salt) { return std::mt19937_64(1000 + salt); }

}  // namespace

TEST(Generation, EmptyAndFull) {
  EXPECT_EQ(algebra_from_generators(3, {}).dim(), 1);
  std::vector<Mat> units;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) units.push_back(matrix_unit(3, i, j));
  EXPECT_EQ(algebra_from_generators(3, units).dim(), 9);
  EXPECT_THROW(algebra_from_generators(3, {identity(2)}), StructuralError);
}

TEST(Generation, HermitianGeneratesItsDiagonalAlgebra) {
  auto rng = rng_for(1);
  Mat h = random_hermitian(4, rng);
  auto a = algebra_from_generators(4, {h});
  EXPECT_EQ(a.dim(), 4);
  // Polynomial span of h: powers 0..3.
  std::vector<Vec> powers;
  Mat p = identity(4);
  for (int k = 0; k < 4; ++k) {
    powers.push_back(vec(p));
    EXPECT_TRUE(a.contains(p));
    p = p * h;
  }
  EXPECT_EQ(orthonormalize(powers, 16).cols(), 4);
  Eigen::SelfAdjointEigenSolver<Mat> es(h);
  for (int k = 0; k < 4; ++k) EXPECT_TRUE(a.contains(Mat(es.eigenvectors().col(k) * es.eigenvectors().col(k).adjoint())));
}

TEST(Generation, MethodsAgreeWithBruteForce) {
  for (int trial = 0; trial < 12; ++trial) {
    auto rng = rng_for(10 + trial);
    std::vector<std::vector<std::pair<int, int>>> shapes = {{{1, 2}, {2, 1}}, {{2, 2}}, {{1, 1}, {1, 1}, {1, 2}}, {{2, 1}, {1, 3}}};
    auto shape = shapes[trial % shapes.size()];
    int d = 0;
    for (auto [n, m] : shape) d += n * m;
    auto ba = block_algebra(shape, random_unitary(d, rng));
    // Two generic elements of the algebra as generators.
    std::vector<Mat> gens;
    for (int k = 0; k < 2; ++k) {
      Mat g = Mat::Zero(d, d);
      for (const auto& b : ba.gens) g += cd(std::normal_distribution<double>()(rng), 0.3) * b;
      gens.push_back(g);
    }
    auto w = algebra_from_generators(d, gens, GenerationMethod::Words);
    auto b = algebra_from_generators(d, gens, GenerationMethod::Bicommutant);
    EXPECT_EQ(w.dim(), ba.dim);
    EXPECT_TRUE(w.same_as(b));
    EXPECT_EQ(brute_span_dim(d, gens), ba.dim);
  }
}

TEST(Commutant, StandardFactor) {
  std::vector<Mat> gens;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) gens.push_back(kron(matrix_unit(2, i, j), identity(3)));
  auto a = algebra_from_generators(6, gens);
  auto c = commutant(a);
  EXPECT_EQ(c.dim(), 9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_TRUE(c.contains(kron(identity(2), matrix_unit(3, i, j))));
  EXPECT_EQ(commutant(StarAlgebra::scalars(5)).dim(), 25);
}

TEST(Commutant, BicommutantOnRandomFamilies) {
  std::vector<std::vector<std::pair<int, int>>> shapes = {
      {{1, 2}, {2, 1}, {1, 2}}, {{2, 3}}, {{3, 2}}, {{1, 1}, {2, 2}}, {{1, 4}, {2, 2}, {1, 1}}, {{2, 2}, {2, 1}, {1, 3}}};
  for (std::size_t t = 0; t < shapes.size(); ++t) {
    auto rng = rng_for(40 + static_cast<int>(t));
    int d = 0;
    for (auto [n, m] : shapes[t]) d += n * m;
    ASSERT_LE(d, 12);
    auto ba = block_algebra(shapes[t], random_unitary(d, rng));
    auto a = algebra_from_generators(d, ba.gens);
    ASSERT_EQ(a.dim(), ba.dim);
    auto c = commutant(a);
    EXPECT_EQ(c.dim(), ba.commutant_dim);
    auto cc = commutant(c);
    EXPECT_TRUE(cc.same_as(a));
    EXPECT_GE(static_cast<long>(a.dim()) * c.dim(), static_cast<long>(d) * d);
    const bool factor = shapes[t].size() == 1;
    EXPECT_EQ(tensor_factor_split(a).has_value(), factor);
    const bool tight = static_cast<long>(a.dim()) * c.dim() == static_cast<long>(d) * d;
    EXPECT_EQ(tight && center(a).dim() == 1, factor);
    if (factor) EXPECT_TRUE(tight);
  }
}

// Equal block ratios make the dimension bound tight without a trivial centre.
TEST(Commutant, TightBoundWithoutFactor) {
  auto rng = rng_for(9);
  auto ba = block_algebra({{1, 1}, {2, 2}}, random_unitary(5, rng));
  auto a = algebra_from_generators(5, ba.gens);
  EXPECT_EQ(a.dim() * commutant(a).dim(), 25);
  EXPECT_EQ(center(a).dim(), 2);
  EXPECT_FALSE(tensor_factor_split(a).has_value());
}

TEST(Commutant, ResourceCap) {
  EXPECT_THROW(commutant_of_set(max_ambient() + 1, {}), ResourceError);
}

TEST(FullMatrix, Examples) {
  auto m3 = StarAlgebra::full(3);
  auto i3 = is_full_matrix_algebra(m3);
  EXPECT_TRUE(i3.full);
  EXPECT_EQ(i3.k, 3);
  auto diag = algebra_from_generators(2, {matrix_unit(2, 0, 0)});
  EXPECT_FALSE(is_full_matrix_algebra(diag).full);
  auto rng = rng_for(3);
  auto ba = block_algebra({{2, 3}}, random_unitary(6, rng));
  auto info = is_full_matrix_algebra(algebra_from_generators(6, ba.gens));
  EXPECT_TRUE(info.full);
  EXPECT_EQ(info.k, 2);
}

TEST(Split, StandardAndDiagonal) {
  std::vector<Mat> gens;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) gens.push_back(kron(matrix_unit(2, i, j), identity(2)));
  auto s = tensor_factor_split(algebra_from_generators(4, gens));
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->a, 2);
  EXPECT_EQ(s->b, 2);
  EXPECT_TRUE(s->complement.contains(kron(identity(2), matrix_unit(2, 0, 1))));
  auto diag = algebra_from_generators(2, {matrix_unit(2, 0, 0)});
  EXPECT_FALSE(tensor_factor_split(diag).has_value());
  EXPECT_EQ(detail::multiplication_rank(diag, commutant(diag)), 2);
}

TEST(Split, ConjugatedFactorReconstructs) {
  for (int trial = 0; trial < 5; ++trial) {
    auto rng = rng_for(70 + trial);
    Mat u = random_unitary(6, rng);
    auto ba = block_algebra({{2, 3}}, u);
    auto s = tensor_factor_split(algebra_from_generators(6, ba.gens));
    ASSERT_TRUE(s.has_value());
    EXPECT_EQ(s->a, 2);
    EXPECT_EQ(s->b, 3);
    // Rebuild M_6 from products of the two factors.
    std::vector<Vec> prods;
    for (const auto& x : s->factor.basis())
      for (const auto& y : s->complement.basis()) prods.push_back(vec(Mat(x * y)));
    EXPECT_EQ(orthonormalize(prods, 36).cols(), 36);
    for (const auto& x : s->factor.basis())
      EXPECT_LT(tensor_form_defect(s->witness.adjoint() * x * s->witness, 2, 3, true), 1e-9);
  }
}

TEST(Support, Examples) {
  std::vector<Mat> left;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) left.push_back(kron(matrix_unit(2, i, j), identity(3)));
  EXPECT_EQ(support_algebra(left, 2, 3, Side::Left).dim(), 4);
  EXPECT_EQ(support_algebra(left, 2, 3, Side::Right).dim(), 1);
  auto rng = rng_for(5);
  EXPECT_EQ(support_algebra({kron(identity(2), random_matrix(3, 3, rng))}, 2, 3, Side::Left).dim(), 1);
  Mat swap = Mat::Zero(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) swap(i * 2 + j, j * 2 + i) = 1;
  auto slices = support_slices({swap}, 2, 2, Side::Left);
  EXPECT_EQ(slices.size(), 4u);
  for (const auto& s : slices) EXPECT_NEAR(s.cwiseAbs().sum(), 1.0, 1e-12);
  EXPECT_EQ(support_algebra({swap}, 2, 2, Side::Left).dim(), 4);
  EXPECT_THROW(support_algebra({identity(5)}, 2, 2, Side::Left), StructuralError);
}

TEST(Support, MinimalOverSubalgebraLatticeOfM2) {
  // Unital *-subalgebras of M_2: scalars, span{1, P} for a rank-one projection P, M_2.
  // A set lies in some span{1, P} iff its slices are normal and mutually *-commute.
  for (int trial = 0; trial < 60; ++trial) {
    auto rng = rng_for(200 + trial);
    std::vector<Mat> bs;
    Mat v = random_unitary(2, rng);
    Mat p = v * matrix_unit(2, 0, 0) * v.adjoint();
    switch (trial % 3) {
      case 0:
        bs.push_back(random_matrix(4, 4, rng));
        break;
      case 1:
        bs.push_back(kron(p, random_matrix(2, 2, rng)) + kron(identity(2), random_matrix(2, 2, rng)));
        break;
      default:
        bs.push_back(kron(identity(2), random_matrix(2, 2, rng)));
    }
    auto s = support_algebra(bs, 2, 2, Side::Left);
    auto slices = support_slices(bs, 2, 2, Side::Left);
    bool all_scalar = true, star_commuting = true;
    for (const auto& x : slices) {
      if ((x - identity(2) * (x.trace() / 2.0)).norm() > 1e-9) all_scalar = false;
      for (const auto& y : slices)
        if ((x * y - y * x).norm() > 1e-9 || (x * y.adjoint() - y.adjoint() * x).norm() > 1e-9) star_commuting = false;
    }
    const int expected = all_scalar ? 1 : (star_commuting ? 2 : 4);
    EXPECT_EQ(s.dim(), expected) << trial;
    for (const auto& x : slices) EXPECT_TRUE(s.contains(x));
  }
}

TEST(Inner, IdentityAndRoundTrip) {
  Mat u = inner_unitary(3, [](const Mat& x) { return x; });
  EXPECT_LT((u - identity(3)).norm(), 1e-12);
  for (int trial = 0; trial < 100; ++trial) {
    auto rng = rng_for(300 + trial);
    int d = 2 + trial % 4;
    Mat v = random_unitary(d, rng);
    Mat w = inner_unitary(d, [&](const Mat& x) { return Mat(v * x * v.adjoint()); });
    EXPECT_LT((w - fix_phase(v)).norm(), 1e-9);
  }
}

TEST(Inner, TransposeRejected) {
  EXPECT_THROW(inner_unitary(2, [](const Mat& x) { return Mat(x.transpose()); }), InvalidArgument);
  EXPECT_THROW(inner_unitary(2, std::vector<Mat>(3, identity(2))), InvalidArgument);
}

TEST(Commutator, IdentityIsTrivial) {
  auto r = commutator_decompose(identity(3));
  EXPECT_LT((r.a - identity(3)).norm(), 1e-12);
  EXPECT_LT((r.b - identity(3)).norm(), 1e-12);
  EXPECT_LT(std::abs(r.lambda - 1.0), 1e-12);
}

TEST(Commutator, DiagonalExample) {
  Mat u = Mat::Zero(2, 2);
  u(0, 0) = cd(0, 1);
  u(1, 1) = cd(0, -1);
  auto r = commutator_decompose(u);
  Mat rec = r.lambda * r.a * r.b * r.a.inverse() * r.b.inverse();
  EXPECT_LT((rec - u).norm(), 1e-9);
  EXPECT_NEAR(std::abs(r.lambda), 1.0, 1e-12);
}

TEST(Commutator, RandomUnitaries) {
  for (int trial = 0; trial < 50; ++trial) {
    auto rng = rng_for(500 + trial);
    int d = 2 + trial % 5;
    Mat u = random_unitary(d, rng);
    auto r = commutator_decompose(u);
    Mat comm = r.a * r.b * r.a.adjoint() * r.b.adjoint();
    EXPECT_LT(op_norm(r.lambda * comm - u), 1e-9);
    EXPECT_LT(std::abs(comm.determinant() - 1.0), 1e-9);
    EXPECT_LT(unitarity_defect(r.a), 1e-9);
    EXPECT_LT(unitarity_defect(r.b), 1e-9);
  }
}

TEST(Rank, AmbiguityBandRaises) {
  Mat m = Mat::Zero(3, 3);
  m(0, 0) = 1.0;
  m(1, 1) = 3e-8;
  EXPECT_THROW(null_space(m), IndeterminateError);
  m(1, 1) = 1e-12;
  EXPECT_EQ(null_space(m).cols(), 2);
}

TEST(Intersect, SubalgebraSpans) {
  // diag(M_2) and span{1, X} in M_2 meet in the scalars.
  auto d = algebra_from_generators(2, {matrix_unit(2, 0, 0)});
  Mat x = Mat::Zero(2, 2);
  x(0, 1) = x(1, 0) = 1;
  auto xa = algebra_from_generators(2, {x});
  EXPECT_EQ(intersect(d, xa).dim(), 1);
  EXPECT_EQ(intersect(d, d).dim(), 2);
}
