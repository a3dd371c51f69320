// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <deque>
#include <set>

#include "coarseqca/index.hpp"

using namespace coarseqca;

namespace {

SpacePtr line() {
  static const SpacePtr z = Space::grid(1);
  return z;
}

Window cells8() { return Window::interval(line(), 0, 7); }

std::vector<SiteSet> pairs_from(std::int64_t start, std::int64_t hi) {
  std::vector<SiteSet> out;
  for (std::int64_t i = start; i + 1 <= hi; i += 2) out.push_back({Site::at(i), Site::at(i + 1)});
  return out;
}

using Word = std::vector<std::int64_t>;

// Monoid equivalence class of w by breadth-first rewriting, bounded in total degree.
std::set<Word> monoid_class(const Word& w, const MonoidPresentation& m, std::int64_t max_degree) {
  std::set<Word> seen{w};
  std::deque<Word> todo{w};
  auto fits = [](const Word& x, const Word& pat) {
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] < pat[i]) return false;
    return true;
  };
  while (!todo.empty()) {
    Word x = todo.front();
    todo.pop_front();
    for (const auto& [l, r] : m.relations)
      for (int dir = 0; dir < 2; ++dir) {
        const Word& from = dir ? r : l;
        const Word& to = dir ? l : r;
        if (!fits(x, from)) continue;
        Word y = x;
        std::int64_t deg = 0;
        for (std::size_t i = 0; i < y.size(); ++i) deg += (y[i] += to[i] - from[i]);
        if (deg <= max_degree && seen.insert(y).second) todo.push_back(y);
      }
  }
  return seen;
}

// m1 - m2 == m3 - m4 iff some n has m1 + m4 + n ~ m3 + m2 + n; n ranges over words of degree <= 2.
bool witness_equal(const MonoidPresentation& m, const Word& m1, const Word& m2, const Word& m3, const Word& m4) {
  const std::size_t g = m1.size();
  std::vector<Word> ns{Word(g, 0)};
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t j = i; j < g; ++j) {
      Word a(g, 0);
      a[i] += 1;
      ns.push_back(a);
      a[j] += 1;
      ns.push_back(a);
    }
  for (const auto& n : ns) {
    Word l(g), r(g);
    for (std::size_t i = 0; i < g; ++i) {
      l[i] = m1[i] + m4[i] + n[i];
      r[i] = m3[i] + m2[i] + n[i];
    }
    if (monoid_class(l, m, 12).count(r)) return true;
  }
  return false;
}

AzumayaPresentation factor_at_point(int a, int b, std::uint64_t seed) {
  auto pt = Space::finite_named({"p"});
  auto net = LocalMatrixNet::uniform(pt, a * b);
  std::mt19937_64 rng(seed);
  const Mat v = random_unitary(a * b, rng);
  GeneratorBlock blk{{Site::named("p")}, {}};
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < a; ++j)
      blk.gens.push_back(LocalOp{net.site_legs(Site::named("p")), v * kron(matrix_unit(a, i, j), identity(b)) * v.adjoint()});
  return AzumayaPresentation::from_blocks(net, {blk}, Entourage::diagonal(pt));
}

Automorphism unit_shift(const LocalMatrixNet& net, std::int64_t k = 1) { return Automorphism::shift(net, CoarseMap::translate(line(), {k})); }

}  // namespace

TEST(Rational, ReducesAndMultiplies) {
  PositiveRational a(6, 4), b(2, 3);
  EXPECT_EQ(a.num, 3);
  EXPECT_EQ(a.den, 2);
  EXPECT_EQ(a * b, PositiveRational(1));
  EXPECT_EQ((a / b).str(), "9/4");
  EXPECT_THROW(PositiveRational(0, 1), InvalidArgument);
}

TEST(GroupCompletion, NaturalsUnderAddition) {
  GroupCompletion k(MonoidPresentation::naturals());
  auto d = k.difference(k.canonical_map(3), k.canonical_map(5));
  EXPECT_TRUE(k.equal(d, k.negate(k.canonical_map(2))));
  EXPECT_EQ(d.e.at(0), -2);
  EXPECT_FALSE(k.equal(d, k.canonical_map(2)));
}

TEST(GroupCompletion, MultiplicativeNaturalsArePositiveRationals) {
  GroupCompletion k(MonoidPresentation::multiplicative_naturals());
  EXPECT_EQ(k.to_rational(k.difference(k.canonical_map(2), k.canonical_map(3))), PositiveRational(2, 3));
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::int64_t> u(1, 5000);
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    auto x = k.difference(k.canonical_map(a), k.canonical_map(b));
    auto y = k.difference(k.canonical_map(c), k.canonical_map(d));
    EXPECT_EQ(k.equal(x, y), PositiveRational(a, b) == PositiveRational(c, d));
    EXPECT_EQ(k.to_rational(k.add(x, y)), PositiveRational(a, b) * PositiveRational(c, d));
    EXPECT_EQ(k.add(k.canonical_map(a), k.canonical_map(c)), k.canonical_map(a * c));
  }
}

TEST(GroupCompletion, MatchesBoundedWitnessSearch) {
  // a + x = a (absorbing) and 2y = 2z (torsion).
  auto absorbing = MonoidPresentation::free(2);
  absorbing.relate({1, 1}, {1, 0});
  auto torsion = MonoidPresentation::free(2);
  torsion.relate({2, 0}, {0, 2});
  for (const auto& m : {absorbing, torsion}) {
    GroupCompletion k(m);
    std::vector<Word> words;
    for (std::int64_t i = 0; i <= 2; ++i)
      for (std::int64_t j = 0; j <= 2; ++j) words.push_back({i, j});
    for (const auto& m1 : words)
      for (const auto& m2 : words)
        for (const auto& m3 : words) {
          const Word m4{0, 0};
          const bool fast = k.equal_differences(k.canonical_map(m1), k.canonical_map(m2), k.canonical_map(m3), k.canonical_map(m4));
          EXPECT_EQ(fast, witness_equal(m, m1, m2, m3, m4));
        }
  }
  GroupCompletion k(absorbing);
  EXPECT_TRUE(k.equal(k.canonical_map(Word{0, 1}), k.canonical_map(Word{0, 0})));
}

TEST(DimensionClass, ComponentsAndProducts) {
  auto p = Space::path(3);
  auto net = LocalMatrixNet::uniform(p, 2);
  auto c = dimension_class(net, Window::all(p));
  ASSERT_EQ(c.values.size(), 1u);
  EXPECT_EQ(c.values[0], PositiveRational(8));

  auto two = Space::finite_named({"a", "b"});
  auto net2 = LocalMatrixNet::table(two, {{Site::named("a"), 2}, {Site::named("b"), 3}});
  auto c2 = dimension_class(net2, Window::all(two));
  ASSERT_EQ(c2.values.size(), 2u);
  EXPECT_EQ(c2.values[0], PositiveRational(2));
  EXPECT_EQ(c2.values[1], PositiveRational(3));
}

TEST(DimensionClass, InvariantUnderPushforwardAlongCloseMap) {
  auto p = Space::path(4);
  auto net = LocalMatrixNet::table(p, {{Site::named("s0"), 2}, {Site::named("s1"), 3}, {Site::named("s2"), 5}, {Site::named("s3"), 2}});
  // Swapping two neighbours is close to the identity.
  std::map<Site, Site> t;
  for (int i = 0; i < 4; ++i) t[Site::named("s" + std::to_string(i))] = Site::named("s" + std::to_string(i));
  std::swap(t[Site::named("s1")], t[Site::named("s2")]);
  auto f = CoarseMap::explicit_map(p, p, t);
  auto pf = pushforward(f, net, Window::all(p));
  EXPECT_TRUE(dimension_class(pf.net, Window::all(p)).same_values(dimension_class(net, Window::all(p))));
  EXPECT_EQ(dimension_class(pf.net, Window::all(p)).values[0], PositiveRational(60));
}

TEST(DimensionClass, LocalAndAzumayaTags) {
  auto pt = Space::finite_named({"p"});
  auto c = k0_loc_to_az_class(LocalMatrixNet::uniform(pt, 4), Window::all(pt));
  EXPECT_EQ(c.tag, ClassTag::Local);
  EXPECT_EQ(c.values[0], PositiveRational(4));
  auto f = factor_at_point(2, 2, 3);
  auto az = k0_loc_to_az_class(f, Window::all(f.ambient().space()));
  EXPECT_EQ(az.tag, ClassTag::Azumaya);
  EXPECT_EQ(az.values[0], PositiveRational(2));
  EXPECT_FALSE(az.squared[0]);
}

TEST(DimensionClass, TaggingPreservesEquality) {
  // Local nets over two points, q in 1..4: equal classes stay equal once read as Azumaya classes of the whole algebras.
  auto two = Space::finite_named({"a", "b"});
  std::vector<DimensionClass> loc, az;
  for (int qa = 1; qa <= 4; ++qa)
    for (int qb = 1; qb <= 4; ++qb) {
      auto net = LocalMatrixNet::table(two, {{Site::named("a"), qa}, {Site::named("b"), qb}});
      loc.push_back(k0_loc_to_az_class(net, Window::all(two)));
      az.push_back(k0_loc_to_az_class(AzumayaPresentation::whole(net), Window::all(two)));
    }
  for (std::size_t i = 0; i < loc.size(); ++i)
    for (std::size_t j = 0; j < loc.size(); ++j) EXPECT_EQ(loc[i].same_values(loc[j]), az[i].same_values(az[j]));
}

TEST(Gnvw, SupportAlgebraOracleForQubits) {
  // Cells 0..3, pair (1,2) mapped and supported on the right half (2,3); dense matrices built by hand.
  const Mat i2 = identity(2);
  auto rdim = [&](int mode) {
    std::vector<Mat> images;
    for (int r = 0; r < 4; ++r)
      for (int s = 0; s < 4; ++s) {
        const Mat e = matrix_unit(4, r, s);
        if (mode == 0) images.push_back(kron(kron(i2, e), i2));  // identity
        if (mode == 1) images.push_back(kron(identity(4), e));   // right shift
        if (mode == 2) images.push_back(kron(e, identity(4)));   // left shift
      }
    return support_algebra(images, 4, 4, Side::Right).dim();
  };
  auto net = LocalMatrixNet::uniform(line(), 2);
  const int expect[3] = {4, 16, 1};
  const PositiveRational got[3] = {gnvw_index(Automorphism::identity(net), cells8()).index, gnvw_index(unit_shift(net), cells8()).index,
                                   gnvw_index(unit_shift(net, -1), cells8()).index};
  for (int mode = 0; mode < 3; ++mode) {
    EXPECT_EQ(rdim(mode), expect[mode]);
    EXPECT_EQ(got[mode], PositiveRational(exact_sqrt(expect[mode]), 2));
  }
}

TEST(Gnvw, Anchors) {
  for (int d = 2; d <= 5; ++d) {
    auto net = LocalMatrixNet::uniform(line(), d);
    EXPECT_EQ(gnvw_index(Automorphism::identity(net), cells8()).index, PositiveRational(1));
    auto r = gnvw_index(unit_shift(net), cells8());
    EXPECT_EQ(r.index, PositiveRational(d)) << d;
    EXPECT_EQ(r.blocking, 2);
    EXPECT_EQ(r.positions.size(), 2u);
    EXPECT_EQ(gnvw_index(unit_shift(net, -1), cells8()).index, PositiveRational(1, d));
  }
}

TEST(Gnvw, DepthOneCircuitsHaveIndexOne) {
  std::mt19937_64 rng(3);
  for (int q : {2, 3}) {
    auto net = LocalMatrixNet::uniform(line(), q);
    for (int start : {0, 1}) EXPECT_EQ(gnvw_index(random_layer(net, pairs_from(start, 7), rng), cells8()).index, PositiveRational(1));
  }
  auto net = LocalMatrixNet::uniform(line(), 2);
  auto w = random_layer(net, pairs_from(1, 11), rng);
  auto l = random_layer(net, pairs_from(0, 11), rng);
  EXPECT_EQ(gnvw_index(compose(w, l), Window::interval(line(), 0, 11)).index, PositiveRational(1));
}

TEST(Gnvw, PartialShiftCountsTheMovedFactor) {
  auto net = LocalMatrixNet::uniform_slots(line(), {2, 3});
  auto ps = Automorphism::shift(net, CoarseMap::translate(line(), {1}), 0, 1);
  EXPECT_EQ(gnvw_index(ps, cells8()).index, PositiveRational(2));
  auto ps1 = Automorphism::shift(net, CoarseMap::translate(line(), {1}), 1, 2);
  EXPECT_EQ(gnvw_index(ps1, cells8()).index, PositiveRational(3));
  EXPECT_EQ(gnvw_index(invert(ps), cells8()).index, PositiveRational(1, 2));
  EXPECT_EQ(gnvw_index(compose(ps, invert(ps1)), cells8()).index, PositiveRational(2, 3));
}

TEST(Gnvw, HomomorphismAndTensor) {
  auto q2 = LocalMatrixNet::uniform(line(), 2), q3 = LocalMatrixNet::uniform(line(), 3);
  std::mt19937_64 rng(5);
  auto c = random_layer(q2, pairs_from(0, 11), rng);
  auto s = unit_shift(q2);
  const Window w = Window::interval(line(), 0, 11);
  EXPECT_EQ(gnvw_index(compose(s, c), w).index, PositiveRational(2));
  EXPECT_EQ(gnvw_index(compose(s, s), w).index, PositiveRational(4));
  auto r = gnvw_index(compose(s, s), w);
  EXPECT_EQ(r.blocking, 4);
  auto t = tensor(s, invert(unit_shift(q3)));
  EXPECT_EQ(gnvw_index(t, cells8()).index, PositiveRational(2, 3));
}

TEST(Gnvw, StableUnderStabilizationAndConjugation) {
  auto net = LocalMatrixNet::uniform(line(), 2);
  auto e = stable_element(unit_shift(net));
  auto st = stabilize(e, LocalMatrixNet::uniform(line(), 3));
  EXPECT_EQ(gnvw_index(st.alpha, cells8()).index, PositiveRational(2));
  std::mt19937_64 rng(6);
  std::map<Site, Mat> vs;
  for (int i = -2; i <= 10; ++i) vs[Site::at(i)] = random_unitary(2, rng);
  auto c = conjugate_local(e, sitewise_hom(net, vs));
  EXPECT_EQ(gnvw_index(c.alpha, cells8()).index, PositiveRational(2));
  EXPECT_EQ(gnvw_index(multiply(e, stable_element(invert(e.alpha))).alpha, cells8()).index, PositiveRational(1));
}

TEST(Gnvw, RejectsShortWindowsAndOtherSpaces) {
  auto net = LocalMatrixNet::uniform(line(), 2);
  EXPECT_THROW(gnvw_index(unit_shift(net), Window::interval(line(), 0, 4)), InvalidArgument);
  auto p = Space::path(8);
  EXPECT_THROW(gnvw_index(Automorphism::identity(LocalMatrixNet::uniform(p, 2)), Window::all(p)), InvalidArgument);
}

TEST(BoundaryShift, ExamplesAndRoundTrip) {
  // M_2 inside M_2: the full qubit shift.
  auto full = mv_boundary_shift(factor_at_point(2, 1, 1), 8);
  EXPECT_EQ(gnvw_index(full.alpha, full.window).index, PositiveRational(2));
  EXPECT_LT(probe_distance(full.alpha, Automorphism::shift(full.net, CoarseMap::translate(full.net.space(), {1})), full.window), 1e-12);
  // Trivial factor: identity.
  auto triv = mv_boundary_shift(factor_at_point(1, 3, 2), 8);
  EXPECT_LT(probe_distance(triv.alpha, Automorphism::identity(triv.net), triv.window), 1e-12);
  EXPECT_EQ(gnvw_index(triv.alpha, triv.window).index, PositiveRational(1));
  auto m26 = mv_boundary_shift(factor_at_point(2, 3, 3), 8);
  EXPECT_EQ(m26.sizes.begin()->second, (std::pair<int, int>{2, 3}));
  EXPECT_EQ(gnvw_index(m26.alpha, m26.window).index, PositiveRational(2));
}

TEST(Swindle, TrivialAndQubitAtOrigin) {
  auto h = Space::half_grid(1, {true});
  auto f = CoarseMap::translate(h, {1});
  const Window w = Window::interval(h, 0, 6);
  auto triv = flasque_swindle_check(AzumayaPresentation::trivial(LocalMatrixNet::uniform(h, 1)), f, w);
  EXPECT_TRUE(triv.control.is_diagonal());
  EXPECT_TRUE(triv.verified());

  auto net = LocalMatrixNet::table(h, {{Site::at(0), 2}});
  auto rep = flasque_swindle_check(AzumayaPresentation::whole(net), f, w);
  EXPECT_EQ(rep.radius, 1);
  EXPECT_TRUE(rep.verified());
  for (std::int64_t y = 0; y <= 6; ++y) EXPECT_EQ(rep.stabilizer.dims.at(Site::at(y)), 2);
  auto z = Space::grid(1);
  EXPECT_THROW(flasque_swindle_check(AzumayaPresentation::whole(LocalMatrixNet::uniform(z, 2)), CoarseMap::translate(z, {1}), Window::interval(z, 0, 6)),
               InvalidArgument);
}
