// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "coarseqca/qca.hpp"

using namespace coarseqca;

namespace {

SpacePtr line() {
  static const SpacePtr z = Space::grid(1);
  return z;
}

std::vector<SiteSet> pairs_from(std::int64_t start, std::int64_t lo, std::int64_t hi) {
  std::vector<SiteSet> out;
  for (std::int64_t i = start; i + 1 <= hi; i += 2)
    if (i >= lo) out.push_back({Site::at(i), Site::at(i + 1)});
  return out;
}

// W L W^-1 with L on even pairs and W on odd pairs of 0..7.
struct Instance {
  LocalMatrixNet net;
  Window window;
  Automorphism w, l, alpha;
  LocalityCertificate cert;
};

Instance random_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.net = LocalMatrixNet::uniform(line(), 2);
  in.window = Window::interval(line(), 0, 7);
  in.l = random_layer(in.net, pairs_from(0, 0, 7), rng);
  in.w = random_layer(in.net, pairs_from(1, 0, 7), rng);
  in.alpha = compose(in.w, compose(in.l, invert(in.w)));
  in.cert = conjugate_certificate(in.w, circuit_certificate(in.net, pairs_from(0, 0, 7), in.window), in.window);
  return in;
}

Mat dense_on(const LocalMatrixNet& net, const LocalOp& x, const SiteSet& all) { return embed(x, net.legs(all)); }

}  // namespace

TEST(Qca, IdentityWordFixesOperators) {
  auto net = LocalMatrixNet::uniform(line(), 3);
  auto id = Automorphism::identity(net);
  std::mt19937_64 rng(1);
  LocalOp x{net.legs({Site::at(0), Site::at(1)}), random_matrix(9, 9, rng)};
  LocalOp y = apply(id, x, Window::interval(line(), -2, 2));
  EXPECT_LT(distance(x, y), 1e-14);
  EXPECT_TRUE(id.declared_control().is_diagonal());
}

TEST(Qca, FullShiftMovesSiteZeroToOne) {
  auto net = LocalMatrixNet::uniform(line(), 2);
  auto s = Automorphism::shift(net, CoarseMap::translate(line(), {1}));
  std::mt19937_64 rng(2);
  Mat a = random_matrix(2, 2, rng);
  LocalOp y = apply(s, LocalOp{net.legs({Site::at(0)}), a}, Window::interval(line(), -3, 3));
  ASSERT_EQ(y.sites(), SiteSet{Site::at(1)});
  EXPECT_LT((y.m - a).norm(), 1e-14);
}

TEST(Qca, TwoLayerCircuitMatchesDenseUnitary) {
  auto net = LocalMatrixNet::uniform(line(), 2);
  std::mt19937_64 rng(3);
  auto l1 = random_layer(net, pairs_from(0, 0, 5), rng);
  auto l2 = random_layer(net, pairs_from(1, 0, 5), rng);
  auto alpha = compose(l2, l1);
  SiteSet all;
  for (int i = 0; i < 6; ++i) all.push_back(Site::at(i));
  const Legs legs = net.legs(all);
  Mat u1 = identity(64), u2 = identity(64);
  for (const auto& b : std::get<LayerAtom>(l1.word()[0]).blocks) u1 = embed(b, legs) * u1;
  for (const auto& b : std::get<LayerAtom>(l2.word()[0]).blocks) u2 = embed(b, legs) * u2;
  const Mat u = u2 * u1;
  Window w = Window::of(line(), all);
  for (int site = 2; site <= 3; ++site) {
    LocalOp x{net.legs({Site::at(site)}), random_matrix(2, 2, rng)};
    LocalOp y = apply(alpha, x, w);
    EXPECT_LT((dense_on(net, y, all) - u * embed(x, legs) * u.adjoint()).norm(), 1e-11);
  }
  // Site 0 fattens to {0, 1, 2}, fine; a window without site 2 is too small.
  EXPECT_THROW(apply(alpha, LocalOp{net.legs({Site::at(1)}), identity(2)}, Window::interval(line(), 0, 1)), InvalidArgument);
}

TEST(Qca, ComposedShiftsHaveBallTwoControl) {
  auto net = LocalMatrixNet::uniform(line(), 2);
  auto s = Automorphism::shift(net, CoarseMap::translate(line(), {1}));
  auto ss = compose(s, s);
  ASSERT_TRUE(ss.declared_control().is_metric());
  EXPECT_EQ(ss.declared_control().radius(), 2);
  auto m = measure_control(ss, Window::interval(line(), 0, 9));
  EXPECT_EQ(m.radius, 2);
  EXPECT_TRUE(m.within_declared);
}

TEST(Qca, MeasuredControlOfUnitShift) {
  auto net = LocalMatrixNet::uniform(line(), 2);
  auto s = Automorphism::shift(net, CoarseMap::translate(line(), {1}));
  auto m = measure_control(s, Window::interval(line(), 0, 5));
  EXPECT_EQ(m.radius, 1);
  EXPECT_TRUE(m.within_declared);
  EXPECT_EQ(m.measured.size(), 4u);
  auto inv = measure_control(invert(s), Window::interval(line(), 0, 5));
  EXPECT_EQ(inv.radius, 1);
  EXPECT_THROW(measure_control(s, Window::interval(line(), 0, 0)), InvalidArgument);
}

TEST(Qca, InverseCancels) {
  auto in = random_instance(4);
  EXPECT_LT(probe_distance(compose(in.alpha, invert(in.alpha)), Automorphism::identity(in.net), in.window), 1e-11);
  auto s = Automorphism::shift(in.net, CoarseMap::translate(line(), {1}));
  EXPECT_LT(probe_distance(compose(invert(s), s), Automorphism::identity(in.net), in.window), 1e-14);
}

TEST(Qca, TensorControlIsUnionAndActsOnFactors) {
  auto a = LocalMatrixNet::uniform(line(), 2), b = LocalMatrixNet::uniform(line(), 3);
  auto sa = Automorphism::shift(a, CoarseMap::translate(line(), {1}));
  auto sb = compose(Automorphism::shift(b, CoarseMap::translate(line(), {-1})), Automorphism::shift(b, CoarseMap::translate(line(), {-1})));
  auto t = tensor(sa, sb);
  Window w = Window::interval(line(), 0, 8);
  auto m = measure_control(t, w);
  EXPECT_EQ(m.radius, 2);
  // x on the second factor at site 4 moves to site 2, on slot 1.
  std::mt19937_64 rng(5);
  Mat x = random_matrix(3, 3, rng);
  LocalOp in{{tensor_right_leg(a, Leg{Site::at(4), 0, 3})}, x};
  LocalOp out = apply(t, in, w);
  ASSERT_EQ(out.legs.size(), 1u);
  EXPECT_EQ(out.legs[0], (Leg{Site::at(2), 1, 3}));
  EXPECT_LT((out.m - x).norm(), 1e-14);
}

TEST(Qca, PartialShiftNeedsEqualDimensions) {
  auto net = LocalMatrixNet::uniform_slots(line(), {2, 3});
  auto s = Automorphism::shift(net, CoarseMap::translate(line(), {1}), 0, 1);
  std::mt19937_64 rng(6);
  Mat x = random_matrix(6, 6, rng);
  LocalOp in{net.legs({Site::at(0)}), x};
  LocalOp out = apply(s, in, Window::interval(line(), -2, 2));
  EXPECT_EQ(out.sites(), (SiteSet{Site::at(0), Site::at(1)}));
  EXPECT_LT(std::abs(out.m.norm() - x.norm()), 1e-12);
  auto uneven = LocalMatrixNet::table(line(), {{Site::at(1), 3}}, 2);
  auto bad = Automorphism::shift(uneven, CoarseMap::translate(line(), {1}));
  EXPECT_THROW(apply(bad, LocalOp{uneven.legs({Site::at(0)}), Mat(Mat::Random(2, 2))}, Window::interval(line(), -2, 2)), StructuralError);
  EXPECT_THROW(Automorphism::shift(net, CoarseMap::pointwise(line(), line(), "neg", [](const Site& x) { return Site::at(-x.coords[0]); })),
               InvalidArgument);
}

TEST(Qca, DepthOneCircuitPassesItsOwnCertificate) {
  auto net = LocalMatrixNet::uniform(line(), 2);
  std::mt19937_64 rng(7);
  Window w = Window::interval(line(), 0, 5);
  auto blocks = pairs_from(0, 0, 5);
  auto l = random_layer(net, blocks, rng);
  auto rep = verify_certificate(l, circuit_certificate(net, blocks, w), w);
  EXPECT_TRUE(rep.passes()) << (rep.failures.empty() ? "" : rep.failures.front());
  EXPECT_EQ(rep.product_dim, 64);
  // The odd-pair layer does not preserve even-pair factors.
  auto odd = random_layer(net, pairs_from(1, 0, 5), rng);
  auto bad = verify_certificate(odd, circuit_certificate(net, blocks, w), w);
  EXPECT_FALSE(bad.invariant);
  EXPECT_TRUE(bad.commuting);
  // A shift moves everything out of its block.
  auto shift = Automorphism::shift(net, CoarseMap::translate(line(), {1}));
  auto sr = verify_certificate(shift, circuit_certificate(net, blocks, w), w);
  EXPECT_FALSE(sr.passes());
}

TEST(Qca, CertificateRejectsIncompleteFactors) {
  auto net = LocalMatrixNet::uniform(line(), 2);
  Window w = Window::interval(line(), 0, 3);
  auto cert = circuit_certificate(net, pairs_from(0, 0, 3), w);
  cert.blocks.pop_back();
  auto rep = verify_certificate(Automorphism::identity(net), cert, w);
  EXPECT_FALSE(rep.product_matches);
  EXPECT_EQ(rep.product_dim, 4);
  EXPECT_EQ(rep.window_dim, 16);
}

TEST(Qca, ConjugatedCertificateVerifies) {
  for (std::uint64_t seed : {11u, 12u}) {
    auto in = random_instance(seed);
    auto rep = verify_certificate(in.alpha, in.cert, in.window);
    EXPECT_TRUE(rep.passes()) << (rep.failures.empty() ? "" : rep.failures.front());
    std::mt19937_64 rng(seed + 100);
    auto beta = random_layer(in.net, {{Site::at(3), Site::at(4)}}, rng);
    auto conj = compose(beta, compose(in.alpha, invert(beta)));
    auto c2 = conjugate_certificate(beta, in.cert, in.window);
    auto r2 = verify_certificate(conj, c2, in.window);
    EXPECT_TRUE(r2.passes()) << (r2.failures.empty() ? "" : r2.failures.front());
  }
}

TEST(Qca, UniformBoundExamples) {
  Window w = Window::interval(line(), -10, 10);
  for (std::int64_t r : {1, 2, 3}) EXPECT_EQ(uniform_local_finiteness_bound(w.sites, Entourage::ball(line(), r), w), 2 * r + 1);
  SiteSet evens;
  for (std::int64_t i = -10; i <= 10; i += 2) evens.push_back(Site::at(i));
  EXPECT_EQ(uniform_local_finiteness_bound(evens, Entourage::ball(line(), 1), w), 1);
  EXPECT_EQ(uniform_local_finiteness_bound(evens, Entourage::ball(line(), 2), w), 3);
}

TEST(Qca, LayeringReproducesAlpha) {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    auto in = random_instance(seed);
    auto lay = layer_circuit(in.alpha, in.cert, in.window.sites, in.window);
    EXPECT_LE(lay.circuit.depth(), lay.bound + 1);
    EXPECT_GT(lay.probes, 0);
    EXPECT_LE(lay.residual, 1e-9);
    for (const auto& layer : lay.circuit.layers)
      for (const auto& g : layer) EXPECT_LT(unitarity_defect(g.u.m), 1e-10);
  }
}

TEST(Qca, LayeringRejectsFailingCertificate) {
  auto in = random_instance(31);
  auto shift = Automorphism::shift(in.net, CoarseMap::translate(line(), {1}));
  EXPECT_THROW(layer_circuit(shift, in.cert, in.window.sites, in.window), InvalidArgument);
}

TEST(Qca, SwapTrickIsSwapAndInvolution) {
  auto net = LocalMatrixNet::uniform(line(), 2);
  Window w = Window::interval(line(), 0, 3);
  auto swap = swap_trick(identity_hom(net));
  std::mt19937_64 rng(41);
  Mat a = random_matrix(2, 2, rng);
  const Legs site = swap.net().legs({Site::at(1)});
  ASSERT_EQ(site.size(), 2u);
  LocalOp out = apply(swap, LocalOp{{site[0]}, a}, w);
  ASSERT_EQ(out.legs.size(), 1u);
  EXPECT_EQ(out.legs[0], site[1]);
  EXPECT_LT((out.m - a).norm(), 1e-13);

  std::map<Site, Mat> vs;
  for (int i = 0; i <= 3; ++i) vs[Site::at(i)] = random_unitary(2, rng);
  auto phi = sitewise_hom(net, vs);
  auto big = swap_trick(phi);
  EXPECT_LT(probe_distance(compose(big, big), Automorphism::identity(big.net()), w), 1e-12);

  // Phi (alpha (x) id) Phi = id (x) phi alpha phi^-1.
  auto alpha = random_layer(net, {{Site::at(1), Site::at(2)}}, rng);
  auto lhs = compose(big, compose(tensor(alpha, Automorphism::identity(net)), big));
  auto rhs = tensor(Automorphism::identity(net), conjugate_by(phi, alpha));
  EXPECT_LT(probe_distance(lhs, rhs, w), 1e-11);
}

TEST(Qca, SwapTrickNeedsSitewiseMap) {
  auto net = LocalMatrixNet::uniform(line(), 2);
  NetHom h = identity_hom(net);
  h.sitewise.reset();
  EXPECT_THROW(swap_trick(h), InvalidArgument);
}

TEST(Qca, StableOperations) {
  auto in = random_instance(51);
  auto e = stable_element(in.alpha);
  auto extra = LocalMatrixNet::uniform(line(), 3);
  auto st = stabilize(e, extra);
  EXPECT_EQ(st.net.q(Site::at(0)), 6);
  Window w = in.window;
  // alpha (x) id agrees with alpha on the first factor.
  LocalOp x{in.net.legs({Site::at(3)}), identity(2)};
  x.m(0, 1) = 1.0;
  EXPECT_LT(distance(apply(st.alpha, x, w), apply(in.alpha, x, w)), 1e-12);
  auto prod = multiply(e, stable_element(invert(in.alpha)));
  EXPECT_LT(probe_distance(prod.alpha, Automorphism::identity(in.net), w), 1e-11);
  auto t = eh_tensor(e, stable_element(Automorphism::identity(extra)));
  EXPECT_LT(probe_distance(t.alpha, st.alpha, w), 1e-12);
  std::map<Site, Mat> vs;
  std::mt19937_64 rng(52);
  for (int i = 0; i <= 7; ++i) vs[Site::at(i)] = random_unitary(2, rng);
  auto c = conjugate_local(e, sitewise_hom(in.net, vs));
  EXPECT_EQ(c.history.back().substr(0, 9), "conjugate");
  auto shift_hom = identity_hom(in.net);
  shift_hom.control = Entourage::ball(line(), 1);
  EXPECT_THROW(conjugate_local(e, shift_hom), InvalidArgument);
}
