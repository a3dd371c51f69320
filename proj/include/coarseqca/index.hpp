// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "coarseqca/qca.hpp"

namespace coarseqca {

// ---------------------------------------------------------------- rationals

struct PositiveRational {
  std::int64_t num = 1;
  std::int64_t den = 1;

  PositiveRational() = default;
  PositiveRational(std::int64_t n, std::int64_t d = 1) : num(n), den(d) {
    if (n <= 0 || d <= 0) throw InvalidArgument("positive rationals need positive numerator and denominator");
    reduce();
  }

  bool operator==(const PositiveRational&) const = default;
  bool operator<(const PositiveRational& o) const { return static_cast<__int128>(num) * o.den < static_cast<__int128>(o.num) * den; }

  PositiveRational operator*(const PositiveRational& o) const { return make(static_cast<__int128>(num) * o.num, static_cast<__int128>(den) * o.den); }
  PositiveRational operator/(const PositiveRational& o) const { return make(static_cast<__int128>(num) * o.den, static_cast<__int128>(den) * o.num); }
  PositiveRational inverse() const { return PositiveRational(den, num); }

  std::string str() const { return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den); }

 private:
  static PositiveRational make(__int128 n, __int128 d) {
    __int128 a = n, b = d;
    while (b != 0) {
      __int128 t = a % b;
      a = b;
      b = t;
    }
    n /= a;
    d /= a;
    constexpr __int128 lim = std::numeric_limits<std::int64_t>::max();
    if (n > lim || d > lim) throw ResourceError("rational overflow");
    PositiveRational r;
    r.num = static_cast<std::int64_t>(n);
    r.den = static_cast<std::int64_t>(d);
    return r;
  }
  void reduce() {
    const std::int64_t g = std::gcd(num, den);
    num /= g;
    den /= g;
  }
};

inline std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw ResourceError("integer overflow in an exact product");
  return r;
}

// ---------------------------------------------------------------- group completion

// Exponent vectors keyed by generator index (by prime for the multiplicative naturals).
using Exponents = std::map<std::int64_t, std::int64_t>;

inline Exponents& add_into(Exponents& a, const Exponents& b, std::int64_t scale = 1) {
  for (const auto& [k, v] : b) {
    a[k] += scale * v;
    if (a[k] == 0) a.erase(k);
  }
  return a;
}

inline std::map<std::int64_t, std::int64_t> factorize(std::int64_t n) {
  if (n < 1) throw InvalidArgument("only positive integers factor");
  std::map<std::int64_t, std::int64_t> f;
  for (std::int64_t p = 2; p * p <= n; ++p)
    while (n % p == 0) {
      ++f[p];
      n /= p;
    }
  if (n > 1) ++f[n];
  return f;
}

// A commutative monoid: free on `generators` modulo relations lhs = rhs, or (N>=1, *).
struct MonoidPresentation {
  enum class Kind { Presented, MultiplicativeNaturals };
  Kind kind = Kind::Presented;
  int generators = 0;
  std::vector<std::string> names;
  std::vector<std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>>> relations;

  static MonoidPresentation free(int n) {
    MonoidPresentation m;
    m.generators = n;
    for (int i = 0; i < n; ++i) m.names.push_back("g" + std::to_string(i));
    return m;
  }
  static MonoidPresentation naturals() { return free(1); }
  static MonoidPresentation multiplicative_naturals() {
    MonoidPresentation m;
    m.kind = Kind::MultiplicativeNaturals;
    return m;
  }
  MonoidPresentation& relate(std::vector<std::int64_t> lhs, std::vector<std::int64_t> rhs) {
    relations.push_back({std::move(lhs), std::move(rhs)});
    return *this;
  }
};

struct GroupElement {
  Exponents e;
  bool operator==(const GroupElement&) const = default;
};

// Grothendieck group of a presented commutative monoid: the abelian group on the same presentation.
class GroupCompletion {
 public:
  explicit GroupCompletion(MonoidPresentation m) : m_(std::move(m)) {
    if (m_.kind == MonoidPresentation::Kind::MultiplicativeNaturals) return;
    if (m_.generators < 0) throw InvalidArgument("negative generator count");
    for (const auto& [l, r] : m_.relations) {
      if (static_cast<int>(l.size()) != m_.generators || static_cast<int>(r.size()) != m_.generators)
        throw InvalidArgument("relation length does not match the generator count");
      for (auto v : l)
        if (v < 0) throw InvalidArgument("monoid words have non-negative exponents");
      for (auto v : r)
        if (v < 0) throw InvalidArgument("monoid words have non-negative exponents");
      std::vector<std::int64_t> d(l.size());
      for (std::size_t i = 0; i < l.size(); ++i) d[i] = l[i] - r[i];
      rows_.push_back(d);
    }
    hermite();
  }

  const MonoidPresentation& presentation() const { return m_; }

  // Monoid element as an exponent vector.
  GroupElement canonical_map(const std::vector<std::int64_t>& word) const {
    if (multiplicative()) throw InvalidArgument("use canonical_map(n) for the multiplicative naturals");
    if (static_cast<int>(word.size()) != m_.generators) throw InvalidArgument("word length does not match the generator count");
    GroupElement g;
    for (int i = 0; i < m_.generators; ++i)
      if (word[static_cast<std::size_t>(i)] < 0) throw InvalidArgument("monoid words have non-negative exponents");
      else if (word[static_cast<std::size_t>(i)] != 0) g.e[i] = word[static_cast<std::size_t>(i)];
    return g;
  }
  GroupElement canonical_map(std::int64_t n) const {
    if (!multiplicative()) {
      if (m_.generators != 1 || n < 0) throw InvalidArgument("integer elements need the one-generator monoid");
      return canonical_map(std::vector<std::int64_t>{n});
    }
    return GroupElement{factorize(n)};
  }

  GroupElement add(const GroupElement& a, const GroupElement& b) const {
    GroupElement out = a;
    add_into(out.e, b.e);
    return out;
  }
  GroupElement negate(const GroupElement& a) const {
    GroupElement out;
    add_into(out.e, a.e, -1);
    return out;
  }
  GroupElement difference(const GroupElement& a, const GroupElement& b) const { return add(a, negate(b)); }

  // Reduced representative: equal elements have equal normal forms.
  GroupElement normal_form(const GroupElement& a) const {
    if (multiplicative()) return a;
    std::vector<std::int64_t> v(static_cast<std::size_t>(m_.generators), 0);
    for (const auto& [k, x] : a.e) v[static_cast<std::size_t>(k)] = x;
    for (const auto& [p, row] : hnf_) {
      const std::int64_t h = row[static_cast<std::size_t>(p)];
      std::int64_t q = v[static_cast<std::size_t>(p)] / h;
      if (v[static_cast<std::size_t>(p)] - q * h < 0) --q;  // floor
      if (q != 0)
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] - checked_mul(q, row[i]);
    }
    GroupElement out;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] != 0) out.e[static_cast<std::int64_t>(i)] = v[i];
    return out;
  }

  bool equal(const GroupElement& a, const GroupElement& b) const { return normal_form(a) == normal_form(b); }

  // m1 - m2 == m3 - m4
  bool equal_differences(const GroupElement& m1, const GroupElement& m2, const GroupElement& m3, const GroupElement& m4) const {
    return equal(difference(m1, m2), difference(m3, m4));
  }

  PositiveRational to_rational(const GroupElement& a) const {
    if (!multiplicative()) throw InvalidArgument("only the multiplicative naturals complete to positive rationals");
    PositiveRational r;
    for (const auto& [p, k] : a.e)
      for (std::int64_t i = 0; i < (k < 0 ? -k : k); ++i) r = k > 0 ? r * PositiveRational(p) : r / PositiveRational(p);
    return r;
  }

  GroupElement from_rational(const PositiveRational& q) const {
    GroupElement g{factorize(q.num)};
    add_into(g.e, factorize(q.den), -1);
    return g;
  }

  bool multiplicative() const { return m_.kind == MonoidPresentation::Kind::MultiplicativeNaturals; }

  // Rank of the free part and the torsion-free quotient size, for reporting.
  int relation_rank() const { return static_cast<int>(hnf_.size()); }

 private:
  void hermite() {
    std::vector<std::vector<std::int64_t>> rows = rows_;
    const std::size_t n = static_cast<std::size_t>(m_.generators);
    std::size_t r0 = 0;
    for (std::size_t col = 0; col < n && r0 < rows.size(); ++col) {
      // Euclid on column col among rows r0..
      while (true) {
        std::size_t piv = rows.size();
        for (std::size_t r = r0; r < rows.size(); ++r)
          if (rows[r][col] != 0 && (piv == rows.size() || std::llabs(rows[r][col]) < std::llabs(rows[piv][col]))) piv = r;
        if (piv == rows.size()) break;
        std::swap(rows[r0], rows[piv]);
        bool done = true;
        for (std::size_t r = r0 + 1; r < rows.size(); ++r) {
          const std::int64_t q = rows[r][col] / rows[r0][col];
          if (q != 0)
            for (std::size_t i = 0; i < n; ++i) rows[r][i] -= checked_mul(q, rows[r0][i]);
          if (rows[r][col] != 0) done = false;
        }
        if (done) break;
      }
      if (rows[r0][col] == 0) continue;
      if (rows[r0][col] < 0)
        for (auto& x : rows[r0]) x = -x;
      // Reduce the rows above.
      for (auto& [p, row] : hnf_) {
        (void)p;
        std::int64_t q = row[col] / rows[r0][col];
        if (row[col] - q * rows[r0][col] < 0) --q;
        if (q != 0)
          for (std::size_t i = 0; i < n; ++i) row[i] -= checked_mul(q, rows[r0][i]);
      }
      hnf_.push_back({static_cast<int>(col), rows[r0]});
      ++r0;
    }
  }

  MonoidPresentation m_;
  std::vector<std::vector<std::int64_t>> rows_;
  std::vector<std::pair<int, std::vector<std::int64_t>>> hnf_;
};

// ---------------------------------------------------------------- dimension classes

enum class ClassTag { Local, Azumaya };

struct DimensionClass {
  std::vector<SiteSet> components;
  std::vector<PositiveRational> values;
  std::vector<bool> squared;  // value holds dim itself rather than its square root
  ClassTag tag = ClassTag::Local;

  bool same_values(const DimensionClass& o) const { return values == o.values && squared == o.squared; }
};

inline std::vector<SiteSet> window_components(const SpacePtr& s, const Window& w) {
  if (s->kind() == SpaceKind::Finite) return coarse_components(s, w);
  if (w.sites.empty()) return {};
  return {w.sites};
}

// prod_{x in C} q(x) per coarse component C of the window.
inline DimensionClass dimension_class(const LocalMatrixNet& net, const Window& window) {
  net.require_space(window.space);
  DimensionClass out;
  for (const auto& c : window_components(net.space(), window)) {
    std::int64_t p = 1;
    for (const auto& x : c) p = checked_mul(p, net.q(x));
    out.components.push_back(c);
    out.values.emplace_back(p);
    out.squared.push_back(false);
  }
  return out;
}

inline DimensionClass k0_loc_to_az_class(const LocalMatrixNet& net, const Window& window) {
  DimensionClass c = dimension_class(net, window);
  c.tag = ClassTag::Local;
  return c;
}

// Per component: sqrt(dim A(C)) when a perfect square, otherwise dim A(C) itself flagged as squared.
inline DimensionClass k0_loc_to_az_class(const AzumayaPresentation& p, const Window& window) {
  p.ambient().require_space(window.space);
  DimensionClass out;
  out.tag = ClassTag::Azumaya;
  for (const auto& c : window_components(p.ambient().space(), window)) {
    const int dim = p.evaluate(c).dim();
    const int k = exact_sqrt(dim);
    out.components.push_back(c);
    out.values.emplace_back(k > 0 ? k : dim);
    out.squared.push_back(k <= 0);
  }
  return out;
}

// ---------------------------------------------------------------- GNVW index

struct GnvwResult {
  PositiveRational index;
  std::int64_t radius = 0;    // measured control radius R
  int cell = 1;               // sites per cell, max(1, R)
  int blocking = 2;           // sites per blocked pair
  std::vector<std::int64_t> positions;  // first site of the right-overlapping pair at each checked position
  int cells = 0;
};

namespace detail {

struct UnionFind {
  std::vector<int> p;
  explicit UnionFind(int n) : p(static_cast<std::size_t>(n)) { std::iota(p.begin(), p.end(), 0); }
  int find(int x) { return p[static_cast<std::size_t>(x)] == x ? x : p[static_cast<std::size_t>(x)] = find(p[static_cast<std::size_t>(x)]); }
  void join(int a, int b) { p[static_cast<std::size_t>(find(a))] = find(b); }
};

// Non-scalar slices on `keep` of alpha applied to generic single-leg generators of the cells.
inline std::vector<LocalOp> side_slices(const Automorphism& alpha, const Legs& source, const Legs& keep, const Window& window) {
  std::vector<LocalOp> out;
  for (const auto& l : source)
    for (const auto& g : generic_leg_ops(l, 0x61)) {
      LocalOp im = apply(alpha, g, window, false);
      const Legs k = legs_intersection(im.legs, keep);
      if (k.empty()) continue;
      for (const auto& s : slices(im, k)) {
        LocalOp t = trim(LocalOp{k, s});
        if (t.legs.empty()) continue;
        t.m /= t.m.norm();
        out.push_back(t);
        out.push_back(adjoint(t));
      }
    }
  return out;
}

// Drops elements in the linear span of earlier ones with the same legs; the generated algebra is unchanged.
inline std::vector<LocalOp> independent_subset(const std::vector<LocalOp>& xs) {
  std::map<Legs, Mat> frames;
  std::vector<LocalOp> out;
  for (const auto& x : xs) {
    Mat& q = frames.try_emplace(x.legs, Mat(x.m.size(), 0)).first->second;
    if (auto r = orthogonal_direction(q, vec(x.m))) {
      q.conservativeResize(Eigen::NoChange, q.cols() + 1);
      q.col(q.cols() - 1) = *r;
      out.push_back(x);
    }
  }
  return out;
}

// Dimension of the cyclic subspace A psi for the algebra A generated by `gens` and a generic psi.
inline int cyclic_dimension(const std::vector<Mat>& gens, int d, std::uint64_t salt) {
  const auto c = generic_coefficients(2 * d, salt);
  Vec psi(d);
  for (int i = 0; i < d; ++i) psi(i) = cd(c[static_cast<std::size_t>(2 * i)], c[static_cast<std::size_t>(2 * i + 1)]);
  psi.normalize();
  Mat q(d, d);
  int k = 0;
  q.col(k++) = psi;
  const double tau = tolerances().rank;
  for (int next = 0; next < k && k < d; ++next) {
    const Vec v = q.col(next);
    for (const auto& g : gens) {
      if (k == d) break;
      Vec w = g * v;
      const double ref = w.norm();
      if (ref == 0) continue;
      for (int pass = 0; pass < 2; ++pass) w -= q.leftCols(k) * (q.leftCols(k).adjoint() * w);
      const double rel = w.norm() / ref;
      if (rel > 10 * tau) {
        q.col(k++) = w / w.norm();
      } else if (rel > tau) {
        throw IndeterminateError("cyclic subspace rank ambiguous (relative residual " + fmt_g(rel) + ")");
      }
    }
  }
  return k;
}

inline PositiveRational gnvw_at(const Automorphism& alpha, const Window& window, const std::vector<SiteSet>& cells, int c) {
  const LocalMatrixNet& net = alpha.net();
  auto legs_of = [&](std::initializer_list<int> idx) {
    SiteSet s;
    for (int i : idx) s = set_union(s, cells[static_cast<std::size_t>(i)]);
    return net.legs(s);
  };
  const Legs rp = legs_of({c + 1, c + 2});
  const auto rs = independent_subset(side_slices(alpha, legs_of({c, c + 1}), rp, window));
  const auto ls = independent_subset(side_slices(alpha, legs_of({c + 2, c + 3}), rp, window));

  UnionFind uf(static_cast<int>(rp.size()));
  auto index_of = [&](const Leg& l) { return static_cast<int>(std::lower_bound(rp.begin(), rp.end(), l) - rp.begin()); };
  for (const auto* side : {&rs, &ls})
    for (const auto& s : *side)
      for (const auto& l : s.legs) uf.join(index_of(s.legs.front()), index_of(l));
  std::map<int, Legs> comps;
  for (const auto& l : rp) comps[uf.find(index_of(l))].push_back(l);

  std::int64_t kr_total = 1;
  for (const auto& [root, legs] : comps) {
    const long dl = legs_dim(legs);
    if (dl == 1) continue;
    if (dl > (1L << 12)) throw ResourceError("component of " + std::to_string(dl) + " dimensions is beyond the dense cyclic-subspace budget");
    const int d = static_cast<int>(dl);
    auto dense = [&](const std::vector<LocalOp>& xs) {
      std::vector<Mat> out;
      for (const auto& x : xs)
        if (legs_subset(x.legs, legs)) out.push_back(embed(x, legs));
      return out;
    };
    const int a = cyclic_dimension(dense(rs), d, 0x9A1 + static_cast<std::uint64_t>(root));
    const int b = cyclic_dimension(dense(ls), d, 0x9B1 + static_cast<std::uint64_t>(root));
    int kr = 0;
    if (a < d && b < d) throw StructuralError("not a translation-uniform QCA window: both support algebras are small on a component");
    if (a < d) {
      kr = exact_sqrt(a);
    } else if (b < d) {
      const int kl = exact_sqrt(b);
      if (kl > 0 && d % kl == 0) kr = d / kl;
    } else {
      kr = exact_sqrt(d);
    }
    if (kr <= 0) throw StructuralError("not a translation-uniform QCA window: support dimension is not a perfect square");
    kr_total = checked_mul(kr_total, kr);
  }
  return PositiveRational(kr_total, legs_dim(legs_of({c + 1})));
}

}  // namespace detail

// Index of an automorphism of a net on Z, from support algebras of blocked pairs at two positions.
inline GnvwResult gnvw_index(const Automorphism& alpha, const Window& window) {
  const SpacePtr& s = alpha.net().space();
  if (s->kind() != SpaceKind::Grid || s->coord_count() != 1) throw InvalidArgument("the index is defined for nets on Z");
  if (window.space != s) throw StructuralError("window and automorphism live on different spaces");
  if (window.empty()) throw InvalidArgument("empty window");
  const std::int64_t lo = window.sites.front().coords[0], hi = window.sites.back().coords[0];
  if (hi - lo + 1 != static_cast<std::int64_t>(window.size())) throw InvalidArgument("the index needs a contiguous window");

  GnvwResult out;
  const ControlMeasurement m = measure_control(alpha, window);
  if (m.radius < 0) throw InvalidArgument("measured control is not a metric ball");
  out.radius = m.radius;
  out.cell = static_cast<int>(std::max<std::int64_t>(1, m.radius));
  out.blocking = 2 * out.cell;
  out.cells = static_cast<int>((hi - lo + 1) / out.cell);
  if (out.cells < 6)
    throw InvalidArgument("window holds " + std::to_string(out.cells) + " cells of " + std::to_string(out.cell) + " sites; at least 6 are needed");
  std::vector<SiteSet> cells(static_cast<std::size_t>(out.cells));
  for (int i = 0; i < out.cells; ++i)
    for (int j = 0; j < out.cell; ++j) cells[static_cast<std::size_t>(i)].push_back(Site::at(lo + static_cast<std::int64_t>(i) * out.cell + j));

  std::vector<int> pos{1};
  if (out.cells - 5 != 1) pos.push_back(out.cells - 5);
  std::optional<PositiveRational> first;
  for (int c : pos) {
    PositiveRational v = detail::gnvw_at(alpha, window, cells, c);
    out.positions.push_back(lo + static_cast<std::int64_t>(c + 1) * out.cell);
    if (first && !(*first == v))
      throw StructuralError("not a translation-uniform QCA window: index " + first->str() + " at one position, " + v.str() + " at another");
    first = v;
  }
  out.index = *first;
  return out;
}

// ---------------------------------------------------------------- boundary shift

struct BoundaryShift {
  LocalMatrixNet net;
  Automorphism alpha;
  std::map<Site, std::pair<int, int>> sizes;  // (a, b) per point of X
  Window window;                              // chain_length copies of X
};

// Places B = A (x) A' at every Z-coordinate and shifts the A-slots, conjugated by the splitting witnesses.
inline BoundaryShift mv_boundary_shift(const AzumayaPresentation& p, int chain_length) {
  const LocalMatrixNet& base = p.ambient();
  const SpacePtr& x = base.space();
  if (x->kind() != SpaceKind::Finite) throw InvalidArgument("the boundary shift is built over a finite space");
  if (chain_length < 1) throw InvalidArgument("chain length must be positive");
  BoundaryShift out;
  std::map<Site, Mat> witness;
  std::map<Site, Slots> slots;
  for (const auto& pt : x->sites()) {
    const StarAlgebra a = p.evaluate({pt});
    auto split = tensor_factor_split(a);
    if (!split) throw StructuralError("presentation does not split at " + pt.str());
    out.sizes[pt] = {split->a, split->b};
    witness[pt] = split->witness;
    slots[pt] = Slots{split->a, split->b};
  }
  const bool point = x->sites().size() == 1;
  const SpacePtr z = point ? Space::grid(1) : Space::product(x, Space::grid(1));
  auto project = [point, z](const Site& s) { return point ? Site{} : z->split(s).first; };
  const Site pt0 = x->sites().front();
  out.net = LocalMatrixNet::from_fn(
      z, [slots, project, point, pt0](const Site& s) { return slots.at(point ? pt0 : project(s)); }, "boundary(" + base.describe() + ")");
  auto w = [witness, project, point, pt0](const Site& s) -> std::optional<Mat> { return witness.at(point ? pt0 : project(s)); };
  auto wstar = [witness, project, point, pt0](const Site& s) -> std::optional<Mat> { return Mat(witness.at(point ? pt0 : project(s)).adjoint()); };
  const Automorphism in = Automorphism::sitelocal_fn(out.net, wstar, "W*");
  const Automorphism back = Automorphism::sitelocal_fn(out.net, w, "W");
  const Automorphism shift = Automorphism::shift(out.net, CoarseMap::axis_shift(z, z->coord_count() - 1, 1), 0, 1);
  out.alpha = compose(back, compose(shift, in));
  SiteSet sites;
  for (int n = 0; n < chain_length; ++n)
    for (const auto& q : x->sites()) sites.push_back(point ? Site::at(n) : concat(q, Site::at(n)));
  out.window = Window::of(z, sites);
  return out;
}

// ---------------------------------------------------------------- swindle

struct SwindleReport {
  ShiftStabilizer stabilizer;
  Entourage control;
  std::int64_t radius = -1;
  bool dims_ok = false;         // dims_S(y) = q(y) prod_{f(z) = y} dims_S(z)
  bool contained = false;       // control verified on every interior site
  double defect = 0;            // homomorphism defect on interior pairs
  SiteSet checked;
  bool verified() const { return dims_ok && contained && defect <= 1e3 * tolerances().alg; }
};

// The isomorphism S(B) -> B (x) S(B) for the ambient B of the presentation, witnessing [B] = 0.
inline SwindleReport flasque_swindle_check(const AzumayaPresentation& p, const CoarseMap& f, const Window& window, std::int64_t budget = 64) {
  const LocalMatrixNet& net = p.ambient();
  SwindleReport out;
  out.stabilizer = shift_stabilizer(net, f, window, budget);
  out.control = out.stabilizer.swindle.control;
  if (out.control.is_metric()) out.radius = out.control.radius();
  out.dims_ok = out.stabilizer.recursion_holds;
  for (const auto& y : window.sites) {
    Site fy;
    try {
      fy = f(y);
    } catch (const InvalidArgument&) {
      continue;
    }
    if (window.contains(fy)) out.checked.push_back(y);
  }
  if (out.checked.empty()) throw InvalidArgument("window is too small for one full shift period of " + f.describe());
  out.contained = true;
  for (const auto& y : out.checked) {
    try {
      if (!hom_contained(out.stabilizer.swindle, {y}, out.control)) out.contained = false;
      SiteSet pair{y, f(y)};
      normalize(pair);
      out.defect = std::max(out.defect, hom_defect(out.stabilizer.swindle, pair));
    } catch (const InvalidArgument&) {
      // legs past the window edge have no image; those sites are not checked
    }
  }
  return out;
}

}  // namespace coarseqca
