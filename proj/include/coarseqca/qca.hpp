// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "coarseqca/nets.hpp"

namespace coarseqca {

// ---------------------------------------------------------------- atoms

// One unitary per site, on that site's legs; sites without a unit are untouched.
struct SiteLocalAtom {
  std::function<std::optional<LocalOp>(const Site&)> unit;
  std::string description;
};

// Unitaries on pairwise disjoint leg sets.
struct LayerAtom {
  std::vector<LocalOp> blocks;
};

// Moves slots [begin, end) of the owning factor along a translation; end < 0 means all of them.
// offset(x) is where the owning factor's slots start at x, width(x) how many it has.
struct ShiftAtom {
  CoarseMap map;
  int begin = 0;
  int end = -1;
  std::function<int(const Site&)> offset;
  std::function<int(const Site&)> width;
};

struct WindowAtom {
  LocalOp u;
};

using Atom = std::variant<SiteLocalAtom, LayerAtom, ShiftAtom, WindowAtom>;

namespace detail {

inline Relation block_pairs(const std::vector<SiteSet>& blocks) {
  Relation r;
  for (const auto& b : blocks)
    for (const auto& x : b)
      for (const auto& y : b)
        if (!(x == y)) r.insert({x, y});
  return r;
}

inline std::int64_t translation_radius(const CoarseMap& f) {
  std::int64_t r = 0;
  for (auto v : f.vector()) r = std::max<std::int64_t>(r, v < 0 ? -v : v);
  return r;
}

inline Entourage atom_control(const LocalMatrixNet& net, const Atom& atom) {
  const SpacePtr& s = net.space();
  if (std::holds_alternative<SiteLocalAtom>(atom)) return Entourage::diagonal(s);
  if (const auto* l = std::get_if<LayerAtom>(&atom)) {
    std::vector<SiteSet> bs;
    for (const auto& b : l->blocks) bs.push_back(b.sites());
    return Entourage::relation(s, block_pairs(bs));
  }
  if (const auto* sh = std::get_if<ShiftAtom>(&atom)) return Entourage::ball(s, translation_radius(sh->map));
  const auto& w = std::get<WindowAtom>(atom);
  return Entourage::relation(s, block_pairs({w.u.sites()}));
}

inline Leg shift_leg(const LocalMatrixNet& net, const ShiftAtom& a, const Leg& l) {
  const int off = a.offset ? a.offset(l.site) : 0;
  const int r = l.slot - off;
  const int end = a.end < 0 ? (a.width ? a.width(l.site) : net.slot_count(l.site) - off) : a.end;
  if (r < a.begin || r >= end) return l;
  const Site y = a.map(l.site);
  const int slot = r + (a.offset ? a.offset(y) : 0);
  const Slots target = net.slots(y);
  if (slot >= static_cast<int>(target.size()) || target[static_cast<std::size_t>(slot)] != l.dim)
    throw StructuralError("partial shift needs equal a-dimensions along the orbit: leg " + l.str() + " has no match at " + y.str());
  return Leg{y, slot, l.dim};
}

inline LocalOp apply_atom(const LocalMatrixNet& net, const Atom& atom, const LocalOp& x, bool inverse) {
  if (const auto* s = std::get_if<SiteLocalAtom>(&atom)) {
    LocalOp cur = x;
    for (const auto& site : x.sites())
      if (auto u = s->unit(site)) cur = conjugate(cur, inverse ? adjoint(*u) : *u);
    return cur;
  }
  if (const auto* l = std::get_if<LayerAtom>(&atom)) {
    LocalOp cur = x;
    for (const auto& b : l->blocks)
      if (!legs_intersection(cur.legs, b.legs).empty()) cur = conjugate(cur, inverse ? adjoint(b) : b);
    return cur;
  }
  if (const auto* sh = std::get_if<ShiftAtom>(&atom)) {
    if (!inverse) return relabel(x, [&](const Leg& l) { return shift_leg(net, *sh, l); });
    ShiftAtom inv = *sh;
    inv.map = sh->map.inverse_translation();
    return relabel(x, [&](const Leg& l) { return shift_leg(net, inv, l); });
  }
  const auto& w = std::get<WindowAtom>(atom);
  if (legs_intersection(x.legs, w.u.legs).empty()) return x;
  return conjugate(x, inverse ? adjoint(w.u) : w.u);
}

inline Atom invert_atom(const Atom& atom) {
  if (const auto* s = std::get_if<SiteLocalAtom>(&atom)) {
    auto f = s->unit;
    return SiteLocalAtom{[f](const Site& x) -> std::optional<LocalOp> {
                           auto u = f(x);
                           if (u) return adjoint(*u);
                           return std::nullopt;
                         },
                         "inverse(" + s->description + ")"};
  }
  if (const auto* l = std::get_if<LayerAtom>(&atom)) {
    LayerAtom out;
    for (const auto& b : l->blocks) out.blocks.push_back(adjoint(b));
    return out;
  }
  if (const auto* sh = std::get_if<ShiftAtom>(&atom)) {
    ShiftAtom out = *sh;
    out.map = sh->map.inverse_translation();
    return out;
  }
  return WindowAtom{adjoint(std::get<WindowAtom>(atom).u)};
}

inline void require_unitary(const LocalOp& u, const std::string& what) {
  if (u.m.rows() != u.dim() || u.m.cols() != u.dim()) throw StructuralError(what + " does not match its legs");
  if (unitarity_defect(u.m) > 1e3 * tolerances().alg) throw InvalidArgument(what + " is not unitary");
}

}  // namespace detail

// ---------------------------------------------------------------- automorphisms

// A controlled automorphism given as a word of atoms, applied first to last.
class Automorphism {
 public:
  Automorphism() = default;

  static Automorphism identity(LocalMatrixNet net) {
    Automorphism a;
    a.control_ = Entourage::diagonal(net.space());
    a.net_ = std::move(net);
    a.desc_ = "id";
    return a;
  }

  static Automorphism sitelocal(LocalMatrixNet net, const std::map<Site, Mat>& units) {
    auto table = std::make_shared<std::map<Site, LocalOp>>();
    for (const auto& [x, m] : units) {
      LocalOp u{net.site_legs(x), m};
      detail::require_unitary(u, "unitary at " + x.str());
      if (!u.legs.empty()) (*table)[x] = u;
    }
    SiteLocalAtom atom{[table](const Site& x) -> std::optional<LocalOp> {
                         auto it = table->find(x);
                         if (it == table->end()) return std::nullopt;
                         return it->second;
                       },
                       "sitelocal"};
    return from_atom(std::move(net), atom, "sitelocal");
  }

  // Same unitary-valued function at every site (for instance a translation-invariant on-site gate).
  static Automorphism sitelocal_fn(LocalMatrixNet net, std::function<std::optional<Mat>(const Site&)> fn, std::string desc) {
    SiteLocalAtom atom{[net, fn](const Site& x) -> std::optional<LocalOp> {
                         auto m = fn(x);
                         if (!m) return std::nullopt;
                         LocalOp u{net.site_legs(x), *m};
                         detail::require_unitary(u, "unitary at " + x.str());
                         if (u.legs.empty()) return std::nullopt;
                         return u;
                       },
                       desc};
    return from_atom(std::move(net), atom, desc);
  }

  static Automorphism layer(LocalMatrixNet net, std::vector<LocalOp> blocks) {
    Legs seen;
    for (const auto& b : blocks) {
      detail::require_unitary(b, "block unitary on " + to_string(b.legs));
      if (!legs_intersection(seen, b.legs).empty()) throw InvalidArgument("layer blocks overlap on " + to_string(legs_intersection(seen, b.legs)));
      seen = legs_union(seen, b.legs);
    }
    return from_atom(std::move(net), LayerAtom{std::move(blocks)}, "layer");
  }

  // Full shift (all slots) or the slot range [begin, end) along a translation.
  static Automorphism shift(LocalMatrixNet net, const CoarseMap& f, int begin = 0, int end = -1) {
    if (f.domain() != net.space() || f.codomain() != net.space()) throw StructuralError("shift map does not act on the net's space");
    if (!f.is_translation() || !(f.kind() == MapKind::Translate || f.kind() == MapKind::AxisShift || f.kind() == MapKind::Identity))
      throw InvalidArgument("partial shifts need a bijective translation, got " + f.describe());
    if (begin < 0 || (end >= 0 && end < begin)) throw InvalidArgument("bad slot range for a partial shift");
    ShiftAtom atom{f, begin, end, nullptr, nullptr};
    return from_atom(std::move(net), atom, "shift(" + f.describe() + ")");
  }

  static Automorphism window_unitary(LocalMatrixNet net, LocalOp u) {
    detail::require_unitary(u, "window unitary");
    return from_atom(std::move(net), WindowAtom{std::move(u)}, "window");
  }

  static Automorphism from_atom(LocalMatrixNet net, Atom atom, std::string desc) {
    Automorphism a;
    a.control_ = detail::atom_control(net, atom);
    a.net_ = std::move(net);
    a.word_.push_back(std::move(atom));
    a.desc_ = std::move(desc);
    return a;
  }

  static Automorphism from_word(LocalMatrixNet net, std::vector<Atom> word, Entourage control, std::string desc) {
    Automorphism a;
    a.net_ = std::move(net);
    a.word_ = std::move(word);
    a.control_ = std::move(control);
    a.desc_ = std::move(desc);
    return a;
  }

  const LocalMatrixNet& net() const { return net_; }
  const std::vector<Atom>& word() const { return word_; }
  const Entourage& declared_control() const { return control_; }
  const std::string& describe() const { return desc_; }

 private:
  LocalMatrixNet net_;
  std::vector<Atom> word_;
  Entourage control_;
  std::string desc_;
};

// apply(compose(a, b), x) = apply(a, apply(b, x)).
inline Automorphism compose(const Automorphism& a, const Automorphism& b) {
  if (a.net().space() != b.net().space()) throw StructuralError("automorphisms act on different spaces");
  std::vector<Atom> word = b.word();
  word.insert(word.end(), a.word().begin(), a.word().end());
  return Automorphism::from_word(a.net(), std::move(word), compose_entourages(a.declared_control(), b.declared_control()),
                                 a.describe() + "*" + b.describe());
}

inline Automorphism invert(const Automorphism& a) {
  std::vector<Atom> word;
  for (auto it = a.word().rbegin(); it != a.word().rend(); ++it) word.push_back(detail::invert_atom(*it));
  return Automorphism::from_word(a.net(), std::move(word), invert_entourage(a.declared_control()), "inverse(" + a.describe() + ")");
}

// alpha (x) beta on the tensor net (slots of a first, then b's).
inline Automorphism tensor(const Automorphism& a, const Automorphism& b) {
  const LocalMatrixNet na = a.net(), nb = b.net();
  const LocalMatrixNet net = tensor(na, nb);
  auto right = [na](const Leg& l) { return tensor_right_leg(na, l); };
  std::vector<Atom> word;
  for (const auto& atom : a.word()) {
    if (const auto* sh = std::get_if<ShiftAtom>(&atom)) {
      ShiftAtom s = *sh;
      if (!s.width) s.width = [na](const Site& x) { return na.slot_count(x); };
      word.push_back(s);
    } else {
      word.push_back(atom);
    }
  }
  for (const auto& atom : b.word()) {
    if (const auto* s = std::get_if<SiteLocalAtom>(&atom)) {
      auto f = s->unit;
      word.push_back(SiteLocalAtom{[f, right](const Site& x) -> std::optional<LocalOp> {
                                     auto u = f(x);
                                     if (u) return relabel(*u, right);
                                     return std::nullopt;
                                   },
                                   s->description});
    } else if (const auto* l = std::get_if<LayerAtom>(&atom)) {
      LayerAtom out;
      for (const auto& blk : l->blocks) out.blocks.push_back(relabel(blk, right));
      word.push_back(out);
    } else if (const auto* sh = std::get_if<ShiftAtom>(&atom)) {
      ShiftAtom s = *sh;
      auto old_off = sh->offset;
      auto old_width = sh->width;
      s.offset = [na, old_off](const Site& x) { return na.slot_count(x) + (old_off ? old_off(x) : 0); };
      s.width = [nb, old_width, old_off](const Site& x) { return old_width ? old_width(x) : nb.slot_count(x) - (old_off ? old_off(x) : 0); };
      word.push_back(s);
    } else {
      word.push_back(WindowAtom{relabel(std::get<WindowAtom>(atom).u, right)});
    }
  }
  return Automorphism::from_word(net, std::move(word), union_entourages(a.declared_control(), b.declared_control()),
                                 "(" + a.describe() + ")x(" + b.describe() + ")");
}

// Evaluates the word on x. The support of x fattened by the declared control must lie in the window;
// with precheck off only the actual intermediate supports are checked.
inline LocalOp apply(const Automorphism& alpha, const LocalOp& x, const Window& window, bool precheck = true) {
  const SiteSet outside = precheck ? set_difference(fatten(x.sites(), alpha.declared_control()), window.sites) : SiteSet{};
  if (!outside.empty())
    throw InvalidArgument("support " + to_string(x.sites()) + " fattened by " + alpha.declared_control().describe() +
                          " leaves the window at " + to_string(outside));
  LocalOp cur = trim(x);
  for (const auto& atom : alpha.word()) {
    cur = trim(detail::apply_atom(alpha.net(), atom, cur, false));
    const SiteSet esc = set_difference(cur.sites(), window.sites);
    if (esc.empty()) continue;
    if (precheck) throw StructuralError("image left the window at " + to_string(esc) + "; the declared control understates the fattening");
    throw InvalidArgument("image left the window at " + to_string(esc));
  }
  return cur;
}

// Dense version: a on legs(b) in, alpha(a) on legs(b fattened by the declared control) out.
inline Mat apply(const Automorphism& alpha, const Mat& a, const SiteSet& b, const Window& window) {
  const LocalMatrixNet& net = alpha.net();
  LocalOp im = apply(alpha, make_op(net.legs(b), a), window);
  const Legs out = net.legs(fatten(b, alpha.declared_control()));
  return embed(extend(im, legs_union(im.legs, out)), out);
}

// Sites whose declared fattening stays inside the window.
inline SiteSet interior(const Automorphism& alpha, const Window& window) {
  SiteSet out;
  for (const auto& x : window.sites)
    if (subset(fatten({x}, alpha.declared_control()), window.sites)) out.push_back(x);
  return out;
}

// Largest operator-norm distance between alpha and beta on single-site matrix units of interior sites.
inline double probe_distance(const Automorphism& alpha, const Automorphism& beta, const Window& window, int* probes = nullptr) {
  const SiteSet in = set_intersection(interior(alpha, window), interior(beta, window));
  double worst = 0;
  int count = 0;
  for (const auto& x : in)
    for (const auto& e : matrix_units(alpha.net().legs({x}))) {
      worst = std::max(worst, distance(apply(alpha, e, window), apply(beta, e, window)));
      ++count;
    }
  if (probes) *probes = count;
  return worst;
}

// ---------------------------------------------------------------- control measurement

struct ControlMeasurement {
  Entourage control;
  std::vector<SitePair> pairs;  // (image site, source site)
  std::int64_t radius = -1;      // set on grid-like spaces
  SiteSet measured;
  bool within_declared = true;
  SiteSet escaped;  // sources whose image left the window; their pairs are missing
};

inline ControlMeasurement measure_control(const Automorphism& alpha, const Window& window) {
  ControlMeasurement out;
  out.measured = interior(alpha, window);
  if (out.measured.empty())
    throw InvalidArgument("window margin is smaller than the declared control " + alpha.declared_control().describe());
  for (const auto& x : out.measured) {
    out.pairs.push_back({x, x});
    for (const auto& l : alpha.net().site_legs(x))
      for (const auto& g : generic_leg_ops(l, 21)) {
        try {
          for (const auto& y : apply(alpha, g, window).sites()) out.pairs.push_back({y, x});
        } catch (const StructuralError&) {
          // Image escaped a window that contains the declared fattening.
          out.within_declared = false;
          out.escaped.push_back(x);
        }
      }
  }
  normalize(out.escaped);
  std::sort(out.pairs.begin(), out.pairs.end());
  out.pairs.erase(std::unique(out.pairs.begin(), out.pairs.end()), out.pairs.end());
  out.control = detail::pair_entourage(alpha.net().space(), out.pairs);
  if (out.control.is_metric()) out.radius = out.control.radius();
  for (const auto& [y, x] : out.pairs)
    if (!alpha.declared_control().contains(y, x)) out.within_declared = false;
  return out;
}

// ---------------------------------------------------------------- certificates

struct CertificateBlock {
  SiteSet sites;
  AzumayaPresentation factor;
};

struct LocalityCertificate {
  std::vector<CertificateBlock> blocks;
  Entourage uniform_bound;
};

struct CertificateReport {
  bool blocks_in_window = true;
  bool factors_full = true;
  bool commuting = true;
  bool product_matches = true;
  bool invariant = true;
  long product_dim = 1;
  long window_dim = 1;
  std::vector<std::string> failures;
  bool passes() const { return blocks_in_window && factors_full && commuting && product_matches && invariant; }
};

namespace detail {

inline std::vector<Mat> probe_elements(const StarAlgebra& a) { return a.dim() <= 16 ? a.basis() : a.sample(3, 0xCE57); }

}  // namespace detail

// The blocks of a depth-one circuit (plus singletons for untouched window sites), each with its full algebra.
inline LocalityCertificate circuit_certificate(const LocalMatrixNet& net, const std::vector<SiteSet>& blocks, const Window& window) {
  LocalityCertificate cert;
  SiteSet covered;
  std::vector<SiteSet> all = blocks;
  for (const auto& b : blocks) covered = set_union(covered, b);
  for (const auto& x : window.sites)
    if (!has(covered, x)) all.push_back({x});
  for (const auto& b : all) {
    GeneratorBlock g{b, {}};
    for (const auto& l : net.legs(b))
      for (const auto& op : generic_leg_ops(l, 7)) g.gens.push_back(op);
    const Entourage e = Entourage::relation(net.space(), detail::block_pairs({b}));
    cert.blocks.push_back({b, AzumayaPresentation::from_blocks(net, {g}, e)});
  }
  cert.uniform_bound = Entourage::relation(net.space(), detail::block_pairs(all));
  return cert;
}

inline CertificateReport verify_certificate(const Automorphism& alpha, const LocalityCertificate& cert, const Window& window) {
  CertificateReport rep;
  const LocalMatrixNet& net = alpha.net();
  std::vector<StarAlgebra> fs;
  std::vector<Legs> ls;
  for (const auto& b : cert.blocks) {
    if (!subset(b.sites, window.sites)) {
      rep.blocks_in_window = false;
      rep.failures.push_back("block " + to_string(b.sites) + " is not inside the window");
    }
    for (const auto& x : b.sites)
      for (const auto& y : b.sites)
        if (!cert.uniform_bound.contains(x, y)) {
          rep.blocks_in_window = false;
          rep.failures.push_back("block " + to_string(b.sites) + " is not bounded by the uniform bound");
        }
    ls.push_back(net.legs(b.sites));
    fs.push_back(b.factor.evaluate(b.sites));
  }
  if (!rep.blocks_in_window) return rep;
  rep.window_dim = legs_dim(net.legs(window.sites));
  for (std::size_t i = 0; i < fs.size(); ++i) {
    auto info = is_full_matrix_algebra(fs[i]);
    if (!info.full) {
      rep.factors_full = false;
      rep.failures.push_back("factor on " + to_string(cert.blocks[i].sites) + " is not a full matrix algebra");
      continue;
    }
    rep.product_dim *= info.k;
  }
  if (rep.product_dim != rep.window_dim) {
    rep.product_matches = false;
    rep.failures.push_back("factor sizes multiply to " + std::to_string(rep.product_dim) + ", window has dimension " +
                           std::to_string(rep.window_dim));
  }
  // (i) pairwise commuting factors
  for (std::size_t i = 0; i < fs.size(); ++i)
    for (std::size_t j = i + 1; j < fs.size(); ++j) {
      const Legs shared = legs_intersection(ls[i], ls[j]);
      if (shared.empty()) continue;
      const double pad_i = std::sqrt(static_cast<double>(legs_dim(legs_difference(ls[j], ls[i]))));
      const double pad_j = std::sqrt(static_cast<double>(legs_dim(legs_difference(ls[i], ls[j]))));
      std::vector<std::pair<double, std::vector<detail::SchmidtTerm>>> ys;
      for (const auto& y : detail::probe_elements(fs[j])) ys.push_back({y.norm() * pad_j, detail::operator_schmidt(LocalOp{ls[j], y}, shared)});
      for (const auto& x : detail::probe_elements(fs[i])) {
        const auto xs = detail::operator_schmidt(LocalOp{ls[i], x}, shared);
        for (const auto& [ny, yt] : ys) {
          if (detail::commutator_norm(xs, yt) > 1e3 * tolerances().alg * std::max(1.0, x.norm() * pad_i * ny)) {
            if (rep.commuting) rep.failures.push_back("factors on " + to_string(cert.blocks[i].sites) + " and " + to_string(cert.blocks[j].sites) + " do not commute");
            rep.commuting = false;
          }
        }
      }
    }
  // (ii) alpha maps each factor into itself; injectivity and equal dimension give onto.
  for (std::size_t i = 0; i < fs.size(); ++i) {
    for (const auto& x : fs[i].dim() <= 16 ? fs[i].basis() : fs[i].sample(4, 0xA1FA)) {
      std::string why;
      try {
        LocalOp im = apply(alpha, LocalOp{ls[i], x}, window);
        if (!legs_subset(im.legs, ls[i]))
          why = "image escapes the block";
        else if (!fs[i].contains(embed(im, ls[i])))
          why = "image leaves the factor";
      } catch (const InvalidArgument& e) {
        why = std::string("image escapes the window (") + e.what() + ")";
      }
      if (!why.empty()) {
        rep.invariant = false;
        rep.failures.push_back("block " + to_string(cert.blocks[i].sites) + ": " + why);
        break;
      }
    }
  }
  return rep;
}

// Transports a certificate of alpha to one of beta alpha beta^-1.
inline LocalityCertificate conjugate_certificate(const Automorphism& beta, const LocalityCertificate& cert, const Window& window) {
  LocalityCertificate out;
  const LocalMatrixNet& net = beta.net();
  std::vector<SiteSet> sets;
  for (const auto& b : cert.blocks) {
    const SiteSet nb = fatten(b.sites, beta.declared_control());
    if (!subset(nb, window.sites)) throw InvalidArgument("block " + to_string(b.sites) + " fattened by beta leaves the window");
    GeneratorBlock g{nb, {}};
    const StarAlgebra f = b.factor.evaluate(b.sites);
    const Legs lb = net.legs(b.sites);
    for (const auto& x : f.dim() <= 16 ? f.basis() : f.sample(4, 0xC0C0)) g.gens.push_back(apply(beta, LocalOp{lb, x}, window));
    const Entourage e = Entourage::relation(net.space(), detail::block_pairs({nb}));
    out.blocks.push_back({nb, AzumayaPresentation::from_blocks(net, {g}, e)});
    sets.push_back(nb);
  }
  out.uniform_bound = union_entourages(
      compose_entourages(compose_entourages(beta.declared_control(), cert.uniform_bound), invert_entourage(beta.declared_control())),
      Entourage::relation(net.space(), detail::block_pairs(sets)));
  return out;
}

// max over x in Y (inside the window) of #(E^-1[x] meet Y).
inline int uniform_local_finiteness_bound(const SiteSet& y, const Entourage& e, const Window& window) {
  int n = 0;
  for (const auto& x : set_intersection(normalized(y), window.sites))
    n = std::max(n, static_cast<int>(set_intersection(e.preimage(x), y).size()));
  return n;
}

// ---------------------------------------------------------------- circuits

struct Gate {
  SiteSet sites;
  LocalOp u;
};

struct Circuit {
  std::vector<std::vector<Gate>> layers;
  int depth() const { return static_cast<int>(layers.size()); }
};

// Layers applied first to last.
inline Automorphism circuit_automorphism(const LocalMatrixNet& net, const Circuit& c) {
  Automorphism out = Automorphism::identity(net);
  for (const auto& layer : c.layers) {
    std::vector<LocalOp> blocks;
    for (const auto& g : layer) blocks.push_back(g.u);
    out = compose(Automorphism::layer(net, blocks), out);
  }
  return out;
}

inline LocalOp random_block_unitary(const LocalMatrixNet& net, const SiteSet& b, std::mt19937_64& rng) {
  const Legs l = net.legs(b);
  return LocalOp{l, random_unitary(static_cast<int>(legs_dim(l)), rng)};
}

inline Automorphism random_layer(const LocalMatrixNet& net, const std::vector<SiteSet>& blocks, std::mt19937_64& rng) {
  std::vector<LocalOp> us;
  for (const auto& b : blocks) us.push_back(random_block_unitary(net, b, rng));
  return Automorphism::layer(net, us);
}

struct Layering {
  Circuit circuit;
  int bound = 0;            // n from uniform_local_finiteness_bound
  double residual = 0;      // probe-operator distance to alpha
  int probes = 0;
  std::map<Site, int> colour;
  std::vector<Site> anchors;  // y_i per certificate block
};

inline Layering layer_circuit(const Automorphism& alpha, const LocalityCertificate& cert, const SiteSet& y_in, const Window& window) {
  const CertificateReport rep = verify_certificate(alpha, cert, window);
  if (!rep.passes()) throw InvalidArgument("certificate does not verify: " + rep.failures.front());
  const LocalMatrixNet& net = alpha.net();
  const SiteSet y = normalized(y_in);
  std::vector<SiteSet> sets;
  for (const auto& b : cert.blocks) sets.push_back(b.sites);
  const Entourage e = Entourage::relation(net.space(), detail::block_pairs(sets));
  Layering out;
  out.bound = uniform_local_finiteness_bound(y, e, window);

  // y_i: least y with B_i inside E[y].
  std::map<Site, std::vector<std::size_t>> assigned;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    std::optional<Site> pick;
    for (const auto& c : y)
      if (subset(sets[i], e.image(c))) {
        pick = c;
        break;
      }
    if (!pick) throw InvalidArgument("no point of Y has block " + to_string(sets[i]) + " in its E-neighbourhood");
    out.anchors.push_back(*pick);
    assigned[*pick].push_back(i);
  }

  // Greedy colouring in site order: E[y] meet Y and the gate supports are disjoint within a colour.
  std::vector<std::vector<Site>> colours;
  std::map<Site, SiteSet> gate_sites, nbhd;
  for (const auto& [c, idx] : assigned) {
    SiteSet g;
    for (auto i : idx) g = set_union(g, sets[i]);
    gate_sites[c] = g;
    nbhd[c] = set_intersection(e.image(c), y);
  }
  for (const auto& [c, idx] : assigned) {
    std::size_t k = 0;
    for (; k < colours.size(); ++k) {
      bool ok = true;
      for (const auto& o : colours[k])
        if (!set_intersection(nbhd[c], nbhd[o]).empty() || !set_intersection(gate_sites[c], gate_sites[o]).empty()) ok = false;
      if (ok) break;
    }
    if (k == colours.size()) colours.emplace_back();
    colours[k].push_back(c);
    out.colour[c] = static_cast<int>(k);
  }
  if (static_cast<int>(colours.size()) > out.bound + 1)
    throw StructuralError("layering needed " + std::to_string(colours.size()) + " layers, more than n + 1 = " + std::to_string(out.bound + 1) +
                          "; internal invariant violated");

  // Inner unitary of alpha on each factor, through the splitting witness.
  std::vector<LocalOp> us;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const Legs lb = net.legs(sets[i]);
    const StarAlgebra f = cert.blocks[i].factor.evaluate(sets[i]);
    auto split = tensor_factor_split(f);
    if (!split) throw IndeterminateError("factor on " + to_string(sets[i]) + " did not split");
    const Mat& w = split->witness;
    const int a = split->a, b = split->b;
    std::vector<Mat> images;
    for (int r = 0; r < a; ++r)
      for (int s = 0; s < a; ++s) {
        const Mat x = w * kron(matrix_unit(a, r, s), identity(b)) * w.adjoint();
        LocalOp im = apply(alpha, LocalOp{lb, x}, window);
        const Mat m = embed(im, lb);
        images.push_back(ptrace_right(w.adjoint() * m * w, a, b) / static_cast<double>(b));
      }
    const Mat v = inner_unitary(a, images);
    us.push_back(LocalOp{lb, w * kron(v, identity(b)) * w.adjoint()});
  }

  for (const auto& col : colours) {
    std::vector<Gate> layer;
    for (const auto& c : col) {
      const SiteSet g = gate_sites[c];
      const Legs lg = net.legs(g);
      Mat u = identity(static_cast<int>(legs_dim(lg)));
      for (auto i : assigned[c]) u = embed(us[i], lg) * u;
      layer.push_back({g, LocalOp{lg, u}});
    }
    out.circuit.layers.push_back(std::move(layer));
  }
  out.residual = probe_distance(alpha, circuit_automorphism(net, out.circuit), window, &out.probes);
  return out;
}

// ---------------------------------------------------------------- swap trick

// Phi(a (x) a') = phi^-1(a') (x) phi(a) for a sitewise isomorphism phi, as one unitary per site.
inline Automorphism swap_trick(const NetHom& phi) {
  if (!phi.sitewise) throw InvalidArgument("the swap trick is implemented for sitewise isomorphisms; got " + phi.description);
  const LocalMatrixNet a = phi.source, b = phi.target;
  const LocalMatrixNet net = tensor(a, b);
  auto us = std::make_shared<const std::map<Site, Mat>>(*phi.sitewise);
  return Automorphism::sitelocal_fn(
      net,
      [a, b, us](const Site& x) -> std::optional<Mat> {
        const long q = a.q(x);
        if (b.q(x) != q) throw StructuralError("swap trick needs equal local dimensions at " + x.str());
        if (q == 1) return std::nullopt;
        const int d = static_cast<int>(q);
        Mat swap = Mat::Zero(d * d, d * d);
        for (int i = 0; i < d; ++i)
          for (int j = 0; j < d; ++j) swap(j * d + i, i * d + j) = 1.0;
        auto it = us->find(x);
        const Mat v = it == us->end() ? identity(d) : it->second;
        return Mat(kron(v.adjoint(), v) * swap);
      },
      "swap(" + phi.description + ")");
}

// phi alpha phi^-1 for a sitewise phi.
inline Automorphism conjugate_by(const NetHom& phi, const Automorphism& alpha) {
  if (!phi.sitewise) throw InvalidArgument("conjugation needs a sitewise isomorphism");
  auto v = Automorphism::sitelocal(phi.target, *phi.sitewise);
  return compose(v, compose(Automorphism::from_word(phi.target, alpha.word(), alpha.declared_control(), alpha.describe()), invert(v)));
}

// ---------------------------------------------------------------- stable QCA group

struct StableElement {
  LocalMatrixNet net;
  Automorphism alpha;
  std::vector<std::string> history;
};

inline StableElement stable_element(const Automorphism& alpha) { return {alpha.net(), alpha, {}}; }

// [A, alpha] ~ [A (x) B, alpha (x) id].
inline StableElement stabilize(const StableElement& e, const LocalMatrixNet& extra) {
  StableElement out{tensor(e.net, extra), tensor(e.alpha, Automorphism::identity(extra)), e.history};
  out.history.push_back("stabilize(" + extra.describe() + ")");
  return out;
}

// [A, alpha] ~ [A', phi alpha phi^-1] for a Delta-controlled isomorphism phi.
inline StableElement conjugate_local(const StableElement& e, const NetHom& phi) {
  if (!phi.control.is_diagonal()) throw InvalidArgument("conjugate_local needs a Delta-controlled isomorphism, got control " + phi.control.describe());
  StableElement out{phi.target, conjugate_by(phi, e.alpha), e.history};
  out.history.push_back("conjugate(" + phi.description + ")");
  return out;
}

inline StableElement multiply(const StableElement& a, const StableElement& b) {
  if (a.net.space() != b.net.space()) throw StructuralError("stable elements live over different spaces");
  StableElement out{a.net, compose(a.alpha, b.alpha), a.history};
  out.history.push_back("multiply");
  return out;
}

// The second monoid structure [A, alpha] * [B, beta] = [A (x) B, alpha (x) beta].
inline StableElement eh_tensor(const StableElement& a, const StableElement& b) {
  StableElement out{tensor(a.net, b.net), tensor(a.alpha, b.alpha), a.history};
  out.history.push_back("tensor");
  return out;
}

}  // namespace coarseqca
