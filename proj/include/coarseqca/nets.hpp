// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "coarseqca/coarse.hpp"
#include "coarseqca/layout.hpp"
#include "coarseqca/matalg.hpp"

namespace coarseqca {

// Tensor slots of one site; q(x) is their product.
using Slots = std::vector<int>;

inline long slots_dim(const Slots& s) {
  long d = 1;
  for (int x : s) d *= x;
  return d;
}

// A local matrix net: site x carries M_{q(x)}, split into tensor slots.
class LocalMatrixNet {
 public:
  using SlotFn = std::function<Slots(const Site&)>;

  LocalMatrixNet() = default;

  static LocalMatrixNet uniform(SpacePtr s, int q) { return uniform_slots(std::move(s), Slots{q}); }

  static LocalMatrixNet uniform_slots(SpacePtr s, Slots slots) {
    check_slots(slots);
    std::string d = "uniform" + slots_str(slots);
    return from_fn(std::move(s), [slots](const Site&) { return slots; }, d);
  }

  static LocalMatrixNet table(SpacePtr s, const std::map<Site, int>& q, int default_q = 1) {
    std::map<Site, Slots> t;
    for (const auto& [x, v] : q) t[x] = Slots{v};
    return table_slots(std::move(s), t, Slots{default_q});
  }

  static LocalMatrixNet table_slots(SpacePtr s, std::map<Site, Slots> t, Slots def) {
    check_slots(def);
    for (const auto& [x, v] : t) {
      if (!s->contains(x)) throw StructuralError("dimension table names a site outside the space: " + x.str());
      check_slots(v);
    }
    std::string d = "table(" + std::to_string(t.size()) + " sites, default " + slots_str(def) + ")";
    auto shared = std::make_shared<const std::map<Site, Slots>>(std::move(t));
    return from_fn(
        std::move(s),
        [shared, def](const Site& x) {
          auto it = shared->find(x);
          return it == shared->end() ? def : it->second;
        },
        d);
  }

  static LocalMatrixNet from_fn(SpacePtr s, SlotFn fn, std::string description) {
    LocalMatrixNet n;
    n.space_ = std::move(s);
    n.fn_ = std::move(fn);
    n.desc_ = std::move(description);
    return n;
  }

  const SpacePtr& space() const { return space_; }
  const std::string& describe() const { return desc_; }

  Slots slots(const Site& x) const {
    if (!space_->contains(x)) throw StructuralError("site " + x.str() + " is not in the space");
    return fn_(x);
  }
  int slot_count(const Site& x) const { return static_cast<int>(slots(x).size()); }
  long q(const Site& x) const { return slots_dim(slots(x)); }

  Legs site_legs(const Site& x) const {
    Legs out;
    Slots s = slots(x);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] > 1) out.push_back(Leg{x, static_cast<int>(i), s[i]});
    return out;
  }

  Legs legs(const SiteSet& b) const {
    Legs out;
    for (const auto& x : b) {
      auto l = site_legs(x);
      out.insert(out.end(), l.begin(), l.end());
    }
    return out;
  }

  long dim(const SiteSet& b) const { return legs_dim(legs(b)); }

  // Sites of the window with q > 1.
  SiteSet support_in(const SiteSet& b) const {
    SiteSet out;
    for (const auto& x : b)
      if (q(x) > 1) out.push_back(x);
    return out;
  }

  std::optional<int> uniform_slot_count(const SiteSet& b) const {
    std::optional<int> c;
    for (const auto& x : b) {
      int k = slot_count(x);
      if (c && *c != k) return std::nullopt;
      c = k;
    }
    return c;
  }

  StarAlgebra evaluate(const SiteSet& b) const {
    const long d = dim(b);
    check_ambient(static_cast<int>(std::min<long>(d, 1L << 30)));
    return StarAlgebra::full(static_cast<int>(d));
  }
  StarAlgebra evaluate(const Window& w) const {
    require_space(w.space);
    return evaluate(w.sites);
  }

  void require_space(const SpacePtr& s) const {
    if (s != space_) throw StructuralError("net and window live on different spaces");
  }

 private:
  static void check_slots(const Slots& s) {
    for (int v : s)
      if (v < 1) throw InvalidArgument("local dimensions must be at least 1");
  }
  static std::string slots_str(const Slots& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
  }

  SpacePtr space_;
  SlotFn fn_;
  std::string desc_;
};

inline void require_same_space(const LocalMatrixNet& a, const LocalMatrixNet& b) {
  if (a.space() != b.space()) throw StructuralError("nets live on different spaces");
}

// Sitewise tensor product; the slots of b follow those of a at every site.
inline LocalMatrixNet tensor(const LocalMatrixNet& a, const LocalMatrixNet& b) {
  require_same_space(a, b);
  return LocalMatrixNet::from_fn(
      a.space(),
      [a, b](const Site& x) {
        Slots s = a.slots(x), t = b.slots(x);
        s.insert(s.end(), t.begin(), t.end());
        return s;
      },
      "(" + a.describe() + ")(x)(" + b.describe() + ")");
}

// Leg of b's factor inside tensor(a, b).
inline Leg tensor_right_leg(const LocalMatrixNet& a, const Leg& l) { return Leg{l.site, l.slot + a.slot_count(l.site), l.dim}; }

inline LocalMatrixNet restrict(const LocalMatrixNet& net, std::function<bool(const Site&)> keep, std::string what = "Y") {
  return LocalMatrixNet::from_fn(
      net.space(),
      [net, keep](const Site& x) {
        Slots s = net.slots(x);
        if (!keep(x)) std::fill(s.begin(), s.end(), 1);
        return s;
      },
      net.describe() + "|" + what);
}

inline LocalMatrixNet restrict(const LocalMatrixNet& net, const SiteSet& y) {
  SiteSet ys = normalized(y);
  return restrict(net, [ys](const Site& x) { return has(ys, x); }, to_string(ys));
}

// ---------------------------------------------------------------- pushforward

struct Pushforward {
  LocalMatrixNet net;
  std::function<Leg(const Leg&)> forward;   // leg of the source net -> leg of the pushed net
  std::function<Leg(const Leg&)> backward;  // inverse
  std::function<SiteSet(const SiteSet&)> preimage;
};

// f_* net: the fibre over y contributes its slots in site order.
inline Pushforward pushforward(const CoarseMap& f, const LocalMatrixNet& net, const std::optional<Window>& window = std::nullopt) {
  if (f.domain() != net.space()) throw StructuralError("map domain is not the net's space");
  const bool injective_shift = (f.kind() == MapKind::Translate || f.kind() == MapKind::AxisShift) && !f.is_translation();
  if (injective_shift) {
    // Translation of a half grid: injective, the origin layer has no preimage.
    auto back = [f](const Site& y) -> std::optional<Site> {
      Site x = y;
      for (std::size_t i = 0; i < f.vector().size(); ++i) x.coords[i] -= f.vector()[i];
      if (!f.domain()->contains(x)) return std::nullopt;
      return x;
    };
    Pushforward p;
    p.net = LocalMatrixNet::from_fn(
        f.codomain(),
        [net, back](const Site& y) {
          auto x = back(y);
          return x ? net.slots(*x) : Slots{};
        },
        f.describe() + "_*" + net.describe());
    p.forward = [f](const Leg& l) { return Leg{f(l.site), l.slot, l.dim}; };
    p.backward = [back](const Leg& l) {
      auto x = back(l.site);
      if (!x) throw InvalidArgument("leg " + l.str() + " is not in the pushforward");
      return Leg{*x, l.slot, l.dim};
    };
    p.preimage = [back](const SiteSet& b) {
      SiteSet out;
      for (const auto& y : b)
        if (auto x = back(y)) out.push_back(*x);
      normalize(out);
      return out;
    };
    return p;
  }
  if (f.is_translation()) {
    CoarseMap inv = f.inverse_translation();
    Pushforward p;
    p.net = LocalMatrixNet::from_fn(
        f.codomain(),
        [net, inv](const Site& y) {
          try {
            return net.slots(inv(y));
          } catch (const InvalidArgument&) {
            return Slots{};  // y is not in the image
          }
        },
        f.describe() + "_*" + net.describe());
    p.forward = [f](const Leg& l) { return Leg{f(l.site), l.slot, l.dim}; };
    p.backward = [inv](const Leg& l) { return Leg{inv(l.site), l.slot, l.dim}; };
    p.preimage = [inv](const SiteSet& b) { return map_image(inv, b); };
    return p;
  }
  SiteSet dom;
  if (window) {
    if (window->space != f.domain()) throw StructuralError("window is not in the map's domain");
    dom = window->sites;
  } else if (f.domain()->enumerable()) {
    dom = f.domain()->all_sites();
  } else {
    throw InvalidArgument("pushforward along " + f.describe() + " over an infinite domain needs a window");
  }
  {
    auto rep = check_coarse_map(f, {Window::of(f.domain(), dom)});
    if (!rep.proper) {
      std::string why = rep.notes.empty() ? "" : ": " + rep.notes.front();
      throw InvalidArgument("map " + f.describe() + " is not proper on the bounded set " + to_string(dom) + why);
    }
  }
  auto fibres = std::make_shared<std::map<Site, SiteSet>>();
  for (const auto& x : dom) (*fibres)[f(x)].push_back(x);
  auto fwd = std::make_shared<std::map<Leg, Leg>>();
  auto bwd = std::make_shared<std::map<Leg, Leg>>();
  std::map<Site, Slots> table;
  for (const auto& [y, xs] : *fibres) {
    Slots s;
    for (const auto& x : xs) {
      Slots sx = net.slots(x);
      for (std::size_t i = 0; i < sx.size(); ++i) {
        Leg from{x, static_cast<int>(i), sx[i]};
        Leg to{y, static_cast<int>(s.size()), sx[i]};
        (*fwd)[from] = to;
        (*bwd)[to] = from;
        s.push_back(sx[i]);
      }
    }
    table[y] = s;
  }
  Pushforward p;
  auto shared = std::make_shared<const std::map<Site, Slots>>(std::move(table));
  p.net = LocalMatrixNet::from_fn(
      f.codomain(),
      [shared](const Site& y) {
        auto it = shared->find(y);
        return it == shared->end() ? Slots{} : it->second;
      },
      f.describe() + "_*" + net.describe());
  p.forward = [fwd](const Leg& l) {
    auto it = fwd->find(l);
    if (it == fwd->end()) throw InvalidArgument("leg " + l.str() + " lies outside the pushforward window");
    return it->second;
  };
  p.backward = [bwd](const Leg& l) {
    auto it = bwd->find(l);
    if (it == bwd->end()) throw InvalidArgument("leg " + l.str() + " is not in the pushforward");
    return it->second;
  };
  p.preimage = [fibres](const SiteSet& b) {
    SiteSet out;
    for (const auto& y : b)
      if (auto it = fibres->find(y); it != fibres->end()) out.insert(out.end(), it->second.begin(), it->second.end());
    normalize(out);
    return out;
  };
  return p;
}

// ---------------------------------------------------------------- presentations

namespace detail {

inline std::vector<LocalOp> algebra_ops(const StarAlgebra& a, const Legs& legs) {
  std::vector<LocalOp> out;
  if (a.is_scalars()) return out;
  for (int i = 0; i < a.dim(); ++i) out.push_back(LocalOp{legs, a.element(i)});
  return out;
}

}  // namespace detail

struct GeneratorBlock {
  SiteSet sites;
  std::vector<LocalOp> gens;
};

// A subnet of a local matrix net, given by generators per window.
class AzumayaPresentation {
 public:
  using Provider = std::function<std::vector<LocalOp>(const SiteSet&)>;
  using AlgebraFn = std::function<StarAlgebra(const SiteSet&)>;
  enum class Kind { Blocks, Provider, Whole, Trivial };

  static AzumayaPresentation from_blocks(LocalMatrixNet ambient, std::vector<GeneratorBlock> blocks, Entourage control) {
    AzumayaPresentation p(std::move(ambient), std::move(control), Kind::Blocks);
    for (auto& b : blocks) {
      normalize(b.sites);
      const Legs allowed = p.ambient_.legs(b.sites);
      for (auto& g : b.gens) {
        if (!legs_subset(g.legs, allowed))
          throw StructuralError("generator on " + to_string(g.legs) + " is not inside the block " + to_string(b.sites));
        g = trim(g);
      }
    }
    p.blocks_ = std::make_shared<const std::vector<GeneratorBlock>>(std::move(blocks));
    p.desc_ = "blocks(" + std::to_string(p.blocks_->size()) + ")";
    return p;
  }

  static AzumayaPresentation from_provider(LocalMatrixNet ambient, Provider prov, Entourage control, std::string description) {
    AzumayaPresentation p(std::move(ambient), std::move(control), Kind::Provider);
    p.provider_ = std::move(prov);
    p.desc_ = std::move(description);
    return p;
  }

  // Window algebras computed directly; generators are their bases.
  static AzumayaPresentation from_algebra(LocalMatrixNet ambient, AlgebraFn fn, Entourage control, std::string description) {
    AzumayaPresentation p(std::move(ambient), std::move(control), Kind::Provider);
    // Presentations are immutable, so evaluations are memoised per site set.
    auto cache = std::make_shared<std::map<SiteSet, StarAlgebra>>();
    p.algebra_ = [fn = std::move(fn), cache](const SiteSet& b) {
      auto it = cache->find(b);
      if (it != cache->end()) return it->second;
      StarAlgebra a = fn(b);
      cache->emplace(b, a);
      return a;
    };
    p.desc_ = std::move(description);
    return p;
  }

  static AzumayaPresentation whole(LocalMatrixNet ambient) {
    Entourage e = Entourage::diagonal(ambient.space());
    AzumayaPresentation p(std::move(ambient), std::move(e), Kind::Whole);
    p.desc_ = "whole";
    return p;
  }

  static AzumayaPresentation trivial(LocalMatrixNet ambient) {
    Entourage e = Entourage::diagonal(ambient.space());
    AzumayaPresentation p(std::move(ambient), std::move(e), Kind::Trivial);
    p.desc_ = "trivial";
    return p;
  }

  const LocalMatrixNet& ambient() const { return ambient_; }
  const Entourage& control() const { return control_; }
  Kind kind() const { return kind_; }
  const std::string& describe() const { return desc_; }
  const std::vector<GeneratorBlock>& blocks() const {
    static const std::vector<GeneratorBlock> none;
    return blocks_ ? *blocks_ : none;
  }

  // Generators of A_B: those of blocks inside B (or the provider's answer).
  std::vector<LocalOp> generators(const SiteSet& b0) const {
    SiteSet b = normalized(b0);
    switch (kind_) {
      case Kind::Trivial:
        return {};
      case Kind::Whole: {
        std::vector<LocalOp> out;
        for (const auto& l : ambient_.legs(b)) {
          auto g = generic_leg_ops(l, 0);
          out.insert(out.end(), g.begin(), g.end());
        }
        return out;
      }
      case Kind::Provider:
        return algebra_ ? detail::algebra_ops(algebra_(b), ambient_.legs(b)) : provider_(b);
      case Kind::Blocks: {
        std::vector<LocalOp> out;
        for (const auto& blk : *blocks_)
          if (subset(blk.sites, b)) out.insert(out.end(), blk.gens.begin(), blk.gens.end());
        return out;
      }
    }
    return {};
  }

  // Generators whose legs meet those of B; exact for block and whole presentations.
  std::optional<std::vector<LocalOp>> generators_meeting(const SiteSet& b0) const {
    SiteSet b = normalized(b0);
    const Legs lb = ambient_.legs(b);
    switch (kind_) {
      case Kind::Trivial:
        return std::vector<LocalOp>{};
      case Kind::Whole:
        return generators(b);
      case Kind::Provider:
        return std::nullopt;
      case Kind::Blocks: {
        std::vector<LocalOp> out;
        for (const auto& blk : *blocks_)
          for (const auto& g : blk.gens)
            if (!legs_intersection(g.legs, lb).empty()) out.push_back(g);
        return out;
      }
    }
    return std::nullopt;
  }

  StarAlgebra evaluate(const SiteSet& b0) const {
    SiteSet b = normalized(b0);
    const Legs lb = ambient_.legs(b);
    const long d = legs_dim(lb);
    check_ambient(static_cast<int>(std::min<long>(d, 1L << 30)));
    if (kind_ == Kind::Whole) return StarAlgebra::full(static_cast<int>(d));
    if (kind_ == Kind::Trivial) return StarAlgebra::scalars(static_cast<int>(d));
    if (algebra_) return algebra_(b);
    std::vector<Mat> mats;
    for (const auto& g : generators(b)) {
      if (!legs_subset(g.legs, lb)) throw StructuralError("generator leaves the window " + to_string(b));
      mats.push_back(embed(g, lb));
    }
    return algebra_from_generators(static_cast<int>(d), mats);
  }
  StarAlgebra evaluate(const Window& w) const {
    ambient_.require_space(w.space);
    return evaluate(w.sites);
  }

 private:
  AzumayaPresentation(LocalMatrixNet amb, Entourage e, Kind k) : ambient_(std::move(amb)), control_(std::move(e)), kind_(k) {
    if (control_.space() != ambient_.space()) throw StructuralError("control entourage is on another space");
  }

  LocalMatrixNet ambient_;
  Entourage control_;
  Kind kind_;
  std::shared_ptr<const std::vector<GeneratorBlock>> blocks_;
  Provider provider_;
  AlgebraFn algebra_;
  std::string desc_;
};

// Interleaves generators: a's on the leading slots, b's shifted past a's slots.
inline AzumayaPresentation tensor(const AzumayaPresentation& a, const AzumayaPresentation& b) {
  require_same_space(a.ambient(), b.ambient());
  LocalMatrixNet amb = tensor(a.ambient(), b.ambient());
  const LocalMatrixNet an = a.ambient();
  Entourage e = union_entourages(a.control(), b.control());
  auto shift = [an](const LocalOp& g) { return relabel(g, [&](const Leg& l) { return tensor_right_leg(an, l); }); };
  if (a.kind() == AzumayaPresentation::Kind::Blocks && b.kind() == AzumayaPresentation::Kind::Blocks) {
    std::vector<GeneratorBlock> blocks = a.blocks();
    for (const auto& blk : b.blocks()) {
      GeneratorBlock nb{blk.sites, {}};
      for (const auto& g : blk.gens) nb.gens.push_back(shift(g));
      blocks.push_back(nb);
    }
    return AzumayaPresentation::from_blocks(amb, blocks, e);
  }
  return AzumayaPresentation::from_provider(
      amb,
      [a, b, shift](const SiteSet& w) {
        auto out = a.generators(w);
        for (const auto& g : b.generators(w)) out.push_back(shift(g));
        return out;
      },
      e, "(" + a.describe() + ")(x)(" + b.describe() + ")");
}

inline AzumayaPresentation pushforward(const CoarseMap& f, const AzumayaPresentation& sub, const std::optional<Window>& window = std::nullopt) {
  Pushforward pf = pushforward(f, sub.ambient(), window);
  auto move = [pf](const LocalOp& g) { return relabel(g, pf.forward); };
  // The image of a controlled subnet is controlled by the pushed entourage; on grids its radius
  // grows at most by the map's expansion, so it is recorded as (f x f)(E) materialised on the window.
  Entourage e = Entourage::diagonal(f.codomain());
  if (window || f.domain()->enumerable()) {
    SiteSet dom = window ? window->sites : f.domain()->all_sites();
    Relation r;
    for (const auto& x : dom)
      for (const auto& y : sub.control().image(x))
        if (!(f(x) == f(y))) r.insert({f(x), f(y)});
    e = Entourage::relation(f.codomain(), r);
    if (f.codomain()->grid_like()) {
      std::int64_t rad = 0;
      for (const auto& [u, v] : r) rad = std::max(rad, *f.codomain()->distance(u, v));
      e = Entourage::ball(f.codomain(), rad);
    }
  } else {
    e = sub.control().is_metric() ? Entourage::ball(f.codomain(), sub.control().radius()) : e;
  }
  switch (sub.kind()) {
    case AzumayaPresentation::Kind::Whole:
      return AzumayaPresentation::whole(pf.net);
    case AzumayaPresentation::Kind::Trivial:
      return AzumayaPresentation::trivial(pf.net);
    case AzumayaPresentation::Kind::Blocks: {
      std::vector<GeneratorBlock> blocks;
      for (const auto& blk : sub.blocks()) {
        GeneratorBlock nb{map_image(f, blk.sites), {}};
        for (const auto& g : blk.gens) nb.gens.push_back(move(g));
        blocks.push_back(nb);
      }
      return AzumayaPresentation::from_blocks(pf.net, blocks, e);
    }
    case AzumayaPresentation::Kind::Provider:
      break;
  }
  return AzumayaPresentation::from_provider(
      pf.net,
      [sub, pf, move](const SiteSet& b) {
        std::vector<LocalOp> out;
        for (const auto& g : sub.generators(pf.preimage(b))) out.push_back(move(g));
        return out;
      },
      e, f.describe() + "_*" + sub.describe());
}

// ---------------------------------------------------------------- homomorphisms

struct NetHom {
  LocalMatrixNet source, target;
  std::function<LocalOp(const LocalOp&)> act;
  std::function<LocalOp(const LocalOp&)> inverse;  // empty when not provided
  Entourage control;
  std::optional<Entourage> inverse_control;
  std::optional<std::map<Site, Mat>> sitewise;  // set when the map is conjugation by one unitary per site
  std::string description;

  LocalOp operator()(const LocalOp& x) const { return act(x); }
};

inline NetHom identity_hom(const LocalMatrixNet& net) {
  NetHom h;
  h.source = h.target = net;
  h.act = h.inverse = [](const LocalOp& x) { return x; };
  h.control = Entourage::diagonal(net.space());
  h.inverse_control = h.control;
  h.sitewise = std::map<Site, Mat>{};
  h.description = "id";
  return h;
}

inline LocalOp conjugate_sitewise(const LocalOp& x, const std::map<Site, Mat>& us, bool adjoint_side) {
  LocalOp cur = x;
  for (const auto& s : x.sites()) {
    auto it = us.find(s);
    if (it == us.end()) continue;
    Legs sl;
    for (const auto& l : x.legs)
      if (l.site == s) sl.push_back(l);
    // Unitaries are given on all legs of the site, including dimension-one ones that are skipped.
    if (legs_dim(sl) != it->second.rows()) throw StructuralError("sitewise unitary at " + s.str() + " has the wrong size");
    LocalOp u{sl, adjoint_side ? Mat(it->second.adjoint()) : it->second};
    cur = conjugate(cur, u);
  }
  return cur;
}

// Conjugation by one unitary per site (identity where none is given); Delta-controlled.
inline NetHom sitewise_hom(const LocalMatrixNet& net, std::map<Site, Mat> us) {
  for (const auto& [x, u] : us) {
    if (u.rows() != net.q(x) || u.cols() != u.rows()) throw InvalidArgument("unitary at " + x.str() + " does not match q");
    if (unitarity_defect(u) > 1e3 * tolerances().alg) throw InvalidArgument("matrix at " + x.str() + " is not unitary");
  }
  NetHom h;
  h.source = h.target = net;
  h.sitewise = us;
  auto shared = std::make_shared<const std::map<Site, Mat>>(std::move(us));
  h.act = [net, shared](const LocalOp& x) {
    LocalOp full = extend(x, net.legs(x.sites()));
    return trim(conjugate_sitewise(full, *shared, false));
  };
  h.inverse = [net, shared](const LocalOp& x) {
    LocalOp full = extend(x, net.legs(x.sites()));
    return trim(conjugate_sitewise(full, *shared, true));
  };
  h.control = Entourage::diagonal(net.space());
  h.inverse_control = h.control;
  h.description = "sitewise";
  return h;
}

// Conjugation by a finite sequence of unitaries (applied first to last).
inline NetHom conjugation_hom(const LocalMatrixNet& net, std::vector<LocalOp> us, Entourage control) {
  for (const auto& u : us)
    if (unitarity_defect(u.m) > 1e3 * tolerances().alg) throw InvalidArgument("conjugating operator is not unitary");
  auto shared = std::make_shared<const std::vector<LocalOp>>(std::move(us));
  NetHom h;
  h.source = h.target = net;
  h.act = [shared](const LocalOp& x) {
    LocalOp cur = x;
    for (const auto& u : *shared)
      if (!legs_intersection(cur.legs, u.legs).empty()) cur = trim(conjugate(cur, u));
    return cur;
  };
  h.inverse = [shared](const LocalOp& x) {
    LocalOp cur = x;
    for (auto it = shared->rbegin(); it != shared->rend(); ++it)
      if (!legs_intersection(cur.legs, it->legs).empty()) cur = trim(conjugate(cur, adjoint(*it)));
    return cur;
  };
  h.inverse_control = invert_entourage(control);
  h.control = std::move(control);
  h.description = "conjugation(" + std::to_string(shared->size()) + ")";
  return h;
}

// Moves legs between nets without touching matrix entries.
inline NetHom relabel_hom(const LocalMatrixNet& src, const LocalMatrixNet& tgt, std::function<Leg(const Leg&)> fwd,
                          std::function<Leg(const Leg&)> bwd, Entourage control, std::optional<Entourage> inverse_control,
                          std::string description) {
  NetHom h;
  h.source = src;
  h.target = tgt;
  h.act = [fwd](const LocalOp& x) { return relabel(x, fwd); };
  if (bwd) h.inverse = [bwd](const LocalOp& x) { return relabel(x, bwd); };
  h.control = std::move(control);
  h.inverse_control = std::move(inverse_control);
  h.description = std::move(description);
  return h;
}

// phi(A_B) inside B_{B_E} for the generators of the source at B.
inline bool hom_contained(const NetHom& phi, const SiteSet& b, const Entourage& e) {
  const Legs allowed = phi.target.legs(fatten(b, e));
  for (const auto& l : phi.source.legs(b))
    for (const auto& g : generic_leg_ops(l, 3)) {
      LocalOp im = trim(phi(g));
      if (!legs_subset(im.legs, allowed)) return false;
    }
  return true;
}

// Largest *-homomorphism defect of phi on products of generic generators of the source window.
inline double hom_defect(const NetHom& phi, const SiteSet& b) {
  std::vector<LocalOp> gens;
  for (const auto& l : phi.source.legs(b)) {
    auto g = generic_leg_ops(l, 5);
    gens.insert(gens.end(), g.begin(), g.end());
  }
  double worst = 0;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    const LocalOp pi = phi(gens[i]);
    worst = std::max(worst, distance(phi(adjoint(gens[i])), adjoint(pi)) / std::max(1.0, op_norm(gens[i].m)));
    for (std::size_t j = 0; j < gens.size(); ++j) {
      const LocalOp prod = multiply(gens[i], gens[j]);
      const double d = distance(phi(prod), multiply(pi, phi(gens[j])));
      worst = std::max(worst, d / std::max(1.0, op_norm(prod.m)));
    }
  }
  return worst;
}

namespace detail {

// (g x f)(Delta) on the window: metric ball on grids, explicit pairs otherwise.
inline Entourage pair_entourage(const SpacePtr& cod, const std::vector<SitePair>& pairs) {
  if (cod->grid_like() || cod->kind() == SpaceKind::Product) {
    std::int64_t r = 0;
    bool finite = true;
    for (const auto& [u, v] : pairs) {
      auto d = cod->distance(u, v);
      if (!d) {
        finite = false;
        break;
      }
      r = std::max(r, *d);
    }
    if (finite && cod->grid_like()) return Entourage::ball(cod, r);
  }
  Relation rel;
  for (const auto& [u, v] : pairs)
    if (!(u == v)) rel.insert({u, v});
  return Entourage::relation(cod, rel);
}

}  // namespace detail

// The identity of the global algebra seen as f_* net -> g_* net.
struct ClosenessIso {
  NetHom hom;
  Pushforward pf, pg;
};

inline ClosenessIso closeness_iso(const CoarseMap& f, const CoarseMap& g, const LocalMatrixNet& net, const Window& window) {
  auto cl = are_close(f, g, window);
  if (!cl.close) throw InvalidArgument("maps " + f.describe() + " and " + g.describe() + " are not close on the window");
  Pushforward pf = pushforward(f, net, window), pg = pushforward(g, net, window);
  std::vector<SitePair> pairs, inv;
  for (const auto& x : window.sites) {
    pairs.push_back({g(x), f(x)});
    inv.push_back({f(x), g(x)});
  }
  Entourage e = detail::pair_entourage(f.codomain(), pairs);
  Entourage ei = detail::pair_entourage(f.codomain(), inv);
  auto fwd = [pf, pg](const Leg& l) { return pg.forward(pf.backward(l)); };
  auto bwd = [pf, pg](const Leg& l) { return pf.forward(pg.backward(l)); };
  NetHom h = relabel_hom(pf.net, pg.net, fwd, bwd, e, ei, "closeness(" + f.describe() + "," + g.describe() + ")");
  return ClosenessIso{h, pf, pg};
}

// ---------------------------------------------------------------- commutants and images

namespace detail {

// Elements of B_B (x) 1 commuting with every gen; only the slices of gens on B's legs matter.
inline StarAlgebra commutant_in_window(const Legs& lb, const std::vector<LocalOp>& gens) {
  const long d = legs_dim(lb);
  check_ambient(static_cast<int>(std::min<long>(d, 1L << 30)));
  std::vector<Vec> vs;
  for (const auto& g : gens) {
    const Legs on = legs_intersection(g.legs, lb);
    if (on.empty()) continue;
    for (const auto& s : slices(g, lb)) vs.push_back(vec(embed(LocalOp{on, s}, lb)));
  }
  if (vs.empty()) return StarAlgebra::full(static_cast<int>(d));
  Mat q = orthonormalize(vs, static_cast<Eigen::Index>(d) * d);
  std::vector<Mat> sl;
  for (Eigen::Index i = 0; i < q.cols(); ++i) sl.push_back(unvec(q.col(i), static_cast<int>(d)));
  return commutant_of_set(static_cast<int>(d), sl);
}

}  // namespace detail

// Per window B: A_X' intersected with B_B. Exact for block presentations; provider-based
// presentations are approximated on E-fattenings with a stabilisation check.
inline AzumayaPresentation commutant_net(const AzumayaPresentation& sub) {
  using K = AzumayaPresentation::Kind;
  if (sub.kind() == K::Whole) return AzumayaPresentation::trivial(sub.ambient());
  if (sub.kind() == K::Trivial) return AzumayaPresentation::whole(sub.ambient());
  const LocalMatrixNet amb = sub.ambient();
  auto prov = [sub, amb](const SiteSet& b) {
    const Legs lb = amb.legs(b);
    if (auto meet = sub.generators_meeting(b)) return detail::commutant_in_window(lb, *meet);
    const SiteSet b1 = fatten(b, sub.control()), b2 = fatten(b1, sub.control());
    StarAlgebra c1 = detail::commutant_in_window(lb, sub.generators(b1));
    StarAlgebra c2 = detail::commutant_in_window(lb, sub.generators(b2));
    if (c1.dim() != c2.dim())
      throw IndeterminateError("commutant on " + to_string(b) + " did not stabilise under fattening (" + std::to_string(c1.dim()) +
                               " vs " + std::to_string(c2.dim()) + ")");
    return c2;
  };
  return AzumayaPresentation::from_algebra(amb, prov, sub.control(), "commutant(" + sub.describe() + ")");
}

namespace detail {

// phi(A_W) intersected with B_B (x) 1, as operators on the legs of B.
inline StarAlgebra image_in_window(const NetHom& phi, const AzumayaPresentation& sub, const SiteSet& w, const Legs& lb) {
  const long db = legs_dim(lb);
  StarAlgebra a = sub.evaluate(w);
  const Legs lw = sub.ambient().legs(w);
  std::vector<LocalOp> imgs;
  Legs region = lb;
  for (int i = 0; i < a.dim(); ++i) {
    LocalOp im = trim(phi(LocalOp{lw, a.element(i)}));
    region = legs_union(region, im.legs);
    imgs.push_back(std::move(im));
  }
  const long dr = legs_dim(region);
  check_ambient(static_cast<int>(std::min<long>(dr, 1L << 30)));
  const Legs outside = legs_difference(region, lb);
  Mat resid(dr * dr, static_cast<Eigen::Index>(imgs.size()));
  std::vector<Mat> reduced;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    LocalOp x = extend(imgs[i], region);
    LocalOp r = reduce(x, outside);
    resid.col(static_cast<Eigen::Index>(i)) = vec(Mat(x.m - embed(r, region)));
    reduced.push_back(r.m);
  }
  Mat ns = null_space(resid, 1.0);
  std::vector<Vec> vs;
  for (Eigen::Index j = 0; j < ns.cols(); ++j) {
    Mat y = Mat::Zero(db, db);
    for (std::size_t i = 0; i < reduced.size(); ++i) y += ns(static_cast<Eigen::Index>(i), j) * reduced[i];
    vs.push_back(vec(y));
  }
  vs.push_back(vec(identity(static_cast<int>(db))));
  return StarAlgebra::from_frame(static_cast<int>(db), orthonormalize(vs, db * db));
}

}  // namespace detail

// (phi_* A)_B = phi(A_X) meet B_B, with A_X replaced by A on fattenings of B and a stabilisation check.
inline AzumayaPresentation image_net(const NetHom& phi, const AzumayaPresentation& sub) {
  if (sub.ambient().space() != phi.source.space()) throw StructuralError("subnet is not in phi's source");
  const Entourage back = phi.inverse_control ? *phi.inverse_control : invert_entourage(phi.control);
  const LocalMatrixNet tgt = phi.target;
  auto prov = [phi, sub, back, tgt](const SiteSet& b) {
    const Legs lb = tgt.legs(b);
    const SiteSet w1 = fatten(fatten(b, back), sub.control());
    const SiteSet w2 = fatten(w1, sub.control());
    StarAlgebra i1 = detail::image_in_window(phi, sub, w1, lb);
    if (w2 != w1) {
      StarAlgebra i2 = detail::image_in_window(phi, sub, w2, lb);
      if (i1.dim() != i2.dim())
        throw IndeterminateError("image on " + to_string(b) + " did not stabilise under fattening (" + std::to_string(i1.dim()) +
                                 " vs " + std::to_string(i2.dim()) + ")");
    }
    return i1;
  };
  Entourage e = compose_entourages(compose_entourages(phi.control, sub.control()), phi.control);
  return AzumayaPresentation::from_algebra(tgt, prov, e, "image(" + phi.description + "," + sub.describe() + ")");
}

// ---------------------------------------------------------------- tensor-factor checks

namespace detail {

// Windows tested by the windowed checks: all nonempty subsets for small windows, otherwise
// runs of consecutive sites (in site order) of length at most 4.
inline std::vector<SiteSet> subwindows(const SiteSet& w) {
  std::vector<SiteSet> out;
  const std::size_t n = w.size();
  if (n <= 5) {
    for (unsigned mask = 1; mask < (1u << n); ++mask) {
      SiteSet s;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1u << i)) s.push_back(w[i]);
      out.push_back(s);
    }
    return out;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t len = 1; len <= 4 && i + len <= n; ++len) out.push_back(SiteSet(w.begin() + i, w.begin() + i + len));
  return out;
}

// Orthonormal basis (columns of vec) of span{a c}.
inline Mat product_span(const StarAlgebra& a, const StarAlgebra& c) {
  const int d = a.ambient_dim();
  std::vector<Vec> vs;
  for (const auto& x : a.basis())
    for (const auto& y : c.basis()) vs.push_back(vec(Mat(x * y)));
  return orthonormalize(vs, static_cast<Eigen::Index>(d) * d);
}

}  // namespace detail

struct TensorFactorReport {
  bool injective = false;
  long dim_a = 0, dim_commutant = 0, product_rank = 0;
  int windows_tested = 0;
  std::vector<std::string> failures;
  bool passes() const { return injective && failures.empty(); }
};

inline TensorFactorReport is_tensor_factor_windowed(const AzumayaPresentation& sub, const Entourage& e, const Window& window) {
  sub.ambient().require_space(window.space);
  TensorFactorReport rep;
  const AzumayaPresentation comm = commutant_net(sub);
  StarAlgebra a = sub.evaluate(window.sites), c = comm.evaluate(window.sites);
  rep.dim_a = a.dim();
  rep.dim_commutant = c.dim();
  rep.injective = multiplication_injective(a, c);
  rep.product_rank = rep.injective ? rep.dim_a * rep.dim_commutant : -1;
  if (static_cast<long>(a.ambient_dim()) * a.ambient_dim() <= 256) rep.product_rank = detail::multiplication_rank(a, c);
  if (!rep.injective)
    rep.failures.push_back("(i) multiplication A (x) A' -> B is not injective on the window: rank " + std::to_string(rep.product_rank) +
                           " < " + std::to_string(rep.dim_a * rep.dim_commutant));
  for (const auto& b : detail::subwindows(window.sites)) {
    const SiteSet be = fatten(b, e);
    if (!subset(be, window.sites)) continue;
    ++rep.windows_tested;
    const Legs lbe = sub.ambient().legs(be);
    const long d = legs_dim(lbe);
    StarAlgebra ab = sub.evaluate(be), cb = comm.evaluate(be);
    if (static_cast<long>(ab.dim()) * cb.dim() == d * d && multiplication_injective(ab, cb)) continue;
    // span(A C) is the algebra generated by A and C, so B_B lies in it iff B_B commutes with (A u C)'.
    std::vector<Mat> probes;
    for (const auto& l : sub.ambient().legs(b))
      for (const auto& g : generic_leg_ops(l, 11)) probes.push_back(embed(g, lbe));
    auto contained = [&](const std::vector<Mat>& gens) {
      StarAlgebra k = commutant_of_set(static_cast<int>(d), gens);
      for (int i = 0; i < k.dim(); ++i)
        if (!commutes_with_all(k.element(i), probes)) return false;
      return true;
    };
    auto gens = ab.sample(3, 0xAB);
    for (auto& m : cb.sample(3, 0xCB)) gens.push_back(m);
    bool ok = contained(gens);
    if (!ok) {
      gens = ab.basis();
      for (auto& m : cb.basis()) gens.push_back(m);
      ok = contained(gens);
    }
    if (!ok) rep.failures.push_back("(ii) B_B not inside A_{B_E} A'_{B_E} for B = " + to_string(b));
  }
  return rep;
}

struct NestedFactor {
  AzumayaPresentation relative;  // A' meet B
  double reconstruction_residual = 0;
  bool verified = false;
};

// Relative commutant of sub_a inside sub_b, with the check B = A (x) (A' meet B) on the window.
inline NestedFactor nested_factor(const AzumayaPresentation& sub_a, const AzumayaPresentation& sub_b, const Window& window) {
  require_same_space(sub_a.ambient(), sub_b.ambient());
  for (const auto* s : {&sub_a, &sub_b}) {
    auto rep = is_tensor_factor_windowed(*s, s->control(), window);
    if (!rep.passes()) throw InvalidArgument("nested_factor needs verified tensor factors: " + rep.failures.front());
  }
  const LocalMatrixNet amb = sub_a.ambient();
  const AzumayaPresentation ca = commutant_net(sub_a);
  auto prov = [ca, sub_b](const SiteSet& b) { return intersect(ca.evaluate(b), sub_b.evaluate(b)); };
  AzumayaPresentation rel = AzumayaPresentation::from_algebra(amb, prov, union_entourages(sub_a.control(), sub_b.control()),
                                                               "relcommutant(" + sub_a.describe() + "," + sub_b.describe() + ")");
  NestedFactor out{rel, 0, false};
  const StarAlgebra a = sub_a.evaluate(window.sites), bb = sub_b.evaluate(window.sites), r = rel.evaluate(window.sites);
  if (!bb.contains(a)) throw InvalidArgument("first subnet is not contained in the second on the window");
  const long rank = detail::multiplication_rank(a, r);
  const long expect = static_cast<long>(a.dim()) * r.dim();
  // Residual of B's basis against span(A (x) rel), together with the dimension count.
  Mat q = detail::product_span(a, r);
  double worst = 0;
  for (int i = 0; i < bb.dim(); ++i) {
    Vec v = vec(bb.element(i));
    worst = std::max(worst, (v - q * (q.adjoint() * v)).norm() / v.norm());
  }
  out.reconstruction_residual = worst;
  out.verified = rank == expect && expect == bb.dim() && worst <= tolerances().alg;
  return out;
}

// ---------------------------------------------------------------- shift stabiliser

// One slot of S(A): the copy n of slot s at site x, sitting at f^n(x).
struct StabilizerEntry {
  int n;
  Site x;
  int slot;
  bool operator<(const StabilizerEntry& o) const { return std::tie(n, x, slot) < std::tie(o.n, o.x, o.slot); }
  bool operator==(const StabilizerEntry& o) const { return n == o.n && x == o.x && slot == o.slot; }
};

struct ShiftStabilizer {
  LocalMatrixNet s_net;   // S(A)
  LocalMatrixNet target;  // A (x) S(A)
  NetHom swindle;         // S(A) -> A (x) S(A)
  std::map<Site, std::vector<StabilizerEntry>> entries;
  std::map<Site, long> dims;
  std::map<Leg, Leg> leg_map;
  std::vector<Leg> unmatched_target;  // boundary legs of the target with no preimage in the window
  bool recursion_holds = false;       // dims_S(y) = q(y) prod_{f(z) = y} dims_S(z)
  FlasqueReport evidence;
};

inline ShiftStabilizer shift_stabilizer(const LocalMatrixNet& net, const CoarseMap& f, const Window& window, std::int64_t budget = 64) {
  net.require_space(window.space);
  FlasqueReport ev = check_flasque(net.space(), f, window, budget);
  if (!ev.passes()) throw InvalidArgument("flasqueness evidence absent for " + f.describe() + " on the window: " + ev.evidence);
  ShiftStabilizer out;
  out.evidence = ev;
  auto entries = std::make_shared<std::map<Site, std::vector<StabilizerEntry>>>();
  for (const auto& x : window.sites) {
    Site y = x;
    const int k = net.slot_count(x);
    for (int n = 0; window.contains(y); ++n) {
      for (int s = 0; s < k; ++s) (*entries)[y].push_back({n, x, s});
      if (n > static_cast<int>(window.size())) throw InvalidArgument("iterates of " + f.describe() + " cycle inside the window");
      try {
        y = f(y);
      } catch (const InvalidArgument&) {
        break;
      }
    }
  }
  for (auto& [y, es] : *entries) std::sort(es.begin(), es.end());
  auto slot_fn = [net, entries](const Site& y) {
    Slots s;
    if (auto it = entries->find(y); it != entries->end())
      for (const auto& e : it->second) s.push_back(net.slots(e.x)[static_cast<std::size_t>(e.slot)]);
    return s;
  };
  out.s_net = LocalMatrixNet::from_fn(net.space(), slot_fn, "S(" + net.describe() + ")");
  out.target = tensor(net, out.s_net);
  out.entries = *entries;
  for (const auto& y : window.sites) out.dims[y] = out.s_net.q(y);

  // Position of each entry inside its site's slot list.
  std::map<std::pair<Site, StabilizerEntry>, int> pos;
  for (const auto& [y, es] : *entries)
    for (std::size_t i = 0; i < es.size(); ++i) pos[{y, es[i]}] = static_cast<int>(i);

  std::vector<SitePair> moves;
  std::set<Leg> hit;
  for (const auto& [y, es] : *entries) {
    for (std::size_t i = 0; i < es.size(); ++i) {
      const auto& e = es[i];
      const int dim = net.slots(e.x)[static_cast<std::size_t>(e.slot)];
      Leg from{y, static_cast<int>(i), dim};
      Leg to;
      if (e.n == 0) {
        to = Leg{y, e.slot, dim};
      } else {
        Site z = e.x;
        for (int k = 0; k + 1 < e.n; ++k) z = f(z);
        to = Leg{z, net.slot_count(z) + pos.at({z, StabilizerEntry{e.n - 1, e.x, e.slot}}), dim};
      }
      if (dim > 1) {
        moves.push_back({to.site, y});
        out.leg_map[from] = to;
        hit.insert(to);
      }
    }
  }
  for (const auto& y : window.sites)
    for (const auto& l : out.target.site_legs(y))
      if (!hit.count(l)) out.unmatched_target.push_back(l);

  out.recursion_holds = true;
  for (const auto& y : window.sites) {
    long rhs = net.q(y);
    for (const auto& z : window.sites)
      if (f(z) == y) rhs *= out.dims[z];
    if (rhs != out.dims[y]) out.recursion_holds = false;
  }

  auto fwd_map = std::make_shared<const std::map<Leg, Leg>>(out.leg_map);
  auto bwd_map = std::make_shared<std::map<Leg, Leg>>();
  for (const auto& [a, b] : out.leg_map) (*bwd_map)[b] = a;
  auto fwd = [fwd_map](const Leg& l) {
    auto it = fwd_map->find(l);
    if (it == fwd_map->end()) throw InvalidArgument("leg " + l.str() + " is outside the stabiliser window");
    return it->second;
  };
  auto bwd = [bwd_map](const Leg& l) {
    auto it = bwd_map->find(l);
    if (it == bwd_map->end()) throw InvalidArgument("leg " + l.str() + " has no preimage in the stabiliser window");
    return it->second;
  };
  std::vector<SitePair> inv;
  for (const auto& [a, b] : moves) inv.push_back({b, a});
  out.swindle = relabel_hom(out.s_net, out.target, fwd, bwd, detail::pair_entourage(net.space(), moves),
                            detail::pair_entourage(net.space(), inv), "swindle(" + f.describe() + ")");
  return out;
}

}  // namespace coarseqca
