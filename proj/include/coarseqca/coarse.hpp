// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "coarseqca/errors.hpp"

namespace coarseqca {

// A point of a space. Grid points use `coords`, points of enumerated finite
// spaces use `labels`; product points concatenate both.
struct Site {
  std::vector<std::string> labels;
  std::vector<std::int64_t> coords;

  auto operator<=>(const Site&) const = default;
  bool operator==(const Site&) const = default;

  static Site at(std::vector<std::int64_t> c) { return Site{{}, std::move(c)}; }
  static Site at(std::int64_t c) { return Site{{}, {c}}; }
  static Site named(std::string s) { return Site{{std::move(s)}, {}}; }

  std::string str() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < labels.size(); ++i) os << (i ? "," : "") << labels[i];
    if (!coords.empty()) {
      os << "(";
      for (std::size_t i = 0; i < coords.size(); ++i) os << (i ? "," : "") << coords[i];
      os << ")";
    }
    return os.str();
  }
};

inline Site concat(const Site& a, const Site& b) {
  Site s = a;
  s.labels.insert(s.labels.end(), b.labels.begin(), b.labels.end());
  s.coords.insert(s.coords.end(), b.coords.begin(), b.coords.end());
  return s;
}

// Sorted, duplicate-free list of sites.
using SiteSet = std::vector<Site>;
using SitePair = std::pair<Site, Site>;
using Relation = std::set<SitePair>;

inline void normalize(SiteSet& s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
}
inline SiteSet normalized(SiteSet s) {
  normalize(s);
  return s;
}
inline bool has(const SiteSet& s, const Site& x) { return std::binary_search(s.begin(), s.end(), x); }
inline bool subset(const SiteSet& a, const SiteSet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}
inline SiteSet set_union(const SiteSet& a, const SiteSet& b) {
  SiteSet out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}
inline SiteSet set_intersection(const SiteSet& a, const SiteSet& b) {
  SiteSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}
inline SiteSet set_difference(const SiteSet& a, const SiteSet& b) {
  SiteSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}
inline std::string to_string(const SiteSet& s) {
  std::string out = "{";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? " " : "") + s[i].str();
  return out + "}";
}

enum class SpaceKind { Grid, HalfGrid, Finite, Product };

class Space;
using SpacePtr = std::shared_ptr<const Space>;

class Space {
 public:
  // Z^n with the max metric. `radii` are the declared generating ball radii.
  static SpacePtr grid(int n, std::vector<std::int64_t> radii = {1}) {
    if (n < 1) throw InvalidArgument("grid dimension must be positive");
    auto s = std::shared_ptr<Space>(new Space());
    s->kind_ = SpaceKind::Grid;
    s->dim_ = n;
    s->nonneg_.assign(n, false);
    s->radii_ = check_radii(std::move(radii));
    return s;
  }

  static SpacePtr half_grid(int n, std::vector<bool> nonneg, std::vector<std::int64_t> radii = {1}) {
    if (n < 1 || static_cast<int>(nonneg.size()) != n)
      throw InvalidArgument("half-grid needs one mask entry per axis");
    auto s = std::shared_ptr<Space>(new Space());
    s->kind_ = SpaceKind::HalfGrid;
    s->dim_ = n;
    s->nonneg_ = std::move(nonneg);
    s->radii_ = check_radii(std::move(radii));
    return s;
  }

  static SpacePtr finite(std::vector<Site> sites, std::vector<Relation> generators = {}) {
    auto s = std::shared_ptr<Space>(new Space());
    s->kind_ = SpaceKind::Finite;
    normalize(sites);
    if (!sites.empty()) {
      for (const auto& x : sites)
        if (x.labels.size() != sites[0].labels.size() || x.coords.size() != sites[0].coords.size())
          throw StructuralError("finite space sites must share one arity");
      s->nlabels_ = static_cast<int>(sites[0].labels.size());
      s->dim_ = static_cast<int>(sites[0].coords.size());
    }
    s->sites_ = std::move(sites);
    for (const auto& rel : generators)
      for (const auto& [a, b] : rel)
        if (!has(s->sites_, a) || !has(s->sites_, b))
          throw StructuralError("generator pair references a site outside the space: " + a.str() + "," +
                                b.str());
    s->relations_ = std::move(generators);
    s->build_hops();
    return s;
  }

  // Convenience: finite space on labelled sites.
  static SpacePtr finite_named(const std::vector<std::string>& names,
                               const std::vector<std::vector<std::pair<std::string, std::string>>>& gens = {}) {
    std::vector<Site> sites;
    for (const auto& n : names) sites.push_back(Site::named(n));
    std::vector<Relation> rels;
    for (const auto& g : gens) {
      Relation r;
      for (const auto& [a, b] : g) r.insert({Site::named(a), Site::named(b)});
      rels.push_back(std::move(r));
    }
    return finite(std::move(sites), std::move(rels));
  }

  // Path a0 - a1 - ... with one generator joining consecutive sites.
  static SpacePtr path(int n, const std::string& prefix = "s") {
    std::vector<std::string> names;
    std::vector<std::pair<std::string, std::string>> edges;
    for (int i = 0; i < n; ++i) names.push_back(prefix + std::to_string(i));
    for (int i = 0; i + 1 < n; ++i) edges.push_back({names[i], names[i + 1]});
    return finite_named(names, {edges});
  }

  static SpacePtr product(SpacePtr l, SpacePtr r) {
    if (!l || !r) throw InvalidArgument("product of null spaces");
    auto s = std::shared_ptr<Space>(new Space());
    s->kind_ = SpaceKind::Product;
    s->left_ = std::move(l);
    s->right_ = std::move(r);
    s->dim_ = s->left_->coord_count() + s->right_->coord_count();
    s->nlabels_ = s->left_->label_count() + s->right_->label_count();
    return s;
  }

  SpaceKind kind() const { return kind_; }
  int coord_count() const { return dim_; }
  int label_count() const { return nlabels_; }
  const std::vector<bool>& nonneg() const { return nonneg_; }
  const SiteSet& sites() const { return sites_; }
  const std::vector<Relation>& relations() const { return relations_; }
  const std::vector<std::int64_t>& radii() const { return radii_; }
  const SpacePtr& left() const { return left_; }
  const SpacePtr& right() const { return right_; }
  bool grid_like() const { return kind_ == SpaceKind::Grid || kind_ == SpaceKind::HalfGrid; }

  // True when every point of the space can be enumerated.
  bool enumerable() const {
    if (kind_ == SpaceKind::Finite) return true;
    if (kind_ == SpaceKind::Product) return left_->enumerable() && right_->enumerable();
    return false;
  }

  bool contains(const Site& x) const {
    switch (kind_) {
      case SpaceKind::Grid:
        return x.labels.empty() && static_cast<int>(x.coords.size()) == dim_;
      case SpaceKind::HalfGrid:
        if (!x.labels.empty() || static_cast<int>(x.coords.size()) != dim_) return false;
        for (int i = 0; i < dim_; ++i)
          if (nonneg_[i] && x.coords[i] < 0) return false;
        return true;
      case SpaceKind::Finite:
        return has(sites_, x);
      case SpaceKind::Product: {
        if (static_cast<int>(x.labels.size()) != nlabels_ || static_cast<int>(x.coords.size()) != dim_)
          return false;
        auto [a, b] = split(x);
        return left_->contains(a) && right_->contains(b);
      }
    }
    return false;
  }

  std::pair<Site, Site> split(const Site& x) const {
    if (kind_ != SpaceKind::Product) throw StructuralError("split on a non-product space");
    const int ll = left_->label_count(), lc = left_->coord_count();
    Site a, b;
    a.labels.assign(x.labels.begin(), x.labels.begin() + ll);
    b.labels.assign(x.labels.begin() + ll, x.labels.end());
    a.coords.assign(x.coords.begin(), x.coords.begin() + lc);
    b.coords.assign(x.coords.begin() + lc, x.coords.end());
    return {a, b};
  }

  // Infinite distances (different coarse components) are std::nullopt.
  std::optional<std::int64_t> distance(const Site& x, const Site& y) const {
    switch (kind_) {
      case SpaceKind::Grid:
      case SpaceKind::HalfGrid: {
        std::int64_t d = 0;
        for (int i = 0; i < dim_; ++i) d = std::max<std::int64_t>(d, std::llabs(x.coords[i] - y.coords[i]));
        return d;
      }
      case SpaceKind::Finite: {
        int h = hops_[index_of(x)][index_of(y)];
        if (h < 0) return std::nullopt;
        return h;
      }
      case SpaceKind::Product: {
        auto [xa, xb] = split(x);
        auto [ya, yb] = split(y);
        auto da = left_->distance(xa, ya), db = right_->distance(xb, yb);
        if (!da || !db) return std::nullopt;
        return std::max(*da, *db);
      }
    }
    return std::nullopt;
  }

  SiteSet ball(const Site& x, std::int64_t r) const {
    if (r < 0) throw InvalidArgument("negative ball radius");
    SiteSet out;
    switch (kind_) {
      case SpaceKind::Grid:
      case SpaceKind::HalfGrid: {
        std::vector<std::int64_t> lo(dim_), hi(dim_);
        for (int i = 0; i < dim_; ++i) {
          lo[i] = x.coords[i] - r;
          hi[i] = x.coords[i] + r;
          if (nonneg_[i]) lo[i] = std::max<std::int64_t>(lo[i], 0);
        }
        enumerate_box(lo, hi, out);
        break;
      }
      case SpaceKind::Finite: {
        const int i = index_of(x);
        for (std::size_t j = 0; j < sites_.size(); ++j)
          if (hops_[i][j] >= 0 && hops_[i][j] <= r) out.push_back(sites_[j]);
        break;
      }
      case SpaceKind::Product: {
        auto [a, b] = split(x);
        for (const auto& p : left_->ball(a, r))
          for (const auto& q : right_->ball(b, r)) out.push_back(concat(p, q));
        normalize(out);
        break;
      }
    }
    return out;
  }

  // Largest declared generator radius; hop metrics on finite spaces have unit generators.
  std::int64_t max_generator_radius() const {
    switch (kind_) {
      case SpaceKind::Grid:
      case SpaceKind::HalfGrid:
        return *std::max_element(radii_.begin(), radii_.end());
      case SpaceKind::Finite:
        return 1;
      case SpaceKind::Product:
        return std::max(left_->max_generator_radius(), right_->max_generator_radius());
    }
    return 1;
  }

  // Connected component index of a finite-space site (symmetrised generator graph).
  int component_of(const Site& x) const {
    if (kind_ != SpaceKind::Finite) throw InvalidArgument("components are only enumerated on finite spaces");
    return component_[index_of(x)];
  }

  int index_of(const Site& x) const {
    auto it = std::lower_bound(sites_.begin(), sites_.end(), x);
    if (it == sites_.end() || !(*it == x)) throw InvalidArgument("site not in finite space: " + x.str());
    return static_cast<int>(it - sites_.begin());
  }

  SiteSet all_sites() const {
    if (kind_ == SpaceKind::Finite) return sites_;
    if (kind_ == SpaceKind::Product && enumerable()) {
      SiteSet out;
      for (const auto& a : left_->all_sites())
        for (const auto& b : right_->all_sites()) out.push_back(concat(a, b));
      normalize(out);
      return out;
    }
    throw InvalidArgument("space is not enumerable");
  }

  std::string describe() const {
    switch (kind_) {
      case SpaceKind::Grid:
        return "grid(" + std::to_string(dim_) + ")";
      case SpaceKind::HalfGrid:
        return "halfgrid(" + std::to_string(dim_) + ")";
      case SpaceKind::Finite:
        return "finite(" + std::to_string(sites_.size()) + ")";
      case SpaceKind::Product:
        return "product(" + left_->describe() + "," + right_->describe() + ")";
    }
    return "?";
  }

  void enumerate_box(const std::vector<std::int64_t>& lo, const std::vector<std::int64_t>& hi, SiteSet& out) const {
    for (int i = 0; i < dim_; ++i)
      if (lo[i] > hi[i]) return;
    std::vector<std::int64_t> c = lo;
    while (true) {
      out.push_back(Site::at(c));
      int i = dim_ - 1;
      while (i >= 0 && c[i] == hi[i]) {
        c[i] = lo[i];
        --i;
      }
      if (i < 0) break;
      ++c[i];
    }
  }

 private:
  Space() = default;

  static std::vector<std::int64_t> check_radii(std::vector<std::int64_t> r) {
    if (r.empty()) r = {1};
    for (auto v : r)
      if (v < 0) throw InvalidArgument("generator radius must be nonnegative");
    return r;
  }

  void build_hops() {
    const std::size_t n = sites_.size();
    std::vector<std::vector<int>> adj(n);
    for (const auto& rel : relations_)
      for (const auto& [a, b] : rel) {
        int i = index_of(a), j = index_of(b);
        if (i == j) continue;
        adj[i].push_back(j);
        adj[j].push_back(i);
      }
    hops_.assign(n, std::vector<int>(n, -1));
    component_.assign(n, -1);
    int comp = 0;
    for (std::size_t s = 0; s < n; ++s) {
      std::deque<int> q{static_cast<int>(s)};
      hops_[s][s] = 0;
      while (!q.empty()) {
        int u = q.front();
        q.pop_front();
        for (int v : adj[u])
          if (hops_[s][v] < 0) {
            hops_[s][v] = hops_[s][u] + 1;
            q.push_back(v);
          }
      }
      if (component_[s] < 0) {
        for (std::size_t t = 0; t < n; ++t)
          if (hops_[s][t] >= 0) component_[t] = comp;
        ++comp;
      }
    }
  }

  SpaceKind kind_ = SpaceKind::Grid;
  int dim_ = 0;
  int nlabels_ = 0;
  std::vector<bool> nonneg_;
  std::vector<std::int64_t> radii_{1};
  SiteSet sites_;
  std::vector<Relation> relations_;
  std::vector<std::vector<int>> hops_;
  std::vector<int> component_;
  SpacePtr left_, right_;
};

enum class EntourageForm { Metric, Explicit, Union, Composition, Inverse };

// A relation on the sites of a space. The diagonal is always adjoined on
// evaluation; explicit pair sets are stored without it.
class Entourage {
 public:
  static Entourage diagonal(SpacePtr s) { return ball(std::move(s), 0); }

  static Entourage ball(SpacePtr s, std::int64_t r) {
    if (r < 0) throw InvalidArgument("negative ball radius");
    Entourage e;
    e.space_ = std::move(s);
    e.form_ = EntourageForm::Metric;
    e.radius_ = r;
    return e;
  }

  static Entourage relation(SpacePtr s, const Relation& pairs) {
    Entourage e;
    e.space_ = std::move(s);
    e.form_ = EntourageForm::Explicit;
    for (const auto& [a, b] : pairs) {
      if (!e.space_->contains(a) || !e.space_->contains(b))
        throw StructuralError("relation pair outside the space: " + a.str() + "," + b.str());
      if (!(a == b)) e.pairs_.insert({a, b});
    }
    for (const auto& [a, b] : e.pairs_) e.reversed_.insert({b, a});
    return e;
  }

  const SpacePtr& space() const { return space_; }
  EntourageForm form() const { return form_; }
  bool normalized() const { return form_ == EntourageForm::Metric || form_ == EntourageForm::Explicit; }
  std::int64_t radius() const { return radius_; }
  const Relation& pairs() const { return pairs_; }
  const std::vector<Entourage>& parts() const { return parts_; }
  bool is_metric() const { return form_ == EntourageForm::Metric; }
  bool is_diagonal() const {
    return (form_ == EntourageForm::Metric && radius_ == 0) || (form_ == EntourageForm::Explicit && pairs_.empty());
  }

  // {y : (x, y) in E}
  SiteSet image(const Site& x) const {
    switch (form_) {
      case EntourageForm::Metric:
        return space_->ball(x, radius_);
      case EntourageForm::Explicit: {
        SiteSet out{x};
        for (auto it = pairs_.lower_bound({x, Site{}}); it != pairs_.end() && it->first == x; ++it)
          out.push_back(it->second);
        normalize(out);
        return out;
      }
      case EntourageForm::Union: {
        SiteSet out;
        for (const auto& p : parts_) out = set_union(out, p.image(x));
        return out;
      }
      case EntourageForm::Composition: {
        SiteSet cur{x};
        for (const auto& p : parts_) cur = step(cur, p, true);
        return cur;
      }
      case EntourageForm::Inverse:
        return parts_[0].preimage(x);
    }
    return {};
  }

  // {x : (x, y) in E}
  SiteSet preimage(const Site& y) const {
    switch (form_) {
      case EntourageForm::Metric:
        return space_->ball(y, radius_);
      case EntourageForm::Explicit: {
        SiteSet out{y};
        for (auto it = reversed_.lower_bound({y, Site{}}); it != reversed_.end() && it->first == y; ++it)
          out.push_back(it->second);
        normalize(out);
        return out;
      }
      case EntourageForm::Union: {
        SiteSet out;
        for (const auto& p : parts_) out = set_union(out, p.preimage(y));
        return out;
      }
      case EntourageForm::Composition: {
        SiteSet cur{y};
        for (auto it = parts_.rbegin(); it != parts_.rend(); ++it) cur = step(cur, *it, false);
        return cur;
      }
      case EntourageForm::Inverse:
        return parts_[0].image(y);
    }
    return {};
  }

  bool contains(const Site& x, const Site& y) const { return has(image(x), y); }

  // All pairs (x, y) with x in `from`, diagonal excluded.
  Relation materialize(const SiteSet& from) const {
    Relation out;
    for (const auto& x : from)
      for (const auto& y : image(x))
        if (!(x == y)) out.insert({x, y});
    return out;
  }

  std::string describe() const {
    switch (form_) {
      case EntourageForm::Metric:
        return "ball(" + std::to_string(radius_) + ")";
      case EntourageForm::Explicit: {
        std::string s = "pairs{";
        bool first = true;
        for (const auto& [a, b] : pairs_) {
          s += (first ? "" : " ") + a.str() + "->" + b.str();
          first = false;
        }
        return s + "}";
      }
      case EntourageForm::Union:
      case EntourageForm::Composition: {
        std::string s = form_ == EntourageForm::Union ? "union(" : "compose(";
        for (std::size_t i = 0; i < parts_.size(); ++i) s += (i ? "," : "") + parts_[i].describe();
        return s + ")";
      }
      case EntourageForm::Inverse:
        return "inverse(" + parts_[0].describe() + ")";
    }
    return "?";
  }

  friend Entourage compose_entourages(const Entourage& e, const Entourage& f);
  friend Entourage union_entourages(const Entourage& e, const Entourage& f);
  friend Entourage invert_entourage(const Entourage& e);

 private:
  static SiteSet step(const SiteSet& cur, const Entourage& e, bool forward) {
    SiteSet out;
    for (const auto& s : cur) {
      auto nb = forward ? e.image(s) : e.preimage(s);
      out.insert(out.end(), nb.begin(), nb.end());
    }
    normalize(out);
    return out;
  }

  SpacePtr space_;
  EntourageForm form_ = EntourageForm::Metric;
  std::int64_t radius_ = 0;
  Relation pairs_, reversed_;
  std::vector<Entourage> parts_;
};

inline void require_same_space(const Entourage& e, const Entourage& f) {
  if (e.space() != f.space()) throw StructuralError("entourages belong to different spaces");
}

// Relational composition: (x, z) whenever (x, y) in E and (y, z) in F.
inline Entourage compose_entourages(const Entourage& e, const Entourage& f) {
  require_same_space(e, f);
  if (e.is_diagonal() && e.form() == EntourageForm::Metric) return f;
  if (f.is_diagonal() && f.form() == EntourageForm::Metric) return e;
  if (e.is_diagonal() && e.form() == EntourageForm::Explicit) return f;
  if (f.is_diagonal() && f.form() == EntourageForm::Explicit) return e;
  if (e.form() == EntourageForm::Metric && f.form() == EntourageForm::Metric)
    return Entourage::ball(e.space(), e.radius() + f.radius());
  if (e.form() == EntourageForm::Explicit && f.form() == EntourageForm::Explicit) {
    SiteSet sources;
    for (const auto& [a, b] : e.pairs()) sources.push_back(a);
    for (const auto& [a, b] : f.pairs()) sources.push_back(a);
    normalize(sources);
    Relation out;
    for (const auto& x : sources)
      for (const auto& y : e.image(x))
        for (const auto& z : f.image(y))
          if (!(x == z)) out.insert({x, z});
    return Entourage::relation(e.space(), out);
  }
  Entourage c;
  c.space_ = e.space();
  c.form_ = EntourageForm::Composition;
  for (const Entourage* p : {&e, &f}) {
    if (p->form() == EntourageForm::Composition)
      c.parts_.insert(c.parts_.end(), p->parts().begin(), p->parts().end());
    else
      c.parts_.push_back(*p);
  }
  return c;
}

inline Entourage union_entourages(const Entourage& e, const Entourage& f) {
  require_same_space(e, f);
  if (e.form() == EntourageForm::Metric && f.form() == EntourageForm::Metric)
    return Entourage::ball(e.space(), std::max(e.radius(), f.radius()));
  if (e.is_diagonal()) return f;
  if (f.is_diagonal()) return e;
  if (e.form() == EntourageForm::Explicit && f.form() == EntourageForm::Explicit) {
    Relation r = e.pairs();
    r.insert(f.pairs().begin(), f.pairs().end());
    return Entourage::relation(e.space(), r);
  }
  Entourage u;
  u.space_ = e.space();
  u.form_ = EntourageForm::Union;
  for (const Entourage* p : {&e, &f}) {
    if (p->form() == EntourageForm::Union)
      u.parts_.insert(u.parts_.end(), p->parts().begin(), p->parts().end());
    else
      u.parts_.push_back(*p);
  }
  return u;
}

inline Entourage invert_entourage(const Entourage& e) {
  switch (e.form()) {
    case EntourageForm::Metric:
      return e;
    case EntourageForm::Explicit: {
      Relation r;
      for (const auto& [a, b] : e.pairs()) r.insert({b, a});
      return Entourage::relation(e.space(), r);
    }
    case EntourageForm::Inverse:
      return e.parts()[0];
    case EntourageForm::Composition: {
      Entourage out = invert_entourage(e.parts().back());
      for (auto it = e.parts().rbegin() + 1; it != e.parts().rend(); ++it)
        out = compose_entourages(out, invert_entourage(*it));
      return out;
    }
    case EntourageForm::Union: {
      Entourage out = invert_entourage(e.parts()[0]);
      for (std::size_t i = 1; i < e.parts().size(); ++i) out = union_entourages(out, invert_entourage(e.parts()[i]));
      return out;
    }
  }
  return e;
}

// Y_E = {x | exists y in Y with (x, y) in E}
inline SiteSet fatten(const SiteSet& y, const Entourage& e) {
  SiteSet out;
  for (const auto& p : y) {
    auto pre = e.preimage(p);
    out.insert(out.end(), pre.begin(), pre.end());
  }
  normalize(out);
  return out;
}

// Largest distance realised by E on pairs starting in `from`; nullopt if some pair is at infinite distance.
inline std::optional<std::int64_t> radius_on(const Entourage& e, const SiteSet& from) {
  std::int64_t r = 0;
  for (const auto& x : from)
    for (const auto& y : e.image(x)) {
      auto d = e.space()->distance(x, y);
      if (!d) return std::nullopt;
      r = std::max(r, *d);
    }
  return r;
}

// A finite set of sites of a space on which every computation is evaluated.
struct Window {
  SpacePtr space;
  SiteSet sites;

  static Window of(SpacePtr s, SiteSet sites) {
    normalize(sites);
    for (const auto& x : sites)
      if (!s->contains(x)) throw StructuralError("window site outside the space: " + x.str());
    return Window{std::move(s), std::move(sites)};
  }

  // Axis-aligned box; finite factors of products are enumerated in full.
  static Window box(SpacePtr s, const std::vector<std::int64_t>& lo, const std::vector<std::int64_t>& hi) {
    if (static_cast<int>(lo.size()) != s->coord_count() || hi.size() != lo.size())
      throw InvalidArgument("box bounds do not match the space dimension");
    SiteSet out;
    if (s->grid_like()) {
      std::vector<std::int64_t> l = lo;
      for (int i = 0; i < s->coord_count(); ++i)
        if (s->nonneg()[i]) l[i] = std::max<std::int64_t>(l[i], 0);
      s->enumerate_box(l, hi, out);
    } else if (s->kind() == SpaceKind::Finite) {
      for (const auto& x : s->sites()) {
        bool in = true;
        for (std::size_t i = 0; i < lo.size(); ++i) in = in && x.coords[i] >= lo[i] && x.coords[i] <= hi[i];
        if (in) out.push_back(x);
      }
    } else {
      const int lc = s->left()->coord_count();
      std::vector<std::int64_t> llo(lo.begin(), lo.begin() + lc), lhi(hi.begin(), hi.begin() + lc);
      std::vector<std::int64_t> rlo(lo.begin() + lc, lo.end()), rhi(hi.begin() + lc, hi.end());
      auto a = box(s->left(), llo, lhi), b = box(s->right(), rlo, rhi);
      for (const auto& p : a.sites)
        for (const auto& q : b.sites) out.push_back(concat(p, q));
    }
    return of(std::move(s), std::move(out));
  }

  static Window interval(SpacePtr s, std::int64_t a, std::int64_t b) { return box(std::move(s), {a}, {b}); }

  static Window all(SpacePtr s) {
    auto sites = s->all_sites();
    return of(std::move(s), std::move(sites));
  }

  bool contains(const Site& x) const { return has(sites, x); }
  std::size_t size() const { return sites.size(); }
  bool empty() const { return sites.empty(); }

  // Largest finite pairwise distance.
  std::int64_t diameter() const {
    if (sites.empty()) return 0;
    if (space->grid_like()) {
      std::int64_t d = 0;
      for (int i = 0; i < space->coord_count(); ++i) {
        std::int64_t lo = sites[0].coords[i], hi = lo;
        for (const auto& x : sites) {
          lo = std::min(lo, x.coords[i]);
          hi = std::max(hi, x.coords[i]);
        }
        d = std::max(d, hi - lo);
      }
      return d;
    }
    std::int64_t d = 0;
    for (std::size_t i = 0; i < sites.size(); ++i)
      for (std::size_t j = i + 1; j < sites.size(); ++j) {
        auto v = space->distance(sites[i], sites[j]);
        if (v) d = std::max(d, *v);
      }
    return d;
  }

  // The window fattened by its own diameter (at least 1).
  Window enlarged() const {
    const std::int64_t r = std::max<std::int64_t>(1, diameter());
    return Window{space, fatten(sites, Entourage::ball(space, r))};
  }
};

enum class MapKind { Identity, Translate, AxisShift, Explicit, Compose, Pointwise };

class CoarseMap {
 public:
  static CoarseMap identity(SpacePtr s) {
    CoarseMap m;
    m.kind_ = MapKind::Identity;
    m.domain_ = s;
    m.codomain_ = std::move(s);
    return m;
  }

  static CoarseMap translate(SpacePtr s, std::vector<std::int64_t> v) {
    if (static_cast<int>(v.size()) != s->coord_count())
      throw InvalidArgument("translation vector does not match the space dimension");
    CoarseMap m;
    m.kind_ = MapKind::Translate;
    m.domain_ = s;
    m.codomain_ = std::move(s);
    m.vec_ = std::move(v);
    return m;
  }

  static CoarseMap axis_shift(SpacePtr s, int axis, std::int64_t amount) {
    if (axis < 0 || axis >= s->coord_count()) throw InvalidArgument("shift axis out of range");
    std::vector<std::int64_t> v(s->coord_count(), 0);
    v[axis] = amount;
    CoarseMap m = translate(std::move(s), std::move(v));
    m.kind_ = MapKind::AxisShift;
    m.axis_ = axis;
    return m;
  }

  static CoarseMap explicit_map(SpacePtr dom, SpacePtr cod, std::map<Site, Site> table) {
    for (const auto& [a, b] : table)
      if (!dom->contains(a) || !cod->contains(b)) throw StructuralError("map table entry outside its spaces");
    if (dom->kind() == SpaceKind::Finite)
      for (const auto& x : dom->sites())
        if (!table.count(x)) throw StructuralError("explicit map is not total at " + x.str());
    CoarseMap m;
    m.kind_ = MapKind::Explicit;
    m.domain_ = std::move(dom);
    m.codomain_ = std::move(cod);
    m.table_ = std::move(table);
    return m;
  }

  // Arbitrary site function, e.g. x -> 2x on Z.
  static CoarseMap pointwise(SpacePtr dom, SpacePtr cod, std::string name, std::function<Site(const Site&)> fn) {
    CoarseMap m;
    m.kind_ = MapKind::Pointwise;
    m.domain_ = std::move(dom);
    m.codomain_ = std::move(cod);
    m.name_ = std::move(name);
    m.fn_ = std::move(fn);
    return m;
  }

  // compose({f, g, h}) = f o g o h, so h is applied first.
  static CoarseMap compose(std::vector<CoarseMap> maps) {
    if (maps.empty()) throw InvalidArgument("empty composition");
    for (std::size_t i = 0; i + 1 < maps.size(); ++i)
      if (maps[i].domain() != maps[i + 1].codomain()) throw StructuralError("composed maps do not chain");
    if (maps.size() == 1) return maps[0];
    CoarseMap m;
    m.kind_ = MapKind::Compose;
    m.domain_ = maps.back().domain();
    m.codomain_ = maps.front().codomain();
    m.parts_ = std::move(maps);
    return m;
  }

  MapKind kind() const { return kind_; }
  const SpacePtr& domain() const { return domain_; }
  const SpacePtr& codomain() const { return codomain_; }
  const std::vector<std::int64_t>& vector() const { return vec_; }
  int axis() const { return axis_; }
  const std::map<Site, Site>& table() const { return table_; }
  const std::vector<CoarseMap>& parts() const { return parts_; }

  Site operator()(const Site& x) const {
    Site y;
    switch (kind_) {
      case MapKind::Identity:
        return x;
      case MapKind::Translate:
      case MapKind::AxisShift:
        y = x;
        for (std::size_t i = 0; i < vec_.size(); ++i) y.coords[i] += vec_[i];
        break;
      case MapKind::Explicit: {
        auto it = table_.find(x);
        if (it == table_.end()) throw InvalidArgument("explicit map undefined at " + x.str());
        return it->second;
      }
      case MapKind::Compose:
        y = x;
        for (auto it = parts_.rbegin(); it != parts_.rend(); ++it) y = (*it)(y);
        return y;
      case MapKind::Pointwise:
        y = fn_(x);
        break;
    }
    if (!codomain_->contains(y)) throw InvalidArgument("map sends " + x.str() + " outside its codomain");
    return y;
  }

  // True for maps that are bijections of the underlying set (translations on Z^n).
  bool is_translation() const {
    switch (kind_) {
      case MapKind::Identity:
        return true;
      case MapKind::Translate:
      case MapKind::AxisShift:
        return domain_->kind() == SpaceKind::Grid ||
               (domain_->kind() == SpaceKind::Product && !domain_->left()->grid_like() &&
                domain_->right()->kind() == SpaceKind::Grid);
      case MapKind::Compose:
        return std::all_of(parts_.begin(), parts_.end(), [](const CoarseMap& m) { return m.is_translation(); });
      default:
        return false;
    }
  }

  // Inverse of a translation-type map.
  CoarseMap inverse_translation() const {
    if (!is_translation()) throw InvalidArgument("only translations are inverted");
    switch (kind_) {
      case MapKind::Identity:
        return *this;
      case MapKind::Translate:
      case MapKind::AxisShift: {
        CoarseMap m = *this;
        for (auto& v : m.vec_) v = -v;
        return m;
      }
      default: {
        std::vector<CoarseMap> inv;
        for (auto it = parts_.rbegin(); it != parts_.rend(); ++it) inv.push_back(it->inverse_translation());
        return compose(std::move(inv));
      }
    }
  }

  std::string describe() const {
    switch (kind_) {
      case MapKind::Identity:
        return "id";
      case MapKind::Translate:
      case MapKind::AxisShift: {
        std::string s = "translate(";
        for (std::size_t i = 0; i < vec_.size(); ++i) s += (i ? "," : "") + std::to_string(vec_[i]);
        return s + ")";
      }
      case MapKind::Explicit:
        return "table(" + std::to_string(table_.size()) + ")";
      case MapKind::Compose: {
        std::string s = "compose(";
        for (std::size_t i = 0; i < parts_.size(); ++i) s += (i ? "," : "") + parts_[i].describe();
        return s + ")";
      }
      case MapKind::Pointwise:
        return name_;
    }
    return "?";
  }

 private:
  MapKind kind_ = MapKind::Identity;
  SpacePtr domain_, codomain_;
  std::vector<std::int64_t> vec_;
  int axis_ = -1;
  std::map<Site, Site> table_;
  std::vector<CoarseMap> parts_;
  std::function<Site(const Site&)> fn_;
  std::string name_;
};

inline SiteSet map_image(const CoarseMap& f, const SiteSet& s) {
  SiteSet out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(f(x));
  normalize(out);
  return out;
}

// Generators of a space's coarse structure.
inline std::vector<Entourage> generators_of(const SpacePtr& s) {
  std::vector<Entourage> out;
  if (s->grid_like()) {
    for (auto r : s->radii()) out.push_back(Entourage::ball(s, r));
  } else if (s->kind() == SpaceKind::Finite) {
    for (const auto& rel : s->relations()) out.push_back(Entourage::relation(s, rel));
  } else {
    out.push_back(Entourage::ball(s, s->max_generator_radius()));
  }
  return out;
}

// Window-relative membership of a pushed-forward relation in a coarse structure.
// On finite spaces a relation is an entourage iff it stays inside coarse components.
// Elsewhere the realised radius must be finite and either stable under enlarging the
// probe window or within the largest declared generator radius.
struct Membership {
  bool member = false;
  std::optional<std::int64_t> radius;
  std::optional<std::int64_t> enlarged_radius;
};

namespace detail {

template <class PairsOf>
Membership membership(const SpacePtr& cod, const Window& w, PairsOf&& pairs_radius) {
  Membership m;
  m.radius = pairs_radius(w.sites);
  if (!m.radius) return m;
  if (cod->kind() == SpaceKind::Finite) {
    m.member = true;
    m.enlarged_radius = m.radius;
    return m;
  }
  m.enlarged_radius = pairs_radius(w.enlarged().sites);
  if (!m.enlarged_radius) return m;
  m.member = *m.enlarged_radius == *m.radius || *m.radius <= cod->max_generator_radius();
  return m;
}

inline std::optional<std::int64_t> max_distance(const SpacePtr& s, const std::vector<SitePair>& pairs) {
  std::int64_t r = 0;
  for (const auto& [a, b] : pairs) {
    auto d = s->distance(a, b);
    if (!d) return std::nullopt;
    r = std::max(r, *d);
  }
  return r;
}

}  // namespace detail

struct CoarseMapReport {
  bool proper = true;
  bool controlled = true;
  std::vector<Entourage> control_images;
  std::vector<std::string> notes;
};

// Properness: fibres must be bounded. On finite spaces a fibre counts as bounded when
// it lies in a single unit hop ball; elsewhere fibre diameters must not grow when the
// probe window is enlarged.
inline CoarseMapReport check_coarse_map(const CoarseMap& f, const std::vector<Window>& probes) {
  if (probes.empty()) throw InvalidArgument("check_coarse_map needs at least one probe window");
  CoarseMapReport rep;
  const auto& dom = f.domain();
  const auto& cod = f.codomain();
  auto gens = generators_of(dom);
  std::vector<std::optional<std::int64_t>> worst(gens.size(), std::int64_t{0});
  std::vector<Relation> explicit_images(gens.size());

  for (const auto& w : probes) {
    if (w.space != dom) throw StructuralError("probe window is not in the map's domain");
    if (dom->kind() == SpaceKind::Finite) {
      std::map<Site, SiteSet> fibres;
      for (const auto& x : dom->sites()) fibres[f(x)].push_back(x);
      for (const auto& x : w.sites) {
        const auto& fib = fibres[f(x)];
        bool bounded = false;
        for (const auto& c : dom->sites()) {
          auto b = dom->ball(c, 1);
          if (subset(fib, b)) {
            bounded = true;
            break;
          }
        }
        if (!bounded) {
          rep.proper = false;
          rep.notes.push_back("unbounded fibre over " + f(x).str() + ": " + to_string(fib));
          break;
        }
      }
    } else {
      const Window w1 = w.enlarged();
      const Window w2 = w1.enlarged();
      auto fibre_diam = [&](const Window& range) {
        std::map<Site, SiteSet> fib;
        for (const auto& x : range.sites) fib[f(x)].push_back(x);
        std::int64_t d = 0;
        for (const auto& x : w.sites) {
          const auto& s = fib[f(x)];
          d = std::max(d, Window{dom, s}.diameter());
        }
        return d;
      };
      const auto d1 = fibre_diam(w1), d2 = fibre_diam(w2);
      if (d1 != d2) {
        rep.proper = false;
        rep.notes.push_back("fibre diameter grows with the window (" + std::to_string(d1) + " -> " +
                            std::to_string(d2) + ")");
      }
    }

    for (std::size_t g = 0; g < gens.size(); ++g) {
      auto pushed = [&](const SiteSet& from) {
        std::vector<SitePair> pairs;
        for (const auto& x : from)
          for (const auto& y : gens[g].image(x)) pairs.push_back({f(x), f(y)});
        return detail::max_distance(cod, pairs);
      };
      auto m = detail::membership(cod, w, pushed);
      if (!m.member) {
        rep.controlled = false;
        rep.notes.push_back("image of generator " + gens[g].describe() + " is not an entourage on the probe");
      }
      if (!m.radius || !worst[g])
        worst[g] = std::nullopt;
      else
        worst[g] = std::max(*worst[g], *m.radius);
      if (!cod->grid_like() && cod->kind() != SpaceKind::Product)
        for (const auto& x : w.sites)
          for (const auto& y : gens[g].image(x))
            if (!(f(x) == f(y))) explicit_images[g].insert({f(x), f(y)});
    }
  }
  for (std::size_t g = 0; g < gens.size(); ++g) {
    if (cod->kind() == SpaceKind::Finite)
      rep.control_images.push_back(Entourage::relation(cod, explicit_images[g]));
    else if (worst[g])
      rep.control_images.push_back(Entourage::ball(cod, *worst[g]));
  }
  return rep;
}

struct Closeness {
  bool close = false;
  Entourage witness;
  std::optional<std::int64_t> radius;
};

// (f x g)(Delta) evaluated on the probe window.
inline Closeness are_close(const CoarseMap& f, const CoarseMap& g, const Window& probe) {
  if (f.domain() != g.domain() || f.codomain() != g.codomain())
    throw StructuralError("closeness needs maps with equal domain and codomain");
  const auto& cod = f.codomain();
  auto pairs_radius = [&](const SiteSet& from) {
    std::vector<SitePair> pairs;
    for (const auto& x : from) pairs.push_back({f(x), g(x)});
    return detail::max_distance(cod, pairs);
  };
  auto m = detail::membership(cod, probe, pairs_radius);
  Closeness c{m.member, Entourage::diagonal(cod), m.radius};
  if (cod->kind() == SpaceKind::Finite) {
    Relation r;
    for (const auto& x : probe.sites)
      if (!(f(x) == g(x))) r.insert({f(x), g(x)});
    c.witness = Entourage::relation(cod, r);
  } else if (m.radius) {
    c.witness = Entourage::ball(cod, *m.radius);
  }
  return c;
}

struct FlasqueReport {
  bool cond1 = false, cond2 = false, cond3 = false;
  std::optional<std::int64_t> close_radius;
  std::int64_t escape_step = -1;
  std::optional<std::int64_t> iterate_radius;
  std::int64_t budget = 0;
  std::string evidence;
  bool passes() const { return cond1 && cond2 && cond3; }
};

// Bounded-budget evidence for the three flasqueness conditions of f on a window.
inline FlasqueReport check_flasque(const SpacePtr& space, const CoarseMap& f, const Window& window,
                                   std::int64_t budget) {
  if (budget <= 0) throw InvalidArgument("flasqueness budget must be positive");
  if (f.domain() != space || f.codomain() != space) throw StructuralError("flasqueness needs an endomap");
  if (window.space != space) throw StructuralError("window is not in the space");
  FlasqueReport rep;
  rep.budget = budget;

  auto c1 = are_close(f, CoarseMap::identity(space), window);
  rep.cond1 = c1.close;
  rep.close_radius = c1.radius;

  // Points that can reach the window within `budget` steps.
  SiteSet eval;
  if (space->enumerable())
    eval = space->all_sites();
  else
    eval = fatten(window.sites, Entourage::ball(space, budget * c1.radius.value_or(0)));
  std::vector<bool> hit(budget + 1, false);
  for (const auto& x : eval) {
    Site y = x;
    for (std::int64_t n = 0; n <= budget; ++n) {
      if (window.contains(y)) hit[n] = true;
      if (n < budget) y = f(y);
    }
  }
  for (std::int64_t n = 1; n <= budget && !window.empty(); ++n)
    if (!hit[n]) {
      rep.escape_step = n;
      break;
    }
  rep.cond2 = window.empty() || rep.escape_step > 0;

  bool ok3 = true;
  std::optional<std::int64_t> worst = 0;
  for (const auto& gen : generators_of(space)) {
    auto iterate_radius = [&](const SiteSet& from) -> std::optional<std::int64_t> {
      std::int64_t r = 0;
      for (const auto& x : from)
        for (const auto& y0 : gen.image(x)) {
          Site a = x, b = y0;
          for (std::int64_t n = 0; n <= budget; ++n) {
            auto d = space->distance(a, b);
            if (!d) return std::nullopt;
            r = std::max(r, *d);
            if (n < budget) {
              a = f(a);
              b = f(b);
            }
          }
        }
      return r;
    };
    auto m = detail::membership(space, window, iterate_radius);
    ok3 = ok3 && m.member;
    if (!m.radius || !worst)
      worst = std::nullopt;
    else
      worst = std::max(*worst, *m.radius);
  }
  rep.cond3 = ok3;
  rep.iterate_radius = worst;
  std::ostringstream os;
  os << "bounded-budget evidence on " << window.size() << " sites, budget " << budget;
  if (rep.escape_step > 0) os << ", window left after " << rep.escape_step << " steps";
  rep.evidence = os.str();
  return rep;
}

// Coarse components of a finite space, restricted to the window.
inline std::vector<SiteSet> coarse_components(const SpacePtr& space, const Window& window) {
  if (space->kind() != SpaceKind::Finite) throw InvalidArgument("coarse_components needs a finite space");
  std::map<int, SiteSet> parts;
  for (const auto& x : window.sites) parts[space->component_of(x)].push_back(x);
  std::vector<SiteSet> out;
  for (auto& [k, v] : parts) out.push_back(std::move(v));
  std::sort(out.begin(), out.end());
  return out;
}

// The big family generated by a set Y: all Z with Z inside some fattening of Y.
class BigFamily {
 public:
  BigFamily(SpacePtr s, std::function<bool(const Site&)> pred) : space_(std::move(s)), pred_(std::move(pred)) {}

  static BigFamily of_set(SpacePtr s, SiteSet y) {
    normalize(y);
    return BigFamily(std::move(s), [y](const Site& x) { return has(y, x); });
  }

  // {x : x[axis] <= bound} (or >= when `upper` is false).
  static BigFamily half_space(SpacePtr s, int axis, std::int64_t bound, bool upper = true) {
    return BigFamily(std::move(s), [=](const Site& x) {
      return upper ? x.coords.at(axis) <= bound : x.coords.at(axis) >= bound;
    });
  }

  bool generator_contains(const Site& x) const { return pred_(x); }

  bool contains(const SiteSet& z, const Entourage& e) const {
    for (const auto& x : z) {
      auto img = e.image(x);
      if (std::none_of(img.begin(), img.end(), pred_)) return false;
    }
    return true;
  }

  std::optional<std::int64_t> witness_radius(const SiteSet& z, std::int64_t max_radius) const {
    for (std::int64_t r = 0; r <= max_radius; ++r)
      if (contains(z, Entourage::ball(space_, r))) return r;
    return std::nullopt;
  }

 private:
  SpacePtr space_;
  std::function<bool(const Site&)> pred_;
};

}  // namespace coarseqca
