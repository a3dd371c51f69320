// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "coarseqca/index.hpp"

namespace coarseqca::cli {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

enum Exit { kPass = 0, kFail = 1, kIndeterminate = 2, kInputError = 3 };

// ---------------------------------------------------------------- sites and basic values

// 3 -> coords {3}; "a" -> label a; ["a", 3] -> label a, coords {3}; [1, 2] -> coords {1, 2}.
inline Site parse_site(const json& j) {
  Site s;
  auto one = [&](const json& v) {
    if (v.is_number_integer()) s.coords.push_back(v.get<std::int64_t>());
    else if (v.is_string()) s.labels.push_back(v.get<std::string>());
    else throw InvalidArgument("site components are integers or strings: " + v.dump());
  };
  if (j.is_array())
    for (const auto& v : j) one(v);
  else
    one(j);
  return s;
}

// Object keys: "3", "a", "a,3", "1,2".
inline Site parse_site_key(const std::string& key) {
  Site s;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) throw InvalidArgument("empty component in site key '" + key + "'");
    char* end = nullptr;
    const long long v = std::strtoll(part.c_str(), &end, 10);
    if (end && *end == '\0') s.coords.push_back(v);
    else s.labels.push_back(part);
  }
  return s;
}

inline json site_json(const Site& s) {
  if (s.labels.empty() && s.coords.size() == 1) return s.coords[0];
  if (s.coords.empty() && s.labels.size() == 1) return s.labels[0];
  json a = json::array();
  for (const auto& l : s.labels) a.push_back(l);
  for (auto c : s.coords) a.push_back(c);
  return a;
}

inline SiteSet parse_sites(const json& j) {
  const json& arr = j.is_object() && j.contains("sites") ? j.at("sites") : j;
  if (!arr.is_array()) throw InvalidArgument("expected a list of sites");
  SiteSet out;
  for (const auto& v : arr) out.push_back(parse_site(v));
  normalize(out);
  return out;
}

inline json sites_json(const SiteSet& s) {
  json a = json::array();
  for (const auto& x : s) a.push_back(site_json(x));
  return a;
}

inline void require_sites_in(const SpacePtr& space, const SiteSet& s) {
  for (const auto& x : s)
    if (!space->contains(x)) throw InvalidArgument("site " + x.str() + " is not in the space " + space->describe());
}

inline cd parse_entry(const json& v) {
  if (v.is_number()) return cd(v.get<double>(), 0.0);
  if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number()) return cd(v[0].get<double>(), v[1].get<double>());
  throw InvalidArgument("matrix entries are numbers or [re, im] pairs: " + v.dump());
}

inline Mat parse_mat(const json& j) {
  if (!j.is_array() || j.empty()) throw InvalidArgument("a matrix is a non-empty list of rows");
  const std::size_t n = j.size();
  Mat m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t r = 0; r < n; ++r) {
    if (!j[r].is_array() || j[r].size() != j[0].size()) throw InvalidArgument("matrix rows have unequal lengths");
    for (std::size_t c = 0; c < j[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = parse_entry(j[r][c]);
  }
  return m;
}

inline json mat_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(json::array({m(r, c).real(), m(r, c).imag()}));
    rows.push_back(row);
  }
  return rows;
}

inline json rational_json(const PositiveRational& q) { return json{{"num", q.num}, {"den", q.den}}; }

// ---------------------------------------------------------------- spaces, windows, maps, entourages

inline SpacePtr parse_space(const json& j) {
  if (!j.is_object() || !j.contains("kind")) throw InvalidArgument("space needs a \"kind\"");
  const std::string kind = j.at("kind").get<std::string>();
  std::vector<std::int64_t> radii{1};
  Relation pairs_rel;
  std::vector<Relation> rels;
  if (j.contains("generators"))
    for (const auto& g : j.at("generators")) {
      const std::string t = g.at("type").get<std::string>();
      if (t == "metric") {
        radii = {g.at("radius").get<std::int64_t>()};
      } else if (t == "pairs") {
        Relation r;
        for (const auto& p : g.at("pairs")) r.insert({parse_site(p.at(0)), parse_site(p.at(1))});
        rels.push_back(r);
      } else {
        throw InvalidArgument("unknown generator type '" + t + "'");
      }
    }
  if (kind == "grid") return Space::grid(j.value("dim", 1), radii);
  if (kind == "halfgrid") {
    const int dim = j.value("dim", 1);
    std::vector<bool> nonneg(static_cast<std::size_t>(dim), true);
    if (j.contains("nonneg")) nonneg = j.at("nonneg").get<std::vector<bool>>();
    return Space::half_grid(dim, nonneg, radii);
  }
  if (kind == "finite") return Space::finite(parse_sites(j.at("sites")), rels);
  if (kind == "path") return Space::path(j.at("length").get<int>(), j.value("prefix", std::string("s")));
  if (kind == "product") return Space::product(parse_space(j.at("left")), parse_space(j.at("right")));
  throw InvalidArgument("unknown space kind '" + kind + "'");
}

// "a..b" on a one-dimensional grid, "all" on finite spaces, or {"lo":[..],"hi":[..]} / {"sites":[..]}.
inline Window parse_window(const json& j, const SpacePtr& space) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "all") return Window::all(space);
    const auto dots = s.find("..");
    if (dots == std::string::npos) throw InvalidArgument("window strings look like a..b, got '" + s + "'");
    try {
      return Window::interval(space, std::stoll(s.substr(0, dots)), std::stoll(s.substr(dots + 2)));
    } catch (const std::logic_error&) {
      throw InvalidArgument("window bounds are integers, got '" + s + "'");
    }
  }
  if (j.is_object() && j.contains("lo"))
    return Window::box(space, j.at("lo").get<std::vector<std::int64_t>>(), j.at("hi").get<std::vector<std::int64_t>>());
  SiteSet s = parse_sites(j);
  require_sites_in(space, s);
  return Window::of(space, s);
}

inline json window_json(const Window& w) { return json{{"sites", sites_json(w.sites)}}; }

inline Entourage parse_entourage(const json& j, const SpacePtr& space) {
  const std::string t = j.at("type").get<std::string>();
  if (t == "diagonal") return Entourage::diagonal(space);
  if (t == "metric") return Entourage::ball(space, j.at("radius").get<std::int64_t>());
  if (t == "pairs") {
    Relation r;
    for (const auto& p : j.at("pairs")) r.insert({parse_site(p.at(0)), parse_site(p.at(1))});
    return Entourage::relation(space, r);
  }
  throw InvalidArgument("unknown entourage type '" + t + "'");
}

inline json entourage_json(const Entourage& e) {
  json out{{"describe", e.describe()}};
  if (e.is_metric()) {
    out["type"] = "metric";
    out["radius"] = e.radius();
  }
  return out;
}

inline CoarseMap parse_map(const json& j, const SpacePtr& space) {
  const std::string t = j.at("type").get<std::string>();
  if (t == "identity") return CoarseMap::identity(space);
  if (t == "translate") return CoarseMap::translate(space, j.at("vector").get<std::vector<std::int64_t>>());
  if (t == "axis_shift") return CoarseMap::axis_shift(space, j.at("axis").get<int>(), j.at("amount").get<std::int64_t>());
  if (t == "table") {
    std::map<Site, Site> table;
    for (const auto& p : j.at("pairs")) table[parse_site(p.at(0))] = parse_site(p.at(1));
    return CoarseMap::explicit_map(space, space, table);
  }
  throw InvalidArgument("unknown map type '" + t + "'");
}

// ---------------------------------------------------------------- nets, presentations, automorphisms

inline LocalMatrixNet parse_net(const json& j) {
  const SpacePtr space = parse_space(j.at("space"));
  if (j.contains("slots") && !j.contains("dims")) return LocalMatrixNet::uniform_slots(space, j.at("slots").get<Slots>());
  if (j.contains("q") && !j.contains("dims")) return LocalMatrixNet::uniform(space, j.at("q").get<int>());
  std::map<Site, Slots> table;
  if (j.contains("dims"))
    for (const auto& d : j.at("dims")) {
      const Site x = parse_site(d.at("site"));
      require_sites_in(space, {x});
      table[x] = d.contains("slots") ? d.at("slots").get<Slots>() : Slots{d.at("q").get<int>()};
    }
  Slots def{j.value("default_q", 1)};
  if (j.contains("slots")) def = j.at("slots").get<Slots>();
  return LocalMatrixNet::table_slots(space, table, def);
}

inline bool is_presentation(const json& j) { return j.is_object() && j.contains("ambient"); }

inline AzumayaPresentation parse_presentation(const json& j) {
  const LocalMatrixNet net = parse_net(j.at("ambient"));
  if (j.value("whole", false)) return AzumayaPresentation::whole(net);
  const Entourage control = j.contains("control") ? parse_entourage(j.at("control"), net.space()) : Entourage::diagonal(net.space());
  std::vector<GeneratorBlock> blocks;
  if (j.contains("generators"))
    for (const auto& g : j.at("generators")) {
      GeneratorBlock b{parse_sites(g.at("window")), {}};
      require_sites_in(net.space(), b.sites);
      const Legs legs = net.legs(b.sites);
      for (const auto& m : g.at("mats")) {
        Mat x = parse_mat(m);
        if (x.rows() != legs_dim(legs) || x.cols() != legs_dim(legs))
          throw InvalidArgument("generator on " + to_string(b.sites) + " should be " + std::to_string(legs_dim(legs)) + "-dimensional");
        b.gens.push_back(LocalOp{legs, x});
      }
      blocks.push_back(std::move(b));
    }
  if (blocks.empty()) return AzumayaPresentation::trivial(net);
  return AzumayaPresentation::from_blocks(net, blocks, control);
}

inline LocalOp parse_block_op(const LocalMatrixNet& net, const json& j) {
  const SiteSet s = parse_sites(j.at("sites"));
  require_sites_in(net.space(), s);
  const Legs legs = net.legs(s);
  Mat u = parse_mat(j.at("unitary"));
  if (u.rows() != legs_dim(legs) || u.cols() != legs_dim(legs))
    throw InvalidArgument("unitary on " + to_string(s) + " should be " + std::to_string(legs_dim(legs)) + "-dimensional");
  return LocalOp{legs, u};
}

inline Automorphism parse_atom(const LocalMatrixNet& net, const json& a) {
  const std::string t = a.at("type").get<std::string>();
  if (t == "sitelocal") {
    if (a.contains("unitary")) {
      const Mat u = parse_mat(a.at("unitary"));
      return Automorphism::sitelocal_fn(net, [u](const Site&) -> std::optional<Mat> { return u; }, "sitelocal(uniform)");
    }
    std::map<Site, Mat> units;
    for (const auto& [k, v] : a.at("units").items()) {
      const Site x = parse_site_key(k);
      require_sites_in(net.space(), {x});
      units[x] = parse_mat(v);
    }
    return Automorphism::sitelocal(net, units);
  }
  if (t == "layer") {
    std::vector<LocalOp> blocks;
    for (const auto& b : a.at("blocks")) blocks.push_back(parse_block_op(net, b));
    return Automorphism::layer(net, blocks);
  }
  if (t == "shift") {
    const CoarseMap f = CoarseMap::axis_shift(net.space(), a.value("axis", 0), a.value("amount", std::int64_t{1}));
    if (a.contains("factor")) {
      const auto ab = a.at("factor").get<std::vector<int>>();
      if (ab.size() != 2) throw InvalidArgument("shift factor is [a, b]");
      return Automorphism::shift(net, f, 0, 1);
    }
    if (a.contains("slots")) {
      const auto r = a.at("slots").get<std::vector<int>>();
      if (r.size() != 2) throw InvalidArgument("shift slots are [begin, end)");
      return Automorphism::shift(net, f, r[0], r[1]);
    }
    return Automorphism::shift(net, f);
  }
  if (t == "window") return Automorphism::window_unitary(net, parse_block_op(net, a));
  throw InvalidArgument("unknown atom type '" + t + "'");
}

inline Automorphism parse_word(const LocalMatrixNet& net, const json& word) {
  Automorphism alpha = Automorphism::identity(net);
  for (const auto& a : word) alpha = compose(parse_atom(net, a), alpha);
  return alpha;
}

inline Automorphism parse_qca(const json& j) {
  const LocalMatrixNet net = parse_net(j.at("net"));
  Automorphism alpha = parse_word(net, j.at("word"));
  if (j.contains("control"))
    alpha = Automorphism::from_word(net, alpha.word(), parse_entourage(j.at("control"), net.space()), alpha.describe());
  // Factor sizes of a shift atom must match the net.
  for (const auto& a : j.at("word"))
    if (a.value("type", "") == "shift" && a.contains("factor")) {
      const auto ab = a.at("factor").get<std::vector<int>>();
      const Site probe = net.space()->kind() == SpaceKind::Grid ? Site::at(std::vector<std::int64_t>(static_cast<std::size_t>(net.space()->coord_count()), 0)) : Site{};
      if (net.space()->kind() == SpaceKind::Grid && net.slots(probe) != Slots{ab[0], ab[1]})
        throw InvalidArgument("shift factor [a, b] does not match the net's slots");
    }
  return alpha;
}

// {"blocks":[{"sites":[..], "full":true} | {"sites":[..], "generators":[mats]}], "uniform_bound": entourage, "conjugate_by": word}
inline LocalityCertificate parse_certificate(const json& j, const LocalMatrixNet& net, const Window& window) {
  LocalityCertificate cert;
  std::vector<SiteSet> sets;
  for (const auto& b : j.at("blocks")) {
    const SiteSet s = parse_sites(b.at("sites"));
    require_sites_in(net.space(), s);
    const Legs legs = net.legs(s);
    GeneratorBlock g{s, {}};
    if (b.value("full", false)) {
      for (const auto& l : legs)
        for (const auto& op : generic_leg_ops(l, 7)) g.gens.push_back(op);
    } else {
      for (const auto& m : b.at("generators")) g.gens.push_back(LocalOp{legs, parse_mat(m)});
    }
    Relation r;
    for (const auto& x : s)
      for (const auto& y : s)
        if (!(x == y)) r.insert({x, y});
    cert.blocks.push_back({s, AzumayaPresentation::from_blocks(net, {g}, Entourage::relation(net.space(), r))});
    sets.push_back(s);
  }
  cert.uniform_bound = j.contains("uniform_bound") ? parse_entourage(j.at("uniform_bound"), net.space())
                                                   : Entourage::relation(net.space(), detail::block_pairs(sets));
  if (j.contains("conjugate_by")) cert = conjugate_certificate(parse_word(net, j.at("conjugate_by")), cert, window);
  return cert;
}

// ---------------------------------------------------------------- jobs

struct Options {
  std::string qca, cert, support, net, space, map, manifest;
  std::string window;
  std::int64_t budget = 64;
  double tol_alg = 1e-9, tol_rank = 1e-8;
  std::uint64_t seed = 0;
  std::string out = "json";
  bool timing = true;
  std::filesystem::path base;
};

struct Outcome {
  int code = kPass;
  json result = json::object();
  std::string value;  // class or index column of the CSV summary
  std::string depth;
  json window;
};

inline json load_json(const std::string& arg, const std::filesystem::path& base) {
  if (arg.empty()) throw InvalidArgument("missing input");
  if (arg.front() == '{' || arg.front() == '[') return json::parse(arg);
  std::filesystem::path p(arg);
  if (p.is_relative() && !base.empty()) p = base / p;
  std::ifstream in(p);
  if (!in) throw InvalidArgument("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("invalid JSON in " + p.string() + ": " + e.what());
  }
}

inline Window window_or(const Options& o, const SpacePtr& space, const std::string& fallback) {
  const std::string w = o.window.empty() ? fallback : o.window;
  if (w.empty()) throw InvalidArgument("--window is required");
  if (w.front() == '{' || w.front() == '[') return parse_window(json::parse(w), space);
  return parse_window(json(w), space);
}

inline std::string default_window(const SpacePtr& s) {
  if (s->kind() == SpaceKind::Finite) return "all";
  if (s->kind() == SpaceKind::Grid && s->coord_count() == 1) return "0..15";
  return "";
}

inline Outcome run_validate(const Options& o) {
  const json q = load_json(o.qca, o.base);
  const Automorphism alpha = parse_qca(q);
  const Window w = window_or(o, alpha.net().space(), default_window(alpha.net().space()));
  const ControlMeasurement m = measure_control(alpha, w);
  Outcome out;
  out.window = window_json(w);
  out.result["declared_control"] = entourage_json(alpha.declared_control());
  out.result["measured_radius"] = m.radius;
  out.result["measured_sites"] = m.measured.size();
  out.result["within_declared"] = m.within_declared;
  out.result["escaped"] = sites_json(m.escaped);
  out.code = m.within_declared ? kPass : kFail;
  out.value = m.radius >= 0 ? "radius=" + std::to_string(m.radius) : "explicit";
  if (!o.cert.empty()) {
    const LocalityCertificate cert = parse_certificate(load_json(o.cert, o.base), alpha.net(), w);
    const CertificateReport rep = verify_certificate(alpha, cert, w);
    out.result["certificate"] = {{"passes", rep.passes()}, {"failures", rep.failures}, {"product_dim", rep.product_dim}, {"window_dim", rep.window_dim}};
    if (!rep.passes()) out.code = kFail;
  }
  return out;
}

inline Outcome run_index(const Options& o) {
  const Automorphism alpha = parse_qca(load_json(o.qca, o.base));
  const Window w = window_or(o, alpha.net().space(), default_window(alpha.net().space()));
  const GnvwResult r = gnvw_index(alpha, w);
  Outcome out;
  out.window = window_json(w);
  out.result["index"] = rational_json(r.index);
  out.result["blocking"] = r.blocking;
  out.result["positions"] = r.positions;
  out.result["radius"] = r.radius;
  out.value = r.index.str();
  return out;
}

inline Outcome run_decompose(const Options& o) {
  const Automorphism alpha = parse_qca(load_json(o.qca, o.base));
  const json cj = load_json(o.cert, o.base);
  const SpacePtr& space = alpha.net().space();
  Window w = o.window.empty() && cj.contains("window") ? parse_window(cj.at("window"), space) : window_or(o, space, "");
  const LocalityCertificate cert = parse_certificate(cj, alpha.net(), w);
  const SiteSet y = o.support.empty() ? w.sites : parse_sites(load_json(o.support, o.base));
  const Layering lay = layer_circuit(alpha, cert, y, w);
  Outcome out;
  out.window = window_json(w);
  json layers = json::array();
  for (const auto& layer : lay.circuit.layers) {
    json l = json::array();
    for (const auto& g : layer) l.push_back({{"sites", sites_json(g.sites)}, {"unitary", mat_json(g.u.m)}});
    layers.push_back(l);
  }
  out.result["circuit"] = {{"layers", layers}};
  out.result["depth"] = lay.circuit.depth();
  out.result["bound"] = lay.bound;
  out.result["residual"] = lay.residual;
  out.result["probes"] = lay.probes;
  out.code = lay.residual <= 1e-9 && lay.circuit.depth() <= lay.bound + 1 ? kPass : kFail;
  out.depth = std::to_string(lay.circuit.depth());
  out.value = "n=" + std::to_string(lay.bound);
  return out;
}

inline Outcome run_split(const Options& o) {
  const AzumayaPresentation p = parse_presentation(load_json(o.net, o.base));
  const Window w = window_or(o, p.ambient().space(), default_window(p.ambient().space()));
  const TensorFactorReport rep = is_tensor_factor_windowed(p, p.control(), w);
  Outcome out;
  out.window = window_json(w);
  out.result["tensor_factor"] = {{"passes", rep.passes()}, {"injective", rep.injective}, {"windows_tested", rep.windows_tested}, {"failures", rep.failures}};
  auto split = tensor_factor_split(p.evaluate(w.sites));
  if (split) {
    out.result["split"] = {{"a", split->a}, {"b", split->b}};
    out.value = std::to_string(split->a) + "x" + std::to_string(split->b);
  }
  out.code = rep.passes() && split ? kPass : kFail;
  return out;
}

inline Outcome run_flasque(const Options& o) {
  std::optional<AzumayaPresentation> p;
  SpacePtr space;
  if (!o.net.empty()) {
    const json nj = load_json(o.net, o.base);
    p = is_presentation(nj) ? parse_presentation(nj) : AzumayaPresentation::whole(parse_net(nj));
    space = p->ambient().space();
  } else {
    space = parse_space(load_json(o.space, o.base));
  }
  const CoarseMap f = parse_map(load_json(o.map, o.base), space);
  const Window w = window_or(o, space, "");
  const FlasqueReport rep = check_flasque(space, f, w, o.budget);
  Outcome out;
  out.window = window_json(w);
  out.result["flasque"] = {{"cond1", rep.cond1}, {"cond2", rep.cond2}, {"cond3", rep.cond3}, {"evidence", rep.evidence}, {"budget", rep.budget}};
  out.code = rep.passes() ? kPass : kFail;
  out.value = rep.passes() ? "flasque" : "not-flasque";
  if (p && rep.passes()) {
    const SwindleReport s = flasque_swindle_check(*p, f, w, o.budget);
    out.result["swindle"] = {{"control", entourage_json(s.control)}, {"dims_ok", s.dims_ok}, {"contained", s.contained},
                             {"defect", s.defect}, {"verified", s.verified()}, {"checked_sites", s.checked.size()}};
    if (!s.verified()) out.code = kFail;
  }
  return out;
}

inline json class_json(const DimensionClass& c) {
  json comps = json::array();
  for (std::size_t i = 0; i < c.components.size(); ++i)
    comps.push_back({{"sites", sites_json(c.components[i])}, {"value", rational_json(c.values[i])}, {"squared", static_cast<bool>(c.squared[i])}});
  return json{{"tag", c.tag == ClassTag::Local ? "local" : "azumaya"}, {"components", comps}};
}

inline std::string class_str(const DimensionClass& c) {
  std::string s;
  for (std::size_t i = 0; i < c.values.size(); ++i) s += (i ? ";" : "") + c.values[i].str() + (c.squared[i] ? "^(1/2)" : "");
  return s;
}

inline Outcome run_pushforward(const Options& o) {
  const LocalMatrixNet net = parse_net(load_json(o.net, o.base));
  const CoarseMap f = parse_map(load_json(o.map, o.base), net.space());
  const Window w = window_or(o, net.space(), default_window(net.space()));
  const Pushforward pf = pushforward(f, net, w);
  const Window image = Window::of(net.space(), map_image(f, w.sites));
  json dims = json::array();
  for (const auto& y : image.sites) dims.push_back({{"site", site_json(y)}, {"slots", pf.net.slots(y)}});
  const DimensionClass before = dimension_class(net, w);
  const DimensionClass after = dimension_class(pf.net, image);
  Outcome out;
  out.window = window_json(w);
  out.result["dims"] = dims;
  out.result["class_before"] = class_json(before);
  out.result["class_after"] = class_json(after);
  out.result["total_preserved"] = [&] {
    PositiveRational a, b;
    for (const auto& v : before.values) a = a * v;
    for (const auto& v : after.values) b = b * v;
    return a == b;
  }();
  out.value = class_str(after);
  return out;
}

inline Outcome run_class(const Options& o) {
  const json nj = load_json(o.net, o.base);
  Outcome out;
  DimensionClass c;
  if (is_presentation(nj)) {
    const AzumayaPresentation p = parse_presentation(nj);
    const Window w = window_or(o, p.ambient().space(), default_window(p.ambient().space()));
    c = k0_loc_to_az_class(p, w);
    out.window = window_json(w);
  } else {
    const LocalMatrixNet net = parse_net(nj);
    const Window w = window_or(o, net.space(), default_window(net.space()));
    c = k0_loc_to_az_class(net, w);
    out.window = window_json(w);
  }
  out.result["class"] = class_json(c);
  out.value = class_str(c);
  return out;
}

inline Outcome run_report(const Options& o) {
  Outcome v = run_validate(o);
  Outcome out;
  out.window = v.window;
  out.result["validate"] = v.result;
  out.code = v.code;
  const Automorphism alpha = parse_qca(load_json(o.qca, o.base));
  const SpacePtr& s = alpha.net().space();
  const Window w = window_or(o, s, default_window(s));
  if (s->kind() == SpaceKind::Grid && s->coord_count() == 1) {
    Outcome i = run_index(o);
    out.result["index"] = i.result;
    out.value = i.value;
  }
  out.result["class"] = class_json(dimension_class(alpha.net(), w));
  return out;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline const char* verdict_name(int code) {
  switch (code) {
    case kPass: return "pass";
    case kFail: return "fail";
    case kIndeterminate: return "indeterminate";
    default: return "error";
  }
}

inline constexpr const char* kCsvHeader = "command,verdict,value,depth,wall_ms";

struct JobResult {
  int code = kPass;
  json report;
  std::string csv_row;
};

inline JobResult run_job(const std::string& command, const Options& o) {
  tolerances() = Tolerances{};
  tolerances().alg = o.tol_alg;
  tolerances().rank = o.tol_rank;
  const auto t0 = std::chrono::steady_clock::now();
  Outcome oc;
  std::string error;
  try {
    if (command == "validate") oc = run_validate(o);
    else if (command == "index") oc = run_index(o);
    else if (command == "decompose") oc = run_decompose(o);
    else if (command == "split") oc = run_split(o);
    else if (command == "flasque") oc = run_flasque(o);
    else if (command == "pushforward") oc = run_pushforward(o);
    else if (command == "class") oc = run_class(o);
    else if (command == "report") oc = run_report(o);
    else throw InvalidArgument("unknown command '" + command + "'");
  } catch (const IndeterminateError& e) {
    oc.code = kIndeterminate;
    error = e.what();
  } catch (const StructuralError& e) {
    oc.code = kFail;
    error = e.what();
  } catch (const Error& e) {
    oc.code = kInputError;
    error = e.what();
  } catch (const json::exception& e) {
    oc.code = kInputError;
    error = std::string("schema: ") + e.what();
  } catch (const std::exception& e) {
    oc.code = kInputError;
    error = e.what();
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  JobResult jr;
  jr.code = oc.code;
  jr.report = {{"command", command},
               {"version", kVersion},
               {"verdict", verdict_name(oc.code)},
               {"result", oc.result},
               {"tolerances", {{"alg", tolerances().alg}, {"rank", tolerances().rank}, {"eq", tolerances().eq}}},
               {"seed", o.seed},
               {"budget", o.budget},
               {"window", oc.window.is_null() ? json(o.window) : oc.window}};
  if (!error.empty()) jr.report["error"] = error;
  if (o.timing) jr.report["timing"] = {{"wall_ms", ms}};
  std::ostringstream row;
  row << command << ',' << verdict_name(oc.code) << ',' << csv_escape(oc.value) << ',' << oc.depth << ',' << static_cast<long>(ms);
  jr.csv_row = row.str();
  return jr;
}

inline void add_common(CLI::App* c, Options& o) {
  c->add_option("--window", o.window, "window: a..b, all, or JSON");
  c->add_option("--budget", o.budget, "iteration budget for flasqueness checks");
  c->add_option("--tol-alg", o.tol_alg, "algebra containment tolerance");
  c->add_option("--tol-rank", o.tol_rank, "relative rank threshold");
  c->add_option("--seed", o.seed, "seed for randomized instance generation");
  c->add_option("--out", o.out, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  c->add_flag("!--no-timing", o.timing, "omit wall-clock timings from the report");
}

inline int run_batch(const Options& o, std::ostream& out, std::ostream& err);

// Parses argv (without the program name) and runs one command.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const std::filesystem::path& base = {}) {
  CLI::App app{"coarseqca: coarse-geometric QCA toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;
  o.base = base;
  struct Cmd {
    const char* name;
    const char* help;
  };
  const Cmd cmds[] = {{"validate", "measure the control of a QCA (and verify a certificate)"},
                      {"index", "GNVW index of a QCA on Z"},
                      {"decompose", "layer a certified QCA into a finite-depth circuit"},
                      {"split", "check a presentation is a tensor factor and split it"},
                      {"flasque", "flasqueness evidence and the swindle isomorphism"},
                      {"pushforward", "push a net forward along a coarse map"},
                      {"class", "dimension class of a net or presentation"},
                      {"report", "validate, index and class in one report"},
                      {"batch", "run a manifest of jobs, CSV summary"}};
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, o);
    sub->add_option("--qca", o.qca, "automorphism JSON");
    sub->add_option("--cert", o.cert, "locality certificate JSON");
    sub->add_option("--support", o.support, "support set Y JSON");
    sub->add_option("--net", o.net, "net or presentation JSON");
    sub->add_option("--space", o.space, "space JSON");
    sub->add_option("--map", o.map, "coarse map JSON");
    sub->add_option("--manifest", o.manifest, "batch manifest JSON");
  }
  std::vector<std::string> argv_s{"coarseqca"};
  argv_s.insert(argv_s.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_s) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kPass;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kPass;
  } catch (const CLI::ParseError& e) {
    err << "coarseqca: " << e.what() << "\n";
    return kInputError;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  if (command == "batch") return run_batch(o, out, err);
  const JobResult jr = run_job(command, o);
  if (o.out == "csv") out << kCsvHeader << "\n" << jr.csv_row << "\n";
  else out << jr.report.dump(2) << "\n";
  if (jr.report.contains("error")) err << "coarseqca: " << jr.report["error"].get<std::string>() << "\n";
  return jr.code;
}

// Manifest: {"jobs": [["index", "--qca", "identity.json"], ...]}; paths are relative to the manifest.
inline int run_batch(const Options& o, std::ostream& out, std::ostream& err) {
  json m;
  try {
    m = load_json(o.manifest, o.base);
  } catch (const std::exception& e) {
    err << "coarseqca: " << e.what() << "\n";
    return kInputError;
  }
  std::filesystem::path dir = std::filesystem::path(o.manifest).parent_path();
  if (dir.is_relative() && !o.base.empty()) dir = o.base / dir;
  out << kCsvHeader << "\n";
  int worst = kPass;
  for (const auto& job : m.value("jobs", json::array())) {
    std::vector<std::string> args;
    for (const auto& a : job) args.push_back(a.get<std::string>());
    if (args.empty() || args[0] == "batch") {
      out << "batch,error,,,0\n";
      worst = std::max(worst, static_cast<int>(kInputError));
      continue;
    }
    args.push_back("--out");
    args.push_back("csv");
    std::ostringstream job_out, job_err;
    const int code = run(args, job_out, job_err, dir);
    std::string body = job_out.str();
    // Drop the per-job header line.
    const auto nl = body.find('\n');
    body = nl == std::string::npos ? std::string(args[0]) + ",error,,,0\n" : body.substr(nl + 1);
    out << body;
    err << job_err.str();
    worst = std::max(worst, code);
  }
  return worst;
}

}  // namespace coarseqca::cli
