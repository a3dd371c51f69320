// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "coarseqca/coarse.hpp"
#include "coarseqca/matalg.hpp"

namespace coarseqca {

// One tensor factor of the Hilbert space: slot `slot` of site `site`.
struct Leg {
  Site site;
  int slot = 0;
  int dim = 1;

  bool operator==(const Leg& o) const { return site == o.site && slot == o.slot; }
  bool operator<(const Leg& o) const { return site < o.site || (site == o.site && slot < o.slot); }
  std::string str() const { return site.str() + "#" + std::to_string(slot); }
};

// Ordered legs; the global order is (site, slot) and matrices on legs are row-major
// in that order, first leg most significant.
using Legs = std::vector<Leg>;

inline void normalize(Legs& l) {
  std::sort(l.begin(), l.end());
  l.erase(std::unique(l.begin(), l.end()), l.end());
}

inline long legs_dim(const Legs& l) {
  long d = 1;
  for (const auto& x : l) d *= x.dim;
  return d;
}

inline Legs legs_union(const Legs& a, const Legs& b) {
  Legs out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}
inline Legs legs_intersection(const Legs& a, const Legs& b) {
  Legs out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}
inline Legs legs_difference(const Legs& a, const Legs& b) {
  Legs out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}
inline bool legs_subset(const Legs& a, const Legs& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); }

inline SiteSet sites_of(const Legs& l) {
  SiteSet s;
  for (const auto& x : l) s.push_back(x.site);
  normalize(s);
  return s;
}

inline std::string to_string(const Legs& l) {
  std::string s = "[";
  for (std::size_t i = 0; i < l.size(); ++i) s += (i ? " " : "") + l[i].str();
  return s + "]";
}

namespace detail {

// Offsets into the row-major index of `all` for every multi-index of `part` (in part's own
// row-major order), plus the offsets for every multi-index of the complement.
struct Split {
  std::vector<long> part, rest;
};

inline Split split_offsets(const Legs& all, const Legs& part) {
  std::vector<long> stride(all.size());
  long s = 1;
  for (std::size_t i = all.size(); i-- > 0;) {
    stride[i] = s;
    s *= all[i].dim;
  }
  std::vector<bool> in(all.size(), false);
  std::vector<std::size_t> pos;
  for (const auto& p : part) {
    auto it = std::lower_bound(all.begin(), all.end(), p);
    if (it == all.end() || !(*it == p)) throw StructuralError("leg " + p.str() + " is not in the layout");
    pos.push_back(static_cast<std::size_t>(it - all.begin()));
    in[pos.back()] = true;
  }
  auto enumerate = [&](const std::vector<std::size_t>& idx) {
    std::vector<long> out{0};
    for (std::size_t k : idx) {
      std::vector<long> next;
      next.reserve(out.size() * all[k].dim);
      for (long o : out)
        for (int v = 0; v < all[k].dim; ++v) next.push_back(o + v * stride[k]);
      out.swap(next);
    }
    return out;
  };
  std::vector<std::size_t> restpos;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (!in[i]) restpos.push_back(i);
  return {enumerate(pos), enumerate(restpos)};
}

}  // namespace detail

// An operator acting on a finite set of legs (identity elsewhere).
struct LocalOp {
  Legs legs;
  Mat m = Mat::Identity(1, 1);

  long dim() const { return legs_dim(legs); }
  SiteSet sites() const { return sites_of(legs); }
  static LocalOp scalar(cd z) {
    LocalOp o;
    o.m(0, 0) = z;
    return o;
  }
};

inline LocalOp make_op(Legs legs, Mat m) {
  normalize(legs);
  Legs kept;
  for (const auto& l : legs)
    if (l.dim > 1) kept.push_back(l);
  if (m.rows() != legs_dim(kept) || m.cols() != m.rows())
    throw StructuralError("operator size " + std::to_string(m.rows()) + " does not match legs " + to_string(kept));
  return LocalOp{std::move(kept), std::move(m)};
}

// x (x) 1 on a larger leg set.
inline Mat embed(const LocalOp& op, const Legs& all) {
  if (op.legs == all) return op.m;
  auto sp = detail::split_offsets(all, op.legs);
  const long d = legs_dim(all);
  Mat out = Mat::Zero(d, d);
  const long k = static_cast<long>(sp.part.size());
  for (long c : sp.rest)
    for (long j = 0; j < k; ++j)
      for (long i = 0; i < k; ++i) {
        const cd v = op.m(i, j);
        if (v != cd(0)) out(c + sp.part[i], c + sp.part[j]) = v;
      }
  return out;
}

inline LocalOp extend(const LocalOp& op, const Legs& all) { return LocalOp{all, embed(op, all)}; }

// Reorders the legs of an operator; `order` is a permutation of op.legs given as the new sequence.
inline Mat reorder(const Mat& m, const Legs& from, const Legs& to_sequence) {
  const long d = legs_dim(from);
  // Strides of `from` indexed by leg.
  std::map<Leg, long> stride;
  long s = 1;
  for (std::size_t i = from.size(); i-- > 0;) {
    stride[from[i]] = s;
    s *= from[i].dim;
  }
  std::vector<long> idx{0};
  for (const auto& l : to_sequence) {
    std::vector<long> next;
    next.reserve(idx.size() * l.dim);
    for (long o : idx)
      for (int v = 0; v < l.dim; ++v) next.push_back(o + v * stride.at(l));
    idx.swap(next);
  }
  Mat out(d, d);
  for (long j = 0; j < d; ++j)
    for (long i = 0; i < d; ++i) out(i, j) = m(idx[i], idx[j]);
  return out;
}

// Renames legs; the result is re-sorted and the matrix permuted to match.
inline LocalOp relabel(const LocalOp& op, const std::function<Leg(const Leg&)>& f) {
  Legs renamed;
  for (const auto& l : op.legs) {
    Leg n = f(l);
    if (n.dim != l.dim) throw StructuralError("leg relabelling changes dimension at " + l.str());
    renamed.push_back(n);
  }
  Legs sorted = renamed;
  normalize(sorted);
  if (sorted.size() != renamed.size()) throw StructuralError("leg relabelling is not injective");
  // Position in the new order of each old leg.
  std::vector<Leg> seq;
  for (const auto& n : sorted) {
    auto it = std::find(renamed.begin(), renamed.end(), n);
    seq.push_back(op.legs[static_cast<std::size_t>(it - renamed.begin())]);
  }
  return LocalOp{sorted, reorder(op.m, op.legs, seq)};
}

// u x u* with u on a subset of x's legs (x is first extended if needed).
inline LocalOp conjugate(const LocalOp& x, const LocalOp& u) {
  const Legs all = legs_union(x.legs, u.legs);
  Mat m = embed(x, all);
  auto sp = detail::split_offsets(all, u.legs);
  const long k = static_cast<long>(sp.part.size());
  const long d = legs_dim(all);
  Mat buf(k, d);
  for (long c : sp.rest) {
    for (long i = 0; i < k; ++i) buf.row(i) = m.row(c + sp.part[i]);
    buf = u.m * buf;
    for (long i = 0; i < k; ++i) m.row(c + sp.part[i]) = buf.row(i);
  }
  Mat cbuf(d, k);
  const Mat ua = u.m.adjoint();
  for (long c : sp.rest) {
    for (long i = 0; i < k; ++i) cbuf.col(i) = m.col(c + sp.part[i]);
    cbuf = cbuf * ua;
    for (long i = 0; i < k; ++i) m.col(c + sp.part[i]) = cbuf.col(i);
  }
  return LocalOp{all, std::move(m)};
}

inline LocalOp multiply(const LocalOp& a, const LocalOp& b) {
  const Legs all = legs_union(a.legs, b.legs);
  return LocalOp{all, embed(a, all) * embed(b, all)};
}

inline LocalOp add(const LocalOp& a, const LocalOp& b, cd cb = 1.0) {
  const Legs all = legs_union(a.legs, b.legs);
  return LocalOp{all, embed(a, all) + cb * embed(b, all)};
}

inline LocalOp adjoint(const LocalOp& a) { return LocalOp{a.legs, a.m.adjoint()}; }

inline double distance(const LocalOp& a, const LocalOp& b) {
  const Legs all = legs_union(a.legs, b.legs);
  return op_norm(embed(a, all) - embed(b, all));
}

namespace detail {

struct SchmidtTerm {
  double weight;
  Mat factor;  // on the shared legs, unit Hilbert-Schmidt norm
};

// Operator-Schmidt form x = sum_k w_k a_k (x) p_k across shared | rest, the p_k returned.
inline std::vector<SchmidtTerm> operator_schmidt(const LocalOp& x, const Legs& shared) {
  auto sp = split_offsets(x.legs, shared);
  const long k = static_cast<long>(sp.part.size()), r = static_cast<long>(sp.rest.size());
  Mat re(r * r, k * k);
  for (long c2 = 0; c2 < r; ++c2)
    for (long c1 = 0; c1 < r; ++c1)
      for (long j = 0; j < k; ++j)
        for (long i = 0; i < k; ++i) re(c1 + r * c2, i + k * j) = x.m(sp.rest[c1] + sp.part[i], sp.rest[c2] + sp.part[j]);
  Eigen::JacobiSVD<Mat> svd(re, Eigen::ComputeThinV);
  std::vector<SchmidtTerm> out;
  for (Eigen::Index t = 0; t < svd.singularValues().size(); ++t) {
    const double w = svd.singularValues()(t);
    if (w == 0.0) break;
    Mat p(k, k);
    for (long j = 0; j < k; ++j)
      for (long i = 0; i < k; ++i) p(i, j) = std::conj(svd.matrixV()(i + k * j, t));
    out.push_back({w, std::move(p)});
  }
  return out;
}

inline double commutator_norm(const std::vector<SchmidtTerm>& x, const std::vector<SchmidtTerm>& y) {
  double sq = 0;
  for (const auto& p : x)
    for (const auto& q : y) {
      const double c = (p.factor * q.factor - q.factor * p.factor).norm();
      sq += p.weight * p.weight * q.weight * q.weight * c * c;
    }
  return std::sqrt(sq);
}

}  // namespace detail

// Frobenius norm of [a, b] on the union of their legs; only the shared legs are ever multiplied.
inline double commutator_norm(const LocalOp& a, const LocalOp& b) {
  const Legs shared = legs_intersection(a.legs, b.legs);
  if (shared.empty()) return 0.0;
  return detail::commutator_norm(detail::operator_schmidt(a, shared), detail::operator_schmidt(b, shared));
}

// Normalised partial trace over `drop`: returns tr_drop(x) / dim(drop) on the remaining legs.
inline LocalOp reduce(const LocalOp& x, const Legs& drop) {
  const Legs keep = legs_difference(x.legs, drop);
  auto sp = detail::split_offsets(x.legs, keep);
  const long k = static_cast<long>(sp.part.size());
  Mat out = Mat::Zero(k, k);
  for (long c : sp.rest)
    for (long j = 0; j < k; ++j)
      for (long i = 0; i < k; ++i) out(i, j) += x.m(c + sp.part[i], c + sp.part[j]);
  out /= static_cast<double>(sp.rest.size());
  return LocalOp{keep, out};
}

// Drops legs on which x acts as the identity (relative tolerance tol).
inline LocalOp trim(const LocalOp& x, double tol = -1) {
  if (tol < 0) tol = tolerances().alg;
  LocalOp cur = x;
  const double scale = std::max(x.m.norm() / std::sqrt(static_cast<double>(std::max<long>(1, x.dim()))), 1e-300);
  for (std::size_t i = 0; i < cur.legs.size();) {
    Legs one{cur.legs[i]};
    LocalOp r = reduce(cur, one);
    Mat back = embed(r, cur.legs);
    const double defect = (cur.m - back).norm() / std::sqrt(static_cast<double>(cur.dim()));
    if (defect <= tol * scale)
      cur = r;
    else
      ++i;
  }
  return cur;
}

// Slices of x against matrix units of the legs outside `keep`: x = sum_rs slice_rs (x) e_rs.
inline std::vector<Mat> slices(const LocalOp& x, const Legs& keep) {
  auto sp = detail::split_offsets(x.legs, legs_intersection(x.legs, keep));
  const long k = static_cast<long>(sp.part.size());
  std::vector<Mat> out;
  // Slices below the rank band are rounding and would become junk generators once normalised.
  const double floor = 10 * tolerances().rank * x.m.norm();
  for (long r : sp.rest)
    for (long s : sp.rest) {
      Mat m(k, k);
      for (long j = 0; j < k; ++j)
        for (long i = 0; i < k; ++i) m(i, j) = x.m(r + sp.part[i], s + sp.part[j]);
      if (m.norm() > floor) out.push_back(m);
    }
  return out;
}

// Matrix units on the given legs, in row-major order of (i, j).
inline std::vector<LocalOp> matrix_units(const Legs& legs) {
  const long d = legs_dim(legs);
  std::vector<LocalOp> out;
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) out.push_back(LocalOp{legs, matrix_unit(static_cast<int>(d), static_cast<int>(i), static_cast<int>(j))});
  return out;
}

inline std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

// Deterministic generic operators on one leg; two of them generate M_dim.
inline std::vector<LocalOp> generic_leg_ops(const Leg& leg, std::uint64_t salt) {
  std::vector<LocalOp> out;
  for (int k = 0; k < 2; ++k) {
    std::mt19937_64 rng(0xD1CE + salt * 31 + k + stable_hash(leg.str()));
    out.push_back(LocalOp{{leg}, random_matrix(leg.dim, leg.dim, rng)});
  }
  return out;
}

}  // namespace coarseqca
