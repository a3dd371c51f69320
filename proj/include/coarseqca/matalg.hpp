// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "coarseqca/errors.hpp"

namespace coarseqca::detail {
// Set when BDCSVD hit the out-of-range deflation case below; svd_right then falls back to Jacobi.
inline thread_local bool bdcsvd_degenerate = false;
}  // namespace coarseqca::detail

#if !EIGEN_VERSION_AT_LEAST(3, 4, 1)
// Eigen 3.4.0 reads perm(l - 1) with l == 0 in BDCSVD::perturbCol0 when the first undeflated
// index exceeds k. Same computation, with that case flagged instead of read out of bounds.
template <>
inline void Eigen::BDCSVD<Eigen::MatrixXcd>::perturbCol0(const ArrayRef& col0, const ArrayRef& diag, const IndicesRef& perm,
                                                        const VectorType& singVals, const ArrayRef& shifts, const ArrayRef& mus,
                                                        ArrayRef zhat) {
  const Index n = col0.size(), m = perm.size();
  if (m == 0) {
    zhat.setZero();
    return;
  }
  const Index last = perm(m - 1);
  for (Index k = 0; k < n; ++k) {
    if (col0(k) == RealScalar(0)) {
      zhat(k) = RealScalar(0);
      continue;
    }
    const RealScalar dk = diag(k);
    RealScalar prod = (singVals(last) + dk) * (mus(last) + (shifts(last) - dk));
    for (Index l = 0; l < m; ++l) {
      const Index i = perm(l);
      if (i == k) continue;
      if (i > k && l == 0) {
        coarseqca::detail::bdcsvd_degenerate = true;
        prod = 0;
        break;
      }
      const Index j = i < k ? i : perm(l - 1);
      prod *= ((singVals(j) + dk) / (diag(i) + dk)) * ((mus(j) + (shifts(j) - dk)) / (diag(i) - dk));
    }
    const RealScalar t = std::sqrt(prod);
    zhat(k) = col0(k) > RealScalar(0) ? t : -t;
  }
}
#endif

namespace coarseqca {

using cd = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;

struct Tolerances {
  double alg = 1e-9;   // closure and containment defects
  double rank = 1e-8;  // relative singular-value threshold
  double eq = 1e-9;    // operator-norm equality
};

// Process-wide configuration, set once at startup (CLI flags) and read afterwards.
inline Tolerances& tolerances() {
  static Tolerances t;
  return t;
}

inline int max_ambient() {
  static const int cap = [] {
    if (const char* s = std::getenv("COARSEQCA_MAX_AMBIENT")) {
      int v = std::atoi(s);
      if (v > 0) return v;
    }
    return 64;
  }();
  return cap;
}

inline void check_ambient(int d) {
  if (d > max_ambient())
    throw ResourceError("ambient dimension " + std::to_string(d) + " exceeds the cap " +
                        std::to_string(max_ambient()) + " (COARSEQCA_MAX_AMBIENT)");
}

// ---------------------------------------------------------------- matrix helpers

inline Mat identity(int d) { return Mat::Identity(d, d); }

inline Vec vec(const Mat& x) { return Eigen::Map<const Vec>(x.data(), x.size()); }

inline Mat unvec(const Eigen::Ref<const Vec>& v, int d) {
  Mat m(d, d);
  std::copy(v.data(), v.data() + static_cast<Eigen::Index>(d) * d, m.data());
  return m;
}

inline Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Traces out the right factor of M_a (x) M_b.
inline Mat ptrace_right(const Mat& x, int a, int b) {
  Mat out = Mat::Zero(a, a);
  for (int i = 0; i < a; ++i)
    for (int j = 0; j < a; ++j)
      for (int k = 0; k < b; ++k) out(i, j) += x(i * b + k, j * b + k);
  return out;
}

inline Mat ptrace_left(const Mat& x, int a, int b) {
  Mat out = Mat::Zero(b, b);
  for (int k = 0; k < b; ++k)
    for (int l = 0; l < b; ++l)
      for (int i = 0; i < a; ++i) out(k, l) += x(i * b + k, i * b + l);
  return out;
}

inline double op_norm(const Mat& x) {
  if (x.size() == 0) return 0.0;
  if (x.rows() <= 16) return Eigen::JacobiSVD<Mat>(x).singularValues()(0);
  return Eigen::BDCSVD<Mat>(x).singularValues()(0);
}

inline double unitarity_defect(const Mat& u) { return op_norm(u * u.adjoint() - identity(static_cast<int>(u.rows()))); }

inline Mat matrix_unit(int d, int i, int j) {
  Mat e = Mat::Zero(d, d);
  e(i, j) = 1.0;
  return e;
}

// ---------------------------------------------------------------- randomness

// Seeds drive only test-instance generation; algorithms use fixed salts.
inline Mat random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = cd(n(rng), n(rng));
  return m;
}

inline Mat random_hermitian(int d, std::mt19937_64& rng) {
  Mat g = random_matrix(d, d, rng);
  return (g + g.adjoint()) * 0.5;
}

// Haar-distributed unitary.
inline Mat random_unitary(int d, std::mt19937_64& rng) {
  Mat g = random_matrix(d, d, rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < d; ++i) {
    cd ph = r(i, i) / std::abs(r(i, i));
    q.col(i) *= ph;
  }
  return q;
}

inline std::vector<double> generic_coefficients(int n, std::uint64_t salt) {
  std::mt19937_64 rng(0x9e3779b97f4a7c15ULL ^ (salt * 0x100000001b3ULL));
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> c(n);
  for (auto& v : c) v = u(rng) * (std::bernoulli_distribution(0.5)(rng) ? 1 : -1);
  return c;
}

// ---------------------------------------------------------------- rank decisions

struct SvdV {
  Eigen::VectorXd s;
  Mat v;
};

// Singular values and full right basis. BDCSVD in Eigen 3.4 can return a wrong V when
// exact zero singular values are deflated, so its output is checked and Jacobi is used
// whenever the check fails.
inline SvdV svd_right(const Mat& m) {
  if (m.cols() > 24) {
    // With repeated singular values BDCSVD in Eigen 3.4.0 can return a V that is not unitary or
    // does not diagonalise m* m; both are checked, else Jacobi is used.
    detail::bdcsvd_degenerate = false;
    Eigen::BDCSVD<Mat> svd(m, Eigen::ComputeFullV);
    if (!detail::bdcsvd_degenerate) {
      const Mat mv = m * svd.matrixV();
      const Mat g = mv.adjoint() * mv;
      const auto& sv = svd.singularValues();
      const double s0 = sv.size() ? sv(0) : 0.0;
      const double tol = 1e-12 * std::max(1.0, s0 * s0);
      const Eigen::Index n = m.cols();
      bool ok = (svd.matrixV().adjoint() * svd.matrixV() - Mat::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-12 * n;
      for (Eigen::Index j = 0; j < g.cols() && ok; ++j)
        for (Eigen::Index i = 0; i < g.rows() && ok; ++i) {
          const double expect = i == j && i < sv.size() ? sv(i) * sv(i) : 0.0;
          ok = std::abs(g(i, j) - expect) <= tol;
        }
      if (ok) return {sv, svd.matrixV()};
    }
  }
  Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeFullV);
  return {svd.singularValues(), svd.matrixV()};
}

// Orthonormal basis of ker(m) as columns. Singular values within the
// [tau, 10 tau) band relative to max(largest singular value, ref) are refused.
inline Mat null_space(const Mat& m, double ref = 0.0) {
  const Eigen::Index n = m.cols();
  if (n == 0) return Mat(0, 0);
  if (m.rows() == 0) return Mat::Identity(n, n);
  Mat core;
  if (m.rows() > n) {
    Eigen::HouseholderQR<Mat> qr(m);
    core = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
  } else {
    core = m;
  }
  const SvdV svd = svd_right(core);
  const auto& s = svd.s;
  const double scale = std::max(s.size() ? s(0) : 0.0, ref);
  if (scale <= 1e-300) return Mat::Identity(n, n);
  const double thr = tolerances().rank * scale;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) >= 10 * thr)
      ++rank;
    else if (s(i) >= thr)
      throw IndeterminateError("singular value " + std::to_string(s(i) / scale) +
                               " (relative) lies in the rank ambiguity band");
  }
  return svd.v.rightCols(n - rank);
}

inline Eigen::Index numerical_rank(const Mat& m) {
  if (m.size() == 0) return 0;
  return m.cols() - null_space(m).cols();
}

// Gram-Schmidt step with the same ambiguity rule. Returns the normalised new
// direction, or nullopt if x already lies in span(q).
inline std::optional<Vec> orthogonal_direction(const Mat& q, const Vec& x) {
  const double nx = x.norm();
  if (nx <= 1e-14) return std::nullopt;
  Vec r = x;
  if (q.cols() > 0) {
    r -= q * (q.adjoint() * r);
    r -= q * (q.adjoint() * r);
  }
  const double rel = r.norm() / nx;
  const double thr = tolerances().rank;
  if (rel < thr) return std::nullopt;
  if (rel < 10 * thr)
    throw IndeterminateError("linear dependence test ambiguous (relative residual " + fmt_g(rel) + ")");
  return Vec(r / r.norm());
}

inline Mat orthonormalize(const std::vector<Vec>& xs, Eigen::Index n) {
  Mat q(n, 0);
  for (const auto& x : xs)
    if (auto r = orthogonal_direction(q, x)) {
      q.conservativeResize(n, q.cols() + 1);
      q.col(q.cols() - 1) = *r;
    }
  return q;
}

// ---------------------------------------------------------------- StarAlgebra

// A unital *-subalgebra of M_d stored as an orthonormal frame of vec(x) vectors.
// Element i, scaled by sqrt(d), has unit normalised Hilbert-Schmidt norm tr(a*a)/d.
class StarAlgebra {
 public:
  StarAlgebra() = default;

  static StarAlgebra scalars(int d) {
    StarAlgebra a;
    a.d_ = d;
    a.q_ = vec(identity(d)) / std::sqrt(static_cast<double>(d));
    a.full_ = d == 1;
    return a;
  }

  static StarAlgebra full(int d) {
    StarAlgebra a;
    a.d_ = d;
    a.full_ = true;
    if (static_cast<long>(d) * d <= 1024) a.q_ = Mat::Identity(d * d, d * d);
    return a;
  }

  // Caller guarantees orthonormal columns spanning a unital *-closed subspace.
  static StarAlgebra from_frame(int d, Mat q) {
    StarAlgebra a;
    a.d_ = d;
    a.full_ = q.cols() == static_cast<Eigen::Index>(d) * d;
    a.q_ = std::move(q);
    return a;
  }

  int ambient_dim() const { return d_; }
  int dim() const { return full_ ? d_ * d_ : static_cast<int>(q_.cols()); }
  bool is_full() const { return full_; }
  bool is_scalars() const { return dim() == 1; }

  const Mat& frame() const {
    if (full_ && q_.cols() != static_cast<Eigen::Index>(d_) * d_)
      throw ResourceError("frame of a full algebra with d = " + std::to_string(d_) + " is not materialised");
    return q_;
  }

  Mat element(int i) const {
    if (full_ && q_.cols() != static_cast<Eigen::Index>(d_) * d_)
      return matrix_unit(d_, i % d_, i / d_) * std::sqrt(static_cast<double>(d_));
    return unvec(q_.col(i), d_) * std::sqrt(static_cast<double>(d_));
  }

  std::vector<Mat> basis() const {
    std::vector<Mat> out;
    for (int i = 0; i < dim(); ++i) out.push_back(element(i));
    return out;
  }

  Mat project(const Mat& x) const {
    check(x);
    if (full_) return x;
    return unvec(q_ * (q_.adjoint() * vec(x)), d_);
  }

  double residual(const Mat& x) const {
    check(x);
    if (full_) return 0.0;
    const double n = x.norm();
    if (n <= 1e-300) return 0.0;
    Vec v = vec(x);
    return (v - q_ * (q_.adjoint() * v)).norm() / n;
  }

  bool contains(const Mat& x) const { return residual(x) <= tolerances().alg; }

  bool contains(const StarAlgebra& b) const {
    if (b.d_ != d_) throw StructuralError("algebras live in different ambient dimensions");
    if (full_) return true;
    if (b.dim() > dim()) return false;
    if (b.full_) return false;
    Mat r = b.q_ - q_ * (q_.adjoint() * b.q_);
    return r.norm() <= tolerances().alg * std::sqrt(static_cast<double>(b.dim()));
  }

  bool same_as(const StarAlgebra& b) const { return dim() == b.dim() && contains(b); }

  // Deterministic generic element, a fixed pseudo-random combination of the basis.
  Mat generic_element(std::uint64_t salt) const {
    if (full_ && q_.cols() != static_cast<Eigen::Index>(d_) * d_) {
      std::mt19937_64 rng(salt + 17);
      return random_matrix(d_, d_, rng);
    }
    auto re = generic_coefficients(dim(), salt), im = generic_coefficients(dim(), salt + 7919);
    Vec c(dim());
    for (int i = 0; i < dim(); ++i) c(i) = cd(re[i], im[i]);
    return unvec(q_ * c, d_) * std::sqrt(static_cast<double>(d_));
  }

  Mat generic_hermitian(std::uint64_t salt) const {
    Mat g = generic_element(salt);
    return (g + g.adjoint()) * 0.5;
  }

  // A few generic elements; these generate the algebra for all practical purposes,
  // and every caller re-verifies against the full basis where it matters.
  std::vector<Mat> sample(int n, std::uint64_t salt) const {
    std::vector<Mat> out;
    for (int i = 0; i < n; ++i) out.push_back(generic_element(salt + 101 * i));
    return out;
  }

 private:
  void check(const Mat& x) const {
    if (x.rows() != d_ || x.cols() != d_) throw StructuralError("matrix does not match the algebra's ambient dimension");
  }

  int d_ = 1;
  bool full_ = true;
  Mat q_ = Mat::Identity(1, 1);
};

// ---------------------------------------------------------------- commutants

namespace detail {

// Hermitian, traceless, normalised spanning set of the *-closure of gens.
inline std::vector<Mat> hermitian_parts(int d, const std::vector<Mat>& gens) {
  // Traceless parts measured against their generator's norm and taken largest first, so a
  // small part of a near-scalar generator is tested against the span, not amplified by normalising.
  std::vector<std::pair<double, Vec>> parts;
  const double tau = tolerances().rank;
  for (const auto& g : gens) {
    if (g.rows() != d || g.cols() != d) throw StructuralError("generator dimensions do not match the ambient algebra");
    const double gn = g.norm();
    if (gn == 0) continue;
    Mat h1 = (g + g.adjoint()) * 0.5;
    Mat h2 = (g - g.adjoint()) * cd(0, -0.5);
    for (Mat* h : {&h1, &h2}) {
      *h -= identity(d) * (h->trace() / static_cast<double>(d));
      const double scale = h->norm() / gn;
      if (scale > 10 * tau) parts.push_back({scale, vec(*h / gn)});
    }
  }
  std::stable_sort(parts.begin(), parts.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const Eigen::Index n = static_cast<Eigen::Index>(d) * d;
  Mat q(n, 0);
  for (const auto& [scale, x] : parts) {
    Vec r = x;
    for (int pass = 0; pass < 2 && q.cols() > 0; ++pass) r -= q * (q.adjoint() * r);
    const double rn = r.norm();
    if (rn < tau) continue;
    if (rn < 10 * tau) throw IndeterminateError("generator span ambiguous (residual " + fmt_g(rn) + " of the generator norm)");
    q.conservativeResize(n, q.cols() + 1);
    q.col(q.cols() - 1) = r / rn;
  }
  std::vector<Mat> out;
  for (Eigen::Index i = 0; i < q.cols(); ++i) {
    Mat h = unvec(q.col(i), d);
    h = (h + h.adjoint()) * 0.5;  // drop rounding drift
    out.push_back(h / h.norm());
  }
  return out;
}

// Parameter basis for matrices commuting with a generic hermitian h: block-diagonal
// in h's eigenbasis. Near-degenerate eigenvalues are merged, which only enlarges the search.
struct BlockFrame {
  Mat v;                                   // eigenvectors of h
  std::vector<std::pair<int, int>> blocks;  // (start, size)
  int params = 0;

  Mat assemble(const Vec& y) const {
    const int d = static_cast<int>(v.rows());
    Mat m = Mat::Zero(d, d);
    int k = 0;
    for (auto [s, n] : blocks)
      for (int c = 0; c < n; ++c)
        for (int r = 0; r < n; ++r) m(s + r, s + c) = y(k++);
    return m;
  }
};

inline BlockFrame block_frame(const Mat& h) {
  Eigen::SelfAdjointEigenSolver<Mat> es(h);
  const auto& ev = es.eigenvalues();
  const int d = static_cast<int>(h.rows());
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  BlockFrame f;
  f.v = es.eigenvectors();
  int start = 0;
  for (int i = 1; i <= d; ++i)
    if (i == d || ev(i) - ev(i - 1) > 1e-6 * scale) {
      f.blocks.push_back({start, i - start});
      f.params += (i - start) * (i - start);
      start = i;
    }
  return f;
}

// Restricted to the range of iso (columns indexed j m + k), the algebra is iso (M_n (x) 1_m) iso*.
struct FactorBlock {
  Mat iso;
  int n = 0;
  int m = 0;
};

std::optional<std::vector<FactorBlock>> factor_blocks(const StarAlgebra& a);
std::optional<StarAlgebra> closure_by_words(int d, const std::vector<Mat>& hs, int max_dim);

inline StarAlgebra commutant_from_blocks(int d, const std::vector<FactorBlock>& bs) {
  int total = 0;
  for (const auto& b : bs) total += b.m * b.m;
  Mat q(static_cast<Eigen::Index>(d) * d, total);
  int col = 0;
  for (const auto& b : bs) {
    const double norm = std::sqrt(static_cast<double>(b.n));
    for (int l = 0; l < b.m; ++l)
      for (int k = 0; k < b.m; ++k) {
        Mat x = Mat::Zero(d, d);
        for (int j = 0; j < b.n; ++j) x += b.iso.col(j * b.m + k) * b.iso.col(j * b.m + l).adjoint();
        q.col(col++) = vec(x) / norm;
      }
  }
  return StarAlgebra::from_frame(d, std::move(q));
}

// Above this many block parameters the constraint solver gets slow and the structural route is tried first.
inline constexpr int kStructuralThreshold = 256;

inline Mat generic_combination(int d, const std::vector<Mat>& hs) {
  Mat h = Mat::Zero(d, d);
  auto c = generic_coefficients(static_cast<int>(hs.size()), 0xC0FFEE);
  for (std::size_t i = 0; i < hs.size(); ++i) h += c[i] * hs[i];
  return h;
}

}  // namespace detail

// Matrices in M_d commuting with every element of gens and their adjoints.
inline StarAlgebra commutant_of_set(int d, const std::vector<Mat>& gens) {
  check_ambient(d);
  auto hs = detail::hermitian_parts(d, gens);
  if (hs.empty()) return StarAlgebra::full(d);
  auto bf = detail::block_frame(detail::generic_combination(d, hs));
  if (bf.params > detail::kStructuralThreshold) {
    if (auto alg = detail::closure_by_words(d, hs, detail::kStructuralThreshold))
      if (auto bs = detail::factor_blocks(*alg)) return detail::commutant_from_blocks(d, *bs);
  }

  // Current solution space: columns of `frame` are parameter vectors.
  Mat frame = Mat::Identity(bf.params, bf.params);
  for (const auto& g : hs) {
    if (frame.cols() <= 1) break;
    const Mat gt = bf.v.adjoint() * g * bf.v;
    Mat m(static_cast<Eigen::Index>(d) * d, frame.cols());
    for (Eigen::Index j = 0; j < frame.cols(); ++j) {
      Mat y = bf.assemble(frame.col(j));
      Mat comm = gt * y - y * gt;
      m.col(j) = vec(comm);
    }
    frame = frame * null_space(m, 1.0);
  }
  std::vector<Vec> cols;
  for (Eigen::Index j = 0; j < frame.cols(); ++j) cols.push_back(vec(bf.v * bf.assemble(frame.col(j)) * bf.v.adjoint()));
  Mat q = orthonormalize(cols, static_cast<Eigen::Index>(d) * d);
  return StarAlgebra::from_frame(d, std::move(q));
}

inline bool commutes_with_all(const Mat& x, const std::vector<Mat>& gens) {
  const double nx = std::max(x.norm(), 1e-300);
  for (const auto& g : gens)
    if ((x * g - g * x).norm() > tolerances().alg * nx * std::max(1.0, g.norm())) return false;
  return true;
}

inline StarAlgebra commutant(const StarAlgebra& a) {
  const int d = a.ambient_dim();
  check_ambient(d);
  if (a.is_scalars()) return StarAlgebra::full(d);
  if (a.is_full()) return StarAlgebra::scalars(d);
  if (a.dim() <= detail::kStructuralThreshold &&
      detail::block_frame(a.generic_hermitian(0xB10C)).params > detail::kStructuralThreshold) {
    if (auto bs = detail::factor_blocks(a)) return detail::commutant_from_blocks(d, *bs);
  }
  if (a.dim() <= 6) return commutant_of_set(d, a.basis());
  StarAlgebra c = commutant_of_set(d, a.sample(3, 0xA11CE));
  // A generic element of the candidate must commute with the whole basis; otherwise the
  // sample failed to generate and the full basis is used.
  if (!commutes_with_all(c.generic_element(0xBEEF), a.basis())) c = commutant_of_set(d, a.basis());
  return c;
}

// Elements of the *-algebra `within` commuting with gens (and their adjoints).
inline StarAlgebra relative_commutant(const std::vector<Mat>& gens, const StarAlgebra& within) {
  const int d = within.ambient_dim();
  check_ambient(d);
  if (within.is_full()) return commutant_of_set(d, gens);
  auto hs = detail::hermitian_parts(d, gens);
  const Mat& q = within.frame();
  Mat frame = Mat::Identity(q.cols(), q.cols());
  for (const auto& g : hs) {
    if (frame.cols() <= 1) break;
    Mat m(static_cast<Eigen::Index>(d) * d, frame.cols());
    for (Eigen::Index j = 0; j < frame.cols(); ++j) {
      Mat x = unvec(q * frame.col(j), d);
      m.col(j) = vec(Mat(g * x - x * g));
    }
    frame = frame * null_space(m, 1.0);
  }
  Mat out = q * frame;
  std::vector<Vec> cols;
  for (Eigen::Index j = 0; j < out.cols(); ++j) cols.push_back(out.col(j));
  return StarAlgebra::from_frame(d, orthonormalize(cols, static_cast<Eigen::Index>(d) * d));
}

// Intersection of the underlying subspaces; for two *-algebras this is again one.
inline StarAlgebra intersect(const StarAlgebra& a, const StarAlgebra& b) {
  if (a.ambient_dim() != b.ambient_dim()) throw StructuralError("intersection across different ambient dimensions");
  if (a.is_full()) return b;
  if (b.is_full()) return a;
  const int d = a.ambient_dim();
  const Mat& qa = a.frame();
  const Mat& qb = b.frame();
  Mat perp = qb - qa * (qa.adjoint() * qb);
  const SvdV svd = svd_right(perp);
  const auto& s = svd.s;
  const double thr = tolerances().rank;
  std::vector<Vec> cols;
  for (Eigen::Index i = 0; i < qb.cols(); ++i) {
    const double si = i < s.size() ? s(i) : 0.0;
    if (si >= 10 * thr) continue;
    if (si >= thr) throw IndeterminateError("principal angle in the ambiguity band during intersection");
    cols.push_back(qb * svd.v.col(i));
  }
  return StarAlgebra::from_frame(d, orthonormalize(cols, static_cast<Eigen::Index>(d) * d));
}

// ---------------------------------------------------------------- generation

namespace detail {

// Left-multiplication closure of span{1, hs} under hs.
// Rounds of left multiplication by the generators. Each batch of candidates is absorbed through an
// SVD of its residual, which keeps the new directions well conditioned.
inline std::optional<StarAlgebra> closure_over(int d, const std::vector<Mat>& hs, int max_dim) {
  const Eigen::Index n = static_cast<Eigen::Index>(d) * d;
  std::vector<Mat> gens;
  for (const auto& h : hs) {
    const double nh = op_norm(h);
    if (nh > 1e-300) gens.push_back(h / nh);
  }
  Mat q = vec(identity(d)) / std::sqrt(static_cast<double>(d));
  auto absorb = [&](const Mat& cand) {
    Mat r = cand - q * (q.adjoint() * cand);
    r -= q * (q.adjoint() * r);
    const double scale = cand.colwise().norm().maxCoeff();
    if (scale <= 1e-300) return Eigen::Index{0};
    Eigen::BDCSVD<Mat> svd(r, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    const double thr = tolerances().rank * scale;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
      if (sv(i) >= 10 * thr)
        ++rank;
      else if (sv(i) >= thr)
        throw IndeterminateError("word closure: singular value " + std::to_string(sv(i) / scale) + " (relative) is ambiguous");
    }
    const Eigen::Index old = q.cols();
    q.conservativeResize(n, old + rank);
    q.rightCols(rank) = svd.matrixU().leftCols(rank);
    return rank;
  };
  constexpr Eigen::Index kBatch = 128;
  auto run = [&](const std::vector<Vec>& cands) {
    for (std::size_t s = 0; s < cands.size(); s += kBatch) {
      const std::size_t e = std::min(cands.size(), s + kBatch);
      Mat m(n, static_cast<Eigen::Index>(e - s));
      for (std::size_t i = s; i < e; ++i) m.col(static_cast<Eigen::Index>(i - s)) = cands[i];
      absorb(m);
      if (q.cols() > max_dim || q.cols() == n) return;
    }
  };
  std::vector<Vec> first;
  for (const auto& h : gens) first.push_back(vec(h));
  Eigen::Index done = 0;
  run(first);
  while (q.cols() > done && q.cols() <= max_dim && q.cols() < n) {
    const Eigen::Index from = std::max<Eigen::Index>(done, 1), to = q.cols();
    std::vector<Vec> cands;
    for (Eigen::Index j = from; j < to; ++j) {
      const Mat b = unvec(q.col(j), d);
      for (const auto& h : gens) cands.push_back(vec(h * b));
    }
    done = to;
    run(cands);
  }
  if (q.cols() > max_dim) return std::nullopt;
  return StarAlgebra::from_frame(d, std::move(q));
}

// Three generic combinations almost always generate the same algebra; the containment check decides.
inline std::optional<StarAlgebra> closure_by_words(int d, const std::vector<Mat>& hs, int max_dim) {
  if (hs.size() > 3) {
    std::vector<Mat> mix;
    for (int k = 0; k < 3; ++k) {
      Mat h = Mat::Zero(d, d);
      auto c = generic_coefficients(static_cast<int>(hs.size()), 0x3A11 + 977 * k);
      for (std::size_t i = 0; i < hs.size(); ++i) h += c[i] * hs[i];
      mix.push_back(h);
    }
    auto alg = closure_over(d, mix, max_dim);
    if (alg && std::all_of(hs.begin(), hs.end(), [&](const Mat& h) { return alg->contains(h); })) return alg;
    if (!alg && max_dim < d * d) return std::nullopt;
  }
  return closure_over(d, hs, max_dim);
}

inline StarAlgebra closure_by_words(int d, const std::vector<Mat>& hs) {
  return *closure_by_words(d, hs, d * d);
}

}  // namespace detail

enum class GenerationMethod { Auto, Words, Bicommutant };

// Smallest unital *-subalgebra of M_d containing gens.
inline StarAlgebra algebra_from_generators(int d, const std::vector<Mat>& gens,
                                           GenerationMethod method = GenerationMethod::Auto) {
  if (d < 1) throw InvalidArgument("ambient dimension must be positive");
  for (const auto& g : gens)
    if (g.rows() != d || g.cols() != d) throw StructuralError("generator is not " + std::to_string(d) + "x" + std::to_string(d));
  if (d == 1) return StarAlgebra::full(1);
  auto hs = detail::hermitian_parts(d, gens);
  if (hs.empty()) return StarAlgebra::scalars(d);
  if (method == GenerationMethod::Auto) method = d <= 8 ? GenerationMethod::Words : GenerationMethod::Bicommutant;
  if (method == GenerationMethod::Words) {
    check_ambient(d);
    return detail::closure_by_words(d, hs);
  }
  check_ambient(d);
  // A very degenerate generic element means a small algebra, where words are cheap.
  if (detail::block_frame(detail::generic_combination(d, hs)).params > detail::kStructuralThreshold)
    if (auto alg = detail::closure_by_words(d, hs, detail::kStructuralThreshold)) return *alg;
  StarAlgebra out = commutant(commutant_of_set(d, hs));
  for (const auto& h : hs)
    if (!out.contains(h)) throw IndeterminateError("bicommutant does not contain a generator within tolerance");
  return out;
}

// ---------------------------------------------------------------- factors

struct FullMatrixInfo {
  bool full = false;
  int k = 0;
};

inline int exact_sqrt(long n) {
  if (n < 0) return -1;
  long r = static_cast<long>(std::llround(std::sqrt(static_cast<double>(n))));
  while (r * r > n) --r;
  while ((r + 1) * (r + 1) <= n) ++r;
  return r * r == n ? static_cast<int>(r) : -1;
}

inline StarAlgebra center(const StarAlgebra& a) {
  if (a.is_full() || a.is_scalars()) return StarAlgebra::scalars(a.ambient_dim());
  auto gens = a.dim() <= 6 ? a.basis() : a.sample(3, 0xCE27);
  StarAlgebra z = relative_commutant(gens, a);
  if (a.dim() > 6 && !commutes_with_all(z.generic_element(0x5EED), a.basis())) z = relative_commutant(a.basis(), a);
  return z;
}

inline FullMatrixInfo is_full_matrix_algebra(const StarAlgebra& a) {
  int k = exact_sqrt(a.dim());
  if (k < 0) return {};
  if (a.is_full()) return {true, a.ambient_dim()};
  if (center(a).dim() != 1) return {};
  return {true, k};
}

struct TensorSplit {
  StarAlgebra factor;      // conjugate of M_a (x) 1
  StarAlgebra complement;  // its commutant, conjugate of 1 (x) M_b
  Mat witness;             // w* factor w = M_a (x) 1
  int a = 1, b = 1;
};

// Residual of x against the form y (x) 1_b (left) or 1_a (x) y (right), normalised.
inline double tensor_form_defect(const Mat& x, int a, int b, bool left) {
  Mat rebuilt = left ? kron(ptrace_right(x, a, b) / static_cast<double>(b), identity(b))
                     : kron(identity(a), ptrace_left(x, a, b) / static_cast<double>(a));
  return (x - rebuilt).norm() / std::max(x.norm(), 1e-300);
}

namespace detail {

// Rank of the multiplication map A (x) C -> M_d.
inline Eigen::Index multiplication_rank(const StarAlgebra& a, const StarAlgebra& c) {
  const int d = a.ambient_dim();
  auto ab = a.basis(), cb = c.basis();
  Mat m(static_cast<Eigen::Index>(d) * d, static_cast<Eigen::Index>(ab.size() * cb.size()));
  Eigen::Index col = 0;
  for (const auto& x : ab)
    for (const auto& y : cb) m.col(col++) = vec(Mat(x * y));
  return numerical_rank(m);
}

}  // namespace detail

// Minimal central projections of a, from the spectrum of a generic central element.
inline std::vector<Mat> central_projections(const StarAlgebra& a) {
  const int d = a.ambient_dim();
  StarAlgebra z = center(a);
  if (z.dim() == 1) return {identity(d)};
  Eigen::SelfAdjointEigenSolver<Mat> es(z.generic_hermitian(0xCE17));
  const auto& ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  std::vector<Mat> out;
  int start = 0;
  for (int i = 1; i <= d; ++i)
    if (i == d || ev(i) - ev(i - 1) > 1e-6 * scale) {
      Mat v = es.eigenvectors().middleCols(start, i - start);
      out.push_back(v * v.adjoint());
      start = i;
    }
  if (static_cast<int>(out.size()) != z.dim()) throw IndeterminateError("generic central element has a degenerate spectrum");
  return out;
}

// For commuting A and C, the multiplication map A (x) C -> M_d is a *-homomorphism whose kernel is
// a sum of blocks p (x) q of minimal central projections; it is injective iff no pq vanishes.
inline bool multiplication_injective(const StarAlgebra& a, const StarAlgebra& c) {
  if (static_cast<long>(a.ambient_dim()) * a.ambient_dim() <= 256)
    return detail::multiplication_rank(a, c) == static_cast<Eigen::Index>(a.dim()) * c.dim();
  for (const auto& p : central_projections(a))
    for (const auto& q : central_projections(c))
      if ((p * q).norm() <= 1e3 * tolerances().alg) return false;
  return true;
}

namespace detail {

inline std::optional<std::vector<FactorBlock>> factor_blocks(const StarAlgebra& a) {
  const int d = a.ambient_dim();
  std::vector<Mat> projs;
  try {
    projs = central_projections(a);
  } catch (const IndeterminateError&) {
    return std::nullopt;
  }
  const Mat x = a.generic_element(0xFAC7), h = a.generic_hermitian(0xFAC8);
  std::vector<FactorBlock> out;
  int total = 0;
  for (const auto& p : projs) {
    Eigen::SelfAdjointEigenSolver<Mat> ep((p + p.adjoint()) * 0.5);
    int r = 0;
    for (Eigen::Index i = 0; i < d; ++i) r += ep.eigenvalues()(i) > 0.5 ? 1 : 0;
    const Mat vp = ep.eigenvectors().rightCols(r);
    Mat hp = vp.adjoint() * h * vp;
    Eigen::SelfAdjointEigenSolver<Mat> es((hp + hp.adjoint()) * 0.5);
    const auto& ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    std::vector<int> starts;
    int m = -1, start = 0;
    for (int i = 1; i <= r; ++i)
      if (i == r || ev(i) - ev(i - 1) > 1e-6 * scale) {
        if (m >= 0 && i - start != m) return std::nullopt;
        m = i - start;
        starts.push_back(start);
        start = i;
      }
    const int n = static_cast<int>(starts.size());
    if (n * m != r) return std::nullopt;
    const Mat xp = vp.adjoint() * x * vp;
    const Mat f1 = es.eigenvectors().middleCols(starts[0], m);
    FactorBlock b{Mat(d, r), n, m};
    b.iso.leftCols(m) = vp * f1;
    for (int j = 1; j < n; ++j) {
      const Mat fj = es.eigenvectors().middleCols(starts[j], m);
      // Polar part of e_j x e_1, a partial isometry in the algebra when e_1 is minimal.
      const Mat y = fj * (fj.adjoint() * xp * f1);
      Eigen::SelfAdjointEigenSolver<Mat> yy(y.adjoint() * y);
      const auto& s = yy.eigenvalues();
      if (s(0) <= 1e-6 * s(m - 1) || s(m - 1) <= 1e-20) return std::nullopt;
      const Mat inv_sqrt = yy.eigenvectors() * s.cwiseSqrt().cwiseInverse().asDiagonal() * yy.eigenvectors().adjoint();
      b.iso.middleCols(static_cast<Eigen::Index>(j) * m, m) = vp * (y * inv_sqrt);
    }
    total += n * n;
    out.push_back(std::move(b));
  }
  if (total != a.dim()) return std::nullopt;
  const StarAlgebra c = commutant_from_blocks(d, out);
  const auto probes = a.dim() <= 6 ? a.basis() : a.sample(3, 0xFAC9);
  for (int i = 0; i < c.dim(); ++i)
    if (!commutes_with_all(c.element(i), probes)) return std::nullopt;
  return out;
}

}  // namespace detail

// Unitary w with w* a w = M_a (x) 1_b, built from spectral projections of a generic
// hermitian element and the partial isometries between them.
inline Mat factor_witness(const StarAlgebra& alg, int a) {
  const int d = alg.ambient_dim();
  const int b = d / a;
  if (a == 1) return identity(d);
  Mat h = alg.generic_hermitian(0x51D);
  Eigen::SelfAdjointEigenSolver<Mat> es(h);
  const auto& ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  std::vector<int> starts{0};
  for (int i = 1; i < d; ++i)
    if (ev(i) - ev(i - 1) > 1e-6 * scale) starts.push_back(i);
  if (static_cast<int>(starts.size()) != a) throw IndeterminateError("generic element of the factor has degenerate spectrum");
  for (int j = 0; j < a; ++j) {
    int end = j + 1 < a ? starts[j + 1] : d;
    if (end - starts[j] != b) throw StructuralError("spectral multiplicities do not match the factor shape");
  }
  const Mat& v = es.eigenvectors();
  std::vector<Mat> proj(a);
  for (int j = 0; j < a; ++j) {
    Mat vj = v.middleCols(starts[j], b);
    proj[j] = vj * vj.adjoint();
  }
  Mat x = alg.generic_element(0x7A5);
  Mat w(d, d);
  Mat f = v.middleCols(starts[0], b);
  for (int j = 0; j < a; ++j) {
    Mat e1j = proj[0] * x * proj[j];
    double n = op_norm(e1j);
    if (n < 1e-8) throw IndeterminateError("matrix-unit construction hit a vanishing block");
    Mat ej1 = (j == 0 ? proj[0] : Mat(e1j.adjoint() / n));
    w.middleCols(j * b, b) = ej1 * f;
  }
  return w;
}

// Decides whether a is a tensor factor of M_d and, if so, returns a splitting witness.
inline std::optional<TensorSplit> tensor_factor_split(const StarAlgebra& alg) {
  const int d = alg.ambient_dim();
  check_ambient(d);
  StarAlgebra c = commutant(alg);
  const long prod = static_cast<long>(alg.dim()) * c.dim();
  if (prod < static_cast<long>(d) * d)
    throw IndeterminateError("dim(A) dim(A') below d^2; commutant computation is inconsistent");
  if (static_cast<long>(d) * d <= 1024) {
    // Injectivity of A (x) A' -> M_d together with dim count d^2 means bijective.
    if (detail::multiplication_rank(alg, c) != prod) return std::nullopt;
    if (prod != static_cast<long>(d) * d) return std::nullopt;
  } else if (prod != static_cast<long>(d) * d) {
    return std::nullopt;
  }
  auto info = is_full_matrix_algebra(alg);
  if (!info.full) return std::nullopt;
  const int a = info.k, b = d / a;
  if (a * b != d) return std::nullopt;
  Mat w = factor_witness(alg, a);
  if (unitarity_defect(w) > 1e3 * tolerances().alg) throw IndeterminateError("splitting witness is not unitary");
  for (int i = 0; i < alg.dim(); ++i)
    if (tensor_form_defect(w.adjoint() * alg.element(i) * w, a, b, true) > 1e3 * tolerances().alg)
      throw IndeterminateError("factor does not conjugate into M_a (x) 1");
  for (int i = 0; i < c.dim(); ++i)
    if (tensor_form_defect(w.adjoint() * c.element(i) * w, a, b, false) > 1e3 * tolerances().alg)
      throw IndeterminateError("commutant does not conjugate into 1 (x) M_b");
  return TensorSplit{alg, c, w, a, b};
}

enum class Side { Left, Right };

// Slices of each b in M_{d1} (x) M_{d2} against matrix units of the other leg.
inline std::vector<Mat> support_slices(const std::vector<Mat>& bs, int d1, int d2, Side side) {
  const int d = d1 * d2;
  std::vector<Mat> slices;
  for (const auto& b : bs) {
    if (b.rows() != d || b.cols() != d) throw StructuralError("operator does not act on the declared bipartition");
    if (side == Side::Left) {
      for (int k = 0; k < d2; ++k)
        for (int l = 0; l < d2; ++l) {
          Mat s(d1, d1);
          for (int i = 0; i < d1; ++i)
            for (int j = 0; j < d1; ++j) s(i, j) = b(i * d2 + k, j * d2 + l);
          if (s.norm() > 10 * tolerances().rank * b.norm()) slices.push_back(s);
        }
    } else {
      for (int i = 0; i < d1; ++i)
        for (int j = 0; j < d1; ++j) {
          Mat s = b.block(i * d2, j * d2, d2, d2);
          if (s.norm() > 10 * tolerances().rank * b.norm()) slices.push_back(s);
        }
    }
  }
  return slices;
}

// Smallest S with span(bs) inside S (x) M_{d2} (left) or M_{d1} (x) S (right).
inline StarAlgebra support_algebra(const std::vector<Mat>& bs, int d1, int d2, Side side) {
  const int dd = side == Side::Left ? d1 : d2;
  auto slices = support_slices(bs, d1, d2, side);
  // Pre-orthonormalise to keep the generator list short.
  std::vector<Vec> vs;
  for (const auto& s : slices) vs.push_back(vec(s));
  Mat q = orthonormalize(vs, static_cast<Eigen::Index>(dd) * dd);
  std::vector<Mat> gens;
  for (Eigen::Index i = 0; i < q.cols(); ++i) gens.push_back(unvec(q.col(i), dd));
  return algebra_from_generators(dd, gens);
}

// ---------------------------------------------------------------- automorphisms

// u with alpha(x) = u x u*, from the images of the matrix units E_ij (index i*d + j).
inline Mat inner_unitary(int d, const std::vector<Mat>& images) {
  if (static_cast<int>(images.size()) != d * d) throw InvalidArgument("need the images of all d^2 matrix units");
  auto img = [&](int i, int j) -> const Mat& { return images[static_cast<std::size_t>(i) * d + j]; };
  const double tol = 1e3 * tolerances().alg;
  for (const auto& m : images)
    if (m.rows() != d || m.cols() != d) throw InvalidArgument("image has the wrong shape");
  auto fail = [](const std::string& why) { throw InvalidArgument("map is not a *-automorphism: " + why); };
  Mat sum = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i) sum += img(i, i);
  if ((sum - identity(d)).norm() > tol) fail("not unital");
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      if ((img(i, j).adjoint() - img(j, i)).norm() > tol) fail("does not preserve adjoints");
      if ((img(i, 0) * img(0, j) - img(i, j)).norm() > tol) fail("not multiplicative on E_i1 E_1j");
      Mat p = img(0, i) * img(j, 0);
      if ((p - (i == j ? img(0, 0) : Mat::Zero(d, d))).norm() > tol) fail("not multiplicative on E_1i E_j1");
    }
  const Mat& e11 = img(0, 0);
  Eigen::Index best = 0;
  e11.colwise().norm().maxCoeff(&best);
  Vec psi = e11.col(best);
  if (psi.norm() < 1e-6) fail("image of E_11 vanishes");
  psi /= psi.norm();
  Mat u(d, d);
  for (int j = 0; j < d; ++j) u.col(j) = img(j, 0) * psi;
  // Phase: first (column-major) entry within 1e-9 of the largest magnitude becomes real positive.
  const double mx = u.cwiseAbs().maxCoeff();
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    cd z = u.data()[k];
    if (std::abs(z) >= mx - 1e-9) {
      u *= std::conj(z) / std::abs(z);
      break;
    }
  }
  if (unitarity_defect(u) > tol) fail("reconstructed implementer is not unitary");
  return u;
}

inline Mat inner_unitary(int d, const std::function<Mat(const Mat&)>& alpha) {
  std::vector<Mat> images;
  images.reserve(static_cast<std::size_t>(d) * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) images.push_back(alpha(matrix_unit(d, i, j)));
  return inner_unitary(d, images);
}

// Same phase convention, for comparing implementers.
inline Mat fix_phase(const Mat& u) {
  const double mx = u.cwiseAbs().maxCoeff();
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    cd z = u.data()[k];
    if (std::abs(z) >= mx - 1e-9) return u * (std::conj(z) / std::abs(z));
  }
  return u;
}

struct CommutatorDecomposition {
  Mat a, b;
  cd lambda;
};

// u = lambda a b a^-1 b^-1 with a cyclic shift and a diagonal in the eigenbasis of u.
inline CommutatorDecomposition commutator_decompose(const Mat& u) {
  const int d = static_cast<int>(u.rows());
  if (u.cols() != d) throw InvalidArgument("commutator_decompose needs a square matrix");
  if (unitarity_defect(u) > 1e3 * tolerances().alg) throw InvalidArgument("input is not unitary");
  if (d == 1) return {identity(1), identity(1), u(0, 0)};
  const cd det = u.determinant();
  const cd lambda = std::pow(det, 1.0 / d);
  if ((u / lambda - identity(d)).norm() <= tolerances().alg) return {identity(d), identity(d), lambda};
  Eigen::ComplexSchur<Mat> schur(u / lambda);
  const Mat& v = schur.matrixU();
  Vec dg = schur.matrixT().diagonal();
  Vec delta(d);
  delta(0) = 1.0;
  for (int k = 1; k < d; ++k) delta(k) = delta(k - 1) / dg(k);
  Mat a0 = Mat::Zero(d, d);
  for (int k = 0; k < d; ++k) a0((k + 1) % d, k) = 1.0;
  Mat b0 = delta.asDiagonal();
  return {v * a0 * v.adjoint(), v * b0 * v.adjoint(), lambda};
}

}  // namespace coarseqca
