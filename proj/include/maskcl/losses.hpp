#pragma once

#include <cmath>
#include <string>

#include "maskcl/error.hpp"
#include "maskcl/structure.hpp"
#include "maskcl/types.hpp"

namespace maskcl {

// Every logarithm in the objective sees max(p, kLogFloor).
inline constexpr double kLogFloor = 1e-12;

template <typename Scalar>
struct PosteriorVector {
  Vector<Scalar> q;
  Scalar tau = Scalar(0.05);
};

template <typename Scalar>
struct LossBreakdown {
  Scalar l_p = Scalar(0);
  Scalar l_c = Scalar(0);
  Scalar l_n = Scalar(0);
  Scalar total = Scalar(0);
};

template <typename Scalar>
Scalar floored_log(Scalar p) {
  return std::log(std::max(p, static_cast<Scalar>(kLogFloor)));
}

// d floored_log / dp; zero below the floor.
template <typename Scalar>
Scalar floored_log_slope(Scalar p) {
  return p >= static_cast<Scalar>(kLogFloor) ? Scalar(1) / p : Scalar(0);
}

template <typename Derived>
auto softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return Vector<Scalar>(e / e.sum());
}

// softmax(prototypes * feat / tau) over the m clusters.
template <typename Scalar, typename Derived>
PosteriorVector<Scalar> posterior(const RowMatrix<Scalar>& prototypes, const Eigen::MatrixBase<Derived>& feat,
                                  Scalar tau) {
  if (!(tau > Scalar(0))) throw ConfigError("tau", "must be > 0");
  if (prototypes.rows() == 0) throw ShapeError("posterior: no prototypes");
  if (prototypes.cols() != feat.size()) throw ShapeError("posterior: prototype/feature dimension mismatch");
  return {softmax((prototypes * feat) / tau), tau};
}

// Focal-modulated log-likelihood of the own-cluster posterior mass: -(1 - a)^2 ln a.
template <typename Scalar>
Scalar focal_term(Scalar a) {
  return -(Scalar(1) - a) * (Scalar(1) - a) * floored_log(a);
}

template <typename Scalar>
Scalar focal_term_slope(Scalar a) {
  const Scalar r = Scalar(1) - a;
  return Scalar(2) * r * floored_log(a) - r * r * floored_log_slope(a);
}

template <typename Scalar>
Scalar loss_prototypical(Scalar q, Scalar q_mask, Scalar q_fused) {
  auto check = [](Scalar v, const char* name) {
    if (!(v > Scalar(0)) || v > Scalar(1) + Scalar(1e-9))
      throw NumericError(std::string("loss_prototypical: ") + name + " must lie in (0, 1]");
  };
  check(q, "q");
  check(q_mask, "q_mask");
  check(q_fused, "q_fused");
  return focal_term(q) + focal_term(q_mask) + focal_term(q_fused);
}

template <typename Scalar, typename DerivedA, typename DerivedB>
Scalar cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  const Scalar na = a.norm(), nb = b.norm();
  if (!(na > Scalar(0)) || !(nb > Scalar(0))) throw NumericError("cosine of a zero-norm vector");
  return a.dot(b) / (na * nb);
}

// d cos(a, b) / d a.
template <typename Scalar>
Vector<Scalar> cosine_slope(const Vector<Scalar>& a, const Vector<Scalar>& b) {
  const Scalar na = a.norm(), nb = b.norm();
  const Vector<Scalar> ua = a / na, ub = b / nb;
  return (ub - ua * ua.dot(ub)) / na;
}

// -cos(z, x_mask) - cos(z, p_mask). Only z receives gradient in training.
template <typename Scalar, typename DA, typename DB, typename DC>
Scalar loss_crossview(const Eigen::MatrixBase<DA>& z, const Eigen::MatrixBase<DB>& x_mask,
                      const Eigen::MatrixBase<DC>& p_mask) {
  if (z.size() != x_mask.size() || z.size() != p_mask.size()) throw ShapeError("loss_crossview: dimension mismatch");
  return -cosine<Scalar>(z, x_mask) - cosine<Scalar>(z, p_mask);
}

// -sum_j w_j (ln q[j] + ln q_mask[j]) over the drawn neighbours.
template <typename Scalar>
Scalar loss_neighbor(const NeighborDraw<Scalar>& draw, const PosteriorVector<Scalar>& q,
                     const PosteriorVector<Scalar>& q_mask) {
  Scalar sum = Scalar(0);
  for (const Neighbor<Scalar>& nb : draw.drawn) {
    if (nb.cluster < 0 || nb.cluster >= q.q.size() || nb.cluster >= q_mask.q.size())
      throw ShapeError("loss_neighbor: neighbour cluster out of range");
    sum -= nb.similarity * (floored_log(q.q[nb.cluster]) + floored_log(q_mask.q[nb.cluster]));
  }
  return sum;
}

template <typename Scalar>
Scalar loss_total(const LossBreakdown<Scalar>& parts) {
  auto check = [](Scalar v, const char* name) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError(std::string("loss_total: ") + name + " is not finite");
  };
  check(parts.l_p, "l_p");
  check(parts.l_c, "l_c");
  check(parts.l_n, "l_n");
  return parts.l_p + parts.l_c + parts.l_n;
}

template <typename Scalar>
LossBreakdown<Scalar> make_breakdown(Scalar l_p, Scalar l_c, Scalar l_n) {
  LossBreakdown<Scalar> parts{l_p, l_c, l_n, Scalar(0)};
  parts.total = loss_total(parts);
  return parts;
}

}  // namespace maskcl
