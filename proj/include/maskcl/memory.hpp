#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "maskcl/error.hpp"
#include "maskcl/types.hpp"

namespace maskcl {

// N x D store of unit-norm instance features. Row i belongs to training sample i.
template <typename Scalar>
struct FeatureBank {
  RowMatrix<Scalar> entries;
  Scalar alpha = Scalar(0.2);

  Eigen::Index size() const { return entries.rows(); }
  Eigen::Index dim() const { return entries.cols(); }
};

template <typename Scalar>
struct BankTriplet {
  FeatureBank<Scalar> rgb;
  FeatureBank<Scalar> mask;
  FeatureBank<Scalar> fused;
};

template <typename Scalar>
RowMatrix<Scalar> normalize_rows(const RowMatrix<Scalar>& x) {
  RowMatrix<Scalar> out = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar n = x.row(i).norm();
    if (!(n > Scalar(0)) || !std::isfinite(static_cast<double>(n)))
      throw NumericError("row " + std::to_string(i) + " has zero or non-finite norm");
    out.row(i) /= n;
  }
  return out;
}

// The RGB and fused banks start from the RGB features, the mask bank from the mask features.
template <typename Scalar>
BankTriplet<Scalar> init_banks(const RowMatrix<Scalar>& x_rgb, const RowMatrix<Scalar>& x_mask, Scalar alpha) {
  if (x_rgb.rows() != x_mask.rows() || x_rgb.cols() != x_mask.cols())
    throw ShapeError("init_banks: rgb and mask features differ in shape");
  if (alpha < Scalar(0) || alpha > Scalar(1)) throw ConfigError("alpha", "must lie in [0, 1]");
  auto checked = [](const RowMatrix<Scalar>& x, const char* which) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Scalar n = x.row(i).norm();
      if (!(n > Scalar(0)) || !std::isfinite(static_cast<double>(n)))
        throw NumericError(std::string("init_banks: ") + which + " feature of sample_id " + std::to_string(i) +
                           " has zero or non-finite norm");
    }
    return normalize_rows(x);
  };
  BankTriplet<Scalar> banks;
  banks.rgb = {checked(x_rgb, "rgb"), alpha};
  banks.mask = {checked(x_mask, "mask"), alpha};
  banks.fused = banks.rgb;
  return banks;
}

// row <- normalize(alpha * row + (1 - alpha) * normalize(feat)); touches only row `sample_id`.
template <typename Scalar, typename Derived>
void ema_update(FeatureBank<Scalar>& bank, Eigen::Index sample_id, const Eigen::MatrixBase<Derived>& feat) {
  if (sample_id < 0 || sample_id >= bank.size())
    throw ShapeError("ema_update: sample_id " + std::to_string(sample_id) + " out of range [0, " +
                     std::to_string(bank.size()) + ")");
  if (feat.size() != bank.dim()) throw ShapeError("ema_update: feature dimension mismatch");
  const Scalar fn = feat.norm();
  if (!(fn > Scalar(0)) || !std::isfinite(static_cast<double>(fn)))
    throw NumericError("ema_update: zero or non-finite feature for sample_id " + std::to_string(sample_id));
  Vector<Scalar> blended =
      bank.alpha * bank.entries.row(sample_id).transpose() + (Scalar(1) - bank.alpha) * (feat / fn);
  const Scalar bn = blended.norm();
  if (!(bn > Scalar(0)))
    throw NumericError("ema_update: blended row vanished for sample_id " + std::to_string(sample_id));
  bank.entries.row(sample_id) = (blended / bn).transpose();
}

// Mean of the cluster's rows, not re-normalized.
template <typename Scalar>
Vector<Scalar> prototype(const FeatureBank<Scalar>& bank, std::span<const int> cluster) {
  if (cluster.empty()) throw InvariantError("prototype: empty cluster");
  Vector<Scalar> sum = Vector<Scalar>::Zero(bank.dim());
  for (int id : cluster) {
    if (id < 0 || id >= bank.size()) throw ShapeError("prototype: sample_id " + std::to_string(id) + " out of range");
    sum += bank.entries.row(id).transpose();
  }
  return sum / static_cast<Scalar>(cluster.size());
}

// One prototype per cluster, m x D.
template <typename Scalar>
RowMatrix<Scalar> prototypes(const FeatureBank<Scalar>& bank, const std::vector<std::vector<int>>& clusters) {
  RowMatrix<Scalar> out(static_cast<Eigen::Index>(clusters.size()), bank.dim());
  for (std::size_t l = 0; l < clusters.size(); ++l) out.row(l) = prototype(bank, clusters[l]).transpose();
  return out;
}

}  // namespace maskcl
