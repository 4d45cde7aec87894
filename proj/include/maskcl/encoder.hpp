#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "maskcl/error.hpp"
#include "maskcl/types.hpp"

namespace maskcl {

enum class Activation { none, elu };

// Convolutional backbone shared by both branches. Each stage is a same-padded
// kxk convolution followed by ELU; every stage but the last is followed by 2x2
// average pooling, the last by average pooling over `stripes` horizontal
// bands (1 = global) and a dense map to D.
struct BranchArchitecture {
  int in_channels = 3;
  int height = 32;
  int width = 16;
  std::vector<int> channels{16, 32, 32};
  int kernel = 3;
  int stripes = 4;
  int feature_dim = 64;

  bool operator==(const BranchArchitecture&) const = default;
};

struct ModelConfig {
  BranchArchitecture backbone;
  // Output activation of the predictor and fusion maps.
  Activation head_activation = Activation::none;

  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const BranchArchitecture& arch) {
  if (arch.in_channels < 1) throw ConfigError("in_channels", "must be >= 1");
  if (arch.channels.empty()) throw ConfigError("channels", "need at least one stage");
  for (int c : arch.channels)
    if (c < 1) throw ConfigError("channels", "every stage needs >= 1 channel");
  if (arch.kernel < 1 || arch.kernel % 2 == 0) throw ConfigError("kernel", "must be odd and >= 1");
  if (arch.feature_dim < 1) throw ConfigError("feature_dim", "must be >= 1");
  const int shrink = 1 << (arch.channels.size() - 1);
  if (arch.height < shrink || arch.width < shrink)
    throw ConfigError("image_size", "too small for " + std::to_string(arch.channels.size()) + " stages");
  if (arch.stripes < 1 || arch.stripes > arch.height / shrink)
    throw ConfigError("stripes", "must lie in [1, final feature map height " + std::to_string(arch.height / shrink) + "]");
}

namespace detail {

template <typename Scalar>
inline Scalar elu(Scalar v) {
  return v > Scalar(0) ? v : std::expm1(v);
}

// d elu / d v expressed through the output: 1 for v > 0, exp(v) = out + 1 otherwise.
template <typename Scalar>
inline Scalar elu_slope(Scalar out) {
  return out > Scalar(0) ? Scalar(1) : out + Scalar(1);
}

template <typename Scalar>
void im2col(const Matrix<Scalar>& in, int height, int width, int kernel, Matrix<Scalar>& col) {
  const int channels = static_cast<int>(in.cols());
  const int pad = kernel / 2;
  col.setZero(static_cast<Eigen::Index>(height) * width, channels * kernel * kernel);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const int j = (c * kernel + ky) * kernel + kx;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          for (int x = 0; x < width; ++x) {
            const int sx = x + kx - pad;
            if (sx < 0 || sx >= width) continue;
            col(y * width + x, j) = in(sy * width + sx, c);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Matrix<Scalar>& col, int height, int width, int kernel, int channels, Matrix<Scalar>& out) {
  const int pad = kernel / 2;
  out.setZero(static_cast<Eigen::Index>(height) * width, channels);
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const int j = (c * kernel + ky) * kernel + kx;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          for (int x = 0; x < width; ++x) {
            const int sx = x + kx - pad;
            if (sx < 0 || sx >= width) continue;
            out(sy * width + sx, c) += col(y * width + x, j);
          }
        }
      }
    }
  }
}

// 2x2 mean pooling; a trailing odd row/column is dropped.
template <typename Scalar>
Matrix<Scalar> pool2(const Matrix<Scalar>& in, int height, int width) {
  const int oh = height / 2, ow = width / 2;
  Matrix<Scalar> out(static_cast<Eigen::Index>(oh) * ow, in.cols());
  for (Eigen::Index c = 0; c < in.cols(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const int p = 2 * y * width + 2 * x;
        out(y * ow + x, c) =
            Scalar(0.25) * (in(p, c) + in(p + 1, c) + in(p + width, c) + in(p + width + 1, c));
      }
    }
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> unpool2(const Matrix<Scalar>& d_out, int height, int width) {
  const int oh = height / 2, ow = width / 2;
  Matrix<Scalar> d_in = Matrix<Scalar>::Zero(static_cast<Eigen::Index>(height) * width, d_out.cols());
  for (Eigen::Index c = 0; c < d_out.cols(); ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const Scalar g = Scalar(0.25) * d_out(y * ow + x, c);
        const int p = 2 * y * width + 2 * x;
        d_in(p, c) = g;
        d_in(p + 1, c) = g;
        d_in(p + width, c) = g;
        d_in(p + width + 1, c) = g;
      }
    }
  }
  return d_in;
}

}  // namespace detail

template <typename Scalar>
class ConvBranch {
 public:
  using Mat = Matrix<Scalar>;
  using Vec = Vector<Scalar>;

  struct Cache {
    std::vector<Mat> cols;  // im2col of each stage input
    std::vector<Mat> acts;  // ELU output of each stage, before pooling
    Vec pooled;
  };

  ConvBranch() = default;

  explicit ConvBranch(BranchArchitecture arch) : arch_(std::move(arch)) {
    validate(arch_);
    Eigen::Index offset = 0;
    int h = arch_.height, w = arch_.width, in = arch_.in_channels;
    const int kk = arch_.kernel * arch_.kernel;
    for (std::size_t s = 0; s < arch_.channels.size(); ++s) {
      Stage st{in, arch_.channels[s], h, w, offset, 0};
      offset += static_cast<Eigen::Index>(st.out_ch) * in * kk;
      st.bias = offset;
      offset += st.out_ch;
      stages_.push_back(st);
      in = st.out_ch;
      if (s + 1 < arch_.channels.size()) {
        h /= 2;
        w /= 2;
      }
    }
    dense_weight_ = offset;
    offset += static_cast<Eigen::Index>(arch_.feature_dim) * in * arch_.stripes;
    dense_bias_ = offset;
    offset += arch_.feature_dim;
    params_ = Vec::Zero(offset);
  }

  const BranchArchitecture& architecture() const { return arch_; }
  Vec& parameters() { return params_; }
  const Vec& parameters() const { return params_; }
  Eigen::Index size() const { return params_.size(); }

  // He-normal convolution weights, 1/sqrt(fan_in) dense weights, zero biases.
  void initialize(std::mt19937_64& rng) {
    params_.setZero();
    std::normal_distribution<double> normal(0.0, 1.0);
    const int kk = arch_.kernel * arch_.kernel;
    for (const Stage& st : stages_) {
      const double stddev = std::sqrt(2.0 / (st.in_ch * kk));
      auto w = params_.segment(st.weight, static_cast<Eigen::Index>(st.out_ch) * st.in_ch * kk);
      for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(stddev * normal(rng));
    }
    const int pooled = pooled_size();
    const double stddev = std::sqrt(1.0 / pooled);
    auto w = params_.segment(dense_weight_, static_cast<Eigen::Index>(arch_.feature_dim) * pooled);
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(stddev * normal(rng));
  }

  template <typename Derived>
  Vec forward(const Eigen::MatrixBase<Derived>& planes, Cache* cache = nullptr) const {
    if (planes.cols() != arch_.in_channels ||
        planes.rows() != static_cast<Eigen::Index>(arch_.height) * arch_.width) {
      throw ShapeError("branch expects " + std::to_string(arch_.height) + "x" + std::to_string(arch_.width) +
                       "x" + std::to_string(arch_.in_channels) + " input, got " +
                       std::to_string(planes.rows()) + " pixels x " + std::to_string(planes.cols()) +
                       " channels");
    }
    if (cache) {
      cache->cols.resize(stages_.size());
      cache->acts.resize(stages_.size());
    }
    Mat input = (planes.template cast<Scalar>().array() - Scalar(0.5)).matrix();
    Mat col, act;
    Vec pooled;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const Stage& st = stages_[s];
      detail::im2col(input, st.height, st.width, arch_.kernel, col);
      act = col * stage_weight(st).transpose();
      act.rowwise() += stage_bias(st).transpose();
      act = act.unaryExpr([](Scalar v) { return detail::elu(v); });
      if (s + 1 < stages_.size())
        input = detail::pool2(act, st.height, st.width);
      else
        pooled = stripe_pool(act, st);
      if (cache) {
        cache->cols[s] = std::move(col);
        cache->acts[s] = act;
      }
    }
    if (cache) cache->pooled = pooled;
    return dense_weight() * pooled + dense_bias();
  }

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(output).
  void backward(const Cache& cache, const Eigen::Ref<const Vec>& d_out, Eigen::Ref<Vec> grad) const {
    Eigen::Map<Mat>(grad.data() + dense_weight_, arch_.feature_dim, pooled_size()).noalias() +=
        d_out * cache.pooled.transpose();
    grad.segment(dense_bias_, arch_.feature_dim) += d_out;
    const Vec d_pooled = dense_weight().transpose() * d_out;

    const Stage& tail = stages_.back();
    const int channels = tail.out_ch;
    Mat d_act(static_cast<Eigen::Index>(tail.height) * tail.width, channels);
    for (int s = 0; s < arch_.stripes; ++s) {
      const int r0 = s * tail.height / arch_.stripes, r1 = (s + 1) * tail.height / arch_.stripes;
      const Scalar inv = Scalar(1) / static_cast<Scalar>((r1 - r0) * tail.width);
      const auto rows = static_cast<Eigen::Index>(r1 - r0) * tail.width;
      d_act.middleRows(static_cast<Eigen::Index>(r0) * tail.width, rows) =
          Mat::Ones(rows, 1) * (d_pooled.segment(static_cast<Eigen::Index>(s) * channels, channels).transpose() * inv);
    }

    const int kk = arch_.kernel * arch_.kernel;
    for (std::size_t s = stages_.size(); s-- > 0;) {
      const Stage& st = stages_[s];
      const Mat d_pre =
          d_act.cwiseProduct(cache.acts[s].unaryExpr([](Scalar v) { return detail::elu_slope(v); }));
      Eigen::Map<Mat>(grad.data() + st.weight, st.out_ch, static_cast<Eigen::Index>(st.in_ch) * kk).noalias() +=
          d_pre.transpose() * cache.cols[s];
      grad.segment(st.bias, st.out_ch) += d_pre.colwise().sum().transpose();
      if (s == 0) break;
      const Mat d_col = d_pre * stage_weight(st);
      Mat d_in;
      detail::col2im(d_col, st.height, st.width, arch_.kernel, st.in_ch, d_in);
      const Stage& prev = stages_[s - 1];
      d_act = detail::unpool2(d_in, prev.height, prev.width);
    }
  }

 private:
  struct Stage {
    int in_ch;
    int out_ch;
    int height;
    int width;
    Eigen::Index weight;
    Eigen::Index bias;
  };

  Eigen::Map<const Mat> stage_weight(const Stage& st) const {
    return {params_.data() + st.weight, st.out_ch,
            static_cast<Eigen::Index>(st.in_ch) * arch_.kernel * arch_.kernel};
  }
  Eigen::Map<const Vec> stage_bias(const Stage& st) const { return {params_.data() + st.bias, st.out_ch}; }
  int pooled_size() const { return stages_.back().out_ch * arch_.stripes; }
  Eigen::Map<const Mat> dense_weight() const { return {params_.data() + dense_weight_, arch_.feature_dim, pooled_size()}; }

  // Band-wise channel means, band-major: out[s * C + c].
  Vec stripe_pool(const Mat& act, const Stage& st) const {
    const auto channels = act.cols();
    Vec out(channels * arch_.stripes);
    for (int s = 0; s < arch_.stripes; ++s) {
      const int r0 = s * st.height / arch_.stripes, r1 = (s + 1) * st.height / arch_.stripes;
      out.segment(static_cast<Eigen::Index>(s) * channels, channels) =
          act.middleRows(static_cast<Eigen::Index>(r0) * st.width, static_cast<Eigen::Index>(r1 - r0) * st.width)
              .colwise()
              .mean()
              .transpose();
    }
    return out;
  }
  Eigen::Map<const Vec> dense_bias() const { return {params_.data() + dense_bias_, arch_.feature_dim}; }

  BranchArchitecture arch_;
  std::vector<Stage> stages_;
  Eigen::Index dense_weight_ = 0;
  Eigen::Index dense_bias_ = 0;
  Vec params_;
};

// y = act(W x + b), parameters stored flat as [vec(W) column-major, b].
template <typename Scalar>
class AffineMap {
 public:
  using Mat = Matrix<Scalar>;
  using Vec = Vector<Scalar>;

  AffineMap() = default;
  AffineMap(int in_dim, int out_dim, Activation act = Activation::none)
      : in_(in_dim), out_(out_dim), act_(act), params_(Vec::Zero(static_cast<Eigen::Index>(in_dim) * out_dim + out_dim)) {}

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  Activation activation() const { return act_; }
  Vec& parameters() { return params_; }
  const Vec& parameters() const { return params_; }
  Eigen::Index size() const { return params_.size(); }

  Eigen::Map<Mat> weight() { return {params_.data(), out_, in_}; }
  Eigen::Map<const Mat> weight() const { return {params_.data(), out_, in_}; }
  Eigen::Map<Vec> bias() { return {params_.data() + static_cast<Eigen::Index>(in_) * out_, out_}; }
  Eigen::Map<const Vec> bias() const { return {params_.data() + static_cast<Eigen::Index>(in_) * out_, out_}; }

  void initialize(std::mt19937_64& rng) {
    params_.setZero();
    std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / in_));
    auto w = weight();
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(normal(rng));
  }

  template <typename Derived>
  Vec forward(const Eigen::MatrixBase<Derived>& x) const {
    if (x.size() != in_)
      throw ShapeError("affine map expects " + std::to_string(in_) + " inputs, got " + std::to_string(x.size()));
    Vec y = weight() * x + bias();
    if (act_ == Activation::elu) y = y.unaryExpr([](Scalar v) { return detail::elu(v); });
    return y;
  }

  // Accumulates parameter gradients and returns d(loss)/d(x). `y` is the forward output.
  Vec backward(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& y, const Eigen::Ref<const Vec>& d_y,
               Eigen::Ref<Vec> grad) const {
    Vec d_pre = d_y;
    if (act_ == Activation::elu)
      d_pre = d_y.cwiseProduct(y.unaryExpr([](Scalar v) { return detail::elu_slope(v); }));
    Eigen::Map<Mat>(grad.data(), out_, in_).noalias() += d_pre * x.transpose();
    grad.segment(static_cast<Eigen::Index>(in_) * out_, out_) += d_pre;
    return weight().transpose() * d_pre;
  }

 private:
  int in_ = 0;
  int out_ = 0;
  Activation act_ = Activation::none;
  Vec params_;
};

// RGB branch, mask branch (same architecture, one input channel, own weights),
// predictor D -> D after the RGB branch and fusion 2D -> D over [x; x_mask].
template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  ConvBranch<Scalar> rgb_branch;
  ConvBranch<Scalar> mask_branch;
  AffineMap<Scalar> predictor;
  AffineMap<Scalar> fusion;

  int feature_dim() const { return config.backbone.feature_dim; }
};

inline BranchArchitecture mask_architecture(BranchArchitecture arch) {
  arch.in_channels = 1;
  return arch;
}

// Zero-valued parameters with the right shapes.
template <typename Scalar>
ModelParams<Scalar> empty_model(const ModelConfig& config) {
  BranchArchitecture rgb = config.backbone;
  rgb.in_channels = 3;
  const int d = rgb.feature_dim;
  ModelParams<Scalar> model;
  model.config = config;
  model.config.backbone = rgb;
  model.rgb_branch = ConvBranch<Scalar>(rgb);
  model.mask_branch = ConvBranch<Scalar>(mask_architecture(rgb));
  model.predictor = AffineMap<Scalar>(d, d, config.head_activation);
  model.fusion = AffineMap<Scalar>(2 * d, d, config.head_activation);
  return model;
}

template <typename Scalar>
ModelParams<Scalar> make_model(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<Scalar> model = empty_model<Scalar>(config);
  std::mt19937_64 rng(seed);
  model.rgb_branch.initialize(rng);
  model.mask_branch.initialize(rng);
  model.predictor.initialize(rng);
  model.fusion.initialize(rng);
  return model;
}

template <typename Scalar>
struct ModelGradients {
  Vector<Scalar> rgb_branch;
  Vector<Scalar> mask_branch;
  Vector<Scalar> predictor;
  Vector<Scalar> fusion;

  static ModelGradients zeros_like(const ModelParams<Scalar>& m) {
    return {Vector<Scalar>::Zero(m.rgb_branch.size()), Vector<Scalar>::Zero(m.mask_branch.size()),
            Vector<Scalar>::Zero(m.predictor.size()), Vector<Scalar>::Zero(m.fusion.size())};
  }
};

template <typename Scalar>
RowMatrix<Scalar> encode_rgb(const ModelParams<Scalar>& params, std::span<const ImagePlanes> images) {
  RowMatrix<Scalar> out(static_cast<Eigen::Index>(images.size()), params.feature_dim());
  for (std::size_t i = 0; i < images.size(); ++i) out.row(i) = params.rgb_branch.forward(images[i]).transpose();
  return out;
}

template <typename Scalar>
RowMatrix<Scalar> encode_mask(const ModelParams<Scalar>& params, std::span<const ImagePlanes> masks) {
  RowMatrix<Scalar> out(static_cast<Eigen::Index>(masks.size()), params.feature_dim());
  for (std::size_t i = 0; i < masks.size(); ++i) out.row(i) = params.mask_branch.forward(masks[i]).transpose();
  return out;
}

template <typename Scalar, typename Derived>
Vector<Scalar> predict(const ModelParams<Scalar>& params, const Eigen::MatrixBase<Derived>& x) {
  return params.predictor.forward(x);
}

template <typename Scalar, typename DerivedA, typename DerivedB>
Vector<Scalar> fuse(const ModelParams<Scalar>& params, const Eigen::MatrixBase<DerivedA>& x,
                    const Eigen::MatrixBase<DerivedB>& x_mask) {
  if (x.size() != params.feature_dim() || x_mask.size() != params.feature_dim())
    throw ShapeError("fuse expects two " + std::to_string(params.feature_dim()) + "-vectors");
  Vector<Scalar> joint(2 * params.feature_dim());
  joint << x, x_mask;
  return params.fusion.forward(joint);
}

}  // namespace maskcl
