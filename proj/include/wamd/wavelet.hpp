#pragma once

// Three-level undecimated 2-D wavelet-packet decomposition. Filtering is
// separable circular convolution with a trous dilation (2^(level-1)); no
// downsampling, so every sub-band keeps the input resolution. The packet
// tree is expanded to depth 3 with the level-1 LL subtree dropped, leaving
// 48 leaves ordered depth-first with child order LL, LH, HL, HH.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "wamd/common.hpp"

namespace wamd {

template <typename Scalar>
using Raster =
    Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Quadrature mirror pair; highpass[k] = (-1)^k lowpass[L-1-k] for the
/// built-in orthonormal filters.
struct FilterPair {
  std::vector<double> lowpass;
  std::vector<double> highpass;
  std::string name;
};

inline FilterPair haar() {
  const double s = 1.0 / std::sqrt(2.0);
  return {{s, s}, {s, -s}, "haar"};
}

inline FilterPair daubechies2() {
  const double r3 = std::sqrt(3.0);
  const double n = 4.0 * std::sqrt(2.0);
  const std::vector<double> h{(1 + r3) / n, (3 + r3) / n, (3 - r3) / n,
                              (1 - r3) / n};
  std::vector<double> g(4);
  for (int k = 0; k < 4; ++k) g[k] = (k % 2 ? -1.0 : 1.0) * h[3 - k];
  return {h, g, "db2"};
}

inline FilterPair wavelet_by_name(const std::string& name) {
  if (name == "haar") return haar();
  if (name == "db2") return daubechies2();
  reject_input("unknown wavelet '", name, "' (available: haar, db2)");
}

/// Luma conversion: 1-channel passthrough, 3-channel 0.299/0.587/0.114.
template <typename Scalar>
Raster<Scalar> to_grayscale(const std::vector<Raster<Scalar>>& channels) {
  if (channels.size() == 1) return channels[0];
  if (channels.size() != 3)
    reject_input("to_grayscale expects 1 or 3 channels, got ",
                 channels.size());
  const auto rows = channels[0].rows(), cols = channels[0].cols();
  for (const auto& c : channels)
    if (c.rows() != rows || c.cols() != cols)
      reject_input("to_grayscale channel sizes differ");
  return Scalar(0.299) * channels[0] + Scalar(0.587) * channels[1] +
         Scalar(0.114) * channels[2];
}

namespace detail {

/// Circular convolution along the row index with dilation:
/// y(i,j) = sum_k f[k] * x((i - k*d) mod H, j).
template <typename Scalar>
Raster<Scalar> conv_rows_circular(const Raster<Scalar>& x,
                                  const std::vector<double>& f,
                                  std::int64_t dilation) {
  const auto h = x.rows();
  Raster<Scalar> y = Raster<Scalar>::Zero(h, x.cols());
  for (std::size_t k = 0; k < f.size(); ++k) {
    const auto shift =
        static_cast<Eigen::Index>((static_cast<std::int64_t>(k) * dilation) %
                                  h);
    const auto fk = static_cast<Scalar>(f[k]);
    for (Eigen::Index i = 0; i < h; ++i) {
      Eigen::Index src = i - shift;
      if (src < 0) src += h;
      y.row(i) += fk * x.row(src);
    }
  }
  return y;
}

template <typename Scalar>
Raster<Scalar> conv_cols_circular(const Raster<Scalar>& x,
                                  const std::vector<double>& f,
                                  std::int64_t dilation) {
  return conv_rows_circular<Scalar>(x.transpose(), f, dilation).transpose();
}

/// Adjoint of conv_rows_circular (circular correlation).
template <typename Scalar>
Raster<Scalar> adjoint_rows_circular(const Raster<Scalar>& x,
                                     const std::vector<double>& f,
                                     std::int64_t dilation) {
  const auto h = x.rows();
  Raster<Scalar> y = Raster<Scalar>::Zero(h, x.cols());
  for (std::size_t k = 0; k < f.size(); ++k) {
    const auto shift =
        static_cast<Eigen::Index>((static_cast<std::int64_t>(k) * dilation) %
                                  h);
    const auto fk = static_cast<Scalar>(f[k]);
    for (Eigen::Index i = 0; i < h; ++i) {
      Eigen::Index src = i + shift;
      if (src >= h) src -= h;
      y.row(i) += fk * x.row(src);
    }
  }
  return y;
}

template <typename Scalar>
Raster<Scalar> adjoint_cols_circular(const Raster<Scalar>& x,
                                     const std::vector<double>& f,
                                     std::int64_t dilation) {
  return adjoint_rows_circular<Scalar>(x.transpose(), f, dilation).transpose();
}

inline std::int64_t swt_dilation(int level) { return std::int64_t{1} << (level - 1); }

inline void check_swt_args(Eigen::Index rows, Eigen::Index cols,
                           const FilterPair& filters, int level) {
  if (level < 1 || level > 3)
    reject_input("swt_split level must be in 1..3, got ", level);
  if (filters.lowpass.size() != filters.highpass.size() ||
      filters.lowpass.empty())
    reject_input("filter pair must have equal, non-zero lengths");
  const std::int64_t divisor = std::int64_t{1} << level;
  if (rows % divisor != 0 || cols % divisor != 0)
    reject_input("swt_split level ", level, " requires extents divisible by ",
                 divisor, ", got ", rows, "x", cols);
  const std::int64_t d = swt_dilation(level);
  const auto dilated =
      (static_cast<std::int64_t>(filters.lowpass.size()) - 1) * d + 1;
  if (dilated > rows || dilated > cols)
    reject_input("dilated filter length ", dilated, " exceeds extent ", rows,
                 "x", cols);
}

}  // namespace detail

template <typename Scalar>
struct QuadSplit {
  Raster<Scalar> ll, lh, hl, hh;
};

/// One undecimated split at the given tree level. First token filters the
/// row index, second the column index: LH = lowpass rows, highpass columns.
template <typename Scalar>
QuadSplit<Scalar> swt_split(const Raster<Scalar>& band,
                            const FilterPair& filters, int level) {
  detail::check_swt_args(band.rows(), band.cols(), filters, level);
  const std::int64_t d = detail::swt_dilation(level);
  const auto lo_rows = detail::conv_rows_circular(band, filters.lowpass, d);
  const auto hi_rows = detail::conv_rows_circular(band, filters.highpass, d);
  QuadSplit<Scalar> q;
  q.ll = detail::conv_cols_circular(lo_rows, filters.lowpass, d);
  q.lh = detail::conv_cols_circular(lo_rows, filters.highpass, d);
  q.hl = detail::conv_cols_circular(hi_rows, filters.lowpass, d);
  q.hh = detail::conv_cols_circular(hi_rows, filters.highpass, d);
  return q;
}

/// Adjoint-filtered average of a level-1 split; recovers the input for the
/// built-in quadrature pairs (sanity check for perfect reconstruction).
template <typename Scalar>
Raster<Scalar> swt_level1_inverse(const QuadSplit<Scalar>& q,
                                  const FilterPair& filters) {
  const auto back = [&](const Raster<Scalar>& band, const std::vector<double>& fr,
                        const std::vector<double>& fc) {
    return detail::adjoint_rows_circular(
        detail::adjoint_cols_circular(band, fc, 1), fr, 1);
  };
  Raster<Scalar> sum = back(q.ll, filters.lowpass, filters.lowpass) +
                       back(q.lh, filters.lowpass, filters.highpass) +
                       back(q.hl, filters.highpass, filters.lowpass) +
                       back(q.hh, filters.highpass, filters.highpass);
  return sum / Scalar(4);
}

/// 48 same-resolution sub-bands of one image plus their tree paths
/// (e.g. "LH.LL.HL", level-1 token first; never "LL" at level 1).
template <typename Scalar>
struct SubbandStack {
  std::vector<Raster<Scalar>> bands;
  std::vector<std::string> labels;
  std::int64_t rows = 0;
  std::int64_t cols = 0;

  static constexpr std::int64_t kBandCount = 48;
};

template <typename Scalar>
SubbandStack<Scalar> packet_decompose(const Raster<Scalar>& image,
                                      const FilterPair& filters) {
  if (image.rows() % 8 != 0 || image.cols() % 8 != 0)
    reject_input("packet_decompose requires extents divisible by 8, got ",
                 image.rows(), "x", image.cols());
  SubbandStack<Scalar> out;
  out.rows = image.rows();
  out.cols = image.cols();
  out.bands.reserve(SubbandStack<Scalar>::kBandCount);
  out.labels.reserve(SubbandStack<Scalar>::kBandCount);

  static const char* kChild[4] = {"LL", "LH", "HL", "HH"};
  std::function<void(const Raster<Scalar>&, int, const std::string&)> expand =
      [&](const Raster<Scalar>& node, int level, const std::string& path) {
        const auto q = swt_split(node, filters, level);
        const Raster<Scalar>* child[4] = {&q.ll, &q.lh, &q.hl, &q.hh};
        for (int c = 0; c < 4; ++c) {
          if (level == 1 && c == 0) continue;  // drop the level-1 LL subtree
          const std::string label =
              path.empty() ? kChild[c] : path + "." + kChild[c];
          if (level == 3) {
            out.bands.push_back(*child[c]);
            out.labels.push_back(label);
          } else {
            expand(*child[c], level + 1, label);
          }
        }
      };
  expand(image, 1, "");

  if (static_cast<std::int64_t>(out.bands.size()) !=
      SubbandStack<Scalar>::kBandCount)
    reject_state("packet_decompose produced ", out.bands.size(),
                 " bands instead of ", SubbandStack<Scalar>::kBandCount);
  return out;
}

/// Channel-first flattening of a stack into a [48*H*W] buffer.
template <typename Out, typename Scalar>
std::vector<Out> stack_to_values(const SubbandStack<Scalar>& stack) {
  std::vector<Out> flat;
  flat.reserve(stack.bands.size() * stack.rows * stack.cols);
  for (const auto& band : stack.bands)
    for (Eigen::Index i = 0; i < band.rows(); ++i)
      for (Eigen::Index j = 0; j < band.cols(); ++j)
        flat.push_back(static_cast<Out>(band(i, j)));
  return flat;
}

}  // namespace wamd
