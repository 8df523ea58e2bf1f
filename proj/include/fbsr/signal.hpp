#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

// 1D signal primitives: centered same-length convolution, decimation,
// zero-insertion upsampling and kernel construction. Everything here is a
// pure function of its arguments and safe to call concurrently.
//
// Conventions, shared by every consumer in this library:
//  * convolve1d(x, h)[n] = sum_k h.taps[k] * x[n - k + h.center], i.e. the
//    kernel origin sits at tap index `center`, so a delta kernel with its
//    spike at `center` is the identity. Output has the length of x.
//  * decimate(x, M, phase)[i] = x[phase + i*M].
//  * upsample_zero(x, M)[i*M] = x[i], all other entries exactly 0.
//  * All arithmetic is double precision; sums accumulate left to right.

namespace fbsr {

enum class BoundaryMode {
  ZeroPad,  // x outside range reads as 0
  Reflect,  // half-sample symmetric: x[-1] -> x[0], x[n] -> x[n-1]
};

template <typename Scalar>
struct KernelT {
  Eigen::Array<Scalar, Eigen::Dynamic, 1> taps;
  Eigen::Index center = 0;

  Eigen::Index size() const { return taps.size(); }

  bool valid() const {
    return taps.size() >= 1 && center >= 0 && center < taps.size() &&
           taps.allFinite();
  }
};

using Kernel = KernelT<double>;

using Signal = Eigen::ArrayXd;
using Image = Eigen::MatrixXd;  // (rows x cols), double precision

namespace detail {

// Index into x of logical position i under the given boundary mode;
// returns -1 when the sample reads as zero (ZeroPad out of range).
inline Eigen::Index boundary_index(Eigen::Index i, Eigen::Index n,
                                   BoundaryMode mode) {
  if (i >= 0 && i < n) return i;
  if (mode == BoundaryMode::ZeroPad) return -1;
  // Half-sample symmetric reflection, stable for any overshoot.
  const Eigen::Index period = 2 * n;
  Eigen::Index j = i % period;
  if (j < 0) j += period;
  return j < n ? j : period - 1 - j;
}

}  // namespace detail

/// Same-length centered convolution of x with kernel h.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> convolve1d(
    const Eigen::Array<Scalar, Eigen::Dynamic, 1>& x, const KernelT<Scalar>& h,
    BoundaryMode mode = BoundaryMode::ZeroPad) {
  if (h.taps.size() == 0) throw std::invalid_argument("convolve1d: empty kernel");
  if (h.center < 0 || h.center >= h.taps.size())
    throw std::invalid_argument("convolve1d: kernel center out of range");
  const Eigen::Index n = x.size();
  const Eigen::Index len = h.taps.size();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Scalar acc = Scalar(0);
    for (Eigen::Index k = 0; k < len; ++k) {
      const Eigen::Index src = detail::boundary_index(i - k + h.center, n, mode);
      if (src >= 0) acc += h.taps[k] * x[src];
    }
    out[i] = acc;
  }
  return out;
}

/// Keep every M-th sample starting at `phase`.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> decimate(
    const Eigen::Array<Scalar, Eigen::Dynamic, 1>& x, Eigen::Index m,
    Eigen::Index phase = 0) {
  if (m < 1) throw std::invalid_argument("decimate: M must be >= 1");
  if (phase < 0 || phase >= m)
    throw std::invalid_argument("decimate: phase out of [0, M)");
  const Eigen::Index n = (x.size() - phase + m - 1) / m;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = x[phase + i * m];
  return out;
}

/// Zero-insertion upsampling: out[i*M] = x[i], zeros elsewhere.
template <typename Scalar>
Eigen::Array<Scalar, Eigen::Dynamic, 1> upsample_zero(
    const Eigen::Array<Scalar, Eigen::Dynamic, 1>& x, Eigen::Index m) {
  if (m < 1) throw std::invalid_argument("upsample_zero: M must be >= 1");
  Eigen::Array<Scalar, Eigen::Dynamic, 1> out =
      Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(x.size() * m);
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i * m] = x[i];
  return out;
}

inline double fwhm_to_sigma(double fwhm) {
  return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
}

/// Gaussian kernel sampled at integer offsets within +-truncation*sigma,
/// normalized to unit sum, symmetric, centered at the peak.
inline Kernel gaussian_kernel(double fwhm, double truncation = 4.0) {
  if (!(fwhm > 0.0)) throw std::invalid_argument("gaussian_kernel: fwhm must be > 0");
  if (!(truncation > 0.0))
    throw std::invalid_argument("gaussian_kernel: truncation must be > 0");
  const double sigma = fwhm_to_sigma(fwhm);
  const Eigen::Index radius =
      static_cast<Eigen::Index>(std::floor(truncation * sigma));
  Kernel k;
  k.taps.resize(2 * radius + 1);
  k.center = radius;
  for (Eigen::Index i = -radius; i <= radius; ++i) {
    const double t = static_cast<double>(i) / sigma;
    k.taps[radius + i] = std::exp(-0.5 * t * t);
  }
  // Force exact symmetry and unit sum.
  for (Eigen::Index i = 1; i <= radius; ++i)
    k.taps[radius + i] = k.taps[radius - i];
  k.taps /= k.taps.sum();
  return k;
}

/// Kernel whose convolution is the identity.
inline Kernel unit_kernel() {
  Kernel k;
  k.taps = Eigen::ArrayXd::Ones(1);
  k.center = 0;
  return k;
}

}  // namespace fbsr
