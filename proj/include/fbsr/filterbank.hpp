#pragma once

#include "fbsr/signal.hpp"

#include <filesystem>
#include <vector>

// M-channel analysis/synthesis filter banks over the primitives in
// signal.hpp. Alignment convention, used everywhere:
//
//  * analysis channel k = decimate(convolve1d(x, h_k), M, phase 0)
//  * synthesis          = sum_k convolve1d(upsample_zero(c_k, M), f_k)
//  * a zero-delay identity path requires h.center + f.center == L - 1 per
//    channel; banks built here satisfy that by construction. pr_error never
//    searches over delays.
//
// Training signals use ZeroPad boundaries, matching the linear operator
// model the dense-matrix test oracle builds.

namespace fbsr {

struct FilterBank {
  Eigen::Index m = 0;             // channel count == decimation factor
  std::vector<Kernel> analysis;   // h_0..h_{M-1}, h_0 is the fixed prototype
  std::vector<Kernel> synthesis;  // f_0..f_{M-1}
  bool h0_frozen = true;

  Eigen::Index filter_length() const {
    return analysis.empty() ? 0 : analysis.front().size();
  }
  bool valid() const;
};

// Channel 0 is the coarse approximation; during super-resolution it is the
// acquired low-resolution data itself and analyze is never applied to the
// unknown high-resolution signal.
struct CoefficientSet {
  Signal coarse;
  std::vector<Signal> details;  // d_1..d_{M-1}

  Eigen::Index channels() const {
    return 1 + static_cast<Eigen::Index>(details.size());
  }
};

struct CoefficientImage {
  Image coarse;
  std::vector<Image> details;

  Eigen::Index channels() const {
    return 1 + static_cast<Eigen::Index>(details.size());
  }
};

/// Symmetric zero-padding of a kernel to length `length`; the extra taps are
/// split as evenly as possible (one more on the right when the parity
/// differs) and the center index shifts with the left padding.
Kernel pad_kernel(const Kernel& k, Eigen::Index length);

/// Default shared filter length for a learnable M-channel bank. Odd so that
/// all kernels can share the exact mid-tap center (L-1)/2, which makes the
/// analysis/synthesis pair zero-delay by construction.
inline Eigen::Index default_filter_length(Eigen::Index m) { return 4 * m + 1; }

/// Bank initialization from a fixed low-pass prototype:
///   h_k[n] = h0[n] * sqrt(2/M) * cos((k + 1/2) * (n + (M+1)/2) * pi / M)
/// with n the tap index of the h0 that is passed in (pad first to control
/// the final length). h_0 keeps the prototype taps bit-exactly and is
/// flagged frozen; synthesis taps start equal to the analysis taps, with
/// centers mirrored so every channel is zero-delay.
FilterBank cosine_modulated_init(const Kernel& h0, Eigen::Index m);

CoefficientSet analyze(const Signal& x, const FilterBank& bank);

Signal synthesize(const CoefficientSet& c, const FilterBank& bank);

/// Applies analyze to every line of `img` running along `axis`
/// (axis 1: each row is a line; axis 0: each column). The extent along
/// `axis` shrinks by M; the other extent is preserved.
CoefficientImage analyze_image(const Image& img, const FilterBank& bank,
                               int axis);

/// Mean over probes of per-sample mean squared reconstruction error of
/// synthesize(analyze(x)). Zero iff the bank reconstructs every probe
/// exactly under the fixed alignment convention.
double pr_error(const FilterBank& bank, const std::vector<Signal>& probes);

/// Orthonormal two-channel bank (taps 1/sqrt(2)); reconstructs to roundoff.
FilterBank haar_bank();

/// Two-channel bank with dyadic-rational taps (averages/differences paired
/// with unit-tap synthesis); reconstruction of integer-valued signals is
/// bit-exact because every intermediate is representable.
FilterBank haar_bank_exact();

// Bank container format "FBK1", little-endian:
// u32 M, u32 L, M*L f64 analysis taps (kernel-major), M*L f64 synthesis
// taps, then 2*M u32 centers (analysis kernels first).
void save_bank(const FilterBank& bank, const std::filesystem::path& path);
FilterBank load_bank(const std::filesystem::path& path);

}  // namespace fbsr
