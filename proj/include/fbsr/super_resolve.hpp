#pragma once

#include "fbsr/regressor.hpp"
#include "fbsr/volume.hpp"

// End-to-end reconstruction: regress the missing detail coefficients from
// the acquired coarse data, push everything through the synthesis bank, and
// average the two cardinal planes that contain the through axis.

namespace fbsr {

struct SrOptions {
  Eigen::Index patch = 32;  // tile edge; clamped to the slice extent
  Eigen::Index stride = 0;  // 0: patch/2
};

/// Applies synthesize(analyze(line)) to every line of `v` along `axis`;
/// dims are preserved. This is the bank's reconstruction quality probe.
Volume reconstruct_volume(const Volume& v, const FilterBank& bank, int axis);

/// Synthesis of the coarse channel with all details zeroed: the reference
/// the regressor has to beat. Through-axis extent grows by M.
Volume zero_detail_volume(const Volume& y, const FilterBank& bank,
                          const AcquisitionSpec& spec);

/// Fourier zero-fill along the through axis: pad the spectrum to M times
/// the length (splitting the Nyquist bin) and inverse transform.
Volume zero_fill_volume(const Volume& y, Eigen::Index m, int through_axis);

/// Separable cubic (Catmull-Rom) interpolation along the through axis.
Volume cubic_upsample_volume(const Volume& y, Eigen::Index m, int through_axis);

/// Full pipeline: for each of the two cardinal planes containing the
/// through axis, tile every slice into patch x patch coarse tiles
/// (stride-overlapped, uniform-weight overlap-add of the predicted
/// details), synthesize each line along the through axis, and average the
/// two resulting volumes. Through-axis extent grows by M, spacing shrinks
/// by M.
Volume super_resolve(const Volume& y, const FilterBank& bank,
                     const ConvRegressor& g, const AcquisitionSpec& spec,
                     const SrOptions& options = {});

}  // namespace fbsr
