#pragma once

#include "fbsr/filterbank.hpp"
#include "fbsr/regressor.hpp"

#include <array>
#include <filesystem>
#include <vector>

// Volumes, the acquisition simulator, dataset extraction for both training
// stages, and synthetic phantoms. Voxels are stored in single precision
// (the on-disk format) in C order: index = (i*ny + j)*nz + k. All math on
// extracted lines/slices happens in double precision.

namespace fbsr {

struct Volume {
  std::array<Eigen::Index, 3> dims{0, 0, 0};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};  // mm per voxel
  Eigen::ArrayXf voxels;

  Eigen::Index size() const { return dims[0] * dims[1] * dims[2]; }
  Eigen::Index stride(int axis) const {
    return axis == 0 ? dims[1] * dims[2] : axis == 1 ? dims[2] : 1;
  }
  Eigen::Index index(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
    return (i * dims[1] + j) * dims[2] + k;
  }
  float& at(Eigen::Index i, Eigen::Index j, Eigen::Index k) {
    return voxels[index(i, j, k)];
  }
  float at(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
    return voxels[index(i, j, k)];
  }
  bool valid() const {
    return dims[0] >= 1 && dims[1] >= 1 && dims[2] >= 1 &&
           spacing[0] > 0 && spacing[1] > 0 && spacing[2] > 0 &&
           voxels.size() == size() && voxels.allFinite();
  }
};

Volume make_volume(std::array<Eigen::Index, 3> dims,
                   std::array<float, 3> spacing = {1.0f, 1.0f, 1.0f});

/// The two axes other than `axis`, in ascending order.
std::array<int, 2> other_axes(int axis);

/// Line along `axis`; c0/c1 are the coordinates on the other two axes in
/// ascending axis order.
Signal volume_line(const Volume& v, int axis, Eigen::Index c0,
                   Eigen::Index c1);
void set_volume_line(Volume& v, int axis, Eigen::Index c0, Eigen::Index c1,
                     const Signal& s);

/// 2D slice at `index` along `fixed_axis`; rows follow the lower remaining
/// axis, columns the higher one.
Image volume_slice(const Volume& v, int fixed_axis, Eigen::Index index);

struct AcquisitionSpec {
  Eigen::Index fwhm = 2;  // A, mm (integer by assumption)
  Eigen::Index gap = 0;   // B, mm
  int through_axis = 2;

  Eigen::Index m() const { return fwhm + gap; }
  /// Through-plane profile: a Gaussian of the given FWHM, except A=1 which
  /// is a unit impulse so that 1(+)B degrades by pure decimation.
  Kernel kernel() const;
  bool valid() const {
    return fwhm >= 1 && gap >= 0 && through_axis >= 0 && through_axis <= 2;
  }
};

/// Simulated anisotropic acquisition: filter along the through axis
/// (Reflect boundary) and keep every M-th sample. Through-axis extent must
/// be divisible by M; the through-axis spacing grows by M.
Volume simulate_lr(const Volume& x, const AcquisitionSpec& spec);

/// Every row and every column of every in-plane slice (both in-plane
/// directions), as 1D training lines for stage 1.
std::vector<Signal> extract_lines(const Volume& y, const AcquisitionSpec& spec);

struct PatchSampler {
  Eigen::Index patch = 32;  // p; raw patches are p x (p*M)
  int long_axis = 0;        // 0/1: which in-plane axis carries the long side
  std::uint64_t seed = 0;
  Eigen::Index count = 0;
};

/// Seeded patch pairs for stage 2: p x p coarse inputs with M-1 p x p
/// detail targets, cropped at decimation-aligned positions from in-plane
/// rows that are analyzed over their full length. Full-length analysis
/// keeps the pairs distributed like inference inputs, which are plain
/// crops of the observed coarse volume.
std::vector<TrainPair> extract_patch_pairs(const Volume& y,
                                           const FilterBank& bank,
                                           const AcquisitionSpec& spec,
                                           const PatchSampler& sampler);

enum class PhantomKind {
  BandLimited,  // random low-frequency Fourier field
  SinusoidMix,  // few strong oriented integer-frequency cosines
  Shapes,       // ellipsoids with smooth boundary shells
};

PhantomKind phantom_kind_from_string(const std::string& name);

struct SinusoidComponent {
  std::array<int, 3> freq;  // cycles per volume extent, per axis
  double amplitude;
  double phase;
};

/// The component list generate_phantom uses for PhantomKind::SinusoidMix;
/// the first entry strictly dominates in amplitude.
std::vector<SinusoidComponent> sinusoid_mix_components(
    std::array<Eigen::Index, 3> dims, std::uint64_t seed);

/// Reproducible synthetic volume with values normalized to [0,1].
Volume generate_phantom(std::array<Eigen::Index, 3> dims, std::uint64_t seed,
                        PhantomKind kind);

// Volume container "FBV1", little-endian: u32 dims x3, f32 spacing x3,
// f32 voxels in C order. Loaders report the byte offset of any truncation
// and reject trailing bytes.
void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

/// 16-bit binary PGM (big-endian sample order per the format), linearly
/// rescaled to [0,65535]; the original min/max go to `path + ".minmax.txt"`.
void write_pgm16(const Image& img, const std::filesystem::path& path);
void save_slice_pgm(const Volume& v, int fixed_axis, Eigen::Index index,
                    const std::filesystem::path& path);

}  // namespace fbsr
