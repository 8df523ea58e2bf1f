#pragma once

#include "fbsr/volume.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace fbsr {

struct PsnrResult {
  double db = 0.0;
  bool infinite = false;  // MSE was exactly zero; db is meaningless then
};

/// 10*log10(peak^2 / MSE) over all voxels. peak <= 0 selects the default
/// convention max(max|a|, max|b|). A zero MSE is reported as the Infinite
/// marker, never as a large number.
PsnrResult psnr(const Volume& a, const Volume& b, double peak = 0.0);

struct SsimParams {
  double peak = 0.0;    // <= 0: max(max|a|, max|b|)
  int through_axis = 2; // slices perpendicular to this axis are scored
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), evaluated on
/// fully supported window positions of every through-axis slice and
/// averaged across slices. In-plane extents must be at least 11.
double ssim(const Volume& a, const Volume& b, const SsimParams& params = {});

struct WilcoxonResult {
  double statistic = 0.0;  // W+: rank sum of the positive differences
  double p_value = 1.0;    // two-sided
  bool exact = false;      // enumeration (n <= 25) vs normal approximation
};

/// Two-sided signed-rank test on paired differences. Zeros are dropped;
/// at least 5 nonzero differences are required. Ties get midranks; the
/// normal branch applies tie and continuity corrections.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs);

struct MetricRow {
  std::string label;
  PsnrResult psnr;
  double ssim = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population form, 0 for a single sample
  long finite_count = 0;
  long infinite_count = 0;  // PSNR rows excluded from the mean
};

struct MetricReport {
  std::vector<MetricRow> rows;
  double peak = 0.0;  // the convention used, recorded for reproducibility

  Aggregate psnr_aggregate() const;
  Aggregate ssim_aggregate() const;
  /// CSV: "label,psnr_db,ssim" with "inf" for the Infinite marker.
  void to_csv(std::ostream& os) const;
  /// Human-readable table with mean and spread.
  void pretty(std::ostream& os) const;
};

}  // namespace fbsr
