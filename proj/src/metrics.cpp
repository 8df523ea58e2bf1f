#include "fbsr/metrics.hpp"

#include "fbsr/io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace fbsr {

namespace {

double default_peak(const Volume& a, const Volume& b) {
  const double pa = a.voxels.abs().maxCoeff();
  const double pb = b.voxels.abs().maxCoeff();
  return std::max(pa, pb);
}

void check_same_dims(const Volume& a, const Volume& b, const char* who) {
  if (a.dims != b.dims)
    throw std::invalid_argument(std::string(who) + ": dimension mismatch");
}

Eigen::ArrayXd gaussian_window(Eigen::Index size, double sigma) {
  Eigen::ArrayXd w(size);
  const double mid = static_cast<double>(size - 1) / 2.0;
  for (Eigen::Index i = 0; i < size; ++i) {
    const double t = (static_cast<double>(i) - mid) / sigma;
    w[i] = std::exp(-0.5 * t * t);
  }
  return w / w.sum();
}

// Separable weighted local mean over fully supported windows; output is
// (rows-size+1) x (cols-size+1).
Image valid_filter(const Image& x, const Eigen::ArrayXd& w) {
  const Eigen::Index size = w.size();
  Image rowpass(x.rows(), x.cols() - size + 1);
  for (Eigen::Index c = 0; c < rowpass.cols(); ++c) {
    rowpass.col(c) = x.col(c) * w[0];
    for (Eigen::Index k = 1; k < size; ++k)
      rowpass.col(c) += x.col(c + k) * w[k];
  }
  Image out(x.rows() - size + 1, rowpass.cols());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r) = rowpass.row(r) * w[0];
    for (Eigen::Index k = 1; k < size; ++k)
      out.row(r) += rowpass.row(r + k) * w[k];
  }
  return out;
}

double slice_ssim(const Image& a, const Image& b, const Eigen::ArrayXd& w,
                  double c1, double c2) {
  const Image mu_a = valid_filter(a, w);
  const Image mu_b = valid_filter(b, w);
  const Image e_aa = valid_filter(a.cwiseProduct(a), w);
  const Image e_bb = valid_filter(b.cwiseProduct(b), w);
  const Image e_ab = valid_filter(a.cwiseProduct(b), w);
  const auto var_a = (e_aa - mu_a.cwiseProduct(mu_a)).array();
  const auto var_b = (e_bb - mu_b.cwiseProduct(mu_b)).array();
  const auto cov = (e_ab - mu_a.cwiseProduct(mu_b)).array();
  const auto num = (2.0 * mu_a.array() * mu_b.array() + c1) * (2.0 * cov + c2);
  const auto den =
      (mu_a.array().square() + mu_b.array().square() + c1) * (var_a + var_b + c2);
  return (num / den).mean();
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

PsnrResult psnr(const Volume& a, const Volume& b, double peak) {
  check_same_dims(a, b, "psnr");
  if (peak <= 0.0) peak = default_peak(a, b);
  const double mse = (a.voxels.cast<double>() - b.voxels.cast<double>())
                         .square()
                         .mean();
  PsnrResult out;
  if (mse == 0.0) {
    out.infinite = true;
    return out;
  }
  out.db = 10.0 * std::log10(peak * peak / mse);
  return out;
}

double ssim(const Volume& a, const Volume& b, const SsimParams& params) {
  check_same_dims(a, b, "ssim");
  const int t = params.through_axis;
  if (t < 0 || t > 2) throw std::invalid_argument("ssim: bad through axis");
  const auto [a0, a1] = other_axes(t);
  constexpr Eigen::Index kWindow = 11;
  if (a.dims[a0] < kWindow || a.dims[a1] < kWindow)
    throw std::invalid_argument("ssim: in-plane extent below the 11x11 window");
  const double peak = params.peak > 0.0 ? params.peak : default_peak(a, b);
  const double c1 = (params.k1 * peak) * (params.k1 * peak);
  const double c2 = (params.k2 * peak) * (params.k2 * peak);
  const Eigen::ArrayXd w = gaussian_window(kWindow, 1.5);
  double total = 0.0;
  for (Eigen::Index s = 0; s < a.dims[t]; ++s)
    total += slice_ssim(volume_slice(a, t, s), volume_slice(b, t, s), w, c1, c2);
  return total / static_cast<double>(a.dims[t]);
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs) {
  std::vector<double> mags;
  std::vector<bool> positive;
  for (double d : diffs) {
    if (d == 0.0) continue;
    mags.push_back(std::abs(d));
    positive.push_back(d > 0.0);
  }
  const std::size_t n = mags.size();
  if (n < 5)
    throw std::invalid_argument(
        "wilcoxon_signed_rank: needs at least 5 nonzero differences");

  // Midranks of |d|, doubled so ties stay integral.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return mags[i] < mags[j]; });
  std::vector<long> rank2(n, 0);
  std::vector<std::size_t> tie_sizes;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && mags[order[j]] == mags[order[i]]) ++j;
    // Ranks i+1..j occupy this tie group; midrank*2 = (i+1 + j).
    const long r2 = static_cast<long>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = r2;
    tie_sizes.push_back(j - i);
    i = j;
  }

  long w2_plus = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (positive[i]) w2_plus += rank2[i];

  WilcoxonResult out;
  out.statistic = static_cast<double>(w2_plus) / 2.0;

  if (n <= 25) {
    // Distribution of the doubled statistic over all 2^n sign choices.
    const long w2_max = static_cast<long>(n * (n + 1));
    std::vector<unsigned long long> counts(w2_max + 1, 0);
    counts[0] = 1;
    for (std::size_t i = 0; i < n; ++i)
      for (long w = w2_max; w >= rank2[i]; --w)
        counts[w] += counts[w - rank2[i]];
    const double total = std::pow(2.0, static_cast<double>(n));
    double below = 0.0, above = 0.0;
    for (long w = 0; w <= w2_max; ++w) {
      if (w <= w2_plus) below += static_cast<double>(counts[w]);
      if (w >= w2_plus) above += static_cast<double>(counts[w]);
    }
    out.exact = true;
    out.p_value = std::min(1.0, 2.0 * std::min(below, above) / total);
    return out;
  }

  const double nd = static_cast<double>(n);
  const double mu = nd * (nd + 1.0) / 4.0;
  double tie_term = 0.0;
  for (std::size_t t : tie_sizes) {
    const double td = static_cast<double>(t);
    tie_term += td * td * td - td;
  }
  const double var = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
  const double w_plus = static_cast<double>(w2_plus) / 2.0;
  const double d = w_plus - mu;
  const double z =
      d == 0.0 ? 0.0 : (d - 0.5 * (d > 0 ? 1.0 : -1.0)) / std::sqrt(var);
  out.exact = false;
  out.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(std::abs(z))));
  return out;
}

namespace {

Aggregate aggregate_of(const std::vector<double>& xs, long infinite) {
  Aggregate a;
  a.infinite_count = infinite;
  a.finite_count = static_cast<long>(xs.size());
  if (xs.empty()) return a;
  a.mean = std::accumulate(xs.begin(), xs.end(), 0.0) /
           static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - a.mean) * (x - a.mean);
  a.stddev = std::sqrt(ss / static_cast<double>(xs.size()));
  return a;
}

}  // namespace

Aggregate MetricReport::psnr_aggregate() const {
  std::vector<double> xs;
  long infinite = 0;
  for (const MetricRow& r : rows) {
    if (r.psnr.infinite)
      ++infinite;
    else
      xs.push_back(r.psnr.db);
  }
  return aggregate_of(xs, infinite);
}

Aggregate MetricReport::ssim_aggregate() const {
  std::vector<double> xs;
  for (const MetricRow& r : rows) xs.push_back(r.ssim);
  return aggregate_of(xs, 0);
}

void MetricReport::to_csv(std::ostream& os) const {
  os << "label,psnr_db,ssim\n";
  for (const MetricRow& r : rows) {
    os << r.label << ',';
    if (r.psnr.infinite)
      os << "inf";
    else
      os << io::format_double(r.psnr.db);
    os << ',' << io::format_double(r.ssim) << '\n';
  }
}

void MetricReport::pretty(std::ostream& os) const {
  os << "peak convention: " << io::format_double(peak) << '\n';
  for (const MetricRow& r : rows) {
    os << "  " << r.label << ": psnr=";
    if (r.psnr.infinite)
      os << "inf";
    else
      os << io::format_double(r.psnr.db);
    os << " dB, ssim=" << io::format_double(r.ssim) << '\n';
  }
  const Aggregate pa = psnr_aggregate();
  const Aggregate sa = ssim_aggregate();
  os << "  psnr mean " << io::format_double(pa.mean) << " +- "
     << io::format_double(pa.stddev);
  if (pa.infinite_count > 0)
    os << " (" << pa.infinite_count << " infinite, excluded)";
  os << "\n  ssim mean " << io::format_double(sa.mean) << " +- "
     << io::format_double(sa.stddev) << '\n';
}

}  // namespace fbsr
