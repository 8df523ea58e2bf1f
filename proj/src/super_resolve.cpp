#include "fbsr/super_resolve.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

namespace fbsr {

namespace {

// Tile start offsets covering [0, extent) with the given stride; the last
// tile is clamped so coverage is complete and no start repeats.
std::vector<Eigen::Index> tile_starts(Eigen::Index extent, Eigen::Index tile,
                                      Eigen::Index stride) {
  std::vector<Eigen::Index> starts;
  for (Eigen::Index s = 0; s + tile <= extent; s += stride) starts.push_back(s);
  if (starts.empty() || starts.back() + tile < extent) {
    const Eigen::Index last = extent - tile;
    if (starts.empty() || last != starts.back()) starts.push_back(last);
  }
  return starts;
}

Volume upsampled_shell(const Volume& y, Eigen::Index m, int t) {
  std::array<Eigen::Index, 3> dims = y.dims;
  dims[t] *= m;
  std::array<float, 3> spacing = y.spacing;
  spacing[t] /= static_cast<float>(m);
  return make_volume(dims, spacing);
}

void check_through_axis(int t) {
  if (t < 0 || t > 2)
    throw std::invalid_argument("through axis must be 0, 1, or 2");
}

}  // namespace

Volume reconstruct_volume(const Volume& v, const FilterBank& bank, int axis) {
  check_through_axis(axis);
  if (!v.valid())
    throw std::invalid_argument("reconstruct_volume: invalid volume");
  Volume out = v;
  const auto [a0, a1] = other_axes(axis);
  for (Eigen::Index i = 0; i < v.dims[a0]; ++i)
    for (Eigen::Index j = 0; j < v.dims[a1]; ++j) {
      const Signal line = volume_line(v, axis, i, j);
      set_volume_line(out, axis, i, j, synthesize(analyze(line, bank), bank));
    }
  return out;
}

Volume zero_detail_volume(const Volume& y, const FilterBank& bank,
                          const AcquisitionSpec& spec) {
  if (!y.valid())
    throw std::invalid_argument("zero_detail_volume: invalid volume");
  if (!bank.valid() || bank.m != spec.m())
    throw std::invalid_argument("zero_detail_volume: bank does not match spec");
  const int t = spec.through_axis;
  Volume out = upsampled_shell(y, bank.m, t);
  const auto [a0, a1] = other_axes(t);
  CoefficientSet c;
  c.details.assign(bank.m - 1, Signal::Zero(y.dims[t]));
  for (Eigen::Index i = 0; i < y.dims[a0]; ++i)
    for (Eigen::Index j = 0; j < y.dims[a1]; ++j) {
      c.coarse = volume_line(y, t, i, j);
      set_volume_line(out, t, i, j, synthesize(c, bank));
    }
  return out;
}

Volume zero_fill_volume(const Volume& y, Eigen::Index m, int through_axis) {
  check_through_axis(through_axis);
  if (!y.valid())
    throw std::invalid_argument("zero_fill_volume: invalid volume");
  if (m < 1) throw std::invalid_argument("zero_fill_volume: M must be >= 1");
  const int t = through_axis;
  Volume out = upsampled_shell(y, m, t);
  const Eigen::Index n = y.dims[t];
  const Eigen::Index nm = n * m;
  Eigen::FFT<double> fft;
  const auto [a0, a1] = other_axes(t);
  std::vector<std::complex<double>> in(n), spec(n), padded(nm), up(nm);
  for (Eigen::Index i = 0; i < y.dims[a0]; ++i)
    for (Eigen::Index j = 0; j < y.dims[a1]; ++j) {
      const Signal line = volume_line(y, t, i, j);
      for (Eigen::Index s = 0; s < n; ++s) in[s] = line[s];
      fft.fwd(spec, in);
      std::fill(padded.begin(), padded.end(), std::complex<double>(0, 0));
      const double gain = static_cast<double>(m);
      for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::Index f = 2 * k <= n ? k : k - n;  // signed frequency
        if (n % 2 == 0 && k == n / 2) {
          // Nyquist bin splits evenly between +f and -f.
          padded[static_cast<std::size_t>(n / 2)] += gain * spec[k] * 0.5;
          padded[static_cast<std::size_t>(nm - n / 2)] += gain * spec[k] * 0.5;
        } else {
          const Eigen::Index at = f >= 0 ? f : nm + f;
          padded[static_cast<std::size_t>(at)] = gain * spec[k];
        }
      }
      fft.inv(up, padded);
      Signal hr(nm);
      for (Eigen::Index s = 0; s < nm; ++s) hr[s] = up[s].real();
      set_volume_line(out, t, i, j, hr);
    }
  return out;
}

Volume cubic_upsample_volume(const Volume& y, Eigen::Index m,
                             int through_axis) {
  check_through_axis(through_axis);
  if (!y.valid())
    throw std::invalid_argument("cubic_upsample_volume: invalid volume");
  if (m < 1)
    throw std::invalid_argument("cubic_upsample_volume: M must be >= 1");
  const int t = through_axis;
  Volume out = upsampled_shell(y, m, t);
  const Eigen::Index n = y.dims[t];
  const Eigen::Index nm = n * m;
  auto kernel = [](double u) {
    const double a = std::abs(u);
    if (a <= 1.0) return 1.5 * a * a * a - 2.5 * a * a + 1.0;
    if (a < 2.0) return -0.5 * a * a * a + 2.5 * a * a - 4.0 * a + 2.0;
    return 0.0;
  };
  const auto [a0, a1] = other_axes(t);
  for (Eigen::Index i = 0; i < y.dims[a0]; ++i)
    for (Eigen::Index j = 0; j < y.dims[a1]; ++j) {
      const Signal line = volume_line(y, t, i, j);
      Signal hr(nm);
      for (Eigen::Index s = 0; s < nm; ++s) {
        // Voxel-center mapping between the two grids.
        const double src =
            (static_cast<double>(s) + 0.5) / static_cast<double>(m) - 0.5;
        const Eigen::Index base = static_cast<Eigen::Index>(std::floor(src));
        double acc = 0.0;
        for (Eigen::Index q = base - 1; q <= base + 2; ++q) {
          const Eigen::Index cq = std::clamp<Eigen::Index>(q, 0, n - 1);
          acc += kernel(src - static_cast<double>(q)) * line[cq];
        }
        hr[s] = acc;
      }
      set_volume_line(out, t, i, j, hr);
    }
  return out;
}

Volume super_resolve(const Volume& y, const FilterBank& bank,
                     const ConvRegressor& g, const AcquisitionSpec& spec,
                     const SrOptions& options) {
  if (!y.valid()) throw std::invalid_argument("super_resolve: invalid volume");
  if (!bank.valid() || bank.m != spec.m())
    throw std::invalid_argument("super_resolve: bank does not match spec");
  if (g.m() != bank.m)
    throw std::logic_error("super_resolve: regressor does not match bank");
  if (options.patch < 1)
    throw std::invalid_argument("super_resolve: patch must be >= 1");
  const int t = spec.through_axis;
  const Eigen::Index m = bank.m;
  const Eigen::Index nt = y.dims[t];
  Volume out = upsampled_shell(y, m, t);
  Eigen::ArrayXd accum = Eigen::ArrayXd::Zero(out.size());

  const auto [p0, p1] = other_axes(t);
  for (const int a : {p0, p1}) {
    const int b = a == p0 ? p1 : p0;  // the stacking axis of this plane
    const Eigen::Index na = y.dims[a];
    const Eigen::Index tile_r = std::min(options.patch, na);
    const Eigen::Index tile_c = std::min(options.patch, nt);
    const Eigen::Index stride = options.stride > 0 ? options.stride
                                : std::max<Eigen::Index>(1, options.patch / 2);
    const auto row_starts = tile_starts(na, tile_r, stride);
    const auto col_starts = tile_starts(nt, tile_c, stride);

    for (Eigen::Index bi = 0; bi < y.dims[b]; ++bi) {
      // Coarse slice in the (a, t) plane: rows walk axis a, columns the
      // through axis.
      Image slice(na, nt);
      std::array<Eigen::Index, 3> coords{};
      coords[b] = bi;
      for (Eigen::Index r = 0; r < na; ++r) {
        coords[a] = r;
        for (Eigen::Index c = 0; c < nt; ++c) {
          coords[t] = c;
          slice(r, c) =
              static_cast<double>(y.at(coords[0], coords[1], coords[2]));
        }
      }

      std::vector<Image> details(m - 1, Image::Zero(na, nt));
      Image weight = Image::Zero(na, nt);
      for (const Eigen::Index r0 : row_starts)
        for (const Eigen::Index c0 : col_starts) {
          const Image tile = slice.block(r0, c0, tile_r, tile_c);
          const std::vector<Image> pred = g.forward(tile);
          for (Eigen::Index k = 0; k < m - 1; ++k)
            details[k].block(r0, c0, tile_r, tile_c) += pred[k];
          weight.block(r0, c0, tile_r, tile_c).array() += 1.0;
        }
      for (Eigen::Index k = 0; k < m - 1; ++k)
        details[k].array() /= weight.array();

      CoefficientSet cs;
      cs.details.resize(m - 1);
      for (Eigen::Index r = 0; r < na; ++r) {
        cs.coarse = slice.row(r).transpose().array();
        for (Eigen::Index k = 0; k < m - 1; ++k)
          cs.details[k] = details[k].row(r).transpose().array();
        const Signal hr = synthesize(cs, bank);
        coords[a] = r;
        for (Eigen::Index c = 0; c < nt * m; ++c) {
          coords[t] = c;
          accum[out.index(coords[0], coords[1], coords[2])] += hr[c];
        }
      }
    }
  }

  accum /= 2.0;  // mean of the two cardinal planes
  out.voxels = accum.cast<float>();
  return out;
}

}  // namespace fbsr
