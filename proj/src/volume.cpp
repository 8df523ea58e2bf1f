#include "fbsr/volume.hpp"

#include "fbsr/errors.hpp"
#include "fbsr/io.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

namespace fbsr {

Volume make_volume(std::array<Eigen::Index, 3> dims,
                   std::array<float, 3> spacing) {
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw std::invalid_argument("make_volume: dims must be >= 1");
  Volume v;
  v.dims = dims;
  v.spacing = spacing;
  v.voxels = Eigen::ArrayXf::Zero(v.size());
  return v;
}

std::array<int, 2> other_axes(int axis) {
  switch (axis) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    case 2: return {0, 1};
    default: throw std::invalid_argument("other_axes: axis out of range");
  }
}

Signal volume_line(const Volume& v, int axis, Eigen::Index c0,
                   Eigen::Index c1) {
  const auto [a0, a1] = other_axes(axis);
  const Eigen::Index n = v.dims[axis];
  const Eigen::Index step = v.stride(axis);
  Eigen::Index base = 0;
  base += c0 * v.stride(a0);
  base += c1 * v.stride(a1);
  Signal out(n);
  for (Eigen::Index t = 0; t < n; ++t)
    out[t] = static_cast<double>(v.voxels[base + t * step]);
  return out;
}

void set_volume_line(Volume& v, int axis, Eigen::Index c0, Eigen::Index c1,
                     const Signal& s) {
  const auto [a0, a1] = other_axes(axis);
  if (s.size() != v.dims[axis])
    throw std::invalid_argument("set_volume_line: length mismatch");
  const Eigen::Index step = v.stride(axis);
  Eigen::Index base = c0 * v.stride(a0) + c1 * v.stride(a1);
  for (Eigen::Index t = 0; t < s.size(); ++t)
    v.voxels[base + t * step] = static_cast<float>(s[t]);
}

Image volume_slice(const Volume& v, int fixed_axis, Eigen::Index index) {
  const auto [a0, a1] = other_axes(fixed_axis);
  if (index < 0 || index >= v.dims[fixed_axis])
    throw std::invalid_argument("volume_slice: index out of range");
  Image out(v.dims[a0], v.dims[a1]);
  const Eigen::Index base = index * v.stride(fixed_axis);
  for (Eigen::Index r = 0; r < v.dims[a0]; ++r)
    for (Eigen::Index c = 0; c < v.dims[a1]; ++c)
      out(r, c) =
          static_cast<double>(v.voxels[base + r * v.stride(a0) + c * v.stride(a1)]);
  return out;
}

Kernel AcquisitionSpec::kernel() const {
  if (fwhm == 1) return unit_kernel();
  return gaussian_kernel(static_cast<double>(fwhm));
}

Volume simulate_lr(const Volume& x, const AcquisitionSpec& spec) {
  if (!x.valid()) throw std::invalid_argument("simulate_lr: invalid volume");
  if (!spec.valid()) throw std::invalid_argument("simulate_lr: invalid spec");
  const int t = spec.through_axis;
  const Eigen::Index m = spec.m();
  if (x.dims[t] % m != 0)
    throw std::invalid_argument(
        "simulate_lr: through-axis extent not divisible by M (no silent crop)");
  const Kernel kern = spec.kernel();

  std::array<Eigen::Index, 3> out_dims = x.dims;
  out_dims[t] /= m;
  std::array<float, 3> out_spacing = x.spacing;
  out_spacing[t] *= static_cast<float>(m);
  Volume y = make_volume(out_dims, out_spacing);

  const auto [a0, a1] = other_axes(t);
  for (Eigen::Index i = 0; i < x.dims[a0]; ++i)
    for (Eigen::Index j = 0; j < x.dims[a1]; ++j) {
      const Signal line = volume_line(x, t, i, j);
      const Signal blurred = convolve1d<double>(line, kern, BoundaryMode::Reflect);
      set_volume_line(y, t, i, j, decimate<double>(blurred, m));
    }
  return y;
}

std::vector<Signal> extract_lines(const Volume& y,
                                  const AcquisitionSpec& spec) {
  if (!y.valid()) throw std::invalid_argument("extract_lines: invalid volume");
  const int t = spec.through_axis;
  const auto [a0, a1] = other_axes(t);
  std::vector<Signal> lines;
  lines.reserve(2 * y.dims[t] * std::max(y.dims[a0], y.dims[a1]));
  for (Eigen::Index s = 0; s < y.dims[t]; ++s) {
    std::array<Eigen::Index, 3> coords{};
    coords[t] = s;
    for (Eigen::Index j = 0; j < y.dims[a1]; ++j) {  // lines along a0
      coords[a1] = j;
      const auto [o0, o1] = other_axes(a0);
      lines.push_back(volume_line(y, a0, coords[o0], coords[o1]));
    }
    for (Eigen::Index i = 0; i < y.dims[a0]; ++i) {  // lines along a1
      coords[a0] = i;
      const auto [o0, o1] = other_axes(a1);
      lines.push_back(volume_line(y, a1, coords[o0], coords[o1]));
    }
  }
  return lines;
}

std::vector<TrainPair> extract_patch_pairs(const Volume& y,
                                           const FilterBank& bank,
                                           const AcquisitionSpec& spec,
                                           const PatchSampler& sampler) {
  if (!y.valid())
    throw std::invalid_argument("extract_patch_pairs: invalid volume");
  if (!bank.valid())
    throw std::invalid_argument("extract_patch_pairs: invalid bank");
  if (sampler.long_axis != 0 && sampler.long_axis != 1)
    throw std::invalid_argument("extract_patch_pairs: long_axis must be 0 or 1");
  if (sampler.patch < 1 || sampler.count < 0)
    throw std::invalid_argument("extract_patch_pairs: invalid sampler");
  const int t = spec.through_axis;
  const auto [a0, a1] = other_axes(t);
  const int long_axis = sampler.long_axis == 0 ? a0 : a1;
  const int short_axis = sampler.long_axis == 0 ? a1 : a0;
  const Eigen::Index p = sampler.patch;
  const Eigen::Index m = bank.m;
  const Eigen::Index long_extent = p * m;
  // Rows are analyzed over their full (M-aligned) length and the p-wide
  // coefficient window is cropped afterwards, at a decimation-grid-aligned
  // position. Analyzing the bare p x pM window instead would bake its
  // boundary handling into the training pairs, and inference-time inputs
  // (plain crops of the observed coarse volume) never look like that.
  const Eigen::Index aligned = (y.dims[long_axis] / m) * m;
  if (y.dims[short_axis] < p || aligned < long_extent)
    throw std::invalid_argument("extract_patch_pairs: patch larger than slice");

  Rng rng(sampler.seed);
  std::vector<TrainPair> pairs;
  pairs.reserve(sampler.count);
  for (Eigen::Index n = 0; n < sampler.count; ++n) {
    const Eigen::Index s = rng.index(y.dims[t]);
    const Eigen::Index r0 =
        static_cast<Eigen::Index>(rng.below(y.dims[short_axis] - p + 1));
    const Eigen::Index c0 =
        m * static_cast<Eigen::Index>(
                rng.below((aligned - long_extent) / m + 1));
    Image rows(p, aligned);
    std::array<Eigen::Index, 3> coords{};
    coords[t] = s;
    for (Eigen::Index r = 0; r < p; ++r) {
      coords[short_axis] = r0 + r;
      for (Eigen::Index c = 0; c < aligned; ++c) {
        coords[long_axis] = c;
        rows(r, c) = static_cast<double>(y.at(coords[0], coords[1], coords[2]));
      }
    }
    const CoefficientImage ci = analyze_image(rows, bank, /*axis=*/1);
    TrainPair pair;
    pair.input = ci.coarse.block(0, c0 / m, p, p);
    pair.targets.reserve(ci.details.size());
    for (const Image& d : ci.details)
      pair.targets.push_back(d.block(0, c0 / m, p, p));
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

PhantomKind phantom_kind_from_string(const std::string& name) {
  if (name == "band_limited") return PhantomKind::BandLimited;
  if (name == "sinusoid_mix") return PhantomKind::SinusoidMix;
  if (name == "shapes") return PhantomKind::Shapes;
  throw std::invalid_argument("unknown phantom kind: " + name);
}

namespace {

void normalize01(Eigen::ArrayXd& field) {
  const double lo = field.minCoeff();
  const double hi = field.maxCoeff();
  if (hi - lo < 1e-300) {
    field.setZero();
    return;
  }
  field = (field - lo) / (hi - lo);
}

// Adds Re(amp * e^{i phase} * wx (x) wy (x) wz) to the C-ordered field.
// The cosine separates into per-axis complex factors, so the work is one
// (ny x nz) outer product plus a scaled add per x index.
void add_component(Eigen::ArrayXd& field, std::array<Eigen::Index, 3> dims,
                   std::array<int, 3> freq, double amplitude, double phase) {
  using Cplx = std::complex<double>;
  const auto [nx, ny, nz] = dims;
  Eigen::VectorXcd wy(ny), wz(nz);
  for (Eigen::Index j = 0; j < ny; ++j)
    wy[j] = std::polar(1.0, 2.0 * std::numbers::pi * freq[1] * j / double(ny));
  for (Eigen::Index k = 0; k < nz; ++k)
    wz[k] = std::polar(1.0, 2.0 * std::numbers::pi * freq[2] * k / double(nz));
  const Eigen::MatrixXcd plane = wy * wz.transpose();
  for (Eigen::Index i = 0; i < nx; ++i) {
    const Cplx ci =
        std::polar(amplitude,
                   phase + 2.0 * std::numbers::pi * freq[0] * i / double(nx));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>>
        block(field.data() + i * ny * nz, ny, nz);
    block += (ci * plane).real();
  }
}

double smoothstep(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

std::vector<SinusoidComponent> sinusoid_mix_components(
    std::array<Eigen::Index, 3> dims, std::uint64_t seed) {
  Rng rng(seed);
  std::array<long, 3> fmax;
  for (int a = 0; a < 3; ++a)
    fmax[a] = std::max<long>(dims[a] >= 4 ? 1 : 0, 3 * dims[a] / 8);
  std::vector<SinusoidComponent> comps;
  std::set<std::array<int, 3>> seen;
  const int want = 10;
  while (static_cast<int>(comps.size()) < want) {
    std::array<int, 3> f;
    for (int a = 0; a < 3; ++a)
      f[a] = static_cast<int>(rng.below(2 * fmax[a] + 1)) -
             static_cast<int>(fmax[a]);
    if (f[0] == 0 && f[1] == 0 && f[2] == 0) continue;
    // A cosine at -f is the one at f with flipped phase; canonicalize so
    // frequency triples are unique as real components.
    std::array<int, 3> canon = f;
    if (canon[0] < 0 || (canon[0] == 0 && canon[1] < 0) ||
        (canon[0] == 0 && canon[1] == 0 && canon[2] < 0))
      for (int a = 0; a < 3; ++a) canon[a] = -canon[a];
    if (!seen.insert(canon).second) continue;
    SinusoidComponent comp;
    comp.freq = canon;
    // 0.6^p with a bounded jitter keeps the first component dominant.
    comp.amplitude = std::pow(0.6, static_cast<double>(comps.size())) *
                     (1.0 + 0.2 * rng.uniform());
    comp.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    comps.push_back(comp);
  }
  return comps;
}

Volume generate_phantom(std::array<Eigen::Index, 3> dims, std::uint64_t seed,
                        PhantomKind kind) {
  if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
    throw std::invalid_argument("generate_phantom: dims must be >= 1");
  Eigen::ArrayXd field = Eigen::ArrayXd::Zero(dims[0] * dims[1] * dims[2]);
  Rng rng(seed);

  switch (kind) {
    case PhantomKind::BandLimited: {
      std::array<long, 3> fmax;
      for (int a = 0; a < 3; ++a)
        fmax[a] = std::min<long>(4, (dims[a] - 1) / 2);
      for (int c = 0; c < 48; ++c) {
        std::array<int, 3> f{};
        do {
          for (int a = 0; a < 3; ++a)
            f[a] = static_cast<int>(rng.below(2 * fmax[a] + 1)) -
                   static_cast<int>(fmax[a]);
        } while (f[0] == 0 && f[1] == 0 && f[2] == 0);
        const double f2 = double(f[0]) * f[0] + double(f[1]) * f[1] +
                          double(f[2]) * f[2];
        const double amp = rng.normal() * std::exp(-f2 / 8.0);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        add_component(field, dims, f, amp, phase);
      }
      break;
    }
    case PhantomKind::SinusoidMix: {
      for (const SinusoidComponent& comp : sinusoid_mix_components(dims, seed))
        add_component(field, dims, comp.freq, comp.amplitude, comp.phase);
      break;
    }
    case PhantomKind::Shapes: {
      struct Ellipsoid {
        std::array<double, 3> center, semi;
        double amp;
      };
      std::vector<Ellipsoid> shapes(5);
      for (Ellipsoid& e : shapes) {
        for (int a = 0; a < 3; ++a) {
          e.center[a] = rng.uniform(0.2, 0.8) * static_cast<double>(dims[a]);
          e.semi[a] =
              std::max(1.0, rng.uniform(0.12, 0.3) * static_cast<double>(dims[a]));
        }
        e.amp = rng.uniform(0.4, 1.0);
      }
      Eigen::Index at = 0;
      for (Eigen::Index i = 0; i < dims[0]; ++i)
        for (Eigen::Index j = 0; j < dims[1]; ++j)
          for (Eigen::Index k = 0; k < dims[2]; ++k, ++at) {
            double v = 0.0;
            for (const Ellipsoid& e : shapes) {
              const double dx = (i - e.center[0]) / e.semi[0];
              const double dy = (j - e.center[1]) / e.semi[1];
              const double dz = (k - e.center[2]) / e.semi[2];
              const double rho = std::sqrt(dx * dx + dy * dy + dz * dz);
              v += e.amp * smoothstep((1.0 - rho) / 0.25);
            }
            field[at] = v;
          }
      break;
    }
  }

  normalize01(field);
  Volume out = make_volume(dims);
  out.voxels = field.cast<float>();
  return out;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  if (!v.valid()) throw std::invalid_argument("save_volume: invalid volume");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_volume: cannot open " + path.string());
  io::write_magic(os, "FBV1");
  for (int a = 0; a < 3; ++a)
    io::write_u32(os, static_cast<std::uint32_t>(v.dims[a]));
  for (int a = 0; a < 3; ++a) io::write_f32(os, v.spacing[a]);
  os.write(reinterpret_cast<const char*>(v.voxels.data()),
           static_cast<std::streamsize>(sizeof(float)) * v.size());
  if (!os)
    throw std::runtime_error("save_volume: write failed for " + path.string());
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw missing_artifact("load_volume: cannot open " + path.string());
  io::expect_magic(is, "FBV1", "volume file");
  Volume v;
  for (int a = 0; a < 3; ++a) {
    v.dims[a] = io::read_u32(is, "volume dims");
    if (v.dims[a] < 1)
      throw std::runtime_error("load_volume: zero extent in " + path.string());
  }
  if (v.dims[0] * v.dims[1] * v.dims[2] > (Eigen::Index(1) << 33))
    throw std::runtime_error("load_volume: implausibly large header in " +
                             path.string());
  for (int a = 0; a < 3; ++a) {
    v.spacing[a] = io::read_f32(is, "volume spacing");
    if (!(v.spacing[a] > 0))
      throw std::runtime_error("load_volume: non-positive spacing in " +
                               path.string());
  }
  v.voxels.resize(v.size());
  const auto at = is.tellg();
  is.read(reinterpret_cast<char*>(v.voxels.data()),
          static_cast<std::streamsize>(sizeof(float)) * v.size());
  if (is.gcount() != static_cast<std::streamsize>(sizeof(float)) * v.size())
    throw std::runtime_error(
        "load_volume: truncated voxel payload at byte offset " +
        std::to_string(static_cast<long long>(at) + is.gcount()));
  is.peek();
  if (!is.eof())
    throw std::runtime_error("load_volume: trailing bytes after payload in " +
                             path.string());
  if (!v.voxels.allFinite())
    throw std::runtime_error("load_volume: non-finite voxels in " +
                             path.string());
  return v;
}

void write_pgm16(const Image& img, const std::filesystem::path& path) {
  if (img.size() == 0) throw std::invalid_argument("write_pgm16: empty image");
  const double lo = img.minCoeff();
  const double hi = img.maxCoeff();
  const double scale = hi > lo ? 65535.0 / (hi - lo) : 0.0;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm16: cannot open " + path.string());
  os << "P5\n" << img.cols() << ' ' << img.rows() << "\n65535\n";
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      const double x = (img(r, c) - lo) * scale;
      const auto q = static_cast<std::uint16_t>(std::lround(x));
      const unsigned char bytes[2] = {static_cast<unsigned char>(q >> 8),
                                      static_cast<unsigned char>(q & 0xff)};
      os.write(reinterpret_cast<const char*>(bytes), 2);
    }
  if (!os) throw std::runtime_error("write_pgm16: write failed");
  std::ofstream side(path.string() + ".minmax.txt");
  side << "min " << io::format_double(lo) << "\nmax " << io::format_double(hi)
       << '\n';
}

void save_slice_pgm(const Volume& v, int fixed_axis, Eigen::Index index,
                    const std::filesystem::path& path) {
  write_pgm16(volume_slice(v, fixed_axis, index), path);
}

}  // namespace fbsr
