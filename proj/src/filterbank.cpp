#include "fbsr/filterbank.hpp"

#include "fbsr/io.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace fbsr {

bool FilterBank::valid() const {
  if (m < 1) return false;
  if (analysis.size() != static_cast<std::size_t>(m)) return false;
  if (synthesis.size() != static_cast<std::size_t>(m)) return false;
  const Eigen::Index len = analysis.front().size();
  for (const auto& k : analysis)
    if (!k.valid() || k.size() != len) return false;
  for (const auto& k : synthesis)
    if (!k.valid() || k.size() != len) return false;
  return true;
}

Kernel pad_kernel(const Kernel& k, Eigen::Index length) {
  if (!k.valid()) throw std::invalid_argument("pad_kernel: invalid kernel");
  if (length < k.size())
    throw std::invalid_argument("pad_kernel: target length shorter than kernel");
  const Eigen::Index left = (length - k.size()) / 2;
  Kernel out;
  out.taps = Eigen::ArrayXd::Zero(length);
  out.taps.segment(left, k.size()) = k.taps;
  out.center = k.center + left;
  return out;
}

FilterBank cosine_modulated_init(const Kernel& h0, Eigen::Index m) {
  if (m < 2) throw std::invalid_argument("cosine_modulated_init: M must be >= 2");
  if (!h0.valid())
    throw std::invalid_argument("cosine_modulated_init: invalid prototype");
  const Eigen::Index len = h0.size();
  const double md = static_cast<double>(m);
  FilterBank bank;
  bank.m = m;
  bank.h0_frozen = true;
  bank.analysis.resize(m);
  bank.synthesis.resize(m);
  bank.analysis[0] = h0;
  for (Eigen::Index k = 1; k < m; ++k) {
    Kernel hk;
    hk.taps.resize(len);
    hk.center = h0.center;
    const double kd = static_cast<double>(k) + 0.5;
    for (Eigen::Index n = 0; n < len; ++n) {
      const double phase =
          kd * (static_cast<double>(n) + (md + 1.0) / 2.0) * std::numbers::pi / md;
      hk.taps[n] = h0.taps[n] * std::sqrt(2.0 / md) * std::cos(phase);
    }
    bank.analysis[k] = hk;
  }
  for (Eigen::Index k = 0; k < m; ++k) {
    Kernel fk;
    fk.taps = bank.analysis[k].taps;  // bit-exact copy at init
    fk.center = len - 1 - h0.center;  // zero-delay pairing
    bank.synthesis[k] = fk;
  }
  return bank;
}

CoefficientSet analyze(const Signal& x, const FilterBank& bank) {
  if (!bank.valid()) throw std::invalid_argument("analyze: invalid bank");
  if (x.size() % bank.m != 0)
    throw std::invalid_argument("analyze: signal length not divisible by M");
  CoefficientSet c;
  c.coarse = decimate<double>(convolve1d<double>(x, bank.analysis[0]), bank.m);
  c.details.resize(bank.m - 1);
  for (Eigen::Index k = 1; k < bank.m; ++k)
    c.details[k - 1] =
        decimate<double>(convolve1d<double>(x, bank.analysis[k]), bank.m);
  return c;
}

Signal synthesize(const CoefficientSet& c, const FilterBank& bank) {
  if (!bank.valid()) throw std::invalid_argument("synthesize: invalid bank");
  if (c.channels() != bank.m)
    throw std::invalid_argument("synthesize: channel count does not match bank");
  const Eigen::Index n = c.coarse.size();
  for (const auto& d : c.details)
    if (d.size() != n)
      throw std::invalid_argument("synthesize: channel shape mismatch");
  Signal out =
      convolve1d<double>(upsample_zero<double>(c.coarse, bank.m), bank.synthesis[0]);
  for (Eigen::Index k = 1; k < bank.m; ++k)
    out += convolve1d<double>(upsample_zero<double>(c.details[k - 1], bank.m),
                              bank.synthesis[k]);
  return out;
}

CoefficientImage analyze_image(const Image& img, const FilterBank& bank,
                               int axis) {
  if (axis != 0 && axis != 1)
    throw std::invalid_argument("analyze_image: axis must be 0 or 1");
  const Eigen::Index extent = axis == 1 ? img.cols() : img.rows();
  if (extent % bank.m != 0)
    throw std::invalid_argument("analyze_image: extent not divisible by M");
  const Eigen::Index out_extent = extent / bank.m;
  CoefficientImage out;
  if (axis == 1) {
    out.coarse.resize(img.rows(), out_extent);
    out.details.assign(bank.m - 1, Image(img.rows(), out_extent));
    for (Eigen::Index r = 0; r < img.rows(); ++r) {
      const Signal line = img.row(r).transpose().array();
      const CoefficientSet c = analyze(line, bank);
      out.coarse.row(r) = c.coarse.matrix().transpose();
      for (Eigen::Index k = 1; k < bank.m; ++k)
        out.details[k - 1].row(r) = c.details[k - 1].matrix().transpose();
    }
  } else {
    out.coarse.resize(out_extent, img.cols());
    out.details.assign(bank.m - 1, Image(out_extent, img.cols()));
    for (Eigen::Index col = 0; col < img.cols(); ++col) {
      const Signal line = img.col(col).array();
      const CoefficientSet c = analyze(line, bank);
      out.coarse.col(col) = c.coarse.matrix();
      for (Eigen::Index k = 1; k < bank.m; ++k)
        out.details[k - 1].col(col) = c.details[k - 1].matrix();
    }
  }
  return out;
}

double pr_error(const FilterBank& bank, const std::vector<Signal>& probes) {
  if (probes.empty()) throw std::invalid_argument("pr_error: empty probe list");
  double total = 0.0;
  for (const Signal& x : probes) {
    const Signal xr = synthesize(analyze(x, bank), bank);
    total += (xr - x).square().mean();
  }
  return total / static_cast<double>(probes.size());
}

namespace {

Kernel make_kernel(std::initializer_list<double> taps, Eigen::Index center) {
  Kernel k;
  k.taps.resize(static_cast<Eigen::Index>(taps.size()));
  Eigen::Index i = 0;
  for (double t : taps) k.taps[i++] = t;
  k.center = center;
  return k;
}

}  // namespace

FilterBank haar_bank() {
  const double a = 1.0 / std::sqrt(2.0);
  FilterBank bank;
  bank.m = 2;
  // Analysis centered on the later tap and synthesis on the earlier one
  // keeps every read in range, so reconstruction is exact at both ends.
  bank.analysis = {make_kernel({a, a}, 1), make_kernel({a, -a}, 1)};
  bank.synthesis = {make_kernel({a, a}, 0), make_kernel({-a, a}, 0)};
  bank.h0_frozen = true;
  return bank;
}

FilterBank haar_bank_exact() {
  FilterBank bank;
  bank.m = 2;
  bank.analysis = {make_kernel({0.5, 0.5}, 1), make_kernel({0.5, -0.5}, 1)};
  bank.synthesis = {make_kernel({1.0, 1.0}, 0), make_kernel({-1.0, 1.0}, 0)};
  bank.h0_frozen = true;
  return bank;
}

void save_bank(const FilterBank& bank, const std::filesystem::path& path) {
  if (!bank.valid()) throw std::invalid_argument("save_bank: invalid bank");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_bank: cannot open " + path.string());
  io::write_magic(os, "FBK1");
  io::write_u32(os, static_cast<std::uint32_t>(bank.m));
  io::write_u32(os, static_cast<std::uint32_t>(bank.filter_length()));
  for (const auto& k : bank.analysis)
    for (Eigen::Index i = 0; i < k.size(); ++i) io::write_f64(os, k.taps[i]);
  for (const auto& k : bank.synthesis)
    for (Eigen::Index i = 0; i < k.size(); ++i) io::write_f64(os, k.taps[i]);
  for (const auto& k : bank.analysis)
    io::write_u32(os, static_cast<std::uint32_t>(k.center));
  for (const auto& k : bank.synthesis)
    io::write_u32(os, static_cast<std::uint32_t>(k.center));
  if (!os) throw std::runtime_error("save_bank: write failed for " + path.string());
}

FilterBank load_bank(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_bank: cannot open " + path.string());
  io::expect_magic(is, "FBK1", "bank file");
  FilterBank bank;
  bank.m = io::read_u32(is, "bank channel count");
  const Eigen::Index len = io::read_u32(is, "bank filter length");
  if (bank.m < 1 || len < 1)
    throw std::runtime_error("load_bank: degenerate header in " + path.string());
  bank.analysis.resize(bank.m);
  bank.synthesis.resize(bank.m);
  for (auto* side : {&bank.analysis, &bank.synthesis}) {
    for (auto& k : *side) {
      k.taps.resize(len);
      for (Eigen::Index i = 0; i < len; ++i)
        k.taps[i] = io::read_f64(is, "bank taps");
    }
  }
  for (auto* side : {&bank.analysis, &bank.synthesis}) {
    for (auto& k : *side) {
      k.center = io::read_u32(is, "bank centers");
      if (k.center >= len)
        throw std::runtime_error("load_bank: center out of range in " +
                                 path.string());
    }
  }
  bank.h0_frozen = true;
  return bank;
}

}  // namespace fbsr
