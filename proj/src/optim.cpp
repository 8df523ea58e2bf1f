#include "fbsr/optim.hpp"

#include "fbsr/errors.hpp"
#include "fbsr/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace fbsr {

void adamw_step(Eigen::ArrayXd& params, const Eigen::ArrayXd& grads,
                AdamWState& state, double lr) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw std::invalid_argument("adamw_step: shape mismatch");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  params *= 1.0 - lr * state.weight_decay;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.square();
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  params -= lr * (state.m / bc1) / ((state.v / bc2).sqrt() + state.eps);
}

long OneCycleSchedule::peak_step() const {
  const long peak = std::lround(warmup_fraction * static_cast<double>(total_steps));
  return std::clamp(peak, 0L, total_steps - 1);
}

double one_cycle_lr(const OneCycleSchedule& schedule, long step) {
  if (step < 0 || step >= schedule.total_steps)
    throw std::invalid_argument("one_cycle_lr: step out of range");
  const long peak = schedule.peak_step();
  const double initial = schedule.max_lr / schedule.initial_divisor;
  const double final_lr = schedule.max_lr / schedule.final_divisor;
  if (step <= peak) {
    if (peak == 0) return schedule.max_lr;
    const double s = static_cast<double>(step) / static_cast<double>(peak);
    return initial + (schedule.max_lr - initial) *
                         (1.0 - std::cos(std::numbers::pi * s)) / 2.0;
  }
  const long span = schedule.total_steps - 1 - peak;
  const double s =
      span == 0 ? 1.0 : static_cast<double>(step - peak) / static_cast<double>(span);
  return final_lr + (schedule.max_lr - final_lr) *
                        (1.0 + std::cos(std::numbers::pi * s)) / 2.0;
}

namespace {

// Flat layout for the unfrozen taps: h_1..h_{M-1} then f_0..f_{M-1},
// L entries each. h_0 never appears.
Eigen::Index flat_size(Eigen::Index m, Eigen::Index len) {
  return (2 * m - 1) * len;
}

Eigen::ArrayXd pack_bank(const FilterBank& bank) {
  const Eigen::Index len = bank.filter_length();
  Eigen::ArrayXd flat(flat_size(bank.m, len));
  Eigen::Index at = 0;
  for (Eigen::Index k = 1; k < bank.m; ++k, at += len)
    flat.segment(at, len) = bank.analysis[k].taps;
  for (Eigen::Index k = 0; k < bank.m; ++k, at += len)
    flat.segment(at, len) = bank.synthesis[k].taps;
  return flat;
}

void unpack_bank(const Eigen::ArrayXd& flat, FilterBank& bank) {
  const Eigen::Index len = bank.filter_length();
  Eigen::Index at = 0;
  for (Eigen::Index k = 1; k < bank.m; ++k, at += len)
    bank.analysis[k].taps = flat.segment(at, len);
  for (Eigen::Index k = 0; k < bank.m; ++k, at += len)
    bank.synthesis[k].taps = flat.segment(at, len);
}

// Gradient of one signal's mean squared reconstruction error, flattened in
// pack_bank order; the signal's loss lands in `loss`.
Eigen::ArrayXd grad_one_signal(const FilterBank& bank, const Signal& x,
                               double& loss) {
  const Eigen::Index m = bank.m;
  const Eigen::Index len = bank.filter_length();
  const Eigen::Index n = x.size();
  std::vector<Signal> coeffs(m);
  for (Eigen::Index k = 0; k < m; ++k)
    coeffs[k] = decimate<double>(convolve1d<double>(x, bank.analysis[k]), m);
  Signal xr = Signal::Zero(n);
  for (Eigen::Index k = 0; k < m; ++k)
    xr += convolve1d<double>(upsample_zero<double>(coeffs[k], m),
                             bank.synthesis[k]);
  const Signal err = xr - x;
  loss = err.square().mean();
  const Signal g = (2.0 / static_cast<double>(n)) * err;

  Eigen::ArrayXd flat = Eigen::ArrayXd::Zero(flat_size(m, len));
  auto h_block = [&](Eigen::Index k) {
    return flat.segment((k - 1) * len, len);
  };
  auto f_block = [&](Eigen::Index k) {
    return flat.segment((m - 1 + k) * len, len);
  };

  const Eigen::Index nc = coeffs[0].size();
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::Index cf = bank.synthesis[k].center;
    const Eigen::Index ca = bank.analysis[k].center;
    // d loss / d f_k[j]: correlate g with the upsampled coefficients;
    // only multiples of M carry nonzeros, so iterate coefficients.
    auto fb = f_block(k);
    for (Eigen::Index j = 0; j < len; ++j) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < nc; ++i) {
        const Eigen::Index pos = m * i + j - cf;
        if (pos >= 0 && pos < n) acc += coeffs[k][i] * g[pos];
      }
      fb[j] = acc;
    }
    if (k == 0) continue;  // h_0 frozen: no gradient is ever formed
    // d loss / d c_k[i] via the synthesis filter, then chain into h_k taps.
    Signal r(nc);
    const auto& ftaps = bank.synthesis[k].taps;
    for (Eigen::Index i = 0; i < nc; ++i) {
      double acc = 0.0;
      const Eigen::Index lo = std::max<Eigen::Index>(0, m * i - cf);
      const Eigen::Index hi = std::min<Eigen::Index>(n - 1, m * i - cf + len - 1);
      for (Eigen::Index pos = lo; pos <= hi; ++pos)
        acc += ftaps[pos - m * i + cf] * g[pos];
      r[i] = acc;
    }
    auto hb = h_block(k);
    for (Eigen::Index j = 0; j < len; ++j) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < nc; ++i) {
        const Eigen::Index pos = m * i - j + ca;
        if (pos >= 0 && pos < n) acc += r[i] * x[pos];
      }
      hb[j] = acc;
    }
  }
  return flat;
}

// Fixed pairwise tree: adjacent pairs combine each round, a trailing odd
// element passes through. The reduction order never depends on worker
// count, which keeps training bit-reproducible.
template <typename T>
T tree_reduce(std::vector<T> items) {
  while (items.size() > 1) {
    std::size_t out = 0;
    for (std::size_t i = 0; i + 1 < items.size(); i += 2)
      items[out++] = items[i] + items[i + 1];
    if (items.size() % 2 == 1) items[out++] = items.back();
    items.resize(out);
  }
  return items.front();
}

}  // namespace

FilterGradients grad_filters(const FilterBank& bank,
                             const std::vector<Signal>& batch) {
  if (!bank.valid()) throw std::invalid_argument("grad_filters: invalid bank");
  if (batch.empty()) throw std::invalid_argument("grad_filters: empty batch");
  for (const Signal& x : batch)
    if (x.size() % bank.m != 0)
      throw std::invalid_argument(
          "grad_filters: signal length not divisible by M");

  std::vector<Eigen::ArrayXd> per_signal;
  std::vector<double> losses;
  per_signal.reserve(batch.size());
  losses.reserve(batch.size());
  for (const Signal& x : batch) {
    double loss = 0.0;
    per_signal.push_back(grad_one_signal(bank, x, loss));
    losses.push_back(loss);
  }
  const double b = static_cast<double>(batch.size());
  const Eigen::ArrayXd flat = tree_reduce(std::move(per_signal)) / b;

  const Eigen::Index len = bank.filter_length();
  FilterGradients out;
  out.loss = tree_reduce(std::move(losses)) / b;
  out.h.resize(bank.m);
  out.f.resize(bank.m);
  for (Eigen::Index k = 1; k < bank.m; ++k)
    out.h[k] = flat.segment((k - 1) * len, len);
  for (Eigen::Index k = 0; k < bank.m; ++k)
    out.f[k] = flat.segment((bank.m - 1 + k) * len, len);
  return out;
}

Stage1Result train_stage1(const std::vector<Signal>& lines, const Kernel& h0,
                          Eigen::Index m, const Stage1Config& cfg) {
  if (lines.empty()) throw std::invalid_argument("train_stage1: empty dataset");
  if (m < 2) throw std::invalid_argument("train_stage1: M must be >= 2");
  if (cfg.steps < 1 || cfg.batch_size < 1 || cfg.max_lr <= 0.0)
    throw std::invalid_argument("train_stage1: non-positive config");
  const Eigen::Index len =
      cfg.filter_length > 0 ? cfg.filter_length : default_filter_length(m);
  if (len < h0.size())
    throw std::invalid_argument(
        "train_stage1: filter length shorter than prototype");
  for (const Signal& line : lines)
    if (line.size() < 2 * len)
      throw std::invalid_argument("train_stage1: line shorter than 2*L");

  Stage1Result result;
  result.bank = cosine_modulated_init(pad_kernel(h0, len), m);
  result.trace.reserve(cfg.steps);

  // Detail filters on both sides are held zero-mean (projected after every
  // update). Zero-mean analysis makes constant signals yield exactly zero
  // detail coefficients; zero-mean synthesis makes the detail channels
  // DC-neutral no matter what coefficients they are fed. Together they pin
  // the signal mean to the coarse path, which near-PR then calibrates to
  // unit DC gain. Plain reconstruction training leaves that split free,
  // and the zero-detail baseline and constant-input behavior depend on it.
  const auto project_detail_dc = [m, len](Eigen::ArrayXd& p) {
    for (Eigen::Index k = 1; k < m; ++k) {
      auto h_seg = p.segment((k - 1) * len, len);
      h_seg -= h_seg.mean();
      auto f_seg = p.segment((m - 1 + k) * len, len);
      f_seg -= f_seg.mean();
    }
  };

  Eigen::ArrayXd params = pack_bank(result.bank);
  project_detail_dc(params);
  unpack_bank(params, result.bank);
  AdamWState state(params.size());
  OneCycleSchedule sched;
  sched.max_lr = cfg.max_lr;
  sched.total_steps = cfg.steps;
  Rng rng(cfg.seed);

  std::vector<Signal> batch(cfg.batch_size);
  for (long step = 0; step < cfg.steps; ++step) {
    for (long bi = 0; bi < cfg.batch_size; ++bi) {
      const Signal& line = lines[rng.index(lines.size())];
      const Eigen::Index cropped = (line.size() / m) * m;
      const Eigen::Index offset =
          static_cast<Eigen::Index>(rng.below(line.size() - cropped + 1));
      batch[bi] = line.segment(offset, cropped);
    }
    const FilterGradients g = grad_filters(result.bank, batch);
    if (!std::isfinite(g.loss))
      throw numerical_error("train_stage1: non-finite loss at step " +
                            std::to_string(step));
    Eigen::ArrayXd flat_g(params.size());
    Eigen::Index at = 0;
    for (Eigen::Index k = 1; k < m; ++k, at += len)
      flat_g.segment(at, len) = g.h[k];
    for (Eigen::Index k = 0; k < m; ++k, at += len)
      flat_g.segment(at, len) = g.f[k];
    const double lr = one_cycle_lr(sched, step);
    adamw_step(params, flat_g, state, lr);
    project_detail_dc(params);
    unpack_bank(params, result.bank);
    result.trace.push_back({step, lr, g.loss});
  }
  return result;
}

void save_trace_csv(const std::vector<TraceRow>& trace,
                    const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_trace_csv: cannot open " + path.string());
  os << "step,lr,loss\n";
  for (const TraceRow& row : trace)
    os << row.step << ',' << io::format_double(row.lr) << ','
       << io::format_double(row.loss) << '\n';
  if (!os) throw std::runtime_error("save_trace_csv: write failed");
}

}  // namespace fbsr
