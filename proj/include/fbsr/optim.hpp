#pragma once

#include "fbsr/filterbank.hpp"
#include "fbsr/rng.hpp"

#include <filesystem>
#include <vector>

// Stage 1 training: complete a bank around the frozen prototype h_0 by
// minimizing mean squared reconstruction error over 1D lines. Gradients are
// analytic, assembled from the adjoints of the linear stages (transposed
// centered convolution, zero-insertion as the adjoint of decimation), so no
// autodiff machinery is involved.

namespace fbsr {

struct AdamWState {
  Eigen::ArrayXd m;  // first moment
  Eigen::ArrayXd v;  // second moment
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;

  explicit AdamWState(Eigen::Index n = 0)
      : m(Eigen::ArrayXd::Zero(n)), v(Eigen::ArrayXd::Zero(n)) {}
};

/// One decoupled-weight-decay Adam update, in place. Decay is applied to the
/// parameters directly (params *= 1 - lr*wd) before the bias-corrected
/// moment step, so a zero gradient still shrinks weights.
void adamw_step(Eigen::ArrayXd& params, const Eigen::ArrayXd& grads,
                AdamWState& state, double lr);

struct OneCycleSchedule {
  double max_lr = 0.1;
  long total_steps = 1;
  double warmup_fraction = 0.3;
  double initial_divisor = 25.0;
  double final_divisor = 1e4;

  /// Step at which the schedule attains max_lr.
  long peak_step() const;
};

/// Cosine warmup from max_lr/initial_divisor to max_lr at peak_step(), then
/// cosine annealing down to max_lr/final_divisor at the last step.
double one_cycle_lr(const OneCycleSchedule& schedule, long step);

/// Gradients of the batch-mean reconstruction MSE with respect to every
/// unfrozen tap. h[0] stays empty: the prototype is frozen and no state is
/// ever allocated for it.
struct FilterGradients {
  std::vector<Eigen::ArrayXd> h;  // h[0] unused (size 0), h[1..M-1] live
  std::vector<Eigen::ArrayXd> f;  // f[0..M-1]
  double loss = 0.0;
};

FilterGradients grad_filters(const FilterBank& bank,
                             const std::vector<Signal>& batch);

struct Stage1Config {
  long steps = 100000;
  long batch_size = 32;
  double max_lr = 0.1;
  std::uint64_t seed = 0;
  Eigen::Index filter_length = 0;  // 0: default_filter_length(M)
};

struct TraceRow {
  long step;
  double lr;
  double loss;
};

struct Stage1Result {
  FilterBank bank;
  std::vector<TraceRow> trace;  // one row per step
};

/// Initializes via cosine_modulated_init on h0 padded to the configured
/// length and trains all unfrozen taps with AdamW under a one-cycle
/// schedule. Detail filters on both sides are projected to zero mean after
/// every update, which pins the DC of the signal to the coarse channel;
/// reconstruction quality alone does not determine that split. Minibatches
/// are drawn uniformly with replacement; lines whose length is not
/// divisible by M are cropped to an aligned window at a seeded random
/// offset. Deterministic for a fixed config.
Stage1Result train_stage1(const std::vector<Signal>& lines, const Kernel& h0,
                          Eigen::Index m, const Stage1Config& cfg);

/// Loss trace as CSV with header "step,lr,loss".
void save_trace_csv(const std::vector<TraceRow>& trace,
                    const std::filesystem::path& path);

}  // namespace fbsr
