#pragma once

#include "fbsr/filterbank.hpp"
#include "fbsr/optim.hpp"
#include "fbsr/rng.hpp"

#include <filesystem>
#include <vector>

// Stage 2: a convolutional regressor G mapping one coarse image channel to
// the M-1 missing detail channels, trained with an L1-dominant objective
// and an optional patch discriminator. Forward and backward passes are
// explicit: every convolution is an im2col + matrix product, activations
// are leaky rectifiers (slope 0.2), and there is no normalization anywhere.
//
// Feature maps are (H*W x C) matrices with pixel index n = col*H + row
// (column-major flattening of the image). Conv weights are (Cin*9 x Cout)
// with row index o*Cin + cin, where o = (dr+1)*3 + (dc+1) walks the 3x3
// neighborhood. All convolutions are stride 1, zero padding 1, so spatial
// shape is preserved end to end and any H x W input is accepted.

namespace fbsr {

struct RegressorConfig {
  Eigen::Index m = 2;
  Eigen::Index residual_blocks = 4;  // R
  Eigen::Index base_features = 8;    // F; network width is F*M
  Eigen::Index patch = 32;           // p
  bool adversarial = false;
  double adversarial_weight = 1.0;
  double lambda_l1 = 100.0;
  long steps = 10000;
  long batch_size = 4;
  double max_lr = 1e-4;
  std::uint64_t seed = 0;
};

struct TrainPair {
  Image input;                 // p x p coarse patch
  std::vector<Image> targets;  // M-1 detail patches, each p x p
};

namespace nn {

struct ConvLayer {
  Eigen::Index cin = 0;
  Eigen::Index cout = 0;
  Eigen::Index w_offset = 0;  // into the flat parameter array, column-major
  Eigen::Index b_offset = 0;

  Eigen::Index param_count() const { return cin * 9 * cout + cout; }
};

/// (H*W x 9*C) patch matrix of X under zero padding; column o*C + c holds
/// channel c shifted by the o-th neighborhood offset.
Eigen::MatrixXd im2col(const Eigen::MatrixXd& x, Eigen::Index h,
                       Eigen::Index w);

/// Adjoint of im2col: scatter-adds dxc back onto an (H*W x C) map.
void col2im_add(const Eigen::MatrixXd& dxc, Eigen::Index h, Eigen::Index w,
                Eigen::MatrixXd& dx);

}  // namespace nn

class ConvRegressor {
 public:
  ConvRegressor() = default;
  ConvRegressor(Eigen::Index m, Eigen::Index blocks, Eigen::Index features);

  /// Uniform fan-in init (bound sqrt(1/fan_in)), biases zero. With
  /// zero_final the last conv starts at zero so the initial prediction is
  /// exactly the zero-details baseline.
  void init_weights(Rng& rng, bool zero_final = true);

  Eigen::Index m() const { return m_; }
  Eigen::Index blocks() const { return blocks_; }
  Eigen::Index features() const { return features_; }
  Eigen::Index width() const { return features_ * m_; }

  Eigen::ArrayXd& params() { return params_; }
  const Eigen::ArrayXd& params() const { return params_; }

  // Everything the backward pass needs from a forward pass.
  struct Tape {
    Eigen::Index h = 0, w = 0;
    Eigen::MatrixXd in_xc;                // im2col of the input channel
    std::vector<Eigen::MatrixXd> xc1;     // per block: im2col of block input
    std::vector<Eigen::MatrixXd> pre;     // per block: pre-activation
    std::vector<Eigen::MatrixXd> xc2;     // per block: im2col of activation
    Eigen::MatrixXd out_xc;               // im2col of the body output
  };

  std::vector<Image> forward(const Image& y) const;
  std::vector<Image> forward(const Image& y, Tape& tape) const;

  /// Accumulates d(loss)/d(params) into grad (same length as params) given
  /// d(loss)/d(prediction); grad must be pre-sized and may carry earlier
  /// contributions.
  void backward(const Tape& tape, const std::vector<Image>& dpred,
                Eigen::ArrayXd& grad) const;

  const std::vector<nn::ConvLayer>& layers() const { return layers_; }

 private:
  Eigen::Index m_ = 0, blocks_ = 0, features_ = 0;
  std::vector<nn::ConvLayer> layers_;  // in, (conv1, conv2) per block, out
  Eigen::ArrayXd params_;
};

/// Conditional patch discriminator: input is the coarse channel stacked
/// with M-1 detail channels, output is a per-pixel logit map. Two
/// conv + leaky-rectifier blocks at half the generator width, then a 3x3
/// projection to one channel.
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(Eigen::Index m, Eigen::Index features);

  void init_weights(Rng& rng);

  Eigen::Index m() const { return m_; }
  Eigen::ArrayXd& params() { return params_; }
  const Eigen::ArrayXd& params() const { return params_; }

  struct Tape {
    Eigen::Index h = 0, w = 0;
    std::vector<Eigen::MatrixXd> xc;   // im2col per layer
    std::vector<Eigen::MatrixXd> pre;  // pre-activation per hidden layer
  };

  Image forward(const Image& coarse, const std::vector<Image>& details) const;
  Image forward(const Image& coarse, const std::vector<Image>& details,
                Tape& tape) const;

  /// Accumulates parameter gradients; when ddetails is non-null also
  /// returns the gradient with respect to each detail input channel (the
  /// path the generator's adversarial term flows through).
  void backward(const Tape& tape, const Image& dlogits, Eigen::ArrayXd& grad,
                std::vector<Image>* ddetails = nullptr) const;

 private:
  Eigen::Index m_ = 0, width_ = 0;
  std::vector<nn::ConvLayer> layers_;
  Eigen::ArrayXd params_;
};

struct Stage2Loss {
  double value = 0.0;             // lambda*L1 plus adversarial term if any
  std::vector<Image> dpred;       // gradient of the lambda*L1 part
  Image dlogits;                  // gradient of the adversarial term (0x0 if none)
};

/// lambda * mean|pred - target|, plus the generator's adversarial term
/// (binary cross-entropy of the logits against "real") when disc_logits is
/// given. The adversarial gradient is returned with respect to the logits;
/// chaining it through the discriminator is the trainer's job.
Stage2Loss stage2_loss(const std::vector<Image>& pred,
                       const std::vector<Image>& target, double lambda_l1,
                       const Image* disc_logits = nullptr,
                       double adversarial_weight = 0.0);

/// Mean elementwise binary cross-entropy between logits and a constant
/// label (1 = real, 0 = synthesized), with its gradient.
struct BceResult {
  double value = 0.0;
  Image dlogits;
};
BceResult bce_with_logits(const Image& logits, double label);

struct Stage2Result {
  ConvRegressor model;
  PatchDiscriminator disc;  // meaningful only when has_disc
  bool has_disc = false;
  std::vector<TraceRow> trace;
};

/// AdamW + one-cycle training over seeded minibatches (uniform with
/// replacement). The final conv starts at zero, so step 0 scores the
/// zero-details baseline. Deterministic for a fixed config.
Stage2Result train_stage2(const std::vector<TrainPair>& pairs,
                          const RegressorConfig& cfg);

// Model container "RGR1", little-endian: u32 M, p, R, F, adversarial flag,
// then the generator's f64 parameter blob (layer order: input conv, per
// block conv1 then conv2, output conv; each layer weights column-major then
// biases), then the discriminator blob when the flag is set.
void save_regressor(const Stage2Result& r, Eigen::Index patch,
                    const std::filesystem::path& path);

struct LoadedRegressor {
  ConvRegressor model;
  PatchDiscriminator disc;
  bool has_disc = false;
  Eigen::Index patch = 0;
};
LoadedRegressor load_regressor(const std::filesystem::path& path);

}  // namespace fbsr
