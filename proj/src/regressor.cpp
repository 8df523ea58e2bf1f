#include "fbsr/regressor.hpp"

#include "fbsr/errors.hpp"
#include "fbsr/io.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <utility>

namespace fbsr {

namespace nn {

Eigen::MatrixXd im2col(const Eigen::MatrixXd& x, Eigen::Index h,
                       Eigen::Index w) {
  const Eigen::Index c = x.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(h * w, 9 * c);
  for (Eigen::Index o = 0; o < 9; ++o) {
    const Eigen::Index dr = o / 3 - 1;
    const Eigen::Index dc = o % 3 - 1;
    const Eigen::Index rlo = std::max<Eigen::Index>(0, -dr);
    const Eigen::Index rhi = h - std::max<Eigen::Index>(0, dr);
    const Eigen::Index clo = std::max<Eigen::Index>(0, -dc);
    const Eigen::Index chi = w - std::max<Eigen::Index>(0, dc);
    if (rhi <= rlo || chi <= clo) continue;
    const Eigen::Index nr = rhi - rlo;
    for (Eigen::Index col = clo; col < chi; ++col)
      out.block(col * h + rlo, o * c, nr, c) =
          x.block((col + dc) * h + rlo + dr, 0, nr, c);
  }
  return out;
}

void col2im_add(const Eigen::MatrixXd& dxc, Eigen::Index h, Eigen::Index w,
                Eigen::MatrixXd& dx) {
  const Eigen::Index c = dx.cols();
  for (Eigen::Index o = 0; o < 9; ++o) {
    const Eigen::Index dr = o / 3 - 1;
    const Eigen::Index dc = o % 3 - 1;
    const Eigen::Index rlo = std::max<Eigen::Index>(0, -dr);
    const Eigen::Index rhi = h - std::max<Eigen::Index>(0, dr);
    const Eigen::Index clo = std::max<Eigen::Index>(0, -dc);
    const Eigen::Index chi = w - std::max<Eigen::Index>(0, dc);
    if (rhi <= rlo || chi <= clo) continue;
    const Eigen::Index nr = rhi - rlo;
    for (Eigen::Index col = clo; col < chi; ++col)
      dx.block((col + dc) * h + rlo + dr, 0, nr, c) +=
          dxc.block(col * h + rlo, o * c, nr, c);
  }
}

}  // namespace nn

namespace {

constexpr double kLeakySlope = 0.2;

using Eigen::MatrixXd;
using MapW = Eigen::Map<MatrixXd>;
using MapWc = Eigen::Map<const MatrixXd>;
using MapB = Eigen::Map<Eigen::RowVectorXd>;
using MapBc = Eigen::Map<const Eigen::RowVectorXd>;

MapWc weight_of(const Eigen::ArrayXd& params, const nn::ConvLayer& l) {
  return MapWc(params.data() + l.w_offset, l.cin * 9, l.cout);
}
MapBc bias_of(const Eigen::ArrayXd& params, const nn::ConvLayer& l) {
  return MapBc(params.data() + l.b_offset, l.cout);
}
MapW weight_of(Eigen::ArrayXd& params, const nn::ConvLayer& l) {
  return MapW(params.data() + l.w_offset, l.cin * 9, l.cout);
}
MapB bias_of(Eigen::ArrayXd& params, const nn::ConvLayer& l) {
  return MapB(params.data() + l.b_offset, l.cout);
}

MatrixXd lrelu(const MatrixXd& pre) {
  return pre.array().max(0.0).matrix() +
         kLeakySlope * pre.array().min(0.0).matrix();
}

MatrixXd lrelu_backward(const MatrixXd& pre, const MatrixXd& dpost) {
  return ((pre.array() > 0.0).cast<double>() * (1.0 - kLeakySlope) +
          kLeakySlope)
             .matrix()
             .cwiseProduct(dpost);
}

MatrixXd stack_channels(const Image& first, const std::vector<Image>& rest) {
  const Eigen::Index hw = first.size();
  MatrixXd x(hw, 1 + static_cast<Eigen::Index>(rest.size()));
  x.col(0) = Eigen::Map<const Eigen::VectorXd>(first.data(), hw);
  for (std::size_t k = 0; k < rest.size(); ++k)
    x.col(1 + static_cast<Eigen::Index>(k)) =
        Eigen::Map<const Eigen::VectorXd>(rest[k].data(), hw);
  return x;
}

Image column_to_image(const Eigen::VectorXd& col, Eigen::Index h,
                      Eigen::Index w) {
  return Eigen::Map<const MatrixXd>(col.data(), h, w);
}

std::vector<nn::ConvLayer> layout_layers(
    const std::vector<std::pair<Eigen::Index, Eigen::Index>>& shapes,
    Eigen::Index& total) {
  std::vector<nn::ConvLayer> layers;
  layers.reserve(shapes.size());
  total = 0;
  for (auto [cin, cout] : shapes) {
    nn::ConvLayer l;
    l.cin = cin;
    l.cout = cout;
    l.w_offset = total;
    total += cin * 9 * cout;
    l.b_offset = total;
    total += cout;
    layers.push_back(l);
  }
  return layers;
}

void init_layer(Eigen::ArrayXd& params, const nn::ConvLayer& l, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(l.cin * 9));
  for (Eigen::Index i = 0; i < l.cin * 9 * l.cout; ++i)
    params[l.w_offset + i] = rng.uniform(-bound, bound);
  for (Eigen::Index i = 0; i < l.cout; ++i) params[l.b_offset + i] = 0.0;
}

void zero_layer(Eigen::ArrayXd& params, const nn::ConvLayer& l) {
  params.segment(l.w_offset, l.param_count()).setZero();
}

// Fixed pairwise tree, identical to the stage 1 reduction.
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

ConvRegressor::ConvRegressor(Eigen::Index m, Eigen::Index blocks,
                             Eigen::Index features)
    : m_(m), blocks_(blocks), features_(features) {
  if (m < 2 || blocks < 1 || features < 1)
    throw std::invalid_argument("ConvRegressor: M >= 2, R >= 1, F >= 1 required");
  const Eigen::Index w = width();
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
  shapes.emplace_back(1, w);
  for (Eigen::Index r = 0; r < blocks; ++r) {
    shapes.emplace_back(w, w);
    shapes.emplace_back(w, w);
  }
  shapes.emplace_back(w, m - 1);
  Eigen::Index total = 0;
  layers_ = layout_layers(shapes, total);
  params_ = Eigen::ArrayXd::Zero(total);
}

void ConvRegressor::init_weights(Rng& rng, bool zero_final) {
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i)
    init_layer(params_, layers_[i], rng);
  if (zero_final)
    zero_layer(params_, layers_.back());
  else
    init_layer(params_, layers_.back(), rng);
}

std::vector<Image> ConvRegressor::forward(const Image& y) const {
  Tape scratch;
  return forward(y, scratch);
}

std::vector<Image> ConvRegressor::forward(const Image& y, Tape& tape) const {
  if (layers_.empty()) throw std::logic_error("ConvRegressor: uninitialized");
  if (y.size() == 0) throw std::invalid_argument("ConvRegressor: empty input");
  const Eigen::Index h = y.rows();
  const Eigen::Index w = y.cols();
  tape.h = h;
  tape.w = w;
  tape.xc1.assign(blocks_, {});
  tape.pre.assign(blocks_, {});
  tape.xc2.assign(blocks_, {});

  MatrixXd x0(h * w, 1);
  x0.col(0) = Eigen::Map<const Eigen::VectorXd>(y.data(), h * w);
  tape.in_xc = nn::im2col(x0, h, w);
  MatrixXd body;
  body.noalias() = tape.in_xc * weight_of(params_, layers_[0]);
  body.rowwise() += bias_of(params_, layers_[0]);

  for (Eigen::Index r = 0; r < blocks_; ++r) {
    const auto& c1 = layers_[1 + 2 * r];
    const auto& c2 = layers_[2 + 2 * r];
    tape.xc1[r] = nn::im2col(body, h, w);
    tape.pre[r].noalias() = tape.xc1[r] * weight_of(params_, c1);
    tape.pre[r].rowwise() += bias_of(params_, c1);
    tape.xc2[r] = nn::im2col(lrelu(tape.pre[r]), h, w);
    MatrixXd t;
    t.noalias() = tape.xc2[r] * weight_of(params_, c2);
    t.rowwise() += bias_of(params_, c2);
    body += t;
  }

  tape.out_xc = nn::im2col(body, h, w);
  MatrixXd out;
  out.noalias() = tape.out_xc * weight_of(params_, layers_.back());
  out.rowwise() += bias_of(params_, layers_.back());

  std::vector<Image> pred(m_ - 1);
  for (Eigen::Index k = 0; k < m_ - 1; ++k)
    pred[k] = column_to_image(out.col(k), h, w);
  return pred;
}

void ConvRegressor::backward(const Tape& tape, const std::vector<Image>& dpred,
                             Eigen::ArrayXd& grad) const {
  if (grad.size() != params_.size())
    throw std::invalid_argument("ConvRegressor::backward: grad size mismatch");
  if (dpred.size() != static_cast<std::size_t>(m_ - 1))
    throw std::invalid_argument("ConvRegressor::backward: channel mismatch");
  const Eigen::Index h = tape.h;
  const Eigen::Index w = tape.w;
  MatrixXd dout(h * w, m_ - 1);
  for (Eigen::Index k = 0; k < m_ - 1; ++k)
    dout.col(k) = Eigen::Map<const Eigen::VectorXd>(dpred[k].data(), h * w);

  const auto& out_layer = layers_.back();
  weight_of(grad, out_layer).noalias() += tape.out_xc.transpose() * dout;
  bias_of(grad, out_layer) += dout.colwise().sum();
  MatrixXd dbody = MatrixXd::Zero(h * w, width());
  nn::col2im_add(dout * weight_of(params_, out_layer).transpose(), h, w, dbody);

  for (Eigen::Index r = blocks_ - 1; r >= 0; --r) {
    const auto& c1 = layers_[1 + 2 * r];
    const auto& c2 = layers_[2 + 2 * r];
    // The skip connection routes dbody to the block input unchanged; the
    // conv path contribution is added on top below.
    weight_of(grad, c2).noalias() += tape.xc2[r].transpose() * dbody;
    bias_of(grad, c2) += dbody.colwise().sum();
    MatrixXd dact = MatrixXd::Zero(h * w, width());
    nn::col2im_add(dbody * weight_of(params_, c2).transpose(), h, w, dact);
    const MatrixXd dpre = lrelu_backward(tape.pre[r], dact);
    weight_of(grad, c1).noalias() += tape.xc1[r].transpose() * dpre;
    bias_of(grad, c1) += dpre.colwise().sum();
    nn::col2im_add(dpre * weight_of(params_, c1).transpose(), h, w, dbody);
  }

  const auto& in_layer = layers_[0];
  weight_of(grad, in_layer).noalias() += tape.in_xc.transpose() * dbody;
  bias_of(grad, in_layer) += dbody.colwise().sum();
}

PatchDiscriminator::PatchDiscriminator(Eigen::Index m, Eigen::Index features)
    : m_(m) {
  if (m < 2 || features < 1)
    throw std::invalid_argument("PatchDiscriminator: M >= 2, F >= 1 required");
  width_ = std::max<Eigen::Index>(1, features * m / 2);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes = {
      {m, width_}, {width_, width_}, {width_, 1}};
  Eigen::Index total = 0;
  layers_ = layout_layers(shapes, total);
  params_ = Eigen::ArrayXd::Zero(total);
}

void PatchDiscriminator::init_weights(Rng& rng) {
  for (const auto& l : layers_) init_layer(params_, l, rng);
}

Image PatchDiscriminator::forward(const Image& coarse,
                                  const std::vector<Image>& details) const {
  Tape scratch;
  return forward(coarse, details, scratch);
}

Image PatchDiscriminator::forward(const Image& coarse,
                                  const std::vector<Image>& details,
                                  Tape& tape) const {
  if (layers_.empty()) throw std::logic_error("PatchDiscriminator: uninitialized");
  if (details.size() != static_cast<std::size_t>(m_ - 1))
    throw std::invalid_argument("PatchDiscriminator: channel count mismatch");
  for (const Image& d : details)
    if (d.rows() != coarse.rows() || d.cols() != coarse.cols())
      throw std::invalid_argument("PatchDiscriminator: channel shape mismatch");
  const Eigen::Index h = coarse.rows();
  const Eigen::Index w = coarse.cols();
  tape.h = h;
  tape.w = w;
  tape.xc.assign(3, {});
  tape.pre.assign(2, {});

  MatrixXd x = stack_channels(coarse, details);
  for (int i = 0; i < 2; ++i) {
    tape.xc[i] = nn::im2col(x, h, w);
    tape.pre[i].noalias() = tape.xc[i] * weight_of(params_, layers_[i]);
    tape.pre[i].rowwise() += bias_of(params_, layers_[i]);
    x = lrelu(tape.pre[i]);
  }
  tape.xc[2] = nn::im2col(x, h, w);
  MatrixXd logits;
  logits.noalias() = tape.xc[2] * weight_of(params_, layers_[2]);
  logits.rowwise() += bias_of(params_, layers_[2]);
  return column_to_image(logits.col(0), h, w);
}

void PatchDiscriminator::backward(const Tape& tape, const Image& dlogits,
                                  Eigen::ArrayXd& grad,
                                  std::vector<Image>* ddetails) const {
  if (grad.size() != params_.size())
    throw std::invalid_argument("PatchDiscriminator::backward: grad size mismatch");
  const Eigen::Index h = tape.h;
  const Eigen::Index w = tape.w;
  MatrixXd dy(h * w, 1);
  dy.col(0) = Eigen::Map<const Eigen::VectorXd>(dlogits.data(), h * w);

  weight_of(grad, layers_[2]).noalias() += tape.xc[2].transpose() * dy;
  bias_of(grad, layers_[2]) += dy.colwise().sum();
  MatrixXd dcur = MatrixXd::Zero(h * w, width_);
  nn::col2im_add(dy * weight_of(params_, layers_[2]).transpose(), h, w, dcur);

  for (int i = 1; i >= 0; --i) {
    const MatrixXd dpre = lrelu_backward(tape.pre[i], dcur);
    weight_of(grad, layers_[i]).noalias() += tape.xc[i].transpose() * dpre;
    bias_of(grad, layers_[i]) += dpre.colwise().sum();
    const Eigen::Index cin = layers_[i].cin;
    dcur = MatrixXd::Zero(h * w, cin);
    nn::col2im_add(dpre * weight_of(params_, layers_[i]).transpose(), h, w, dcur);
  }
  if (ddetails) {
    ddetails->resize(m_ - 1);
    for (Eigen::Index k = 0; k < m_ - 1; ++k)
      (*ddetails)[k] = column_to_image(dcur.col(1 + k), h, w);
  }
}

Stage2Loss stage2_loss(const std::vector<Image>& pred,
                       const std::vector<Image>& target, double lambda_l1,
                       const Image* disc_logits, double adversarial_weight) {
  if (pred.size() != target.size() || pred.empty())
    throw std::invalid_argument("stage2_loss: channel count mismatch");
  Eigen::Index count = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].rows() != target[k].rows() || pred[k].cols() != target[k].cols())
      throw std::invalid_argument("stage2_loss: channel shape mismatch");
    count += pred[k].size();
  }
  Stage2Loss out;
  out.dpred.resize(pred.size());
  const double scale = lambda_l1 / static_cast<double>(count);
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const Image diff = pred[k] - target[k];
    out.value += scale * diff.array().abs().sum();
    out.dpred[k] = scale * diff.array().sign().matrix();
  }
  if (disc_logits) {
    const BceResult adv = bce_with_logits(*disc_logits, 1.0);
    out.value += adversarial_weight * adv.value;
    out.dlogits = adversarial_weight * adv.dlogits;
  }
  return out;
}

BceResult bce_with_logits(const Image& logits, double label) {
  BceResult out;
  const double count = static_cast<double>(logits.size());
  const auto x = logits.array();
  // max(x,0) - x*label + log(1 + exp(-|x|)) is the overflow-safe form.
  out.value =
      (x.max(0.0) - x * label + (1.0 + (-x.abs()).exp()).log()).sum() / count;
  out.dlogits = ((1.0 / (1.0 + (-x).exp())) - label).matrix() / count;
  return out;
}

Stage2Result train_stage2(const std::vector<TrainPair>& pairs,
                          const RegressorConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("train_stage2: empty dataset");
  if (cfg.m < 2 || cfg.steps < 1 || cfg.batch_size < 1 || cfg.max_lr <= 0.0)
    throw std::invalid_argument("train_stage2: invalid config");
  const Eigen::Index rows = pairs.front().input.rows();
  const Eigen::Index cols = pairs.front().input.cols();
  for (const TrainPair& pair : pairs) {
    if (pair.targets.size() != static_cast<std::size_t>(cfg.m - 1))
      throw std::invalid_argument("train_stage2: target channel count mismatch");
    if (pair.input.rows() != rows || pair.input.cols() != cols)
      throw std::invalid_argument("train_stage2: inconsistent input shapes");
    for (const Image& t : pair.targets)
      if (t.rows() != rows || t.cols() != cols)
        throw std::invalid_argument("train_stage2: inconsistent target shapes");
  }

  Stage2Result result;
  Rng rng(cfg.seed);
  result.model = ConvRegressor(cfg.m, cfg.residual_blocks, cfg.base_features);
  result.model.init_weights(rng, /*zero_final=*/true);
  AdamWState g_state(result.model.params().size());
  AdamWState d_state;
  if (cfg.adversarial) {
    result.disc = PatchDiscriminator(cfg.m, cfg.base_features);
    result.disc.init_weights(rng);
    result.has_disc = true;
    d_state = AdamWState(result.disc.params().size());
  }
  OneCycleSchedule sched;
  sched.max_lr = cfg.max_lr;
  sched.total_steps = cfg.steps;
  result.trace.reserve(cfg.steps);

  std::vector<std::size_t> batch(cfg.batch_size);
  for (long step = 0; step < cfg.steps; ++step) {
    for (long bi = 0; bi < cfg.batch_size; ++bi)
      batch[bi] = rng.index(pairs.size());
    const double lr = one_cycle_lr(sched, step);
    const double b = static_cast<double>(cfg.batch_size);

    if (cfg.adversarial) {
      std::vector<Eigen::ArrayXd> d_grads;
      d_grads.reserve(batch.size());
      for (std::size_t idx : batch) {
        const TrainPair& pair = pairs[idx];
        const std::vector<Image> pred = result.model.forward(pair.input);
        Eigen::ArrayXd g = Eigen::ArrayXd::Zero(result.disc.params().size());
        PatchDiscriminator::Tape tr, tf;
        const Image lr_real = result.disc.forward(pair.input, pair.targets, tr);
        const Image lr_fake = result.disc.forward(pair.input, pred, tf);
        const BceResult br = bce_with_logits(lr_real, 1.0);
        const BceResult bf = bce_with_logits(lr_fake, 0.0);
        result.disc.backward(tr, 0.5 * br.dlogits, g);
        result.disc.backward(tf, 0.5 * bf.dlogits, g);
        d_grads.push_back(std::move(g));
      }
      const Eigen::ArrayXd dg = tree_reduce(std::move(d_grads)) / b;
      adamw_step(result.disc.params(), dg, d_state, lr);
    }

    std::vector<Eigen::ArrayXd> g_grads;
    std::vector<double> losses;
    g_grads.reserve(batch.size());
    losses.reserve(batch.size());
    for (std::size_t idx : batch) {
      const TrainPair& pair = pairs[idx];
      ConvRegressor::Tape tape;
      const std::vector<Image> pred = result.model.forward(pair.input, tape);
      Eigen::ArrayXd g = Eigen::ArrayXd::Zero(result.model.params().size());
      if (cfg.adversarial) {
        PatchDiscriminator::Tape dt;
        const Image logits = result.disc.forward(pair.input, pred, dt);
        Stage2Loss loss = stage2_loss(pred, pair.targets, cfg.lambda_l1,
                                      &logits, cfg.adversarial_weight);
        Eigen::ArrayXd d_scratch =
            Eigen::ArrayXd::Zero(result.disc.params().size());
        std::vector<Image> dpred_adv;
        result.disc.backward(dt, loss.dlogits, d_scratch, &dpred_adv);
        for (Eigen::Index k = 0; k < cfg.m - 1; ++k)
          loss.dpred[k] += dpred_adv[k];
        result.model.backward(tape, loss.dpred, g);
        losses.push_back(loss.value);
      } else {
        const Stage2Loss loss = stage2_loss(pred, pair.targets, cfg.lambda_l1);
        result.model.backward(tape, loss.dpred, g);
        losses.push_back(loss.value);
      }
      g_grads.push_back(std::move(g));
    }
    const Eigen::ArrayXd gg = tree_reduce(std::move(g_grads)) / b;
    const double loss = tree_reduce(std::move(losses)) / b;
    if (!std::isfinite(loss))
      throw numerical_error("train_stage2: non-finite loss at step " +
                            std::to_string(step));
    adamw_step(result.model.params(), gg, g_state, lr);
    result.trace.push_back({step, lr, loss});
  }
  return result;
}

void save_regressor(const Stage2Result& r, Eigen::Index patch,
                    const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error("save_regressor: cannot open " + path.string());
  io::write_magic(os, "RGR1");
  io::write_u32(os, static_cast<std::uint32_t>(r.model.m()));
  io::write_u32(os, static_cast<std::uint32_t>(patch));
  io::write_u32(os, static_cast<std::uint32_t>(r.model.blocks()));
  io::write_u32(os, static_cast<std::uint32_t>(r.model.features()));
  io::write_u32(os, r.has_disc ? 1 : 0);
  for (Eigen::Index i = 0; i < r.model.params().size(); ++i)
    io::write_f64(os, r.model.params()[i]);
  if (r.has_disc)
    for (Eigen::Index i = 0; i < r.disc.params().size(); ++i)
      io::write_f64(os, r.disc.params()[i]);
  if (!os)
    throw std::runtime_error("save_regressor: write failed for " + path.string());
}

LoadedRegressor load_regressor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("load_regressor: cannot open " + path.string());
  io::expect_magic(is, "RGR1", "regressor file");
  LoadedRegressor out;
  const std::uint32_t m = io::read_u32(is, "regressor channel count");
  out.patch = io::read_u32(is, "regressor patch size");
  const std::uint32_t blocks = io::read_u32(is, "regressor block count");
  const std::uint32_t features = io::read_u32(is, "regressor feature count");
  const std::uint32_t adversarial = io::read_u32(is, "regressor flags");
  if (m < 2 || blocks < 1 || features < 1)
    throw std::runtime_error("load_regressor: degenerate header in " +
                             path.string());
  out.model = ConvRegressor(m, blocks, features);
  for (Eigen::Index i = 0; i < out.model.params().size(); ++i)
    out.model.params()[i] = io::read_f64(is, "regressor parameters");
  if (adversarial) {
    out.disc = PatchDiscriminator(m, features);
    for (Eigen::Index i = 0; i < out.disc.params().size(); ++i)
      out.disc.params()[i] = io::read_f64(is, "discriminator parameters");
    out.has_disc = true;
  }
  return out;
}

}  // namespace fbsr
