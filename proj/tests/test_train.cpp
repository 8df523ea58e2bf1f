#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fbsr/filterbank.hpp"
#include "fbsr/optim.hpp"
#include "fbsr/regressor.hpp"
#include "fbsr/rng.hpp"

#include "oracles.hpp"

#include <cmath>
#include <filesystem>

using namespace fbsr;

namespace {

Signal random_signal(Rng& rng, Eigen::Index n) {
  Signal x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = rng.normal();
  return x;
}

Image random_image(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Image img(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) img(r, c) = rng.normal();
  return img;
}

FilterBank random_bank(Rng& rng, Eigen::Index m, Eigen::Index len) {
  FilterBank bank;
  bank.m = m;
  bank.analysis.resize(m);
  bank.synthesis.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    bank.analysis[k].taps = random_signal(rng, len);
    bank.analysis[k].center = static_cast<Eigen::Index>(rng.below(len));
    bank.synthesis[k].taps = random_signal(rng, len);
    bank.synthesis[k].center = static_cast<Eigen::Index>(rng.below(len));
  }
  return bank;
}

// The training loss, recomputed from scratch for finite differencing.
double bank_loss(const FilterBank& bank, const std::vector<Signal>& batch) {
  double total = 0.0;
  for (const Signal& x : batch) {
    Signal xr = Signal::Zero(x.size());
    for (Eigen::Index k = 0; k < bank.m; ++k) {
      const Signal c =
          decimate<double>(convolve1d<double>(x, bank.analysis[k]), bank.m);
      xr += convolve1d<double>(upsample_zero<double>(c, bank.m),
                               bank.synthesis[k]);
    }
    total += (xr - x).square().mean();
  }
  return total / static_cast<double>(batch.size());
}

}  // namespace

TEST_CASE("adamw: zero gradient still decays the weights") {
  Eigen::ArrayXd params = Eigen::ArrayXd::Constant(3, 2.0);
  const Eigen::ArrayXd zero = Eigen::ArrayXd::Zero(3);
  AdamWState state(3);
  adamw_step(params, zero, state, 0.1);
  CHECK(params[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));

  AdamWState no_decay(3);
  no_decay.weight_decay = 0.0;
  Eigen::ArrayXd frozen = Eigen::ArrayXd::Constant(3, 2.0);
  adamw_step(frozen, zero, no_decay, 0.1);
  CHECK(frozen[0] == 2.0);
}

TEST_CASE("adamw: first step moves by about lr in the gradient direction") {
  Eigen::ArrayXd params = Eigen::ArrayXd::Constant(1, 1.0);
  Eigen::ArrayXd grads = Eigen::ArrayXd::Constant(1, 2.0);
  AdamWState state(1);
  adamw_step(params, grads, state, 0.1);
  // decay first: 1*(1 - 0.1*0.01), then -lr * g/(|g| + eps).
  const double want = 0.999 - 0.1 * (2.0 / (2.0 + 1e-8));
  CHECK(params[0] == doctest::Approx(want).epsilon(1e-12));
  CHECK(state.step == 1);

  CHECK_THROWS_AS(adamw_step(params, Eigen::ArrayXd::Zero(4), state, 0.1),
                  std::invalid_argument);
}

TEST_CASE("one-cycle schedule endpoints and unimodality") {
  OneCycleSchedule sched;
  sched.max_lr = 0.4;
  sched.total_steps = 1000;
  CHECK(sched.peak_step() == 300);
  CHECK(one_cycle_lr(sched, 0) == doctest::Approx(0.4 / 25.0).epsilon(1e-12));
  CHECK(one_cycle_lr(sched, 300) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(one_cycle_lr(sched, 999) == doctest::Approx(0.4 / 1e4).epsilon(1e-12));

  for (long s = 1; s <= 300; ++s)
    CHECK(one_cycle_lr(sched, s) >= one_cycle_lr(sched, s - 1) - 1e-15);
  for (long s = 301; s < 1000; ++s)
    CHECK(one_cycle_lr(sched, s) <= one_cycle_lr(sched, s - 1) + 1e-15);

  CHECK_THROWS_AS(one_cycle_lr(sched, -1), std::invalid_argument);
  CHECK_THROWS_AS(one_cycle_lr(sched, 1000), std::invalid_argument);

  // A one-step schedule degenerates to its peak.
  OneCycleSchedule one;
  one.total_steps = 1;
  CHECK(one_cycle_lr(one, 0) == doctest::Approx(one.max_lr));
}

TEST_CASE("grad_filters matches central finite differences") {
  Rng rng(71);
  for (Eigen::Index m : {2, 3}) {
    const Eigen::Index len = 5;
    FilterBank bank = random_bank(rng, m, len);
    std::vector<Signal> batch{random_signal(rng, m * 8),
                              random_signal(rng, m * 6)};
    const FilterGradients g = grad_filters(bank, batch);
    CHECK(g.h[0].size() == 0);  // frozen prototype: no gradient storage
    CHECK(g.loss == doctest::Approx(bank_loss(bank, batch)).epsilon(1e-12));

    for (Eigen::Index k = 0; k < m; ++k) {
      for (const bool analysis_side : {true, false}) {
        if (analysis_side && k == 0) continue;
        const Eigen::ArrayXd& analytic = analysis_side ? g.h[k] : g.f[k];
        Eigen::ArrayXd numeric(len);
        for (Eigen::Index j = 0; j < len; ++j) {
          FilterBank probe = bank;
          auto& taps = analysis_side ? probe.analysis[k].taps
                                     : probe.synthesis[k].taps;
          const double keep = taps[j];
          taps[j] = keep + 1e-6;
          const double hi = bank_loss(probe, batch);
          taps[j] = keep - 1e-6;
          const double lo = bank_loss(probe, batch);
          numeric[j] = (hi - lo) / 2e-6;
        }
        CHECK(oracle::gradient_mismatch(analytic, numeric) < 1e-5);
      }
    }
  }
}

TEST_CASE("grad_filters validates its inputs") {
  Rng rng(73);
  FilterBank bank = random_bank(rng, 2, 4);
  CHECK_THROWS_AS(grad_filters(bank, {}), std::invalid_argument);
  CHECK_THROWS_AS(grad_filters(bank, {random_signal(rng, 9)}),
                  std::invalid_argument);
}

TEST_CASE("a small gradient step decreases the reconstruction loss") {
  Rng rng(79);
  FilterBank bank = random_bank(rng, 2, 5);
  // Scale down so the quadratic loss landscape is locally well behaved.
  for (auto* side : {&bank.analysis, &bank.synthesis})
    for (auto& k : *side) k.taps *= 0.3;
  std::vector<Signal> batch{random_signal(rng, 24), random_signal(rng, 24)};
  const FilterGradients g = grad_filters(bank, batch);
  FilterBank stepped = bank;
  for (Eigen::Index k = 1; k < 2; ++k)
    stepped.analysis[k].taps -= 1e-3 * g.h[k];
  for (Eigen::Index k = 0; k < 2; ++k)
    stepped.synthesis[k].taps -= 1e-3 * g.f[k];
  CHECK(bank_loss(stepped, batch) < g.loss);
}

TEST_CASE("stage 1 training reduces the loss and freezes the prototype") {
  Rng rng(83);
  std::vector<Signal> lines;
  for (int i = 0; i < 12; ++i) {
    // Smooth lines: partial sums of white noise, mildly low-pass.
    Signal x = random_signal(rng, 48);
    for (Eigen::Index j = 1; j < x.size(); ++j)
      x[j] = 0.7 * x[j - 1] + 0.3 * x[j];
    lines.push_back(x);
  }
  Kernel h0;
  h0.taps = Eigen::ArrayXd::Constant(2, 0.5);
  h0.center = 0;

  Stage1Config cfg;
  cfg.steps = 250;
  cfg.batch_size = 8;
  cfg.max_lr = 0.05;
  cfg.seed = 7;
  cfg.filter_length = 9;

  const Stage1Result result = train_stage1(lines, h0, 2, cfg);
  REQUIRE(result.trace.size() == 250);

  auto window_mean = [&](std::size_t from, std::size_t count) {
    double acc = 0.0;
    for (std::size_t i = from; i < from + count; ++i)
      acc += result.trace[i].loss;
    return acc / static_cast<double>(count);
  };
  CHECK(window_mean(220, 30) < window_mean(0, 30));

  // The prototype is exactly the padded h0, bit for bit.
  const Kernel padded = pad_kernel(h0, 9);
  CHECK((result.bank.analysis[0].taps == padded.taps).all());
  CHECK(result.bank.analysis[0].center == padded.center);

  const Stage1Result again = train_stage1(lines, h0, 2, cfg);
  for (Eigen::Index k = 0; k < 2; ++k) {
    CHECK((again.bank.analysis[k].taps == result.bank.analysis[k].taps).all());
    CHECK((again.bank.synthesis[k].taps == result.bank.synthesis[k].taps).all());
  }
  for (std::size_t i = 0; i < result.trace.size(); ++i)
    CHECK(again.trace[i].loss == result.trace[i].loss);

  CHECK_THROWS_AS(train_stage1({random_signal(rng, 10)}, h0, 2, cfg),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Stage 2 network.

TEST_CASE("regressor preserves spatial shape and channel count") {
  Rng rng(89);
  for (Eigen::Index m : {2, 5}) {
    ConvRegressor g(m, 2, 4);
    g.init_weights(rng, false);
    for (Eigen::Index p : {8, 16}) {
      const std::vector<Image> out = g.forward(random_image(rng, p, p));
      REQUIRE(out.size() == static_cast<std::size_t>(m - 1));
      for (const Image& d : out) {
        CHECK(d.rows() == p);
        CHECK(d.cols() == p);
      }
    }
    // Fully convolutional: any rectangle works.
    const std::vector<Image> rect = g.forward(random_image(rng, 9, 13));
    CHECK(rect[0].rows() == 9);
    CHECK(rect[0].cols() == 13);
  }
}

TEST_CASE("zero-initialized head yields exactly zero details") {
  Rng rng(97);
  ConvRegressor g(3, 2, 4);
  g.init_weights(rng, true);
  const std::vector<Image> out = g.forward(random_image(rng, 10, 10));
  for (const Image& d : out) CHECK(d.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("weight init is deterministic in the seed") {
  ConvRegressor a(2, 1, 4), b(2, 1, 4);
  Rng ra(5), rb(5);
  a.init_weights(ra);
  b.init_weights(rb);
  CHECK((a.params() == b.params()).all());
}

TEST_CASE("stage2_loss frozen values") {
  Image pred(3, 3), target(3, 3);
  pred.setConstant(0.7);
  target.setConstant(0.5);
  Image zero2(3, 3);
  zero2.setZero();

  const Stage2Loss same = stage2_loss({target, zero2}, {target, zero2}, 100.0);
  CHECK(same.value == 0.0);
  CHECK(same.dpred[0].cwiseAbs().maxCoeff() == 0.0);

  const Stage2Loss offset = stage2_loss({pred, zero2}, {target, zero2}, 100.0);
  // Half the 18 entries differ by +0.2: 100 * (9*0.2)/18 = 10.
  CHECK(offset.value == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(offset.dpred[0](1, 1) == doctest::Approx(100.0 / 18.0).epsilon(1e-12));
  CHECK(offset.dpred[1](1, 1) == 0.0);
  CHECK(offset.dlogits.size() == 0);
}

TEST_CASE("bce_with_logits frozen values and stability") {
  Image logits(1, 1);
  logits(0, 0) = 0.0;
  const BceResult mid = bce_with_logits(logits, 1.0);
  CHECK(mid.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(mid.dlogits(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));

  logits(0, 0) = 500.0;  // would overflow a naive exp
  const BceResult big = bce_with_logits(logits, 0.0);
  CHECK(std::isfinite(big.value));
  CHECK(big.value == doctest::Approx(500.0).epsilon(1e-12));
}

TEST_CASE("regressor backward matches finite differences") {
  Rng rng(101);
  ConvRegressor g(2, 1, 2);
  g.init_weights(rng, false);
  const Image input = random_image(rng, 5, 5);
  const std::vector<Image> targets{random_image(rng, 5, 5)};

  auto loss_of = [&](const Eigen::ArrayXd& params) {
    ConvRegressor probe = g;
    probe.params() = params;
    return stage2_loss(probe.forward(input), targets, 100.0).value;
  };

  ConvRegressor::Tape tape;
  const std::vector<Image> pred = g.forward(input, tape);
  const Stage2Loss loss = stage2_loss(pred, targets, 100.0);
  Eigen::ArrayXd analytic = Eigen::ArrayXd::Zero(g.params().size());
  g.backward(tape, loss.dpred, analytic);

  const Eigen::ArrayXd numeric =
      oracle::central_difference(loss_of, g.params(), 1e-6);
  CHECK(oracle::gradient_mismatch(analytic, numeric) < 1e-4);
}

TEST_CASE("discriminator backward matches finite differences") {
  Rng rng(103);
  PatchDiscriminator d(2, 4);
  d.init_weights(rng);
  const Image coarse = random_image(rng, 5, 5);
  const std::vector<Image> details{random_image(rng, 5, 5)};

  auto loss_of = [&](const Eigen::ArrayXd& params) {
    PatchDiscriminator probe = d;
    probe.params() = params;
    return bce_with_logits(probe.forward(coarse, details), 1.0).value;
  };

  PatchDiscriminator::Tape tape;
  const Image logits = d.forward(coarse, details, tape);
  const BceResult bce = bce_with_logits(logits, 1.0);
  Eigen::ArrayXd analytic = Eigen::ArrayXd::Zero(d.params().size());
  d.backward(tape, bce.dlogits, analytic);

  const Eigen::ArrayXd numeric =
      oracle::central_difference(loss_of, d.params(), 1e-6);
  CHECK(oracle::gradient_mismatch(analytic, numeric) < 1e-4);
}

TEST_CASE("adversarial gradient flows through the detail inputs") {
  Rng rng(107);
  ConvRegressor g(2, 1, 2);
  g.init_weights(rng, false);
  PatchDiscriminator d(2, 2);
  d.init_weights(rng);
  const Image input = random_image(rng, 5, 5);
  const std::vector<Image> targets{random_image(rng, 5, 5)};
  const double weight = 0.25;

  auto loss_of = [&](const Eigen::ArrayXd& params) {
    ConvRegressor probe = g;
    probe.params() = params;
    const std::vector<Image> pred = probe.forward(input);
    const Image logits = d.forward(input, pred);
    return stage2_loss(pred, targets, 100.0, &logits, weight).value;
  };

  ConvRegressor::Tape tape;
  const std::vector<Image> pred = g.forward(input, tape);
  PatchDiscriminator::Tape dtape;
  const Image logits = d.forward(input, pred, dtape);
  const Stage2Loss loss = stage2_loss(pred, targets, 100.0, &logits, weight);

  // Chain the adversarial term through the discriminator into the details.
  Eigen::ArrayXd dgrad = Eigen::ArrayXd::Zero(d.params().size());
  std::vector<Image> ddetails;
  d.backward(dtape, loss.dlogits, dgrad, &ddetails);
  std::vector<Image> dpred = loss.dpred;
  for (std::size_t i = 0; i < dpred.size(); ++i) dpred[i] += ddetails[i];

  Eigen::ArrayXd analytic = Eigen::ArrayXd::Zero(g.params().size());
  g.backward(tape, dpred, analytic);
  const Eigen::ArrayXd numeric =
      oracle::central_difference(loss_of, g.params(), 1e-6);
  CHECK(oracle::gradient_mismatch(analytic, numeric) < 1e-4);
}

TEST_CASE("stage 2 learns a pixelwise linear map") {
  Rng rng(109);
  std::vector<TrainPair> pairs;
  for (int i = 0; i < 8; ++i) {
    TrainPair pair;
    pair.input = random_image(rng, 8, 8);
    pair.targets = {Image(0.3 * pair.input.array() - 0.1)};
    pairs.push_back(pair);
  }
  RegressorConfig cfg;
  cfg.m = 2;
  cfg.residual_blocks = 1;
  cfg.base_features = 2;
  cfg.patch = 8;
  cfg.steps = 400;
  cfg.batch_size = 2;
  cfg.max_lr = 2e-3;
  cfg.seed = 11;

  const Stage2Result result = train_stage2(pairs, cfg);
  REQUIRE(result.trace.size() == 400);
  CHECK_FALSE(result.has_disc);

  // Step 0 scores the zero-details baseline thanks to the zero-init head.
  double late = 0.0;
  for (int i = 0; i < 50; ++i) late += result.trace[349 + i].loss;
  late /= 50.0;
  CHECK(late < 0.1 * result.trace.front().loss);

  const Stage2Result again = train_stage2(pairs, cfg);
  CHECK((again.model.params() == result.model.params()).all());
}

TEST_CASE("adversarial training runs and stays finite") {
  Rng rng(113);
  std::vector<TrainPair> pairs;
  for (int i = 0; i < 4; ++i) {
    TrainPair pair;
    pair.input = random_image(rng, 6, 6);
    pair.targets = {Image(0.5 * pair.input.array())};
    pairs.push_back(pair);
  }
  RegressorConfig cfg;
  cfg.m = 2;
  cfg.residual_blocks = 1;
  cfg.base_features = 2;
  cfg.patch = 6;
  cfg.steps = 30;
  cfg.batch_size = 2;
  cfg.max_lr = 1e-3;
  cfg.adversarial = true;
  cfg.adversarial_weight = 0.1;
  cfg.seed = 13;

  const Stage2Result result = train_stage2(pairs, cfg);
  CHECK(result.has_disc);
  for (const TraceRow& row : result.trace) CHECK(std::isfinite(row.loss));

  const Stage2Result again = train_stage2(pairs, cfg);
  CHECK((again.model.params() == result.model.params()).all());
  CHECK((again.disc.params() == result.disc.params()).all());
}

TEST_CASE("a zero-weight adversary contributes exactly nothing") {
  Rng rng(127);
  ConvRegressor g(2, 1, 2);
  g.init_weights(rng, false);
  PatchDiscriminator d(2, 2);
  d.init_weights(rng);
  const Image input = random_image(rng, 6, 6);
  const std::vector<Image> targets{random_image(rng, 6, 6)};

  ConvRegressor::Tape tape;
  const std::vector<Image> pred = g.forward(input, tape);
  PatchDiscriminator::Tape dtape;
  const Image logits = d.forward(input, pred, dtape);

  const Stage2Loss plain = stage2_loss(pred, targets, 100.0);
  const Stage2Loss zero_weight = stage2_loss(pred, targets, 100.0, &logits, 0.0);
  CHECK(zero_weight.value == plain.value);
  CHECK((zero_weight.dpred[0].array() == plain.dpred[0].array()).all());

  // The chained generator gradient is also identical.
  Eigen::ArrayXd dgrad = Eigen::ArrayXd::Zero(d.params().size());
  std::vector<Image> ddetails;
  d.backward(dtape, zero_weight.dlogits, dgrad, &ddetails);
  CHECK(ddetails[0].cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("model file round trip is bit-exact") {
  Rng rng(131);
  std::vector<TrainPair> pairs;
  for (int i = 0; i < 2; ++i) {
    TrainPair pair;
    pair.input = random_image(rng, 6, 6);
    pair.targets = {random_image(rng, 6, 6), random_image(rng, 6, 6)};
    pairs.push_back(pair);
  }
  RegressorConfig cfg;
  cfg.m = 3;
  cfg.residual_blocks = 1;
  cfg.base_features = 2;
  cfg.patch = 6;
  cfg.steps = 5;
  cfg.batch_size = 2;
  cfg.max_lr = 1e-4;
  cfg.seed = 19;
  const Stage2Result result = train_stage2(pairs, cfg);

  const auto path = std::filesystem::temp_directory_path() / "fbsr_test.rgr1";
  save_regressor(result, cfg.patch, path);
  const LoadedRegressor loaded = load_regressor(path);
  CHECK(loaded.patch == 6);
  CHECK(loaded.model.m() == 3);
  CHECK(loaded.model.blocks() == 1);
  CHECK(loaded.model.features() == 2);
  CHECK_FALSE(loaded.has_disc);
  CHECK((loaded.model.params() == result.model.params()).all());
  std::filesystem::remove(path);
}
