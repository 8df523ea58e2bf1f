#include "fbsr/errors.hpp"
#include "fbsr/io.hpp"
#include "fbsr/metrics.hpp"
#include "fbsr/optim.hpp"
#include "fbsr/regressor.hpp"
#include "fbsr/run_config.hpp"
#include "fbsr/super_resolve.hpp"
#include "fbsr/volume.hpp"

#include <CLI11.hpp>
#include <unsupported/Eigen/FFT>

#include <chrono>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <vector>

// Pipeline driver. Each subcommand reads a flat key=value config (file plus
// --set overrides), consumes artifacts produced by earlier stages, and
// leaves three bookkeeping files in its output directory: the fully
// resolved config, content hashes of every input artifact, and a log. Exit
// codes: 0 ok, 2 configuration error, 3 missing prerequisite artifact,
// 4 numerical failure during training.

namespace fs = std::filesystem;
using namespace fbsr;

namespace {

struct CommandContext {
  RunConfig cfg;
  fs::path out;
  std::ofstream log_stream;
  std::vector<fs::path> inputs;

  void log(const std::string& line) {
    log_stream << line << '\n';
    std::cout << line << '\n';
  }

  fs::path artifact(const std::string& key, const std::string& fallback) {
    return fs::path(cfg.get_string(key, (out / fallback).string()));
  }

  /// Registers a prerequisite produced by an earlier stage; absence is the
  /// "missing prerequisite" failure class.
  fs::path require_input(const std::string& key, const std::string& fallback,
                         const std::string& what) {
    const fs::path p = artifact(key, fallback);
    if (!fs::exists(p))
      throw missing_artifact("missing " + what + ": " + p.string());
    inputs.push_back(p);
    return p;
  }

  void finish() {
    cfg.write_resolved(out / "config.resolved.txt");
    std::ofstream manifest(out / "inputs.txt");
    for (const fs::path& p : inputs) {
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016llx",
                    static_cast<unsigned long long>(io::hash_file(p)));
      manifest << "fnv1a64 " << hex << ' ' << p.string() << '\n';
    }
  }
};

AcquisitionSpec acq_from(const RunConfig& cfg) {
  AcquisitionSpec spec;
  spec.fwhm = cfg.get_long("acq.fwhm", 2);
  spec.gap = cfg.get_long("acq.gap", 0);
  spec.through_axis = static_cast<int>(cfg.get_long("acq.axis", 2));
  if (!spec.valid())
    throw config_error("invalid acquisition spec: check acq.fwhm/acq.gap/acq.axis");
  return spec;
}

Volume phantom_from(const RunConfig& cfg, std::uint64_t base_seed,
                    std::array<Eigen::Index, 3> default_dims) {
  const std::string kind_name =
      cfg.get_string("phantom.kind", "band_limited");
  const PhantomKind kind = [&] {
    try {
      return phantom_kind_from_string(kind_name);
    } catch (const std::invalid_argument& e) {
      throw config_error(std::string("phantom.kind: ") + e.what());
    }
  }();
  std::array<Eigen::Index, 3> dims;
  dims[0] = cfg.get_long("phantom.nx", default_dims[0]);
  dims[1] = cfg.get_long("phantom.ny", default_dims[1]);
  dims[2] = cfg.get_long("phantom.nz", default_dims[2]);
  const std::uint64_t seed = cfg.get_u64("phantom.seed", base_seed + 3);
  return generate_phantom(dims, seed, kind);
}

Stage1Config stage1_from(const RunConfig& cfg, std::uint64_t base_seed,
                         long default_steps) {
  Stage1Config s1;
  s1.steps = cfg.get_long("stage1.steps", default_steps);
  s1.batch_size = cfg.get_long("stage1.batch", 32);
  s1.max_lr = cfg.get_double("stage1.max_lr", 0.1);
  s1.seed = cfg.get_u64("stage1.seed", base_seed + 1);
  s1.filter_length = cfg.get_long("stage1.length", 0);
  return s1;
}

RegressorConfig stage2_from(const RunConfig& cfg, Eigen::Index m,
                            std::uint64_t base_seed, Eigen::Index default_patch,
                            long default_steps) {
  RegressorConfig rc;
  rc.m = m;
  rc.residual_blocks = cfg.get_long("stage2.blocks", 4);
  rc.base_features = cfg.get_long("stage2.features", 8);
  rc.patch = cfg.get_long("stage2.patch", default_patch);
  rc.adversarial = cfg.get_bool("stage2.adversarial", false);
  rc.adversarial_weight = cfg.get_double("stage2.adv_weight", 1.0);
  rc.lambda_l1 = cfg.get_double("stage2.lambda", 100.0);
  rc.steps = cfg.get_long("stage2.steps", default_steps);
  rc.batch_size = cfg.get_long("stage2.batch", 4);
  rc.max_lr = cfg.get_double("stage2.max_lr", 3e-4);
  rc.seed = cfg.get_u64("stage2.seed", base_seed + 2);
  return rc;
}

std::vector<TrainPair> pairs_from(const Volume& lr, const FilterBank& bank,
                                  const AcquisitionSpec& spec,
                                  const RegressorConfig& rc,
                                  const RunConfig& cfg) {
  const long want = cfg.get_long("stage2.pairs", 512);
  if (want < 1) throw config_error("stage2.pairs must be >= 1");
  Rng seeder(rc.seed);
  PatchSampler first{rc.patch, 0, seeder.next_u64(), want - want / 2};
  PatchSampler second{rc.patch, 1, seeder.next_u64(), want / 2};
  std::vector<TrainPair> pairs = extract_patch_pairs(lr, bank, spec, first);
  if (second.count > 0) {
    auto more = extract_patch_pairs(lr, bank, spec, second);
    pairs.insert(pairs.end(), std::make_move_iterator(more.begin()),
                 std::make_move_iterator(more.end()));
  }
  return pairs;
}

Image log_spectrum(const Image& img) {
  Eigen::FFT<double> fft;
  const Eigen::Index rows = img.rows(), cols = img.cols();
  Eigen::MatrixXcd freq(rows, cols);
  std::vector<std::complex<double>> in(cols), sp(cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) in[c] = img(r, c);
    fft.fwd(sp, in);
    for (Eigen::Index c = 0; c < cols; ++c) freq(r, c) = sp[c];
  }
  std::vector<std::complex<double>> col_in(rows), col_sp(rows);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) col_in[r] = freq(r, c);
    fft.fwd(col_sp, col_in);
    for (Eigen::Index r = 0; r < rows; ++r) freq(r, c) = col_sp[r];
  }
  Image out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      // Center DC for viewing.
      const Eigen::Index rr = (r + rows / 2) % rows;
      const Eigen::Index cc = (c + cols / 2) % cols;
      out(rr, cc) = std::log1p(std::abs(freq(r, c)));
    }
  return out;
}

void cmd_simulate(CommandContext& ctx) {
  const AcquisitionSpec spec = acq_from(ctx.cfg);
  const std::uint64_t base_seed = ctx.cfg.get_u64("seed", 0);
  Volume gt;
  if (ctx.cfg.has("input.volume")) {
    const fs::path p(ctx.cfg.get_string("input.volume", ""));
    if (!fs::exists(p))
      throw config_error("input.volume does not exist: " + p.string());
    ctx.inputs.push_back(p);
    gt = load_volume(p);
  } else {
    gt = phantom_from(ctx.cfg, base_seed, {64, 64, 64});
  }
  const Volume lr = simulate_lr(gt, spec);
  save_volume(gt, ctx.out / "gt.fbv1");
  save_volume(lr, ctx.out / "lr.fbv1");
  std::ofstream meta(ctx.out / "meta.txt");
  meta << "m=" << spec.m() << "\ngt_dims=" << gt.dims[0] << 'x' << gt.dims[1]
       << 'x' << gt.dims[2] << "\nlr_dims=" << lr.dims[0] << 'x' << lr.dims[1]
       << 'x' << lr.dims[2] << '\n';
  ctx.log("simulated acquisition with M=" + std::to_string(spec.m()));
  ctx.log("lr dims " + std::to_string(lr.dims[0]) + "x" +
          std::to_string(lr.dims[1]) + "x" + std::to_string(lr.dims[2]));
}

void cmd_stage1(CommandContext& ctx) {
  const AcquisitionSpec spec = acq_from(ctx.cfg);
  if (spec.m() < 2)
    throw config_error("stage1 needs M = acq.fwhm + acq.gap >= 2");
  const std::uint64_t base_seed = ctx.cfg.get_u64("seed", 0);
  const Volume lr = load_volume(
      ctx.require_input("in.lr", "lr.fbv1", "low-resolution volume"));
  const Stage1Config s1 = stage1_from(ctx.cfg, base_seed, 5000);
  const std::vector<Signal> lines = extract_lines(lr, spec);
  ctx.log("training bank on " + std::to_string(lines.size()) + " lines");
  const Stage1Result result = train_stage1(lines, spec.kernel(), spec.m(), s1);
  save_bank(result.bank, ctx.out / "bank.fbk1");
  save_trace_csv(result.trace, ctx.out / "stage1_trace.csv");
  ctx.log("final loss " + io::format_double(result.trace.back().loss));
}

void cmd_stage2(CommandContext& ctx) {
  const AcquisitionSpec spec = acq_from(ctx.cfg);
  if (spec.m() < 2)
    throw config_error("stage2 needs M = acq.fwhm + acq.gap >= 2");
  const std::uint64_t base_seed = ctx.cfg.get_u64("seed", 0);
  const Volume lr = load_volume(
      ctx.require_input("in.lr", "lr.fbv1", "low-resolution volume"));
  const FilterBank bank =
      load_bank(ctx.require_input("in.bank", "bank.fbk1", "stage 1 bank"));
  if (bank.m != spec.m())
    throw config_error("bank channel count does not match acq spec");
  const RegressorConfig rc = stage2_from(ctx.cfg, bank.m, base_seed, 32, 2000);
  const std::vector<TrainPair> pairs = pairs_from(lr, bank, spec, rc, ctx.cfg);
  ctx.log("training regressor on " + std::to_string(pairs.size()) + " pairs");
  const Stage2Result result = train_stage2(pairs, rc);
  save_regressor(result, rc.patch, ctx.out / "model.rgr1");
  save_trace_csv(result.trace, ctx.out / "stage2_trace.csv");
  ctx.log("final loss " + io::format_double(result.trace.back().loss));
}

void cmd_sr(CommandContext& ctx) {
  const AcquisitionSpec spec = acq_from(ctx.cfg);
  const Volume lr = load_volume(
      ctx.require_input("in.lr", "lr.fbv1", "low-resolution volume"));
  const FilterBank bank =
      load_bank(ctx.require_input("in.bank", "bank.fbk1", "stage 1 bank"));
  const LoadedRegressor model = load_regressor(
      ctx.require_input("in.model", "model.rgr1", "stage 2 model"));
  SrOptions options;
  options.patch = model.patch;
  options.stride = ctx.cfg.get_long("sr.stride", 0);
  const Volume sr = super_resolve(lr, bank, model.model, spec, options);
  save_volume(sr, ctx.out / "sr.fbv1");
  ctx.log("sr dims " + std::to_string(sr.dims[0]) + "x" +
          std::to_string(sr.dims[1]) + "x" + std::to_string(sr.dims[2]));
}

void cmd_eval(CommandContext& ctx) {
  const AcquisitionSpec spec = acq_from(ctx.cfg);
  const Volume gt =
      load_volume(ctx.require_input("in.gt", "gt.fbv1", "ground-truth volume"));
  const Volume lr = load_volume(
      ctx.require_input("in.lr", "lr.fbv1", "low-resolution volume"));
  const FilterBank bank =
      load_bank(ctx.require_input("in.bank", "bank.fbk1", "stage 1 bank"));
  const Volume sr = load_volume(
      ctx.require_input("in.sr", "sr.fbv1", "super-resolved volume"));

  std::vector<std::pair<std::string, Volume>> candidates;
  candidates.emplace_back("zero_fill",
                          zero_fill_volume(lr, spec.m(), spec.through_axis));
  candidates.emplace_back("zero_detail", zero_detail_volume(lr, bank, spec));
  if (ctx.cfg.get_bool("eval.cubic", false))
    candidates.emplace_back(
        "cubic", cubic_upsample_volume(lr, spec.m(), spec.through_axis));
  candidates.emplace_back("proposed", sr);

  double peak = gt.voxels.abs().maxCoeff();
  for (const auto& [label, v] : candidates)
    peak = std::max(peak, static_cast<double>(v.voxels.abs().maxCoeff()));

  MetricReport report;
  report.peak = peak;
  SsimParams sp;
  sp.peak = peak;
  sp.through_axis = spec.through_axis;
  for (const auto& [label, v] : candidates) {
    MetricRow row;
    row.label = label;
    row.psnr = psnr(gt, v, peak);
    row.ssim = ssim(gt, v, sp);
    report.rows.push_back(row);
  }
  {
    std::ofstream csv(ctx.out / "metrics.csv");
    report.to_csv(csv);
  }
  {
    std::ofstream txt(ctx.out / "metrics.txt");
    report.pretty(txt);
  }
  for (const MetricRow& row : report.rows)
    ctx.log(row.label + ": psnr=" +
            (row.psnr.infinite ? std::string("inf")
                               : io::format_double(row.psnr.db)) +
            " ssim=" + io::format_double(row.ssim));

  if (ctx.cfg.get_bool("eval.spectrum", false)) {
    const auto axes = other_axes(spec.through_axis);
    const Eigen::Index mid = gt.dims[axes[1]] / 2;
    write_pgm16(log_spectrum(volume_slice(gt, axes[1], mid)),
                ctx.out / "spectrum_gt.pgm");
    write_pgm16(log_spectrum(volume_slice(sr, axes[1], mid)),
                ctx.out / "spectrum_proposed.pgm");
  }
}

struct CellOutcome {
  std::vector<double> proposed_psnr, proposed_ssim;
  std::vector<double> zero_detail_psnr, zero_detail_ssim;
};

void cmd_grid(CommandContext& ctx) {
  const std::uint64_t base_seed = ctx.cfg.get_u64("seed", 0);
  const long volumes = ctx.cfg.get_long("grid.volumes", 1);
  const long slices = ctx.cfg.get_long("grid.slices", 8);
  if (volumes < 1 || slices < 1)
    throw config_error("grid.volumes and grid.slices must be >= 1");
  const int axis = static_cast<int>(ctx.cfg.get_long("acq.axis", 2));
  if (axis < 0 || axis > 2) throw config_error("acq.axis must be 0..2");

  std::ofstream csv(ctx.out / "grid.csv");
  csv << "label,m,volumes,proposed_psnr_mean,proposed_psnr_std,"
         "proposed_ssim_mean,proposed_ssim_std,zero_detail_psnr_mean,"
         "zero_detail_psnr_std,zero_detail_ssim_mean,zero_detail_ssim_std,"
         "wilcoxon_p\n";

  for (const long fwhm : {2, 4, 6}) {
    for (const long gap : {0, 1, 2}) {
      AcquisitionSpec spec;
      spec.fwhm = fwhm;
      spec.gap = gap;
      spec.through_axis = axis;
      const Eigen::Index m = spec.m();
      const std::string label =
          std::to_string(fwhm) + "\xE2\x8A\x95" + std::to_string(gap);
      ctx.log("cell " + label + " (M=" + std::to_string(m) + ")");

      CellOutcome cell;
      for (long v = 0; v < volumes; ++v) {
        // Seeds hang off the cell identity, not execution order, so cells
        // can run in any order or in parallel workers.
        const std::uint64_t cell_seed =
            base_seed * 1000003ull +
            static_cast<std::uint64_t>(fwhm * 10 + gap) * 101ull +
            static_cast<std::uint64_t>(v);
        std::array<Eigen::Index, 3> dims{72, 72, slices * m};
        dims[axis] = slices * m;
        const auto in_plane = other_axes(axis);
        dims[in_plane[0]] = ctx.cfg.get_long("phantom.nx", 72);
        dims[in_plane[1]] = ctx.cfg.get_long("phantom.ny", 72);
        const std::string kind_name =
            ctx.cfg.get_string("phantom.kind", "band_limited");
        const Volume gt =
            generate_phantom(dims, cell_seed, phantom_kind_from_string(kind_name));
        const Volume lr = simulate_lr(gt, spec);

        Stage1Config s1 = stage1_from(ctx.cfg, base_seed, 800);
        s1.seed = cell_seed + 1;
        const Stage1Result stage1 =
            train_stage1(extract_lines(lr, spec), spec.kernel(), m, s1);

        RegressorConfig rc = stage2_from(ctx.cfg, m, base_seed, 8, 400);
        rc.seed = cell_seed + 2;
        const std::vector<TrainPair> pairs =
            pairs_from(lr, stage1.bank, spec, rc, ctx.cfg);
        const Stage2Result stage2 = train_stage2(pairs, rc);

        SrOptions options;
        options.patch = rc.patch;
        const Volume sr =
            super_resolve(lr, stage1.bank, stage2.model, spec, options);
        const Volume zd = zero_detail_volume(lr, stage1.bank, spec);

        const double peak =
            std::max({static_cast<double>(gt.voxels.abs().maxCoeff()),
                      static_cast<double>(sr.voxels.abs().maxCoeff()),
                      static_cast<double>(zd.voxels.abs().maxCoeff())});
        SsimParams sp;
        sp.peak = peak;
        sp.through_axis = axis;
        const PsnrResult pp = psnr(gt, sr, peak);
        const PsnrResult pz = psnr(gt, zd, peak);
        cell.proposed_psnr.push_back(pp.infinite ? 1e9 : pp.db);
        cell.zero_detail_psnr.push_back(pz.infinite ? 1e9 : pz.db);
        cell.proposed_ssim.push_back(ssim(gt, sr, sp));
        cell.zero_detail_ssim.push_back(ssim(gt, zd, sp));
      }

      auto stats = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double ss = 0.0;
        for (double x : xs) ss += (x - mean) * (x - mean);
        return std::pair<double, double>(
            mean, std::sqrt(ss / static_cast<double>(xs.size())));
      };
      const auto [ppm, pps] = stats(cell.proposed_psnr);
      const auto [psm, pss] = stats(cell.proposed_ssim);
      const auto [zpm, zps] = stats(cell.zero_detail_psnr);
      const auto [zsm, zss] = stats(cell.zero_detail_ssim);

      std::string p_text;
      if (volumes >= 5) {
        std::vector<double> diffs;
        for (long v = 0; v < volumes; ++v)
          diffs.push_back(cell.proposed_psnr[v] - cell.zero_detail_psnr[v]);
        try {
          p_text = io::format_double(wilcoxon_signed_rank(diffs).p_value);
        } catch (const std::invalid_argument&) {
          p_text.clear();  // degenerate differences; leave the cell blank
        }
      }

      csv << label << ',' << m << ',' << volumes << ','
          << io::format_double(ppm) << ',' << io::format_double(pps) << ','
          << io::format_double(psm) << ',' << io::format_double(pss) << ','
          << io::format_double(zpm) << ',' << io::format_double(zps) << ','
          << io::format_double(zsm) << ',' << io::format_double(zss) << ','
          << p_text << '\n';
    }
  }
}

int run(const std::string& name, void (*body)(CommandContext&),
        CommandContext& ctx) {
  const auto start = std::chrono::steady_clock::now();
  try {
    body(ctx);
    ctx.finish();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    ctx.log(name + " done in " + std::to_string(ms) + " ms");
    return 0;
  } catch (const config_error& e) {
    ctx.log(std::string("config error: ") + e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    ctx.log(std::string("config error: ") + e.what());
    return 2;
  } catch (const missing_artifact& e) {
    ctx.log(std::string("missing prerequisite: ") + e.what());
    return 3;
  } catch (const numerical_error& e) {
    ctx.log(std::string("numerical failure: ") + e.what());
    return 4;
  } catch (const std::exception& e) {
    ctx.log(std::string("error: ") + e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"filter-bank super-resolution pipeline"};
  app.require_subcommand(1);

  struct Flags {
    std::string config;
    std::vector<std::string> sets;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_given = false;
    long threads = 0;
  };

  struct Command {
    std::string name;
    CLI::App* sub;
    std::shared_ptr<Flags> flags;
    void (*body)(CommandContext&);
  };
  std::vector<Command> cmds;
  auto add_command = [&](const std::string& name, const std::string& desc,
                         void (*body)(CommandContext&)) {
    CLI::App* sub = app.add_subcommand(name, desc);
    auto flags = std::make_shared<Flags>();
    sub->add_option("--config", flags->config, "key=value config file");
    sub->add_option("--set", flags->sets, "override: key=value (repeatable)");
    sub->add_option("--out", flags->out, "output directory")->required();
    sub->add_option("--seed", flags->seed, "base seed (overrides config)")
        ->each([flags](const std::string&) { flags->seed_given = true; });
    sub->add_option("--threads", flags->threads, "worker threads");
    cmds.push_back({name, sub, flags, body});
  };

  add_command("simulate", "generate/degrade a volume", cmd_simulate);
  add_command("stage1", "train the filter bank", cmd_stage1);
  add_command("stage2", "train the detail regressor", cmd_stage2);
  add_command("sr", "super-resolve a volume", cmd_sr);
  add_command("eval", "score baselines and the proposed output", cmd_eval);
  add_command("grid", "run the 3x3 acquisition grid", cmd_grid);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (auto& cmd : cmds) {
    if (!cmd.sub->parsed()) continue;
    CommandContext ctx;
    try {
      if (!cmd.flags->config.empty()) ctx.cfg.load_file(cmd.flags->config);
      for (const std::string& pair : cmd.flags->sets) ctx.cfg.set_pair(pair);
      if (cmd.flags->seed_given)
        ctx.cfg.set("seed", std::to_string(cmd.flags->seed));
      if (cmd.flags->threads > 0)
        ctx.cfg.set("threads", std::to_string(cmd.flags->threads));
      ctx.cfg.validate_keys();
      (void)ctx.cfg.get_long("threads", 1);
      ctx.out = cmd.flags->out;
      std::filesystem::create_directories(ctx.out);
      ctx.log_stream.open(ctx.out / "log.txt");
    } catch (const config_error& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return 2;
    }
    return run(cmd.name, cmd.body, ctx);
  }
  return 2;
}
