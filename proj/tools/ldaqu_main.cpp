// Command-line driver: upsample tensors/images, certify gradients, benchmark
// scaling, dump deformed sampling points, and run the toy trainer.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ldaqu/bench.hpp"
#include "ldaqu/gradcheck.hpp"
#include "ldaqu/io.hpp"
#include "ldaqu/oracle.hpp"
#include "ldaqu/trainer.hpp"
#include "ldaqu/upsample.hpp"

namespace {

using namespace ldaqu;

struct Flags {
  double scale = 2.0;
  int ku = 3;
  int ke = 3;
  double theta = 11.0;
  int groups = 2;
  int reduction = 4;
  std::string mode = "lda-aqu";
  std::string proj = "align-corners";
  std::string padding = "zeros";
  std::string query_up = "bilinear";
  std::uint64_t seed = 0;
  std::string weights_path;
  std::string out;
};

void add_operator_flags(CLI::App* cmd, Flags* f) {
  cmd->add_option("--scale", f->scale, "upsampling factor (> 1)");
  cmd->add_option("--ku", f->ku, "neighbor stencil size (odd)");
  cmd->add_option("--ke", f->ke, "offset predictor kernel size (odd)");
  cmd->add_option("--theta", f->theta, "deformation range in input pixels");
  cmd->add_option("--groups", f->groups, "offset groups");
  cmd->add_option("--reduction", f->reduction, "channel reduction factor");
  cmd->add_option("--mode", f->mode, "upsampler")
      ->check(CLI::IsMember({"nearest", "bilinear", "la-aqu", "lda-aqu"}));
  cmd->add_option("--proj", f->proj, "coordinate projection")
      ->check(CLI::IsMember({"paper", "align-corners"}));
  cmd->add_option("--padding", f->padding, "out-of-range sampling")
      ->check(CLI::IsMember({"zeros", "border"}));
  cmd->add_option("--query-up", f->query_up, "query upsampling scheme")
      ->check(CLI::IsMember({"bilinear", "nearest"}));
  cmd->add_option("--seed", f->seed, "rng seed for fresh weights");
  cmd->add_option("--weights", f->weights_path, "weights file to load");
}

UpsampleConfig to_config(const Flags& f) {
  UpsampleConfig cfg;
  cfg.alpha = f.scale;
  cfg.k_u = f.ku;
  cfg.k_e = f.ke;
  cfg.theta = f.theta;
  cfg.groups = f.groups;
  cfg.reduction = f.reduction;
  cfg.projection_mode = f.proj == "paper" ? ProjectionMode::PaperExact
                                          : ProjectionMode::AlignCorners;
  cfg.padding =
      f.padding == "border" ? PaddingMode::Border : PaddingMode::Zeros;
  cfg.query_upsample = f.query_up == "nearest" ? QueryUpsample::Nearest
                                               : QueryUpsample::Bilinear;
  return cfg;
}

bool is_image_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() >= 2 && magic[0] == 'P' &&
      (magic[1] == '5' || magic[1] == '6')) {
    return true;
  }
  if (in.gcount() == 4 && std::string(magic, 4) == "LDAT") return false;
  throw UnsupportedFormatError(path +
                               ": neither a PGM/PPM image nor a tensor file");
}

void print_flops(const UpsampleConfig& cfg, int h, int w, int c) {
  const oracle::FlopsBreakdown fb = oracle::flops(cfg, h, w, c);
  std::printf("flops:  projection=%.0f interaction=%.0f offset_prediction=%.0f"
              " total=%.0f\n",
              fb.projection, fb.interaction, fb.offset_prediction, fb.total);
}

// Images carry 1 or 3 channels; the attention modes need divisible channel
// groups, so the demo path clamps reduction and groups to 1.
UpsampleConfig image_clamped(const UpsampleConfig& cfg, bool attention_mode) {
  UpsampleConfig out = cfg;
  if (attention_mode && (out.reduction != 1 || out.groups != 1)) {
    std::printf("note: image input; clamping reduction and groups to 1\n");
    out.reduction = 1;
    out.groups = 1;
  }
  return out;
}

LdaAquWeights<double> load_or_init(const Flags& f, const UpsampleConfig& cfg,
                                   int channels) {
  if (!f.weights_path.empty()) {
    return read_weights(f.weights_path, cfg, channels);
  }
  Rng rng(f.seed);
  return init_weights<double>(cfg, channels, rng);
}

int cmd_upsample(const Flags& f, const std::string& input) {
  const bool image = is_image_file(input);
  const Tensor<double> x =
      image ? read_image(input) : read_tensor_as_double(input);
  const bool attention = f.mode == "la-aqu" || f.mode == "lda-aqu";
  UpsampleConfig cfg = to_config(f);
  if (image) cfg = image_clamped(cfg, attention);
  if (attention) cfg.validate(x.c());

  Tensor<double> y;
  if (f.mode == "nearest") {
    y = nearest_upsample(x, cfg.alpha, cfg.projection_mode);
  } else if (f.mode == "bilinear") {
    y = bilinear_upsample(x, cfg.alpha, cfg.projection_mode, cfg.padding);
  } else {
    const LdaAquWeights<double> w = load_or_init(f, cfg, x.c());
    if (f.mode == "la-aqu") {
      y = la_aqu_upsample(x, w, cfg);
    } else {
      y = lda_aqu_upsample(x, w, cfg).y;
    }
  }
  if (image) {
    write_image(f.out, y);
  } else {
    write_tensor(f.out, y);
  }
  std::printf("input:  %s %s\n", x.shape_str().c_str(), input.c_str());
  std::printf("mode:   %s  scale %s  proj %s\n", f.mode.c_str(),
              format_double(cfg.alpha).c_str(), f.proj.c_str());
  std::printf("output: %s -> %s\n", y.shape_str().c_str(), f.out.c_str());
  print_flops(cfg, x.h(), x.w(), x.c());
  return 0;
}

int cmd_gradcheck(const Flags& f, const std::string& report_path,
                  double threshold, const std::string& corrupt_op) {
  GradCheckOptions opts;
  opts.seed = f.seed;
  opts.threshold = threshold;
  opts.corrupt_op = corrupt_op;
  const std::vector<GradReport> reports = grad_check_all(opts);
  if (!report_path.empty()) write_grad_reports(report_path, reports);
  bool all_pass = true;
  std::printf("%-18s %-6s %-12s %-12s\n", "op", "pass", "max_rel_err",
              "max_abs_err");
  for (const GradReport& r : reports) {
    std::printf("%-18s %-6s %-12.3e %-12.3e\n", r.op.c_str(),
                r.pass ? "yes" : "NO", r.max_rel_err(), r.max_abs_err());
    all_pass = all_pass && r.pass;
  }
  std::printf("%s at threshold %s (seed %llu)\n",
              all_pass ? "all gradients certified" : "GRADIENT CHECK FAILED",
              format_double(threshold).c_str(),
              static_cast<unsigned long long>(f.seed));
  return all_pass ? 0 : 1;
}

int cmd_bench(const Flags& f, const std::vector<int>& sizes, int channels) {
  const UpsampleConfig cfg = to_config(f);
  cfg.validate(channels);
  const BenchResult r = run_bench(cfg, sizes, channels, f.seed);
  std::printf("%6s %10s %14s %12s\n", "H=W", "tokens", "model_flops",
              "time_ms");
  for (const BenchRow& row : r.rows) {
    std::printf("%6d %10lld %14.4e %12.3f\n", row.size,
                static_cast<long long>(row.tokens), row.flops.total,
                row.seconds * 1e3);
  }
  std::printf("model flops vs tokens exponent: %s\n",
              format_double(r.flops_exponent).c_str());
  std::printf("wall time vs tokens exponent:   %s\n",
              format_double(r.time_exponent).c_str());
  return 0;
}

int cmd_offsets(const Flags& f, const std::string& input, int stride) {
  if (f.mode != "lda-aqu") {
    throw ConfigError("offsets requires --mode lda-aqu");
  }
  const bool image = is_image_file(input);
  const Tensor<double> x =
      image ? read_image(input) : read_tensor_as_double(input);
  UpsampleConfig cfg = to_config(f);
  if (image) cfg = image_clamped(cfg, true);
  cfg.validate(x.c());
  const LdaAquWeights<double> w = load_or_init(f, cfg, x.c());
  const LdaAquOutput<double> out = lda_aqu_upsample(x, w, cfg);
  const std::vector<double> attention(out.attention.begin(),
                                      out.attention.end());
  write_offset_dump(f.out, out.grid, attention, stride);
  const int sten = cfg.k_u * cfg.k_u;
  const long long rows = static_cast<long long>(out.grid.out_h / stride) *
                         (out.grid.out_w / stride) * cfg.groups * sten;
  std::printf("wrote %lld offset rows (stride %d) -> %s\n", rows, stride,
              f.out.c_str());
  return 0;
}

int cmd_train_toy(const Flags& f, const std::string& task_name, int steps,
                  double lr, int task_batch, int task_channels, int task_size,
                  const std::string& weights_out) {
  const TaskKind kind = task_name == "shifted" ? TaskKind::ShiftedTarget
                                               : TaskKind::BilinearTarget;
  const UpsampleConfig cfg = to_config(f);
  cfg.validate(task_channels);
  Rng task_rng(f.seed);
  const ToyTask task = make_task(kind, task_batch, task_channels, task_size,
                                 task_size, cfg.alpha, task_rng);
  Rng train_rng(f.seed + 1);
  const TrainLog log = train(task, cfg, steps, lr, train_rng);
  if (!f.out.empty()) write_loss_csv(f.out, log.losses);
  if (!weights_out.empty()) {
    write_weights(weights_out, log.weights, cfg, task_channels);
  }
  std::printf("task:    %s (%d x %dch x %dx%d)\n", task_name.c_str(),
              task_batch, task_channels, task_size, task_size);
  std::printf("initial: %s\n", format_double(log.losses.front()).c_str());
  std::printf("final:   %s\n", format_double(log.losses.back()).c_str());
  if (log.diverged) {
    std::printf("training diverged after %zu steps; trace at %s\n",
                log.losses.size() - 1, f.out.c_str());
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"query-guided deformable attention feature upsampling"};
  app.require_subcommand(1);

  Flags f;
  std::string input;
  std::string report_path = "gradcheck_report.txt";
  double threshold = 1e-4;
  std::string corrupt_op;
  std::vector<int> bench_sizes = {16, 32, 64, 128};
  int bench_channels = 64;
  int stride = 8;
  std::string task_name = "bilinear";
  int steps = 500;
  double lr = 0.1;
  int task_batch = 2;
  int task_channels = 8;
  int task_size = 6;
  std::string weights_out;

  CLI::App* up = app.add_subcommand("upsample", "upsample a tensor or image");
  up->add_option("input", input, "input .ldat tensor or PGM/PPM image")
      ->required();
  add_operator_flags(up, &f);
  up->add_option("--out", f.out, "output path")->required();

  CLI::App* gc = app.add_subcommand(
      "gradcheck", "finite-difference gradient certification");
  gc->add_option("--seed", f.seed, "instance seed");
  gc->add_option("--out", report_path, "report file (one row per op)");
  gc->add_option("--threshold", threshold, "max relative error");
  gc->add_option("--corrupt-op", corrupt_op,
                 "harness sanity hook: bias this op's analytic gradients")
      ->group("");  // hidden

  CLI::App* be =
      app.add_subcommand("bench", "model flops and wall time sweep");
  add_operator_flags(be, &f);
  be->add_option("--sizes", bench_sizes, "square input sizes");
  be->add_option("--channels", bench_channels, "input channels");

  CLI::App* of =
      app.add_subcommand("offsets", "dump deformed sampling points as CSV");
  of->add_option("input", input, "input .ldat tensor or PGM/PPM image")
      ->required();
  add_operator_flags(of, &f);
  of->add_option("--stride", stride, "query subsampling stride");
  of->add_option("--out", f.out, "output CSV path")->required();

  CLI::App* tt =
      app.add_subcommand("train-toy", "gradient-descent demo on a toy task");
  add_operator_flags(tt, &f);
  tt->add_option("--task", task_name, "toy task")
      ->check(CLI::IsMember({"bilinear", "shifted"}));
  tt->add_option("--steps", steps, "gradient steps");
  tt->add_option("--lr", lr, "learning rate");
  tt->add_option("--task-batch", task_batch, "task batch size");
  tt->add_option("--task-channels", task_channels, "task channels");
  tt->add_option("--task-size", task_size, "task spatial extent");
  tt->add_option("--out", f.out, "loss trace CSV path");
  tt->add_option("--weights-out", weights_out, "save trained weights here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (up->parsed()) return cmd_upsample(f, input);
    if (gc->parsed()) {
      return cmd_gradcheck(f, report_path, threshold, corrupt_op);
    }
    if (be->parsed()) return cmd_bench(f, bench_sizes, bench_channels);
    if (of->parsed()) return cmd_offsets(f, input, stride);
    if (tt->parsed()) {
      return cmd_train_toy(f, task_name, steps, lr, task_batch, task_channels,
                           task_size, weights_out);
    }
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}
