#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "ldaqu/gradcheck.hpp"
#include "ldaqu/io.hpp"
#include "ldaqu/trainer.hpp"
#include "test_util.hpp"

using namespace ldaqu;
using testutil::randn;
using testutil::temp_file;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string log = temp_file("cli_output.txt");
  const std::string cmd =
      std::string(LDAQU_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  r.output = os.str();
  return r;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int count_lines(const std::string& s) {
  int n = 0;
  for (const char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("upsample: PGM doubles to the expected header") {
  const std::string in = temp_file("cli_in.pgm");
  Tensor<double> img(1, 1, 64, 64);
  Rng rng(3);
  for (auto& v : img.values()) {
    v = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
  }
  write_image(in, img);
  const std::string out = temp_file("cli_out.pgm");
  const RunResult r =
      run_cli("upsample " + in + " --scale 2 --mode bilinear --out " + out);
  CHECK(r.exit_code == 0);
  const std::string bytes = slurp(out);
  CHECK(bytes.substr(0, 13) == "P5\n128 128\n25");
  CHECK(r.output.find("(1,1,128,128)") != std::string::npos);
  CHECK(r.output.find("flops:") != std::string::npos);
}

TEST_CASE("upsample: fractional scale floors the output extents") {
  const std::string in = temp_file("cli_in.ldat");
  write_tensor(in, randn(1, 3, 4, 6, 5));
  const std::string out = temp_file("cli_out.ldat");
  const RunResult r = run_cli("upsample " + in +
                              " --scale 1.5 --mode bilinear --out " + out);
  CHECK(r.exit_code == 0);
  const Tensor<double> y = read_tensor<double>(out);
  CHECK(y.h() == 6);
  CHECK(y.w() == 9);
}

TEST_CASE("upsample: seeded lda-aqu runs reproduce identical bytes") {
  const std::string in = temp_file("cli_seed.ldat");
  write_tensor(in, randn(1, 8, 6, 6, 7));
  const std::string out1 = temp_file("cli_seed1.ldat");
  const std::string out2 = temp_file("cli_seed2.ldat");
  const std::string flags = " --mode lda-aqu --reduction 2 --seed 11 --out ";
  CHECK(run_cli("upsample " + in + flags + out1).exit_code == 0);
  CHECK(run_cli("upsample " + in + flags + out2).exit_code == 0);
  CHECK(slurp(out1) == slurp(out2));
}

TEST_CASE("upsample: unknown flags are rejected") {
  const std::string in = temp_file("cli_in.pgm");
  const RunResult r =
      run_cli("upsample " + in + " --out x.pgm --no-such-flag");
  CHECK(r.exit_code == 2);
}

TEST_CASE("upsample: unreadable input exits 2") {
  const RunResult r = run_cli("upsample /does/not/exist --out x.ldat");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("error:") != std::string::npos);
}

TEST_CASE("gradcheck: passes, writes one row per registered op") {
  const std::string report = temp_file("cli_report.txt");
  const RunResult r = run_cli("gradcheck --out " + report);
  CHECK(r.exit_code == 0);
  CHECK(count_lines(slurp(report)) ==
        static_cast<int>(differentiable_ops().size()));
}

TEST_CASE("gradcheck: corrupted backward fails with nonzero exit") {
  const std::string report = temp_file("cli_report_bad.txt");
  const RunResult r =
      run_cli("gradcheck --corrupt-op lda_aqu --out " + report);
  CHECK(r.exit_code == 1);
  CHECK(slurp(report).find("op=lda_aqu") != std::string::npos);
  CHECK(slurp(report).find("pass=0") != std::string::npos);
}

TEST_CASE("offsets: fresh weights leave samples on the reference points") {
  const std::string in = temp_file("cli_off.ldat");
  write_tensor(in, randn(1, 8, 8, 8, 9));
  const std::string out = temp_file("cli_off.csv");
  const RunResult r = run_cli("offsets " + in +
                              " --reduction 2 --stride 3 --out " + out);
  CHECK(r.exit_code == 0);
  std::istringstream is(slurp(out));
  std::string line;
  std::getline(is, line);  // header
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double qx, qy, gi, pj, rx, ry, sx, sy, wt;
    ls >> qx >> qy >> gi >> pj >> rx >> ry >> sx >> sy >> wt;
    CHECK(sx == rx);
    CHECK(sy == ry);
  }
  // out 16x16, stride 3 -> 5*5 queries, 2 groups, 9 points
  CHECK(rows == 5 * 5 * 2 * 9);
}

TEST_CASE("offsets: trained weights stay within theta of the references") {
  const std::string w_path = temp_file("cli_trained.ldaw");
  const RunResult train = run_cli(
      "train-toy --task shifted --steps 30 --lr 0.1 --theta 5 "
      "--weights-out " + w_path);
  CHECK(train.exit_code == 0);

  const std::string in = temp_file("cli_off2.ldat");
  write_tensor(in, randn(1, 8, 6, 6, 13));
  const std::string out = temp_file("cli_off2.csv");
  const RunResult r = run_cli("offsets " + in +
                              " --theta 5 --stride 2 --weights " + w_path +
                              " --out " + out);
  CHECK(r.exit_code == 0);
  std::istringstream is(slurp(out));
  std::string line;
  std::getline(is, line);
  int rows = 0;
  bool moved = false;
  while (std::getline(is, line)) {
    ++rows;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double qx, qy, gi, pj, rx, ry, sx, sy, wt;
    ls >> qx >> qy >> gi >> pj >> rx >> ry >> sx >> sy >> wt;
    CHECK(std::abs(sx - rx) <= 5.0 + 1e-12);
    CHECK(std::abs(sy - ry) <= 5.0 + 1e-12);
    moved = moved || sx != rx || sy != ry;
  }
  CHECK(rows == 6 * 6 * 2 * 9);
  CHECK(moved);  // training switched the deformation on
}

TEST_CASE("offsets: refuses other modes") {
  const std::string in = temp_file("cli_off.ldat");
  const RunResult r =
      run_cli("offsets " + in + " --mode bilinear --out x.csv");
  CHECK(r.exit_code == 2);
}

TEST_CASE("train-toy: lr 0 gives a flat trace") {
  const std::string out = temp_file("cli_flat.csv");
  const RunResult r =
      run_cli("train-toy --task bilinear --steps 5 --lr 0 --out " + out);
  CHECK(r.exit_code == 0);
  std::istringstream is(slurp(out));
  std::string line;
  std::getline(is, line);
  CHECK(line == "step,loss");
  std::string first;
  int rows = 0;
  while (std::getline(is, line)) {
    const std::string loss = line.substr(line.find(',') + 1);
    if (rows == 0) first = loss;
    CHECK(loss == first);
    ++rows;
  }
  CHECK(rows == 6);
}

TEST_CASE("train-toy: bilinear task reaches the 5% target in 500 steps") {
  const std::string out = temp_file("cli_train.csv");
  const RunResult r = run_cli(
      "train-toy --task bilinear --steps 500 --lr 0.1 --theta 5 --out " + out);
  CHECK(r.exit_code == 0);
  std::istringstream is(slurp(out));
  std::string line;
  std::getline(is, line);
  double first = 0.0, last = 0.0;
  bool have_first = false;
  while (std::getline(is, line)) {
    const double v = std::stod(line.substr(line.find(',') + 1));
    if (!have_first) {
      first = v;
      have_first = true;
    }
    last = v;
  }
  CHECK(last < 0.05 * first);
}

TEST_CASE("train-toy: saved weights reproduce the final loss exactly") {
  const std::string out = temp_file("cli_reload.csv");
  const std::string w_path = temp_file("cli_reload.ldaw");
  const RunResult r = run_cli(
      "train-toy --task shifted --steps 25 --lr 0.1 --theta 5 --seed 17 "
      "--out " + out + " --weights-out " + w_path);
  CHECK(r.exit_code == 0);

  // rebuild the task exactly as the command does and evaluate the weights
  UpsampleConfig cfg;
  cfg.theta = 5.0;
  Rng task_rng(17);
  const ToyTask task =
      make_task(TaskKind::ShiftedTarget, 2, 8, 6, 6, 2.0, task_rng);
  const LdaAquWeights<double> w = read_weights(w_path, cfg, 8);
  const Tensor<double> y = lda_aqu_upsample(task.inputs, w, cfg).y;
  const double loss = mse_half_loss(y, task.targets);

  std::istringstream is(slurp(out));
  std::string line, lastline;
  std::getline(is, line);
  while (std::getline(is, line)) lastline = line;
  const double recorded = std::stod(lastline.substr(lastline.find(',') + 1));
  CHECK(recorded == loss);
}

TEST_CASE("bench: flops scale linearly in the token count") {
  const RunResult r = run_cli("bench --sizes 8 16 --channels 8");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("model flops vs tokens exponent: 1\n") !=
        std::string::npos);
}

TEST_SUITE_END();
