// Acceptance suite: one criterion per section, one PASS/FAIL line each.
// Exits nonzero if any criterion fails.

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ldaqu/bench.hpp"
#include "ldaqu/gradcheck.hpp"
#include "ldaqu/io.hpp"
#include "ldaqu/oracle.hpp"
#include "ldaqu/trainer.hpp"
#include "ldaqu/upsample.hpp"

using namespace ldaqu;

namespace {

struct Harness {
  int failures = 0;
  int index = 0;

  void run(const std::string& name, const std::function<bool()>& fn) {
    ++index;
    bool ok = false;
    std::string note;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      note = std::string(" (exception: ") + e.what() + ")";
    }
    std::printf("[%2d] %s  %s%s\n", index, ok ? "PASS" : "FAIL", name.c_str(),
                note.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return 1e300;
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) -
                             static_cast<double>(b.data()[i])));
  }
  return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

Tensor<double> randn(int n, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(n, c, h, w);
  fill_normal(t, rng);
  return t;
}

std::string temp_path(const std::string& name) {
  return "/tmp/ldaqu_acceptance_" + std::to_string(::getpid()) + "_" + name;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Random valid instance within the small-problem envelope of criterion 4.
struct Instance {
  UpsampleConfig cfg;
  int channels = 0, h = 0, w = 0;
};

Instance random_instance(Rng& rng) {
  const int c_choices[3] = {4, 8, 16};
  const int r_choices[3] = {1, 2, 4};
  const double a_choices[3] = {1.5, 2.0, 3.0};
  const int ku_choices[3] = {1, 3, 5};
  while (true) {
    Instance in;
    in.channels = c_choices[rng.uniform_int(0, 2)];
    in.cfg.reduction = r_choices[rng.uniform_int(0, 2)];
    in.cfg.groups = rng.uniform_int(1, 2);
    if (in.channels % in.cfg.reduction != 0) continue;
    const int reduced = in.channels / in.cfg.reduction;
    if (reduced % in.cfg.groups != 0 || in.channels % in.cfg.groups != 0) {
      continue;
    }
    in.cfg.alpha = a_choices[rng.uniform_int(0, 2)];
    in.cfg.k_u = ku_choices[rng.uniform_int(0, 2)];
    in.cfg.k_e = rng.uniform_int(0, 1) ? 3 : 1;
    in.cfg.theta = rng.uniform(0.5, 11.0);
    in.cfg.projection_mode = rng.uniform_int(0, 1)
                                 ? ProjectionMode::AlignCorners
                                 : ProjectionMode::PaperExact;
    in.cfg.padding =
        rng.uniform_int(0, 1) ? PaddingMode::Zeros : PaddingMode::Border;
    in.cfg.query_upsample = rng.uniform_int(0, 1) ? QueryUpsample::Bilinear
                                                  : QueryUpsample::Nearest;
    in.h = rng.uniform_int(2, 8);
    in.w = rng.uniform_int(2, 8);
    return in;
  }
}

LdaAquWeights<double> deformed_weights(const UpsampleConfig& cfg, int channels,
                                       std::uint64_t seed) {
  Rng rng(seed);
  LdaAquWeights<double> w = init_weights<double>(cfg, channels, rng);
  fill_uniform(w.offset_weight, rng, -0.3, 0.3);
  fill_uniform(w.offset_bias, rng, -0.6, 0.6);
  return w;
}

// 1. FLOP model: spot value and exact linearity in the token count.
bool criterion_flops() {
  UpsampleConfig cfg;
  cfg.alpha = 2.0;
  cfg.k_u = 3;
  cfg.k_e = 3;
  const oracle::FlopsBreakdown spot = oracle::flops(cfg, 8, 8, 16);
  if (spot.projection != 32768.0 || spot.interaction != 73728.0 ||
      spot.offset_prediction != 663552.0 || spot.total != 770048.0) {
    return false;
  }
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    UpsampleConfig c;
    c.alpha = rng.uniform(1.1, 4.0);
    c.k_u = 2 * rng.uniform_int(0, 3) + 1;
    c.k_e = 2 * rng.uniform_int(0, 2) + 1;
    const int h = rng.uniform_int(1, 64);
    const int w = rng.uniform_int(1, 64);
    const int ch = rng.uniform_int(1, 256);
    const oracle::FlopsBreakdown one = oracle::flops(c, h, w, ch);
    const oracle::FlopsBreakdown two = oracle::flops(c, 2 * h, w, ch);
    if (two.projection != 2.0 * one.projection ||
        two.interaction != 2.0 * one.interaction ||
        two.offset_prediction != 2.0 * one.offset_prediction ||
        two.total != 2.0 * one.total) {
      return false;
    }
    if (one.total != one.projection + one.interaction + one.offset_prediction) {
      return false;
    }
  }
  return true;
}

// 2. k_u=1, zero offsets, identity values -> bilinear interpolation (1e-12).
bool criterion_bilinear_degeneracy() {
  Rng rng(202);
  for (int trial = 0; trial < 50; ++trial) {
    Instance in = random_instance(rng);
    in.cfg.k_u = 1;
    in.cfg.value_projection = ValueProjection::Identity;
    Rng wr(2020 + trial);
    const LdaAquWeights<double> w =
        init_weights<double>(in.cfg, in.channels, wr);
    const Tensor<double> x = randn(1, in.channels, in.h, in.w, 2100 + trial);
    const Tensor<double> y = lda_aqu_upsample(x, w, in.cfg).y;
    const Tensor<double> ref = oracle::naive_bilinear(
        x, in.cfg.alpha, in.cfg.projection_mode, in.cfg.padding);
    if (max_abs_diff(y, ref) >= 1e-12) return false;
  }
  return true;
}

// 3. one-hot-nearest hook with zero offsets -> nearest neighbor, exactly.
bool criterion_nearest_degeneracy() {
  Rng rng(303);
  for (int trial = 0; trial < 50; ++trial) {
    Instance in = random_instance(rng);
    in.cfg.value_projection = ValueProjection::Identity;
    Rng wr(3030 + trial);
    const LdaAquWeights<double> w =
        init_weights<double>(in.cfg, in.channels, wr);
    const Tensor<double> x = randn(1, in.channels, in.h, in.w, 3100 + trial);
    const Tensor<double> y =
        lda_aqu_upsample(x, w, in.cfg, AttentionHook::OneHotNearest).y;
    const Tensor<double> ref =
        nearest_upsample(x, in.cfg.alpha, in.cfg.projection_mode);
    if (!bit_equal(y, ref)) return false;
  }
  return true;
}

// 4. vectorized forward == naive oracle within 1e-9 on >= 100 instances.
bool criterion_oracle_equivalence() {
  Rng rng(404);
  for (int trial = 0; trial < 110; ++trial) {
    Instance in = random_instance(rng);
    if (rng.uniform_int(0, 3) == 0) {
      in.cfg.value_projection = ValueProjection::Learned;
    }
    const LdaAquWeights<double> w =
        deformed_weights(in.cfg, in.channels, 4040 + trial);
    const Tensor<double> x = randn(1, in.channels, in.h, in.w, 4100 + trial);
    const Tensor<double> lda = lda_aqu_upsample(x, w, in.cfg).y;
    if (max_abs_diff(lda, oracle::naive_lda_aqu(x, w, in.cfg)) >= 1e-9) {
      return false;
    }
    const Tensor<double> la = la_aqu_upsample(x, w, in.cfg);
    if (max_abs_diff(la, oracle::naive_la_aqu(x, w, in.cfg)) >= 1e-9) {
      return false;
    }
  }
  return true;
}

// 5. every differentiable op passes finite differences at 1e-4; the registry
// covers the canonical op list.
bool criterion_gradients() {
  const auto& required = differentiable_ops();
  const auto registered = registered_ops();
  if (required.size() != registered.size()) return false;
  for (const auto& op : required) {
    bool found = false;
    for (const auto& r : registered) found = found || r == op;
    if (!found) return false;
  }
  bool lda_seen = false;
  for (const GradReport& r : grad_check_all()) {
    if (!r.pass) {
      std::fprintf(stderr, "  gradient check failed: %s (max rel %.3e)\n",
                   r.op.c_str(), r.max_rel_err());
      return false;
    }
    lda_seen = lda_seen || r.op == "lda_aqu";
  }
  return lda_seen;
}

// 6. attention normalization and deformation range on every forward; fresh
// weights keep the operators identical.
bool criterion_invariants() {
  Rng rng(606);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng);
    const LdaAquWeights<double> w =
        deformed_weights(in.cfg, in.channels, 6060 + trial);
    const Tensor<double> x = randn(2, in.channels, in.h, in.w, 6100 + trial);
    const LdaAquOutput<double> out = lda_aqu_upsample(x, w, in.cfg);
    const int sten = in.cfg.k_u * in.cfg.k_u;
    for (std::int64_t idx = 0; idx < out.grid.pixels(); ++idx) {
      for (int gi = 0; gi < in.cfg.groups; ++gi) {
        double sum = 0.0;
        for (int j = 0; j < sten; ++j) {
          sum += out.attention[(idx * in.cfg.groups + gi) * sten + j];
        }
        if (std::abs(sum - 1.0) > 1e-12) return false;
      }
    }
    for (const Coord& d : out.grid.delta_r) {
      if (std::abs(d.x) > in.cfg.theta || std::abs(d.y) > in.cfg.theta) {
        return false;
      }
    }
    // zero-initialized predictor: no deformation, operators coincide
    Rng wr(6200 + trial);
    const LdaAquWeights<double> fresh =
        init_weights<double>(in.cfg, in.channels, wr);
    const LdaAquOutput<double> lda = lda_aqu_upsample(x, fresh, in.cfg);
    for (const Coord& d : lda.grid.delta_r) {
      if (d.x != 0.0 || d.y != 0.0) return false;
    }
    if (!bit_equal(lda.y, la_aqu_upsample(x, fresh, in.cfg))) return false;
  }
  return true;
}

// 7. training: 5% target on the realizable task, and deformation beats the
// frozen-uniform variant on at least 9 of 10 seeds.
bool criterion_training() {
  UpsampleConfig cfg;
  cfg.theta = 5.0;  // small maps prefer a modest deformation range

  bool five_percent = false;
  for (const double lr : {0.3, 0.2, 0.1, 0.05}) {
    Rng rng(707);
    const ToyTask task = make_task(TaskKind::BilinearTarget, 2, 8, 6, 6, 2.0, rng);
    Rng trng(708);
    const TrainLog log = train(task, cfg, 500, lr, trng);
    if (!log.diverged && log.losses.back() < 0.05 * log.losses.front()) {
      five_percent = true;
      break;
    }
  }
  if (!five_percent) {
    std::fprintf(stderr, "  bilinear task missed the 5%% target\n");
    return false;
  }

  UpsampleConfig scfg = cfg;
  scfg.padding = PaddingMode::Border;  // targets sample with border clamping
  int wins = 0;
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    const ToyTask task =
        make_task(TaskKind::ShiftedTarget, 2, 8, 6, 6, 2.0, rng);
    Rng ta(200 + seed), tb(200 + seed);
    const TrainLog lda = train(task, scfg, 300, 0.1, ta, UpsamplerKind::LdaAqu);
    const TrainLog la = train(task, scfg, 300, 0.1, tb, UpsamplerKind::LaAqu);
    if (!lda.diverged && !la.diverged &&
        lda.losses.back() < la.losses.back()) {
      ++wins;
    }
  }
  if (wins < 9) {
    std::fprintf(stderr, "  deformation won only %d/10 seeds\n", wins);
    return false;
  }
  return true;
}

// 8. repeated runs and different worker counts produce identical bytes.
bool criterion_determinism() {
  const UpsampleConfig cfg = [] {
    UpsampleConfig c;
    c.reduction = 2;
    c.theta = 2.0;
    return c;
  }();
  const LdaAquWeights<double> w = deformed_weights(cfg, 8, 808);
  const Tensor<double> x = randn(2, 8, 7, 6, 809);
  const Tensor<double> up = randn(2, 8, 14, 12, 810);

  set_num_threads(1);
  const LdaAquOutput<double> a = lda_aqu_upsample(x, w, cfg);
  const LdaAquOutput<double> b = lda_aqu_upsample(x, w, cfg);
  const GradBundle<double> ga = lda_aqu_backward(x, w, cfg, up);
  set_num_threads(4);
  const LdaAquOutput<double> c = lda_aqu_upsample(x, w, cfg);
  const GradBundle<double> gc = lda_aqu_backward(x, w, cfg, up);
  set_num_threads(1);
  if (!bit_equal(a.y, b.y) || !bit_equal(a.y, c.y)) return false;
  if (a.attention != b.attention || a.attention != c.attention) return false;
  if (!bit_equal(ga.x, gc.x) || !bit_equal(ga.w_q, gc.w_q) ||
      !bit_equal(ga.offset_bias, gc.offset_bias)) {
    return false;
  }

#ifdef LDAQU_CLI_PATH
  const std::string in = temp_path("det.ldat");
  write_tensor(in, x);
  const std::string out1 = temp_path("det1.ldat");
  const std::string out2 = temp_path("det2.ldat");
  const std::string base = std::string(LDAQU_CLI_PATH) + " upsample " + in +
                           " --mode lda-aqu --reduction 2 --seed 4 --out ";
  if (std::system((base + out1 + " > /dev/null").c_str()) != 0) return false;
  if (std::system((base + out2 + " > /dev/null").c_str()) != 0) return false;
  if (slurp(out1).empty() || slurp(out1) != slurp(out2)) return false;
#endif
  return true;
}

// 9. measured wall time scales linearly with the input token count.
bool criterion_complexity() {
  UpsampleConfig cfg;  // defaults: alpha 2, k_u 3, k_e 3, groups 2, r 4
  const std::vector<int> sizes = {16, 32, 64, 128};
  const BenchResult r = run_bench(cfg, sizes, 64, 909);
  if (std::abs(r.flops_exponent - 1.0) > 1e-9) return false;
  std::printf("     measured wall-time exponent: %.3f\n", r.time_exponent);
  return r.time_exponent >= 0.8 && r.time_exponent <= 1.3;
}

// 10. bit-exact round trips and offset-dump invariants.
bool criterion_serialization() {
  const Tensor<double> t = randn(2, 3, 5, 4, 1010);
  const std::string tpath = temp_path("t.ldat");
  write_tensor(tpath, t);
  if (!bit_equal(t, read_tensor<double>(tpath))) return false;

  Tensor<double> img(1, 3, 6, 5);
  Rng irng(1011);
  for (auto& v : img.values()) {
    v = static_cast<double>(irng.uniform_int(0, 255)) / 255.0;
  }
  const std::string ipath = temp_path("img.ppm");
  write_image(ipath, img);
  if (!bit_equal(img, read_image(ipath))) return false;
  write_image(ipath, img);
  const std::string once = slurp(ipath);
  write_image(ipath, img);
  if (once != slurp(ipath)) return false;

  UpsampleConfig cfg;
  cfg.reduction = 2;
  cfg.theta = 2.5;
  const LdaAquWeights<double> w = deformed_weights(cfg, 8, 1012);
  const std::string wpath = temp_path("w.ldaw");
  write_weights(wpath, w, cfg, 8);
  const LdaAquWeights<double> back = read_weights(wpath, cfg, 8);
  if (!bit_equal(w.w_q, back.w_q) || !bit_equal(w.w_k, back.w_k) ||
      !bit_equal(w.dw_kernel, back.dw_kernel) ||
      !bit_equal(w.offset_weight, back.offset_weight) ||
      !bit_equal(w.offset_bias, back.offset_bias)) {
    return false;
  }

  const Tensor<double> x = randn(1, 8, 5, 5, 1013);
  const LdaAquOutput<double> out = lda_aqu_upsample(x, w, cfg);
  const std::string dpath = temp_path("dump.csv");
  const std::vector<double> attention(out.attention.begin(),
                                      out.attention.end());
  write_offset_dump(dpath, out.grid, attention, 1);
  std::istringstream is(slurp(dpath));
  std::string line;
  std::getline(is, line);  // header
  const int sten = cfg.k_u * cfg.k_u;
  double weight_sum = 0.0;
  int in_block = 0;
  while (std::getline(is, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double qx, qy, gi, pj, rx, ry, sx, sy, wt;
    if (!(ls >> qx >> qy >> gi >> pj >> rx >> ry >> sx >> sy >> wt)) {
      return false;
    }
    const std::int64_t idx =
        static_cast<std::int64_t>(qy) * out.grid.out_w +
        static_cast<std::int64_t>(qx);
    const Coord d = out.grid.delta_r[out.grid.group_index(
        idx, static_cast<int>(gi), static_cast<int>(pj))];
    if (sx != rx + d.x || sy != ry + d.y) return false;
    weight_sum += wt;
    if (++in_block == sten) {
      if (std::abs(weight_sum - 1.0) > 1e-6) return false;
      weight_sum = 0.0;
      in_block = 0;
    }
  }
  return true;
}

}  // namespace

int main() {
  Harness h;
  h.run("flop model: spot value and exact linearity", criterion_flops);
  h.run("degeneracy to bilinear interpolation (1e-12, 50 instances)",
        criterion_bilinear_degeneracy);
  h.run("degeneracy to nearest neighbor (exact, 50 instances)",
        criterion_nearest_degeneracy);
  h.run("oracle equivalence (1e-9, 110 instances)",
        criterion_oracle_equivalence);
  h.run("gradient correctness (1e-4, registry complete)", criterion_gradients);
  h.run("softmax normalization and deformation range invariants",
        criterion_invariants);
  h.run("trainability: 5% target and deformation advantage",
        criterion_training);
  h.run("determinism across repeats and worker counts",
        criterion_determinism);
  h.run("linear wall-time scaling in token count", criterion_complexity);
  h.run("serialization round trips and offset dump invariants",
        criterion_serialization);
  std::printf("acceptance: %d/10 criteria passed\n", 10 - h.failures);
  return h.failures == 0 ? 0 : 1;
}
