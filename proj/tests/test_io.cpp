#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ldaqu/io.hpp"
#include "ldaqu/oracle.hpp"
#include "test_util.hpp"

using namespace ldaqu;
using testutil::bit_equal;
using testutil::randn;
using testutil::temp_file;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE_BEGIN("io_formats");

TEST_CASE("tensor file round trip is bit-identical") {
  const std::string path = temp_file("roundtrip.ldat");
  const Tensor<double> t = randn(2, 3, 4, 5, 7);
  write_tensor(path, t);
  const Tensor<double> back = read_tensor<double>(path);
  CHECK(bit_equal(t, back));

  // and byte-stable across repeated writes
  const std::string first = slurp(path);
  write_tensor(path, t);
  CHECK(first == slurp(path));

  Tensor<float> f(1, 2, 3, 2);
  Rng rng(8);
  fill_normal(f, rng);
  const std::string fpath = temp_file("roundtrip32.ldat");
  write_tensor(fpath, f);
  const Tensor<float> fback = read_tensor<float>(fpath);
  CHECK(bit_equal(f, fback));
  CHECK_THROWS_AS(read_tensor<double>(fpath), UnsupportedFormatError);
  const Tensor<double> widened = read_tensor_as_double(fpath);
  for (std::int64_t i = 0; i < f.size(); ++i) {
    CHECK(widened.data()[i] == static_cast<double>(f.data()[i]));
  }
}

TEST_CASE("tensor file header layout is fixed") {
  const std::string path = temp_file("header.ldat");
  Tensor<float> t(1, 1, 1, 1);
  t.at(0, 0, 0, 0) = 1.0f;
  write_tensor(path, t);
  const std::string bytes = slurp(path);
  // magic + version + dtype + rank + 4 extents + one binary32 scalar
  REQUIRE(bytes.size() == 4 + 4 + 4 + 4 + 16 + 4);
  CHECK(bytes.substr(0, 4) == "LDAT");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);   // version, LE
  CHECK(static_cast<unsigned char>(bytes[8]) == 0);   // dtype binary32
  CHECK(static_cast<unsigned char>(bytes[12]) == 4);  // rank
}

TEST_CASE("tensor file rejects bad magic, version, and zero extents") {
  const std::string path = temp_file("bad.ldat");
  const Tensor<double> t = randn(1, 1, 2, 2, 9);
  write_tensor(path, t);
  std::string bytes = slurp(path);

  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  spit(path, wrong_magic);
  CHECK_THROWS_AS(read_tensor<double>(path), UnsupportedFormatError);

  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  spit(path, wrong_version);
  CHECK_THROWS_AS(read_tensor<double>(path), UnsupportedFormatError);

  std::string zero_extent = bytes;
  zero_extent[16] = 0;  // first extent -> 0
  spit(path, zero_extent);
  CHECK_THROWS_WITH_AS(read_tensor<double>(path), doctest::Contains("extent"),
                       ParseError);

  std::string truncated = bytes.substr(0, bytes.size() - 3);
  spit(path, truncated);
  CHECK_THROWS_AS(read_tensor<double>(path), ParseError);
}

TEST_CASE("image round trip is lossless") {
  const std::string path = temp_file("img.pgm");
  Tensor<double> img(1, 1, 3, 4);
  Rng rng(11);
  for (auto& v : img.values()) {
    v = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
  }
  write_image(path, img);
  const Tensor<double> back = read_image(path);
  CHECK(bit_equal(img, back));

  const std::string path3 = temp_file("img.ppm");
  Tensor<double> rgb(1, 3, 2, 2);
  for (auto& v : rgb.values()) {
    v = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
  }
  write_image(path3, rgb);
  CHECK(bit_equal(rgb, read_image(path3)));
}

TEST_CASE("all-black 2x2 P5 file decodes to zeros") {
  const std::string path = temp_file("black.pgm");
  spit(path, std::string("P5\n2 2\n255\n") + std::string(4, '\0'));
  const Tensor<double> t = read_image(path);
  CHECK(t.c() == 1);
  CHECK(t.h() == 2);
  CHECK(t.w() == 2);
  for (const double v : t.values()) CHECK(v == 0.0);
}

TEST_CASE("P6 maps to a channel-separated RGB tensor") {
  const std::string path = temp_file("rgb.ppm");
  // single pixel (255, 128, 0)
  std::string bytes = "P6\n1 1\n255\n";
  bytes.push_back(static_cast<char>(255));
  bytes.push_back(static_cast<char>(128));
  bytes.push_back(static_cast<char>(0));
  spit(path, bytes);
  const Tensor<double> t = read_image(path);
  REQUIRE(t.c() == 3);
  CHECK(t.at(0, 0, 0, 0) == 1.0);
  CHECK(t.at(0, 1, 0, 0) == 128.0 / 255.0);
  CHECK(t.at(0, 2, 0, 0) == 0.0);
}

TEST_CASE("image parser reports byte offsets for malformed input") {
  const std::string path = temp_file("broken.pgm");
  spit(path, "P5\n2 2\n254\n....");
  CHECK_THROWS_WITH_AS(read_image(path), doctest::Contains("byte offset"),
                       ParseError);
  spit(path, "P7\n2 2\n255\n....");
  CHECK_THROWS_AS(read_image(path), UnsupportedFormatError);
  spit(path, "P5\n2 2\n255\n..");  // payload short
  CHECK_THROWS_WITH_AS(read_image(path), doctest::Contains("truncated"),
                       ParseError);
  // comments in the header are fine
  spit(path, std::string("P5 # comment\n# another\n2 2\n255\n") +
                 std::string(4, '\7'));
  const Tensor<double> t = read_image(path);
  CHECK(t.at(0, 0, 1, 1) == 7.0 / 255.0);
}

TEST_CASE("weights round trip bit-exactly and validate the config") {
  UpsampleConfig cfg;
  cfg.theta = 5.0;
  Rng rng(21);
  LdaAquWeights<double> w = init_weights<double>(cfg, 8, rng);
  fill_uniform(w.offset_bias, rng, -0.5, 0.5);
  const std::string path = temp_file("weights.ldaw");
  write_weights(path, w, cfg, 8);
  const LdaAquWeights<double> back = read_weights(path, cfg, 8);
  CHECK(bit_equal(w.w_q, back.w_q));
  CHECK(bit_equal(w.w_k, back.w_k));
  CHECK(bit_equal(w.dw_kernel, back.dw_kernel));
  CHECK(bit_equal(w.offset_weight, back.offset_weight));
  CHECK(bit_equal(w.offset_bias, back.offset_bias));
  CHECK(back.w_v.empty());

  UpsampleConfig other = cfg;
  other.theta = 7.0;
  CHECK_THROWS_AS(read_weights(path, other, 8), ConfigError);
  CHECK_THROWS_AS(read_weights(path, cfg, 16), ConfigError);

  // learned value projection carries one more parameter block
  UpsampleConfig learned = cfg;
  learned.value_projection = ValueProjection::Learned;
  Rng rng2(22);
  const LdaAquWeights<double> wl = init_weights<double>(learned, 8, rng2);
  write_weights(path, wl, learned, 8);
  const LdaAquWeights<double> backl = read_weights(path, learned, 8);
  CHECK(bit_equal(wl.w_v, backl.w_v));
}

TEST_CASE("offset dump rows, invariants, and determinism") {
  UpsampleConfig cfg;
  cfg.theta = 2.0;
  Rng rng(31);
  LdaAquWeights<double> w = init_weights<double>(cfg, 8, rng);
  fill_uniform(w.offset_weight, rng, -0.3, 0.3);
  fill_uniform(w.offset_bias, rng, -0.4, 0.4);
  const Tensor<double> x = randn(1, 8, 4, 4, 32);
  const LdaAquOutput<double> out = lda_aqu_upsample(x, w, cfg);

  const std::string path = temp_file("offsets.csv");
  std::vector<double> attention(out.attention.begin(), out.attention.end());
  write_offset_dump(path, out.grid, attention, /*stride=*/2);
  const std::string bytes = slurp(path);
  write_offset_dump(path, out.grid, attention, 2);
  CHECK(bytes == slurp(path));

  std::istringstream is(bytes);
  std::string line;
  std::getline(is, line);
  CHECK(line ==
        "query_x,query_y,group,point_index,ref_x,ref_y,sample_x,sample_y,"
        "weight");
  int rows = 0;
  double weight_sum = 0.0;
  int in_query = 0;
  while (std::getline(is, line)) {
    ++rows;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double qx, qy, gi, pj, rx, ry, sx, sy, wt;
    ls >> qx >> qy >> gi >> pj >> rx >> ry >> sx >> sy >> wt;
    weight_sum += wt;
    if (++in_query == 9) {  // one (query, group) block of k_u^2 rows
      CHECK(std::abs(weight_sum - 1.0) < 1e-6);
      weight_sum = 0.0;
      in_query = 0;
    }
  }
  // (8/2) * (8/2) queries x 2 groups x 9 points
  CHECK(rows == 4 * 4 * 2 * 9);

  // zero-init predictor: sample == ref on every row
  const LdaAquWeights<double> wz = [&] {
    Rng r2(33);
    return init_weights<double>(cfg, 8, r2);
  }();
  const LdaAquOutput<double> out0 = lda_aqu_upsample(x, wz, cfg);
  std::vector<double> att0(out0.attention.begin(), out0.attention.end());
  write_offset_dump(path, out0.grid, att0, 1);
  std::istringstream is0(slurp(path));
  std::getline(is0, line);
  while (std::getline(is0, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double qx, qy, gi, pj, rx, ry, sx, sy, wt;
    ls >> qx >> qy >> gi >> pj >> rx >> ry >> sx >> sy >> wt;
    CHECK(sx == rx);
    CHECK(sy == ry);
  }
}

TEST_CASE("loss csv and grad report writers are deterministic") {
  const std::string path = temp_file("loss.csv");
  const std::vector<double> losses = {1.0, 0.5, 0.25, 1.0 / 3.0};
  write_loss_csv(path, losses);
  const std::string bytes = slurp(path);
  CHECK(bytes.substr(0, 10) == "step,loss\n");
  write_loss_csv(path, losses);
  CHECK(bytes == slurp(path));
  // shortest round-trip formatting parses back exactly
  std::istringstream is(bytes);
  std::string line;
  std::getline(is, line);
  int step = 0;
  while (std::getline(is, line)) {
    const auto comma = line.find(',');
    CHECK(std::stoi(line.substr(0, comma)) == step);
    CHECK(std::stod(line.substr(comma + 1)) == losses[step]);
    ++step;
  }

  GradReport r;
  r.op = "demo";
  r.seed = 3;
  r.threshold = 1e-4;
  r.params.push_back({"x", 1e-7, 1e-9, true});
  r.pass = true;
  const std::string rpath = temp_file("report.txt");
  write_grad_reports(rpath, std::vector<GradReport>{r});
  const std::string report = slurp(rpath);
  CHECK(report.find("op=demo") != std::string::npos);
  CHECK(report.find("pass=1") != std::string::npos);
  // one row per op
  CHECK(std::count(report.begin(), report.end(), '\n') == 1);
}

TEST_SUITE_END();
