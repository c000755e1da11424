#include "ldaqu/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ldaqu {

std::string format_double(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_binary_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

void append_u32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}

void append_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string path)
      : bytes_(bytes), path_(std::move(path)) {}

  std::size_t offset() const { return pos_; }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path_ + ": " + what + " (byte offset " +
                     std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw ParseError(path_ + ": truncated, needed " + std::to_string(n) +
                       " more bytes (byte offset " + std::to_string(pos_) +
                       ")");
    }
  }

  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

constexpr std::uint32_t kTensorVersion = 1;

template <typename T>
constexpr std::uint32_t dtype_code() {
  return std::is_same_v<T, float> ? 0u : 1u;
}

template <typename T>
std::string encode_tensor(const Tensor<T>& t) {
  if (t.empty()) throw IoError("write_tensor: empty tensor");
  std::string buf;
  buf.reserve(32 + static_cast<std::size_t>(t.size()) * sizeof(T));
  buf.append("LDAT");
  append_u32(buf, kTensorVersion);
  append_u32(buf, dtype_code<T>());
  append_u32(buf, 4);
  for (const int e : t.shape()) append_u32(buf, static_cast<std::uint32_t>(e));
  for (const T v : t.values()) {
    if constexpr (std::is_same_v<T, float>) {
      append_u32(buf, std::bit_cast<std::uint32_t>(v));
    } else {
      append_u64(buf, std::bit_cast<std::uint64_t>(v));
    }
  }
  return buf;
}

struct TensorHeader {
  std::uint32_t dtype = 0;
  std::array<int, 4> extents{1, 1, 1, 1};
  std::int64_t count = 0;
};

TensorHeader parse_tensor_header(ByteReader& r) {
  const std::string magic = r.raw(4);
  if (magic != "LDAT") {
    throw UnsupportedFormatError("not a tensor file: bad magic at byte 0");
  }
  const std::uint32_t version = r.u32();
  if (version != kTensorVersion) {
    throw UnsupportedFormatError("unsupported tensor file version " +
                                 std::to_string(version));
  }
  TensorHeader h;
  h.dtype = r.u32();
  if (h.dtype > 1) r.fail("unknown dtype code " + std::to_string(h.dtype));
  const std::uint32_t rank = r.u32();
  if (rank < 1 || rank > 4) r.fail("rank must be 1..4, got " + std::to_string(rank));
  std::int64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t e = r.u32();
    if (e < 1) r.fail("extent " + std::to_string(i) + " is zero");
    h.extents[4 - rank + i] = static_cast<int>(e);
    count *= e;
  }
  h.count = count;
  return h;
}

template <typename T>
Tensor<T> decode_payload(ByteReader& r, const TensorHeader& h) {
  const std::size_t want = static_cast<std::size_t>(h.count) * sizeof(T);
  if (r.remaining() < want) {
    r.fail("payload has " + std::to_string(r.remaining()) +
           " bytes, expected " + std::to_string(want));
  }
  Tensor<T> t(h.extents[0], h.extents[1], h.extents[2], h.extents[3]);
  for (std::int64_t i = 0; i < h.count; ++i) {
    if constexpr (std::is_same_v<T, float>) {
      t.data()[i] = std::bit_cast<float>(r.u32());
    } else {
      t.data()[i] = std::bit_cast<double>(r.u64());
    }
  }
  return t;
}

template <typename T>
Tensor<T> decode_tensor(ByteReader& r) {
  const TensorHeader h = parse_tensor_header(r);
  if (h.dtype != dtype_code<T>()) {
    throw UnsupportedFormatError(
        std::string("tensor file stores ") +
        (h.dtype == 0 ? "binary32" : "binary64") + ", requested " +
        (dtype_code<T>() == 0 ? "binary32" : "binary64"));
  }
  return decode_payload<T>(r, h);
}

}  // namespace

void write_tensor(const std::string& path, const Tensor<float>& t) {
  write_binary_file(path, encode_tensor(t));
}

void write_tensor(const std::string& path, const Tensor<double>& t) {
  write_binary_file(path, encode_tensor(t));
}

template <typename T>
Tensor<T> read_tensor(const std::string& path) {
  const std::string bytes = read_binary_file(path);
  ByteReader r(bytes, path);
  Tensor<T> t = decode_tensor<T>(r);
  if (r.remaining() != 0) r.fail("trailing bytes after payload");
  return t;
}

template Tensor<float> read_tensor<float>(const std::string&);
template Tensor<double> read_tensor<double>(const std::string&);

Tensor<double> read_tensor_as_double(const std::string& path) {
  const std::string bytes = read_binary_file(path);
  ByteReader r(bytes, path);
  const TensorHeader h = parse_tensor_header(r);
  if (h.dtype == 1) {
    Tensor<double> t = decode_payload<double>(r, h);
    if (r.remaining() != 0) r.fail("trailing bytes after payload");
    return t;
  }
  const Tensor<float> f = decode_payload<float>(r, h);
  if (r.remaining() != 0) r.fail("trailing bytes after payload");
  Tensor<double> t(f.n(), f.c(), f.h(), f.w());
  for (std::int64_t i = 0; i < f.size(); ++i) {
    t.data()[i] = static_cast<double>(f.data()[i]);
  }
  return t;
}

// --- images ---------------------------------------------------------------

namespace {

// whitespace/comment skipping and integer fields per the PNM header grammar
struct PnmParser {
  const std::string& bytes;
  const std::string& path;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path + ": " + what + " (byte offset " +
                     std::to_string(pos) + ")");
  }

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }

  int parse_int() {
    skip_space_and_comments();
    if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') {
      fail("expected integer in header");
    }
    long v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1 << 30) fail("header integer out of range");
      ++pos;
    }
    return static_cast<int>(v);
  }
};

}  // namespace

Tensor<double> read_image(const std::string& path) {
  const std::string bytes = read_binary_file(path);
  PnmParser p{bytes, path};
  if (bytes.size() < 2) p.fail("file too short for magic");
  const char m0 = bytes[0];
  const char m1 = bytes[1];
  if (m0 != 'P' || (m1 != '5' && m1 != '6')) {
    throw UnsupportedFormatError(path + ": not a binary PGM/PPM (magic '" +
                                 bytes.substr(0, 2) + "')");
  }
  const int channels = (m1 == '5') ? 1 : 3;
  p.pos = 2;
  const int w = p.parse_int();
  const int h = p.parse_int();
  const int maxval = p.parse_int();
  if (w < 1 || h < 1) p.fail("image extents must be >= 1");
  if (maxval != 255) p.fail("maxval must be 255, got " + std::to_string(maxval));
  // exactly one whitespace byte separates the header from the payload
  if (p.pos >= bytes.size()) p.fail("missing payload");
  const char sep = bytes[p.pos];
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n') {
    p.fail("expected single whitespace before payload");
  }
  ++p.pos;
  const std::size_t want =
      static_cast<std::size_t>(w) * h * static_cast<std::size_t>(channels);
  if (bytes.size() - p.pos < want) {
    p.fail("payload truncated: have " + std::to_string(bytes.size() - p.pos) +
           " bytes, need " + std::to_string(want));
  }

  Tensor<double> t(1, channels, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < channels; ++ch) {
        const unsigned char v = static_cast<unsigned char>(
            bytes[p.pos + (static_cast<std::size_t>(y) * w + x) * channels + ch]);
        t.at(0, ch, y, x) = static_cast<double>(v) / 255.0;
      }
    }
  }
  return t;
}

void write_image(const std::string& path, const Tensor<double>& t) {
  if (t.empty() || t.n() != 1 || (t.c() != 1 && t.c() != 3)) {
    throw ConfigError("write_image: tensor must be (1,1,h,w) or (1,3,h,w), got " +
                      t.shape_str());
  }
  std::string buf;
  buf.append(t.c() == 1 ? "P5" : "P6");
  buf.push_back('\n');
  buf.append(std::to_string(t.w()));
  buf.push_back(' ');
  buf.append(std::to_string(t.h()));
  buf.push_back('\n');
  buf.append("255");
  buf.push_back('\n');
  for (int y = 0; y < t.h(); ++y) {
    for (int x = 0; x < t.w(); ++x) {
      for (int ch = 0; ch < t.c(); ++ch) {
        double v = t.at(0, ch, y, x);
        v = std::min(std::max(v, 0.0), 1.0);
        buf.push_back(static_cast<char>(
            static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  write_binary_file(path, buf);
}

// --- weights ---------------------------------------------------------------

namespace {

const char* projection_name(ProjectionMode m) {
  return m == ProjectionMode::PaperExact ? "paper" : "align-corners";
}
const char* padding_name(PaddingMode m) {
  return m == PaddingMode::Zeros ? "zeros" : "border";
}
const char* value_projection_name(ValueProjection v) {
  return v == ValueProjection::Identity ? "identity" : "learned";
}
const char* query_up_name(QueryUpsample q) {
  return q == QueryUpsample::Bilinear ? "bilinear" : "nearest";
}

std::string weights_header(const UpsampleConfig& c, int channels, int params) {
  std::string h;
  h.append("LDAW 1\n");
  h.append("alpha=" + format_double(c.alpha) + "\n");
  h.append("k_u=" + std::to_string(c.k_u) + "\n");
  h.append("k_e=" + std::to_string(c.k_e) + "\n");
  h.append("theta=" + format_double(c.theta) + "\n");
  h.append("groups=" + std::to_string(c.groups) + "\n");
  h.append("reduction=" + std::to_string(c.reduction) + "\n");
  h.append(std::string("value_projection=") +
           value_projection_name(c.value_projection) + "\n");
  h.append(std::string("projection=") + projection_name(c.projection_mode) +
           "\n");
  h.append(std::string("padding=") + padding_name(c.padding) + "\n");
  h.append(std::string("query_up=") + query_up_name(c.query_upsample) + "\n");
  h.append("channels=" + std::to_string(channels) + "\n");
  h.append("params=" + std::to_string(params) + "\n");
  return h;
}

}  // namespace

void write_weights(const std::string& path, const LdaAquWeights<double>& w,
                   const UpsampleConfig& config, int channels) {
  config.validate(channels);
  std::vector<std::pair<std::string, const Tensor<double>*>> params = {
      {"w_q", &w.w_q},
      {"w_k", &w.w_k},
      {"dw_kernel", &w.dw_kernel},
      {"offset_weight", &w.offset_weight},
      {"offset_bias", &w.offset_bias},
  };
  if (config.value_projection == ValueProjection::Learned) {
    params.insert(params.begin() + 2, {"w_v", &w.w_v});
  }
  std::string buf = weights_header(config, channels,
                                   static_cast<int>(params.size()));
  for (const auto& [name, tensor] : params) {
    const std::string block = encode_tensor(*tensor);
    buf.append("param " + name + " " + std::to_string(block.size()) + "\n");
    buf.append(block);
  }
  write_binary_file(path, buf);
}

namespace {

std::string take_line(const std::string& bytes, std::size_t& pos,
                      const std::string& path) {
  const std::size_t nl = bytes.find('\n', pos);
  if (nl == std::string::npos) {
    throw ParseError(path + ": unterminated header line (byte offset " +
                     std::to_string(pos) + ")");
  }
  std::string line = bytes.substr(pos, nl - pos);
  pos = nl + 1;
  return line;
}

void require_kv(const std::string& line, const std::string& key,
                const std::string& expected, const std::string& path) {
  const std::string want = key + "=" + expected;
  if (line != want) {
    throw ConfigError(path + ": weights file config mismatch: have '" + line +
                      "', loader expects '" + want + "'");
  }
}

}  // namespace

LdaAquWeights<double> read_weights(const std::string& path,
                                   const UpsampleConfig& config, int channels) {
  config.validate(channels);
  const std::string bytes = read_binary_file(path);
  std::size_t pos = 0;
  const std::string magic = take_line(bytes, pos, path);
  if (magic != "LDAW 1") {
    throw UnsupportedFormatError(path + ": not a weights file (got '" + magic +
                                 "')");
  }
  require_kv(take_line(bytes, pos, path), "alpha", format_double(config.alpha),
             path);
  require_kv(take_line(bytes, pos, path), "k_u", std::to_string(config.k_u),
             path);
  require_kv(take_line(bytes, pos, path), "k_e", std::to_string(config.k_e),
             path);
  require_kv(take_line(bytes, pos, path), "theta", format_double(config.theta),
             path);
  require_kv(take_line(bytes, pos, path), "groups",
             std::to_string(config.groups), path);
  require_kv(take_line(bytes, pos, path), "reduction",
             std::to_string(config.reduction), path);
  require_kv(take_line(bytes, pos, path), "value_projection",
             value_projection_name(config.value_projection), path);
  require_kv(take_line(bytes, pos, path), "projection",
             projection_name(config.projection_mode), path);
  require_kv(take_line(bytes, pos, path), "padding",
             padding_name(config.padding), path);
  require_kv(take_line(bytes, pos, path), "query_up",
             query_up_name(config.query_upsample), path);
  require_kv(take_line(bytes, pos, path), "channels", std::to_string(channels),
             path);
  const int expect_params =
      config.value_projection == ValueProjection::Learned ? 6 : 5;
  require_kv(take_line(bytes, pos, path), "params",
             std::to_string(expect_params), path);

  LdaAquWeights<double> w;
  for (int i = 0; i < expect_params; ++i) {
    const std::string line = take_line(bytes, pos, path);
    std::istringstream is(line);
    std::string tag, name;
    std::size_t nbytes = 0;
    is >> tag >> name >> nbytes;
    if (tag != "param" || name.empty() || nbytes == 0) {
      throw ParseError(path + ": malformed param line '" + line +
                       "' (byte offset " + std::to_string(pos) + ")");
    }
    if (pos + nbytes > bytes.size()) {
      throw ParseError(path + ": truncated param block '" + name +
                       "' (byte offset " + std::to_string(pos) + ")");
    }
    const std::string block = bytes.substr(pos, nbytes);
    pos += nbytes;
    ByteReader r(block, path + ":" + name);
    Tensor<double> t = decode_tensor<double>(r);
    if (name == "w_q") w.w_q = std::move(t);
    else if (name == "w_k") w.w_k = std::move(t);
    else if (name == "w_v") w.w_v = std::move(t);
    else if (name == "dw_kernel") w.dw_kernel = std::move(t);
    else if (name == "offset_weight") w.offset_weight = std::move(t);
    else if (name == "offset_bias") w.offset_bias = std::move(t);
    else throw ParseError(path + ": unknown param '" + name + "'");
  }
  if (pos != bytes.size()) {
    throw ParseError(path + ": trailing bytes after last param (byte offset " +
                     std::to_string(pos) + ")");
  }
  return w;
}

// --- dumps -----------------------------------------------------------------

void write_offset_dump(const std::string& path, const CoordGrid& grid,
                       std::span<const double> attention, int stride) {
  if (stride < 1) throw ConfigError("write_offset_dump: stride must be >= 1");
  const int sten = grid.k_u * grid.k_u;
  const std::int64_t expected = grid.pixels() * grid.groups * sten;
  if (static_cast<std::int64_t>(attention.size()) != expected) {
    throw DimError("write_offset_dump: attention has " +
                   std::to_string(attention.size()) + " values, expected " +
                   std::to_string(expected));
  }
  std::string buf;
  buf.append(
      "query_x,query_y,group,point_index,ref_x,ref_y,sample_x,sample_y,"
      "weight\n");
  for (int yi = 0; yi < grid.out_h / stride; ++yi) {
    const int y = yi * stride;
    for (int xi = 0; xi < grid.out_w / stride; ++xi) {
      const int x = xi * stride;
      const std::int64_t idx = static_cast<std::int64_t>(y) * grid.out_w + x;
      for (int gi = 0; gi < grid.groups; ++gi) {
        for (int j = 0; j < sten; ++j) {
          const Coord ref = grid.r[grid.stencil_index(idx, j)];
          const Coord sample = grid.r_prime[grid.group_index(idx, gi, j)];
          const double wgt = attention[(idx * grid.groups + gi) * sten + j];
          buf.append(std::to_string(x));
          buf.push_back(',');
          buf.append(std::to_string(y));
          buf.push_back(',');
          buf.append(std::to_string(gi));
          buf.push_back(',');
          buf.append(std::to_string(j));
          buf.push_back(',');
          buf.append(format_double(ref.x));
          buf.push_back(',');
          buf.append(format_double(ref.y));
          buf.push_back(',');
          buf.append(format_double(sample.x));
          buf.push_back(',');
          buf.append(format_double(sample.y));
          buf.push_back(',');
          buf.append(format_double(wgt));
          buf.push_back('\n');
        }
      }
    }
  }
  write_binary_file(path, buf);
}

void write_loss_csv(const std::string& path, std::span<const double> losses) {
  std::string buf("step,loss\n");
  for (std::size_t i = 0; i < losses.size(); ++i) {
    buf.append(std::to_string(i));
    buf.push_back(',');
    buf.append(format_double(losses[i]));
    buf.push_back('\n');
  }
  write_binary_file(path, buf);
}

void write_grad_reports(const std::string& path,
                        std::span<const GradReport> reports) {
  std::string buf;
  for (const GradReport& r : reports) {
    buf.append("op=" + r.op);
    buf.append(" seed=" + std::to_string(r.seed));
    buf.append(" threshold=" + format_double(r.threshold));
    buf.append(" max_rel_err=" + format_double(r.max_rel_err()));
    buf.append(" max_abs_err=" + format_double(r.max_abs_err()));
    buf.append(std::string(" pass=") + (r.pass ? "1" : "0"));
    buf.append(" params=");
    for (std::size_t i = 0; i < r.params.size(); ++i) {
      if (i) buf.push_back(',');
      const ParamCheck& p = r.params[i];
      buf.append(p.name + ":" + (p.pass ? "pass" : "FAIL") + ":" +
                 format_double(p.max_rel_err));
    }
    buf.push_back('\n');
  }
  write_binary_file(path, buf);
}

}  // namespace ldaqu
