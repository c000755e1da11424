#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldaqu {

// Error taxonomy shared by every module. Dimension errors name both shapes
// involved; parse errors carry the byte offset in the message.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense rank-4 feature map (batch, channels, height, width), contiguous with
// the column index fastest. double is the oracle/test scalar type, float the
// fast path.
template <typename T>
class Tensor {
 public:
  Tensor() = default;  // empty marker; every public op rejects it

  Tensor(int n, int c, int h, int w) : n_(n), c_(c), h_(h), w_(w) {
    if (n < 1 || c < 1 || h < 1 || w < 1) {
      throw DimError("tensor extents must all be >= 1, got " +
                     shape_to_string({n, c, h, w}));
    }
    data_.assign(static_cast<std::size_t>(n) * c * h * w, T(0));
  }

  static Tensor full(int n, int c, int h, int w, T value) {
    Tensor t(n, c, h, w);
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  std::array<int, 4> shape() const { return {n_, c_, h_, w_}; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::int64_t offset(int b, int ch, int y, int x) const {
    return ((static_cast<std::int64_t>(b) * c_ + ch) * h_ + y) * w_ + x;
  }
  T& at(int b, int ch, int y, int x) { return data_[offset(b, ch, y, x)]; }
  const T& at(int b, int ch, int y, int x) const {
    return data_[offset(b, ch, y, x)];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return {data_.data(), data_.size()}; }
  std::span<const T> values() const { return {data_.data(), data_.size()}; }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  std::string shape_str() const { return shape_to_string({n_, c_, h_, w_}); }

  static std::string shape_to_string(std::array<int, 4> s) {
    std::ostringstream os;
    os << "(" << s[0] << "," << s[1] << "," << s[2] << "," << s[3] << ")";
    return os.str();
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> data_;
};

// Seedable generator with a platform-independent stream. mt19937_64 is fully
// specified by the standard; the helpers below avoid std::*_distribution,
// whose outputs are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  // Box-Muller, one fresh pair per call
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 gen_;
};

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng) {
  for (auto& v : t.values()) v = static_cast<T>(rng.normal());
}

// Worker count for parallel_for. Results never depend on it: loops only
// parallelize over disjoint output slots with fixed per-slot reduction order.
void set_num_threads(int n);
int num_threads();
void parallel_for(std::int64_t count, const std::function<void(std::int64_t)>& fn);

}  // namespace ldaqu
