#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ldaqu/tensor.hpp"

namespace ldaqu {

struct ParamCheck {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool pass = false;
};

// One finite-difference certification of one op, replayable from its seed.
struct GradReport {
  std::string op;
  std::uint64_t seed = 0;
  double threshold = 0.0;
  std::vector<ParamCheck> params;
  bool pass = false;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_err);
    return m;
  }
  double max_abs_err() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_abs_err);
    return m;
  }
};

struct GradCheckOptions {
  double threshold = 1e-4;
  std::uint64_t seed = 0;
  // harness-sanity hook: biases the analytic gradients of the named op so
  // its check must fail
  std::string corrupt_op;
};

// Central differences, step 1e-5 * (1 + |p|) per scalar.
std::vector<double> finite_diff(
    const std::function<double(std::span<const double>)>& fn,
    std::span<const double> params);

// Canonical list of differentiable ops; the registry must cover all of them.
const std::vector<std::string>& differentiable_ops();
std::vector<std::string> registered_ops();

GradReport grad_check(const std::string& op_id,
                      const GradCheckOptions& opts = {});
std::vector<GradReport> grad_check_all(const GradCheckOptions& opts = {});

}  // namespace ldaqu
