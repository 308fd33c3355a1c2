#pragma once

// Central finite differences against the tape's reverse-mode gradients.

#include "drape/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace drape {

struct GradReport {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  Eigen::Index argmax = -1;       // flat coordinate of the worst relative error
  double analytic_at_max = 0.0;
  double numeric_at_max = 0.0;
  Eigen::Index checked = 0;
  std::vector<Eigen::Index> nonfinite;
  double tolerance = 1e-4;
  bool passed = false;

  std::string summary() const;
};

struct CheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  Eigen::Index max_coords = 0;  // 0 = all coordinates, else a seeded subset
  std::uint64_t seed = 7;
};

/// |a − n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Central differences of a scalar function; non-finite evaluations leave NaN.
Vec finite_diff(const std::function<double(const Vec&)>& f, const Vec& x, double eps = 1e-5);

/// Scalar-valued function of one matrix input, built on a tape.
using TapeFunction = std::function<ad::Var(ad::Tape&, ad::Var)>;

/// Compares tape gradients of `f` at `x` with central differences.
GradReport check_op(const std::string& name, const TapeFunction& f, const Mat& x, const CheckOptions& options = {});

/// Compares a supplied analytic gradient with central differences of `f`.
GradReport check_gradient(const std::string& name, const std::function<double(const Mat&)>& f, const Mat& analytic,
                          const Mat& x, const CheckOptions& options = {});

struct GradCheckEntry {
  std::string name;
  std::function<GradReport()> run;
  bool expect_failure = false;  // negative controls
};

/// Every differentiable op with a backward contract, plus the negative control.
std::vector<GradCheckEntry> gradient_registry();

struct RegistryResult {
  std::vector<GradReport> reports;
  std::vector<bool> ok;  // passed == !expect_failure
  bool all_ok = true;
};
RegistryResult run_registry(const std::vector<GradCheckEntry>& entries);

}  // namespace drape
