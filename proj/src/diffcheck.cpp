#include "drape/diffcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace drape {

std::string GradReport::summary() const {
  std::ostringstream s;
  s.precision(3);
  s << name << ": " << (passed ? "pass" : "FAIL") << " max_rel=" << std::scientific << max_rel_error
    << " max_abs=" << max_abs_error << " coords=" << checked;
  if (argmax >= 0) s << " worst=#" << argmax << " (analytic " << analytic_at_max << ", numeric " << numeric_at_max << ")";
  if (!nonfinite.empty()) s << " nonfinite=" << nonfinite.size();
  return s.str();
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

Vec finite_diff(const std::function<double(const Vec&)>& f, const Vec& x, double eps) {
  Vec g(x.size());
  Vec probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double fp = f(probe);
    probe[i] = x[i] - eps;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (std::isfinite(fp) && std::isfinite(fm)) ? (fp - fm) / (2.0 * eps) : std::nan("");
  }
  return g;
}

namespace {

std::vector<Eigen::Index> pick_coords(Eigen::Index n, const CheckOptions& o) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (o.max_coords > 0 && o.max_coords < n) {
    std::mt19937_64 rng(o.seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(o.max_coords));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

}  // namespace

GradReport check_gradient(const std::string& name, const std::function<double(const Mat&)>& f, const Mat& analytic,
                          const Mat& x, const CheckOptions& options) {
  DRAPE_REQUIRE(analytic.rows() == x.rows() && analytic.cols() == x.cols(), "check_gradient: shape mismatch");
  GradReport r;
  r.name = name;
  r.tolerance = options.tolerance;
  Mat probe = x;
  for (Eigen::Index i : pick_coords(x.size(), options)) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + options.eps;
    const double fp = f(probe);
    probe.data()[i] = orig - options.eps;
    const double fm = f(probe);
    probe.data()[i] = orig;
    ++r.checked;
    const double a = analytic.data()[i];
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(a)) {
      r.nonfinite.push_back(i);
      continue;
    }
    const double n = (fp - fm) / (2.0 * options.eps);
    const double rel = relative_error(a, n);
    r.max_abs_error = std::max(r.max_abs_error, std::abs(a - n));
    if (r.argmax < 0 || rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.argmax = i;
      r.analytic_at_max = a;
      r.numeric_at_max = n;
    }
  }
  r.passed = r.nonfinite.empty() && r.max_rel_error <= options.tolerance;
  return r;
}

GradReport check_op(const std::string& name, const TapeFunction& f, const Mat& x, const CheckOptions& options) {
  ad::Tape tape;
  ad::Var in = tape.variable(x);
  ad::Var out = f(tape, in);
  DRAPE_REQUIRE(out.rows() == 1 && out.cols() == 1, "check_op: function must be scalar-valued");
  tape.backward(out);
  const Mat analytic = tape.grad(in);
  auto eval = [&f](const Mat& v) {
    ad::Tape t;
    return f(t, t.constant(v)).scalar();
  };
  return check_gradient(name, eval, analytic, x, options);
}

RegistryResult run_registry(const std::vector<GradCheckEntry>& entries) {
  RegistryResult out;
  for (const auto& e : entries) {
    GradReport r = e.run();
    if (r.name.empty()) r.name = e.name;
    const bool ok = r.passed != e.expect_failure;
    out.reports.push_back(std::move(r));
    out.ok.push_back(ok);
    out.all_ok = out.all_ok && ok;
  }
  return out;
}

}  // namespace drape
