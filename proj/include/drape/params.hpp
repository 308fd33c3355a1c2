#pragma once

// Named parameter tensors, their binding onto a tape for one forward pass,
// and the adaptive-moment optimizer that updates them.

#include "drape/autodiff.hpp"

#include <map>
#include <random>
#include <string>

namespace drape {

class Parameters {
 public:
  Mat& add(const std::string& name, Mat init);
  Mat& at(const std::string& name);
  const Mat& at(const std::string& name) const;
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  void erase(const std::string& name) { values_.erase(name); }
  std::size_t scalar_count() const;

  const std::map<std::string, Mat>& values() const { return values_; }
  std::map<std::string, Mat>& values() { return values_; }

 private:
  std::map<std::string, Mat> values_;
};

/// Glorot-uniform (in × out) weight.
Mat glorot(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng);
Mat normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

/// Parameters mirrored as tape leaves. Leaves are created on first use, so a
/// forward pass only pays for what it touches.
class Bound {
 public:
  Bound(ad::Tape& tape, const Parameters& params, bool requires_grad = true)
      : tape_(&tape), params_(&params), requires_grad_(requires_grad) {}

  ad::Var operator()(const std::string& name);
  /// Uses `leaf` for `name` instead of a stored value.
  void bind(const std::string& name, ad::Var leaf) { leaves_.insert_or_assign(name, leaf); }
  ad::Tape& tape() { return *tape_; }
  const Parameters& parameters() const { return *params_; }

  /// Gradients of every touched parameter after tape.backward().
  std::map<std::string, Mat> gradients() const;

 private:
  ad::Tape* tape_;
  const Parameters* params_;
  bool requires_grad_;
  std::map<std::string, ad::Var> leaves_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update to every parameter that has a gradient entry.
  void step(Parameters& params, const std::map<std::string, Mat>& grads);

  long long step_count() const { return step_; }
  void set_step_count(long long s) { step_ = s; }
  std::map<std::string, Mat>& first_moments() { return m_; }
  std::map<std::string, Mat>& second_moments() { return v_; }
  const std::map<std::string, Mat>& first_moments() const { return m_; }
  const std::map<std::string, Mat>& second_moments() const { return v_; }
  AdamConfig& config() { return config_; }
  void forget(const std::string& name);

 private:
  AdamConfig config_;
  long long step_ = 0;
  std::map<std::string, Mat> m_, v_;
};

}  // namespace drape
