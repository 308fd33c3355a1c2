#include "drape/params.hpp"

#include <cmath>

namespace drape {

Mat& Parameters::add(const std::string& name, Mat init) {
  auto [it, inserted] = values_.insert_or_assign(name, std::move(init));
  return it->second;
}

Mat& Parameters::at(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

const Mat& Parameters::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

Mat glorot(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Mat w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

Mat normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

ad::Var Bound::operator()(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  const Mat& v = params_->at(name);
  ad::Var leaf = requires_grad_ ? tape_->variable(v) : tape_->constant(v);
  leaves_.emplace(name, leaf);
  return leaf;
}

std::map<std::string, Mat> Bound::gradients() const {
  std::map<std::string, Mat> out;
  for (const auto& [name, leaf] : leaves_)
    if (leaf.requires_grad()) out.emplace(name, tape_->grad(leaf));
  return out;
}

void Adam::step(Parameters& params, const std::map<std::string, Mat>& grads) {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (const auto& [name, g] : grads) {
    Mat& p = params.at(name);
    DRAPE_REQUIRE(g.rows() == p.rows() && g.cols() == p.cols(), "adam: gradient shape mismatch for " + name);
    auto [mit, m_new] = m_.try_emplace(name, Mat::Zero(p.rows(), p.cols()));
    auto [vit, v_new] = v_.try_emplace(name, Mat::Zero(p.rows(), p.cols()));
    Mat& m = mit->second;
    Mat& v = vit->second;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    if (config_.learning_rate == 0.0) continue;
    p.array() -= config_.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.epsilon);
  }
}

void Adam::forget(const std::string& name) {
  m_.erase(name);
  v_.erase(name);
}

}  // namespace drape
