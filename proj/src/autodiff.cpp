#include "drape/autodiff.hpp"

#include <cmath>

namespace drape::ad {

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Mat value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Mat value, Backward backward, std::span<const Var> inputs) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || nodes_[v.id].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : Backward{}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

Mat Tape::grad(int id) const {
  const Node& n = nodes_[id];
  if (!n.has_grad) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Mat& g) {
  if (!nodes_[v.id].requires_grad) return;
  DRAPE_REQUIRE(g.rows() == nodes_[v.id].value.rows() && g.cols() == nodes_[v.id].value.cols(),
                "gradient shape mismatch");
  grad_buffer(v.id) += g;
}

void Tape::accumulate_rows(Var v, const std::vector<int>& rows, const Mat& g) {
  if (!nodes_[v.id].requires_grad) return;
  Mat& buf = grad_buffer(v.id);
  for (std::size_t i = 0; i < rows.size(); ++i) buf.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
}

void Tape::backward(Var root) {
  DRAPE_REQUIRE(root.tape == this, "root belongs to another tape");
  DRAPE_REQUIRE(value(root.id).size() == 1, "backward root must be scalar");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  if (!nodes_[root.id].requires_grad) return;
  grad_buffer(root.id)(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    // The closure only touches lower-numbered nodes, so n.grad stays valid.
    n.backward(*this, n.grad);
    n.grad.resize(0, 0);
    n.has_grad = false;
  }
}

namespace {

template <class F>
Var unary(Var a, Mat out, F&& dfdx) {
  Var inputs[] = {a};
  return a.tape->record(
      std::move(out),
      [a, dfdx = std::forward<F>(dfdx)](Tape& t, const Mat& g) { t.accumulate(a, dfdx(g)); }, inputs);
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(Var a, Var b) {
  DRAPE_REQUIRE(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Var inputs[] = {a, b};
  return a.tape->record(
      a.value() * b.value(),
      [a, b](Tape& t, const Mat& g) {
        if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
        if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
      },
      inputs);
}

Var spmm(const SparseMat& a, Var b) {
  DRAPE_REQUIRE(a.cols() == b.rows(), "spmm: inner dimension mismatch");
  Var inputs[] = {b};
  Mat out = a * b.value();
  return b.tape->record(
      std::move(out), [a, b](Tape& t, const Mat& g) { t.accumulate(b, Mat(a.transpose() * g)); },
      inputs);
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Var inputs[] = {a, b};
  return a.tape->record(
      a.value() + b.value(),
      [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, g);
      },
      inputs);
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  Var inputs[] = {a, b};
  return a.tape->record(
      a.value() - b.value(),
      [a, b](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        t.accumulate(b, -g);
      },
      inputs);
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Var inputs[] = {a, b};
  return a.tape->record(
      a.value().cwiseProduct(b.value()),
      [a, b](Tape& t, const Mat& g) {
        if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
        if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
      },
      inputs);
}

Var scale(Var a, double s) {
  return unary(a, a.value() * s, [s](const Mat& g) { return Mat(g * s); });
}

Var add_scalar(Var a, double s) {
  return unary(a, (a.value().array() + s).matrix(), [](const Mat& g) { return g; });
}

Var add_row(Var a, Var row) {
  DRAPE_REQUIRE(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Var inputs[] = {a, row};
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape->record(
      std::move(out),
      [a, row](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
      },
      inputs);
}

Var mul_row(Var a, Var row) {
  DRAPE_REQUIRE(row.rows() == 1 && row.cols() == a.cols(), "mul_row: shape mismatch");
  Var inputs[] = {a, row};
  Mat out = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape->record(
      std::move(out),
      [a, row](Tape& t, const Mat& g) {
        if (a.requires_grad()) t.accumulate(a, Mat(g.array().rowwise() * row.value().row(0).array()));
        if (row.requires_grad()) t.accumulate(row, g.cwiseProduct(a.value()).colwise().sum());
      },
      inputs);
}

Var add_col(Var a, Var col) {
  DRAPE_REQUIRE(col.cols() == 1 && col.rows() == a.rows(), "add_col: shape mismatch");
  Var inputs[] = {a, col};
  Mat out = a.value();
  out.colwise() += col.value().col(0);
  return a.tape->record(
      std::move(out),
      [a, col](Tape& t, const Mat& g) {
        t.accumulate(a, g);
        if (col.requires_grad()) t.accumulate(col, g.rowwise().sum());
      },
      inputs);
}

Var mul_col(Var a, Var col) {
  DRAPE_REQUIRE(col.cols() == 1 && col.rows() == a.rows(), "mul_col: shape mismatch");
  Var inputs[] = {a, col};
  Mat out = a.value().array().colwise() * col.value().col(0).array();
  return a.tape->record(
      std::move(out),
      [a, col](Tape& t, const Mat& g) {
        if (a.requires_grad()) t.accumulate(a, Mat(g.array().colwise() * col.value().col(0).array()));
        if (col.requires_grad()) t.accumulate(col, g.cwiseProduct(a.value()).rowwise().sum());
      },
      inputs);
}

Var div(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "div");
  Var inputs[] = {a, b};
  Mat out = a.value().cwiseQuotient(b.value());
  return a.tape->record(
      out,
      [a, b, out](Tape& t, const Mat& g) {
        const Mat gb = g.cwiseQuotient(b.value());
        if (a.requires_grad()) t.accumulate(a, gb);
        if (b.requires_grad()) t.accumulate(b, Mat(-gb.cwiseProduct(out)));
      },
      inputs);
}

Var transpose(Var a) {
  return unary(a, a.value().transpose(), [](const Mat& g) { return Mat(g.transpose()); });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  DRAPE_REQUIRE(rows * cols == a.value().size(), "reshape: size mismatch");
  const Eigen::Index r0 = a.rows(), c0 = a.cols();
  Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  return unary(a, std::move(out), [r0, c0](const Mat& g) { return Mat(Eigen::Map<const Mat>(g.data(), r0, c0)); });
}

Var tanh(Var a) {
  Mat y = a.value().array().tanh().matrix();
  return unary(a, y, [y](const Mat& g) { return Mat(g.array() * (1.0 - y.array().square())); });
}

Var sigmoid(Var a) {
  Mat y = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return unary(a, y, [y](const Mat& g) { return Mat(g.array() * y.array() * (1.0 - y.array())); });
}

Var softplus(Var a) {
  const Mat x = a.value();
  Mat y = x.unaryExpr([](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); });
  return unary(a, std::move(y), [x](const Mat& g) {
    return Mat(g.array() * x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }).array());
  });
}

Var silu(Var a) {
  const Mat x = a.value();
  const Mat s = x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  Mat y = x.cwiseProduct(s);
  return unary(a, std::move(y), [x, s](const Mat& g) {
    return Mat(g.array() * (s.array() * (1.0 + x.array() * (1.0 - s.array()))));
  });
}

Var square(Var a) {
  const Mat x = a.value();
  return unary(a, x.array().square().matrix(), [x](const Mat& g) { return Mat(2.0 * g.cwiseProduct(x)); });
}

Var sqrt(Var a) {
  Mat y = a.value().cwiseSqrt();
  return unary(a, y, [y](const Mat& g) { return Mat(g.array() / (2.0 * y.array())); });
}

Var abs(Var a) {
  const Mat x = a.value();
  return unary(a, x.cwiseAbs(), [x](const Mat& g) {
    return Mat(g.array() * x.unaryExpr([](double v) { return double((v > 0) - (v < 0)); }).array());
  });
}

Var clamp(Var a, double lo, double hi) {
  const Mat x = a.value();
  return unary(a, x.cwiseMax(lo).cwiseMin(hi), [x, lo, hi](const Mat& g) {
    return Mat(g.array() * ((x.array() > lo) && (x.array() < hi)).cast<double>());
  });
}

Var max_scalar(Var a, double lo) {
  const Mat x = a.value();
  return unary(a, x.cwiseMax(lo),
               [x, lo](const Mat& g) { return Mat(g.array() * (x.array() > lo).cast<double>()); });
}

Var sum(Var a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return unary(a, std::move(out), [r, c](const Mat& g) { return Mat(Mat::Constant(r, c, g(0, 0))); });
}

Var mean(Var a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  DRAPE_REQUIRE(r * c > 0, "mean of empty matrix");
  const double n = static_cast<double>(r * c);
  Mat out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return unary(a, std::move(out), [r, c, n](const Mat& g) { return Mat(Mat::Constant(r, c, g(0, 0) / n)); });
}

Var sum_rows(Var a) {
  const Eigen::Index r = a.rows();
  return unary(a, a.value().colwise().sum(), [r](const Mat& g) { return Mat(g.replicate(r, 1)); });
}

Var sum_cols(Var a) {
  const Eigen::Index c = a.cols();
  return unary(a, a.value().rowwise().sum(), [c](const Mat& g) { return Mat(g.replicate(1, c)); });
}

Var concat_cols(std::span<const Var> parts) {
  DRAPE_REQUIRE(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    DRAPE_REQUIRE(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts[0].tape->record(
      std::move(out),
      [saved](Tape& t, const Mat& g) {
        Eigen::Index c0 = 0;
        for (const Var& p : saved) {
          if (p.requires_grad()) t.accumulate(p, g.middleCols(c0, p.cols()));
          c0 += p.cols();
        }
      },
      parts);
}

Var concat_rows(std::span<const Var> parts) {
  DRAPE_REQUIRE(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    DRAPE_REQUIRE(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts[0].tape->record(
      std::move(out),
      [saved](Tape& t, const Mat& g) {
        Eigen::Index r0 = 0;
        for (const Var& p : saved) {
          if (p.requires_grad()) t.accumulate(p, g.middleRows(r0, p.rows()));
          r0 += p.rows();
        }
      },
      parts);
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  DRAPE_REQUIRE(start >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  const Eigen::Index r = a.rows(), c = a.cols();
  return unary(a, a.value().middleCols(start, count), [r, c, start, count](const Mat& g) {
    Mat full = Mat::Zero(r, c);
    full.middleCols(start, count) = g;
    return full;
  });
}

Var gather_rows(Var a, const std::vector<int>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    DRAPE_REQUIRE(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  Var inputs[] = {a};
  return a.tape->record(
      std::move(out), [a, rows](Tape& t, const Mat& g) { t.accumulate_rows(a, rows, g); }, inputs);
}

Var scatter_rows(Var a, const std::vector<int>& rows, Eigen::Index total_rows) {
  DRAPE_REQUIRE(static_cast<Eigen::Index>(rows.size()) == a.rows(), "scatter_rows: size mismatch");
  Mat out = Mat::Zero(total_rows, a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(rows[i]) += a.value().row(static_cast<Eigen::Index>(i));
  return unary(a, std::move(out), [rows](const Mat& g) {
    Mat ga(static_cast<Eigen::Index>(rows.size()), g.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(static_cast<Eigen::Index>(i)) = g.row(rows[i]);
    return ga;
  });
}

Var broadcast_rows(Var row, Eigen::Index rows) {
  DRAPE_REQUIRE(row.rows() == 1, "broadcast_rows: expects a single row");
  return unary(row, row.value().replicate(rows, 1), [](const Mat& g) { return Mat(g.colwise().sum()); });
}

Var weighted_sum(std::span<const Var> terms, std::span<const double> weights) {
  DRAPE_REQUIRE(terms.size() == weights.size() && !terms.empty(), "weighted_sum: size mismatch");
  Mat out = Mat::Zero(terms[0].rows(), terms[0].cols());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require_same_shape(out, terms[i].value(), "weighted_sum");
    out += weights[i] * terms[i].value();
  }
  std::vector<Var> saved(terms.begin(), terms.end());
  std::vector<double> w(weights.begin(), weights.end());
  return terms[0].tape->record(
      std::move(out),
      [saved, w](Tape& t, const Mat& g) {
        for (std::size_t i = 0; i < saved.size(); ++i)
          if (saved[i].requires_grad() && w[i] != 0.0) t.accumulate(saved[i], Mat(w[i] * g));
      },
      terms);
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

}  // namespace drape::ad
