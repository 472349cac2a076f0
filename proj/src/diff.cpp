#include "qas/diff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "qas/simulator.hpp"

namespace qas::diff {

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
  if (shape.empty() || shape.size() > 3) throw std::invalid_argument("tensor rank must be 1, 2 or 3");
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  data.assign(n, fill);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  if (values.size() != rows * cols) throw std::invalid_argument("matrix data size does not match shape");
  Tensor t;
  t.shape = {rows, cols};
  t.data = std::move(values);
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("rows() needs a rank-2 tensor, got " + shape_string(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("cols() needs a rank-2 tensor, got " + shape_string(shape));
  return shape[1];
}

double Tensor::item() const {
  if (data.size() != 1) throw std::invalid_argument("item() needs a single-element tensor");
  return data[0];
}

Tensor& Tensor::operator+=(const Tensor& o) {
  if (data.size() != o.data.size()) throw std::invalid_argument("tensor += size mismatch");
  for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
  return *this;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s + ")";
}

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape, 0.0) {}

void Parameter::zero_grad() {
  grad.shape = value.shape;
  grad.data.assign(value.data.size(), 0.0);
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) { return record("const", std::move(value), {}, nullptr); }

Var Tape::param(Parameter& p) {
  Var v = record("param:" + p.name, p.value, {}, nullptr);
  nodes_.back().param = &p;
  return v;
}

Var Tape::record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (backward_done_) throw std::logic_error("cannot record onto a tape after backward()");
  for (auto i : inputs) {
    if (i >= nodes_.size()) throw std::logic_error("tape input references a later node");
  }
  Node n;
  n.op = std::move(op);
  n.grad = Tensor(value.shape, 0.0);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("backward root belongs to another tape");
  if (backward_done_) throw std::logic_error("backward() already ran on this tape");
  if (nodes_.at(root.id).value.size() != 1) throw std::invalid_argument("backward root must be a scalar");
  backward_done_ = true;
  for (auto& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
  nodes_[root.id].grad.data[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      if (n.param->grad.data.size() != n.grad.data.size()) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

namespace {

Tape& common_tape(std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (v.tape == nullptr) throw std::invalid_argument("variable is not attached to a tape");
    if (t != nullptr && t != v.tape) throw std::invalid_argument("variables live on different tapes");
    t = v.tape;
  }
  return *t;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected a matrix, got " + shape_string(t.shape));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                                shape_string(b.shape));
  }
}

Var unary(const char* name, Var a, double (*f)(double), double (*df)(double)) {
  Tape& t = common_tape({a});
  Tensor out = a.value();
  for (auto& v : out.data) v = f(v);
  const std::size_t ia = a.id;
  return t.record(name, std::move(out), {ia}, [ia, df](Tape& tp, std::size_t self) {
    const Tensor& x = tp.value(ia);
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(ia);
    for (std::size_t i = 0; i < x.data.size(); ++i) gx.data[i] += g.data[i] * df(x.data[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = common_tape({a, b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(A.shape) + " . " +
                                shape_string(B.shape));
  }
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.data[i * k + p];
      for (std::size_t j = 0; j < n; ++j) C.data[i * n + j] += aip * B.data[p * n + j];
    }
  const std::size_t ia = a.id, ib = b.id;
  return t.record("matmul", std::move(C), {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::size_t self) {
    const Tensor& A = tp.value(ia);
    const Tensor& B = tp.value(ib);
    const Tensor& G = tp.grad(self);
    Tensor& gA = tp.grad(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += G.data[i * n + j] * B.data[p * n + j];
        gA.data[i * k + p] += s;
      }
    Tensor& gB = tp.grad(ib);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += A.data[i * k + p] * G.data[i * n + j];
        gB.data[p * n + j] += s;
      }
  });
}

Var batched_matmul(Var a, Var b) {
  Tape& t = common_tape({a, b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 3 || B.rank() != 3 || A.shape[0] != B.shape[0] || A.shape[2] != B.shape[1]) {
    throw std::invalid_argument("batched_matmul: incompatible shapes " + shape_string(A.shape) + " . " +
                                shape_string(B.shape));
  }
  const std::size_t nb = A.shape[0], m = A.shape[1], k = A.shape[2], n = B.shape[2];
  Tensor C({nb, m, n});
  for (std::size_t bi = 0; bi < nb; ++bi)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A.data[(bi * m + i) * k + p];
        for (std::size_t j = 0; j < n; ++j) C.data[(bi * m + i) * n + j] += aip * B.data[(bi * k + p) * n + j];
      }
  const std::size_t ia = a.id, ib = b.id;
  return t.record("batched_matmul", std::move(C), {ia, ib}, [=](Tape& tp, std::size_t self) {
    const Tensor& A = tp.value(ia);
    const Tensor& B = tp.value(ib);
    const Tensor& G = tp.grad(self);
    Tensor& gA = tp.grad(ia);
    Tensor& gB = tp.grad(ib);
    for (std::size_t bi = 0; bi < nb; ++bi)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = G.data[(bi * m + i) * n + j];
            gA.data[(bi * m + i) * k + p] += g * B.data[(bi * k + p) * n + j];
            gB.data[(bi * k + p) * n + j] += A.data[(bi * m + i) * k + p] * g;
          }
  });
}

Var reshape(Var a, std::vector<std::size_t> shape) {
  Tape& t = common_tape({a});
  Tensor out(shape);
  if (out.size() != a.value().size()) {
    throw std::invalid_argument("reshape: " + shape_string(a.shape()) + " cannot become " + shape_string(shape));
  }
  out.data = a.value().data;
  const std::size_t ia = a.id;
  return t.record("reshape", std::move(out), {ia}, [ia](Tape& tp, std::size_t self) {
    auto& g = tp.grad(ia).data;
    const auto& go = tp.grad(self).data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
  });
}

Var add(Var a, Var b) {
  Tape& t = common_tape({a, b});
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  const std::size_t ia = a.id, ib = b.id;
  return t.record("add", std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    tp.grad(ia) += tp.grad(self);
    tp.grad(ib) += tp.grad(self);
  });
}

Var sub(Var a, Var b) {
  Tape& t = common_tape({a, b});
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record("sub", std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self).data;
    auto& gb = tp.grad(ib).data;
    tp.grad(ia) += tp.grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

Var add_row(Var a, Var row) {
  Tape& t = common_tape({a, row});
  const Tensor& A = a.value();
  require_rank2(A, "add_row");
  const std::size_t r = A.rows(), c = A.cols();
  if (row.value().size() != c) throw std::invalid_argument("add_row: row width does not match");
  Tensor out = A;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += row.value().data[j];
  const std::size_t ia = a.id, ib = row.id;
  return t.record("add_row", std::move(out), {ia, ib}, [=](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self).data;
    tp.grad(ia) += tp.grad(self);
    auto& gb = tp.grad(ib).data;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
  });
}

Var mul(Var a, Var b) {
  Tape& t = common_tape({a, b});
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.record("mul", std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self).data;
    const auto& x = tp.value(ia).data;
    const auto& y = tp.value(ib).data;
    auto& gx = tp.grad(ia).data;
    auto& gy = tp.grad(ib).data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * y[i];
      gy[i] += g[i] * x[i];
    }
  });
}

Var mul_row(Var a, Var row) {
  Tape& t = common_tape({a, row});
  const Tensor& A = a.value();
  require_rank2(A, "mul_row");
  const std::size_t r = A.rows(), c = A.cols();
  if (row.value().size() != c) throw std::invalid_argument("mul_row: row width does not match");
  Tensor out = A;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] *= row.value().data[j];
  const std::size_t ia = a.id, ib = row.id;
  return t.record("mul_row", std::move(out), {ia, ib}, [=](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self).data;
    const auto& x = tp.value(ia).data;
    const auto& w = tp.value(ib).data;
    auto& gx = tp.grad(ia).data;
    auto& gw = tp.grad(ib).data;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        gx[i * c + j] += g[i * c + j] * w[j];
        gw[j] += g[i * c + j] * x[i * c + j];
      }
  });
}

Var mul_scalar(Var a, Var s) {
  Tape& t = common_tape({a, s});
  if (s.value().size() != 1) throw std::invalid_argument("mul_scalar: multiplier must be 1x1");
  const double sv = s.value().data[0];
  Tensor out = a.value();
  for (auto& v : out.data) v *= sv;
  const std::size_t ia = a.id, is = s.id;
  return t.record("mul_scalar", std::move(out), {ia, is}, [ia, is](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self).data;
    const auto& x = tp.value(ia).data;
    const double sv = tp.value(is).data[0];
    auto& gx = tp.grad(ia).data;
    double gs = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += g[i] * sv;
      gs += g[i] * x[i];
    }
    tp.grad(is).data[0] += gs;
  });
}

Var scale(Var a, double s) {
  Tape& t = common_tape({a});
  Tensor out = a.value();
  for (auto& v : out.data) v *= s;
  const std::size_t ia = a.id;
  return t.record("scale", std::move(out), {ia}, [ia, s](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self).data;
    auto& gx = tp.grad(ia).data;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

Var transpose(Var a) {
  Tape& t = common_tape({a});
  const Tensor& A = a.value();
  require_rank2(A, "transpose");
  const std::size_t r = A.rows(), c = A.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = A.data[i * c + j];
  const std::size_t ia = a.id;
  return t.record("transpose", std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self).data;
    auto& gx = tp.grad(ia).data;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

Var softmax_rows(Var a) {
  Tape& t = common_tape({a});
  const Tensor& A = a.value();
  require_rank2(A, "softmax_rows");
  const std::size_t r = A.rows(), c = A.cols();
  Tensor out = A;
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (row[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) row[j] /= s;
  }
  const std::size_t ia = a.id;
  return t.record("softmax_rows", std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const auto& y = tp.value(self).data;
    const auto& g = tp.grad(self).data;
    auto& gx = tp.grad(ia).data;
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = common_tape({a});
  const Tensor& A = a.value();
  require_rank2(A, "log_softmax_rows");
  const std::size_t r = A.rows(), c = A.cols();
  Tensor out = A;
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) row[j] -= lse;
  }
  const std::size_t ia = a.id;
  return t.record("log_softmax_rows", std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const auto& y = tp.value(self).data;
    const auto& g = tp.grad(self).data;
    auto& gx = tp.grad(ia).data;
    for (std::size_t i = 0; i < r; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i * c + j] - std::exp(y[i * c + j]) * gs;
    }
  });
}

Var layer_norm(Var a, double eps) {
  Tape& t = common_tape({a});
  const Tensor& A = a.value();
  require_rank2(A, "layer_norm");
  const std::size_t r = A.rows(), c = A.cols();
  Tensor out = A;
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data.data() + i * c;
    const double mean = std::accumulate(row, row + c, 0.0) / static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) row[j] = (row[j] - mean) * inv_std[i];
  }
  const std::size_t ia = a.id;
  return t.record("layer_norm", std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const auto& xh = tp.value(self).data;
    const auto& g = tp.grad(self).data;
    auto& gx = tp.grad(ia).data;
    const double cn = static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i) {
      double mg = 0.0, mgx = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        mg += g[i * c + j];
        mgx += g[i * c + j] * xh[i * c + j];
      }
      mg /= cn;
      mgx /= cn;
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += inv_std[i] * (g[i * c + j] - mg - xh[i * c + j] * mgx);
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: nothing to concatenate");
  Tape& t = common_tape({parts.front()});
  const std::size_t r = parts.front().value().rows();
  std::vector<std::size_t> widths, ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    common_tape({parts.front(), p});
    require_rank2(p.value(), "concat_cols");
    if (p.value().rows() != r) throw std::invalid_argument("concat_cols: row counts differ");
    widths.push_back(p.value().cols());
    ids.push_back(p.id);
    total += p.value().cols();
  }
  Tensor out({r, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.data[i * total + off + j] = P.data[i * widths[k] + j];
    off += widths[k];
  }
  return t.record("concat_cols", std::move(out), ids, [=](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self).data;
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto& gp = tp.grad(ids[k]).data;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += g[i * total + off + j];
      off += widths[k];
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = common_tape({a});
  const Tensor& A = a.value();
  require_rank2(A, "slice_cols");
  const std::size_t r = A.rows(), c = A.cols();
  if (begin >= end || end > c) throw std::invalid_argument("slice_cols: invalid column range");
  const std::size_t w = end - begin;
  Tensor out({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out.data[i * w + j] = A.data[i * c + begin + j];
  const std::size_t ia = a.id;
  return t.record("slice_cols", std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self).data;
    auto& gx = tp.grad(ia).data;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * c + begin + j] += g[i * w + j];
  });
}

Var sin(Var a) {
  return unary("sin", a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

Var cos(Var a) {
  return unary("cos", a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var log(Var a) {
  for (double v : a.value().data)
    if (!(v > 0.0)) throw std::domain_error("log of a non-positive value");
  return unary("log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return a;
  Tape& t = common_tape({a});
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.value().size());
  for (auto& m : mask) m = keep(rng) ? s : 0.0;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask[i];
  const std::size_t ia = a.id;
  return t.record("dropout", std::move(out), {ia}, [ia, mask = std::move(mask)](Tape& tp, std::size_t self) {
    const auto& g = tp.grad(self).data;
    auto& gx = tp.grad(ia).data;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var row_norms(Var a) {
  Tape& t = common_tape({a});
  const Tensor& A = a.value();
  require_rank2(A, "row_norms");
  const std::size_t r = A.rows(), c = A.cols();
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += A.data[i * c + j] * A.data[i * c + j];
    out.data[i] = std::sqrt(s);
  }
  const std::size_t ia = a.id;
  return t.record("row_norms", std::move(out), {ia}, [=](Tape& tp, std::size_t self) {
    const auto& x = tp.value(ia).data;
    const auto& nrm = tp.value(self).data;
    const auto& g = tp.grad(self).data;
    auto& gx = tp.grad(ia).data;
    for (std::size_t i = 0; i < r; ++i) {
      if (nrm[i] == 0.0) continue;  // subgradient 0 at the origin
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i] * x[i * c + j] / nrm[i];
    }
  });
}

Var sum(Var a) {
  Tape& t = common_tape({a});
  const double s = std::accumulate(a.value().data.begin(), a.value().data.end(), 0.0);
  const std::size_t ia = a.id;
  return t.record("sum", Tensor::scalar(s), {ia}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad(self).data[0];
    for (auto& v : tp.grad(ia).data) v += g;
  });
}

Var pick_sum(Var a, std::span<const int> index) {
  Tape& t = common_tape({a});
  const Tensor& A = a.value();
  require_rank2(A, "pick_sum");
  const std::size_t r = A.rows(), c = A.cols();
  if (index.size() != r) throw std::invalid_argument("pick_sum: one index per row required");
  std::vector<std::size_t> flat(r);
  double s = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= c) throw std::out_of_range("pick_sum: index out of range");
    flat[i] = i * c + static_cast<std::size_t>(index[i]);
    s += A.data[flat[i]];
  }
  const std::size_t ia = a.id;
  return t.record("pick_sum", Tensor::scalar(s), {ia}, [ia, flat = std::move(flat)](Tape& tp, std::size_t self) {
    const double g = tp.grad(self).data[0];
    auto& gx = tp.grad(ia).data;
    for (auto f : flat) gx[f] += g;
  });
}

Var max_abs_diff(Var a, const Tensor& reference) {
  Tape& t = common_tape({a});
  if (a.value().size() != reference.size()) throw std::invalid_argument("max_abs_diff: size mismatch");
  std::size_t arg = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double d = std::abs(a.value().data[i] - reference.data[i]);
    if (d > best) {
      best = d;
      arg = i;
    }
  }
  const double sign = a.value().data[arg] > reference.data[arg] ? 1.0 : (a.value().data[arg] < reference.data[arg] ? -1.0 : 0.0);
  const std::size_t ia = a.id;
  return t.record("max_abs_diff", Tensor::scalar(best), {ia}, [ia, arg, sign](Tape& tp, std::size_t self) {
    tp.grad(ia).data[arg] += sign * tp.grad(self).data[0];
  });
}

void QuantumTemplate::validate() const {
  if (n_qubits < 1) throw std::invalid_argument("quantum template needs at least one qubit");
  for (const auto& g : gates) {
    const GateInfo& info = gate_info(g.kind);
    const bool uses_angle = g.angle.weight >= 0 || g.angle.feature >= 0;
    if (uses_angle && !is_pauli_rotation(g.kind)) {
      throw std::invalid_argument("template gate '" + std::string(info.name) +
                                  "' carries a data angle but is not shiftable");
    }
    if (g.angle.weight >= n_weights || g.angle.feature >= n_features) {
      throw std::invalid_argument("template angle references an out-of-range weight or feature");
    }
    if (g.q0 < 0 || g.q0 >= n_qubits || (info.arity == 2 && (g.q1 < 0 || g.q1 >= n_qubits || g.q1 == g.q0))) {
      throw std::invalid_argument("template gate operand out of range");
    }
  }
}

namespace {

double angle_of(const AngleTerm& a, std::span<const double> u, std::span<const double> w) {
  double v = a.scale;
  if (a.weight >= 0) v *= w[static_cast<std::size_t>(a.weight)];
  if (a.feature >= 0) v *= std::pow(u[static_cast<std::size_t>(a.feature)], a.power);
  return v;
}

}  // namespace

Circuit QuantumTemplate::instantiate(std::span<const double> features, std::span<const double> weights) const {
  if (features.size() != static_cast<std::size_t>(n_features) || weights.size() != static_cast<std::size_t>(n_weights)) {
    throw std::invalid_argument("quantum template input length mismatch: expected " + std::to_string(n_features) +
                                " features and " + std::to_string(n_weights) + " weights");
  }
  std::vector<GateInstance> gs;
  gs.reserve(gates.size());
  for (const auto& g : gates) {
    GateInstance gi = gate::fixed(g.kind, g.q0, g.q1);
    if (gi.parametric()) gi.angle = angle_of(g.angle, features, weights);
    gs.push_back(gi);
  }
  return Circuit(n_qubits, std::move(gs), 0);
}

std::vector<double> evaluate_template(const QuantumTemplate& tmpl, std::span<const double> features,
                                      std::span<const double> weights) {
  return run(tmpl.instantiate(features, weights), {}).z_expectations();
}

Var quantum_node(const QuantumTemplate& tmpl, Var inputs, Var weights) {
  tmpl.validate();
  Tape& t = common_tape({inputs, weights});
  const Tensor& U = inputs.value();
  require_rank2(U, "quantum_node");
  const std::size_t rows = U.rows(), nf = U.cols(), nq = static_cast<std::size_t>(tmpl.n_qubits);
  if (nf != static_cast<std::size_t>(tmpl.n_features) || weights.value().size() != static_cast<std::size_t>(tmpl.n_weights)) {
    throw std::invalid_argument("quantum_node: expected " + std::to_string(tmpl.n_features) + " features and " +
                                std::to_string(tmpl.n_weights) + " weights, got " + shape_string(U.shape) + " and " +
                                shape_string(weights.shape()));
  }
  Tensor out({rows, nq});
  const auto& w = weights.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto z = evaluate_template(tmpl, std::span(U.data).subspan(r * nf, nf), w);
    std::copy(z.begin(), z.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r * nq));
  }
  const std::size_t iu = inputs.id, iw = weights.id;
  return t.record("quantum_node", std::move(out), {iu, iw}, [tmpl, iu, iw, rows, nf, nq](Tape& tp, std::size_t self) {
    const auto& u_all = tp.value(iu).data;
    const auto& w = tp.value(iw).data;
    const auto& g = tp.grad(self).data;
    auto& gu = tp.grad(iu).data;
    auto& gw = tp.grad(iw).data;
    const double shift = std::numbers::pi / 2;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::span<const double> u(u_all.data() + r * nf, nf);
      const std::span<const double> g_row(g.data() + r * nq, nq);
      if (std::all_of(g_row.begin(), g_row.end(), [](double v) { return v == 0.0; })) continue;
      const Circuit base = tmpl.instantiate(u, w);
      for (std::size_t k = 0; k < tmpl.gates.size(); ++k) {
        const AngleTerm& a = tmpl.gates[k].angle;
        if (a.weight < 0 && a.feature < 0) continue;
        std::vector<GateInstance> gates = base.gates();
        const double angle = gates[k].angle;
        gates[k].angle = angle + shift;
        const auto zp = run(Circuit(tmpl.n_qubits, gates, 0), {}).z_expectations();
        gates[k].angle = angle - shift;
        const auto zm = run(Circuit(tmpl.n_qubits, std::move(gates), 0), {}).z_expectations();
        double d_angle = 0.0;
        for (std::size_t q = 0; q < nq; ++q) d_angle += g_row[q] * 0.5 * (zp[q] - zm[q]);
        // Chain rule through angle = scale * w * u^p.
        const double wv = a.weight >= 0 ? w[static_cast<std::size_t>(a.weight)] : 1.0;
        const double uv = a.feature >= 0 ? u[static_cast<std::size_t>(a.feature)] : 1.0;
        if (a.weight >= 0) {
          const double upow = a.feature >= 0 ? std::pow(uv, a.power) : 1.0;
          gw[static_cast<std::size_t>(a.weight)] += d_angle * a.scale * upow;
        }
        if (a.feature >= 0) {
          const double du = a.power == 0 ? 0.0 : a.scale * wv * a.power * std::pow(uv, a.power - 1);
          gu[r * nf + static_cast<std::size_t>(a.feature)] += d_angle * du;
        }
      }
    }
  });
}

GradCheckReport check_gradients(const std::function<Var(Tape&)>& forward, std::span<Parameter* const> params,
                                double tolerance, double step) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var out = forward(tape);
    tape.backward(out);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  auto eval = [&forward] {
    Tape tape;
    return forward(tape).value().item();
  };

  GradCheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value.data[i];
      p.value.data[i] = orig + step;
      const double fp = eval();
      p.value.data[i] = orig - step;
      const double fm = eval();
      p.value.data[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = analytic[pi].data[i];
      const double abs_dev = std::abs(an - fd);
      const double rel_dev = abs_dev / std::max({1.0, std::abs(an), std::abs(fd)});
      ++rep.n_checked;
      rep.max_abs_deviation = std::max(rep.max_abs_deviation, abs_dev);
      if (rel_dev > rep.max_rel_deviation || rep.worst.empty()) {
        if (rel_dev >= rep.max_rel_deviation) {
          rep.max_rel_deviation = rel_dev;
          rep.worst = p.name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  for (Parameter* p : params) p->zero_grad();
  rep.passed = rep.max_rel_deviation <= tolerance;
  return rep;
}

}  // namespace qas::diff
