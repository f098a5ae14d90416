#include "pricelab/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

#include "pricelab/error.hpp"

namespace pricelab::nn {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != r * c) throw Error("Matrix: value count mismatch");
}

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kDense: return "dense";
    case ParamGroup::kGatProjection: return "gat_projection";
    case ParamGroup::kGatAttention: return "gat_attention";
  }
  return "dense";
}

ParamGroup param_group_from_string(std::string_view s) {
  if (s == "dense") return ParamGroup::kDense;
  if (s == "gat_projection") return ParamGroup::kGatProjection;
  if (s == "gat_attention") return ParamGroup::kGatAttention;
  throw ParseError("unknown parameter group '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// ParameterSet

std::size_t ParameterSet::add(std::string name, std::size_t rows,
                              std::size_t cols, ParamGroup group) {
  Parameter p;
  p.name = std::move(name);
  p.group = group;
  p.value = Matrix(rows, cols);
  p.grad = Matrix(rows, cols);
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

std::size_t ParameterSet::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

std::size_t ParameterSet::count(ParamGroup g) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.group == g) n += p.value.size();
  }
  return n;
}

const Parameter* ParameterSet::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

bool ParameterSet::all_finite() const {
  for (const auto& p : params_) {
    for (double v : p.value.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

double ParameterSet::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params_) {
    for (double g : p.grad.data) s += g * g;
  }
  return std::sqrt(s);
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> out;
  out.reserve(count());
  for (const auto& p : params_) {
    out.insert(out.end(), p.value.data.begin(), p.value.data.end());
  }
  return out;
}

std::vector<double> ParameterSet::flatten_grad() const {
  std::vector<double> out;
  out.reserve(count());
  for (const auto& p : params_) {
    out.insert(out.end(), p.grad.data.begin(), p.grad.data.end());
  }
  return out;
}

void ParameterSet::assign(std::span<const double> flat) {
  if (flat.size() != count()) throw Error("ParameterSet::assign: size mismatch");
  std::size_t k = 0;
  for (auto& p : params_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k), p.value.size(),
                p.value.data.begin());
    k += p.value.size();
  }
}

void ParameterSet::init_uniform_fan_in(RngStream& rng) {
  for (auto& p : params_) {
    if (p.name.ends_with(".b")) {
      std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
      continue;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.value.rows));
    for (double& v : p.value.data) v = bound * (2.0 * rng.uniform() - 1.0);
  }
}

nlohmann::json ParameterSet::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& p : params_) {
    arr.push_back({{"name", p.name},
                   {"group", nn::to_string(p.group)},
                   {"rows", p.value.rows},
                   {"cols", p.value.cols},
                   {"values", p.value.data}});
  }
  return arr;
}

void ParameterSet::load_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != params_.size()) {
    throw ParseError("checkpoint has " + std::to_string(j.size()) +
                     " parameters, model expects " +
                     std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& e = j[i];
    auto& p = params_[i];
    if (e.at("name") != p.name || e.at("rows") != p.value.rows ||
        e.at("cols") != p.value.cols) {
      throw ParseError("checkpoint parameter " + e.at("name").dump() +
                       " does not match model parameter '" + p.name + "'");
    }
    auto values = e.at("values").get<std::vector<double>>();
    if (values.size() != p.value.size()) {
      throw ParseError("checkpoint parameter '" + p.name + "' has wrong size");
    }
    p.value.data = std::move(values);
    p.group = param_group_from_string(e.at("group").get<std::string>());
  }
}

// ---------------------------------------------------------------------------
// Tape

std::size_t Var::rows() const { return tape_->value(id_).rows; }
std::size_t Var::cols() const { return tape_->value(id_).cols; }
const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1) throw Error("Var::scalar on a non-scalar node");
  return v.data[0];
}

Var Tape::constant(Matrix m) { return push(std::move(m), {}, nullptr, "constant"); }

Var Tape::parameter(Parameter& p) {
  Var v = push(p.value, {}, nullptr, "parameter");
  nodes_[v.id_].param = &p;
  nodes_[v.id_].needs_grad = true;
  return v;
}

Var Tape::push(Matrix value, std::span<const Var> inputs, BackwardFn backward_fn,
               const char* op) {
  for (double v : value.data) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string("non-finite value produced by ") + op);
    }
  }
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape_ != this) throw Error(std::string(op) + ": input from another tape");
    needs = needs || nodes_[in.id_].needs_grad;
  }
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs;
  if (needs) n.backward = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Matrix* Tape::grad_in(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return nullptr;
  if (n.grad.size() != n.value.size()) {
    n.grad = Matrix(n.value.rows, n.value.cols);
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw Error("backward called before any forward pass");
  if (loss.tape_ != this || loss.id_ >= nodes_.size()) {
    throw Error("backward: loss does not belong to this tape");
  }
  if (nodes_[loss.id_].value.size() != 1) {
    throw Error("backward: loss must be a 1x1 scalar");
  }
  for (auto& n : nodes_) n.grad.data.clear();
  if (!nodes_[loss.id_].needs_grad) return;
  grad_in(loss.id_)->data[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.data.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      auto& pg = n.param->grad.data;
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad.data[k];
    }
  }
}

void Tape::clear() { nodes_.clear(); }

// ---------------------------------------------------------------------------
// Operations

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<RowMajor> view(Matrix& m) {
  return {m.data.data(), static_cast<Eigen::Index>(m.rows),
          static_cast<Eigen::Index>(m.cols)};
}

Eigen::Map<const RowMajor> view(const Matrix& m) {
  return {m.data.data(), static_cast<Eigen::Index>(m.rows),
          static_cast<Eigen::Index>(m.cols)};
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                "x" + std::to_string(b.cols()) + ")");
  }
}

// Unary element-wise op with derivative expressed through input x and output y.
template <typename F, typename D>
Var unary(Var a, F f, D dfdx, const char* op) {
  const Matrix& x = a.value();
  Matrix y(x.rows, x.cols);
  for (std::size_t k = 0; k < x.size(); ++k) y.data[k] = f(x.data[k]);
  const std::size_t ia = a.id();
  Var in[] = {a};
  return a.tape()->push(std::move(y), in,
                        [ia, dfdx](Tape& t, std::size_t self) {
                          Matrix* ga = t.grad_in(ia);
                          if (!ga) return;
                          const auto& g = t.grad(self).data;
                          const auto& xv = t.value(ia).data;
                          const auto& yv = t.value(self).data;
                          for (std::size_t k = 0; k < g.size(); ++k) {
                            ga->data[k] += g[k] * dfdx(xv[k], yv[k]);
                          }
                        },
                        op);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  if (A.cols != B.rows) {
    throw Error("matmul: inner dimensions differ (" + std::to_string(A.cols) +
                " vs " + std::to_string(B.rows) + ")");
  }
  Matrix C(A.rows, B.cols);
  view(C).noalias() = view(A) * view(B);
  const std::size_t ia = a.id(), ib = b.id();
  Var in[] = {a, b};
  return a.tape()->push(std::move(C), in,
      [ia, ib](Tape& t, std::size_t self) {
        const auto G = view(t.grad(self));
        if (Matrix* ga = t.grad_in(ia)) {
          view(*ga).noalias() += G * view(t.value(ib)).transpose();
        }
        if (Matrix* gb = t.grad_in(ib)) {
          view(*gb).noalias() += view(t.value(ia)).transpose() * G;
        }
      },
      "matmul");
}

namespace {

template <typename Combine, typename DA, typename DB>
Var binary(Var a, Var b, Combine f, DA da, DB db, const char* op) {
  require_same_shape(a, b, op);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  Matrix z(x.rows, x.cols);
  for (std::size_t k = 0; k < x.size(); ++k) z.data[k] = f(x.data[k], y.data[k]);
  const std::size_t ia = a.id(), ib = b.id();
  Var in[] = {a, b};
  return a.tape()->push(std::move(z), in,
      [ia, ib, da, db](Tape& t, std::size_t self) {
        const auto& g = t.grad(self).data;
        const auto& xv = t.value(ia).data;
        const auto& yv = t.value(ib).data;
        if (Matrix* ga = t.grad_in(ia)) {
          for (std::size_t k = 0; k < g.size(); ++k) ga->data[k] += g[k] * da(xv[k], yv[k]);
        }
        if (Matrix* gb = t.grad_in(ib)) {
          for (std::size_t k = 0; k < g.size(); ++k) gb->data[k] += g[k] * db(xv[k], yv[k]);
        }
      },
      op);
}

}  // namespace

Var add(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; },
                [](double, double) { return 1.0; }, "add");
}

Var sub(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; },
                [](double, double) { return -1.0; }, "sub");
}

Var mul(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x * y; },
                [](double, double y) { return y; },
                [](double x, double) { return x; }, "mul");
}

Var minimum(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x <= y ? x : y; },
                [](double x, double y) { return x <= y ? 1.0 : 0.0; },
                [](double x, double y) { return x <= y ? 0.0 : 1.0; },
                "minimum");
}

Var add_row(Var a, Var row) {
  const Matrix& x = a.value();
  const Matrix& r = row.value();
  if (r.rows != 1 || r.cols != x.cols) throw Error("add_row: row shape mismatch");
  Matrix z = x;
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) z.data[i * x.cols + j] += r.data[j];
  }
  const std::size_t ia = a.id(), ir = row.id(), rows = x.rows, cols = x.cols;
  Var in[] = {a, row};
  return a.tape()->push(std::move(z), in,
      [ia, ir, rows, cols](Tape& t, std::size_t self) {
        const auto& g = t.grad(self).data;
        if (Matrix* ga = t.grad_in(ia)) {
          for (std::size_t k = 0; k < g.size(); ++k) ga->data[k] += g[k];
        }
        if (Matrix* gr = t.grad_in(ir)) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) gr->data[j] += g[i * cols + j];
          }
        }
      },
      "add_row");
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; },
               [s](double, double) { return s; }, "scale");
}

Var mul_const(Var a, const Matrix& m) {
  const Matrix& x = a.value();
  if (m.rows != x.rows || m.cols != x.cols) throw Error("mul_const: shape mismatch");
  Matrix z(x.rows, x.cols);
  for (std::size_t k = 0; k < x.size(); ++k) z.data[k] = x.data[k] * m.data[k];
  const std::size_t ia = a.id();
  Var in[] = {a};
  return a.tape()->push(std::move(z), in,
      [ia, m](Tape& t, std::size_t self) {
        Matrix* ga = t.grad_in(ia);
        if (!ga) return;
        const auto& g = t.grad(self).data;
        for (std::size_t k = 0; k < g.size(); ++k) ga->data[k] += g[k] * m.data[k];
      },
      "mul_const");
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

Var leaky_relu(Var a, double slope) {
  return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x, double) { return x > 0.0 ? 1.0 : slope; },
               "leaky_relu");
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; }, "exp");
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; }, "square");
}

Var clip(Var a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) {
                 return x >= lo && x <= hi ? 1.0 : 0.0;
               },
               "clip");
}

Var detach(Var a) { return a.tape()->constant(a.value()); }

Var concat_cols(Var a, Var b) {
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  if (x.rows != y.rows) throw Error("concat_cols: row count mismatch");
  const std::size_t rows = x.rows, ca = x.cols, cb = y.cols, c = ca + cb;
  Matrix z(rows, c);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(&x.data[i * ca], ca, &z.data[i * c]);
    std::copy_n(&y.data[i * cb], cb, &z.data[i * c + ca]);
  }
  const std::size_t ia = a.id(), ib = b.id();
  Var in[] = {a, b};
  return a.tape()->push(std::move(z), in,
      [ia, ib, rows, ca, cb, c](Tape& t, std::size_t self) {
        const auto& g = t.grad(self).data;
        if (Matrix* ga = t.grad_in(ia)) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < ca; ++j) ga->data[i * ca + j] += g[i * c + j];
          }
        }
        if (Matrix* gb = t.grad_in(ib)) {
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cb; ++j) gb->data[i * cb + j] += g[i * c + ca + j];
          }
        }
      },
      "concat_cols");
}

Var gather_rows(Var a, std::span<const std::size_t> index) {
  const Matrix& x = a.value();
  const std::size_t cols = x.cols;
  Matrix z(index.size(), cols);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.rows) throw Error("gather_rows: index out of range");
    std::copy_n(&x.data[index[r] * cols], cols, &z.data[r * cols]);
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(index.begin(), index.end());
  Var in[] = {a};
  return a.tape()->push(std::move(z), in,
      [ia, idx = std::move(idx), cols](Tape& t, std::size_t self) {
        Matrix* ga = t.grad_in(ia);
        if (!ga) return;
        const auto& g = t.grad(self).data;
        for (std::size_t r = 0; r < idx.size(); ++r) {
          for (std::size_t j = 0; j < cols; ++j) {
            ga->data[idx[r] * cols + j] += g[r * cols + j];
          }
        }
      },
      "gather_rows");
}

Var pick(Var a, std::span<const std::size_t> column_per_row) {
  const Matrix& x = a.value();
  if (column_per_row.size() != x.rows) throw Error("pick: one column per row required");
  Matrix z(x.rows, 1);
  for (std::size_t r = 0; r < x.rows; ++r) {
    if (column_per_row[r] >= x.cols) throw Error("pick: column out of range");
    z.data[r] = x(r, column_per_row[r]);
  }
  const std::size_t ia = a.id(), cols = x.cols;
  std::vector<std::size_t> idx(column_per_row.begin(), column_per_row.end());
  Var in[] = {a};
  return a.tape()->push(std::move(z), in,
      [ia, idx = std::move(idx), cols](Tape& t, std::size_t self) {
        Matrix* ga = t.grad_in(ia);
        if (!ga) return;
        const auto& g = t.grad(self).data;
        for (std::size_t r = 0; r < idx.size(); ++r) ga->data[r * cols + idx[r]] += g[r];
      },
      "pick");
}

Var sum_rows(Var a) {
  const Matrix& x = a.value();
  Matrix z(x.rows, 1);
  for (std::size_t r = 0; r < x.rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) s += x(r, j);
    z.data[r] = s;
  }
  const std::size_t ia = a.id(), cols = x.cols;
  Var in[] = {a};
  return a.tape()->push(std::move(z), in,
      [ia, cols](Tape& t, std::size_t self) {
        Matrix* ga = t.grad_in(ia);
        if (!ga) return;
        const auto& g = t.grad(self).data;
        for (std::size_t k = 0; k < ga->size(); ++k) ga->data[k] += g[k / cols];
      },
      "sum_rows");
}

Var sum_all(Var a) {
  const Matrix& x = a.value();
  Matrix z(1, 1, std::accumulate(x.data.begin(), x.data.end(), 0.0));
  const std::size_t ia = a.id();
  Var in[] = {a};
  return a.tape()->push(std::move(z), in,
      [ia](Tape& t, std::size_t self) {
        Matrix* ga = t.grad_in(ia);
        if (!ga) return;
        const double g = t.grad(self).data[0];
        for (double& v : ga->data) v += g;
      },
      "sum_all");
}

Var mean_all(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error("mean_all: empty input");
  return scale(sum_all(a), 1.0 / n);
}

Var segment_softmax(Var scores, std::span<const std::size_t> offsets) {
  const Matrix& x = scores.value();
  if (x.cols != 1 || offsets.empty() || offsets.back() != x.rows) {
    throw Error("segment_softmax: scores must be E x 1 and offsets must end at E");
  }
  Matrix y(x.rows, 1);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const std::size_t b = offsets[s], e = offsets[s + 1];
    if (b == e) continue;
    double mx = x.data[b];
    for (std::size_t k = b + 1; k < e; ++k) mx = std::max(mx, x.data[k]);
    double sum = 0.0;
    for (std::size_t k = b; k < e; ++k) {
      y.data[k] = std::exp(x.data[k] - mx);
      sum += y.data[k];
    }
    for (std::size_t k = b; k < e; ++k) y.data[k] /= sum;
  }
  const std::size_t ia = scores.id();
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  Var in[] = {scores};
  return scores.tape()->push(std::move(y), in,
      [ia, off = std::move(off)](Tape& t, std::size_t self) {
        Matrix* ga = t.grad_in(ia);
        if (!ga) return;
        const auto& g = t.grad(self).data;
        const auto& yv = t.value(self).data;
        for (std::size_t s = 0; s + 1 < off.size(); ++s) {
          double dot = 0.0;
          for (std::size_t k = off[s]; k < off[s + 1]; ++k) dot += g[k] * yv[k];
          for (std::size_t k = off[s]; k < off[s + 1]; ++k) {
            ga->data[k] += yv[k] * (g[k] - dot);
          }
        }
      },
      "segment_softmax");
}

Var segment_weighted_sum(Var weights, Var values,
                         std::span<const std::size_t> offsets) {
  const Matrix& w = weights.value();
  const Matrix& v = values.value();
  if (w.cols != 1 || w.rows != v.rows || offsets.empty() ||
      offsets.back() != v.rows) {
    throw Error("segment_weighted_sum: shape mismatch");
  }
  const std::size_t segs = offsets.size() - 1, d = v.cols;
  Matrix z(segs, d);
  for (std::size_t s = 0; s < segs; ++s) {
    for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) {
      for (std::size_t j = 0; j < d; ++j) z.data[s * d + j] += w.data[k] * v.data[k * d + j];
    }
  }
  const std::size_t iw = weights.id(), iv = values.id();
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  Var in[] = {weights, values};
  return weights.tape()->push(std::move(z), in,
      [iw, iv, off = std::move(off), d](Tape& t, std::size_t self) {
        const auto& g = t.grad(self).data;
        Matrix* gw = t.grad_in(iw);
        Matrix* gv = t.grad_in(iv);
        const auto& wv = t.value(iw).data;
        const auto& vv = t.value(iv).data;
        for (std::size_t s = 0; s + 1 < off.size(); ++s) {
          for (std::size_t k = off[s]; k < off[s + 1]; ++k) {
            if (gw) {
              double dot = 0.0;
              for (std::size_t j = 0; j < d; ++j) dot += g[s * d + j] * vv[k * d + j];
              gw->data[k] += dot;
            }
            if (gv) {
              for (std::size_t j = 0; j < d; ++j) gv->data[k * d + j] += wv[k] * g[s * d + j];
            }
          }
        }
      },
      "segment_weighted_sum");
}

Var segment_mean(Var a, std::span<const std::size_t> offsets) {
  const Matrix& x = a.value();
  if (offsets.empty() || offsets.back() != x.rows) {
    throw Error("segment_mean: offsets must end at the row count");
  }
  const std::size_t segs = offsets.size() - 1, d = x.cols;
  Matrix z(segs, d);
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t len = offsets[s + 1] - offsets[s];
    if (len == 0) continue;
    for (std::size_t k = offsets[s]; k < offsets[s + 1]; ++k) {
      for (std::size_t j = 0; j < d; ++j) z.data[s * d + j] += x.data[k * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) z.data[s * d + j] /= static_cast<double>(len);
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> off(offsets.begin(), offsets.end());
  Var in[] = {a};
  return a.tape()->push(std::move(z), in,
      [ia, off = std::move(off), d](Tape& t, std::size_t self) {
        Matrix* ga = t.grad_in(ia);
        if (!ga) return;
        const auto& g = t.grad(self).data;
        for (std::size_t s = 0; s + 1 < off.size(); ++s) {
          const std::size_t len = off[s + 1] - off[s];
          if (len == 0) continue;
          const double inv = 1.0 / static_cast<double>(len);
          for (std::size_t k = off[s]; k < off[s + 1]; ++k) {
            for (std::size_t j = 0; j < d; ++j) ga->data[k * d + j] += g[s * d + j] * inv;
          }
        }
      },
      "segment_mean");
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
}

Var log_softmax_rows(Var a) {
  const Matrix& x = a.value();
  if (x.cols == 0) throw Error("log_softmax_rows: zero columns");
  Matrix y(x.rows, x.cols);
  for (std::size_t r = 0; r < x.rows; ++r) {
    log_softmax(x.row(r), std::span<double>(y.data).subspan(r * x.cols, x.cols));
  }
  const std::size_t ia = a.id(), cols = x.cols;
  Var in[] = {a};
  return a.tape()->push(std::move(y), in,
      [ia, cols](Tape& t, std::size_t self) {
        Matrix* ga = t.grad_in(ia);
        if (!ga) return;
        const auto& g = t.grad(self).data;
        const auto& yv = t.value(self).data;
        const std::size_t rows = yv.size() / cols;
        for (std::size_t r = 0; r < rows; ++r) {
          double gs = 0.0;
          for (std::size_t j = 0; j < cols; ++j) gs += g[r * cols + j];
          for (std::size_t j = 0; j < cols; ++j) {
            ga->data[r * cols + j] += g[r * cols + j] - std::exp(yv[r * cols + j]) * gs;
          }
        }
      },
      "log_softmax_rows");
}

Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::kTanh: return tanh(x);
    case Activation::kRelu: return relu(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Layers

Linear::Linear(ParameterSet& params, const std::string& name, std::size_t in,
               std::size_t out, ParamGroup group)
    : in_(in), out_(out) {
  weight_ = params.add(name + ".w", in, out, group);
  bias_ = params.add(name + ".b", 1, out, group);
}

Var Linear::forward(Tape& tape, ParameterSet& params, Var x) const {
  if (x.cols() != in_) {
    throw Error("Linear: input has " + std::to_string(x.cols()) +
                " columns, layer expects " + std::to_string(in_));
  }
  return add_row(matmul(x, tape.parameter(params[weight_])),
                 tape.parameter(params[bias_]));
}

Mlp::Mlp(ParameterSet& params, const std::string& name,
         std::vector<std::size_t> sizes, Activation hidden, Activation output)
    : sizes_(std::move(sizes)), hidden_(hidden), output_(output) {
  if (sizes_.size() < 2) throw Error("Mlp: need at least input and output size");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    layers_.emplace_back(params, name + "." + std::to_string(l), sizes_[l],
                         sizes_[l + 1]);
  }
}

Var Mlp::forward(Tape& tape, ParameterSet& params, Var x) const {
  if (x.cols() != in_dim()) {
    throw Error("Mlp: input has " + std::to_string(x.cols()) +
                " features, encoder expects " + std::to_string(in_dim()));
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = layers_[l].forward(tape, params, x);
    x = activate(x, l + 1 == layers_.size() ? output_ : hidden_);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Categorical head

namespace {

CategoricalDraw describe(std::span<const double> logits, int action) {
  std::vector<double> lp(logits.size());
  log_softmax(logits, lp);
  CategoricalDraw d;
  d.action = action;
  d.log_prob = lp[static_cast<std::size_t>(action)];
  for (double v : lp) d.entropy -= std::exp(v) * v;
  return d;
}

}  // namespace

CategoricalDraw categorical_sample(std::span<const double> logits,
                                   RngStream& rng) {
  if (logits.empty()) throw Error("categorical_sample: empty logits");
  std::vector<double> lp(logits.size());
  log_softmax(logits, lp);
  const double u = rng.uniform();
  double cum = 0.0;
  int action = static_cast<int>(logits.size()) - 1;
  for (std::size_t k = 0; k < lp.size(); ++k) {
    cum += std::exp(lp[k]);
    if (u < cum) {
      action = static_cast<int>(k);
      break;
    }
  }
  return describe(logits, action);
}

CategoricalDraw categorical_greedy(std::span<const double> logits) {
  if (logits.empty()) throw Error("categorical_greedy: empty logits");
  const auto it = std::max_element(logits.begin(), logits.end());
  return describe(logits, static_cast<int>(it - logits.begin()));
}

// ---------------------------------------------------------------------------
// Optimizer

void sgd_step(ParameterSet& params, double learning_rate, double weight_decay) {
  for (auto& p : params) {
    if (p.grad.size() != p.value.size()) {
      throw Error("sgd_step: gradient shape mismatch for " + p.name);
    }
    const double wd = p.group == ParamGroup::kGatProjection ? weight_decay : 0.0;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      p.value.data[k] -= learning_rate * (p.grad.data[k] + wd * p.value.data[k]);
    }
  }
}

void SgdOptimizer::step(ParameterSet& params) {
  if (velocity_.empty()) {
    for (const auto& p : params) velocity_.emplace_back(p.value.size(), 0.0);
  }
  if (velocity_.size() != params.size()) {
    throw Error("SgdOptimizer: parameter set changed shape");
  }
  double clip = 1.0;
  if (options_.max_grad_norm > 0.0) {
    const double norm = params.grad_norm();
    if (norm > options_.max_grad_norm) clip = options_.max_grad_norm / norm;
  }
  std::size_t i = 0;
  for (auto& p : params) {
    auto& vel = velocity_[i++];
    if (vel.size() != p.value.size() || p.grad.size() != p.value.size()) {
      throw Error("SgdOptimizer: shape mismatch for " + p.name);
    }
    const double wd =
        p.group == ParamGroup::kGatProjection ? options_.weight_decay : 0.0;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = clip * p.grad.data[k] + wd * p.value.data[k];
      vel[k] = options_.momentum * vel[k] + g;
      p.value.data[k] -= options_.learning_rate * vel[k];
    }
  }
}

}  // namespace pricelab::nn
