#ifndef PRICELAB_NN_HPP_
#define PRICELAB_NN_HPP_

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pricelab/rng.hpp"

// Minimal reverse-mode differentiation for the small networks used by the
// pricing agents. Values are dense row-major double matrices; a Tape records
// every operation of one forward pass and replays it backwards.
namespace pricelab::nn {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

enum class ParamGroup { kDense, kGatProjection, kGatAttention };

std::string to_string(ParamGroup g);
ParamGroup param_group_from_string(std::string_view s);

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::kDense;
  Matrix value;
  Matrix grad;
};

class ParameterSet {
 public:
  // Returns the index of the new parameter.
  std::size_t add(std::string name, std::size_t rows, std::size_t cols,
                  ParamGroup group = ParamGroup::kDense);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Total number of scalars.
  std::size_t count() const;
  std::size_t count(ParamGroup g) const;
  const Parameter* find(std::string_view name) const;

  void zero_grad();
  bool all_finite() const;
  double grad_norm() const;

  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
  std::vector<double> flatten_grad() const;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) on every matrix whose name does
  // not end in ".b"; biases start at zero.
  void init_uniform_fan_in(RngStream& rng);

  nlohmann::json to_json() const;
  // Requires the same names and shapes in the same order.
  void load_json(const nlohmann::json& j);

 private:
  std::vector<Parameter> params_;
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives and
// has not been cleared.
class Var {
 public:
  Var() = default;
  std::size_t rows() const;
  std::size_t cols() const;
  const Matrix& value() const;
  const Matrix& grad() const;
  double scalar() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m);
  // Binds a parameter; backward() accumulates into parameter.grad.
  Var parameter(Parameter& p);

  // Reverse sweep from a 1x1 node. Throws Error when the tape holds no
  // forward pass or `loss` is not a scalar on this tape.
  void backward(Var loss);
  void clear();
  std::size_t size() const { return nodes_.size(); }

  // Op construction. `backward_fn` receives the tape and the new node's id
  // and must add the node's gradient into its inputs' gradients.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;
  Var push(Matrix value, std::span<const Var> inputs, BackwardFn backward_fn,
           const char* op);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  // Gradient buffer of an input, zero-allocated on first use. Returns
  // nullptr when the node does not require a gradient.
  Matrix* grad_in(std::size_t id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
};

// Element-wise and linear-algebra operations.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x cols row over a
Var scale(Var a, double s);
Var mul_const(Var a, const Matrix& m);
Var tanh(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var exp(Var a);
Var square(Var a);
Var clip(Var a, double lo, double hi);
Var minimum(Var a, Var b);
Var detach(Var a);

// Structural operations.
Var concat_cols(Var a, Var b);
Var gather_rows(Var a, std::span<const std::size_t> index);
Var pick(Var a, std::span<const std::size_t> column_per_row);  // -> rows x 1
Var sum_rows(Var a);                                           // -> rows x 1
Var sum_all(Var a);
Var mean_all(Var a);

// Segment operations over consecutive row ranges [offsets[s], offsets[s+1]).
Var segment_softmax(Var scores, std::span<const std::size_t> offsets);
Var segment_weighted_sum(Var weights, Var values,
                         std::span<const std::size_t> offsets);
Var segment_mean(Var a, std::span<const std::size_t> offsets);

Var log_softmax_rows(Var a);

// Shared numerics so that sampled log-probabilities match the ones recomputed
// on a tape bit for bit.
void log_softmax(std::span<const double> logits, std::span<double> out);

enum class Activation { kIdentity, kTanh, kRelu };

Var activate(Var x, Activation a);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in,
         std::size_t out, ParamGroup group = ParamGroup::kDense);

  Var forward(Tape& tape, ParameterSet& params, Var x) const;
  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }

 private:
  std::size_t weight_ = 0;
  std::size_t bias_ = 0;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

// Affine + nonlinearity stack. `sizes` = {in, hidden..., out}.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& params, const std::string& name,
      std::vector<std::size_t> sizes, Activation hidden,
      Activation output = Activation::kIdentity);

  // Throws Error when x.cols() != in_dim().
  Var forward(Tape& tape, ParameterSet& params, Var x) const;
  std::size_t in_dim() const { return sizes_.front(); }
  std::size_t out_dim() const { return sizes_.back(); }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<Linear> layers_;
  Activation hidden_ = Activation::kTanh;
  Activation output_ = Activation::kIdentity;
};

struct CategoricalDraw {
  int action = 0;
  double log_prob = 0.0;
  double entropy = 0.0;
};

CategoricalDraw categorical_sample(std::span<const double> logits,
                                   RngStream& rng);
// Argmax (first index on ties).
CategoricalDraw categorical_greedy(std::span<const double> logits);

struct SgdOptions {
  double learning_rate = 3e-4;
  double momentum = 0.0;
  double weight_decay = 0.0;  // applied to ParamGroup::kGatProjection only
  double max_grad_norm = 0.0; // 0 disables global norm clipping
};

// p <- p - lr * (g + wd * p), with wd applied only to GAT projections.
void sgd_step(ParameterSet& params, double learning_rate, double weight_decay);

class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdOptions options) : options_(options) {}
  const SgdOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  // Throws Error if the velocity buffers no longer match the parameter shapes.
  void step(ParameterSet& params);

 private:
  SgdOptions options_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace pricelab::nn

#endif  // PRICELAB_NN_HPP_
