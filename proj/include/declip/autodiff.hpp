// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Graph is a tape: every op appends a node whose parents were appended
// earlier, so a single reverse sweep over the node vector visits children
// before parents. Graphs are rebuilt for every training step.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace declip {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Tensor {
  Shape shape;
  Eigen::VectorXd values;
  bool requires_grad = false;
  std::optional<Eigen::VectorXd> grad;

  Tensor() = default;
  Tensor(Shape s, Eigen::VectorXd v, bool needs_grad = false);

  static Tensor zeros(Shape s, bool needs_grad = false);
  static Tensor scalar(double v);

  Index size() const { return values.size(); }
  Index dim(std::size_t axis) const { return shape.at(axis); }

  // Zero-fills the gradient buffer (allocating it when requires_grad).
  void zero_grad();

  Eigen::Map<const RowMatrix> as_matrix(Index rows, Index cols) const {
    return {values.data(), rows, cols};
  }
};

enum class OpKind {
  Leaf,
  Constant,
  MatMul,
  Conv1d,
  UpsampleNearest,
  MaxPool1d,
  Relu,
  Add,
  Sub,
  Mul,
  ScalarMul,
  Sum,
  Mean,
  Square,
  Concat,
  Slice,
  Reshape,
  Clip,
  Pad,
  Crop,
};

const char* op_name(OpKind kind);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the Graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const;
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  // parent_grads[i] is null when parent i does not require a gradient.
  using BackwardFn = std::function<void(const Eigen::VectorXd& out_grad,
                                        const std::vector<const Tensor*>& parent_values,
                                        const std::vector<Eigen::VectorXd*>& parent_grads)>;

  struct Node {
    OpKind kind;
    std::vector<std::size_t> parents;
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor* param = nullptr;  // leaf bound to an external parameter tensor
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Non-differentiable input.
  Var constant(Tensor t);
  // Leaf bound to `param`; backward() accumulates into param.grad.
  Var parameter(Tensor& param);

  Var record(OpKind kind, std::vector<Var> parents, Tensor value, BackwardFn backward);

  // Reverse sweep from a scalar output. Gradients accumulate additively into
  // every bound parameter.
  void backward(Var output);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// ---- ops -------------------------------------------------------------------

enum class Transpose { None, Second };

// (m,k)x(k,n) -> (m,n); with Transpose::Second, b is (n,k).
Var matmul(Var a, Var b, Transpose t = Transpose::None);

struct Conv1dOptions {
  Index stride = 1;
  Index padding = 0;
};
// x: (B, C_in, L), w: (C_out, C_in, K) -> (B, C_out, (L + 2p - K)/s + 1).
// out[t] = sum_k w[k] * x[t*s + (K-1-k) - p]: convolution (flipped kernel), zero padding, no bias.
Var conv1d(Var x, Var w, Conv1dOptions opt = {});
// (B, C, L) -> (B, C, 2L)
Var upsample_nearest(Var x);
// (B, C, L) -> (B, C, L/2); L must be even.
Var max_pool1d(Var x);

Var relu(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scalar_mul(double s, Var x);
Var sum(Var x);
Var mean(Var x);
Var square(Var x);
// Concatenation / slicing along axis 1 of (B, C, L) tensors.
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(Var x, Index begin, Index count);
Var reshape(Var x, Shape shape);
// Zero-extends / truncates axis 2 of a (B, C, L) tensor.
Var pad_length(Var x, Index length);
Var crop_length(Var x, Index length);
// Hard threshold at +-mu; derivative 1 strictly inside, 0 at or beyond.
Var clip(Var x, double mu);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var x) { return scalar_mul(s, x); }

// ---- parameters ------------------------------------------------------------

class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  void insert(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  Index parameter_count() const;

  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  Map entries_;
};

void zero_grads(ParamStore& params);

}  // namespace declip
