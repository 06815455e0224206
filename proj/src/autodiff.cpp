#include "declip/autodiff.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <sstream>

namespace declip {

Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape s, Eigen::VectorXd v, bool needs_grad)
    : shape(std::move(s)), values(std::move(v)), requires_grad(needs_grad) {
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape s, bool needs_grad) {
  const Index n = shape_size(s);
  return Tensor(std::move(s), Eigen::VectorXd::Zero(n), needs_grad);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, Eigen::VectorXd::Constant(1, v)); }

void Tensor::zero_grad() {
  if (grad) {
    grad->setZero();
  } else if (requires_grad) {
    grad = Eigen::VectorXd::Zero(values.size());
  }
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::UpsampleNearest: return "upsample_nearest";
    case OpKind::MaxPool1d: return "max_pool1d";
    case OpKind::Relu: return "relu";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::ScalarMul: return "scalar_mul";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Square: return "square";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Reshape: return "reshape";
    case OpKind::Clip: return "clip";
    case OpKind::Pad: return "pad";
    case OpKind::Crop: return "crop";
  }
  return "unknown";
}

Graph& Var::graph() const {
  if (!graph_) throw std::logic_error("Var is not attached to a graph");
  return *graph_;
}

const Tensor& Var::value() const { return graph().node(id_).value; }

bool Var::requires_grad() const { return graph().node(id_).requires_grad; }

// ---- Graph -------------------------------------------------------------------

Var Graph::constant(Tensor t) {
  t.requires_grad = false;
  t.grad.reset();
  nodes_.push_back(Node{OpKind::Constant, {}, std::move(t), false, nullptr, nullptr});
  return {this, nodes_.size() - 1};
}

Var Graph::parameter(Tensor& param) {
  Tensor view(param.shape, param.values, param.requires_grad);
  nodes_.push_back(Node{OpKind::Leaf, {}, std::move(view), param.requires_grad, nullptr, &param});
  return {this, nodes_.size() - 1};
}

Var Graph::record(OpKind kind, std::vector<Var> parents, Tensor value, BackwardFn backward) {
  Node node{kind, {}, std::move(value), false, std::move(backward), nullptr};
  node.parents.reserve(parents.size());
  for (const Var& p : parents) {
    if (&p.graph() != this) throw std::logic_error(std::string(op_name(kind)) + ": operands from different graphs");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (!node.requires_grad) node.backward = nullptr;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

void Graph::backward(Var output) {
  if (&output.graph() != this) throw std::logic_error("backward: output belongs to another graph");
  const Node& out = nodes_.at(output.id());
  if (out.value.size() != 1) {
    throw ShapeError("backward: output must be scalar, got shape " + shape_str(out.value.shape));
  }
  if (!out.requires_grad) return;

  std::vector<Eigen::VectorXd> grads(output.id() + 1);
  grads[output.id()] = Eigen::VectorXd::Ones(1);

  std::vector<const Tensor*> parent_values;
  std::vector<Eigen::VectorXd*> parent_grads;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || grads[i].size() == 0) continue;
    if (node.kind == OpKind::Leaf) {
      if (node.param) {
        if (!node.param->grad) node.param->grad = Eigen::VectorXd::Zero(node.param->values.size());
        *node.param->grad += grads[i];
      }
      continue;
    }
    parent_values.clear();
    parent_grads.clear();
    for (std::size_t p : node.parents) {
      parent_values.push_back(&nodes_[p].value);
      if (nodes_[p].requires_grad) {
        if (grads[p].size() == 0) grads[p] = Eigen::VectorXd::Zero(nodes_[p].value.size());
        parent_grads.push_back(&grads[p]);
      } else {
        parent_grads.push_back(nullptr);
      }
    }
    node.backward(grads[i], parent_values, parent_grads);
    grads[i] = Eigen::VectorXd();
  }
}

// ---- ops -------------------------------------------------------------------

namespace {

void require(bool ok, OpKind kind, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op_name(kind)) + ": " + detail);
}

void require_same_shape(OpKind kind, const Var& a, const Var& b) {
  require(a.shape() == b.shape(), kind,
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank3(OpKind kind, const Var& x) {
  require(x.shape().size() == 3, kind, "expected (batch, channels, length), got " + shape_str(x.shape()));
}

// Column buffer of one batch item for conv1d: rows index (channel, tap), columns output position.
// Taps are read in reverse, so conv1d is a true convolution (flipped kernel).
RowMatrix im2col(const double* x, Index channels, Index length, Index kernel, Index out_len,
                 const Conv1dOptions& opt) {
  RowMatrix col = RowMatrix::Zero(channels * kernel, out_len);
  for (Index c = 0; c < channels; ++c) {
    const double* xc = x + c * length;
    for (Index k = 0; k < kernel; ++k) {
      double* row = col.row(c * kernel + k).data();
      for (Index t = 0; t < out_len; ++t) {
        const Index src = t * opt.stride + (kernel - 1 - k) - opt.padding;
        if (src >= 0 && src < length) row[t] = xc[src];
      }
    }
  }
  return col;
}

void col2im_add(const RowMatrix& col, double* dx, Index channels, Index length, Index kernel,
                Index out_len, const Conv1dOptions& opt) {
  for (Index c = 0; c < channels; ++c) {
    double* dxc = dx + c * length;
    for (Index k = 0; k < kernel; ++k) {
      const double* row = col.row(c * kernel + k).data();
      for (Index t = 0; t < out_len; ++t) {
        const Index src = t * opt.stride + (kernel - 1 - k) - opt.padding;
        if (src >= 0 && src < length) dxc[src] += row[t];
      }
    }
  }
}

}  // namespace

Var matmul(Var a, Var b, Transpose t) {
  constexpr OpKind kind = OpKind::MatMul;
  require(a.shape().size() == 2 && b.shape().size() == 2, kind,
          "expected matrices, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Index m = a.shape()[0], k = a.shape()[1];
  const bool tb = t == Transpose::Second;
  const Index bk = tb ? b.shape()[1] : b.shape()[0];
  const Index n = tb ? b.shape()[0] : b.shape()[1];
  require(k == bk, kind,
          "inner dimensions differ: " + shape_str(a.shape()) + (tb ? " x transpose" : " x ") + shape_str(b.shape()));

  const auto am = a.value().as_matrix(m, k);
  const auto bm = b.value().as_matrix(b.shape()[0], b.shape()[1]);
  Tensor out = Tensor::zeros({m, n});
  Eigen::Map<RowMatrix> om(out.values.data(), m, n);
  if (tb) {
    om.noalias() = am * bm.transpose();
  } else {
    om.noalias() = am * bm;
  }

  return a.graph().record(kind, {a, b}, std::move(out),
      [m, k, n, tb](const Eigen::VectorXd& g, const auto& pv, const auto& pg) {
        Eigen::Map<const RowMatrix> gm(g.data(), m, n);
        const auto am = pv[0]->as_matrix(m, k);
        const auto bm = pv[1]->as_matrix(pv[1]->shape[0], pv[1]->shape[1]);
        if (pg[0]) {
          Eigen::Map<RowMatrix> da(pg[0]->data(), m, k);
          if (tb) da.noalias() += gm * bm; else da.noalias() += gm * bm.transpose();
        }
        if (pg[1]) {
          if (tb) {
            Eigen::Map<RowMatrix> db(pg[1]->data(), n, k);
            db.noalias() += gm.transpose() * am;
          } else {
            Eigen::Map<RowMatrix> db(pg[1]->data(), k, n);
            db.noalias() += am.transpose() * gm;
          }
        }
      });
}

Var conv1d(Var x, Var w, Conv1dOptions opt) {
  constexpr OpKind kind = OpKind::Conv1d;
  require_rank3(kind, x);
  require(w.shape().size() == 3, kind, "weight must be (out, in, kernel), got " + shape_str(w.shape()));
  require(opt.stride >= 1 && opt.padding >= 0, kind, "invalid stride/padding");
  const Index batch = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
  const Index cout = w.shape()[0], kernel = w.shape()[2];
  require(w.shape()[1] == cin, kind,
          "input channels " + shape_str(x.shape()) + " do not match weight " + shape_str(w.shape()));
  const Index span = len + 2 * opt.padding - kernel;
  require(span >= 0, kind, "kernel longer than padded input " + shape_str(x.shape()));
  const Index out_len = span / opt.stride + 1;

  Tensor out = Tensor::zeros({batch, cout, out_len});
  const auto wm = w.value().as_matrix(cout, cin * kernel);
  for (Index b = 0; b < batch; ++b) {
    const RowMatrix col = im2col(x.value().values.data() + b * cin * len, cin, len, kernel, out_len, opt);
    Eigen::Map<RowMatrix> ob(out.values.data() + b * cout * out_len, cout, out_len);
    ob.noalias() = wm * col;
  }

  return x.graph().record(kind, {x, w}, std::move(out),
      [=](const Eigen::VectorXd& g, const auto& pv, const auto& pg) {
        const auto wm = pv[1]->as_matrix(cout, cin * kernel);
        for (Index b = 0; b < batch; ++b) {
          Eigen::Map<const RowMatrix> gb(g.data() + b * cout * out_len, cout, out_len);
          if (pg[1]) {
            const RowMatrix col = im2col(pv[0]->values.data() + b * cin * len, cin, len, kernel, out_len, opt);
            Eigen::Map<RowMatrix> dw(pg[1]->data(), cout, cin * kernel);
            dw.noalias() += gb * col.transpose();
          }
          if (pg[0]) {
            const RowMatrix dcol = wm.transpose() * gb;
            col2im_add(dcol, pg[0]->data() + b * cin * len, cin, len, kernel, out_len, opt);
          }
        }
      });
}

Var upsample_nearest(Var x) {
  constexpr OpKind kind = OpKind::UpsampleNearest;
  require_rank3(kind, x);
  const Index rows = x.shape()[0] * x.shape()[1], len = x.shape()[2];
  Tensor out = Tensor::zeros({x.shape()[0], x.shape()[1], 2 * len});
  const Eigen::VectorXd& in = x.value().values;
  for (Index i = 0; i < rows * len; ++i) {
    out.values[2 * i] = in[i];
    out.values[2 * i + 1] = in[i];
  }
  return x.graph().record(kind, {x}, std::move(out),
      [rows, len](const Eigen::VectorXd& g, const auto&, const auto& pg) {
        Eigen::VectorXd& dx = *pg[0];
        for (Index i = 0; i < rows * len; ++i) dx[i] += g[2 * i] + g[2 * i + 1];
      });
}

Var max_pool1d(Var x) {
  constexpr OpKind kind = OpKind::MaxPool1d;
  require_rank3(kind, x);
  const Index len = x.shape()[2];
  require(len % 2 == 0, kind, "length must be even, got " + shape_str(x.shape()));
  const Index half = x.value().size() / 2;
  Tensor out = Tensor::zeros({x.shape()[0], x.shape()[1], len / 2});
  const Eigen::VectorXd& in = x.value().values;
  for (Index i = 0; i < half; ++i) out.values[i] = std::max(in[2 * i], in[2 * i + 1]);
  return x.graph().record(kind, {x}, std::move(out),
      [half](const Eigen::VectorXd& g, const auto& pv, const auto& pg) {
        const Eigen::VectorXd& in = pv[0]->values;
        Eigen::VectorXd& dx = *pg[0];
        // Ties route the gradient to the first element.
        for (Index i = 0; i < half; ++i) dx[in[2 * i] >= in[2 * i + 1] ? 2 * i : 2 * i + 1] += g[i];
      });
}

Var relu(Var x) {
  Tensor out(x.shape(), x.value().values.cwiseMax(0.0));
  return x.graph().record(OpKind::Relu, {x}, std::move(out),
      [](const Eigen::VectorXd& g, const auto& pv, const auto& pg) {
        // Subgradient at exactly 0 is 0.
        *pg[0] += (pv[0]->values.array() > 0.0).select(g, 0.0);
      });
}

Var add(Var a, Var b) {
  require_same_shape(OpKind::Add, a, b);
  Tensor out(a.shape(), a.value().values + b.value().values);
  return a.graph().record(OpKind::Add, {a, b}, std::move(out),
      [](const Eigen::VectorXd& g, const auto&, const auto& pg) {
        if (pg[0]) *pg[0] += g;
        if (pg[1]) *pg[1] += g;
      });
}

Var sub(Var a, Var b) {
  require_same_shape(OpKind::Sub, a, b);
  Tensor out(a.shape(), a.value().values - b.value().values);
  return a.graph().record(OpKind::Sub, {a, b}, std::move(out),
      [](const Eigen::VectorXd& g, const auto&, const auto& pg) {
        if (pg[0]) *pg[0] += g;
        if (pg[1]) *pg[1] -= g;
      });
}

Var mul(Var a, Var b) {
  require_same_shape(OpKind::Mul, a, b);
  Tensor out(a.shape(), a.value().values.cwiseProduct(b.value().values));
  return a.graph().record(OpKind::Mul, {a, b}, std::move(out),
      [](const Eigen::VectorXd& g, const auto& pv, const auto& pg) {
        if (pg[0]) *pg[0] += g.cwiseProduct(pv[1]->values);
        if (pg[1]) *pg[1] += g.cwiseProduct(pv[0]->values);
      });
}

Var scalar_mul(double s, Var x) {
  Tensor out(x.shape(), s * x.value().values);
  return x.graph().record(OpKind::ScalarMul, {x}, std::move(out),
      [s](const Eigen::VectorXd& g, const auto&, const auto& pg) { *pg[0] += s * g; });
}

Var sum(Var x) {
  Tensor out = Tensor::scalar(x.value().values.sum());
  return x.graph().record(OpKind::Sum, {x}, std::move(out),
      [](const Eigen::VectorXd& g, const auto&, const auto& pg) { pg[0]->array() += g[0]; });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  Tensor out = Tensor::scalar(x.value().values.sum() / n);
  return x.graph().record(OpKind::Mean, {x}, std::move(out),
      [n](const Eigen::VectorXd& g, const auto&, const auto& pg) { pg[0]->array() += g[0] / n; });
}

Var square(Var x) {
  Tensor out(x.shape(), x.value().values.array().square().matrix());
  return x.graph().record(OpKind::Square, {x}, std::move(out),
      [](const Eigen::VectorXd& g, const auto& pv, const auto& pg) {
        *pg[0] += 2.0 * g.cwiseProduct(pv[0]->values);
      });
}

Var concat_channels(const std::vector<Var>& parts) {
  constexpr OpKind kind = OpKind::Concat;
  require(!parts.empty(), kind, "no inputs");
  for (const Var& p : parts) require_rank3(kind, p);
  const Index batch = parts[0].shape()[0], len = parts[0].shape()[2];
  std::vector<Index> channels;
  Index total = 0;
  for (const Var& p : parts) {
    require(p.shape()[0] == batch && p.shape()[2] == len, kind,
            "shape mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    channels.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Tensor out = Tensor::zeros({batch, total, len});
  for (Index b = 0; b < batch; ++b) {
    Index offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const Index n = channels[i] * len;
      out.values.segment((b * total + offset) * len, n) = parts[i].value().values.segment(b * n, n);
      offset += channels[i];
    }
  }
  return parts[0].graph().record(kind, parts, std::move(out),
      [batch, total, len, channels](const Eigen::VectorXd& g, const auto&, const auto& pg) {
        for (Index b = 0; b < batch; ++b) {
          Index offset = 0;
          for (std::size_t i = 0; i < channels.size(); ++i) {
            const Index n = channels[i] * len;
            if (pg[i]) pg[i]->segment(b * n, n) += g.segment((b * total + offset) * len, n);
            offset += channels[i];
          }
        }
      });
}

Var slice_channels(Var x, Index begin, Index count) {
  constexpr OpKind kind = OpKind::Slice;
  require_rank3(kind, x);
  const Index batch = x.shape()[0], chans = x.shape()[1], len = x.shape()[2];
  require(begin >= 0 && count >= 1 && begin + count <= chans, kind,
          "channel range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
              ") out of bounds for " + shape_str(x.shape()));
  Tensor out = Tensor::zeros({batch, count, len});
  for (Index b = 0; b < batch; ++b) {
    out.values.segment(b * count * len, count * len) =
        x.value().values.segment((b * chans + begin) * len, count * len);
  }
  return x.graph().record(kind, {x}, std::move(out),
      [=](const Eigen::VectorXd& g, const auto&, const auto& pg) {
        for (Index b = 0; b < batch; ++b) {
          pg[0]->segment((b * chans + begin) * len, count * len) += g.segment(b * count * len, count * len);
        }
      });
}

Var reshape(Var x, Shape shape) {
  require(shape_size(shape) == x.value().size(), OpKind::Reshape,
          "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor out(std::move(shape), x.value().values);
  return x.graph().record(OpKind::Reshape, {x}, std::move(out),
      [](const Eigen::VectorXd& g, const auto&, const auto& pg) { *pg[0] += g; });
}

namespace {

// Copies the leading min(from, to) samples of every (batch, channel) row.
Var resize_length(OpKind kind, Var x, Index length) {
  require_rank3(kind, x);
  require(length >= 1, kind, "target length must be positive");
  const Index rows = x.shape()[0] * x.shape()[1], from = x.shape()[2];
  const Index keep = std::min(from, length);
  Tensor out = Tensor::zeros({x.shape()[0], x.shape()[1], length});
  for (Index r = 0; r < rows; ++r) out.values.segment(r * length, keep) = x.value().values.segment(r * from, keep);
  return x.graph().record(kind, {x}, std::move(out),
      [rows, from, length, keep](const Eigen::VectorXd& g, const auto&, const auto& pg) {
        for (Index r = 0; r < rows; ++r) pg[0]->segment(r * from, keep) += g.segment(r * length, keep);
      });
}

}  // namespace

Var pad_length(Var x, Index length) {
  require_rank3(OpKind::Pad, x);
  require(length >= x.shape()[2], OpKind::Pad, "cannot pad " + shape_str(x.shape()) + " to shorter length");
  return resize_length(OpKind::Pad, x, length);
}

Var crop_length(Var x, Index length) {
  require_rank3(OpKind::Crop, x);
  require(length <= x.shape()[2], OpKind::Crop, "cannot crop " + shape_str(x.shape()) + " to longer length");
  return resize_length(OpKind::Crop, x, length);
}

Var clip(Var x, double mu) {
  const auto in = x.value().values.array();
  Tensor out(x.shape(), (in.abs() >= mu).select(mu * in.sign(), in).matrix());
  return x.graph().record(OpKind::Clip, {x}, std::move(out),
      [mu](const Eigen::VectorXd& g, const auto& pv, const auto& pg) {
        *pg[0] += (pv[0]->values.array().abs() < mu).select(g, 0.0);
      });
}

// ---- ParamStore ----------------------------------------------------------------

void ParamStore::insert(const std::string& name, Tensor t) {
  if (!entries_.emplace(name, std::move(t)).second) {
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  }
  entries_.at(name).requires_grad = true;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

Index ParamStore::parameter_count() const {
  Index n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (auto ia = a.entries_.begin(), ib = b.entries_.begin(); ia != a.entries_.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape != ib->second.shape) return false;
    if (std::memcmp(ia->second.values.data(), ib->second.values.data(),
                    sizeof(double) * static_cast<std::size_t>(ia->second.size())) != 0) {
      return false;
    }
  }
  return true;
}

void zero_grads(ParamStore& params) {
  for (auto& [name, t] : params) t.zero_grad();
}

}  // namespace declip
