#include "advmix/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace advmix::ad {

namespace {

constexpr double kNormalizeEps = 1e-12;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

using Node = Graph::Node;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                              to_string(b));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const char* expected) {
  throw std::invalid_argument(std::string(op) + ": shape " + to_string(a) + ", expected " +
                              expected);
}

Graph& same_graph(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.valid() || !b.valid()) {
    throw std::invalid_argument(std::string(op) + ": invalid tensor");
  }
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
  }
  return a.graph();
}

Graph& graph_of(const Tensor& a, const char* op) {
  if (!a.valid()) throw std::invalid_argument(std::string(op) + ": invalid tensor");
  return a.graph();
}

Node make_node(OpKind op, Shape shape) {
  Node n;
  n.op = op;
  n.count = numel(shape);
  n.shape = std::move(shape);
  n.owned.resize(n.count);
  return n;
}

void accumulate(Node& target, std::span<const double> g) {
  if (!target.requires_grad) return;
  if (target.grad.empty()) target.grad.assign(target.count, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) target.grad[i] += g[i];
}

std::vector<double>& grad_buffer(Node& target) {
  if (target.grad.empty()) target.grad.assign(target.count, 0.0);
  return target.grad;
}

bool is_matrix(const Shape& s) { return s.size() == 2; }

enum class Broadcast { kNone, kLeft, kRight };

Broadcast binary_shape(const char* op, const Node& a, const Node& b, Shape& out) {
  if (a.shape == b.shape) {
    out = a.shape;
    return Broadcast::kNone;
  }
  if (b.count == 1) {
    out = a.shape;
    return Broadcast::kRight;
  }
  if (a.count == 1) {
    out = b.shape;
    return Broadcast::kLeft;
  }
  shape_error(op, a.shape, b.shape);
}

Tensor binary(OpKind kind, const char* name, const Tensor& ta, const Tensor& tb) {
  Graph& g = same_graph(ta, tb, name);
  const Node& a = g.node(ta);
  const Node& b = g.node(tb);
  Shape shape;
  const Broadcast bc = binary_shape(name, a, b, shape);
  Node n = make_node(kind, shape);
  const double* pa = a.data();
  const double* pb = b.data();
  const std::size_t count = n.count;
  auto at_a = [&](std::size_t i) { return bc == Broadcast::kLeft ? pa[0] : pa[i]; };
  auto at_b = [&](std::size_t i) { return bc == Broadcast::kRight ? pb[0] : pb[i]; };
  for (std::size_t i = 0; i < count; ++i) {
    switch (kind) {
      case OpKind::kAdd: n.owned[i] = at_a(i) + at_b(i); break;
      case OpKind::kSub: n.owned[i] = at_a(i) - at_b(i); break;
      default: n.owned[i] = at_a(i) * at_b(i); break;
    }
  }
  n.in0 = ta.id();
  n.in1 = tb.id();
  n.requires_grad = a.requires_grad || b.requires_grad;
  return g.record(std::move(n));
}

Tensor unary(OpKind kind, const char* name, const Tensor& ta, double scalar = 0.0) {
  Graph& g = graph_of(ta, name);
  const Node& a = g.node(ta);
  Node n = make_node(kind, a.shape);
  const double* pa = a.data();
  for (std::size_t i = 0; i < n.count; ++i) {
    const double x = pa[i];
    double y = 0.0;
    switch (kind) {
      case OpKind::kAddScalar: y = x + scalar; break;
      case OpKind::kMulScalar: y = x * scalar; break;
      case OpKind::kRelu: y = x > 0.0 ? x : 0.0; break;
      case OpKind::kSigmoid:
        y = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        break;
      case OpKind::kClamp01: y = std::clamp(x, 0.0, 1.0); break;
      case OpKind::kSquare: y = x * x; break;
      default: throw std::logic_error("unary: unsupported op");
    }
    n.owned[i] = y;
  }
  n.in0 = ta.id();
  n.scalar = scalar;
  n.requires_grad = a.requires_grad;
  return g.record(std::move(n));
}

std::pair<std::size_t, std::size_t> rows_cols(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  return {s[0], s[1]};
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const Shape& Tensor::shape() const { return graph_->node(*this).shape; }
std::size_t Tensor::size() const { return graph_->node(*this).count; }

std::span<const double> Tensor::data() const {
  const auto& n = graph_->node(*this);
  return {n.data(), n.count};
}

std::span<const double> Tensor::grad() const {
  const auto& n = graph_->node(*this);
  return {n.grad.data(), n.grad.size()};
}

bool Tensor::requires_grad() const { return graph_->node(*this).requires_grad; }

double Tensor::item() const {
  const auto& n = graph_->node(*this);
  if (n.count != 1) throw std::invalid_argument("item: tensor has " + to_string(n.shape));
  return n.data()[0];
}

Graph& Tensor::graph() const {
  if (graph_ == nullptr) throw std::logic_error("tensor is not attached to a graph");
  return *graph_;
}

// ---------------------------------------------------------------------------

void Graph::check_open(const char* what) const {
  if (differentiated_) {
    throw std::logic_error(std::string(what) +
                           ": graph already differentiated; build a new graph");
  }
}

Tensor Graph::record(Node node) {
  check_open("record");
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

const Graph::Node& Graph::node(const Tensor& t) const {
  if (&t.graph() != this) throw std::invalid_argument("tensor belongs to another graph");
  return nodes_.at(t.id());
}

Tensor Graph::variable(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("variable: shape " + to_string(shape) + " holds " +
                                std::to_string(numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  }
  Node n;
  n.op = OpKind::kLeaf;
  n.count = values.size();
  n.shape = std::move(shape);
  n.owned = std::move(values);
  n.requires_grad = requires_grad;
  return record(std::move(n));
}

Tensor Graph::constant(Shape shape, std::vector<double> values) {
  return variable(std::move(shape), std::move(values), false);
}

Tensor Graph::constant_view(Shape shape, std::span<const double> values) {
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("constant_view: shape " + to_string(shape) + " vs " +
                                std::to_string(values.size()) + " values");
  }
  Node n;
  n.op = OpKind::kLeaf;
  n.count = values.size();
  n.shape = std::move(shape);
  n.view = values.data();
  return record(std::move(n));
}

void Graph::backward(const Tensor& loss) {
  if (differentiated_) throw std::logic_error("backward: called twice on the same graph");
  const Node& l = node(loss);
  if (l.count != 1) throw std::invalid_argument("backward: loss must be a scalar, got " +
                                                to_string(l.shape));
  differentiated_ = true;
  if (!l.requires_grad) return;
  nodes_[loss.id()].grad.assign(1, 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.op == OpKind::kLeaf || !n.requires_grad || n.grad.empty()) continue;
    backward_node(id);
  }
}

void Graph::backward_node(std::size_t id) {
  Node& n = nodes_[id];
  const std::vector<double>& g = n.grad;
  const double* out = n.data();
  Node* a = n.in0 != kNone ? &nodes_[n.in0] : nullptr;
  Node* b = n.in1 != kNone ? &nodes_[n.in1] : nullptr;

  switch (n.op) {
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const double sign = n.op == OpKind::kSub ? -1.0 : 1.0;
      for (int side = 0; side < 2; ++side) {
        Node& target = side == 0 ? *a : *b;
        const Node& other = side == 0 ? *b : *a;
        if (!target.requires_grad) continue;
        auto& tg = grad_buffer(target);
        const bool reduce = target.count == 1 && n.count != 1;
        const double* po = other.data();
        const bool other_scalar = other.count == 1 && n.count != 1;
        for (std::size_t i = 0; i < n.count; ++i) {
          double d = g[i];
          if (n.op == OpKind::kMul) d *= other_scalar ? po[0] : po[i];
          if (side == 1) d *= sign;
          tg[reduce ? 0 : i] += d;
        }
      }
      break;
    }
    case OpKind::kAddScalar: accumulate(*a, g); break;
    case OpKind::kMulScalar: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      for (std::size_t i = 0; i < n.count; ++i) ag[i] += g[i] * n.scalar;
      break;
    }
    case OpKind::kMatMul: {
      const std::size_t m = a->shape[0], k = a->shape[1], cols = b->shape[1];
      ConstMap gm(g.data(), m, cols);
      if (a->requires_grad) {
        auto& ag = grad_buffer(*a);
        MutMap(ag.data(), m, k).noalias() += gm * ConstMap(b->data(), k, cols).transpose();
      }
      if (b->requires_grad) {
        auto& bg = grad_buffer(*b);
        MutMap(bg.data(), k, cols).noalias() += ConstMap(a->data(), m, k).transpose() * gm;
      }
      break;
    }
    case OpKind::kAddBias: {
      accumulate(*a, g);
      if (b->requires_grad) {
        auto& bg = grad_buffer(*b);
        const std::size_t cols = b->count, rows = n.count / cols;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) bg[c] += g[r * cols + c];
      }
      break;
    }
    case OpKind::kRelu: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      const double* pa = a->data();
      for (std::size_t i = 0; i < n.count; ++i)
        if (pa[i] > 0.0) ag[i] += g[i];
      break;
    }
    case OpKind::kSigmoid: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      for (std::size_t i = 0; i < n.count; ++i) ag[i] += g[i] * out[i] * (1.0 - out[i]);
      break;
    }
    case OpKind::kClamp01: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      const double* pa = a->data();
      for (std::size_t i = 0; i < n.count; ++i)
        if (pa[i] >= 0.0 && pa[i] <= 1.0) ag[i] += g[i];
      break;
    }
    case OpKind::kSquare: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      const double* pa = a->data();
      for (std::size_t i = 0; i < n.count; ++i) ag[i] += 2.0 * pa[i] * g[i];
      break;
    }
    case OpKind::kMean:
    case OpKind::kSum: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      const double d = n.op == OpKind::kMean ? g[0] / static_cast<double>(a->count) : g[0];
      for (auto& v : ag) v += d;
      break;
    }
    case OpKind::kSumRows: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      const auto [rows, cols] = rows_cols(a->shape);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ag[r * cols + c] += g[r];
      break;
    }
    case OpKind::kLogSoftmax: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      const auto [rows, cols] = rows_cols(n.shape);
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          ag[i] += g[i] - std::exp(out[i]) * gsum;
        }
      }
      break;
    }
    case OpKind::kCrossEntropy:
    case OpKind::kSoftCrossEntropy: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      const std::size_t rows = a->shape[0], cols = a->shape[1];
      const double scale = g[0] * n.scalar;  // scalar holds the reduction factor
      const std::vector<double>& softmax = n.aux;
      for (std::size_t r = 0; r < rows; ++r) {
        if (n.op == OpKind::kCrossEntropy) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const double target = static_cast<int>(c) == n.labels[r] ? 1.0 : 0.0;
            ag[i] += scale * (softmax[i] - target);
          }
        } else {
          const double* t = softmax.data() + rows * cols + r * cols;
          double tsum = 0.0;
          for (std::size_t c = 0; c < cols; ++c) tsum += t[c];
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            ag[i] += scale * (softmax[i] * tsum - t[c]);
          }
        }
      }
      break;
    }
    case OpKind::kColorize: {
      const std::size_t rows = a->shape[0], pixels = a->shape[1], channels = b->shape[1];
      const double* ps = a->data();
      const double* pc = b->data();
      if (a->requires_grad) {
        auto& ag = grad_buffer(*a);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t p = 0; p < pixels; ++p) {
            double d = 0.0;
            const double* gp = g.data() + (r * pixels + p) * channels;
            for (std::size_t c = 0; c < channels; ++c) d += gp[c] * pc[r * channels + c];
            ag[r * pixels + p] += d;
          }
      }
      if (b->requires_grad) {
        auto& bg = grad_buffer(*b);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t p = 0; p < pixels; ++p) {
            const double s = ps[r * pixels + p];
            const double* gp = g.data() + (r * pixels + p) * channels;
            for (std::size_t c = 0; c < channels; ++c) bg[r * channels + c] += gp[c] * s;
          }
      }
      break;
    }
    case OpKind::kConcatCols: {
      const std::size_t rows = n.shape[0], cols = n.shape[1];
      const std::size_t left = a->shape[1], right = b->shape[1];
      if (a->requires_grad) {
        auto& ag = grad_buffer(*a);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < left; ++c) ag[r * left + c] += g[r * cols + c];
      }
      if (b->requires_grad) {
        auto& bg = grad_buffer(*b);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < right; ++c) bg[r * right + c] += g[r * cols + left + c];
      }
      break;
    }
    case OpKind::kChannelMean: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      const std::size_t out = numel(n.shape), channels = numel(a->shape) / out;
      const double w = 1.0 / static_cast<double>(channels);
      for (std::size_t i = 0; i < out; ++i)
        for (std::size_t c = 0; c < channels; ++c) ag[i * channels + c] += g[i] * w;
      break;
    }
    case OpKind::kNormalizeRows: {
      if (!a->requires_grad) break;
      auto& ag = grad_buffer(*a);
      const auto [rows, cols] = rows_cols(n.shape);
      const double* pa = a->data();
      const double* py = n.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double norm2 = kNormalizeEps, gy = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          norm2 += pa[r * cols + c] * pa[r * cols + c];
          gy += g[r * cols + c] * py[r * cols + c];
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t c = 0; c < cols; ++c) ag[r * cols + c] += (g[r * cols + c] - py[r * cols + c] * gy) * inv;
      }
      break;
    }
    case OpKind::kLeaf: break;
  }
}

// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::kAdd, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::kSub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::kMul, "mul", a, b); }
Tensor add(const Tensor& a, double s) { return unary(OpKind::kAddScalar, "add", a, s); }
Tensor sub(const Tensor& a, double s) { return unary(OpKind::kAddScalar, "sub", a, -s); }
Tensor mul(const Tensor& a, double s) { return unary(OpKind::kMulScalar, "mul", a, s); }
Tensor relu(const Tensor& a) { return unary(OpKind::kRelu, "relu", a); }
Tensor sigmoid(const Tensor& a) { return unary(OpKind::kSigmoid, "sigmoid", a); }
Tensor clamp01(const Tensor& a) { return unary(OpKind::kClamp01, "clamp01", a); }
Tensor square(const Tensor& a) { return unary(OpKind::kSquare, "square", a); }

Tensor matmul(const Tensor& ta, const Tensor& tb) {
  Graph& g = same_graph(ta, tb, "matmul");
  const Node& a = g.node(ta);
  const Node& b = g.node(tb);
  if (!is_matrix(a.shape) || !is_matrix(b.shape) || a.shape[1] != b.shape[0]) {
    shape_error("matmul", a.shape, b.shape);
  }
  const std::size_t m = a.shape[0], k = a.shape[1], cols = b.shape[1];
  Node n = make_node(OpKind::kMatMul, {m, cols});
  MutMap(n.owned.data(), m, cols).noalias() = ConstMap(a.data(), m, k) * ConstMap(b.data(), k, cols);
  n.in0 = ta.id();
  n.in1 = tb.id();
  n.requires_grad = a.requires_grad || b.requires_grad;
  return g.record(std::move(n));
}

Tensor add_bias(const Tensor& ta, const Tensor& tb) {
  Graph& g = same_graph(ta, tb, "add_bias");
  const Node& a = g.node(ta);
  const Node& b = g.node(tb);
  if (!is_matrix(a.shape) || b.count != a.shape[1]) shape_error("add_bias", a.shape, b.shape);
  Node n = make_node(OpKind::kAddBias, a.shape);
  const std::size_t rows = a.shape[0], cols = a.shape[1];
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) n.owned[r * cols + c] = pa[r * cols + c] + pb[c];
  n.in0 = ta.id();
  n.in1 = tb.id();
  n.requires_grad = a.requires_grad || b.requires_grad;
  return g.record(std::move(n));
}

Tensor mean(const Tensor& ta) {
  Graph& g = graph_of(ta, "mean");
  const Node& a = g.node(ta);
  if (a.count == 0) throw std::invalid_argument("mean: empty tensor");
  Node n = make_node(OpKind::kMean, {});
  double s = 0.0;
  const double* pa = a.data();
  for (std::size_t i = 0; i < a.count; ++i) s += pa[i];
  n.owned[0] = s / static_cast<double>(a.count);
  n.in0 = ta.id();
  n.requires_grad = a.requires_grad;
  return g.record(std::move(n));
}

Tensor sum(const Tensor& ta) {
  Graph& g = graph_of(ta, "sum");
  const Node& a = g.node(ta);
  Node n = make_node(OpKind::kSum, {});
  double s = 0.0;
  const double* pa = a.data();
  for (std::size_t i = 0; i < a.count; ++i) s += pa[i];
  n.owned[0] = s;
  n.in0 = ta.id();
  n.requires_grad = a.requires_grad;
  return g.record(std::move(n));
}

Tensor sum_rows(const Tensor& ta) {
  Graph& g = graph_of(ta, "sum_rows");
  const Node& a = g.node(ta);
  if (a.shape.empty() || a.shape.size() > 2) shape_error("sum_rows", a.shape, "1-D or 2-D");
  const auto [rows, cols] = rows_cols(a.shape);
  Node n = make_node(OpKind::kSumRows, {rows, 1});
  const double* pa = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += pa[r * cols + c];
    n.owned[r] = s;
  }
  n.in0 = ta.id();
  n.requires_grad = a.requires_grad;
  return g.record(std::move(n));
}

namespace {

// Row-wise log-softmax of a [rows, cols] block into `out`.
void log_softmax_rows(const double* in, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in + r * cols;
    double mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(x[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] - lse;
  }
}

}  // namespace

Tensor log_softmax(const Tensor& ta) {
  Graph& g = graph_of(ta, "log_softmax");
  const Node& a = g.node(ta);
  if (a.shape.empty() || a.shape.size() > 2 || a.count == 0) {
    shape_error("log_softmax", a.shape, "1-D or 2-D");
  }
  const auto [rows, cols] = rows_cols(a.shape);
  Node n = make_node(OpKind::kLogSoftmax, a.shape);
  log_softmax_rows(a.data(), n.owned.data(), rows, cols);
  n.in0 = ta.id();
  n.requires_grad = a.requires_grad;
  return g.record(std::move(n));
}

Tensor cross_entropy(const Tensor& tl, std::span<const int> labels, Reduction reduction) {
  Graph& g = graph_of(tl, "cross_entropy");
  const Node& a = g.node(tl);
  if (!is_matrix(a.shape) || a.shape[0] != labels.size() || a.shape[1] == 0) {
    throw std::invalid_argument("cross_entropy: logits " + to_string(a.shape) + " with " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = a.shape[0], cols = a.shape[1];
  Node n = make_node(OpKind::kCrossEntropy, {});
  std::vector<double> ls(rows * cols);
  log_softmax_rows(a.data(), ls.data(), rows, cols);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= cols) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " out of range [0," + std::to_string(cols) + ")");
    }
    total -= ls[r * cols + static_cast<std::size_t>(y)];
  }
  const double factor = reduction == Reduction::kMean ? 1.0 / static_cast<double>(rows) : 1.0;
  n.owned[0] = reduction == Reduction::kMean ? total / static_cast<double>(rows) : total;
  for (auto& v : ls) v = std::exp(v);
  n.aux = std::move(ls);
  n.labels.assign(labels.begin(), labels.end());
  n.scalar = factor;
  n.in0 = tl.id();
  n.requires_grad = a.requires_grad;
  return g.record(std::move(n));
}

Tensor soft_cross_entropy(const Tensor& tl, std::span<const double> targets,
                          Reduction reduction) {
  Graph& g = graph_of(tl, "soft_cross_entropy");
  const Node& a = g.node(tl);
  if (!is_matrix(a.shape) || targets.size() != a.count || a.count == 0) {
    throw std::invalid_argument("soft_cross_entropy: logits " + to_string(a.shape) + " with " +
                                std::to_string(targets.size()) + " target values");
  }
  const std::size_t rows = a.shape[0], cols = a.shape[1];
  Node n = make_node(OpKind::kSoftCrossEntropy, {});
  std::vector<double> aux(2 * rows * cols);
  log_softmax_rows(a.data(), aux.data(), rows, cols);
  double total = 0.0;
  for (std::size_t i = 0; i < rows * cols; ++i) total -= targets[i] * aux[i];
  for (std::size_t i = 0; i < rows * cols; ++i) aux[i] = std::exp(aux[i]);
  std::copy(targets.begin(), targets.end(), aux.begin() + static_cast<std::ptrdiff_t>(rows * cols));
  const double factor = reduction == Reduction::kMean ? 1.0 / static_cast<double>(rows) : 1.0;
  n.owned[0] = reduction == Reduction::kMean ? total / static_cast<double>(rows) : total;
  n.aux = std::move(aux);
  n.scalar = factor;
  n.in0 = tl.id();
  n.requires_grad = a.requires_grad;
  return g.record(std::move(n));
}

Tensor colorize(const Tensor& ts, const Tensor& tc) {
  Graph& g = same_graph(ts, tc, "colorize");
  const Node& s = g.node(ts);
  const Node& c = g.node(tc);
  if (!is_matrix(s.shape) || !is_matrix(c.shape) || s.shape[0] != c.shape[0]) {
    shape_error("colorize", s.shape, c.shape);
  }
  const std::size_t rows = s.shape[0], pixels = s.shape[1], channels = c.shape[1];
  Node n = make_node(OpKind::kColorize, {rows, pixels * channels});
  const double* ps = s.data();
  const double* pc = c.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t ch = 0; ch < channels; ++ch)
        n.owned[(r * pixels + p) * channels + ch] = ps[r * pixels + p] * pc[r * channels + ch];
  n.in0 = ts.id();
  n.in1 = tc.id();
  n.requires_grad = s.requires_grad || c.requires_grad;
  return g.record(std::move(n));
}

Tensor concat_cols(const Tensor& ta, const Tensor& tb) {
  Graph& g = same_graph(ta, tb, "concat_cols");
  const Node& a = g.node(ta);
  const Node& b = g.node(tb);
  if (!is_matrix(a.shape) || !is_matrix(b.shape) || a.shape[0] != b.shape[0]) {
    shape_error("concat_cols", a.shape, b.shape);
  }
  const std::size_t rows = a.shape[0], left = a.shape[1], right = b.shape[1];
  Node n = make_node(OpKind::kConcatCols, {rows, left + right});
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(pa + r * left, pa + (r + 1) * left, n.owned.data() + r * (left + right));
    std::copy(pb + r * right, pb + (r + 1) * right, n.owned.data() + r * (left + right) + left);
  }
  n.in0 = ta.id();
  n.in1 = tb.id();
  n.requires_grad = a.requires_grad || b.requires_grad;
  return g.record(std::move(n));
}

Tensor channel_mean(const Tensor& ta, std::size_t channels) {
  Graph& g = graph_of(ta, "channel_mean");
  const Node& a = g.node(ta);
  if (!is_matrix(a.shape) || channels == 0 || a.shape[1] % channels != 0) {
    shape_error("channel_mean", a.shape, ("[B, P*" + std::to_string(channels) + "]").c_str());
  }
  const std::size_t rows = a.shape[0], pixels = a.shape[1] / channels;
  Node n = make_node(OpKind::kChannelMean, {rows, pixels});
  const double* pa = a.data();
  for (std::size_t i = 0; i < rows * pixels; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < channels; ++c) s += pa[i * channels + c];
    n.owned[i] = s / static_cast<double>(channels);
  }
  n.in0 = ta.id();
  n.requires_grad = a.requires_grad;
  return g.record(std::move(n));
}

Tensor normalize_rows(const Tensor& ta) {
  Graph& g = graph_of(ta, "normalize_rows");
  const Node& a = g.node(ta);
  if (!is_matrix(a.shape)) shape_error("normalize_rows", a.shape, "2-D");
  const auto [rows, cols] = rows_cols(a.shape);
  Node n = make_node(OpKind::kNormalizeRows, {rows, cols});
  const double* pa = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double norm2 = kNormalizeEps;
    for (std::size_t c = 0; c < cols; ++c) norm2 += pa[r * cols + c] * pa[r * cols + c];
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t c = 0; c < cols; ++c) n.owned[r * cols + c] = pa[r * cols + c] * inv;
  }
  n.in0 = ta.id();
  n.requires_grad = a.requires_grad;
  return g.record(std::move(n));
}

// ---------------------------------------------------------------------------

void adam_step(std::vector<Parameter>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr, const AdamOptions& options) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) +
                                " parameters but " + std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty() && state.step == 0) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].values.size(), 0.0);
      state.v[i].assign(params[i].values.size(), 0.0);
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = params[i].values.size();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw std::invalid_argument("adam_step: size mismatch for parameter '" + params[i].name +
                                  "' (" + std::to_string(n) + " values, " +
                                  std::to_string(grads[i].size()) + " grads, " +
                                  std::to_string(state.m[i].size()) + " moments)");
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].values;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = options.beta1 * m[j] + (1.0 - options.beta1) * g[j];
      v[j] = options.beta2 * v[j] + (1.0 - options.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + options.eps);
    }
  }
}

}  // namespace advmix::ad
