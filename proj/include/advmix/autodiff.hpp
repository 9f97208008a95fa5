#pragma once

// Minimal define-by-run reverse-mode differentiation over dense float64
// arrays. A Graph records every operation in insertion order; backward()
// walks that record in exact reverse order and may run once per graph.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace advmix::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> data() const;
  // Empty until backward() has run, or when the tensor does not require grad.
  std::span<const double> grad() const;
  bool requires_grad() const;
  double item() const;

  Graph& graph() const;
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Tensor(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

enum class Reduction { kMean, kSum };

enum class OpKind : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kAddScalar,
  kMulScalar,
  kMatMul,
  kAddBias,
  kRelu,
  kSigmoid,
  kClamp01,
  kMean,
  kSum,
  kSumRows,
  kSquare,
  kLogSoftmax,
  kCrossEntropy,
  kSoftCrossEntropy,
  kColorize,
  kConcatCols,
  kChannelMean,
  kNormalizeRows,
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf owning a copy of `values`.
  Tensor variable(Shape shape, std::vector<double> values, bool requires_grad = true);
  Tensor constant(Shape shape, std::vector<double> values);
  // Non-owning constant leaf. `values` must outlive the graph.
  Tensor constant_view(Shape shape, std::span<const double> values);

  // Accumulates d(loss)/d(node) into every node that requires grad.
  // Throws std::logic_error when called a second time.
  void backward(const Tensor& loss);

  bool differentiated() const { return differentiated_; }
  std::size_t size() const { return nodes_.size(); }
  OpKind op(std::size_t id) const { return nodes_.at(id).op; }

  // Internal recording interface used by the operation functions.
  struct Node {
    OpKind op = OpKind::kLeaf;
    Shape shape;
    std::vector<double> owned;
    const double* view = nullptr;
    std::size_t count = 0;
    std::vector<double> grad;
    bool requires_grad = false;
    std::size_t in0 = kNone;
    std::size_t in1 = kNone;
    double scalar = 0.0;
    std::vector<int> labels;
    std::vector<double> aux;

    const double* data() const { return view != nullptr ? view : owned.data(); }
  };
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  Tensor record(Node node);
  const Node& node(const Tensor& t) const;
  const Node& node(std::size_t id) const { return nodes_[id]; }
  Node& mutable_node(std::size_t id) { return nodes_[id]; }

 private:
  void check_open(const char* what) const;
  void backward_node(std::size_t id);

  std::vector<Node> nodes_;
  bool differentiated_ = false;
};

// Elementwise arithmetic. Shapes must be equal, or one side must hold a
// single element which is then broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, double s);
Tensor mul(const Tensor& a, double s);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
// [M,N] + [N] added to every row.
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Identity on [0,1], saturates outside. Gradient passes through inside the
// interval and is zero outside it.
Tensor clamp01(const Tensor& a);
Tensor square(const Tensor& a);

Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
// Reduces the last dimension: [B,N] -> [B,1].
Tensor sum_rows(const Tensor& a);

// Row-wise over the last dimension of a 1-D or 2-D tensor.
Tensor log_softmax(const Tensor& a);

// -log softmax(logits)[label], reduced over the batch.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels,
                     Reduction reduction = Reduction::kMean);
// -sum_c target[b,c] * log softmax(logits)[b,c], reduced over the batch.
// `targets` is a [B,C] row-major array, not differentiated.
Tensor soft_cross_entropy(const Tensor& logits, std::span<const double> targets,
                          Reduction reduction = Reduction::kMean);

// shape [B,P], color [B,C] -> [B,P*C] with out[b, p*C + c] = shape[b,p]*color[b,c]
// (pixel-major, channel-minor layout).
Tensor colorize(const Tensor& shape, const Tensor& color);
// [B,M] ++ [B,N] -> [B,M+N]
Tensor concat_cols(const Tensor& a, const Tensor& b);
// [B,P*C] -> [B,P], averaging the C channels of each pixel.
Tensor channel_mean(const Tensor& a, std::size_t channels);
// Each row divided by sqrt(|row|^2 + 1e-12).
Tensor normalize_rows(const Tensor& a);

// ---------------------------------------------------------------------------
// Parameters and Adam

struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

// One Adam update over every parameter. The state is sized on first use;
// any later size disagreement is an error.
void adam_step(std::vector<Parameter>& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr = 1e-3, const AdamOptions& options = {});

}  // namespace advmix::ad
