#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "eduseg/tensor.hpp"

namespace eduseg {

template <typename T>
class Graph;

// Index of a trainable parameter; gradients are keyed by it.
using ParamSlot = std::size_t;

// Handle to a value recorded on a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Gradient map keyed by parameter slot.
template <typename T>
class Gradients {
 public:
  using Map = std::map<ParamSlot, Tensor<T>>;

  bool contains(ParamSlot slot) const { return grads_.count(slot) != 0; }
  const Tensor<T>& at(ParamSlot slot) const;
  Tensor<T>& at(ParamSlot slot);
  void accumulate(ParamSlot slot, const Tensor<T>& g);
  // Adds every entry of `other` (fixed slot order).
  void merge(const Gradients& other);
  void scale(T factor);
  std::size_t size() const { return grads_.size(); }

  typename Map::iterator begin() { return grads_.begin(); }
  typename Map::iterator end() { return grads_.end(); }
  typename Map::const_iterator begin() const { return grads_.begin(); }
  typename Map::const_iterator end() const { return grads_.end(); }

 private:
  Map grads_;
};

// Extension point for fused operations that carry their own derivative
// (the CRF likelihood, windowed attention).
template <typename T>
class CustomOp {
 public:
  virtual ~CustomOp() = default;
  virtual std::string_view name() const = 0;
  virtual Tensor<T> forward(std::span<const Tensor<T>* const> inputs) const = 0;
  // grad_inputs[i] is null when input i does not need a gradient; otherwise
  // it is zero-initialized with the input's shape and must be accumulated.
  virtual void backward(std::span<const Tensor<T>* const> inputs, const Tensor<T>& output,
                        const Tensor<T>& grad_output,
                        std::span<Tensor<T>* const> grad_inputs) const = 0;
};

enum class OpKind : std::uint8_t {
  kConstant,
  kParam,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kAddRow,
  kScale,
  kScaleBy,
  kSigmoid,
  kTanh,
  kConcatCols,
  kSliceCols,
  kConcatRows,
  kSliceRows,
  kGatherRows,
  kSelectRows,
  kSoftmax,
  kMulConst,
  kSum,
  kElement,
  kCustom,
};

std::string_view op_name(OpKind kind);

// Recorded operation. Inputs always precede the node (topological order).
template <typename T>
struct Node {
  OpKind kind = OpKind::kConstant;
  std::vector<std::uint32_t> inputs;
  Tensor<T> value;
  bool needs_grad = false;

  const Tensor<T>* external = nullptr;  // kParam
  ParamSlot slot = 0;                   // kParam
  std::size_t begin = 0;                // slices, kElement
  std::size_t end = 0;
  T scalar = T(0);                      // kScale
  std::vector<std::size_t> index;       // kGatherRows
  std::vector<std::uint8_t> mask;       // kSelectRows (per row), kSoftmax (per element)
  Tensor<T> constant;                   // kMulConst
  std::shared_ptr<const CustomOp<T>> custom;
};

// Tape of operations for one forward computation. Confined to one thread.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  // `value` must outlive the graph; it is read, never copied.
  Var<T> param(const Tensor<T>& value, ParamSlot slot);

  const Tensor<T>& value(std::uint32_t id) const;
  const Node<T>& node(std::uint32_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse-mode pass from a scalar loss. Every parameter reachable from the
  // loss gets an entry (zero if its contribution vanishes).
  Gradients<T> backward(Var<T> loss) const;

  // Recomputes every node from the recorded inputs, in order.
  std::vector<Tensor<T>> replay() const;
  // True when replay() is bit-identical to the recorded values.
  bool replay_matches() const;

  Var<T> record(Node<T> node);

 private:
  std::vector<Node<T>> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

namespace ad {

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
// a[m×n] + bias[n] broadcast over rows.
template <typename T> Var<T> add_row(Var<T> a, Var<T> bias);
template <typename T> Var<T> scale(Var<T> a, T factor);
// a * s where s holds a single value that is itself differentiable.
template <typename T> Var<T> scale_by(Var<T> a, Var<T> s);
template <typename T> Var<T> sigmoid(Var<T> a);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> std::vector<Var<T>> split_cols(Var<T> a, std::span<const std::size_t> widths);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> Var<T> gather_rows(Var<T> a, std::vector<std::size_t> rows);
// Row r of the result is a's row when take_a[r] is set, else b's row.
template <typename T> Var<T> select_rows(Var<T> a, Var<T> b, std::vector<std::uint8_t> take_a);
// Row-wise softmax; mask (same size as a, nonzero = keep) is optional.
template <typename T> Var<T> softmax(Var<T> a, std::vector<std::uint8_t> mask = {});
// Elementwise product with a constant tensor (dropout masks).
template <typename T> Var<T> mul_const(Var<T> a, Tensor<T> factors);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> element(Var<T> a, std::size_t index);
template <typename T>
Var<T> custom(std::shared_ptr<const CustomOp<T>> op, std::span<const Var<T>> inputs);

}  // namespace ad

// Stand-alone masked softmax over a vector, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::span<const std::uint8_t> mask = {});

}  // namespace eduseg
