#include "eduseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace eduseg {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParam: return "param";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kScale: return "scale";
    case OpKind::kScaleBy: return "scale_by";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kSelectRows: return "select_rows";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kMulConst: return "mul_const";
    case OpKind::kSum: return "sum";
    case OpKind::kElement: return "element";
    case OpKind::kCustom: return "custom";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Gradients

template <typename T>
const Tensor<T>& Gradients<T>::at(ParamSlot slot) const {
  auto it = grads_.find(slot);
  if (it == grads_.end()) throw ContractError("no gradient for parameter slot " + std::to_string(slot));
  return it->second;
}

template <typename T>
Tensor<T>& Gradients<T>::at(ParamSlot slot) {
  auto it = grads_.find(slot);
  if (it == grads_.end()) throw ContractError("no gradient for parameter slot " + std::to_string(slot));
  return it->second;
}

template <typename T>
void Gradients<T>::accumulate(ParamSlot slot, const Tensor<T>& g) {
  auto it = grads_.find(slot);
  if (it == grads_.end()) {
    grads_.emplace(slot, g);
    return;
  }
  if (it->second.size() != g.size()) {
    throw ShapeError("gradient shape mismatch for slot " + std::to_string(slot) + ": " +
                     shape_string(it->second.shape()) + " vs " + shape_string(g.shape()));
  }
  auto dst = it->second.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void Gradients<T>::merge(const Gradients& other) {
  for (const auto& [slot, g] : other.grads_) accumulate(slot, g);
}

template <typename T>
void Gradients<T>::scale(T factor) {
  for (auto& [slot, g] : grads_) {
    for (auto& v : g.values()) v *= factor;
  }
}

// ---------------------------------------------------------------------------
// Forward rules

namespace {

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    const T z = std::exp(-x);
    return T(1) / (T(1) + z);
  }
  const T z = std::exp(x);
  return z / (T(1) + z);
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
void softmax_rows(const T* x, const std::uint8_t* mask, std::size_t rows, std::size_t cols, T* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    const std::uint8_t* mr = mask ? mask + r * cols : nullptr;
    T* yr = out + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mr && !mr[c]) continue;
      any = true;
      mx = std::max(mx, xr[c]);
    }
    if (!any) throw ContractError("softmax: invalid mask, every position in row " +
                                  std::to_string(r) + " is masked");
    T total = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      if (mr && !mr[c]) {
        yr[c] = T(0);
        continue;
      }
      yr[c] = std::exp(xr[c] - mx);
      total += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= total;
  }
}

template <typename T>
Tensor<T> compute(const Node<T>& node, const std::vector<const Tensor<T>*>& in) {
  switch (node.kind) {
    case OpKind::kConstant:
      return node.value;
    case OpKind::kParam:
      return *node.external;
    case OpKind::kMatMul: {
      const auto& a = *in[0];
      const auto& b = *in[1];
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
      }
      Tensor<T> out(Shape{m, n});
      kernels::gemm(m, k, n, a.data(), b.data(), out.data(), false);
      return out;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const auto& a = *in[0];
      const auto& b = *in[1];
      require_same(a, b, op_name(node.kind));
      Tensor<T> out(a.shape());
      auto o = out.values();
      auto av = a.values();
      auto bv = b.values();
      if (node.kind == OpKind::kAdd) {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
      } else if (node.kind == OpKind::kSub) {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
      } else {
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
      }
      return out;
    }
    case OpKind::kAddRow: {
      const auto& a = *in[0];
      const auto& bias = *in[1];
      if (bias.size() != a.cols()) {
        throw ShapeError("add_row: bias " + shape_string(bias.shape()) + " vs input " +
                         shape_string(a.shape()));
      }
      Tensor<T> out = a;
      const std::size_t n = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        T* o = out.data() + r * n;
        for (std::size_t c = 0; c < n; ++c) o[c] += bias[c];
      }
      return out;
    }
    case OpKind::kScale: {
      Tensor<T> out = *in[0];
      for (auto& v : out.values()) v *= node.scalar;
      return out;
    }
    case OpKind::kScaleBy: {
      if (in[1]->size() != 1) {
        throw ShapeError("scale_by: factor must hold one value, got " + shape_string(in[1]->shape()));
      }
      const T s = (*in[1])[0];
      Tensor<T> out = *in[0];
      for (auto& v : out.values()) v *= s;
      return out;
    }
    case OpKind::kSigmoid: {
      Tensor<T> out = *in[0];
      for (auto& v : out.values()) v = sigmoid_scalar(v);
      return out;
    }
    case OpKind::kTanh: {
      Tensor<T> out = *in[0];
      for (auto& v : out.values()) v = std::tanh(v);
      return out;
    }
    case OpKind::kConcatCols: {
      const std::size_t rows = in[0]->rows();
      std::size_t total = 0;
      for (auto* t : in) {
        if (t->rows() != rows) {
          throw ShapeError("concat_cols: row counts differ, " + shape_string(in[0]->shape()) +
                           " vs " + shape_string(t->shape()));
        }
        total += t->cols();
      }
      Tensor<T> out(Shape{rows, total});
      std::size_t offset = 0;
      for (auto* t : in) {
        const std::size_t w = t->cols();
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(t->data() + r * w, w, out.data() + r * total + offset);
        }
        offset += w;
      }
      return out;
    }
    case OpKind::kSliceCols: {
      const auto& a = *in[0];
      if (node.begin > node.end || node.end > a.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(node.begin) + "," +
                         std::to_string(node.end) + ") outside " + shape_string(a.shape()));
      }
      const std::size_t w = node.end - node.begin;
      Tensor<T> out(Shape{a.rows(), w});
      for (std::size_t r = 0; r < a.rows(); ++r) {
        std::copy_n(a.data() + r * a.cols() + node.begin, w, out.data() + r * w);
      }
      return out;
    }
    case OpKind::kConcatRows: {
      const std::size_t cols = in[0]->cols();
      std::size_t rows = 0;
      for (auto* t : in) {
        if (t->cols() != cols) {
          throw ShapeError("concat_rows: column counts differ, " + shape_string(in[0]->shape()) +
                           " vs " + shape_string(t->shape()));
        }
        rows += t->rows();
      }
      Tensor<T> out(Shape{rows, cols});
      T* dst = out.data();
      for (auto* t : in) dst = std::copy(t->data(), t->data() + t->size(), dst);
      return out;
    }
    case OpKind::kSliceRows: {
      const auto& a = *in[0];
      if (node.begin > node.end || node.end > a.rows()) {
        throw ShapeError("slice_rows: range [" + std::to_string(node.begin) + "," +
                         std::to_string(node.end) + ") outside " + shape_string(a.shape()));
      }
      const std::size_t c = a.cols();
      Tensor<T> out(Shape{node.end - node.begin, c});
      std::copy(a.data() + node.begin * c, a.data() + node.end * c, out.data());
      return out;
    }
    case OpKind::kGatherRows: {
      const auto& a = *in[0];
      const std::size_t c = a.cols();
      Tensor<T> out(Shape{node.index.size(), c});
      for (std::size_t i = 0; i < node.index.size(); ++i) {
        if (node.index[i] >= a.rows()) {
          throw ShapeError("gather_rows: row " + std::to_string(node.index[i]) + " outside " +
                           shape_string(a.shape()));
        }
        std::copy_n(a.data() + node.index[i] * c, c, out.data() + i * c);
      }
      return out;
    }
    case OpKind::kSelectRows: {
      const auto& a = *in[0];
      const auto& b = *in[1];
      require_same(a, b, "select_rows");
      if (node.mask.size() != a.rows()) {
        throw ShapeError("select_rows: mask length " + std::to_string(node.mask.size()) +
                         " vs " + shape_string(a.shape()));
      }
      Tensor<T> out(a.shape());
      const std::size_t c = a.cols();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const T* src = (node.mask[r] ? a.data() : b.data()) + r * c;
        std::copy_n(src, c, out.data() + r * c);
      }
      return out;
    }
    case OpKind::kSoftmax: {
      const auto& a = *in[0];
      if (!node.mask.empty() && node.mask.size() != a.size()) {
        throw ShapeError("softmax: mask length " + std::to_string(node.mask.size()) + " vs " +
                         shape_string(a.shape()));
      }
      Tensor<T> out(a.shape());
      softmax_rows(a.data(), node.mask.empty() ? nullptr : node.mask.data(), a.rows(), a.cols(),
                   out.data());
      return out;
    }
    case OpKind::kMulConst: {
      const auto& a = *in[0];
      require_same(a, node.constant, "mul_const");
      Tensor<T> out(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * node.constant[i];
      return out;
    }
    case OpKind::kSum: {
      T total = T(0);
      for (auto v : in[0]->values()) total += v;
      return Tensor<T>::scalar(total);
    }
    case OpKind::kElement: {
      if (node.begin >= in[0]->size()) {
        throw ShapeError("element: index " + std::to_string(node.begin) + " outside " +
                         shape_string(in[0]->shape()));
      }
      return Tensor<T>::scalar((*in[0])[node.begin]);
    }
    case OpKind::kCustom:
      return node.custom->forward(in);
  }
  throw ContractError("unknown op");
}

// Adds the contribution of node's output gradient `g` into `grads` (entries
// allocated lazily for inputs that need gradients).
template <typename T>
void backprop(const Node<T>& node, const std::vector<const Tensor<T>*>& in, const Tensor<T>& g,
              const std::vector<Tensor<T>*>& dx) {
  switch (node.kind) {
    case OpKind::kConstant:
    case OpKind::kParam:
      return;
    case OpKind::kMatMul: {
      const auto& a = *in[0];
      const auto& b = *in[1];
      const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
      if (dx[0]) kernels::gemm_nt_acc(m, n, k, g.data(), b.data(), dx[0]->data());
      if (dx[1]) kernels::gemm_tn_acc(m, k, n, a.data(), g.data(), dx[1]->data());
      return;
    }
    case OpKind::kAdd:
      for (int s = 0; s < 2; ++s) {
        if (!dx[s]) continue;
        for (std::size_t i = 0; i < g.size(); ++i) (*dx[s])[i] += g[i];
      }
      return;
    case OpKind::kSub:
      if (dx[0]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[0])[i] += g[i];
      if (dx[1]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[1])[i] -= g[i];
      return;
    case OpKind::kMul:
      if (dx[0]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[0])[i] += g[i] * (*in[1])[i];
      if (dx[1]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[1])[i] += g[i] * (*in[0])[i];
      return;
    case OpKind::kAddRow: {
      if (dx[0]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[0])[i] += g[i];
      if (dx[1]) {
        const std::size_t n = g.cols();
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < n; ++c) (*dx[1])[c] += g[r * n + c];
        }
      }
      return;
    }
    case OpKind::kScale:
      if (dx[0]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[0])[i] += node.scalar * g[i];
      return;
    case OpKind::kScaleBy: {
      const T s = (*in[1])[0];
      if (dx[0]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[0])[i] += s * g[i];
      if (dx[1]) {
        T acc = T(0);
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (*in[0])[i];
        (*dx[1])[0] += acc;
      }
      return;
    }
    case OpKind::kSigmoid:
      if (dx[0]) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T y = node.value[i];
          (*dx[0])[i] += g[i] * y * (T(1) - y);
        }
      }
      return;
    case OpKind::kTanh:
      if (dx[0]) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T y = node.value[i];
          (*dx[0])[i] += g[i] * (T(1) - y * y);
        }
      }
      return;
    case OpKind::kConcatCols: {
      const std::size_t rows = g.rows(), total = g.cols();
      std::size_t offset = 0;
      for (std::size_t s = 0; s < in.size(); ++s) {
        const std::size_t w = in[s]->cols();
        if (dx[s]) {
          for (std::size_t r = 0; r < rows; ++r) {
            const T* src = g.data() + r * total + offset;
            T* dst = dx[s]->data() + r * w;
            for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
          }
        }
        offset += w;
      }
      return;
    }
    case OpKind::kSliceCols: {
      if (!dx[0]) return;
      const std::size_t w = node.end - node.begin, full = in[0]->cols();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        T* dst = dx[0]->data() + r * full + node.begin;
        const T* src = g.data() + r * w;
        for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
      }
      return;
    }
    case OpKind::kConcatRows: {
      std::size_t offset = 0;
      for (std::size_t s = 0; s < in.size(); ++s) {
        const std::size_t n = in[s]->size();
        if (dx[s]) {
          for (std::size_t i = 0; i < n; ++i) (*dx[s])[i] += g[offset + i];
        }
        offset += n;
      }
      return;
    }
    case OpKind::kSliceRows: {
      if (!dx[0]) return;
      const std::size_t base = node.begin * in[0]->cols();
      for (std::size_t i = 0; i < g.size(); ++i) (*dx[0])[base + i] += g[i];
      return;
    }
    case OpKind::kGatherRows: {
      if (!dx[0]) return;
      const std::size_t c = in[0]->cols();
      for (std::size_t i = 0; i < node.index.size(); ++i) {
        T* dst = dx[0]->data() + node.index[i] * c;
        const T* src = g.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
      }
      return;
    }
    case OpKind::kSelectRows: {
      const std::size_t c = g.cols();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        Tensor<T>* target = node.mask[r] ? dx[0] : dx[1];
        if (!target) continue;
        T* dst = target->data() + r * c;
        const T* src = g.data() + r * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
      }
      return;
    }
    case OpKind::kSoftmax: {
      if (!dx[0]) return;
      const std::size_t c = g.cols();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const T* y = node.value.data() + r * c;
        const T* gr = g.data() + r * c;
        T dot = T(0);
        for (std::size_t j = 0; j < c; ++j) dot += gr[j] * y[j];
        T* dst = dx[0]->data() + r * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += y[j] * (gr[j] - dot);
      }
      return;
    }
    case OpKind::kMulConst:
      if (dx[0]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[0])[i] += g[i] * node.constant[i];
      return;
    case OpKind::kSum:
      if (dx[0]) for (auto& v : dx[0]->values()) v += g[0];
      return;
    case OpKind::kElement:
      if (dx[0]) (*dx[0])[node.begin] += g[0];
      return;
    case OpKind::kCustom: {
      node.custom->backward(in, node.value, g, dx);
      return;
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node<T> n;
  n.kind = OpKind::kConstant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Graph<T>::param(const Tensor<T>& value, ParamSlot slot) {
  Node<T> n;
  n.kind = OpKind::kParam;
  n.external = &value;
  n.slot = slot;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
const Tensor<T>& Graph<T>::value(std::uint32_t id) const {
  const Node<T>& n = nodes_.at(id);
  return n.kind == OpKind::kParam ? *n.external : n.value;
}

template <typename T>
Var<T> Graph<T>::record(Node<T> node) {
  std::vector<const Tensor<T>*> in;
  in.reserve(node.inputs.size());
  node.needs_grad = false;
  for (auto id : node.inputs) {
    if (id >= nodes_.size()) throw ContractError("graph input refers to a later node");
    in.push_back(&value(id));
    node.needs_grad = node.needs_grad || nodes_[id].needs_grad;
  }
  node.value = compute(node, in);
  nodes_.push_back(std::move(node));
  return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
Gradients<T> Graph<T>::backward(Var<T> loss) const {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  const Tensor<T>& lv = value(loss.id);
  if (lv.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_string(lv.shape()));
  }
  std::vector<std::optional<Tensor<T>>> grads(loss.id + 1);
  grads[loss.id] = Tensor<T>(lv.shape(), std::vector<T>{T(1)});

  Gradients<T> out;
  std::vector<const Tensor<T>*> in;
  std::vector<Tensor<T>*> dx;
  for (std::int64_t id = loss.id; id >= 0; --id) {
    auto& g = grads[id];
    const Node<T>& n = nodes_[id];
    if (!g || !n.needs_grad) {
      g.reset();
      continue;
    }
    if (n.kind == OpKind::kParam) {
      out.accumulate(n.slot, *g);
      g.reset();
      continue;
    }
    in.clear();
    dx.clear();
    for (auto input : n.inputs) {
      in.push_back(&value(input));
      if (nodes_[input].needs_grad) {
        auto& slot = grads[input];
        if (!slot) slot = Tensor<T>(value(input).shape());
        dx.push_back(&*slot);
      } else {
        dx.push_back(nullptr);
      }
    }
    backprop(n, in, *g, dx);
    g.reset();
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> Graph<T>::replay() const {
  std::vector<Tensor<T>> values;
  values.reserve(nodes_.size());
  std::vector<const Tensor<T>*> in;
  for (const auto& n : nodes_) {
    in.clear();
    for (auto id : n.inputs) in.push_back(&values[id]);
    values.push_back(compute(n, in));
  }
  return values;
}

template <typename T>
bool Graph<T>::replay_matches() const {
  const auto values = replay();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!(values[i] == value(static_cast<std::uint32_t>(i)))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Op constructors

namespace ad {
namespace {

template <typename T>
Graph<T>& graph_of(Var<T> a) {
  if (!a.graph) throw ContractError("operation on an unbound variable");
  return *a.graph;
}

template <typename T>
Graph<T>& graph_of(Var<T> a, Var<T> b) {
  if (a.graph != b.graph) throw ContractError("operands recorded on different graphs");
  return graph_of(a);
}

template <typename T>
Var<T> unary(OpKind kind, Var<T> a) {
  Node<T> n;
  n.kind = kind;
  n.inputs = {a.id};
  return graph_of(a).record(std::move(n));
}

template <typename T>
Var<T> binary(OpKind kind, Var<T> a, Var<T> b) {
  Node<T> n;
  n.kind = kind;
  n.inputs = {a.id, b.id};
  return graph_of(a, b).record(std::move(n));
}

template <typename T>
Var<T> nary(OpKind kind, std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError(std::string(op_name(kind)) + ": no inputs");
  Node<T> n;
  n.kind = kind;
  for (const auto& p : parts) {
    graph_of(parts.front(), p);
    n.inputs.push_back(p.id);
  }
  return graph_of(parts.front()).record(std::move(n));
}

}  // namespace

template <typename T> Var<T> matmul(Var<T> a, Var<T> b) { return binary(OpKind::kMatMul, a, b); }
template <typename T> Var<T> add(Var<T> a, Var<T> b) { return binary(OpKind::kAdd, a, b); }
template <typename T> Var<T> sub(Var<T> a, Var<T> b) { return binary(OpKind::kSub, a, b); }
template <typename T> Var<T> mul(Var<T> a, Var<T> b) { return binary(OpKind::kMul, a, b); }
template <typename T> Var<T> add_row(Var<T> a, Var<T> bias) { return binary(OpKind::kAddRow, a, bias); }
template <typename T> Var<T> scale_by(Var<T> a, Var<T> s) { return binary(OpKind::kScaleBy, a, s); }
template <typename T> Var<T> sigmoid(Var<T> a) { return unary(OpKind::kSigmoid, a); }
template <typename T> Var<T> tanh(Var<T> a) { return unary(OpKind::kTanh, a); }
template <typename T> Var<T> sum(Var<T> a) { return unary(OpKind::kSum, a); }

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Node<T> n;
  n.kind = OpKind::kScale;
  n.inputs = {a.id};
  n.scalar = factor;
  return graph_of(a).record(std::move(n));
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  return nary(OpKind::kConcatCols, parts);
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  return nary(OpKind::kConcatRows, parts);
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  Node<T> n;
  n.kind = OpKind::kSliceCols;
  n.inputs = {a.id};
  n.begin = begin;
  n.end = end;
  return graph_of(a).record(std::move(n));
}

template <typename T>
std::vector<Var<T>> split_cols(Var<T> a, std::span<const std::size_t> widths) {
  std::vector<Var<T>> out;
  std::size_t offset = 0;
  for (auto w : widths) {
    out.push_back(slice_cols(a, offset, offset + w));
    offset += w;
  }
  if (offset != a.value().cols()) {
    throw ShapeError("split_cols: widths sum to " + std::to_string(offset) + " but input is " +
                     shape_string(a.shape()));
  }
  return out;
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  Node<T> n;
  n.kind = OpKind::kSliceRows;
  n.inputs = {a.id};
  n.begin = begin;
  n.end = end;
  return graph_of(a).record(std::move(n));
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> rows) {
  Node<T> n;
  n.kind = OpKind::kGatherRows;
  n.inputs = {a.id};
  n.index = std::move(rows);
  return graph_of(a).record(std::move(n));
}

template <typename T>
Var<T> select_rows(Var<T> a, Var<T> b, std::vector<std::uint8_t> take_a) {
  Node<T> n;
  n.kind = OpKind::kSelectRows;
  n.inputs = {a.id, b.id};
  n.mask = std::move(take_a);
  return graph_of(a, b).record(std::move(n));
}

template <typename T>
Var<T> softmax(Var<T> a, std::vector<std::uint8_t> mask) {
  Node<T> n;
  n.kind = OpKind::kSoftmax;
  n.inputs = {a.id};
  n.mask = std::move(mask);
  return graph_of(a).record(std::move(n));
}

template <typename T>
Var<T> mul_const(Var<T> a, Tensor<T> factors) {
  Node<T> n;
  n.kind = OpKind::kMulConst;
  n.inputs = {a.id};
  n.constant = std::move(factors);
  return graph_of(a).record(std::move(n));
}

template <typename T>
Var<T> element(Var<T> a, std::size_t index) {
  Node<T> n;
  n.kind = OpKind::kElement;
  n.inputs = {a.id};
  n.begin = index;
  return graph_of(a).record(std::move(n));
}

template <typename T>
Var<T> custom(std::shared_ptr<const CustomOp<T>> op, std::span<const Var<T>> inputs) {
  if (inputs.empty()) throw ContractError("custom op without inputs");
  Node<T> n;
  n.kind = OpKind::kCustom;
  n.custom = std::move(op);
  for (const auto& v : inputs) {
    graph_of(inputs.front(), v);
    n.inputs.push_back(v.id);
  }
  return graph_of(inputs.front()).record(std::move(n));
}

}  // namespace ad

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::span<const std::uint8_t> mask) {
  if (!mask.empty() && mask.size() != x.size()) {
    throw ShapeError("softmax: mask length " + std::to_string(mask.size()) + " vs " +
                     shape_string(x.shape()));
  }
  Tensor<T> out(x.shape());
  softmax_rows(x.data(), mask.empty() ? nullptr : mask.data(), x.rows(), x.cols(), out.data());
  return out;
}

#define EDUSEG_INSTANTIATE(T)                                                              \
  template class Gradients<T>;                                                             \
  template class Graph<T>;                                                                 \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::span<const std::uint8_t>);          \
  namespace ad {                                                                           \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                               \
  template Var<T> add<T>(Var<T>, Var<T>);                                                  \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                  \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                  \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                              \
  template Var<T> scale<T>(Var<T>, T);                                                     \
  template Var<T> scale_by<T>(Var<T>, Var<T>);                                             \
  template Var<T> sigmoid<T>(Var<T>);                                                      \
  template Var<T> tanh<T>(Var<T>);                                                         \
  template Var<T> concat_cols<T>(std::span<const Var<T>>);                                 \
  template Var<T> slice_cols<T>(Var<T>, std::size_t, std::size_t);                         \
  template std::vector<Var<T>> split_cols<T>(Var<T>, std::span<const std::size_t>);        \
  template Var<T> concat_rows<T>(std::span<const Var<T>>);                                 \
  template Var<T> slice_rows<T>(Var<T>, std::size_t, std::size_t);                         \
  template Var<T> gather_rows<T>(Var<T>, std::vector<std::size_t>);                        \
  template Var<T> select_rows<T>(Var<T>, Var<T>, std::vector<std::uint8_t>);               \
  template Var<T> softmax<T>(Var<T>, std::vector<std::uint8_t>);                           \
  template Var<T> mul_const<T>(Var<T>, Tensor<T>);                                         \
  template Var<T> sum<T>(Var<T>);                                                          \
  template Var<T> element<T>(Var<T>, std::size_t);                                         \
  template Var<T> custom<T>(std::shared_ptr<const CustomOp<T>>, std::span<const Var<T>>);  \
  }

EDUSEG_INSTANTIATE(float)
EDUSEG_INSTANTIATE(double)

#undef EDUSEG_INSTANTIATE

}  // namespace eduseg
