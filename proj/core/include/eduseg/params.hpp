#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "eduseg/autodiff.hpp"

namespace eduseg {

// Named view of one model tensor. Slots are positions in a name-sorted list.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;
  bool trainable = true;
};

template <typename T>
struct ParamView {
  std::string name;
  const Tensor<T>* tensor = nullptr;
  bool trainable = true;
};

// Maps model tensors onto graph leaves: trainable tensors become parameter
// nodes (one per graph) keyed by slot, everything else becomes a constant.
template <typename T>
class ParamBinder {
 public:
  ParamBinder(Graph<T>& graph, const std::vector<ParamView<T>>& refs) : graph_(graph) {
    for (std::size_t slot = 0; slot < refs.size(); ++slot) {
      slots_.emplace(refs[slot].tensor, Entry{slot, refs[slot].trainable});
    }
  }

  Graph<T>& graph() { return graph_; }

  Var<T> operator()(const Tensor<T>& t) {
    if (auto it = cache_.find(&t); it != cache_.end()) return it->second;
    Var<T> v;
    auto it = slots_.find(&t);
    if (it != slots_.end() && it->second.trainable) {
      v = graph_.param(t, it->second.slot);
    } else {
      v = graph_.constant(t);
    }
    cache_.emplace(&t, v);
    return v;
  }

 private:
  struct Entry {
    ParamSlot slot;
    bool trainable;
  };
  Graph<T>& graph_;
  std::unordered_map<const Tensor<T>*, Entry> slots_;
  std::unordered_map<const Tensor<T>*, Var<T>> cache_;
};

}  // namespace eduseg
