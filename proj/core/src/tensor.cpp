#include "eduseg/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace eduseg {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace kernels {

namespace {

constexpr std::size_t kRowBlock = 6;

template <typename T>
struct VecOf;
template <>
struct VecOf<float> {
  typedef float type __attribute__((vector_size(64)));
};
template <>
struct VecOf<double> {
  typedef double type __attribute__((vector_size(64)));
};
template <typename T>
using Vec = typename VecOf<T>::type;

template <typename T>
constexpr std::size_t kLanes = 64 / sizeof(T);

// R rows x NV vectors of output. Each element is summed over p in ascending
// order from its initial value, so a row's result never depends on how many
// rows are multiplied alongside it.
template <typename T, std::size_t R, std::size_t NV>
void tile(std::size_t k, std::size_t n, const T* a, const T* b, T* out) {
  using V = Vec<T>;
  constexpr std::size_t L = kLanes<T>;
  V acc[R][NV];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < NV; ++v) std::memcpy(&acc[r][v], out + r * n + v * L, sizeof(V));
  }
  for (std::size_t p = 0; p < k; ++p) {
    V bv[NV];
    for (std::size_t v = 0; v < NV; ++v) std::memcpy(&bv[v], b + p * n + v * L, sizeof(V));
    for (std::size_t r = 0; r < R; ++r) {
      const T av = a[r * k + p];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < NV; ++v) std::memcpy(out + r * n + v * L, &acc[r][v], sizeof(V));
  }
}

template <typename T, std::size_t NV>
void column_panel(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* out) {
  std::size_t i = 0;
  for (; i + kRowBlock <= m; i += kRowBlock) tile<T, kRowBlock, NV>(k, n, a + i * k, b, out + i * n);
  switch (m - i) {
    case 5: tile<T, 5, NV>(k, n, a + i * k, b, out + i * n); break;
    case 4: tile<T, 4, NV>(k, n, a + i * k, b, out + i * n); break;
    case 3: tile<T, 3, NV>(k, n, a + i * k, b, out + i * n); break;
    case 2: tile<T, 2, NV>(k, n, a + i * k, b, out + i * n); break;
    case 1: tile<T, 1, NV>(k, n, a + i * k, b, out + i * n); break;
    default: break;
  }
}

}  // namespace

template <typename T>
void gemm(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* out,
          bool accumulate) {
  if (!accumulate) std::fill(out, out + m * n, T(0));
  constexpr std::size_t L = kLanes<T>;
  std::size_t j = 0;
  for (; j + 2 * L <= n; j += 2 * L) column_panel<T, 2>(m, k, n, a, b + j, out + j);
  for (; j + L <= n; j += L) column_panel<T, 1>(m, k, n, a, b + j, out + j);
  for (; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      T acc = out[i * n + j];
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  }
}

template <typename T>
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const T* g, const T* b, T* out) {
  std::vector<T> bt(n * k);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < n; ++c) bt[c * k + r] = b[r * n + c];
  }
  gemm(m, n, k, g, bt.data(), out, true);
}

template <typename T>
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* g, T* out) {
  std::vector<T> at(k * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  }
  gemm(k, m, n, at.data(), g, out, true);
}

template void gemm<float>(std::size_t, std::size_t, std::size_t, const float*, const float*,
                          float*, bool);
template void gemm<double>(std::size_t, std::size_t, std::size_t, const double*, const double*,
                           double*, bool);
template void gemm_nt_acc<float>(std::size_t, std::size_t, std::size_t, const float*,
                                 const float*, float*);
template void gemm_nt_acc<double>(std::size_t, std::size_t, std::size_t, const double*,
                                  const double*, double*);
template void gemm_tn_acc<float>(std::size_t, std::size_t, std::size_t, const float*,
                                 const float*, float*);
template void gemm_tn_acc<double>(std::size_t, std::size_t, std::size_t, const double*,
                                  const double*, double*);

}  // namespace kernels
}  // namespace eduseg
