#pragma once

#include <random>
#include <utility>
#include <vector>

#include "eduseg/params.hpp"

namespace eduseg {

// Label 0: token continues the current unit; label 1: token starts a new one.
inline constexpr std::size_t kNumLabels = 2;

// Linear-chain CRF head. A label sequence y scores
//   start[y_1] + sum_t emit[t][y_t] + sum_t trans[y_{t-1}][y_t] + end[y_T]
// with emit = h * proj + bias.
template <typename T>
struct CrfParams {
  Tensor<T> proj;   // 2H x |Y|
  Tensor<T> bias = Tensor<T>(Shape{kNumLabels});
  Tensor<T> trans = Tensor<T>(Shape{kNumLabels, kNumLabels});
  Tensor<T> start = Tensor<T>(Shape{kNumLabels});
  Tensor<T> end = Tensor<T>(Shape{kNumLabels});

  void append_refs(std::vector<ParamRef<T>>& out);
};

// Transition/start/end scores start at zero.
template <typename T>
CrfParams<T> init_crf(std::size_t input_dim, std::mt19937_64& rng);

// Per-position label scores of one (unpadded) sentence, T x |Y|.
template <typename T>
struct LatticeScores {
  Tensor<T> emissions;

  std::size_t length() const { return emissions.rows(); }
  T at(std::size_t t, std::size_t y) const { return emissions.at(t, y); }
};

template <typename T>
LatticeScores<T> emission_scores(const Tensor<T>& hidden, const CrfParams<T>& params);

template <typename T>
T sequence_score(const LatticeScores<T>& scores, const CrfParams<T>& params,
                 std::span<const int> labels);

// log of the sum over all |Y|^T sequences, by the forward recursion.
template <typename T>
T log_partition(const LatticeScores<T>& scores, const CrfParams<T>& params);

template <typename T>
T nll(const LatticeScores<T>& scores, const CrfParams<T>& params, std::span<const int> gold);

template <typename T>
struct ViterbiResult {
  std::vector<int> labels;
  T score;
};

// Exact argmax; among equal-scoring paths the one preferring label 0 at the
// earliest differing position wins.
template <typename T>
ViterbiResult<T> viterbi(const LatticeScores<T>& scores, const CrfParams<T>& params);

template <typename T>
struct CrfMarginals {
  Tensor<T> unary;     // T x |Y|: p(y_t = y)
  Tensor<T> pairwise;  // |Y| x |Y|: sum_t p(y_{t-1} = a, y_t = b)
  T log_z;
};

// Forward-backward posteriors.
template <typename T>
CrfMarginals<T> marginals(const LatticeScores<T>& scores, const CrfParams<T>& params);

// Exhaustive p(y | h) for every sequence, listed in lexicographic order of y.
// Test oracle; guarded to T <= 16.
template <typename T>
std::vector<std::pair<std::vector<int>, T>> brute_force_distribution(const LatticeScores<T>& scores,
                                                                     const CrfParams<T>& params);

inline constexpr std::size_t kBruteForceMaxLength = 16;

// Graph form of nll over a T x |Y| emission variable.
template <typename T>
Var<T> crf_nll(ParamBinder<T>& bind, Var<T> emissions, const CrfParams<T>& params,
               std::vector<int> gold);

}  // namespace eduseg
