#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "eduseg/corpus.hpp"
#include "eduseg/model.hpp"

namespace eduseg {

struct SegMetrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 1.0;
  double recall = 1.0;
  double f1 = 1.0;

  // Ratios from counts. A zero denominator yields 1 when the metric's own
  // error count is zero; F1 is 0 whenever P + R is 0.
  static SegMetrics from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
  SegMetrics& operator+=(const SegMetrics& other);

  std::string to_json() const;
  // "P 0.7500  R 0.6000  F1 0.6667  (tp 3 fp 1 fn 2)"
  std::string summary() const;
};

// Boundary positions {t : labels[t] == 1}, never including position 0.
std::set<std::size_t> extract_boundaries(std::span<const int> labels);

SegMetrics prf1(const std::set<std::size_t>& gold, const std::set<std::size_t>& pred);

// Micro-averaged metrics: counts pooled over sentences before the ratios.
SegMetrics score_corpus(std::span<const Sentence> gold, std::span<const std::vector<int>> predicted);

template <typename T>
SegMetrics evaluate_corpus(const SegmenterParams<T>& params, const Vocab& vocab,
                           std::span<const Sentence> sentences, const ContextualReps* reps,
                           std::size_t batch_size = 32, std::size_t workers = 1);

}  // namespace eduseg
