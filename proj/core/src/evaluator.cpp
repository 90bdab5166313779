#include "eduseg/evaluator.hpp"

#include <cstdio>

#include <json.hpp>

namespace eduseg {

namespace {

double ratio(std::size_t hits, std::size_t errors) {
  const std::size_t denom = hits + errors;
  if (denom == 0) return 1.0;
  return static_cast<double>(hits) / static_cast<double>(denom);
}

}  // namespace

SegMetrics SegMetrics::from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  SegMetrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.precision = ratio(tp, fp);
  m.recall = ratio(tp, fn);
  const double s = m.precision + m.recall;
  m.f1 = s > 0.0 ? 2.0 * m.precision * m.recall / s : 0.0;
  return m;
}

SegMetrics& SegMetrics::operator+=(const SegMetrics& other) {
  *this = from_counts(tp + other.tp, fp + other.fp, fn + other.fn);
  return *this;
}

std::string SegMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["tp"] = tp;
  j["fp"] = fp;
  j["fn"] = fn;
  return j.dump();
}

std::string SegMetrics::summary() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "P %.4f  R %.4f  F1 %.4f  (tp %zu fp %zu fn %zu)", precision, recall,
                f1, tp, fp, fn);
  return buf;
}

std::set<std::size_t> extract_boundaries(std::span<const int> labels) {
  std::set<std::size_t> out;
  for (std::size_t t = 1; t < labels.size(); ++t) {
    if (labels[t] == 1) out.insert(t);
  }
  return out;
}

SegMetrics prf1(const std::set<std::size_t>& gold, const std::set<std::size_t>& pred) {
  std::size_t tp = 0;
  for (std::size_t p : pred) tp += gold.count(p);
  return SegMetrics::from_counts(tp, pred.size() - tp, gold.size() - tp);
}

SegMetrics score_corpus(std::span<const Sentence> gold, std::span<const std::vector<int>> predicted) {
  if (gold.size() != predicted.size()) {
    throw ContractError("scoring " + std::to_string(predicted.size()) + " predictions against " +
                        std::to_string(gold.size()) + " sentences");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predicted[i].size() != gold[i].size()) {
      throw ContractError("sentence " + std::to_string(i) + ": prediction length mismatch");
    }
    const SegMetrics m = prf1(extract_boundaries(gold[i].labels), extract_boundaries(predicted[i]));
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
  }
  return SegMetrics::from_counts(tp, fp, fn);
}

template <typename T>
SegMetrics evaluate_corpus(const SegmenterParams<T>& params, const Vocab& vocab,
                           std::span<const Sentence> sentences, const ContextualReps* reps,
                           std::size_t batch_size, std::size_t workers) {
  if (reps) check_alignment(*reps, sentences);
  const auto predicted = decode_corpus(params, vocab, sentences, reps, batch_size, workers);
  return score_corpus(sentences, predicted);
}

template SegMetrics evaluate_corpus<float>(const SegmenterParams<float>&, const Vocab&,
                                           std::span<const Sentence>, const ContextualReps*,
                                           std::size_t, std::size_t);
template SegMetrics evaluate_corpus<double>(const SegmenterParams<double>&, const Vocab&,
                                            std::span<const Sentence>, const ContextualReps*,
                                            std::size_t, std::size_t);

}  // namespace eduseg
