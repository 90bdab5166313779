#include <gtest/gtest.h>

#include "eduseg/model.hpp"
#include "fixtures.hpp"
#include "model_gradcheck.hpp"

namespace eduseg {
namespace {

struct Data {
  std::vector<Sentence> sentences;
  Vocab vocab;
  ContextualReps reps;

  Data(std::size_t count, std::size_t min_len, std::size_t max_len, std::uint64_t seed)
      : sentences(testing::random_sentences(count, min_len, max_len, seed)), vocab(Vocab::build(sentences)) {
    std::mt19937_64 rng(seed + 1);
    reps.dim = 5;
    for (const auto& s : sentences)
      reps.sentences.push_back(testing::random_tensor<float>(Shape{3, s.size(), 5}, rng, -1, 1));
  }
};

TEST(Model, FullModelGradientsMatchFiniteDifferences) {
  Data data(1, 4, 4, 3);
  auto params = testing::small_model<double>({}, data.vocab, 9);
  auto batch = make_batches(data.sentences, &data.reps, data.vocab, 1).at(0);
  auto errors = testing::model_gradient_errors(params, batch);
  ASSERT_EQ(errors.size(), 20u);
  for (const auto& e : errors) {
    EXPECT_LT(e.group_error, 1e-4) << e.name;
    EXPECT_LT(e.max_element_error, 1e-4) << e.name;
  }
}

TEST(Model, TrainableEmbeddingsGetGradients) {
  Data data(2, 3, 5, 4);
  testing::SmallModelSpec spec;
  spec.train_embeddings = true;
  spec.use_elmo = false;
  spec.window = 0;
  auto params = testing::small_model<double>(spec, data.vocab, 2);
  auto batch = make_batches(data.sentences, nullptr, data.vocab, 2).at(0);
  auto errors = testing::model_gradient_errors(params, batch);
  bool saw_embeddings = false;
  for (const auto& e : errors) {
    saw_embeddings = saw_embeddings || e.name == "encoder.embeddings";
    EXPECT_LT(e.group_error, 1e-4) << e.name;
  }
  EXPECT_TRUE(saw_embeddings);
}

TEST(Model, ParameterNamesAreSorted) {
  Data data(1, 2, 2, 1);
  auto params = testing::small_model<float>({}, data.vocab, 1);
  auto refs = params.refs();
  for (std::size_t i = 1; i < refs.size(); ++i) EXPECT_LT(refs[i - 1].name, refs[i].name);
}

TEST(Model, BatchLossIsMeanOfSentenceLosses) {
  Data data(5, 1, 7, 5);
  auto params = testing::small_model<double>({}, data.vocab, 3);
  auto together = make_batches(data.sentences, &data.reps, data.vocab, 5).at(0);
  double sum = 0;
  for (const auto& b : make_batches(data.sentences, &data.reps, data.vocab, 1)) {
    sum += loss_and_gradients(params, b, false, nullptr).loss;
  }
  EXPECT_NEAR(loss_and_gradients(params, together, false, nullptr).loss, sum / 5, 1e-12);
}

TEST(Model, DecodeMatchesAcrossBatchSizesAndWorkers) {
  Data data(40, 1, 15, 6);
  auto params = testing::small_model<float>({}, data.vocab, 4);
  auto one = decode_corpus(params, data.vocab, data.sentences, &data.reps, 1);
  EXPECT_EQ(decode_corpus(params, data.vocab, data.sentences, &data.reps, 32), one);
  EXPECT_EQ(decode_corpus(params, data.vocab, data.sentences, &data.reps, 7, 3), one);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one[i].size(), data.sentences[i].size());
}

TEST(Model, DecodeWithoutRepsIsConfigError) {
  Data data(3, 2, 4, 7);
  auto params = testing::small_model<float>({}, data.vocab, 4);
  EXPECT_THROW(decode_corpus(params, data.vocab, data.sentences, nullptr), ConfigError);
}

TEST(Model, CastRoundTripIsExact) {
  Data data(1, 2, 2, 1);
  auto params = testing::small_model<float>({}, data.vocab, 8);
  auto back = cast_params<float>(cast_params<double>(params));
  auto a = params.refs();
  auto b = back.refs();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(*a[i].tensor, *b[i].tensor) << a[i].name;
}

}  // namespace
}  // namespace eduseg
