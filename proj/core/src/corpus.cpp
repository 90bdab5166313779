#include "eduseg/corpus.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace eduseg {

namespace fs = std::filesystem;

void validate_sentence(const Sentence& s) {
  if (s.tokens.empty()) throw ValidationError("empty sentence");
  if (s.tokens.size() != s.labels.size()) {
    throw ValidationError("sentence has " + std::to_string(s.tokens.size()) + " tokens but " +
                          std::to_string(s.labels.size()) + " labels");
  }
  for (int l : s.labels) {
    if (l != 0 && l != 1) throw ValidationError("label " + std::to_string(l) + " is not 0/1");
  }
  if (s.labels[0] != 0) throw ValidationError("first token carries a boundary label");
}

// ---------------------------------------------------------------------------
// Corpus text format

std::vector<Sentence> parse_corpus(std::istream& in, const CorpusOptions& options,
                                   std::string_view source) {
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<Sentence> out;
  if (text.empty()) return out;
  const std::string where = std::string(source) + ":";
  if (text.back() != '\n') throw ParseError(where + " missing final newline");

  Sentence current;
  std::size_t sentence_start = 1;
  std::size_t blank_run = 0;
  std::size_t line_no = 0;

  auto finish = [&](std::size_t line) {
    if (current.tokens.empty()) return;
    if (current.labels[0] != 0) {
      throw ValidationError(where + std::to_string(sentence_start) +
                            ": first token of a sentence is labelled 1");
    }
    if (current.tokens.size() > options.max_tokens) {
      throw ValidationError(where + std::to_string(sentence_start) + ": sentence of " +
                            std::to_string(current.tokens.size()) + " tokens exceeds the cap of " +
                            std::to_string(options.max_tokens));
    }
    (void)line;
    out.push_back(std::move(current));
    current = Sentence{};
  };

  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (line.empty()) {
      if (current.tokens.empty()) {
        // A blank line directly after another (or at file start) encloses nothing.
        if (blank_run > 0 || line_no == 1) {
          throw ValidationError(where + std::to_string(line_no) + ": empty sentence");
        }
      }
      finish(line_no);
      ++blank_run;
      continue;
    }
    if (current.tokens.empty()) sentence_start = line_no;
    blank_run = 0;

    const std::size_t tab = line.rfind('\t');
    std::string_view token = line;
    int label = 0;
    if (tab == std::string_view::npos) {
      if (!options.allow_unlabeled) {
        throw ParseError(where + std::to_string(line_no) + ": expected token<TAB>label");
      }
    } else {
      token = line.substr(0, tab);
      const std::string_view lab = line.substr(tab + 1);
      if (lab == "0") {
        label = 0;
      } else if (lab == "1") {
        label = 1;
      } else {
        throw ParseError(where + std::to_string(line_no) + ": label '" + std::string(lab) +
                         "' is not 0 or 1");
      }
    }
    if (token.empty()) throw ParseError(where + std::to_string(line_no) + ": empty token");
    current.tokens.emplace_back(token);
    current.labels.push_back(label);
  }
  // A single trailing blank line is tolerated; more is an empty sentence.
  if (blank_run > 1) throw ValidationError(where + std::to_string(line_no) + ": empty sentence");
  finish(line_no);
  return out;
}

std::vector<Sentence> load_corpus(const fs::path& path, const CorpusOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path.string());
  return parse_corpus(in, options, path.string());
}

void write_corpus(std::ostream& out, std::span<const Sentence> sentences) {
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (i) out << '\n';
    const auto& s = sentences[i];
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      out << s.tokens[t] << '\t' << s.labels[t] << '\n';
    }
  }
}

void write_corpus(const fs::path& path, std::span<const Sentence> sentences) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus " + path.string());
  write_corpus(out, sentences);
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() : id_to_token_{"<pad>", "<unk>"} {}

Vocab Vocab::build(std::span<const Sentence> sentences, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences) {
    for (const auto& t : s.tokens) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (auto& [tok, n] : entries) {
    if (n >= std::max<std::size_t>(min_count, 1)) tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  for (auto& t : tokens) {
    if (v.token_to_id_.count(t)) throw ValidationError("duplicate vocabulary token '" + t + "'");
    v.token_to_id_.emplace(t, v.id_to_token_.size());
    v.id_to_token_.push_back(std::move(t));
  }
  return v;
}

std::optional<std::size_t> Vocab::find(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocab::id(std::string_view token) const { return find(token).value_or(kUnk); }

std::vector<std::string> Vocab::corpus_tokens() const {
  return {id_to_token_.begin() + kReserved, id_to_token_.end()};
}

// ---------------------------------------------------------------------------
// Word embeddings

EmbeddingTable load_word_embeddings(const fs::path& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embeddings " + path.string());

  std::size_t dim = 0;
  std::vector<std::vector<float>> found(vocab.size());
  std::string line;
  std::size_t line_no = 0;
  std::vector<float> values;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t sp = line.find(' ');
    if (sp == std::string::npos || sp == 0) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected token and values");
    }
    values.clear();
    const char* p = line.data() + sp;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      float v = 0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || (next < end && *next != ' ')) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
      }
      values.push_back(v);
      p = next;
    }
    if (values.empty()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": no vector values");
    }
    if (dim == 0) {
      dim = values.size();
    } else if (values.size() != dim) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": dimension " +
                        std::to_string(values.size()) + " differs from " + std::to_string(dim));
    }
    if (auto id = vocab.find(std::string_view(line.data(), sp))) found[*id] = values;
  }
  if (dim == 0) throw FormatError("embeddings file " + path.string() + " holds no vectors");

  EmbeddingTable table;
  table.matrix = Tensor<float>(Shape{vocab.size(), dim});
  for (std::size_t id = Vocab::kReserved; id < vocab.size(); ++id) {
    if (!found[id].empty()) std::copy(found[id].begin(), found[id].end(), table.matrix.row(id).begin());
  }
  table.trainable = false;
  return table;
}

// ---------------------------------------------------------------------------
// Contextual representations

namespace {

constexpr char kRepMagic[4] = {'R', 'E', 'P', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

class Reader {
 public:
  Reader(const std::string& data, std::string source) : data_(data), source_(std::move(source)) {}
  std::uint32_t u32() {
    need(4);
    auto v = get_u32(reinterpret_cast<const unsigned char*>(data_.data() + pos_));
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) throw FormatError(source_ + ": truncated REP1 payload");
  }
  const std::string& data_;
  std::string source_;
  std::size_t pos_ = 4;
};

ContextualReps parse_rep1(const std::string& data, const std::string& source) {
  Reader r(data, source);
  ContextualReps reps;
  const std::uint32_t count = r.u32();
  reps.layers = r.u32();
  reps.dim = r.u32();
  if (reps.layers != ContextualReps::kLayers) {
    throw FormatError(source + ": expected " + std::to_string(ContextualReps::kLayers) +
                      " layers, found " + std::to_string(reps.layers));
  }
  reps.sentences.reserve(count);
  for (std::uint32_t s = 0; s < count; ++s) {
    const std::uint32_t tokens = r.u32();
    Tensor<float> t(Shape{reps.layers, tokens, reps.dim});
    for (auto& v : t.values()) v = r.f32();
    reps.sentences.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError(source + ": trailing bytes after REP1 payload");
  return reps;
}

ContextualReps parse_repjsonl(const std::string& data, const std::string& source) {
  ContextualReps reps;
  std::istringstream in(data);
  std::string line;
  std::size_t line_no = 0;
  bool dim_known = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("layers") || !obj["layers"].is_array()) {
      throw FormatError(source + ":" + std::to_string(line_no) + ": missing \"layers\" array");
    }
    const auto& layers = obj["layers"];
    if (layers.size() != ContextualReps::kLayers) {
      throw FormatError(source + ":" + std::to_string(line_no) + ": expected 3 layers, found " +
                        std::to_string(layers.size()));
    }
    const std::size_t tokens = layers[0].size();
    std::size_t dim = tokens ? layers[0][0].size() : reps.dim;
    if (!dim_known && tokens) {
      reps.dim = dim;
      dim_known = true;
    }
    Tensor<float> t(Shape{ContextualReps::kLayers, tokens, reps.dim});
    std::size_t k = 0;
    for (const auto& layer : layers) {
      if (layer.size() != tokens) {
        throw FormatError(source + ":" + std::to_string(line_no) + ": ragged token dimension");
      }
      for (const auto& vec : layer) {
        if (vec.size() != reps.dim) {
          throw FormatError(source + ":" + std::to_string(line_no) + ": vector dimension " +
                            std::to_string(vec.size()) + " differs from " + std::to_string(reps.dim));
        }
        for (const auto& v : vec) {
          if (!v.is_number()) throw ParseError(source + ":" + std::to_string(line_no) + ": non-numeric value");
          t[k++] = static_cast<float>(v.get<double>());
        }
      }
    }
    reps.sentences.push_back(std::move(t));
  }
  return reps;
}

}  // namespace

void check_alignment(const ContextualReps& reps, std::span<const Sentence> sentences) {
  if (reps.sentences.size() != sentences.size()) {
    throw AlignmentError("contextual reps hold " + std::to_string(reps.sentences.size()) +
                         " sentences but the corpus has " + std::to_string(sentences.size()));
  }
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const std::size_t t = reps.sentences[i].shape()[1];
    if (t != sentences[i].size()) {
      throw AlignmentError("sentence " + std::to_string(i) + ": reps cover " + std::to_string(t) +
                           " tokens, corpus has " + std::to_string(sentences[i].size()));
    }
  }
}

ContextualReps load_contextual_reps(const fs::path& path, std::span<const Sentence> companion) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open contextual reps " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  ContextualReps reps;
  if (data.size() >= 4 && std::memcmp(data.data(), kRepMagic, 4) == 0) {
    reps = parse_rep1(data, path.string());
  } else if (!data.empty() && data.front() == '{') {
    reps = parse_repjsonl(data, path.string());
  } else {
    throw FormatError(path.string() + ": bad magic, expected REP1 or JSON lines");
  }
  if (!companion.empty()) check_alignment(reps, companion);
  return reps;
}

void write_rep1(const fs::path& path, const ContextualReps& reps) {
  std::string buf(kRepMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(reps.sentences.size()));
  put_u32(buf, static_cast<std::uint32_t>(reps.layers));
  put_u32(buf, static_cast<std::uint32_t>(reps.dim));
  for (const auto& s : reps.sentences) {
    if (s.rank() != 3 || s.shape()[0] != reps.layers || s.shape()[2] != reps.dim) {
      throw ShapeError("REP1 sentence block " + shape_string(s.shape()) + " does not match header");
    }
    put_u32(buf, static_cast<std::uint32_t>(s.shape()[1]));
    for (float v : s.values()) put_u32(buf, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_repjsonl(const fs::path& path, const ContextualReps& reps) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : reps.sentences) {
    const std::size_t L = s.shape()[0], T = s.shape()[1], D = s.shape()[2];
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < L; ++l) {
      nlohmann::json toks = nlohmann::json::array();
      for (std::size_t t = 0; t < T; ++t) {
        nlohmann::json vec = nlohmann::json::array();
        for (std::size_t d = 0; d < D; ++d) vec.push_back(static_cast<double>(s[(l * T + t) * D + d]));
        toks.push_back(std::move(vec));
      }
      layers.push_back(std::move(toks));
    }
    out << nlohmann::json{{"layers", layers}}.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Batching

std::vector<int> Batch::sentence_labels(std::size_t b) const {
  return {labels.begin() + b * max_len, labels.begin() + b * max_len + lengths[b]};
}

Batch make_batch(std::span<const Sentence> sentences, std::span<const std::size_t> indices,
                 const ContextualReps* reps, const Vocab& vocab) {
  Batch batch;
  batch.batch_size = indices.size();
  for (auto i : indices) batch.max_len = std::max(batch.max_len, sentences[i].size());
  const std::size_t B = batch.batch_size, T = batch.max_len;
  batch.token_ids.assign(B * T, Vocab::kPad);
  batch.mask.assign(B * T, 0);
  batch.labels.assign(B * T, 0);
  batch.lengths.reserve(B);
  batch.sentence_index.assign(indices.begin(), indices.end());
  if (reps) batch.reps = Tensor<float>(Shape{B, reps->layers, T, reps->dim});

  for (std::size_t b = 0; b < B; ++b) {
    const Sentence& s = sentences[indices[b]];
    batch.lengths.push_back(s.size());
    for (std::size_t t = 0; t < s.size(); ++t) {
      batch.token_ids[b * T + t] = vocab.id(s.tokens[t]);
      batch.mask[b * T + t] = 1;
      batch.labels[b * T + t] = s.labels[t];
    }
    if (reps) {
      const Tensor<float>& src = reps->sentences.at(indices[b]);
      if (src.shape()[1] != s.size()) {
        throw AlignmentError("sentence " + std::to_string(indices[b]) + ": reps cover " +
                             std::to_string(src.shape()[1]) + " tokens, corpus has " +
                             std::to_string(s.size()));
      }
      const std::size_t L = reps->layers, D = reps->dim;
      for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t t = 0; t < s.size(); ++t) {
          std::copy_n(src.data() + (l * s.size() + t) * D, D,
                      batch.reps.data() + ((b * L + l) * T + t) * D);
        }
      }
    }
  }
  return batch;
}

std::vector<Batch> make_batches(std::span<const Sentence> sentences, const ContextualReps* reps,
                                const Vocab& vocab, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (reps) check_alignment(*reps, sentences);
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.push_back(make_batch(sentences, std::span(order).subspan(start, end - start), reps, vocab));
  }
  return batches;
}

std::vector<Batch> make_length_batches(std::span<const Sentence> sentences, const ContextualReps* reps,
                                       const Vocab& vocab, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (reps) check_alignment(*reps, sentences);
  std::vector<std::size_t> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sentences[a].size() < sentences[b].size(); });
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.push_back(make_batch(sentences, std::span(order).subspan(start, end - start), reps, vocab));
  }
  return batches;
}

}  // namespace eduseg
