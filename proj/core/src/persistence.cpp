#include "eduseg/persistence.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <zlib.h>

#include <json.hpp>

namespace eduseg {

namespace {

constexpr char kMagic[5] = {'C', 'K', 'P', 'T', '1'};
constexpr std::size_t kHeaderSize = sizeof kMagic + 4 + 4;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kJson = 2, kU64 = 3 };

struct Record {
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<std::uint8_t> payload;
};

using Records = std::map<std::string, Record>;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

Record float_record(const Tensor<float>& t) {
  Record r{DType::kF32, t.shape(), {}};
  r.payload.reserve(t.size() * 4);
  for (float v : t.values()) put_u32(r.payload, std::bit_cast<std::uint32_t>(v));
  return r;
}

Record json_record(const std::string& text) {
  Record r{DType::kJson, Shape{text.size()}, {}};
  r.payload.assign(text.begin(), text.end());
  return r;
}

Record u64_record(std::uint64_t v) {
  Record r{DType::kU64, Shape{1}, {}};
  put_u64(r.payload, v);
  return r;
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, const std::string& source)
      : data_(data), size_(size), source_(source) {}

  bool done() const { return pos_ == size_; }
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > size_ - pos_) throw FormatError(source_ + ": truncated checkpoint");
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  const std::string& source_;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large payloads in pieces.
  while (size > 0) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, n);
    data += n;
    size -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

Tensor<float> to_tensor(const Record& r, const std::string& name, const std::string& source) {
  if (r.dtype != DType::kF32) throw FormatError(source + ": record " + name + " is not f32");
  const std::size_t n = shape_size(r.shape);
  if (r.payload.size() != n * 4) throw FormatError(source + ": record " + name + " has a bad payload size");
  Tensor<float> t(r.shape);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) bits = (bits << 8) | r.payload[i * 4 + b];
    t[i] = std::bit_cast<float>(bits);
  }
  return t;
}

std::string to_text(const Record& r, const std::string& name, const std::string& source) {
  if (r.dtype != DType::kJson) throw FormatError(source + ": record " + name + " is not JSON");
  return std::string(r.payload.begin(), r.payload.end());
}

std::uint64_t to_u64(const Record& r, const std::string& name, const std::string& source) {
  if (r.dtype != DType::kU64 || r.payload.size() != 8) {
    throw FormatError(source + ": record " + name + " is not a u64 scalar");
  }
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | r.payload[i];
  return v;
}

}  // namespace

Checkpoint Checkpoint::from_state(const TrainConfig& config, const Vocab& vocab, const TrainState& state,
                                  bool with_optimizer) {
  Checkpoint c;
  c.config = config;
  c.vocab = vocab;
  c.params = state.params;
  c.ema = state.ema;
  if (with_optimizer) c.optimizer = state.optimizer;
  return c;
}

TrainState Checkpoint::train_state() const {
  if (!optimizer) throw FormatError("checkpoint carries no optimizer state");
  return TrainState{params, ema, *optimizer};
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c, std::uint32_t version) {
  Records records;
  records["config"] = json_record(to_json(c.config));
  records["model"] = json_record(to_json(c.params.config()));
  records["vocab"] = json_record(nlohmann::json(c.vocab.corpus_tokens()).dump());

  auto refs = const_cast<SegmenterParams<float>&>(c.params).refs();
  if (c.ema.shadow.size() != refs.size()) throw ShapeError("EMA state does not match parameters");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    records["param/" + refs[i].name] = float_record(*refs[i].tensor);
    if (!refs[i].trainable) continue;
    records["ema/" + refs[i].name] = float_record(c.ema.shadow[i]);
    if (c.optimizer) {
      records["adam/m/" + refs[i].name] = float_record(c.optimizer->m.at(i));
      records["adam/v/" + refs[i].name] = float_record(c.optimizer->v.at(i));
    }
  }
  if (c.optimizer) records["adam/step"] = u64_record(c.optimizer->step);

  std::vector<std::uint8_t> payload;
  put_u32(payload, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, r] : records) {
    put_u32(payload, static_cast<std::uint32_t>(name.size()));
    payload.insert(payload.end(), name.begin(), name.end());
    payload.push_back(static_cast<std::uint8_t>(r.dtype));
    put_u32(payload, static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) put_u64(payload, d);
    put_u64(payload, r.payload.size());
    payload.insert(payload.end(), r.payload.begin(), r.payload.end());
  }

  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof kMagic);
  put_u32(out, version);
  put_u32(out, crc_of(payload.data(), payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError(source + ": not a CKPT1 checkpoint");
  }
  Reader header(bytes.data() + sizeof kMagic, 8, source);
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(source + ": checkpoint format version " + std::to_string(version) +
                       ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  const std::uint32_t stored_crc = header.u32();
  const std::uint8_t* payload = bytes.data() + kHeaderSize;
  const std::size_t payload_size = bytes.size() - kHeaderSize;
  if (crc_of(payload, payload_size) != stored_crc) {
    throw ChecksumError(source + ": checksum mismatch (file corrupted or truncated)");
  }

  Reader r(payload, payload_size, source);
  Records records;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::uint8_t* name_ptr = r.take(name_len);
    std::string name(name_ptr, name_ptr + name_len);
    Record rec;
    const std::uint8_t tag = r.u8();
    if (tag > static_cast<std::uint8_t>(DType::kU64)) {
      throw FormatError(source + ": record " + name + " has unknown dtype " + std::to_string(tag));
    }
    rec.dtype = static_cast<DType>(tag);
    const std::uint32_t ndim = r.u32();
    for (std::uint32_t d = 0; d < ndim; ++d) rec.shape.push_back(r.u64());
    const std::uint64_t n = r.u64();
    const std::uint8_t* p = r.take(n);
    rec.payload.assign(p, p + n);
    if (!records.emplace(std::move(name), std::move(rec)).second) {
      throw FormatError(source + ": duplicate record");
    }
  }
  if (!r.done()) throw FormatError(source + ": trailing bytes after the last record");

  auto take = [&](const std::string& name) -> Record {
    auto it = records.find(name);
    if (it == records.end()) throw FormatError(source + ": missing record " + name);
    Record out = std::move(it->second);
    records.erase(it);
    return out;
  };

  Checkpoint c;
  c.config = train_config_from_json(to_text(take("config"), "config", source));
  const ModelConfig mc = model_config_from_json(to_text(take("model"), "model", source));
  try {
    c.vocab = Vocab::from_tokens(
        nlohmann::json::parse(to_text(take("vocab"), "vocab", source)).get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": bad vocab record: " + e.what());
  }

  // Build the parameter skeleton for this architecture, then fill every tensor.
  Tensor<float> embeddings = to_tensor(take("param/encoder.embeddings"), "param/encoder.embeddings", source);
  c.params = init_segmenter<float>(mc, embeddings, 0);
  auto refs = c.params.refs();
  const bool has_optimizer = records.count("adam/step") != 0;
  c.ema.decay = static_cast<float>(c.config.ema_decay);
  c.ema.shadow.resize(refs.size());
  if (has_optimizer) {
    c.optimizer = OptimizerState<float>{};
    c.optimizer->step = to_u64(take("adam/step"), "adam/step", source);
    c.optimizer->m.resize(refs.size());
    c.optimizer->v.resize(refs.size());
  }
  auto load_into = [&](const std::string& name, Tensor<float>& dst, const Shape& shape) {
    Tensor<float> t = to_tensor(take(name), name, source);
    if (t.shape() != shape) {
      throw ShapeError(source + ": record " + name + " has shape " + shape_string(t.shape()) + ", expected " +
                       shape_string(shape));
    }
    dst = std::move(t);
  };
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Shape shape = refs[i].tensor->shape();
    if (refs[i].name != "encoder.embeddings") load_into("param/" + refs[i].name, *refs[i].tensor, shape);
    if (!refs[i].trainable) continue;
    load_into("ema/" + refs[i].name, c.ema.shadow[i], shape);
    if (has_optimizer) {
      load_into("adam/m/" + refs[i].name, c.optimizer->m[i], shape);
      load_into("adam/v/" + refs[i].name, c.optimizer->v[i], shape);
    }
  }
  if (!records.empty()) {
    throw UnknownTensorError(source + ": unknown tensor record " + records.begin()->first);
  }
  if (c.vocab.size() != c.params.encoder.embeddings.rows()) {
    throw FormatError(source + ": vocabulary size does not match the embedding table");
  }
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(c);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path.string());
}

}  // namespace eduseg
