#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "detox/micro_model.hpp"

namespace detox {

// Binary model container, little-endian. Layout (docs/model_format.md):
//
//   magic "DTXMODEL" | u32 version
//   config: u32 embed, u32 hidden, u32 max_len, u8 attention, f64 dropout, u64 seed
//   u32 n_meta, n_meta x (str key, str value)
//   u32 K, K x str token | u64 vocab checksum
//   str generator state
//   u32 n_tensors, n x (str name, u32 rows, u32 cols, rows*cols f64 column-major)
//   u64 FNV-1a checksum of every preceding byte
//
// where str = u32 byte length followed by the bytes.
inline constexpr char kModelMagic[8] = {'D', 'T', 'X', 'M', 'O', 'D', 'E', 'L'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "model files are written in host byte order");

using ModelMetadata = std::map<std::string, std::string>;

namespace detail {

class Writer {
 public:
  template <class T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(ErrorCode::CorruptModelFile, "unexpected end of model data");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_model(const MicroModel& model, const ModelMetadata& meta = {}) {
  detail::Writer w;
  w.raw(kModelMagic, sizeof(kModelMagic));
  w.pod(kModelFormatVersion);
  const MicroConfig& c = model.config();
  w.pod(static_cast<std::uint32_t>(c.embed));
  w.pod(static_cast<std::uint32_t>(c.hidden));
  w.pod(static_cast<std::uint32_t>(c.max_len));
  w.pod(static_cast<std::uint8_t>(c.attention ? 1 : 0));
  w.pod(c.dropout);
  w.pod(c.seed);
  w.pod(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.str(k);
    w.str(v);
  }
  const Vocab& vocab = model.vocab();
  w.pod(static_cast<std::uint32_t>(vocab.size()));
  for (const auto& t : vocab.tokens()) w.str(t);
  w.pod(vocab.checksum());
  w.str(model.rng().state());
  const MicroWeights& weights = model.weights();
  w.pod(static_cast<std::uint32_t>(MicroWeights::kCount));
  for (std::size_t i = 0; i < MicroWeights::kCount; ++i) {
    const auto& m = weights[i];
    w.str(std::string(MicroWeights::names[i]));
    w.pod(static_cast<std::uint32_t>(m.rows()));
    w.pod(static_cast<std::uint32_t>(m.cols()));
    w.raw(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  std::string out = w.bytes();
  const std::uint64_t sum = fnv1a64(out);
  out.append(reinterpret_cast<const char*>(&sum), sizeof(sum));
  return out;
}

struct LoadedModel {
  MicroModel model;
  ModelMetadata metadata;
};

// expected_vocab, when given, must match the stored vocabulary checksum.
inline LoadedModel deserialize_model(std::string_view data, const Vocab* expected_vocab = nullptr) {
  if (data.size() < sizeof(kModelMagic) + sizeof(std::uint64_t) ||
      std::memcmp(data.data(), kModelMagic, sizeof(kModelMagic)) != 0) {
    throw Error(ErrorCode::CorruptModelFile, "missing model header");
  }
  const std::string_view body = data.substr(0, data.size() - sizeof(std::uint64_t));
  std::uint64_t stored_sum;
  std::memcpy(&stored_sum, data.data() + body.size(), sizeof(stored_sum));
  if (fnv1a64(body) != stored_sum) throw Error(ErrorCode::CorruptModelFile, "checksum mismatch (truncated or altered)");

  detail::Reader r(body);
  char magic[sizeof(kModelMagic)];
  r.raw(magic, sizeof(magic));
  const auto version = r.pod<std::uint32_t>();
  if (version != kModelFormatVersion) {
    throw Error(ErrorCode::CorruptModelFile, "unsupported model format version " + std::to_string(version));
  }
  MicroConfig c;
  c.embed = r.pod<std::uint32_t>();
  c.hidden = r.pod<std::uint32_t>();
  c.max_len = r.pod<std::uint32_t>();
  c.attention = r.pod<std::uint8_t>() != 0;
  c.dropout = r.pod<double>();
  c.seed = r.pod<std::uint64_t>();
  ModelMetadata meta;
  const auto n_meta = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = r.str();
    meta[k] = r.str();
  }
  const auto K = r.pod<std::uint32_t>();
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0; i < K; ++i) {
    auto t = r.str();
    if (i < kNumSpecials) {
      if (t != Vocab::specials()[i]) throw Error(ErrorCode::CorruptModelFile, "special tokens out of order");
      continue;
    }
    tokens.push_back(std::move(t));
  }
  Vocab vocab(tokens);
  const auto checksum = r.pod<std::uint64_t>();
  if (checksum != vocab.checksum()) throw Error(ErrorCode::CorruptModelFile, "vocab checksum mismatch");
  if (expected_vocab && expected_vocab->checksum() != checksum) {
    throw Error(ErrorCode::VocabMismatch, "model vocabulary differs from the expected vocabulary");
  }
  c.vocab_size = vocab.size();
  const std::string rng_state = r.str();
  const auto n_tensors = r.pod<std::uint32_t>();
  if (n_tensors != MicroWeights::kCount) throw Error(ErrorCode::CorruptModelFile, "unexpected tensor count");
  MicroWeights weights;
  for (std::size_t i = 0; i < MicroWeights::kCount; ++i) {
    const std::string name = r.str();
    if (name != MicroWeights::names[i]) throw Error(ErrorCode::CorruptModelFile, "unexpected tensor '" + name + "'");
    const auto rows = r.pod<std::uint32_t>();
    const auto cols = r.pod<std::uint32_t>();
    Eigen::MatrixXd m(rows, cols);
    r.raw(reinterpret_cast<char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    weights[i] = std::move(m);
  }
  if (r.pos() != body.size()) throw Error(ErrorCode::CorruptModelFile, "trailing bytes after tensors");
  return {MicroModel(c, std::move(vocab), std::move(weights), rng_state), std::move(meta)};
}

inline void save_model(const MicroModel& model, const std::filesystem::path& path, const ModelMetadata& meta = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write model file " + path.string());
  const std::string bytes = serialize_model(model, meta);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "failed writing model file " + path.string());
}

inline LoadedModel load_model_with_metadata(const std::filesystem::path& path, const Vocab* expected_vocab = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open model file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str(), expected_vocab);
}

inline MicroModel load_model(const std::filesystem::path& path, const Vocab* expected_vocab = nullptr) {
  return load_model_with_metadata(path, expected_vocab).model;
}

}  // namespace detox
