// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "palmlab/embedio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"

#include "palmlab/error.hpp"
#include "palmlab/rng.hpp"

namespace palmlab {

using json = nlohmann::json;

namespace {

constexpr char kJsonFormatName[] = "palmlab-embed";
constexpr int kFormatVersion = 1;
constexpr char kBinaryMagic[4] = {'P', 'L', 'M', 'B'};

}  // namespace

// ---------------------------------------------------------------------------
// Validation

void ClassSet::validate() const {
  if (names.size() < 2) {
    throw InvalidSpec("need at least 2 classes, got " + std::to_string(names.size()));
  }
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) throw InvalidSpec("class names must be non-empty");
    if (!seen.insert(n).second) throw InvalidSpec("duplicate class name '" + n + "'");
  }
}

void EmbeddingDataset::validate() const {
  try {
    classes.validate();
  } catch (const InvalidSpec& e) {
    throw FormatError(e.what());
  }
  if (dim < 2) throw FormatError("dim must be >= 2, got " + std::to_string(dim));
  if (records.empty()) throw FormatError("dataset must contain ≥ 1 record");
  const bool folded = records.front().fold.has_value();
  for (const auto& r : records) {
    if (r.vector.size() != dim) {
      throw DimensionMismatch("record '" + r.id + "' has vector length " +
                              std::to_string(r.vector.size()) + ", dataset dim is " +
                              std::to_string(dim));
    }
    if (r.label >= classes.size()) {
      throw FormatError("record '" + r.id + "' has label " + std::to_string(r.label) +
                        " but there are " + std::to_string(classes.size()) + " classes");
    }
    if (!all_finite(r.vector)) throw FormatError("record '" + r.id + "' has a non-finite entry");
    if (!(l2_norm(r.vector) > 0.0)) throw FormatError("record '" + r.id + "' has a zero vector");
    if (r.fold.has_value() != folded) {
      throw FormatError("record '" + r.id + "': folds must be given for all records or none");
    }
  }
}

std::size_t EmbeddingDataset::fold_count() const {
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.fold) n = std::max<std::size_t>(n, *r.fold + 1);
  }
  return n;
}

std::vector<std::size_t> EmbeddingDataset::class_counts() const {
  std::vector<std::size_t> counts(classes.size(), 0);
  for (const auto& r : records) {
    if (r.label < counts.size()) ++counts[r.label];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticSpec::validate() const {
  if (classes < 2) throw InvalidSpec("classes must be >= 2");
  if (dim < 2) throw InvalidSpec("dim must be >= 2");
  if (samples_per_class < 1) throw InvalidSpec("samples_per_class must be >= 1");
  if (!(alignment_noise >= 0.0) || !std::isfinite(alignment_noise)) {
    throw InvalidSpec("alignment_noise must be finite and >= 0");
  }
  if (!(modality_gap >= 0.0) || !std::isfinite(modality_gap)) {
    throw InvalidSpec("modality_gap must be finite and >= 0");
  }
  if (!(within_class_spread > 0.0) || !std::isfinite(within_class_spread)) {
    throw InvalidSpec("within_class_spread must be finite and > 0");
  }
}

ClassSet synthetic_class_names(std::size_t count) {
  static const char* const kNames[] = {
      "dog bark", "rain",       "church bells", "crying baby", "clock tick",
      "sneezing", "helicopter", "chainsaw",     "rooster",     "sea waves",
      "crackling fire", "door knock", "siren", "car horn", "engine", "train",
  };
  constexpr std::size_t kNamed = std::size(kNames);
  ClassSet cs;
  for (std::size_t i = 0; i < count; ++i) {
    cs.names.push_back(i < kNamed ? kNames[i] : "class " + std::to_string(i));
  }
  return cs;
}

namespace {

std::vector<double> gaussian(SeededRng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t c = spec.classes, d = spec.dim;

  SyntheticData out;
  out.text_anchors = Matrix(c, d);
  SeededRng text_rng(spec.text_anchor_seed);
  for (std::size_t i = 0; i < c; ++i) {
    const auto a = l2_normalized(gaussian(text_rng, d));
    std::copy(a.begin(), a.end(), out.text_anchors.row(i).begin());
  }

  SeededRng audio_rng(spec.audio_seed);
  out.gap_direction = l2_normalized(gaussian(audio_rng, d));

  EmbeddingDataset& ds = out.dataset;
  ds.classes = synthetic_class_names(c);
  ds.dim = d;
  ds.records.reserve(c * spec.samples_per_class);
  for (std::size_t i = 0; i < c; ++i) {
    const auto misalign = gaussian(audio_rng, d);
    std::vector<double> centre(d);
    for (std::size_t j = 0; j < d; ++j) {
      centre[j] = out.text_anchors(i, j) + spec.modality_gap * out.gap_direction[j] +
                  spec.alignment_noise * misalign[j];
    }
    for (std::size_t k = 0; k < spec.samples_per_class; ++k) {
      std::vector<double> v = centre;
      for (std::size_t j = 0; j < d; ++j) v[j] += spec.within_class_spread * audio_rng.normal();
      char id[48];
      std::snprintf(id, sizeof id, "c%02zu-%05zu", i, k);
      ds.records.push_back({id, static_cast<std::uint32_t>(i), l2_normalized(v), std::nullopt});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Anchors

EmbeddingDataset anchors_to_dataset(const ClassSet& classes, const Matrix& anchors) {
  if (anchors.rows() != classes.size()) {
    throw DimensionMismatch("anchor matrix has " + std::to_string(anchors.rows()) + " rows for " +
                            std::to_string(classes.size()) + " classes");
  }
  EmbeddingDataset ds;
  ds.classes = classes;
  ds.dim = anchors.cols();
  for (std::size_t i = 0; i < anchors.rows(); ++i) {
    const auto r = anchors.row(i);
    ds.records.push_back({classes.names[i], static_cast<std::uint32_t>(i),
                          std::vector<double>(r.begin(), r.end()), std::nullopt});
  }
  return ds;
}

Matrix anchors_from_dataset(const EmbeddingDataset& anchors, const ClassSet& classes) {
  if (anchors.classes != classes) {
    throw FormatError("anchor file classes do not match the dataset classes");
  }
  if (anchors.records.size() != classes.size()) {
    throw FormatError("anchor file must hold exactly one record per class, found " +
                      std::to_string(anchors.records.size()));
  }
  Matrix m(classes.size(), anchors.dim);
  for (std::size_t i = 0; i < anchors.records.size(); ++i) {
    const auto& r = anchors.records[i];
    if (r.label != i) {
      throw FormatError("anchor record '" + r.id + "' is out of class order");
    }
    std::copy(r.vector.begin(), r.vector.end(), m.row(i).begin());
  }
  return m;
}

// ---------------------------------------------------------------------------
// JSONL

FileFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".bin" ? FileFormat::kBinary : FileFormat::kJsonl;
}

void save_jsonl(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  json header = {{"format", kJsonFormatName},
                 {"version", kFormatVersion},
                 {"dim", ds.dim},
                 {"classes", ds.classes.names}};
  out << header.dump() << '\n';
  for (const auto& r : ds.records) {
    json line = {{"id", r.id}, {"label", r.label}, {"vector", r.vector}};
    if (r.fold) line["fold"] = *r.fold;
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

namespace {

[[noreturn]] void line_error(std::size_t line_no, const std::string& reason) {
  throw FormatError("line " + std::to_string(line_no) + ": " + reason);
}

std::uint64_t get_unsigned(const json& obj, const char* key, std::size_t line_no) {
  if (!obj.contains(key)) line_error(line_no, std::string("missing \"") + key + "\"");
  const json& v = obj.at(key);
  if (!v.is_number_unsigned()) {
    line_error(line_no, std::string("\"") + key + "\" must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

}  // namespace

EmbeddingDataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");

  EmbeddingDataset ds;
  std::string text;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(text);
    } catch (const json::parse_error& e) {
      line_error(line_no, std::string("invalid JSON (") + e.what() + ")");
    }
    if (!obj.is_object()) line_error(line_no, "expected a JSON object");

    if (!have_header) {
      if (obj.value("format", std::string()) != kJsonFormatName) {
        line_error(line_no, "header must have \"format\": \"palmlab-embed\"");
      }
      if (get_unsigned(obj, "version", line_no) != kFormatVersion) {
        line_error(line_no, "unsupported version");
      }
      ds.dim = get_unsigned(obj, "dim", line_no);
      if (!obj.contains("classes") || !obj["classes"].is_array()) {
        line_error(line_no, "header needs a \"classes\" array");
      }
      for (const auto& n : obj["classes"]) {
        if (!n.is_string()) line_error(line_no, "class names must be strings");
        ds.classes.names.push_back(n.get<std::string>());
      }
      have_header = true;
      continue;
    }

    EmbeddingRecord r;
    if (!obj.contains("id") || !obj["id"].is_string()) line_error(line_no, "missing string \"id\"");
    r.id = obj["id"].get<std::string>();
    const auto label = get_unsigned(obj, "label", line_no);
    if (label >= ds.classes.size()) {
      line_error(line_no, "label " + std::to_string(label) + " out of range");
    }
    r.label = static_cast<std::uint32_t>(label);
    if (!obj.contains("vector") || !obj["vector"].is_array()) {
      line_error(line_no, "missing \"vector\" array");
    }
    for (const auto& x : obj["vector"]) {
      if (!x.is_number()) line_error(line_no, "vector entries must be numbers");
      r.vector.push_back(x.get<double>());
    }
    if (r.vector.size() != ds.dim) {
      throw DimensionMismatch("line " + std::to_string(line_no) + ": record '" + r.id +
                              "' has vector length " + std::to_string(r.vector.size()) +
                              ", header dim is " + std::to_string(ds.dim));
    }
    if (obj.contains("fold") && !obj["fold"].is_null()) {
      const auto fold = get_unsigned(obj, "fold", line_no);
      r.fold = static_cast<std::uint32_t>(fold);
    }
    ds.records.push_back(std::move(r));
  }
  if (!have_header) throw FormatError("missing header line");
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Binary

namespace {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    const auto u = std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                  std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes_.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
    }
  }
  void put_string(const std::string& s) {
    if (s.size() > 0xffff) throw FormatError("string longer than 65535 bytes: '" + s.substr(0, 32) + "...'");
    put(static_cast<std::uint16_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void put_raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return std::bit_cast<T>(u);
  }
  std::string get_string() {
    const auto len = get<std::uint16_t>();
    need(len);
    std::string s(bytes_.data() + pos_, len);
    pos_ += len;
    return s;
  }
  char get_byte() {
    need(1);
    return bytes_[pos_++];
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("unexpected end of stream");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

void save_binary(const EmbeddingDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  ByteWriter w;
  w.put_raw(kBinaryMagic, 4);
  w.put(static_cast<std::uint32_t>(kFormatVersion));
  w.put(static_cast<std::uint32_t>(ds.dim));
  w.put(static_cast<std::uint32_t>(ds.classes.size()));
  for (const auto& n : ds.classes.names) w.put_string(n);
  w.put(static_cast<std::uint64_t>(ds.records.size()));
  for (const auto& r : ds.records) {
    w.put_string(r.id);
    w.put(r.label);
    w.put(r.fold ? static_cast<std::int32_t>(*r.fold) : std::int32_t{-1});
    for (double x : r.vector) w.put(x);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

EmbeddingDataset load_binary(const std::filesystem::path& path) {
  ByteReader r(read_all(path));
  char magic[4];
  for (char& m : magic) m = r.get_byte();
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kBinaryMagic))) {
    throw FormatError("bad magic");
  }
  if (r.get<std::uint32_t>() != kFormatVersion) throw FormatError("unsupported version");

  EmbeddingDataset ds;
  ds.dim = r.get<std::uint32_t>();
  const auto c = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < c; ++i) ds.classes.names.push_back(r.get_string());
  const auto n = r.get<std::uint64_t>();
  // Each record needs at least 10 + 8*dim bytes; reject absurd counts early.
  if (n > r.remaining() / (10 + 8 * std::max<std::size_t>(ds.dim, 1))) {
    throw FormatError("unexpected end of stream");
  }
  ds.records.reserve(n);
  for (std::uint64_t k = 0; k < n; ++k) {
    EmbeddingRecord rec;
    rec.id = r.get_string();
    rec.label = r.get<std::uint32_t>();
    const auto fold = r.get<std::int32_t>();
    if (fold >= 0) {
      rec.fold = static_cast<std::uint32_t>(fold);
    } else if (fold != -1) {
      throw FormatError("record '" + rec.id + "' has invalid fold " + std::to_string(fold));
    }
    rec.vector.resize(ds.dim);
    for (double& x : rec.vector) x = r.get<double>();
    ds.records.push_back(std::move(rec));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last record");
  ds.validate();
  return ds;
}

void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& path, FileFormat format) {
  if (format == FileFormat::kBinary) {
    save_binary(ds, path);
  } else {
    save_jsonl(ds, path);
  }
}

EmbeddingDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char head[4] = {};
  in.read(head, 4);
  const bool binary = in.gcount() == 4 && std::equal(head, head + 4, kBinaryMagic);
  in.close();
  return binary ? load_binary(path) : load_jsonl(path);
}

// ---------------------------------------------------------------------------
// Folds

EmbeddingDataset assign_folds(const EmbeddingDataset& ds, std::size_t fold_count, std::uint64_t seed) {
  if (fold_count < 2) throw TooFewSamples("fold count must be >= 2");
  const auto counts = ds.class_counts();
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < fold_count) {
      throw TooFewSamples("class '" + ds.classes.names[i] + "' has " + std::to_string(counts[i]) +
                          " records, fewer than " + std::to_string(fold_count) + " folds");
    }
  }
  EmbeddingDataset out = ds;
  SeededRng rng(seed);
  for (std::size_t cls = 0; cls < counts.size(); ++cls) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < out.records.size(); ++i) {
      if (out.records[i].label == cls) members.push_back(i);
    }
    rng.shuffle(std::span<std::size_t>(members));
    for (std::size_t k = 0; k < members.size(); ++k) {
      out.records[members[k]].fold = static_cast<std::uint32_t>(k % fold_count);
    }
  }
  return out;
}

}  // namespace palmlab
