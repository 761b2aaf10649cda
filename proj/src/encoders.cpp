// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "palmlab/encoders.hpp"

#include <cmath>
#include <string>

#include "palmlab/error.hpp"
#include "palmlab/rng.hpp"

namespace palmlab {

namespace {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, SeededRng& rng) {
  Matrix m(rows, cols);
  for (double& x : m.flat()) x = stddev * rng.normal();
  return m;
}

bool is_space(char ch) {
  return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v';
}

char ascii_lower(char ch) { return (ch >= 'A' && ch <= 'Z') ? static_cast<char>(ch - 'A' + 'a') : ch; }

}  // namespace

Tokenizer::Tokenizer(std::size_t vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size_ == 0) throw ConfigError("vocabulary size must be positive");
}

std::vector<std::size_t> Tokenizer::tokenize(std::string_view text) const {
  std::vector<std::size_t> tokens;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      tokens.push_back(static_cast<std::size_t>(fnv1a64(word) % vocab_size_));
      word.clear();
    }
  };
  for (char ch : text) {
    if (is_space(ch)) {
      flush();
    } else {
      word.push_back(ascii_lower(ch));
    }
  }
  flush();
  if (tokens.empty()) throw EmptyText("text has no tokens");
  return tokens;
}

ToyTextEncoder::ToyTextEncoder(std::size_t out_dim, const ToyEncoderOptions& options)
    : tokenizer_(options.vocab_size) {
  if (out_dim < 1 || options.embed_dim < 1) throw ConfigError("encoder dimensions must be positive");
  SeededRng rng(options.seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(options.embed_dim));
  token_table_ = Param(gaussian_matrix(options.vocab_size, options.embed_dim, stddev, rng), true);
  projection_ = Param(gaussian_matrix(out_dim, options.embed_dim, stddev, rng), true);
  bias_ = Param(Matrix(out_dim, 1), true);
}

Var ToyTextEncoder::encode(Tape& tape, std::optional<Var> ctx, std::string_view text,
                           std::optional<Var> shift, NormMode mode) const {
  const auto tokens = tokenizer_.tokenize(text);
  const std::size_t e = embed_dim();
  if (ctx && ctx->cols() != e) {
    throw ShapeMismatch("context width " + std::to_string(ctx->cols()) + " != embed dim " +
                        std::to_string(e));
  }
  if (shift && shift->size() != e) {
    throw ShapeMismatch("shift length " + std::to_string(shift->size()) + " != embed dim " +
                        std::to_string(e));
  }

  std::vector<Var> sequence;
  if (ctx) {
    for (std::size_t m = 0; m < ctx->rows(); ++m) {
      Var token = row(*ctx, m);
      sequence.push_back(shift ? add(token, *shift) : token);
    }
  }
  const Var table = tape.leaf(token_table_);
  for (std::size_t t : tokens) sequence.push_back(row(table, t));

  const Var pooled = mean(sequence);
  const Var projected = add(matvec(tape.leaf(projection_), pooled), tape.leaf(bias_));
  return l2_normalize(projected, mode);
}

std::vector<double> ToyTextEncoder::encode_text(std::string_view text) const {
  Tape tape;
  const auto v = encode(tape, std::nullopt, text).value();
  return {v.begin(), v.end()};
}

ContextTokens::ContextTokens(std::size_t count, std::size_t embed_dim, std::uint64_t seed) {
  if (count < 1) throw ConfigError("need at least one context token");
  SeededRng rng(seed);
  ctx = Param(gaussian_matrix(count, embed_dim, 0.02, rng));
}

MetaNet::MetaNet(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, std::uint64_t seed,
                 MetaInit init) {
  if (in_dim < 1 || hidden < 1 || out_dim < 1) throw ConfigError("meta-net dimensions must be positive");
  SeededRng rng(seed);
  const double s1 = init == MetaInit::kZero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double s2 = init == MetaInit::kRandom ? 1.0 / std::sqrt(static_cast<double>(hidden)) : 0.0;
  w1 = Param(gaussian_matrix(hidden, in_dim, s1, rng));
  b1 = Param(Matrix(hidden, 1));
  w2 = Param(gaussian_matrix(out_dim, hidden, s2, rng));
  b2 = Param(Matrix(out_dim, 1));
}

Var MetaNet::forward(Tape& tape, Var audio) {
  if (audio.size() != in_dim()) {
    throw DimensionMismatch("meta-net expects " + std::to_string(in_dim()) + " inputs, got " +
                            std::to_string(audio.size()));
  }
  const Var hidden = relu(add(matvec(tape.leaf(w1), audio), tape.leaf(b1)));
  return add(matvec(tape.leaf(w2), hidden), tape.leaf(b2));
}

std::vector<double> MetaNet::forward(std::span<const double> audio) const {
  if (audio.size() != in_dim()) {
    throw DimensionMismatch("meta-net expects " + std::to_string(in_dim()) + " inputs, got " +
                            std::to_string(audio.size()));
  }
  Tape tape;
  const Var x = tape.constant(audio);
  const Var hidden = relu(add(matvec(tape.leaf(w1), x), tape.leaf(b1)));
  const auto out = add(matvec(tape.leaf(w2), hidden), tape.leaf(b2)).value();
  return {out.begin(), out.end()};
}

}  // namespace palmlab
