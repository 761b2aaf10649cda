// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

// Frozen toy text encoder plus the learnable input-space pieces that the
// token-embedding baselines attach to it.
//
// The toy encoder is a stand-in for a pretrained text branch: hashed tokens
// index a frozen embedding table, the sequence is mean-pooled, projected into
// the shared d-dimensional space and L2-normalized. It is differentiable with
// respect to whatever is prepended to the token sequence, which is all that
// context-token methods need.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "palmlab/autodiff.hpp"

namespace palmlab {

class Tokenizer {
 public:
  explicit Tokenizer(std::size_t vocab_size = 4096);

  /// One token per whitespace-separated word, lowercased and hashed with
  /// FNV-1a into [0, vocab_size). Throws EmptyText for blank input.
  std::vector<std::size_t> tokenize(std::string_view text) const;

  std::size_t vocab_size() const noexcept { return vocab_size_; }

 private:
  std::size_t vocab_size_;
};

struct ToyEncoderOptions {
  std::size_t vocab_size = 4096;
  std::size_t embed_dim = 512;
  std::uint64_t seed = 0;
};

class ToyTextEncoder {
 public:
  ToyTextEncoder(std::size_t out_dim, const ToyEncoderOptions& options = {});

  std::size_t out_dim() const noexcept { return projection_.value.rows(); }
  std::size_t embed_dim() const noexcept { return token_table_.value.cols(); }
  const Tokenizer& tokenizer() const noexcept { return tokenizer_; }

  const Param& token_table() const noexcept { return token_table_; }
  const Param& projection() const noexcept { return projection_; }
  const Param& bias() const noexcept { return bias_; }

  /// Unit-norm feature of `text`.
  std::vector<double> encode_text(std::string_view text) const;

  /// Records [ctx_1 + shift, ..., ctx_M + shift, tokens(text)] -> mean ->
  /// projection + bias -> L2-normalize on `tape`. `ctx` is M x e or absent;
  /// `shift` is an e-vector and defaults to zero.
  Var encode(Tape& tape, std::optional<Var> ctx, std::string_view text,
             std::optional<Var> shift = std::nullopt, NormMode mode = NormMode::kStrict) const;

 private:
  Tokenizer tokenizer_;
  Param token_table_;  // V x e
  Param projection_;   // d x e
  Param bias_;         // d x 1
};

/// Counts forward passes through a shared encoder for one run.
class CountingEncoder {
 public:
  explicit CountingEncoder(const ToyTextEncoder& encoder) : encoder_(&encoder) {}

  std::vector<double> encode_text(std::string_view text) {
    ++count_;
    return encoder_->encode_text(text);
  }
  Var encode(Tape& tape, std::optional<Var> ctx, std::string_view text,
             std::optional<Var> shift = std::nullopt, NormMode mode = NormMode::kStrict) {
    ++count_;
    return encoder_->encode(tape, ctx, text, shift, mode);
  }

  const ToyTextEncoder& encoder() const noexcept { return *encoder_; }
  std::size_t forward_count() const noexcept { return count_; }

 private:
  const ToyTextEncoder* encoder_;
  std::size_t count_ = 0;
};

/// M learnable context token embeddings, front-placed before the class name.
struct ContextTokens {
  Param ctx;  // M x e

  /// Entries ~ N(0, 0.02^2).
  ContextTokens(std::size_t count, std::size_t embed_dim, std::uint64_t seed);
  std::size_t count() const noexcept { return ctx.value.rows(); }
};

enum class MetaInit {
  kZeroOutput,  // random first layer, zero second layer: shift is 0 at step 0
  kRandom,
  kZero,
};

/// Two-layer network d -> h -> e with ReLU, mapping an audio embedding to a
/// shift applied to every context token.
struct MetaNet {
  Param w1;  // h x d
  Param b1;  // h x 1
  Param w2;  // e x h
  Param b2;  // e x 1

  MetaNet(std::size_t in_dim, std::size_t hidden, std::size_t out_dim, std::uint64_t seed,
          MetaInit init = MetaInit::kZeroOutput);

  std::size_t in_dim() const noexcept { return w1.value.cols(); }
  std::size_t out_dim() const noexcept { return w2.value.rows(); }
  std::size_t param_count() const noexcept {
    return w1.size() + b1.size() + w2.size() + b2.size();
  }
  std::vector<Param*> params() { return {&w1, &b1, &w2, &b2}; }

  Var forward(Tape& tape, Var audio);
  /// Throws DimensionMismatch unless audio has in_dim() entries.
  std::vector<double> forward(std::span<const double> audio) const;
};

}  // namespace palmlab
