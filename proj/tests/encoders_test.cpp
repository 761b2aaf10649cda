// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "palmlab/encoders.hpp"
#include "palmlab/error.hpp"
#include "palmlab/rng.hpp"
#include "test_support.hpp"

namespace palmlab {
namespace {

ToyEncoderOptions small_options(std::uint64_t seed = 0) { return ToyEncoderOptions{64, 8, seed}; }

TEST(TokenizerTest, StableCaseInsensitiveHashing) {
  const Tokenizer tok(4096);
  const auto t = tok.tokenize("dog bark");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t, tok.tokenize("dog bark"));
  EXPECT_EQ(tok.tokenize("Dog"), tok.tokenize("dog"));
  EXPECT_EQ(tok.tokenize("  dog\tbark \n"), t);
  // Independent check of the hashing rule.
  EXPECT_EQ(t[0], fnv1a64("dog") % 4096);
  EXPECT_EQ(t[1], fnv1a64("bark") % 4096);
}

TEST(TokenizerTest, EmptyTextRejected) {
  const Tokenizer tok;
  EXPECT_THROW(tok.tokenize(""), EmptyText);
  EXPECT_THROW(tok.tokenize("   \t "), EmptyText);
}

TEST(ToyTextEncoderTest, WeightsFrozenAndDeterministic) {
  const ToyTextEncoder a(6, small_options(3)), b(6, small_options(3)), c(6, small_options(4));
  EXPECT_TRUE(a.token_table().frozen);
  EXPECT_TRUE(a.projection().frozen);
  EXPECT_TRUE(a.bias().frozen);
  EXPECT_EQ(a.token_table().value, b.token_table().value);
  EXPECT_EQ(a.projection().value, b.projection().value);
  EXPECT_NE(a.token_table().value, c.token_table().value);
  EXPECT_EQ(a.out_dim(), 6u);
  EXPECT_EQ(a.embed_dim(), 8u);
}

TEST(ToyTextEncoderTest, DefaultShapes) {
  const ToyTextEncoder enc(16);
  EXPECT_EQ(enc.token_table().value.rows(), 4096u);
  EXPECT_EQ(enc.token_table().value.cols(), 512u);
  EXPECT_EQ(enc.embed_dim(), 512u);
}

TEST(ToyTextEncoderTest, UnitNormAndRepeatable) {
  const ToyTextEncoder enc(5, small_options());
  for (const char* text : {"dog bark", "rain", "This is a recording of crackling fire"}) {
    const auto v = enc.encode_text(text);
    ASSERT_EQ(v.size(), 5u);
    EXPECT_NEAR(l2_norm(v), 1.0, 1e-12);
    EXPECT_EQ(v, enc.encode_text(text));
  }
}

TEST(ToyTextEncoderTest, MatchesManualComputation) {
  // mean of token rows -> projection + bias -> normalize, written out by hand.
  const ToyTextEncoder enc(4, small_options(7));
  const auto tokens = enc.tokenizer().tokenize("siren car horn");
  std::vector<double> pooled(8, 0.0);
  for (std::size_t t : tokens) {
    for (std::size_t j = 0; j < 8; ++j) pooled[j] += enc.token_table().value(t, j) / 3.0;
  }
  std::vector<double> out(4, 0.0);
  double norm = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 8; ++j) out[i] += enc.projection().value(i, j) * pooled[j];
    out[i] += enc.bias().value(i, 0);
    norm += out[i] * out[i];
  }
  const auto v = enc.encode_text("siren car horn");
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(v[i], out[i] / std::sqrt(norm), 1e-14);
}

TEST(ToyTextEncoderTest, AbsentContextReducesToEncodeText) {
  const ToyTextEncoder enc(5, small_options());
  Tape tape;
  const auto v = enc.encode(tape, std::nullopt, "dog bark").value();
  const auto w = enc.encode_text("dog bark");
  EXPECT_EQ(std::vector<double>(v.begin(), v.end()), w);
}

TEST(ToyTextEncoderTest, ZeroShiftReproducesContextPath) {
  const ToyTextEncoder enc(5, small_options());
  ContextTokens ctx(3, 8, 1);
  Tape tape;
  const Var c = tape.leaf(ctx.ctx);
  const auto plain = enc.encode(tape, c, "rain").value();
  const Var zero = tape.constant(std::vector<double>(8, 0.0));
  const auto shifted = enc.encode(tape, c, "rain", zero).value();
  EXPECT_EQ(std::vector<double>(plain.begin(), plain.end()), std::vector<double>(shifted.begin(), shifted.end()));
}

TEST(ToyTextEncoderTest, DifferentClassNamesDiffer) {
  const ToyTextEncoder enc(5, small_options());
  ContextTokens ctx(2, 8, 1);
  Tape tape;
  const Var c = tape.leaf(ctx.ctx);
  const auto a = enc.encode(tape, c, "dog").value();
  const auto b = enc.encode(tape, c, "rain").value();
  EXPECT_NE(std::vector<double>(a.begin(), a.end()), std::vector<double>(b.begin(), b.end()));
}

TEST(ToyTextEncoderTest, ContextGradientMatchesFiniteDifferences) {
  const ToyTextEncoder enc(6, small_options(2));
  ContextTokens ctx(4, 8, 5);
  const std::vector<double> target = {0.3, -0.1, 0.5, 0.2, -0.4, 0.1};
  std::vector<Param*> ps = {&ctx.ctx};
  const double err = finite_diff_check(
      [&](Tape& t) { return dot(enc.encode(t, t.leaf(ctx.ctx), "dog bark"), t.constant(target)); }, ps, 1e-4);
  EXPECT_LE(err, 1e-4);
}

TEST(ToyTextEncoderTest, FrozenWeightsReceiveNoGradient) {
  const ToyTextEncoder enc(6, small_options(2));
  const Matrix table = enc.token_table().value;
  ContextTokens ctx(2, 8, 5);
  Tape tape;
  const Var out = enc.encode(tape, tape.leaf(ctx.ctx), "rain");
  tape.backward(dot(out, tape.constant(std::vector<double>(6, 1.0))));
  EXPECT_EQ(enc.token_table().grad, Matrix(64, 8));
  EXPECT_EQ(enc.projection().grad, Matrix(6, 8));
  EXPECT_EQ(enc.token_table().value, table);
  double g = 0.0;
  for (double x : ctx.ctx.grad.flat()) g += std::abs(x);
  EXPECT_GT(g, 0.0);
}

TEST(ToyTextEncoderTest, ShapeChecks) {
  const ToyTextEncoder enc(6, small_options());
  ContextTokens wrong(2, 5, 0);
  Tape tape;
  EXPECT_THROW(enc.encode(tape, tape.leaf(wrong.ctx), "rain"), ShapeMismatch);
  EXPECT_THROW(enc.encode_text(""), EmptyText);
}

TEST(CountingEncoderTest, CountsEveryForward) {
  const ToyTextEncoder enc(6, small_options());
  CountingEncoder counter(enc);
  counter.encode_text("a");
  Tape tape;
  counter.encode(tape, std::nullopt, "b");
  counter.encode(tape, std::nullopt, "c");
  EXPECT_EQ(counter.forward_count(), 3u);
}

TEST(ContextTokensTest, InitScale) {
  ContextTokens ctx(16, 512, 0);
  EXPECT_EQ(ctx.count(), 16u);
  EXPECT_FALSE(ctx.ctx.frozen);
  double sq = 0.0;
  for (double x : ctx.ctx.value.flat()) sq += x * x;
  EXPECT_NEAR(std::sqrt(sq / 8192.0), 0.02, 0.002);
  EXPECT_THROW(ContextTokens(0, 8, 0), ConfigError);
}

TEST(MetaNetTest, ZeroWeightsGiveZeroShift) {
  MetaNet net(5, 4, 8, 1, MetaInit::kZero);
  const auto out = net.forward(std::vector<double>{1, 2, 3, 4, 5});
  EXPECT_EQ(out, std::vector<double>(8, 0.0));
  MetaNet zero_out(5, 4, 8, 1, MetaInit::kZeroOutput);
  EXPECT_EQ(zero_out.forward(std::vector<double>{1, 2, 3, 4, 5}), std::vector<double>(8, 0.0));
}

TEST(MetaNetTest, OutputLengthAndDimensionCheck) {
  MetaNet net(5, 4, 8, 1, MetaInit::kRandom);
  EXPECT_EQ(net.forward(std::vector<double>{1, 2, 3, 4, 5}).size(), 8u);
  EXPECT_THROW(net.forward(std::vector<double>{1, 2}), DimensionMismatch);
  EXPECT_EQ(net.param_count(), 5u * 4 + 4 + 4 * 8 + 8);
}

TEST(MetaNetTest, PaperScaleParameterCount) {
  MetaNet net(1024, 64, 512, 0);
  EXPECT_EQ(net.param_count(), 98880u);
}

TEST(MetaNetTest, GradientMatchesFiniteDifferences) {
  MetaNet net(5, 4, 3, 2, MetaInit::kRandom);
  for (double& b : net.b1.value.flat()) b = 0.1;  // keep activations away from the ReLU kink
  const std::vector<double> x = {0.5, -0.3, 0.8, 0.1, -0.6};
  const std::vector<double> y = {1.0, -2.0, 0.5};
  auto ps = net.params();
  const double err = finite_diff_check(
      [&](Tape& t) { return dot(net.forward(t, t.constant(x)), t.constant(y)); }, ps, 1e-4);
  EXPECT_LE(err, 1e-4);
}

TEST(MetaNetTest, TapeAndDirectForwardAgree) {
  MetaNet net(5, 4, 3, 2, MetaInit::kRandom);
  const std::vector<double> x = {0.5, -0.3, 0.8, 0.1, -0.6};
  Tape tape;
  const auto a = net.forward(tape, tape.constant(x)).value();
  EXPECT_EQ(std::vector<double>(a.begin(), a.end()), net.forward(x));
}

}  // namespace
}  // namespace palmlab
