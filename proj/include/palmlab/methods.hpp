// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

// Classification methods over a frozen audio/text embedding space.
//
//   zero-shot      argmax_i cos(audio, text_i)
//   palm           text'_i = (1 - lambda_i) text_i + lambda_i z_i with
//                  lambda_i = sigmoid(rho_i); only z and rho are learned and
//                  the text encoder runs once per class, before training
//   coop           M learnable context tokens in front of the class name,
//                  gradients flow back through the frozen toy encoder
//   cocoop         coop plus a meta-net shift of every context token
//                  conditioned on the audio embedding
//   linear         W audio + b, no text branch
//   palm+<base>    base text features mixed with z as in palm, all groups
//                  trained jointly; palm+cocoop-dagger adds the meta-net shift
//                  after the encoder (through a learned e -> d head)
//   palm-no-text   cos(audio, z_i) with z from a seeded random init
//   palm-no-context  class-name features used as-is (no learning)

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "palmlab/autodiff.hpp"
#include "palmlab/embedio.hpp"
#include "palmlab/encoders.hpp"

namespace palmlab {

enum class Method {
  kZeroShot,
  kPalm,
  kCoop,
  kCocoop,
  kLinearProbe,
  kPalmCoop,
  kPalmCocoop,
  kPalmCocoopDagger,
  kPalmNoText,
  kPalmNoContext,
};

std::string_view method_id(Method m);
/// Inverse of method_id; throws ConfigError for unknown ids.
Method parse_method(std::string_view id);
std::span<const Method> all_methods();
bool uses_encoder_gradients(Method m);

inline constexpr std::string_view kDefaultZeroShotTemplate = "This is a recording of {}";
inline constexpr std::string_view kClassNameTemplate = "{}";

/// Substitutes each class name into the single "{}" slot of `tmpl`.
std::vector<std::string> build_class_prompts(const ClassSet& classes, std::string_view tmpl);

// ---------------------------------------------------------------------------
// Training data and configuration

/// Dense N x d features with labels in [0, num_classes).
struct LabeledSet {
  Matrix features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  static LabeledSet from_dataset(const EmbeddingDataset& ds, std::span<const std::size_t> indices);
  static LabeledSet from_dataset(const EmbeddingDataset& ds);

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  /// Throws EmptyTrainSet / MissingClass.
  void require_trainable() const;
};

enum class ContextInit {
  kFromText,  // z_i = f_T(t_i): step-0 predictions equal zero-shot
  kGaussian,
};

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 0.05;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  ContextInit context_init = ContextInit::kFromText;
  std::size_t context_tokens = 16;
  std::size_t meta_hidden = 64;

  void validate() const;
};

struct TrainTrace {
  std::vector<double> loss;       // one entry per epoch, before that epoch's step
  std::size_t encoder_calls = 0;  // text-encoder forwards while fitting
};

/// Full-batch gradient descent on the mean loss produced by `loss_fn`.
/// Throws NumericalFailure on a non-finite loss.
TrainTrace run_gradient_descent(std::span<Param* const> params, const TrainConfig& config,
                                const std::function<Var(Tape&)>& loss_fn);

// ---------------------------------------------------------------------------
// Zero-shot and shared scoring

struct Logits {
  std::vector<double> scores;
  double temperature = 1.0;
};

/// scores[i] = cos(audio, text_feats[i]) / temperature. Throws DegenerateNorm.
Logits method_logits(std::span<const double> audio, const Matrix& text_feats, double temperature);

std::size_t zero_shot_predict(std::span<const double> audio, const Matrix& text_feats);

/// Text features f_T(t_i), computed once per class before any training.
struct TextFeatureCache {
  Matrix base;
  std::size_t encoder_call_count = 0;

  static TextFeatureCache from_encoder(CountingEncoder& encoder, std::span<const std::string> prompts);
  /// Precomputed features (e.g. anchors exported from a real model).
  static TextFeatureCache from_features(Matrix features);

  std::size_t num_classes() const noexcept { return base.rows(); }
};

// ---------------------------------------------------------------------------
// PALM

struct PalmParams {
  Param context;     // c x d, z_i
  Param mix_logit;   // c x 1, rho_i

  PalmParams(Matrix z, std::vector<double> rho);
  /// z_i = cache rows (kFromText) or N(0, 1/d) draws (kGaussian); rho = 0.
  static PalmParams init(const TextFeatureCache& cache, ContextInit init, std::uint64_t seed);

  std::vector<double> mixing_weights() const;  // lambda_i
  std::vector<Param*> params() { return {&context, &mix_logit}; }
};

/// (1 - sigmoid(rho_i)) * base_row + sigmoid(rho_i) * z_i on base_row's tape.
Var mix_text_feature(Var base_row, Var context, Var mix_logit, std::size_t cls);

Matrix palm_text_features(const PalmParams& params, const TextFeatureCache& cache);
Var palm_loss(Tape& tape, PalmParams& params, const TextFeatureCache& cache, const LabeledSet& data,
              double temperature);

struct PalmModel {
  PalmParams params;
  TrainTrace trace;
};

PalmModel train_palm(const LabeledSet& data, const TextFeatureCache& cache, const TrainConfig& config);
std::size_t palm_predict(std::span<const double> audio, const PalmParams& params,
                         const TextFeatureCache& cache);

// ---------------------------------------------------------------------------
// COOP / COCOOP

struct CoopParams {
  ContextTokens tokens;
  std::vector<Param*> params() { return {&tokens.ctx}; }
};

/// Context-conditioned class features, one encoder forward per class.
Matrix coop_text_features(const CoopParams& params, CountingEncoder& encoder,
                          std::span<const std::string> class_texts);
Var coop_loss(Tape& tape, CoopParams& params, CountingEncoder& encoder,
              std::span<const std::string> class_texts, const LabeledSet& data, double temperature);

struct CoopModel {
  CoopParams params;
  Matrix text_features;  // after training
  TrainTrace trace;
};

CoopModel train_coop(const LabeledSet& data, const ToyTextEncoder& encoder,
                     std::span<const std::string> class_texts, const TrainConfig& config);

struct CocoopParams {
  ContextTokens tokens;
  MetaNet net;
  std::vector<Param*> params() { return {&tokens.ctx, &net.w1, &net.b1, &net.w2, &net.b2}; }
};

Var cocoop_loss(Tape& tape, CocoopParams& params, CountingEncoder& encoder,
                std::span<const std::string> class_texts, const LabeledSet& data, double temperature);
/// Per-instance scores; costs one encoder forward per class.
std::vector<double> cocoop_scores(std::span<const double> audio, const CocoopParams& params,
                                  CountingEncoder& encoder, std::span<const std::string> class_texts,
                                  double temperature);

struct CocoopModel {
  CocoopParams params;
  TrainTrace trace;
};

CocoopModel train_cocoop(const LabeledSet& data, const ToyTextEncoder& encoder,
                         std::span<const std::string> class_texts, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Linear probe

struct LinearProbeParams {
  Param weight;  // c x d
  Param bias;    // c x 1

  LinearProbeParams(std::size_t classes, std::size_t dim);
  std::vector<Param*> params() { return {&weight, &bias}; }
  std::vector<double> scores(std::span<const double> audio) const;
};

Var linear_probe_loss(Tape& tape, LinearProbeParams& params, const LabeledSet& data);

struct LinearProbeModel {
  LinearProbeParams params;
  TrainTrace trace;
};

LinearProbeModel train_linear_probe(const LabeledSet& data, const TrainConfig& config);

// ---------------------------------------------------------------------------
// PALM on top of an input-space method

enum class JointBase { kCoop, kCocoop, kCocoopDagger };

struct JointParams {
  JointBase base;
  ContextTokens tokens;
  std::optional<MetaNet> net;   // cocoop, cocoop-dagger
  std::optional<Param> head_w;  // cocoop-dagger: d x e
  std::optional<Param> head_b;  // cocoop-dagger: d x 1
  PalmParams palm;

  std::vector<Param*> params();
};

/// Builds the joint parameter set; z is initialised to the base method's
/// step-0 class features (one encoder forward per class).
JointParams init_joint(JointBase base, CountingEncoder& encoder, std::span<const std::string> class_texts,
                       std::size_t audio_dim, const TrainConfig& config);

Var joint_loss(Tape& tape, JointParams& params, CountingEncoder& encoder,
               std::span<const std::string> class_texts, const LabeledSet& data, double temperature);
std::vector<double> joint_scores(std::span<const double> audio, const JointParams& params,
                                 CountingEncoder& encoder, std::span<const std::string> class_texts,
                                 double temperature);

struct JointModel {
  JointParams params;
  TrainTrace trace;
};

JointModel train_palm_plus(JointBase base, const LabeledSet& data, const ToyTextEncoder& encoder,
                           std::span<const std::string> class_texts, const TrainConfig& config);

// ---------------------------------------------------------------------------
// PALM ablations

enum class PalmAblation { kNoContext, kNoText };

struct NoTextParams {
  Param context;  // c x d
  NoTextParams(std::size_t classes, std::size_t dim, std::uint64_t seed);
  std::vector<Param*> params() { return {&context}; }
};

Var no_text_loss(Tape& tape, NoTextParams& params, const LabeledSet& data, double temperature);

struct NoTextModel {
  NoTextParams params;
  TrainTrace trace;
};

NoTextModel train_palm_no_text(const LabeledSet& data, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Learnable-parameter counts

struct ParamDims {
  std::size_t classes = 0;
  std::size_t dim = 1024;
  std::size_t context_tokens = 16;
  std::size_t embed_dim = 512;
  std::size_t hidden = 64;
};

struct ParamCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> groups;

  /// Size of a named group, 0 if absent.
  std::size_t group(std::string_view name) const;
};

ParamCount param_count(Method method, const ParamDims& dims);

// ---------------------------------------------------------------------------
// Uniform interface used by the benchmark harness

/// Everything a method may need besides its training data.
struct MethodContext {
  const ClassSet* classes = nullptr;
  std::size_t dim = 0;
  /// Precomputed class text features in class order; when present they
  /// replace encoder output for zero-shot, palm and palm ablations.
  std::optional<Matrix> anchors;
  const ToyTextEncoder* encoder = nullptr;
  std::string zero_shot_template = std::string(kDefaultZeroShotTemplate);
};

class Classifier {
 public:
  using ScoreFn = std::function<std::vector<double>(std::span<const double>)>;

  Classifier(ScoreFn scores, TrainTrace trace) : scores_(std::move(scores)), trace_(std::move(trace)) {}

  std::vector<double> scores(std::span<const double> audio) const { return scores_(audio); }
  /// argmax of scores(); ties resolve to the lowest class index.
  std::size_t predict(std::span<const double> audio) const;
  const TrainTrace& trace() const noexcept { return trace_; }

 private:
  ScoreFn scores_;
  TrainTrace trace_;
};

/// Trains (where applicable) and returns a ready classifier. `train` may be
/// empty for methods that do not learn.
Classifier fit_method(Method method, const LabeledSet& train, const MethodContext& ctx,
                      const TrainConfig& config);

}  // namespace palmlab
