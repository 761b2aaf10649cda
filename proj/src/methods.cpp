// Copyright 2026 The palmlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "palmlab/methods.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "palmlab/error.hpp"
#include "palmlab/rng.hpp"

namespace palmlab {

namespace {

struct MethodName {
  Method method;
  std::string_view id;
};

constexpr std::array<MethodName, 10> kMethodNames = {{
    {Method::kZeroShot, "zeroshot"},
    {Method::kPalm, "palm"},
    {Method::kCoop, "coop"},
    {Method::kCocoop, "cocoop"},
    {Method::kLinearProbe, "linear"},
    {Method::kPalmCoop, "palm+coop"},
    {Method::kPalmCocoop, "palm+cocoop"},
    {Method::kPalmCocoopDagger, "palm+cocoop-dagger"},
    {Method::kPalmNoText, "palm-no-text"},
    {Method::kPalmNoContext, "palm-no-context"},
}};

constexpr std::array<Method, 10> kAllMethods = {
    Method::kZeroShot,    Method::kPalm,     Method::kCoop,       Method::kCocoop,
    Method::kLinearProbe, Method::kPalmCoop, Method::kPalmCocoop, Method::kPalmCocoopDagger,
    Method::kPalmNoText,  Method::kPalmNoContext,
};

// Independent sub-seeds for the different parameter groups of one run.
constexpr std::uint64_t kContextSalt = 0x636f6e7465787431ULL;
constexpr std::uint64_t kMetaSalt = 0x6d6574616e657431ULL;
constexpr std::uint64_t kHeadSalt = 0x6865616431ULL;
constexpr std::uint64_t kPrototypeSalt = 0x70726f746f31ULL;

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t salt) { return splitmix64(seed ^ salt); }

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed) {
  SeededRng rng(seed);
  Matrix m(rows, cols);
  for (double& x : m.flat()) x = stddev * rng.normal();
  return m;
}

Matrix rows_to_matrix(std::span<const Var> rows) {
  Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto v = rows[i].value();
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

/// Cross-entropy of cos(audio, feats_i) / temperature against `label`.
Var cosine_xent(Var audio, std::span<const Var> feats, std::size_t label, double temperature,
                NormMode mode) {
  std::vector<Var> sims;
  sims.reserve(feats.size());
  for (Var f : feats) sims.push_back(cosine(audio, f, mode));
  return softmax_cross_entropy(scale(concat(sims), 1.0 / temperature), label);
}

/// Mean cross-entropy over `data` with class features shared by all samples.
Var mean_cosine_xent(Tape& tape, std::span<const Var> feats, const LabeledSet& data, double temperature) {
  std::vector<Var> losses;
  losses.reserve(data.size());
  for (std::size_t n = 0; n < data.size(); ++n) {
    const Var x = tape.constant(data.features.row(n));
    losses.push_back(cosine_xent(x, feats, data.labels[n], temperature, NormMode::kFloored));
  }
  return mean(losses);
}

void require_texts(std::span<const std::string> class_texts, std::size_t classes) {
  if (class_texts.size() != classes) {
    throw ShapeMismatch(std::to_string(class_texts.size()) + " class texts for " +
                        std::to_string(classes) + " classes");
  }
}

void require_dim(const LabeledSet& data, std::size_t dim, const char* what) {
  if (data.dim() != dim) {
    throw DimensionMismatch(std::string(what) + " has dimension " + std::to_string(dim) +
                            " but audio embeddings have " + std::to_string(data.dim()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Method ids

std::string_view method_id(Method m) {
  for (const auto& e : kMethodNames) {
    if (e.method == m) return e.id;
  }
  return "unknown";
}

Method parse_method(std::string_view id) {
  for (const auto& e : kMethodNames) {
    if (e.id == id) return e.method;
  }
  throw ConfigError("unknown method '" + std::string(id) + "'");
}

std::span<const Method> all_methods() { return kAllMethods; }

bool uses_encoder_gradients(Method m) {
  switch (m) {
    case Method::kCoop:
    case Method::kCocoop:
    case Method::kPalmCoop:
    case Method::kPalmCocoop:
    case Method::kPalmCocoopDagger:
      return true;
    default:
      return false;
  }
}

std::vector<std::string> build_class_prompts(const ClassSet& classes, std::string_view tmpl) {
  const auto slot = tmpl.find("{}");
  if (slot == std::string_view::npos || tmpl.find("{}", slot + 2) != std::string_view::npos) {
    throw BadTemplate("template must contain exactly one {} slot: '" + std::string(tmpl) + "'");
  }
  std::vector<std::string> prompts;
  prompts.reserve(classes.size());
  for (const auto& name : classes.names) {
    std::string p(tmpl.substr(0, slot));
    p += name;
    p += tmpl.substr(slot + 2);
    prompts.push_back(std::move(p));
  }
  return prompts;
}

// ---------------------------------------------------------------------------
// Data and config

LabeledSet LabeledSet::from_dataset(const EmbeddingDataset& ds, std::span<const std::size_t> indices) {
  LabeledSet set;
  set.num_classes = ds.classes.size();
  set.features = Matrix(indices.size(), ds.dim);
  set.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& rec = ds.records.at(indices[k]);
    std::copy(rec.vector.begin(), rec.vector.end(), set.features.row(k).begin());
    set.labels.push_back(rec.label);
  }
  return set;
}

LabeledSet LabeledSet::from_dataset(const EmbeddingDataset& ds) {
  std::vector<std::size_t> all(ds.records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return from_dataset(ds, all);
}

void LabeledSet::require_trainable() const {
  if (labels.empty()) throw EmptyTrainSet("training set has no samples");
  std::vector<bool> seen(num_classes, false);
  for (std::size_t y : labels) {
    if (y >= num_classes) throw IndexOutOfRange("label " + std::to_string(y));
    seen[y] = true;
  }
  for (std::size_t i = 0; i < num_classes; ++i) {
    if (!seen[i]) throw MissingClass("class " + std::to_string(i) + " has no training sample");
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be positive");
  }
  if (context_tokens < 1) throw ConfigError("context token count must be >= 1");
  if (meta_hidden < 1) throw ConfigError("meta-net hidden width must be >= 1");
}

TrainTrace run_gradient_descent(std::span<Param* const> params, const TrainConfig& config,
                                const std::function<Var(Tape&)>& loss_fn) {
  config.validate();
  TrainTrace trace;
  trace.loss.reserve(config.epochs);
  zero_grad(params);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    {
      Tape tape;
      const Var loss = loss_fn(tape);
      const double value = loss.scalar();
      if (!std::isfinite(value)) {
        throw NumericalFailure("non-finite loss at epoch " + std::to_string(epoch));
      }
      trace.loss.push_back(value);
      tape.backward(loss);
    }
    for (const Param* p : params) {
      if (!all_finite(p->grad.flat())) {
        throw NumericalFailure("non-finite gradient at epoch " + std::to_string(epoch));
      }
    }
    sgd_step(params, config.lr);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Zero-shot

Logits method_logits(std::span<const double> audio, const Matrix& text_feats, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (text_feats.cols() != audio.size()) {
    throw DimensionMismatch("text features have dimension " + std::to_string(text_feats.cols()) +
                            ", audio has " + std::to_string(audio.size()));
  }
  Logits out;
  out.temperature = temperature;
  out.scores.reserve(text_feats.rows());
  for (std::size_t i = 0; i < text_feats.rows(); ++i) {
    out.scores.push_back(cosine_sim(audio, text_feats.row(i)) / temperature);
  }
  return out;
}

std::size_t zero_shot_predict(std::span<const double> audio, const Matrix& text_feats) {
  return argmax(method_logits(audio, text_feats, 1.0).scores);
}

TextFeatureCache TextFeatureCache::from_encoder(CountingEncoder& encoder,
                                                std::span<const std::string> prompts) {
  if (prompts.empty()) throw ConfigError("no prompts to encode");
  const std::size_t before = encoder.forward_count();
  TextFeatureCache cache;
  cache.base = Matrix(prompts.size(), encoder.encoder().out_dim());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto f = encoder.encode_text(prompts[i]);
    std::copy(f.begin(), f.end(), cache.base.row(i).begin());
  }
  cache.encoder_call_count = encoder.forward_count() - before;
  return cache;
}

TextFeatureCache TextFeatureCache::from_features(Matrix features) {
  if (features.rows() < 2 || features.cols() < 1) throw ShapeMismatch("need at least 2 class features");
  if (!all_finite(features.flat())) throw NumericalFailure("non-finite text feature");
  TextFeatureCache cache;
  cache.base = std::move(features);
  return cache;
}

// ---------------------------------------------------------------------------
// PALM

PalmParams::PalmParams(Matrix z, std::vector<double> rho)
    : context(std::move(z)), mix_logit(Matrix::column(rho)) {
  if (context.value.rows() != mix_logit.value.rows()) {
    throw ShapeMismatch("one mixing weight per class is required");
  }
}

PalmParams PalmParams::init(const TextFeatureCache& cache, ContextInit init, std::uint64_t seed) {
  const std::size_t c = cache.base.rows(), d = cache.base.cols();
  Matrix z = init == ContextInit::kFromText
                 ? cache.base
                 : gaussian_matrix(c, d, 1.0 / std::sqrt(static_cast<double>(d)),
                                   sub_seed(seed, kPrototypeSalt));
  return PalmParams(std::move(z), std::vector<double>(c, 0.0));
}

std::vector<double> PalmParams::mixing_weights() const {
  std::vector<double> lambdas;
  for (double rho : mix_logit.value.flat()) {
    lambdas.push_back(rho >= 0 ? 1.0 / (1.0 + std::exp(-rho)) : std::exp(rho) / (1.0 + std::exp(rho)));
  }
  return lambdas;
}

Var mix_text_feature(Var base_row, Var context, Var mix_logit, std::size_t cls) {
  const Var rho = row(mix_logit, cls);
  const Var keep = sigmoid(scale(rho, -1.0));  // 1 - lambda
  const Var lambda = sigmoid(rho);
  return add(scale(base_row, keep), scale(row(context, cls), lambda));
}

namespace {

std::vector<Var> palm_feature_rows(Tape& tape, Var z, Var rho, const TextFeatureCache& cache) {
  const Var base = tape.constant(cache.base);
  std::vector<Var> rows;
  for (std::size_t i = 0; i < cache.base.rows(); ++i) {
    rows.push_back(mix_text_feature(row(base, i), z, rho, i));
  }
  return rows;
}

void require_palm_shapes(const PalmParams& params, const TextFeatureCache& cache) {
  if (params.context.value.rows() != cache.base.rows() ||
      params.context.value.cols() != cache.base.cols()) {
    throw ShapeMismatch("PALM context does not match the text feature cache");
  }
}

}  // namespace

Matrix palm_text_features(const PalmParams& params, const TextFeatureCache& cache) {
  require_palm_shapes(params, cache);
  Tape tape;
  return rows_to_matrix(palm_feature_rows(tape, tape.leaf(params.context), tape.leaf(params.mix_logit), cache));
}

Var palm_loss(Tape& tape, PalmParams& params, const TextFeatureCache& cache, const LabeledSet& data,
              double temperature) {
  require_palm_shapes(params, cache);
  require_dim(data, cache.base.cols(), "text feature cache");
  const auto feats = palm_feature_rows(tape, tape.leaf(params.context), tape.leaf(params.mix_logit), cache);
  return mean_cosine_xent(tape, feats, data, temperature);
}

PalmModel train_palm(const LabeledSet& data, const TextFeatureCache& cache, const TrainConfig& config) {
  config.validate();
  data.require_trainable();
  if (cache.num_classes() != data.num_classes) {
    throw ShapeMismatch("text feature cache has " + std::to_string(cache.num_classes()) +
                        " classes, data has " + std::to_string(data.num_classes));
  }
  require_dim(data, cache.base.cols(), "text feature cache");
  PalmModel model{PalmParams::init(cache, config.context_init, config.seed), {}};
  auto params = model.params.params();
  model.trace = run_gradient_descent(params, config, [&](Tape& tape) {
    return palm_loss(tape, model.params, cache, data, config.temperature);
  });
  // The encoder is never touched inside the loop; its only cost is the cache.
  model.trace.encoder_calls = cache.encoder_call_count;
  return model;
}

std::size_t palm_predict(std::span<const double> audio, const PalmParams& params,
                         const TextFeatureCache& cache) {
  return zero_shot_predict(audio, palm_text_features(params, cache));
}

// ---------------------------------------------------------------------------
// COOP

Matrix coop_text_features(const CoopParams& params, CountingEncoder& encoder,
                          std::span<const std::string> class_texts) {
  Tape tape;
  const Var ctx = tape.leaf(params.tokens.ctx);
  std::vector<Var> rows;
  for (const auto& text : class_texts) rows.push_back(encoder.encode(tape, ctx, text));
  return rows_to_matrix(rows);
}

Var coop_loss(Tape& tape, CoopParams& params, CountingEncoder& encoder,
              std::span<const std::string> class_texts, const LabeledSet& data, double temperature) {
  require_texts(class_texts, data.num_classes);
  require_dim(data, encoder.encoder().out_dim(), "text encoder");
  const Var ctx = tape.leaf(params.tokens.ctx);
  std::vector<Var> feats;
  for (const auto& text : class_texts) {
    feats.push_back(encoder.encode(tape, ctx, text, std::nullopt, NormMode::kFloored));
  }
  return mean_cosine_xent(tape, feats, data, temperature);
}

CoopModel train_coop(const LabeledSet& data, const ToyTextEncoder& encoder,
                     std::span<const std::string> class_texts, const TrainConfig& config) {
  config.validate();
  data.require_trainable();
  require_texts(class_texts, data.num_classes);
  CountingEncoder counter(encoder);
  CoopModel model{CoopParams{ContextTokens(config.context_tokens, encoder.embed_dim(),
                                           sub_seed(config.seed, kContextSalt))},
                  {}, {}};
  auto params = model.params.params();
  model.trace = run_gradient_descent(params, config, [&](Tape& tape) {
    return coop_loss(tape, model.params, counter, class_texts, data, config.temperature);
  });
  model.text_features = coop_text_features(model.params, counter, class_texts);
  model.trace.encoder_calls = counter.forward_count();
  return model;
}

// ---------------------------------------------------------------------------
// COCOOP

Var cocoop_loss(Tape& tape, CocoopParams& params, CountingEncoder& encoder,
                std::span<const std::string> class_texts, const LabeledSet& data, double temperature) {
  require_texts(class_texts, data.num_classes);
  require_dim(data, encoder.encoder().out_dim(), "text encoder");
  const Var ctx = tape.leaf(params.tokens.ctx);
  std::vector<Var> losses;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const Var x = tape.constant(data.features.row(n));
    const Var shift = params.net.forward(tape, x);
    std::vector<Var> feats;
    for (const auto& text : class_texts) {
      feats.push_back(encoder.encode(tape, ctx, text, shift, NormMode::kFloored));
    }
    losses.push_back(cosine_xent(x, feats, data.labels[n], temperature, NormMode::kFloored));
  }
  return mean(losses);
}

std::vector<double> cocoop_scores(std::span<const double> audio, const CocoopParams& params,
                                  CountingEncoder& encoder, std::span<const std::string> class_texts,
                                  double temperature) {
  Tape tape;
  const Var ctx = tape.leaf(params.tokens.ctx);
  const Var shift = tape.constant(params.net.forward(audio));
  std::vector<Var> feats;
  for (const auto& text : class_texts) feats.push_back(encoder.encode(tape, ctx, text, shift));
  return method_logits(audio, rows_to_matrix(feats), temperature).scores;
}

CocoopModel train_cocoop(const LabeledSet& data, const ToyTextEncoder& encoder,
                         std::span<const std::string> class_texts, const TrainConfig& config) {
  config.validate();
  data.require_trainable();
  require_texts(class_texts, data.num_classes);
  CountingEncoder counter(encoder);
  CocoopModel model{
      CocoopParams{ContextTokens(config.context_tokens, encoder.embed_dim(), sub_seed(config.seed, kContextSalt)),
                   MetaNet(data.dim(), config.meta_hidden, encoder.embed_dim(), sub_seed(config.seed, kMetaSalt))},
      {}};
  auto params = model.params.params();
  model.trace = run_gradient_descent(params, config, [&](Tape& tape) {
    return cocoop_loss(tape, model.params, counter, class_texts, data, config.temperature);
  });
  model.trace.encoder_calls = counter.forward_count();
  return model;
}

// ---------------------------------------------------------------------------
// Linear probe

LinearProbeParams::LinearProbeParams(std::size_t classes, std::size_t dim)
    : weight(Matrix(classes, dim)), bias(Matrix(classes, 1)) {}

std::vector<double> LinearProbeParams::scores(std::span<const double> audio) const {
  if (audio.size() != weight.value.cols()) {
    throw DimensionMismatch("linear probe expects dimension " + std::to_string(weight.value.cols()));
  }
  std::vector<double> out(weight.value.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = dot(weight.value.row(i), audio) + bias.value(i, 0);
  }
  return out;
}

Var linear_probe_loss(Tape& tape, LinearProbeParams& params, const LabeledSet& data) {
  require_dim(data, params.weight.value.cols(), "linear probe");
  const Var w = tape.leaf(params.weight);
  const Var b = tape.leaf(params.bias);
  std::vector<Var> losses;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const Var x = tape.constant(data.features.row(n));
    losses.push_back(softmax_cross_entropy(add(matvec(w, x), b), data.labels[n]));
  }
  return mean(losses);
}

LinearProbeModel train_linear_probe(const LabeledSet& data, const TrainConfig& config) {
  config.validate();
  data.require_trainable();
  LinearProbeModel model{LinearProbeParams(data.num_classes, data.dim()), {}};
  auto params = model.params.params();
  model.trace = run_gradient_descent(params, config, [&](Tape& tape) {
    return linear_probe_loss(tape, model.params, data);
  });
  return model;
}

// ---------------------------------------------------------------------------
// PALM + input-space baselines

std::vector<Param*> JointParams::params() {
  std::vector<Param*> out = {&tokens.ctx};
  if (net) {
    for (Param* p : net->params()) out.push_back(p);
  }
  if (head_w) out.push_back(&*head_w);
  if (head_b) out.push_back(&*head_b);
  out.push_back(&palm.context);
  out.push_back(&palm.mix_logit);
  return out;
}

JointParams init_joint(JointBase base, CountingEncoder& encoder, std::span<const std::string> class_texts,
                       std::size_t audio_dim, const TrainConfig& config) {
  const std::size_t e = encoder.encoder().embed_dim();
  const std::size_t d = encoder.encoder().out_dim();
  ContextTokens tokens(config.context_tokens, e, sub_seed(config.seed, kContextSalt));
  const Matrix initial = coop_text_features(CoopParams{tokens}, encoder, class_texts);
  const auto cache = TextFeatureCache::from_features(initial);
  JointParams jp{base, std::move(tokens), std::nullopt, std::nullopt, std::nullopt,
                 PalmParams::init(cache, config.context_init, config.seed)};
  if (base != JointBase::kCoop) {
    jp.net.emplace(audio_dim, config.meta_hidden, e, sub_seed(config.seed, kMetaSalt));
  }
  if (base == JointBase::kCocoopDagger) {
    jp.head_w.emplace(gaussian_matrix(d, e, 1.0 / std::sqrt(static_cast<double>(e)),
                                      sub_seed(config.seed, kHeadSalt)));
    jp.head_b.emplace(Matrix(d, 1));
  }
  return jp;
}

namespace {

/// Mixed per-class features for one sample (or for all samples when the base
/// does not depend on the audio). `base_rows` are the encoder outputs.
std::vector<Var> joint_mixed_rows(Var z, Var rho, std::span<const Var> base_rows,
                                  std::optional<Var> post_shift) {
  std::vector<Var> rows;
  for (std::size_t i = 0; i < base_rows.size(); ++i) {
    const Var f = post_shift ? add(base_rows[i], *post_shift) : base_rows[i];
    rows.push_back(mix_text_feature(f, z, rho, i));
  }
  return rows;
}

void require_joint_shape(const JointParams& jp) {
  const bool wants_net = jp.base != JointBase::kCoop;
  const bool wants_head = jp.base == JointBase::kCocoopDagger;
  if (jp.net.has_value() != wants_net || jp.head_w.has_value() != wants_head ||
      jp.head_b.has_value() != wants_head) {
    throw ShapeMismatch("joint parameters do not match their base method");
  }
}

}  // namespace

Var joint_loss(Tape& tape, JointParams& jp, CountingEncoder& encoder,
               std::span<const std::string> class_texts, const LabeledSet& data, double temperature) {
  require_joint_shape(jp);
  require_texts(class_texts, data.num_classes);
  require_dim(data, encoder.encoder().out_dim(), "text encoder");
  const Var ctx = tape.leaf(jp.tokens.ctx);
  const Var z = tape.leaf(jp.palm.context);
  const Var rho = tape.leaf(jp.palm.mix_logit);

  auto encode_all = [&](std::optional<Var> shift) {
    std::vector<Var> rows;
    for (const auto& text : class_texts) {
      rows.push_back(encoder.encode(tape, ctx, text, shift, NormMode::kFloored));
    }
    return rows;
  };

  if (jp.base == JointBase::kCoop) {
    const auto base_rows = encode_all(std::nullopt);
    return mean_cosine_xent(tape, joint_mixed_rows(z, rho, base_rows, std::nullopt), data, temperature);
  }

  std::vector<Var> shared_rows;
  std::optional<Var> head_w, head_b;
  if (jp.base == JointBase::kCocoopDagger) {
    shared_rows = encode_all(std::nullopt);
    head_w = tape.leaf(*jp.head_w);
    head_b = tape.leaf(*jp.head_b);
  }

  std::vector<Var> losses;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const Var x = tape.constant(data.features.row(n));
    const Var meta = jp.net->forward(tape, x);
    std::vector<Var> mixed;
    if (jp.base == JointBase::kCocoop) {
      mixed = joint_mixed_rows(z, rho, encode_all(meta), std::nullopt);
    } else {
      const Var post = add(matvec(*head_w, meta), *head_b);
      mixed = joint_mixed_rows(z, rho, shared_rows, post);
    }
    losses.push_back(cosine_xent(x, mixed, data.labels[n], temperature, NormMode::kFloored));
  }
  return mean(losses);
}

std::vector<double> joint_scores(std::span<const double> audio, const JointParams& jp,
                                 CountingEncoder& encoder, std::span<const std::string> class_texts,
                                 double temperature) {
  require_joint_shape(jp);
  Tape tape;
  const Var ctx = tape.leaf(jp.tokens.ctx);
  const Var z = tape.leaf(jp.palm.context);
  const Var rho = tape.leaf(jp.palm.mix_logit);
  std::optional<Var> shift;
  std::optional<Var> post;
  if (jp.base == JointBase::kCocoop) {
    shift = tape.constant(jp.net->forward(audio));
  } else if (jp.base == JointBase::kCocoopDagger) {
    const Var meta = tape.constant(jp.net->forward(audio));
    post = add(matvec(tape.leaf(*jp.head_w), meta), tape.leaf(*jp.head_b));
  }
  std::vector<Var> mixed;
  for (std::size_t i = 0; i < class_texts.size(); ++i) {
    Var f = encoder.encode(tape, ctx, class_texts[i], shift);
    if (post) f = add(f, *post);
    mixed.push_back(mix_text_feature(f, z, rho, i));
  }
  return method_logits(audio, rows_to_matrix(mixed), temperature).scores;
}

JointModel train_palm_plus(JointBase base, const LabeledSet& data, const ToyTextEncoder& encoder,
                           std::span<const std::string> class_texts, const TrainConfig& config) {
  config.validate();
  data.require_trainable();
  require_texts(class_texts, data.num_classes);
  require_dim(data, encoder.out_dim(), "text encoder");
  CountingEncoder counter(encoder);
  JointModel model{init_joint(base, counter, class_texts, data.dim(), config), {}};
  auto params = model.params.params();
  model.trace = run_gradient_descent(params, config, [&](Tape& tape) {
    return joint_loss(tape, model.params, counter, class_texts, data, config.temperature);
  });
  model.trace.encoder_calls = counter.forward_count();
  return model;
}

// ---------------------------------------------------------------------------
// Ablations

NoTextParams::NoTextParams(std::size_t classes, std::size_t dim, std::uint64_t seed)
    : context(gaussian_matrix(classes, dim, 1.0 / std::sqrt(static_cast<double>(dim)),
                              sub_seed(seed, kPrototypeSalt))) {}

Var no_text_loss(Tape& tape, NoTextParams& params, const LabeledSet& data, double temperature) {
  require_dim(data, params.context.value.cols(), "prototype matrix");
  const Var z = tape.leaf(params.context);
  std::vector<Var> feats;
  for (std::size_t i = 0; i < params.context.value.rows(); ++i) feats.push_back(row(z, i));
  return mean_cosine_xent(tape, feats, data, temperature);
}

NoTextModel train_palm_no_text(const LabeledSet& data, const TrainConfig& config) {
  config.validate();
  data.require_trainable();
  NoTextModel model{NoTextParams(data.num_classes, data.dim(), config.seed), {}};
  auto params = model.params.params();
  model.trace = run_gradient_descent(params, config, [&](Tape& tape) {
    return no_text_loss(tape, model.params, data, config.temperature);
  });
  return model;
}

// ---------------------------------------------------------------------------
// Parameter counts

std::size_t ParamCount::group(std::string_view name) const {
  for (const auto& [n, v] : groups) {
    if (n == name) return v;
  }
  return 0;
}

ParamCount param_count(Method method, const ParamDims& dims) {
  const std::size_t c = dims.classes, d = dims.dim, m = dims.context_tokens, e = dims.embed_dim,
                    h = dims.hidden;
  ParamCount pc;
  auto add_group = [&pc](std::string name, std::size_t n) { pc.groups.emplace_back(std::move(name), n); };
  auto palm_groups = [&] {
    add_group("context vectors", c * d);
    add_group("mixing weights", c);
  };
  switch (method) {
    case Method::kZeroShot:
    case Method::kPalmNoContext:
      break;
    case Method::kPalm:
      palm_groups();
      break;
    case Method::kCoop:
      add_group("context tokens", m * e);
      break;
    case Method::kCocoop:
      add_group("context tokens", m * e);
      add_group("meta-net", d * h + h + h * e + e);
      break;
    case Method::kLinearProbe:
      add_group("weights", c * d);
      add_group("biases", c);
      break;
    case Method::kPalmCoop:
      add_group("context tokens", m * e);
      palm_groups();
      break;
    case Method::kPalmCocoop:
      add_group("context tokens", m * e);
      add_group("meta-net", d * h + h + h * e + e);
      palm_groups();
      break;
    case Method::kPalmCocoopDagger:
      add_group("context tokens", m * e);
      add_group("meta-net", d * h + h + h * e + e);
      add_group("feature head", e * d + d);
      palm_groups();
      break;
    case Method::kPalmNoText:
      add_group("context vectors", c * d);
      break;
  }
  for (const auto& g : pc.groups) pc.total += g.second;
  return pc;
}

// ---------------------------------------------------------------------------
// Uniform fitting

std::size_t Classifier::predict(std::span<const double> audio) const { return argmax(scores(audio)); }

namespace {

const ToyTextEncoder& require_encoder(const MethodContext& ctx, Method m) {
  if (ctx.encoder == nullptr) {
    throw ConfigError("method '" + std::string(method_id(m)) + "' needs a text encoder");
  }
  if (ctx.encoder->out_dim() != ctx.dim) {
    throw DimensionMismatch("text encoder output dimension " + std::to_string(ctx.encoder->out_dim()) +
                            " != audio dimension " + std::to_string(ctx.dim));
  }
  return *ctx.encoder;
}

TextFeatureCache class_feature_cache(const MethodContext& ctx, Method m, std::string_view tmpl) {
  if (ctx.anchors) {
    if (ctx.anchors->rows() != ctx.classes->size() || ctx.anchors->cols() != ctx.dim) {
      throw DimensionMismatch("anchor matrix shape does not match the dataset");
    }
    return TextFeatureCache::from_features(*ctx.anchors);
  }
  CountingEncoder counter(require_encoder(ctx, m));
  return TextFeatureCache::from_encoder(counter, build_class_prompts(*ctx.classes, tmpl));
}

Classifier table_classifier(Matrix feats, double temperature, TrainTrace trace) {
  return Classifier(
      [feats = std::move(feats), temperature](std::span<const double> audio) {
        return method_logits(audio, feats, temperature).scores;
      },
      std::move(trace));
}

}  // namespace

Classifier fit_method(Method method, const LabeledSet& train, const MethodContext& ctx,
                      const TrainConfig& config) {
  config.validate();
  if (ctx.classes == nullptr) throw ConfigError("method context has no class set");
  const double tau = config.temperature;
  const auto class_texts = build_class_prompts(*ctx.classes, kClassNameTemplate);

  switch (method) {
    case Method::kZeroShot:
    case Method::kPalmNoContext: {
      const auto tmpl = method == Method::kZeroShot ? std::string_view(ctx.zero_shot_template)
                                                    : kClassNameTemplate;
      auto cache = class_feature_cache(ctx, method, tmpl);
      TrainTrace trace;
      trace.encoder_calls = cache.encoder_call_count;
      return table_classifier(std::move(cache.base), tau, std::move(trace));
    }
    case Method::kPalm: {
      train.require_trainable();
      const auto cache = class_feature_cache(ctx, method, kClassNameTemplate);
      auto model = train_palm(train, cache, config);
      return table_classifier(palm_text_features(model.params, cache), tau, std::move(model.trace));
    }
    case Method::kPalmNoText: {
      auto model = train_palm_no_text(train, config);
      return table_classifier(model.params.context.value, tau, std::move(model.trace));
    }
    case Method::kLinearProbe: {
      auto model = train_linear_probe(train, config);
      auto params = std::make_shared<LinearProbeParams>(std::move(model.params));
      return Classifier([params](std::span<const double> audio) { return params->scores(audio); },
                        std::move(model.trace));
    }
    case Method::kCoop: {
      auto model = train_coop(train, require_encoder(ctx, method), class_texts, config);
      return table_classifier(std::move(model.text_features), tau, std::move(model.trace));
    }
    case Method::kCocoop: {
      const auto& encoder = require_encoder(ctx, method);
      auto model = train_cocoop(train, encoder, class_texts, config);
      auto params = std::make_shared<CocoopParams>(std::move(model.params));
      auto counter = std::make_shared<CountingEncoder>(encoder);
      return Classifier(
          [params, counter, class_texts, tau](std::span<const double> audio) {
            return cocoop_scores(audio, *params, *counter, class_texts, tau);
          },
          std::move(model.trace));
    }
    case Method::kPalmCoop:
    case Method::kPalmCocoop:
    case Method::kPalmCocoopDagger: {
      const auto& encoder = require_encoder(ctx, method);
      const JointBase base = method == Method::kPalmCoop     ? JointBase::kCoop
                             : method == Method::kPalmCocoop ? JointBase::kCocoop
                                                             : JointBase::kCocoopDagger;
      auto model = train_palm_plus(base, train, encoder, class_texts, config);
      auto params = std::make_shared<JointParams>(std::move(model.params));
      auto counter = std::make_shared<CountingEncoder>(encoder);
      if (base == JointBase::kCoop) {
        // Audio-independent features: score once against a fixed table.
        const Matrix feats = [&] {
          Tape tape;
          const Var z = tape.leaf(params->palm.context);
          const Var rho = tape.leaf(params->palm.mix_logit);
          const Var ctx_var = tape.leaf(params->tokens.ctx);
          std::vector<Var> rows;
          for (std::size_t i = 0; i < class_texts.size(); ++i) {
            rows.push_back(mix_text_feature(counter->encode(tape, ctx_var, class_texts[i]), z, rho, i));
          }
          return rows_to_matrix(rows);
        }();
        return table_classifier(feats, tau, std::move(model.trace));
      }
      return Classifier(
          [params, counter, class_texts, tau](std::span<const double> audio) {
            return joint_scores(audio, *params, *counter, class_texts, tau);
          },
          std::move(model.trace));
    }
  }
  throw ConfigError("unhandled method");
}

}  // namespace palmlab
