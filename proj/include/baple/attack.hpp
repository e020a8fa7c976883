#pragma once

// Backdoor injection through prompt learning. The frozen dual encoder is only
// read; the learnable state is the shared prompt prefix P and the
// full-image trigger noise delta, optimized jointly:
//
//   L = lambda_c * mean CE(tau * sim(f_I(x), f_T(t)), y)            over the clean batch
//     + lambda_p * mean CE(tau * sim(f_I(B(x)), f_T(t)), eta(y))    over the poison batch
//
// with B(x) = (x + delta) (+) p and |delta|_inf <= epsilon.

#include <chrono>
#include <functional>
#include <iomanip>
#include <map>
#include <variant>

#include "baple/model.hpp"
#include "baple/poison.hpp"
#include "baple/triggers.hpp"

namespace baple {

struct AttackConfig {
  double lambda_clean = 1.0;
  double lambda_poison = 1.0;
  double prompt_lr = 0.02;
  double noise_lr = 0.01;
  double epsilon = 8.0 / 255.0;
  int epochs = 50;
  int batch_size = 16;
  std::uint64_t seed = 0;
  int prompt_length = 4;
  double prompt_init_std = 0.02;
  bool keep_template = false;
  bool use_noise = true;
  std::optional<PatchSpec> patch;
  nn::OptimizerKind optimizer = nn::OptimizerKind::sgd;

  void validate() const {
    if (!(prompt_lr > 0)) throw ConfigError("attack.prompt_lr", "must be > 0");
    if (!(noise_lr > 0)) throw ConfigError("attack.noise_lr", "must be > 0");
    if (!(epsilon >= 0)) throw ConfigError("trigger.epsilon", "must be >= 0");
    if (!(lambda_clean >= 0)) throw ConfigError("attack.lambda_clean", "must be >= 0");
    if (!(lambda_poison >= 0)) throw ConfigError("attack.lambda_poison", "must be >= 0");
    if (!(lambda_clean + lambda_poison > 0)) throw ConfigError("attack.lambda_clean", "lambda_clean + lambda_poison must be > 0");
    if (epochs < 0) throw ConfigError("attack.epochs", "must be >= 0");
    if (batch_size < 1) throw ConfigError("attack.batch_size", "must be >= 1");
    if (prompt_length < 0) throw ConfigError("attack.prompt_length", "must be >= 0");
  }
};

struct EpochTrace {
  int epoch = 0;
  double clean = 0.0;   // weighted clean term, averaged over steps
  double poison = 0.0;  // weighted poison term, averaged over steps
  double total() const { return clean + poison; }
  friend bool operator==(const EpochTrace&, const EpochTrace&) = default;
};

struct AttackResult {
  PromptState prompt;
  NoiseState noise;
  std::vector<EpochTrace> trace;
  double wall_seconds = 0.0;
  AttackConfig config;
  std::string encoder_checksum;
  std::vector<std::string> warnings;
};

class AttackAborted : public NumericalError {
 public:
  AttackAborted(const std::string& what, AttackResult partial) : NumericalError(what), partial_(std::move(partial)) {}
  const AttackResult& partial() const noexcept { return partial_; }

 private:
  AttackResult partial_;
};

struct AttackGradients {
  double clean_term = 0.0;
  double poison_term = 0.0;
  MatrixXd prompt;   // e x M
  Image noise;       // same shape as delta; empty when delta is not learnable
  double total() const { return clean_term + poison_term; }
};

// Triggered poison inputs for one step. `jacobian` holds dB(x)/d(delta) per
// pixel and is empty when the trigger has no learnable part.
struct PoisonInputs {
  MatrixXd pixels;    // D x Bp
  MatrixXd jacobian;  // D x Bp or empty
  std::vector<LabelId> labels;
};

namespace detail {

inline std::string batch_fingerprint(const MatrixXd& clean_features, const PoisonInputs& poison) {
  Fnv1a h;
  h.update(clean_features.data(), static_cast<std::size_t>(clean_features.size()) * sizeof(double));
  h.update(poison.pixels.data(), static_cast<std::size_t>(poison.pixels.size()) * sizeof(double));
  return h.hex();
}

}  // namespace detail

// Loss and gradients given precomputed clean image features (d x Bc).
inline AttackGradients attack_loss_from_features(const DualEncoder& enc, const ClassPromptSet& prompts,
                                                 const MatrixXd& clean_features, std::span<const LabelId> clean_labels,
                                                 const PoisonInputs& poison, double lambda_clean, double lambda_poison,
                                                 const Image* noise_shape) {
  check_class_count(enc, prompts);
  const double tau = enc.config.logit_scale;
  std::vector<TextTrace> traces;
  const MatrixXd text = class_text_features(enc, prompts, &traces);
  MatrixXd grad_text = MatrixXd::Zero(text.rows(), text.cols());

  AttackGradients out;
  if (clean_features.cols() > 0) {
    MatrixXd g;
    out.clean_term = lambda_clean * nn::softmax_cross_entropy(tau * text.transpose() * clean_features, clean_labels, &g);
    grad_text.noalias() += (lambda_clean * tau) * clean_features * g.transpose();
  }

  const bool learn_noise = poison.jacobian.size() > 0 && noise_shape != nullptr;
  if (noise_shape) out.noise = Image(noise_shape->height, noise_shape->width, noise_shape->channels);
  if (poison.pixels.cols() > 0) {
    ImageTrace itrace;
    const MatrixXd pf = encode_image_batch(enc, poison.pixels, learn_noise ? &itrace : nullptr);
    MatrixXd g;
    out.poison_term = lambda_poison * nn::softmax_cross_entropy(tau * text.transpose() * pf, poison.labels, &g);
    grad_text.noalias() += (lambda_poison * tau) * pf * g.transpose();
    if (learn_noise) {
      const MatrixXd grad_pf = (lambda_poison * tau) * text * g;
      const MatrixXd grad_px = encode_image_batch_backward(enc, itrace, grad_pf, nullptr, true);
      Eigen::Map<VectorXd> gd(out.noise.pixels.data(), static_cast<Eigen::Index>(out.noise.pixels.size()));
      gd = grad_px.cwiseProduct(poison.jacobian).rowwise().sum();
    }
  }

  if (!std::isfinite(out.total()))
    throw NumericalError("non-finite attack loss for batch " + detail::batch_fingerprint(clean_features, poison));

  class_text_backward(enc, prompts, traces, grad_text, nullptr, &out.prompt);
  return out;
}

inline PoisonInputs make_poison_inputs(const DualEncoder& enc, std::span<const Image* const> images, LabelId target,
                                       const NoiseState* noise, const PatchSpec& patch, bool with_jacobian) {
  PoisonInputs in;
  in.pixels.resize(enc.config.image_input_dim(), static_cast<Eigen::Index>(images.size()));
  if (with_jacobian) in.jacobian.resize(in.pixels.rows(), in.pixels.cols());
  static const NoiseState kNoNoise{};
  const NoiseState& n = noise ? *noise : kNoNoise;
  for (std::size_t j = 0; j < images.size(); ++j) {
    check_image_shape(enc.config, *images[j]);
    const Image bx = inject_backdoor(*images[j], n, patch);
    in.pixels.col(static_cast<Eigen::Index>(j)) = image_to_vector(bx);
    if (with_jacobian) {
      const auto jac = injection_jacobian(*images[j], n, patch);
      in.jacobian.col(static_cast<Eigen::Index>(j)) =
          Eigen::Map<const VectorXd>(jac.data(), static_cast<Eigen::Index>(jac.size()));
    }
    in.labels.push_back(target);
  }
  return in;
}

// Loss of the prompt-learning backdoor objective with gradients w.r.t. P and delta.
inline AttackGradients attack_loss(const DualEncoder& enc, const ClassPromptSet& prompts, const NoiseState& noise,
                                   const PatchSpec& patch, std::span<const Image* const> clean_images,
                                   std::span<const LabelId> clean_labels, std::span<const Image* const> poison_images,
                                   const TargetLabelFn& eta, double lambda_clean, double lambda_poison) {
  if (clean_images.size() != clean_labels.size()) throw DimensionError("clean batch images/labels size mismatch");
  const MatrixXd clean_features =
      clean_images.empty() ? MatrixXd(enc.config.feature_dim, 0) : encode_image_batch(enc, images_to_matrix(enc.config, clean_images));
  const PoisonInputs poison = make_poison_inputs(enc, poison_images, eta.target, &noise, patch, true);
  return attack_loss_from_features(enc, prompts, clean_features, clean_labels, poison, lambda_clean, lambda_poison,
                                   &noise.delta);
}

struct AttackState {
  std::shared_ptr<PromptState> prompt;
  NoiseState noise;
};

// Applies P <- P - alpha * dP, delta <- delta - beta * d(delta), then the
// budget clip, in that order. With the adaptive optimizer the raw steps are
// replaced by Adam steps; the clip is still last.
class AttackStepper {
 public:
  explicit AttackStepper(const AttackConfig& cfg)
      : prompt_opt_(cfg.optimizer, cfg.prompt_lr), noise_opt_(cfg.optimizer, cfg.noise_lr), update_noise_(cfg.use_noise) {}

  void step(AttackState& state, const AttackGradients& g) {
    if (state.prompt && state.prompt->tokens.size() > 0) {
      MatrixXd gp = g.prompt;
      prompt_opt_.step({{state.prompt->tokens.data(), state.prompt->tokens.size()}}, {{gp.data(), gp.size()}});
    }
    if (update_noise_ && g.noise.size() == state.noise.delta.size() && g.noise.size() > 0) {
      auto gn = g.noise.pixels;
      noise_opt_.step({{state.noise.delta.pixels.data(), static_cast<Eigen::Index>(gn.size())}},
                      {{gn.data(), static_cast<Eigen::Index>(gn.size())}});
    }
    state.noise = clip_noise(std::move(state.noise));
  }

 private:
  nn::Optimizer prompt_opt_, noise_opt_;
  bool update_noise_;
};

inline void baple_step(AttackState& state, const AttackGradients& g, const AttackConfig& cfg) {
  AttackConfig plain = cfg;
  plain.optimizer = nn::OptimizerKind::sgd;
  AttackStepper(plain).step(state, g);
}

// Poison-side trigger used during prompt learning.
struct LearnableTrigger {};                                   // B(x) with live delta and config.patch
using FixedTrigger = std::function<Image(const Image&)>;       // baseline trigger functions
using PoisonTrigger = std::variant<LearnableTrigger, FixedTrigger>;

// Prompt learning on the poisoned few-shot subset. With LearnableTrigger this
// is the joint prompt + noise attack; with a FixedTrigger only P is learned
// (baseline PL attacks); with an empty poison pool it is clean prompt tuning.
// Called after every optimizer step with (epoch, step, state).
using StepObserver = std::function<void(int, std::size_t, const AttackState&)>;

inline AttackResult run_prompt_attack(const DualEncoder& enc, const Dataset& train, const PoisonPlan& plan,
                                      const AttackConfig& cfg, const PoisonTrigger& trigger,
                                      const StepObserver& observer = {}) {
  cfg.validate();
  if (!enc.frozen) throw Error("prompt attacks require a frozen encoder");
  const auto start = std::chrono::steady_clock::now();
  const std::string checksum_before = parameter_checksum(enc);
  const bool learnable = std::holds_alternative<LearnableTrigger>(trigger);
  const bool learn_noise = learnable && cfg.use_noise;
  const PatchSpec patch = (learnable && cfg.patch) ? *cfg.patch : PatchSpec{};

  AttackState state;
  state.prompt = std::make_shared<PromptState>(
      PromptState::init(cfg.prompt_length, enc.config.embed_dim, cfg.prompt_init_std, mix_seed(cfg.seed, 12)));
  state.noise = NoiseState::zeros(enc.config.image_height, enc.config.image_width, enc.config.image_channels,
                                  learn_noise ? cfg.epsilon : 0.0);
  const ClassPromptSet prompts = ClassPromptSet::learnable(state.prompt, enc, cfg.keep_template);

  // Clean features never change: the encoder is frozen and clean inputs carry no trigger.
  std::vector<std::size_t> clean_ids = plan.clean;
  std::map<std::size_t, Eigen::Index> column;
  MatrixXd clean_bank(enc.config.feature_dim, static_cast<Eigen::Index>(clean_ids.size()));
  {
    std::vector<const Image*> ptrs;
    for (auto i : clean_ids) ptrs.push_back(&train.images.at(i));
    if (!ptrs.empty()) clean_bank = encode_image_batch(enc, images_to_matrix(enc.config, ptrs));
    for (std::size_t k = 0; k < clean_ids.size(); ++k) column[clean_ids[k]] = static_cast<Eigen::Index>(k);
  }
  // Fixed triggers are applied once.
  std::map<std::size_t, Image> fixed_poison;
  if (!learnable)
    for (auto i : plan.poison) fixed_poison.emplace(i, std::get<FixedTrigger>(trigger)(train.images.at(i)));

  BatchStream stream(plan, train, cfg.batch_size, mix_seed(cfg.seed, 11));
  AttackStepper stepper(cfg);
  AttackResult result;
  result.config = cfg;
  result.warnings = plan.warnings;
  auto finish = [&](AttackResult& r) {
    r.prompt = *state.prompt;
    r.noise = state.noise;
    r.encoder_checksum = checksum_before;
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochTrace et{epoch, 0.0, 0.0};
    const auto batches = stream.next_epoch();
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const auto& b = batches[step];
      MatrixXd cf(enc.config.feature_dim, static_cast<Eigen::Index>(b.clean.size()));
      for (std::size_t k = 0; k < b.clean.size(); ++k) cf.col(static_cast<Eigen::Index>(k)) = clean_bank.col(column.at(b.clean[k]));
      PoisonInputs pin;
      if (learnable) {
        std::vector<const Image*> ptrs;
        for (auto i : b.poison) ptrs.push_back(&train.images[i]);
        pin = make_poison_inputs(enc, ptrs, plan.target, &state.noise, patch, learn_noise);
      } else {
        pin.pixels.resize(enc.config.image_input_dim(), static_cast<Eigen::Index>(b.poison.size()));
        for (std::size_t k = 0; k < b.poison.size(); ++k)
          pin.pixels.col(static_cast<Eigen::Index>(k)) = image_to_vector(fixed_poison.at(b.poison[k]));
        pin.labels = b.poison_labels;
      }
      AttackGradients g;
      try {
        g = attack_loss_from_features(enc, prompts, cf, b.clean_labels, pin, cfg.lambda_clean, cfg.lambda_poison,
                                      learn_noise ? &state.noise.delta : nullptr);
      } catch (const NumericalError& e) {
        finish(result);
        throw AttackAborted(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")", result);
      }
      if (!learn_noise) g.noise = Image();
      stepper.step(state, g);
      if (observer) observer(epoch, step, state);
      et.clean += g.clean_term;
      et.poison += g.poison_term;
    }
    if (!batches.empty()) {
      et.clean /= static_cast<double>(batches.size());
      et.poison /= static_cast<double>(batches.size());
    }
    result.trace.push_back(et);
  }
  finish(result);
  if (parameter_checksum(enc) != checksum_before) throw Error("encoder parameters changed during a prompt attack");
  return result;
}

inline AttackResult run_baple(const DualEncoder& enc, const Dataset& train, const PoisonPlan& plan,
                              const AttackConfig& cfg, const StepObserver& observer = {}) {
  return run_prompt_attack(enc, train, plan, cfg, LearnableTrigger{}, observer);
}

// The trained trigger B(.) of a finished attack.
inline FixedTrigger learned_trigger(const AttackResult& r) {
  const PatchSpec patch = r.config.patch.value_or(PatchSpec{});
  const NoiseState noise = r.noise;
  return [patch, noise](const Image& x) { return inject_backdoor(x, noise, patch); };
}

inline void write_trace_csv(std::ostream& os, const std::vector<EpochTrace>& trace) {
  os << "epoch,clean_term,poison_term,total\n" << std::setprecision(10);
  for (const auto& t : trace) os << t.epoch << ',' << t.clean << ',' << t.poison << ',' << t.total() << '\n';
}

template <>
struct ArtifactCodec<AttackResult> {
  static void save(const AttackResult& r, const std::filesystem::path& dir) {
    std::vector<double> tr;
    for (const auto& t : r.trace) tr.insert(tr.end(), {static_cast<double>(t.epoch), t.clean, t.poison});
    const auto& c = r.config;
    ArtifactWriter w(dir, "attack_result");
    w.field("wall_seconds", r.wall_seconds)
        .field("encoder_checksum", r.encoder_checksum)
        .field("lambda_clean", c.lambda_clean)
        .field("lambda_poison", c.lambda_poison)
        .field("prompt_lr", c.prompt_lr)
        .field("noise_lr", c.noise_lr)
        .field("epsilon", c.epsilon)
        .field("epochs", c.epochs)
        .field("batch_size", c.batch_size)
        .field("seed", c.seed)
        .field("prompt_length", c.prompt_length)
        .field("prompt_init_std", c.prompt_init_std)
        .field("keep_template", c.keep_template)
        .field("use_noise", c.use_noise)
        .field("optimizer", std::string(nn::optimizer_name(c.optimizer)))
        .field("has_patch", c.patch.has_value())
        .array_f64("trace", tr, {r.trace.size(), 3})
        .text("warnings", join_lines(r.warnings));
    if (c.patch) {
      const auto& p = *c.patch;
      w.field("patch_anchor", std::string(anchor_name(p.anchor)))
          .array_f64("patch", p.patch.pixels,
                     {static_cast<std::size_t>(p.patch.height), static_cast<std::size_t>(p.patch.width),
                      static_cast<std::size_t>(p.patch.channels)})
          .array_f64("patch_alpha", p.alpha, {p.alpha.size()});
    }
    w.commit();
    ArtifactCodec<PromptState>::save(r.prompt, dir / "prompt");
    ArtifactCodec<NoiseState>::save(r.noise, dir / "noise");
  }

  static AttackResult load(const std::filesystem::path& dir) {
    ArtifactReader rd(dir, "attack_result");
    AttackResult r;
    r.wall_seconds = rd.field_f64("wall_seconds");
    r.encoder_checksum = rd.field("encoder_checksum");
    auto& c = r.config;
    c.lambda_clean = rd.field_f64("lambda_clean");
    c.lambda_poison = rd.field_f64("lambda_poison");
    c.prompt_lr = rd.field_f64("prompt_lr");
    c.noise_lr = rd.field_f64("noise_lr");
    c.epsilon = rd.field_f64("epsilon");
    c.epochs = static_cast<int>(rd.field_i64("epochs"));
    c.batch_size = static_cast<int>(rd.field_i64("batch_size"));
    c.seed = rd.field_u64("seed");
    c.prompt_length = static_cast<int>(rd.field_i64("prompt_length"));
    c.prompt_init_std = rd.field_f64("prompt_init_std");
    c.keep_template = rd.field_bool("keep_template");
    c.use_noise = rd.field_bool("use_noise");
    c.optimizer = nn::parse_optimizer(rd.field("optimizer"));
    if (rd.field_bool("has_patch")) {
      PatchSpec p;
      p.anchor = parse_anchor(rd.field("patch_anchor"));
      const auto& d = rd.dims("patch");
      p.patch = Image(static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2]));
      p.patch.pixels = rd.array_f64("patch");
      p.alpha = rd.array_f64("patch_alpha");
      c.patch = std::move(p);
    }
    const auto tr = rd.array_f64("trace");
    for (std::size_t i = 0; i + 2 < tr.size(); i += 3)
      r.trace.push_back({static_cast<int>(tr[i]), tr[i + 1], tr[i + 2]});
    r.warnings = split_lines(rd.text("warnings"));
    r.prompt = ArtifactCodec<PromptState>::load(dir / "prompt");
    r.noise = ArtifactCodec<NoiseState>::load(dir / "noise");
    return r;
  }
};

}  // namespace baple
