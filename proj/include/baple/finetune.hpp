#pragma once

// Full fine-tuning baseline: every encoder parameter is trained on the
// poisoned objective with handcrafted class prompts and a fixed trigger.

#include "baple/attack.hpp"

namespace baple {

struct FinetuneConfig {
  double learning_rate = 5e-5;
  int epochs = 50;
  int batch_size = 16;
  double lambda_clean = 1.0;
  double lambda_poison = 1.0;
  std::uint64_t seed = 0;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  std::string template_pattern = std::string(kDefaultTemplate);

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("finetune.learning_rate", "must be > 0");
    if (epochs < 0) throw ConfigError("finetune.epochs", "must be >= 0");
    if (batch_size < 1) throw ConfigError("finetune.batch_size", "must be >= 1");
    if (!(lambda_clean >= 0)) throw ConfigError("finetune.lambda_clean", "must be >= 0");
    if (!(lambda_poison >= 0)) throw ConfigError("finetune.lambda_poison", "must be >= 0");
  }
};

struct FinetuneResult {
  DualEncoder encoder;
  std::vector<EpochTrace> trace;
  double wall_seconds = 0.0;
  std::string source_checksum;
  std::vector<std::string> warnings;
};

struct FinetuneGradients {
  double clean_term = 0.0;
  double poison_term = 0.0;
  EncoderParams params;
};

inline FinetuneGradients finetune_loss(const DualEncoder& enc, const ClassPromptSet& prompts, const MatrixXd& clean_pixels,
                                       std::span<const LabelId> clean_labels, const MatrixXd& poison_pixels,
                                       std::span<const LabelId> poison_labels, double lambda_clean, double lambda_poison) {
  const double tau = enc.config.logit_scale;
  FinetuneGradients out;
  out.params = EncoderParams::zeros_like(enc.params);
  std::vector<TextTrace> traces;
  const MatrixXd text = class_text_features(enc, prompts, &traces);
  MatrixXd grad_text = MatrixXd::Zero(text.rows(), text.cols());

  auto side = [&](const MatrixXd& pixels, std::span<const LabelId> labels, double lambda) {
    if (pixels.cols() == 0 || lambda == 0.0) return 0.0;
    ImageTrace it;
    const MatrixXd f = encode_image_batch(enc, pixels, &it);
    MatrixXd g;
    const double loss = lambda * nn::softmax_cross_entropy(tau * text.transpose() * f, labels, &g);
    grad_text.noalias() += (lambda * tau) * f * g.transpose();
    encode_image_batch_backward(enc, it, (lambda * tau) * text * g, &out.params, false);
    return loss;
  };
  out.clean_term = side(clean_pixels, clean_labels, lambda_clean);
  out.poison_term = side(poison_pixels, poison_labels, lambda_poison);
  if (!std::isfinite(out.clean_term + out.poison_term)) throw NumericalError("non-finite fine-tuning loss");
  class_text_backward(enc, prompts, traces, grad_text, &out.params, nullptr);
  return out;
}

// Trains a copy of `source`; the source encoder is never written.
inline FinetuneResult run_finetune_attack(const DualEncoder& source, const Dataset& train, const PoisonPlan& plan,
                                          const FixedTrigger& trigger, const FinetuneConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  FinetuneResult result;
  result.source_checksum = parameter_checksum(source);
  result.warnings = plan.warnings;
  result.encoder = source;
  result.encoder.frozen = false;
  DualEncoder& enc = result.encoder;
  const ClassPromptSet prompts = ClassPromptSet::handcrafted(enc, cfg.template_pattern);

  std::map<std::size_t, Image> poisoned;
  for (auto i : plan.poison) poisoned.emplace(i, trigger ? trigger(train.images.at(i)) : train.images.at(i));

  BatchStream stream(plan, train, cfg.batch_size, mix_seed(cfg.seed, 21));
  nn::Optimizer opt(cfg.optimizer, cfg.learning_rate);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochTrace et{epoch, 0.0, 0.0};
    const auto batches = stream.next_epoch();
    for (const auto& b : batches) {
      std::vector<const Image*> cp, pp;
      for (auto i : b.clean) cp.push_back(&train.images[i]);
      for (auto i : b.poison) pp.push_back(&poisoned.at(i));
      const MatrixXd cx = cp.empty() ? MatrixXd(enc.config.image_input_dim(), 0) : images_to_matrix(enc.config, cp);
      const MatrixXd px = pp.empty() ? MatrixXd(enc.config.image_input_dim(), 0) : images_to_matrix(enc.config, pp);
      FinetuneGradients g;
      try {
        g = finetune_loss(enc, prompts, cx, b.clean_labels, px, b.poison_labels, cfg.lambda_clean, cfg.lambda_poison);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch));
      }
      opt.step(enc.params.views(), g.params.views());
      et.clean += g.clean_term;
      et.poison += g.poison_term;
    }
    if (!batches.empty()) {
      et.clean /= static_cast<double>(batches.size());
      et.poison /= static_cast<double>(batches.size());
    }
    result.trace.push_back(et);
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (parameter_checksum(source) != result.source_checksum) throw Error("fine-tuning mutated its source encoder");
  return result;
}

}  // namespace baple
