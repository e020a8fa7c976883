#pragma once

#include "baple/baple.hpp"

namespace baple::oracle {

inline Image random_image(int h, int w, int c, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Image x(h, w, c);
  for (auto& v : x.pixels) v = lo + (hi - lo) * uniform01(rng);
  return x;
}

// Small encoder over 4x4x2 images with two classes; weights are random, not trained.
inline DualEncoder tiny_encoder(std::uint64_t seed, double tau = 100.0) {
  EncoderConfig cfg;
  cfg.image_height = 4;
  cfg.image_width = 4;
  cfg.image_channels = 2;
  cfg.feature_dim = 4;
  cfg.embed_dim = 3;
  cfg.image_hidden = {6};
  cfg.text_token_hidden = 5;
  cfg.text_hidden = {5};
  cfg.logit_scale = tau;
  Vocabulary vocab({"alpha", "beta", "an", "image", "of"});
  auto enc = DualEncoder::init(cfg, vocab, {"alpha", "beta"}, seed);
  enc.frozen = true;
  return enc;
}

struct Instance {
  DualEncoder enc;
  std::shared_ptr<PromptState> prompt;
  ClassPromptSet prompts;
  NoiseState noise;
  PatchSpec patch;
  std::vector<Image> clean, poison;
  std::vector<LabelId> clean_labels;
  TargetLabelFn eta;
  double lc = 1.0, lp = 1.0;

  double loss() const {
    std::vector<const Image*> c, p;
    for (const auto& x : clean) c.push_back(&x);
    for (const auto& x : poison) p.push_back(&x);
    return attack_loss(enc, prompts, noise, patch, c, clean_labels, p, eta, lc, lp).total();
  }
  AttackGradients grads() const {
    std::vector<const Image*> c, p;
    for (const auto& x : clean) c.push_back(&x);
    for (const auto& x : poison) p.push_back(&x);
    return attack_loss(enc, prompts, noise, patch, c, clean_labels, p, eta, lc, lp);
  }
};

// Pixels stay inside [0.2, 0.8] and |delta| <= 0.05 so the clamp never binds.
inline Instance make_instance(std::uint64_t seed, double tau) {
  Rng rng(seed);
  Instance in;
  in.enc = tiny_encoder(seed, tau);
  in.prompt = std::make_shared<PromptState>(PromptState::init(2, 3, 0.5, seed + 100));
  in.prompts = ClassPromptSet::learnable(in.prompt, in.enc);
  in.noise = NoiseState::zeros(4, 4, 2, 0.05);
  for (auto& v : in.noise.delta.pixels) v = 0.05 * (2 * uniform01(rng) - 1);
  if (seed % 2) in.patch = {random_image(2, 2, 2, rng), static_cast<Anchor>(seed % 9), {}};
  const int nc = 2 + static_cast<int>(seed % 3), np = 1 + static_cast<int>(seed % 2);
  for (int i = 0; i < nc; ++i) {
    in.clean.push_back(random_image(4, 4, 2, rng, 0.2, 0.8));
    in.clean_labels.push_back(static_cast<LabelId>(i % 2));
  }
  for (int i = 0; i < np; ++i) in.poison.push_back(random_image(4, 4, 2, rng, 0.2, 0.8));
  // Target the class the poison batch currently disagrees with most, so the
  // poison term is far from saturation.
  in.eta = {0};
  const double p0 = in.grads().poison_term;
  in.eta = {1};
  if (in.grads().poison_term < p0) in.eta = {0};
  return in;
}

inline double rel_error(const VectorXd& a, const VectorXd& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

struct GradientCheck {
  double prompt_error = 0.0;
  double noise_error = 0.0;
};

// Central differences of the attack objective against its analytic gradients.
inline GradientCheck check_gradients(std::uint64_t seed, double tau = 100.0, double h = 1e-4) {
  Instance in = make_instance(seed, tau);
  const auto g = in.grads();
  auto central = [&](double& v) {
    const double keep = v;
    v = keep + h;
    const double up = in.loss();
    v = keep - h;
    const double down = in.loss();
    v = keep;
    return (up - down) / (2 * h);
  };
  VectorXd fd_p(in.prompt->tokens.size());
  for (Eigen::Index k = 0; k < fd_p.size(); ++k) fd_p(k) = central(in.prompt->tokens.data()[k]);
  VectorXd fd_d(static_cast<Eigen::Index>(in.noise.delta.size()));
  for (std::size_t k = 0; k < in.noise.delta.size(); ++k) fd_d(static_cast<Eigen::Index>(k)) = central(in.noise.delta.pixels[k]);
  const VectorXd an_p = Eigen::Map<const VectorXd>(g.prompt.data(), g.prompt.size());
  const VectorXd an_d = Eigen::Map<const VectorXd>(g.noise.pixels.data(), static_cast<Eigen::Index>(g.noise.size()));
  return {rel_error(an_p, fd_p), rel_error(an_d, fd_d)};
}

}  // namespace baple::oracle
