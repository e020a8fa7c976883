#include "test_support.hpp"

using namespace baple;
using baple::testing::shared_workspace;

namespace {

PoisonPlan plan_for(double ratio, LabelId target) {
  const auto& w = shared_workspace();
  return make_poison_plan(sample_few_shot(w.train, 16, 4), ratio, target, 4);
}

FixedTrigger badnets() {
  BadNetsSpec bn;
  return [bn](const Image& x) { return badnets_trigger(x, bn); };
}

}  // namespace

TEST(Finetune, ZeroEpochsLeavesParametersUnchanged) {
  const auto& w = shared_workspace();
  FinetuneConfig cfg;
  cfg.epochs = 0;
  const auto r = run_finetune_attack(w.encoder, w.train, plan_for(0.05, 0), badnets(), cfg);
  EXPECT_EQ(parameter_checksum(r.encoder), parameter_checksum(w.encoder));
  EXPECT_TRUE(r.trace.empty());
}

TEST(Finetune, CleanObjectiveKeepsZeroShotAccuracy) {
  const auto& w = shared_workspace();
  FinetuneConfig cfg;
  cfg.epochs = 10;
  cfg.lambda_poison = 0.0;
  const auto r = run_finetune_attack(w.encoder, w.train, plan_for(0.0, 0), FixedTrigger{}, cfg);
  const double zs = clean_accuracy(w.encoder, ClassPromptSet::handcrafted(w.encoder), w.test);
  EXPECT_GE(clean_accuracy(r.encoder, ClassPromptSet::handcrafted(r.encoder), w.test), zs - 0.01);
}

TEST(Finetune, BadNetsRaisesBackdoorAccuracyAndLeavesSourceIntact) {
  const auto& w = shared_workspace();
  const std::string before = parameter_checksum(w.encoder);
  FinetuneConfig cfg;
  cfg.epochs = 20;
  const LabelId target = 3;
  const auto trig = badnets();
  const auto r = run_finetune_attack(w.encoder, w.train, plan_for(0.1, target), trig, cfg);
  EXPECT_EQ(parameter_checksum(w.encoder), before);
  EXPECT_EQ(r.source_checksum, before);
  EXPECT_NE(parameter_checksum(r.encoder), before);
  const double base = backdoor_accuracy(w.encoder, ClassPromptSet::handcrafted(w.encoder), w.test, trig, target);
  const double ba = backdoor_accuracy(r.encoder, ClassPromptSet::handcrafted(r.encoder), w.test, trig, target);
  EXPECT_GT(ba, base);
  ASSERT_EQ(r.trace.size(), 20u);
  EXPECT_LT(r.trace.back().total(), r.trace.front().total());
}

TEST(Finetune, InvalidConfig) {
  const auto& w = shared_workspace();
  FinetuneConfig cfg;
  cfg.learning_rate = 0;
  EXPECT_THROW(run_finetune_attack(w.encoder, w.train, plan_for(0.05, 0), badnets(), cfg), ConfigError);
}

TEST(FinetuneLoss, GradientMatchesCentralDifferenceOnSampledParameters) {
  auto enc = baple::testing::tiny_encoder(7, 100.0);
  Rng rng(7);
  const auto prompts = ClassPromptSet::handcrafted(enc);
  MatrixXd cx(32, 3), px(32, 2);
  for (Eigen::Index i = 0; i < cx.size(); ++i) cx.data()[i] = uniform01(rng);
  for (Eigen::Index i = 0; i < px.size(); ++i) px.data()[i] = uniform01(rng);
  const std::vector<LabelId> cl{0, 1, 0};
  double p0 = finetune_loss(enc, prompts, cx, cl, px, std::vector<LabelId>{0, 0}, 1, 1).poison_term;
  double p1 = finetune_loss(enc, prompts, cx, cl, px, std::vector<LabelId>{1, 1}, 1, 1).poison_term;
  const std::vector<LabelId> pl(2, p1 > p0 ? 1 : 0);
  const auto g = finetune_loss(enc, prompts, cx, cl, px, pl, 1, 1);
  auto views = enc.params.views();
  EncoderParams gp = g.params;
  auto gviews = gp.views();
  const double h = 1e-5;
  for (std::size_t v = 0; v < views.size(); ++v) {
    for (Eigen::Index k = 0; k < views[v].size; k += 3) {
      double& x = views[v].data[k];
      const double keep = x;
      x = keep + h;
      const double up = finetune_loss(enc, prompts, cx, cl, px, pl, 1, 1).clean_term +
                        finetune_loss(enc, prompts, cx, cl, px, pl, 1, 1).poison_term;
      x = keep - h;
      const double down = finetune_loss(enc, prompts, cx, cl, px, pl, 1, 1).clean_term +
                          finetune_loss(enc, prompts, cx, cl, px, pl, 1, 1).poison_term;
      x = keep;
      const double fd = (up - down) / (2 * h), an = gviews[v].data[k];
      EXPECT_NEAR(an, fd, 1e-4 * std::max(1.0, std::abs(fd))) << "view " << v << " index " << k;
    }
  }
}
