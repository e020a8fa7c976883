#include "test_support.hpp"

using namespace baple;
using baple::testing::shared_workspace;

TEST(Eval, CleanAccuracyMatchesRecount) {
  const auto& w = shared_workspace();
  const auto prompts = ClassPromptSet::handcrafted(w.encoder);
  std::size_t hit = 0;
  std::vector<double> per(6), tot(6);
  for (std::size_t i = 0; i < w.test.size(); ++i) {
    const bool ok = zero_shot_predict(w.encoder, w.test.images[i], prompts) == w.test.labels[i];
    hit += ok;
    per[static_cast<std::size_t>(w.test.labels[i])] += ok;
    tot[static_cast<std::size_t>(w.test.labels[i])] += 1;
  }
  const auto report = evaluate(w.encoder, prompts, w.test, nullptr, 0);
  EXPECT_DOUBLE_EQ(report.ca, static_cast<double>(hit) / static_cast<double>(w.test.size()));
  EXPECT_FALSE(report.ba.has_value());
  for (std::size_t c = 0; c < 6; ++c) EXPECT_DOUBLE_EQ(report.per_class[c], per[c] / tot[c]);
}

TEST(Eval, BackdoorAccuracyMatchesRecountAndExcludeOption) {
  const auto& w = shared_workspace();
  const auto prompts = ClassPromptSet::handcrafted(w.encoder);
  BadNetsSpec bn;
  const FixedTrigger trig = [bn](const Image& x) { return badnets_trigger(x, bn); };
  for (LabelId t : {0, 4}) {
    std::size_t all = 0, all_n = 0, ex = 0, ex_n = 0;
    for (std::size_t i = 0; i < w.test.size(); ++i) {
      const bool hit = zero_shot_predict(w.encoder, trig(w.test.images[i]), prompts) == t;
      all += hit;
      ++all_n;
      if (w.test.labels[i] != t) {
        ex += hit;
        ++ex_n;
      }
    }
    EXPECT_DOUBLE_EQ(backdoor_accuracy(w.encoder, prompts, w.test, trig, t), double(all) / double(all_n));
    EXPECT_DOUBLE_EQ(backdoor_accuracy(w.encoder, prompts, w.test, trig, t, true), double(ex) / double(ex_n));
    EXPECT_EQ(*evaluate(w.encoder, prompts, w.test, &trig, t).ba, double(all) / double(all_n));
  }
}

TEST(Eval, BackdoorAccuracySumsToOneOverTargets) {
  const auto& w = shared_workspace();
  auto p = std::make_shared<PromptState>(PromptState::init(4, w.encoder.config.embed_dim, 1.0, 3));
  const auto prompts = ClassPromptSet::learnable(p, w.encoder);
  const FixedTrigger identity = [](const Image& x) { return x; };
  double sum = 0;
  for (LabelId t = 0; t < 6; ++t) sum += backdoor_accuracy(w.encoder, prompts, w.test, identity, t);
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Eval, UniformRandomPredictorBackdoorRateIsOneOverC) {
  Rng rng(17);
  const int C = 6;
  const std::size_t n = 60000;
  std::vector<LabelId> pred(n);
  for (auto& v : pred) v = static_cast<LabelId>(uniform01(rng) * C);
  const double rate = static_cast<double>(std::count(pred.begin(), pred.end(), 2)) / static_cast<double>(n);
  EXPECT_NEAR(rate, 1.0 / C, 4 * std::sqrt((1.0 / C) * (1 - 1.0 / C) / n));
}

TEST(Eval, EmptyTestSetIsEvaluationError) {
  const auto& w = shared_workspace();
  Dataset empty;
  empty.class_names = w.test.class_names;
  EXPECT_THROW(evaluate(w.encoder, ClassPromptSet::handcrafted(w.encoder), empty, nullptr, 0), EvaluationError);
}

TEST(Export, IdentityTriggerGivesIdenticalFeatures) {
  const auto& w = shared_workspace();
  const std::span<const Image> imgs(w.test.images.data(), 50);
  const std::span<const LabelId> labels(w.test.labels.data(), 50);
  const FixedTrigger identity = [](const Image& x) { return x; };
  const auto fx = export_features(w.encoder, imgs, labels, &identity);
  EXPECT_EQ(fx.clean, fx.triggered);
  EXPECT_EQ(fx.projection.cols(), 100);
  const auto plain = export_features(w.encoder, imgs, labels, nullptr);
  EXPECT_EQ(plain.triggered.cols(), 0);
  EXPECT_EQ(plain.clean, fx.clean);
  std::ostringstream os;
  write_features_csv(os, fx);
  const auto lines = split_lines(os.str());
  EXPECT_EQ(lines.size(), 101u);
  EXPECT_EQ(lines[0].substr(0, 34), "index,variant,label,proj_x,proj_y,");
}

TEST(Export, PrincipalAxesCaptureMaximalVariance) {
  Rng rng(4);
  MatrixXd x(3, 400);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double a = 3 * normal01(rng), b = normal01(rng), c = 0.1 * normal01(rng);
    x.col(j) << a + 0.5, b - 1.0, c;
  }
  const MatrixXd proj = principal_projection(x);
  EXPECT_NEAR(proj.row(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(proj.row(0).dot(proj.row(1))), 0.0, 1e-8);
  const double var0 = proj.row(0).squaredNorm(), var1 = proj.row(1).squaredNorm();
  EXPECT_GT(var0, var1);
  const MatrixXd centered = x.colwise() - x.rowwise().mean();
  for (int t = 0; t < 200; ++t) {
    VectorXd d(3);
    d << normal01(rng), normal01(rng), normal01(rng);
    d.normalize();
    EXPECT_LE((d.transpose() * centered).squaredNorm(), var0 + 1e-9);
  }
}

TEST(Export, MeanCosineHandCase) {
  MatrixXd f(2, 3);
  f << 1, 0, 0.6, 0, 1, 0.8;
  VectorXd d(2);
  d << 2, 0;
  EXPECT_NEAR(mean_cosine(f, d), (1.0 + 0.0 + 0.6) / 3.0, 1e-15);
  const std::vector<std::size_t> cols{2, 0};
  EXPECT_EQ(select_columns(f, cols).col(0), f.col(2));
  EXPECT_THROW(mean_cosine(MatrixXd(2, 0), d), EvaluationError);
}
