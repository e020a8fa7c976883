#include "test_support.hpp"

using namespace baple;
using baple::testing::random_image;
using baple::testing::shared_workspace;
using baple::testing::tiny_encoder;

TEST(Template, InsertsClassName) {
  Vocabulary v({"an", "image", "of", "tumor", "normal"});
  const auto t = handcrafted_template(v, "tumor", "an image of {}");
  EXPECT_EQ(t, v.tokenize("an image of tumor"));
}

TEST(Template, EmptyPatternGivesNameOnly) {
  Vocabulary v({"tumor"});
  EXPECT_EQ(handcrafted_template(v, "tumor", ""), v.tokenize("tumor"));
}

TEST(Template, DistinctNamesDifferOnlyAtNamePositions) {
  Vocabulary v({"an", "image", "of", "ring", "blob"});
  const auto a = handcrafted_template(v, "ring", kDefaultTemplate);
  const auto b = handcrafted_template(v, "blob", kDefaultTemplate);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i + 1 < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_NE(a.back(), b.back());
}

TEST(Template, UnknownTokensAreListed) {
  Vocabulary v({"an", "image", "of"});
  try {
    handcrafted_template(v, "mystery blob", kDefaultTemplate);
    FAIL();
  } catch (const TokenizerError& e) {
    EXPECT_EQ(e.unknown_tokens(), (std::vector<std::string>{"mystery", "blob"}));
  }
}

TEST(Encoder, FeaturesAreUnitNormAndDeterministic) {
  const auto& w = shared_workspace();
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const auto x = random_image(32, 32, 3, rng);
    const VectorXd f = encode_image(w.encoder, x);
    EXPECT_NEAR(f.norm(), 1.0, 1e-6);
    EXPECT_EQ(f, encode_image(w.encoder, x));
  }
  const auto prompts = ClassPromptSet::handcrafted(w.encoder);
  for (int c = 0; c < prompts.num_classes(); ++c) {
    const MatrixXd seq = prompts.sequence(w.encoder, c);
    const VectorXd t = encode_text(w.encoder, seq);
    EXPECT_NEAR(t.norm(), 1.0, 1e-6);
    EXPECT_EQ(t, encode_text(w.encoder, seq));
  }
}

TEST(Encoder, ShapeMismatchIsDimensionError) {
  const auto& w = shared_workspace();
  EXPECT_THROW(encode_image(w.encoder, Image(16, 16, 3)), DimensionError);
}

TEST(Encoder, DifferentClassesLessSimilarThanSameClass) {
  const auto& w = shared_workspace();
  const MatrixXd f = encode_images(w.encoder, w.test.images);
  const int C = w.test.num_classes();
  MatrixXd sum = MatrixXd::Zero(C, C), count = MatrixXd::Zero(C, C);
  for (std::size_t i = 0; i < w.test.size(); i += 7)
    for (std::size_t j = 0; j < w.test.size(); j += 7) {
      if (i == j) continue;
      sum(w.test.labels[i], w.test.labels[j]) += f.col(i).dot(f.col(j));
      count(w.test.labels[i], w.test.labels[j]) += 1;
    }
  const MatrixXd mean = sum.cwiseQuotient(count);
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b)
      if (a != b) {
        EXPECT_LT(mean(a, b), mean(a, a));
      }
}

TEST(Encoder, ZeroPromptPerturbationLeavesOutputUnchanged) {
  const auto enc = tiny_encoder(1);
  auto p = std::make_shared<PromptState>(PromptState::init(3, 3, 0.5, 2));
  const auto set = ClassPromptSet::learnable(p, enc);
  const MatrixXd before = class_text_features(enc, set);
  p->tokens += MatrixXd::Zero(3, 3);
  EXPECT_EQ(class_text_features(enc, set), before);
}

TEST(Prompts, SharedPrefixAliasing) {
  const auto enc = tiny_encoder(4);
  auto p = std::make_shared<PromptState>(PromptState::init(2, 3, 0.3, 8));
  const auto set = ClassPromptSet::learnable(p, enc);
  const MatrixXd before = class_text_features(enc, set);
  p->tokens(1, 0) += 0.7;
  const MatrixXd after = class_text_features(enc, set);
  for (int c = 0; c < set.num_classes(); ++c) {
    EXPECT_GT((after.col(c) - before.col(c)).norm(), 1e-6);
    MatrixXd seq(3, 3);
    seq.leftCols(2) = p->tokens;
    seq.col(2) = enc.params.embedding.col(set.suffixes[c][0]);
    EXPECT_LT((encode_text(enc, seq) - after.col(c)).norm(), 1e-14);
  }
}

TEST(Scoring, OrthogonalCaseAndHandCosines) {
  MatrixXd text = MatrixXd::Identity(4, 4);
  MatrixXd img = MatrixXd::Zero(4, 1);
  img(2, 0) = 1.0;
  EXPECT_EQ(predict_from_features(img, text)[0], 2);
  const VectorXd scores = text.transpose() * img;
  EXPECT_EQ(scores, (VectorXd(4) << 0, 0, 1, 0).finished());

  MatrixXd t2(2, 2);
  t2 << 1, 0, 0, 1;
  VectorXd u(2);
  u << 1, 0;
  const VectorXd s = t2.transpose() * u;
  EXPECT_DOUBLE_EQ(s(0), 1.0);
  EXPECT_DOUBLE_EQ(s(1), 0.0);
}

TEST(Scoring, ArgmaxAndTies) {
  EXPECT_EQ(argmax_lowest(std::vector<double>{0.1, 0.9, 0.3}), 1);
  EXPECT_EQ(argmax_lowest(std::vector<double>{0.5, 0.5}), 0);
}

TEST(Scoring, ScoresWithinUnitIntervalAndClassCountChecked) {
  const auto& w = shared_workspace();
  const auto prompts = ClassPromptSet::handcrafted(w.encoder);
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const VectorXd s = predict_scores(w.encoder, random_image(32, 32, 3, rng), prompts);
    EXPECT_EQ(s.size(), 6);
    EXPECT_LE(s.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
  }
  auto fewer = prompts;
  fewer.suffixes.pop_back();
  EXPECT_THROW(predict_scores(w.encoder, w.test.images[0], fewer), DimensionError);
}

TEST(Scoring, ZeroShotMatchesBruteForce) {
  const auto& w = shared_workspace();
  auto p = std::make_shared<PromptState>(PromptState::init(4, 32, 0.3, 6));
  const auto prompts = ClassPromptSet::learnable(p, w.encoder);
  Rng rng(19);
  for (int i = 0; i < 20; ++i) {
    const auto x = random_image(32, 32, 3, rng);
    const VectorXd f = encode_image(w.encoder, x);
    int best = 0;
    double best_s = -2;
    for (int c = 0; c < 6; ++c) {
      const VectorXd t = encode_text(w.encoder, prompts.sequence(w.encoder, c));
      const double s = f.dot(t) / (f.norm() * t.norm());
      if (s > best_s) {
        best_s = s;
        best = c;
      }
    }
    EXPECT_EQ(zero_shot_predict(w.encoder, x, prompts), best);
  }
}

TEST(Pretrain, DefaultSpecReachesZeroShotGate) {
  EXPECT_GE(shared_workspace().encoder.zero_shot_accuracy, 0.85);
  EXPECT_TRUE(shared_workspace().encoder.frozen);
}

TEST(Pretrain, ZeroEpochsIsNearChance) {
  DatasetSpec spec;
  spec.samples_per_class = 20;
  spec.test_per_class = 100;
  const auto train = generate_synthetic_dataset(spec);
  const auto test = generate_synthetic_dataset(spec, Split::test);
  PretrainConfig pc;
  pc.epochs = 0;
  const auto enc = pretrain_contrastive(train, &test, EncoderConfig{}, pc);
  EXPECT_LT(enc.zero_shot_accuracy, 0.4);
}

TEST(Pretrain, SameSeedSameParameters) {
  DatasetSpec spec;
  spec.samples_per_class = 20;
  const auto train = generate_synthetic_dataset(spec);
  PretrainConfig pc;
  pc.epochs = 2;
  const auto a = pretrain_contrastive(train, nullptr, EncoderConfig{}, pc);
  const auto b = pretrain_contrastive(train, nullptr, EncoderConfig{}, pc);
  EXPECT_EQ(parameter_checksum(a), parameter_checksum(b));
}

TEST(Pretrain, RejectsSingleClass) {
  DatasetSpec spec;
  spec.samples_per_class = 4;
  auto ds = generate_synthetic_dataset(spec);
  ds.class_names.resize(1);
  EXPECT_THROW(pretrain_contrastive(ds, nullptr, EncoderConfig{}, PretrainConfig{}), ConfigError);
}
