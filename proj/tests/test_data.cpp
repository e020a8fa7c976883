#include <set>

#include "test_support.hpp"

using namespace baple;

TEST(Data, DefaultSpecCounts) {
  DatasetSpec spec;
  spec.samples_per_class = 60;
  const auto ds = generate_synthetic_dataset(spec);
  EXPECT_EQ(ds.size(), 360u);
  for (int c = 0; c < 6; ++c) EXPECT_EQ(ds.indices_of(c).size(), 60u);
  for (const auto& x : ds.images)
    for (double v : x.pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  EXPECT_EQ(ds.images.front().height, 32);
  EXPECT_EQ(ds.images.front().channels, 3);
}

TEST(Data, RegenerationIsBitIdentical) {
  DatasetSpec spec;
  spec.samples_per_class = 20;
  const auto a = generate_synthetic_dataset(spec);
  const auto b = generate_synthetic_dataset(spec);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    ASSERT_EQ(0, std::memcmp(a.images[i].pixels.data(), b.images[i].pixels.data(), a.images[i].pixels.size() * sizeof(double)));
  EXPECT_EQ(fingerprint(a), fingerprint(b));
}

TEST(Data, SeedChangesPixels) {
  DatasetSpec spec;
  spec.samples_per_class = 5;
  auto other = spec;
  other.seed = spec.seed + 1;
  EXPECT_NE(fingerprint(generate_synthetic_dataset(spec)), fingerprint(generate_synthetic_dataset(other)));
}

TEST(Data, TrainAndTestSplitsAreDisjoint) {
  DatasetSpec spec;
  spec.samples_per_class = 30;
  spec.test_per_class = 30;
  const auto train = generate_synthetic_dataset(spec, Split::train);
  const auto test = generate_synthetic_dataset(spec, Split::test);
  std::set<std::vector<double>> seen;
  for (const auto& x : train.images) seen.insert(x.pixels);
  for (const auto& x : test.images) EXPECT_FALSE(seen.contains(x.pixels));
}

TEST(Data, NoiseFreeClassesAreNearestCentroidSeparable) {
  DatasetSpec spec;
  spec.noise_level = 0.0;
  spec.samples_per_class = 10;
  const auto ds = generate_synthetic_dataset(spec);
  // identical within a class
  for (int c = 0; c < spec.num_classes; ++c) {
    const auto idx = ds.indices_of(c);
    for (auto i : idx) EXPECT_EQ(ds.images[i].pixels, ds.images[idx.front()].pixels);
  }
  std::vector<std::vector<double>> centroid(spec.num_classes, std::vector<double>(ds.images[0].size()));
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t k = 0; k < ds.images[i].size(); ++k)
      centroid[ds.labels[i]][k] += ds.images[i].pixels[k] / spec.samples_per_class;
  int hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < spec.num_classes; ++c) {
      double d = 0;
      for (std::size_t k = 0; k < ds.images[i].size(); ++k) d += std::pow(ds.images[i].pixels[k] - centroid[c][k], 2);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    hits += best == ds.labels[i];
  }
  EXPECT_EQ(hits, static_cast<int>(ds.size()));
}

TEST(Data, InvalidSpecNamesField) {
  DatasetSpec spec;
  spec.num_classes = 1;
  try {
    generate_synthetic_dataset(spec);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "data.num_classes");
  }
  spec = DatasetSpec{};
  spec.height = 8;
  EXPECT_THROW(generate_synthetic_dataset(spec), ConfigError);
  spec = DatasetSpec{};
  spec.noise_level = 1.5;
  EXPECT_THROW(generate_synthetic_dataset(spec), ConfigError);
}

TEST(FewShot, NineClassesThirtyTwoShots) {
  DatasetSpec spec;
  spec.num_classes = 9;
  spec.samples_per_class = 40;
  const auto ds = generate_synthetic_dataset(spec);
  const auto sub = sample_few_shot(ds, 32, 0);
  EXPECT_EQ(sub.size(), 288u);
}

TEST(FewShot, StratifiedUniqueAndValid) {
  DatasetSpec spec;
  spec.samples_per_class = 25;
  const auto ds = generate_synthetic_dataset(spec);
  for (int k : {1, 3, 10, 25}) {
    const auto sub = sample_few_shot(ds, k, 11);
    std::set<std::size_t> unique(sub.indices.begin(), sub.indices.end());
    EXPECT_EQ(unique.size(), sub.indices.size());
    std::vector<int> count(6);
    for (auto i : sub.indices) {
      ASSERT_LT(i, ds.size());
      ++count[ds.labels[i]];
    }
    for (int c : count) EXPECT_EQ(c, k);
  }
}

TEST(FewShot, ExhaustiveDrawCoversSplit) {
  DatasetSpec spec;
  spec.samples_per_class = 12;
  const auto ds = generate_synthetic_dataset(spec);
  const auto sub = sample_few_shot(ds, 12, 3);
  std::set<std::size_t> got(sub.indices.begin(), sub.indices.end());
  EXPECT_EQ(got.size(), ds.size());
}

TEST(FewShot, SeedsGiveDifferentSubsets) {
  DatasetSpec spec;
  spec.samples_per_class = 50;
  const auto ds = generate_synthetic_dataset(spec);
  EXPECT_NE(sample_few_shot(ds, 2, 0).indices, sample_few_shot(ds, 2, 1).indices);
  EXPECT_EQ(sample_few_shot(ds, 2, 5).indices, sample_few_shot(ds, 2, 5).indices);
}

TEST(FewShot, InsufficientDataNamesClass) {
  DatasetSpec spec;
  spec.samples_per_class = 4;
  const auto ds = generate_synthetic_dataset(spec);
  try {
    sample_few_shot(ds, 5, 0);
    FAIL();
  } catch (const InsufficientDataError& e) {
    EXPECT_EQ(e.label(), 0);
  }
}
