#include "test_support.hpp"

using namespace baple;
using baple::testing::random_image;

namespace {

std::size_t count_diffs(const Image& a, const Image& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a.pixels[i] != b.pixels[i];
  return n;
}

double psnr(const Image& a, const Image& b) {
  double mse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += std::pow(a.pixels[i] - b.pixels[i], 2);
  mse /= static_cast<double>(a.size());
  return mse == 0 ? std::numeric_limits<double>::infinity() : 10 * std::log10(1.0 / mse);
}

}  // namespace

TEST(Patch, BottomLeftRectOnLargeImage) {
  const Rect r = anchored_rect(Anchor::bottom_left, 224, 224, 24, 24);
  EXPECT_EQ(r.row, 200);
  EXPECT_EQ(r.col, 0);
  Rng rng(1);
  const auto x = random_image(224, 224, 3, rng);
  const PatchSpec spec{Image(24, 24, 3, 1.0), Anchor::bottom_left, {}};
  const auto y = apply_patch(x, spec);
  for (int row = 0; row < 224; ++row)
    for (int col = 0; col < 224; ++col)
      for (int ch = 0; ch < 3; ++ch) {
        const bool inside = row >= 200 && col < 24;
        if (inside) {
          EXPECT_EQ(y.at(row, col, ch), 1.0);
        } else {
          ASSERT_EQ(y.at(row, col, ch), x.at(row, col, ch));
        }
      }
}

TEST(Patch, ZeroAlphaIsIdentity) {
  Rng rng(2);
  const auto x = random_image(32, 32, 3, rng);
  PatchSpec spec{Image(8, 8, 3, 1.0), Anchor::center_center, std::vector<double>(64, 0.0)};
  EXPECT_EQ(apply_patch(x, spec), x);
}

TEST(Patch, OpaqueCenterChangesExactlyPatchArea) {
  Rng rng(3);
  const auto x = random_image(32, 32, 3, rng, 0.0, 0.99);
  PatchSpec spec{Image(6, 10, 3, 1.0), Anchor::center_center, {}};
  EXPECT_EQ(count_diffs(apply_patch(x, spec), x), 6u * 10u * 3u);
}

TEST(Patch, TooLargeIsDimensionError) {
  PatchSpec spec{Image(40, 4, 3, 1.0), Anchor::top_left, {}};
  EXPECT_THROW(apply_patch(Image(32, 32, 3), spec), DimensionError);
  EXPECT_THROW(parse_anchor("middle"), ConfigError);
}

TEST(Patch, LocalityOverRandomImagesAllAnchors) {
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_image(32, 32, 3, rng);
    const int h = 1 + static_cast<int>(uniform01(rng) * 31), w = 1 + static_cast<int>(uniform01(rng) * 31);
    PatchSpec spec{random_image(h, w, 3, rng), static_cast<Anchor>(i % 9), {}};
    if (i % 2) {
      spec.alpha.resize(static_cast<std::size_t>(h * w));
      for (auto& a : spec.alpha) a = uniform01(rng);
    }
    const auto y = apply_patch(x, spec);
    const Rect r = patch_rect(spec, x);
    for (int row = 0; row < 32; ++row)
      for (int col = 0; col < 32; ++col)
        if (!r.contains(row, col)) {
          for (int ch = 0; ch < 3; ++ch) ASSERT_EQ(y.at(row, col, ch), x.at(row, col, ch));
        }
  }
}

TEST(Noise, ClipSaturatesAndMatchesScalarLoop) {
  NoiseState n = NoiseState::zeros(4, 4, 1, 8.0 / 255.0);
  n.delta.pixels[0] = 0.9;
  EXPECT_EQ(clip_noise(n).delta.pixels[0], 8.0 / 255.0);
  EXPECT_EQ(clip_noise(NoiseState::zeros(4, 4, 1, 0.1)).max_abs(), 0.0);
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    NoiseState r = NoiseState::zeros(8, 8, 3, 0.05);
    for (auto& v : r.delta.pixels) v = 0.4 * (uniform01(rng) - 0.5);
    const auto c = clip_noise(r);
    for (std::size_t i = 0; i < r.delta.size(); ++i) {
      double e = r.delta.pixels[i];
      if (e > 0.05) e = 0.05;
      if (e < -0.05) e = -0.05;
      EXPECT_EQ(c.delta.pixels[i], e);
    }
  }
}

TEST(Inject, IdentityAndPatchOnlyCases) {
  Rng rng(6);
  const auto x = random_image(32, 32, 3, rng);
  EXPECT_EQ(inject_backdoor(x, NoiseState::zeros(32, 32, 3, 0.0), PatchSpec{}), x);
  PatchSpec p{symbol_patch(24, 3), Anchor::bottom_left, {}};
  EXPECT_EQ(inject_backdoor(x, NoiseState::zeros(32, 32, 3, 0.1), p), apply_patch(x, p));
}

TEST(Inject, NoiseBoundOutsidePatchAndPatchWinsInside) {
  Rng rng(7);
  const double eps = 8.0 / 255.0;
  PatchSpec p{symbol_patch(24, 3), Anchor::bottom_left, {}};
  for (int t = 0; t < 20; ++t) {
    const auto x = random_image(32, 32, 3, rng);
    NoiseState n = NoiseState::zeros(32, 32, 3, eps);
    for (auto& v : n.delta.pixels) v = eps * (2 * uniform01(rng) - 1);
    const auto b = inject_backdoor(x, n, p);
    const auto ref = apply_patch(x, p);
    const Rect r = patch_rect(p, x);
    for (int row = 0; row < 32; ++row)
      for (int col = 0; col < 32; ++col)
        for (int ch = 0; ch < 3; ++ch) {
          if (r.contains(row, col)) {
            EXPECT_EQ(b.at(row, col, ch), p.patch.at(row - r.row, col - r.col, ch));
          } else {
            EXPECT_LE(std::abs(b.at(row, col, ch) - ref.at(row, col, ch)), eps + 1e-15);
          }
        }
  }
}

TEST(BadNets, FixedTriggerUniformNoiseLocal) {
  Rng rng(8);
  BadNetsSpec spec;
  const auto p1 = badnets_patch(spec, 3);
  EXPECT_EQ(p1.patch, badnets_patch(spec, 3).patch);
  double mean = 0;
  for (double v : p1.patch.pixels) mean += v;
  mean /= static_cast<double>(p1.patch.size());
  EXPECT_GE(mean, 0.45);
  EXPECT_LE(mean, 0.55);
  const auto a = random_image(32, 32, 3, rng), b = random_image(32, 32, 3, rng);
  const auto ta = badnets_trigger(a, spec), tb = badnets_trigger(b, spec);
  const Rect r = patch_rect(p1, a);
  for (int row = 0; row < 32; ++row)
    for (int col = 0; col < 32; ++col)
      for (int ch = 0; ch < 3; ++ch) {
        if (r.contains(row, col)) {
          EXPECT_EQ(ta.at(row, col, ch), tb.at(row, col, ch));
        } else {
          EXPECT_EQ(ta.at(row, col, ch), a.at(row, col, ch));
        }
      }
}

TEST(WaNet, ZeroStrengthIsIdentityOverRandomImages) {
  Rng rng(9);
  const auto field = make_warp_field(32, 32, 4, 0.0, 1);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_image(32, 32, 3, rng);
    ASSERT_EQ(wanet_trigger(x, field), x);
  }
}

TEST(WaNet, SmallStrengthHighPsnrOnSyntheticImages) {
  DatasetSpec spec;
  spec.samples_per_class = 5;
  const auto ds = generate_synthetic_dataset(spec);
  const auto field = make_warp_field(32, 32, 4, 0.5, 3);
  for (const auto& x : ds.images) EXPECT_GT(psnr(x, wanet_trigger(x, field)), 30.0);
}

TEST(WaNet, ConstantImageStaysConstantAndFlowBounded) {
  const auto field = make_warp_field(32, 32, 4, 3.0, 4);
  EXPECT_LE(field.max_displacement(), 3.0 + 1e-12);
  EXPECT_LE(field.max_displacement(), 3.0 * 32);
  const Image x(32, 32, 3, 0.37);
  EXPECT_EQ(wanet_trigger(x, field), x);
  EXPECT_THROW(make_warp_field(32, 32, 4, 17.0, 1), ConfigError);
  EXPECT_THROW(make_warp_field(32, 32, 1, 0.5, 1), ConfigError);
}

TEST(Fiba, ZeroBlendIsIdentityOverRandomImages) {
  Rng rng(10);
  FibaSpec spec;
  spec.reference = fiba_reference(32, 32, 3, 5);
  spec.blend = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto x = random_image(32, 32, 3, rng);
    const auto y = fiba_trigger(x, spec);
    double m = 0;
    for (std::size_t k = 0; k < x.size(); ++k) m = std::max(m, std::abs(x.pixels[k] - y.pixels[k]));
    ASSERT_LT(m, 1e-5);
  }
}

TEST(Fiba, HostPhaseReusedBitwiseOverRandomImages) {
  Rng rng(11);
  FibaSpec spec;
  spec.reference = fiba_reference(32, 32, 3, 6);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_image(32, 32, 3, rng);
    const auto parts = fiba_decompose(x, spec);
    for (int ch = 0; ch < 3; ++ch) {
      const auto host = channel_spectrum(x, ch);
      for (std::size_t k = 0; k < host.size(); ++k) {
        const double phase = std::arg(host[k]);
        ASSERT_EQ(0, std::memcmp(&phase, &parts[static_cast<std::size_t>(ch)].phase[k], sizeof(double)));
      }
    }
  }
}

TEST(Fiba, PhaseSurvivesWhereAmplitudeNonzero) {
  Rng rng(12);
  FibaSpec spec;
  spec.reference = fiba_reference(32, 32, 3, 7);
  spec.blend = 0.5;
  const auto x = random_image(32, 32, 3, rng);
  const auto y = fiba_reconstruct(fiba_decompose(x, spec), 32, 32);
  for (int ch = 0; ch < 3; ++ch) {
    const auto a = channel_spectrum(x, ch), b = channel_spectrum(y, ch);
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (std::abs(a[k]) < 1e-9 || std::abs(b[k]) < 1e-9) continue;
      const double d = std::remainder(std::arg(a[k]) - std::arg(b[k]), 2 * std::numbers::pi);
      EXPECT_LT(std::abs(d), 1e-6);
    }
  }
}

TEST(Fiba, SelfBlendIsIdentity) {
  Rng rng(13);
  const auto x = random_image(32, 32, 3, rng);
  FibaSpec spec{x, 1.0, 0.5};
  const auto y = fiba_trigger(x, spec);
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(y.pixels[k], x.pixels[k], 1e-5);
}

TEST(Fiba, RadiusOutOfRangeIsConfigError) {
  FibaSpec spec{Image(32, 32, 3), 0.2, 0.0};
  EXPECT_THROW(fiba_trigger(Image(32, 32, 3), spec), ConfigError);
  spec.radius = 0.7;
  EXPECT_THROW(fiba_trigger(Image(32, 32, 3), spec), ConfigError);
}

TEST(Pnm, LoadsAsciiAndBinary) {
  baple::testing::TempDir tmp;
  std::ofstream(tmp.path / "a.ppm") << "P3\n# c\n2 1\n255\n255 0 0 0 255 51\n";
  const auto a = load_pnm(tmp.path / "a.ppm");
  EXPECT_EQ(a.width, 2);
  EXPECT_EQ(a.channels, 3);
  EXPECT_DOUBLE_EQ(a.at(0, 1, 2), 0.2);
  {
    std::ofstream out(tmp.path / "b.pgm", std::ios::binary);
    out << "P5\n2 2\n255\n";
    const unsigned char px[4] = {0, 255, 128, 64};
    out.write(reinterpret_cast<const char*>(px), 4);
  }
  const auto b = load_pnm(tmp.path / "b.pgm");
  EXPECT_EQ(b.channels, 1);
  EXPECT_DOUBLE_EQ(b.at(0, 1, 0), 1.0);
}
