#include "kid/localization.hpp"
#include "kid/synthesis.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include <set>

using namespace kid;

namespace {

const std::vector<ImageSample>& faces() {
  static const auto data = toy_face_dataset(200, 11);
  return data;
}

/// Low-frequency random image: a few random plane waves per channel plus mild noise.
Image smooth_random_image(int size, Rng& rng) {
  Image img(size, size);
  for (int c = 0; c < 3; ++c) {
    double fx[4], fy[4], ph[4], amp[4];
    for (int k = 0; k < 4; ++k)
      fx[k] = uniform(rng, -0.2, 0.2), fy[k] = uniform(rng, -0.2, 0.2), ph[k] = uniform(rng, 0, 6.3),
      amp[k] = uniform(rng, 0.02, 0.1);
    const double base = uniform(rng, 0.3, 0.7);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double v = base + normal(rng, 0.0, 0.01);
        for (int k = 0; k < 4; ++k) v += amp[k] * std::sin(fx[k] * x + fy[k] * y + ph[k]);
        img.at(x, y, c) = clamp01(float(v));
      }
  }
  return img;
}

}  // namespace

TEST(ToyFaces, DistinctAndReplayable) {
  const auto& a = faces();
  const auto b = toy_face_dataset(200, 11);
  ASSERT_EQ(a.size(), 200u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].pixels.data, b[i].pixels.data);
    EXPECT_EQ(a[i].label, Label::real);
    EXPECT_EQ(a[i].outer_face_mask.count_ones(), a[i].outer_face_mask.data.size());
  }
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) ASSERT_GT(mse(a[i].pixels, a[j].pixels), 0.0) << i << " " << j;
  std::set<std::string> ids;
  for (const auto& s : a) ids.insert(s.id);
  EXPECT_EQ(ids.size(), a.size());
}

TEST(ToyFaces, RejectsEmpty) { EXPECT_THROW(toy_face_dataset(0, 1), std::invalid_argument); }

TEST(SelfBlend, IdentityTransformIsDegenerate) {
  BlendRecipe r;
  r.source_transforms = {{TransformKind::color_jitter, 0.0}, {TransformKind::shift, 0.0}};
  EXPECT_THROW(self_blend(faces()[0], r), DegenerateForgery);
  r.source_transforms.clear();
  EXPECT_THROW(self_blend(faces()[1], r), DegenerateForgery);
}

TEST(SelfBlend, TinyOrHugeMaskRejected) {
  BlendRecipe r = random_recipe(3);
  r.mask_scale = 0.01;
  r.blend_feather = 0.3;
  EXPECT_THROW(self_blend(faces()[0], r), DegenerateForgery);
  r.mask_scale = 20;
  EXPECT_THROW(self_blend(faces()[0], r), DegenerateForgery);
}

TEST(SelfBlend, ReplayIsBitIdentical) {
  for (int i = 0; i < 10; ++i) {
    const auto r = random_recipe(100 + i);
    const auto f1 = self_blend(faces()[i], r);
    const auto f2 = self_blend(faces()[i], r);
    EXPECT_EQ(f1.pixels.data, f2.pixels.data);
    EXPECT_EQ(f1.outer_face_mask.data, f2.outer_face_mask.data);
  }
}

TEST(SelfBlend, FakeContract) {
  for (int i = 0; i < 20; ++i) {
    const auto& real = faces()[i];
    const auto fake = self_blend_random(real, 500 + i);
    EXPECT_EQ(fake.label, Label::fake);
    EXPECT_EQ(fake.pair_id, real.id);
    const auto ones = fake.outer_face_mask.count_ones();
    EXPECT_GT(ones, 0u);
    EXPECT_LT(ones, fake.outer_face_mask.data.size());
  }
  ImageSample not_real = faces()[0];
  not_real.label = Label::fake;
  EXPECT_THROW(self_blend(not_real, random_recipe(1)), std::invalid_argument);
}

TEST(SelfBlend, MaskAreaMatchesPixelCount) {
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const auto r = random_recipe(9000 + i);
    const auto& real = faces()[i];
    const GrayMap blend = blend_mask(r, real.landmarks, real.pixels.width, real.pixels.height);
    std::size_t manipulated = 0;
    for (int y = 0; y < blend.height; ++y)
      for (int x = 0; x < blend.width; ++x)
        if (blend.at(x, y) >= 0.5f) ++manipulated;
    ImageSample fake;
    try {
      fake = self_blend(real, r);
    } catch (const DegenerateForgery&) {
      continue;
    }
    const std::size_t zeros = fake.outer_face_mask.data.size() - fake.outer_face_mask.count_ones();
    EXPECT_LE(std::max(zeros, manipulated) - std::min(zeros, manipulated), 1u);
    ++checked;
  }
  EXPECT_GE(checked, 90);
}

TEST(SelfBlend, UnmaskedPixelsUntouched) {
  const auto& real = faces()[5];
  const auto r = random_recipe(77);
  const auto fake = self_blend(real, r);
  const GrayMap blend = blend_mask(r, real.landmarks, 64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (blend.at(x, y) == 0.f)
        for (int c = 0; c < 3; ++c) EXPECT_EQ(fake.pixels.at(x, y, c), real.pixels.at(x, y, c));
}

TEST(SelfBlend, SourceTransformBounds) {
  // A full-magnitude shift moves a sharp edge by at most 3% of the width.
  Image img(100, 100);
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = x < 50 ? 0.f : 1.f;
  for (int s = 0; s < 20; ++s) {
    Rng rng(s);
    const Image out = apply_source_transform(img, {TransformKind::shift, 1.0}, rng);
    for (int x = 0; x < 100; ++x) {
      if (x < 46) EXPECT_EQ(out.at(x, 50, 0), 0.f);
      if (x > 53) EXPECT_EQ(out.at(x, 50, 0), 1.f);
    }
  }
}

TEST(Augment, FlipIsInvolution) {
  AugmentOptions only_flip{1.0, 0, 0, 0, 0};
  Rng rng(1);
  const auto& s = faces()[3];
  auto fake = self_blend_random(s, 4);
  const auto once = augment(fake, rng, only_flip);
  const auto twice = augment(once, rng, only_flip);
  EXPECT_NE(once.pixels.data, fake.pixels.data);
  EXPECT_EQ(twice.pixels.data, fake.pixels.data);
  EXPECT_EQ(twice.outer_face_mask.data, fake.outer_face_mask.data);
  EXPECT_EQ(once.outer_face_mask.data, flip_horizontal(fake.outer_face_mask).data);
}

TEST(Augment, PhotometricLeavesMaskUnchanged) {
  AugmentOptions photometric{0.0, 1.0, 1.0, 1.0, 1.0};
  const auto fake = self_blend_random(faces()[8], 9);
  for (int s = 0; s < 5; ++s) {
    Rng rng(s);
    AugmentRecord rec;
    const auto out = augment(fake, rng, photometric, &rec);
    EXPECT_FALSE(rec.flipped);
    EXPECT_GT(rec.jpeg_quality, 0);
    EXPECT_EQ(out.outer_face_mask.data, fake.outer_face_mask.data);
    EXPECT_NE(out.pixels.data, fake.pixels.data);
  }
}

TEST(Augment, JpegQuality90AgainstIndependentDecoder) {
  Rng rng(21);
  for (int t = 0; t < 5; ++t) {
    const Image img = smooth_random_image(64, rng);
    const auto bytes = encode_jpeg(img, 90);
    const cv::Mat decoded = cv::imdecode(bytes, cv::IMREAD_COLOR);
    ASSERT_EQ(decoded.rows, 64);
    ASSERT_EQ(decoded.cols, 64);
    Image other(64, 64);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const auto bgr = decoded.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c) other.at(x, y, c) = bgr[2 - c] / 255.f;
      }
    EXPECT_GE(psnr(img, other), 30.0);
    // both decoders agree closely on the same bitstream
    EXPECT_GE(psnr(decode_jpeg(bytes), other), 40.0);
  }
}

TEST(Degrade, SeverityZeroIsIdentity) {
  for (auto k : all_degradations()) EXPECT_EQ(degrade(faces()[0].pixels, k, 0).data, faces()[0].pixels.data);
}

TEST(Degrade, NoiseMseIncreasesWithSeverity) {
  Image flat(64, 64);
  for (auto& v : flat.data) v = 0.5f;
  double prev = 0;
  for (int s = 1; s <= 5; ++s) {
    const double m = mse(flat, degrade(flat, DegradationKind::gaussian_noise, s, 3));
    EXPECT_GT(m, prev);
    prev = m;
  }
}

TEST(Degrade, ContrastChangesVariance) {
  const Image& img = faces()[2].pixels;
  auto variance = [](const Image& im) {
    double mean = 0, sq = 0;
    for (float v : im.data) mean += v;
    mean /= im.data.size();
    for (float v : im.data) sq += (v - mean) * (v - mean);
    return sq / im.data.size();
  };
  EXPECT_LT(variance(degrade(img, DegradationKind::contrast, 5)), 0.5 * variance(img));
}

TEST(Degrade, Deterministic) {
  for (auto k : all_degradations())
    EXPECT_EQ(degrade(faces()[1].pixels, k, 3, 7).data, degrade(faces()[1].pixels, k, 3, 7).data);
}

TEST(Degrade, RejectsUnknownKindAndSeverity) {
  EXPECT_THROW(parse_degradation("pixelate"), std::invalid_argument);
  EXPECT_EQ(parse_degradation("gaussian_blur"), DegradationKind::gaussian_blur);
  EXPECT_THROW(degrade(faces()[0].pixels, DegradationKind::jpeg, 6), std::invalid_argument);
}

TEST(DatasetIO, ManifestAndLoader) {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / "kid_synthesis_io";
  fs::remove_all(root);
  fs::create_directories(root / "real" / "vid_a");
  write_png((root / "real" / "vid_a" / "000.png").string(), faces()[0].pixels);
  write_png((root / "real" / "vid_a" / "001.png").string(), faces()[1].pixels);
  {
    std::ofstream lm(root / "real" / "vid_a" / "000.landmarks.json");
    lm << "[[10,10],[50,12],[30,55]]";
  }
  const auto loaded = load_real_dataset(root.string(), 32);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].group_id.value(), "vid_a");
  ASSERT_EQ(loaded[0].landmarks.size(), 3u);
  EXPECT_DOUBLE_EQ(loaded[0].landmarks[1].x, 25.0);
  EXPECT_TRUE(loaded[1].landmarks.empty());

  const auto fake = self_blend_random(faces()[0], 1);
  const auto manifest = write_manifest((root / "out").string(), {faces()[0], fake});
  std::ifstream in(manifest);
  std::string line;
  std::vector<nlohmann::json> recs;
  while (std::getline(in, line)) recs.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1]["label"], "fake");
  EXPECT_EQ(recs[1]["pair_id"], faces()[0].id);
  EXPECT_TRUE(fs::exists(root / "out" / recs[1]["mask_path"].get<std::string>()));
  fs::remove_all(root);
}
