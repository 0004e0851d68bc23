#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "oracles.hpp"
#include "shisr/data.hpp"
#include "shisr/image.hpp"
#include "shisr/serialize.hpp"

using namespace shisr;
using testutil::make;
using testutil::values;

namespace {

// 2x2 8-bit RGB PNG: red, green / blue, grey 128.
const unsigned char kFourPixelPng[] = {
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 0x08, 0x02, 0x00, 0x00, 0x00, 0xfd,
    0xd4, 0x9a, 0x73, 0x00, 0x00, 0x00, 0x13, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0xf8,
    0xcf, 0xc0, 0xc0, 0x00, 0xc2, 0x0c, 0xff, 0x1b, 0x1a, 0x1a, 0x00, 0x1c, 0xf4, 0x04, 0x7e,
    0x29, 0x80, 0x40, 0xd8, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60,
    0x82};

std::vector<double> resample_plane(const std::vector<double>& in, int h, int w, int oh, int ow) {
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    const auto r = oracle::resample_row({in.begin() + y * w, in.begin() + (y + 1) * w}, ow);
    std::copy(r.begin(), r.end(), rows.begin() + y * ow);
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int x = 0; x < ow; ++x) {
    std::vector<double> col(h);
    for (int y = 0; y < h; ++y) col[y] = rows[y * ow + x];
    const auto r = oracle::resample_row(col, oh);
    for (int y = 0; y < oh; ++y) out[y * ow + x] = r[y];
  }
  return out;
}

std::vector<ManifestRecord> records(int per_stratum, int labels, int mags) {
  std::vector<ManifestRecord> out;
  for (int l = 0; l < labels; ++l)
    for (int m = 0; m < mags; ++m)
      for (int i = 0; i < per_stratum; ++i) {
        ManifestRecord r;
        r.path = std::to_string(l) + "_" + std::to_string(m) + "_" + std::to_string(i) + ".png";
        r.label = l;
        r.magnification = kMagnifications[m];
        out.push_back(r);
      }
  return out;
}

}  // namespace

TEST(Png, ByteLevelOracle) {
  const auto dir = testutil::temp_dir("png");
  const auto path = dir / "four.png";
  {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(kFourPixelPng), sizeof(kFourPixelPng));
  }
  const Tensor img = load_png(path);
  EXPECT_EQ(img.shape(), (Shape{1, 3, 2, 2}));
  const double g = 128.0 / 255.0;
  EXPECT_NEAR(g, 0.50196, 1e-5);
  const std::vector<double> expected{1, 0, 0, g, 0, 1, 0, g, 0, 0, 1, g};
  for (int i = 0; i < 12; ++i) EXPECT_FLOAT_EQ(img.data()[i], static_cast<float>(expected[i]));

  save_png(dir / "back.png", img);
  EXPECT_TRUE(bit_identical(load_png(dir / "back.png"), img));
  save_png(dir / "white.png", Tensor::full({1, 3, 2, 2}, 1));
  for (const double v : testutil::values(load_png(dir / "white.png"))) EXPECT_EQ(v, 1.0f);
  save_png(dir / "black.png", Tensor::zeros({1, 3, 2, 2}));
  for (const double v : testutil::values(load_png(dir / "black.png"))) EXPECT_EQ(v, 0.0f);

  EXPECT_THROW(load_png(dir / "missing.png"), IoError);
  write_file(dir / "corrupt.png", "not a png");
  EXPECT_THROW(load_png(dir / "corrupt.png"), IoError);
}

TEST(Bicubic, Kernel) {
  for (double x : {0.0, 0.25, 0.5, 1.0, 1.3, 1.75, 2.0, 2.5}) {
    EXPECT_NEAR(cubic_kernel(x), oracle::keys_cubic(x), 1e-12);
    EXPECT_NEAR(cubic_kernel(-x), oracle::keys_cubic(x), 1e-12);
  }
  // The kernel interpolates the Catmull-Rom spline.
  const double p[4] = {0.2, -0.4, 1.3, 0.7};
  for (double t : {0.1, 0.5, 0.8}) {
    double v = 0.0;
    for (int i = 0; i < 4; ++i) v += p[i] * cubic_kernel(t - (i - 1));
    EXPECT_NEAR(v, oracle::catmull_rom(p[0], p[1], p[2], p[3], t), 1e-12);
  }
}

TEST(Bicubic, ConstantAndErrors) {
  const Tensor c = Tensor::full({1, 3, 5, 7}, 0.3f);
  for (auto [h, w] : {std::pair{2, 3}, {9, 4}, {15, 21}}) {
    for (const double v : testutil::values(bicubic_resample(c, h, w))) EXPECT_NEAR(v, 0.3, 1e-6);
  }
  EXPECT_THROW(bicubic_resample(c, 0, 4), ShapeError);
}

TEST(Bicubic, NegativeLobesMatchOracle) {
  const std::vector<double> row{0, 0, 1, 0, 0};
  const Tensor up = bicubic_resample(make({1, 1, 1, 5}, row), 1, 10);
  const auto ref = oracle::resample_row(row, 10);
  bool negative = false;
  for (int i = 0; i < 10; ++i) {
    EXPECT_NEAR(up.data()[i], ref[i], 1e-6);
    negative = negative || up.data()[i] < 0;
  }
  EXPECT_TRUE(negative);
}

TEST(Bicubic, MatchesSeparableOracle) {
  Rng rng(1);
  const Tensor img = testutil::random({1, 1, 4, 4}, rng, 0, 1);
  for (auto [h, w] : {std::pair{2, 2}, {8, 8}, {3, 6}}) {
    const auto ref = resample_plane(values(img), 4, 4, h, w);
    const Tensor got = bicubic_resample(img, h, w);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got.data()[i], ref[i], 1e-5);
  }
}

TEST(Bicubic, RampSurvivesDownAndUp) {
  std::vector<double> v(64 * 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) v[y * 64 + x] = (0.7 * x + 0.3 * y) / 64.0;
  const Tensor ramp = make({1, 1, 64, 64}, v);
  const Tensor back = bicubic_resample(bicubic_resample(ramp, 32, 32), 64, 64);
  double worst = 0.0;
  for (int y = 8; y < 56; ++y)
    for (int x = 8; x < 56; ++x) worst = std::max(worst, std::fabs(back.at(0, 0, y, x) - v[y * 64 + x]));
  EXPECT_LT(worst, 1e-3);
}

TEST(HrPatch, Shapes) {
  Rng rng(2);
  const Tensor frame = testutil::random({1, 3, 460, 700}, rng, 0, 1);
  EXPECT_EQ(make_hr_patch(frame, 384).shape(), (Shape{1, 3, 384, 384}));
  EXPECT_EQ(make_hr_patch(frame, 384, &rng).shape(), (Shape{1, 3, 384, 384}));
  const Tensor exact = testutil::random({1, 3, 384, 384}, rng, 0, 1);
  EXPECT_TRUE(bit_identical(make_hr_patch(exact, 384), exact));
  EXPECT_EQ(make_hr_patch(testutil::random({1, 3, 200, 300}, rng), 384).shape(),
            (Shape{1, 3, 384, 384}));
  EXPECT_THROW(make_hr_patch(Tensor::zeros({1, 3, 0, 5}), 384), ShapeError);
}

TEST(Pairs, SizesFollowScale) {
  Rng rng(3);
  const Tensor hr = testutil::random({1, 3, 48, 48}, rng, 0, 1);
  for (int s : {2, 4, 8}) {
    const SamplePair p = make_pair(hr, s, 3, Magnification::X200);
    EXPECT_EQ(p.lr.shape().h * s, p.hr.shape().h);
    EXPECT_EQ(p.lr.shape().w * s, p.hr.shape().w);
  }
  EXPECT_THROW(make_pair(hr, 5, 0, Magnification::X40), ShapeError);
}

TEST(Augment, IdentityAndDeterminism) {
  Rng rng(4);
  const SamplePair p = make_pair(testutil::random({1, 3, 16, 16}, rng, 0, 1), 2, 1,
                                 Magnification::X40);
  const SamplePair same = augment(p, AugmentParams::identity());
  EXPECT_TRUE(bit_identical(same.hr, p.hr));
  EXPECT_TRUE(bit_identical(same.lr, p.lr));
  const SamplePair a = augment(p, 99), b = augment(p, 99);
  EXPECT_TRUE(bit_identical(a.hr, b.hr));
  EXPECT_TRUE(bit_identical(a.lr, b.lr));
  for (Real v : a.hr.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Augment, SampledFactorsInRange) {
  Rng rng(5);
  std::set<int> rotations;
  for (int i = 0; i < 200; ++i) {
    const AugmentParams p = AugmentParams::sample(rng);
    rotations.insert(p.rotations);
    for (double f : {p.brightness, p.contrast, p.saturation}) {
      EXPECT_GE(f, 0.8);
      EXPECT_LE(f, 1.2);
    }
  }
  EXPECT_EQ(rotations.size(), 4u);
}

TEST(Augment, GeometryIsAPermutation) {
  Rng rng(6);
  const Tensor img = testutil::random({1, 3, 6, 6}, rng, 0, 1);
  auto sorted = [](const Tensor& t) {
    auto v = values(t);
    std::sort(v.begin(), v.end());
    return v;
  };
  for (int k = 0; k < 4; ++k) {
    for (bool flip : {false, true}) {
      EXPECT_EQ(sorted(apply_geometry(img, k, flip)), sorted(img));
    }
  }
  EXPECT_TRUE(bit_identical(apply_geometry(apply_geometry(img, 1, false), 3, false), img));
  // One quarter turn counter-clockwise: out[h][w] = in[w][W - 1 - h].
  const Tensor r = apply_geometry(img, 1, false);
  EXPECT_EQ(r.at(0, 1, 0, 0), img.at(0, 1, 0, 5));
  EXPECT_EQ(r.at(0, 1, 5, 0), img.at(0, 1, 0, 0));
}

TEST(Augment, PairingSurvivesGeometry) {
  Rng rng(7);
  // Smooth content so that bicubic downsampling is well-behaved.
  std::vector<double> v(3 * 32 * 32);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        v[(c * 32 + y) * 32 + x] = 0.5 + 0.3 * std::sin(0.3 * x + 0.2 * y + c) * std::cos(0.1 * y);
  const SamplePair p = make_pair(make({1, 3, 32, 32}, v), 4, 0, Magnification::X40);
  for (int k = 0; k < 4; ++k) {
    for (bool flip : {false, true}) {
      AugmentParams g;
      g.rotations = k;
      g.flip = flip;
      const SamplePair a = augment(p, g);
      const Tensor down = bicubic_resample(a.hr, 8, 8);
      double mae = 0.0;
      for (std::size_t i = 0; i < down.numel(); ++i) mae += std::fabs(down.data()[i] - a.lr.data()[i]);
      EXPECT_LT(mae / down.numel(), 2e-2);
    }
  }
  // Full augmentation keeps the correspondence as well.
  const SamplePair full = augment(p, 1234);
  const Tensor down = bicubic_resample(full.hr, 8, 8);
  double mae = 0.0;
  for (std::size_t i = 0; i < down.numel(); ++i) mae += std::fabs(down.data()[i] - full.lr.data()[i]);
  EXPECT_LT(mae / down.numel(), 2e-2);
}

TEST(Split, KFoldSingleStratum) {
  const auto recs = records(10, 1, 1);
  const FoldAssignment f = kfold_split(recs, 5, 1);
  std::vector<int> sizes(5, 0);
  for (int x : f.fold) ++sizes[x];
  EXPECT_EQ(sizes, (std::vector<int>{2, 2, 2, 2, 2}));
  EXPECT_TRUE(f.warnings.empty());
  EXPECT_EQ(kfold_split(recs, 5, 1).fold, f.fold);
  EXPECT_THROW(kfold_split(recs, 1, 1), ConfigError);
}

TEST(Split, KFoldStratifiedPartition) {
  auto recs = records(7, 8, 4);
  recs.resize(recs.size() - 3);  // uneven last stratum
  const FoldAssignment f = kfold_split(recs, 5, 3);
  ASSERT_EQ(f.fold.size(), recs.size());
  // Every item lands in exactly one fold; per-(label, magnification) counts
  // in each fold are within one item of the stratum size / k.
  std::map<std::pair<int, int>, std::vector<int>> per;
  std::map<std::pair<int, int>, int> total;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    ASSERT_GE(f.fold[i], 0);
    ASSERT_LT(f.fold[i], 5);
    const auto key = std::make_pair(recs[i].label, static_cast<int>(recs[i].magnification));
    per[key].resize(5);
    ++per[key][f.fold[i]];
    ++total[key];
  }
  for (const auto& [key, counts] : per) {
    for (int c : counts) EXPECT_LE(std::fabs(c - total[key] / 5.0), 1.0);
  }
  // Per-class proportion of each fold within one item of the global share.
  std::vector<int> fold_size(5, 0);
  for (int x : f.fold) ++fold_size[x];
  for (int label = 0; label < 8; ++label) {
    int global = 0;
    std::vector<int> in_fold(5, 0);
    for (std::size_t i = 0; i < recs.size(); ++i)
      if (recs[i].label == label) {
        ++global;
        ++in_fold[f.fold[i]];
      }
    for (int k = 0; k < 5; ++k) {
      const double expected = static_cast<double>(global) * fold_size[k] / recs.size();
      EXPECT_LE(std::fabs(in_fold[k] - expected), 1.0) << "label " << label << " fold " << k;
    }
  }
  EXPECT_FALSE(kfold_split(records(3, 1, 1), 5, 0).warnings.empty());
}

TEST(Split, TrainTestRatioPerMagnification) {
  const auto recs = records(20, 8, 4);
  const auto split = train_test_split(recs, 0.3, 5);
  for (int m = 0; m < 4; ++m) {
    int test = 0, all = 0;
    for (std::size_t i = 0; i < recs.size(); ++i)
      if (recs[i].magnification == kMagnifications[m]) {
        ++all;
        test += split[i] == Split::Test;
      }
    EXPECT_EQ(test * 10, all * 3);
  }
}

TEST(Manifest, NamesAndRoundTrip) {
  const auto parsed = parse_breakhis_name("SOB_B_TA-14-3411F-100-001.png");
  ASSERT_TRUE(parsed);
  EXPECT_EQ(parsed->first, 7);
  EXPECT_EQ(parsed->second, Magnification::X100);
  EXPECT_EQ(parse_breakhis_name("SOB_M_DC-14-2523-400-010.png")->first, 1);
  EXPECT_FALSE(parse_breakhis_name("holiday.png"));

  const auto dir = testutil::temp_dir("manifest");
  Manifest m;
  m.records = records(2, 2, 2);
  m.records[1].split = Split::Test;
  m.records[2].fold = 3;
  m.base_dir = dir;
  write_manifest(dir / "m.csv", m);
  const Manifest back = read_manifest(dir / "m.csv");
  ASSERT_EQ(back.records.size(), m.records.size());
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    EXPECT_EQ(back.records[i].path, m.records[i].path);
    EXPECT_EQ(back.records[i].label, m.records[i].label);
    EXPECT_EQ(back.records[i].magnification, m.records[i].magnification);
    EXPECT_EQ(back.records[i].fold, m.records[i].fold);
    EXPECT_EQ(back.records[i].split, m.records[i].split);
  }
  EXPECT_THROW(back.validate(true), IoError);
  write_file(dir / "abbr.csv", "path,label,magnification,fold,split\nx.png,PT,40x,0,train\n");
  EXPECT_EQ(read_manifest(dir / "abbr.csv").records[0].label, 6);
}

TEST(Batching, OrderAndTailMerge) {
  const auto plain = epoch_batches(10, 4, 0, 0, false, 3);
  ASSERT_EQ(plain.size(), 2u);
  EXPECT_EQ(plain[0], (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(plain[1].size(), 6u);
  EXPECT_EQ(plain[1].back(), 9u);
  const auto a = epoch_batches(10, 4, 7, 2, true);
  EXPECT_EQ(a, epoch_batches(10, 4, 7, 2, true));
  EXPECT_NE(a, epoch_batches(10, 4, 7, 3, true));
  std::vector<std::size_t> all;
  for (const auto& b : a) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
}

TEST(Synthetic, ShapesAndLabels) {
  const auto pairs = synthetic_textures(16, 4, 48, 2, 0);
  ASSERT_EQ(pairs.size(), 16u);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i].label, static_cast<int>(i % 4));
    EXPECT_EQ(pairs[i].hr.shape(), (Shape{1, 3, 48, 48}));
    EXPECT_EQ(pairs[i].lr.shape(), (Shape{1, 3, 24, 24}));
    for (Real v : pairs[i].hr.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_TRUE(bit_identical(synthetic_textures(4, 4, 48, 2, 0)[1].hr, pairs[1].hr));
}

TEST(Sources, InMemoryAugmentationIsPerEpochAndIndex) {
  auto pairs = synthetic_textures(4, 4, 32, 2, 1);
  const InMemoryPairs src(pairs, true, 9);
  EXPECT_TRUE(bit_identical(src.get(2, 1).hr, src.get(2, 1).hr));
  EXPECT_TRUE(bit_identical(src.get(2, 1).hr, augment(pairs[2], sample_seed(9, 1, 2)).hr));
  const InMemoryPairs plain(pairs, false, 9);
  EXPECT_TRUE(bit_identical(plain.get(3, 5).lr, pairs[3].lr));
}
