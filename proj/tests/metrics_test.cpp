#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "radious/metrics/metrics.hpp"
#include "testutil.hpp"

namespace rm = radious::metrics;
using radious::io::GrayImage;

namespace {

GrayImage image_of(int w, int h, std::vector<std::uint8_t> px) {
  GrayImage img;
  img.width = w;
  img.height = h;
  img.pixels = std::move(px);
  return img;
}

GrayImage random_map(int w, int h, int num_classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> cls(0, num_classes - 1);
  GrayImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(cls(rng));
  return img;
}

}  // namespace

// --- accumulate -------------------------------------------------------------

TEST(Accumulate, PerfectAgreementFillsDiagonal) {
  rm::ConfusionMatrix cm(3);
  const GrayImage m = image_of(2, 2, {1, 1, 1, 1});
  rm::accumulate(cm, m, m);
  EXPECT_EQ(cm.at(1, 1), 4);
  EXPECT_EQ(cm.total(), 4);
}

TEST(Accumulate, EmptyInputLeavesMatrixUnchanged) {
  rm::ConfusionMatrix cm(3);
  rm::accumulate(cm, image_of(0, 0, {}), image_of(0, 0, {}));
  EXPECT_EQ(cm.total(), 0);
}

TEST(Accumulate, MatchesBruteForcePixelCounting) {
  std::mt19937_64 rng(41);
  const GrayImage pred = random_map(3, 3, 3, rng);
  const GrayImage gt = random_map(3, 3, 3, rng);
  rm::ConfusionMatrix cm(3);
  rm::accumulate(cm, pred, gt);
  // Oracle: count each (gt, pred) pair directly.
  long long oracle[3][3] = {};
  for (std::size_t i = 0; i < gt.pixels.size(); ++i) ++oracle[gt.pixels[i]][pred.pixels[i]];
  for (int g = 0; g < 3; ++g)
    for (int p = 0; p < 3; ++p) EXPECT_EQ(cm.at(g, p), oracle[g][p]) << g << "," << p;
}

TEST(Accumulate, ExtentMismatchIsGeometryError) {
  rm::ConfusionMatrix cm(2);
  try {
    rm::accumulate(cm, image_of(2, 2, {0, 0, 0, 0}), image_of(2, 1, {0, 0}));
    FAIL() << "expected geometry error";
  } catch (const radious::Error& e) {
    EXPECT_EQ(e.code(), "geometry");
  }
}

TEST(Accumulate, OrderIndependentOverSamples) {
  std::mt19937_64 rng(7);
  std::vector<std::pair<GrayImage, GrayImage>> samples;
  for (int i = 0; i < 6; ++i)
    samples.emplace_back(random_map(4, 5, 4, rng), random_map(4, 5, 4, rng));

  rm::ConfusionMatrix forward(4);
  for (const auto& [p, g] : samples) rm::accumulate(forward, p, g);

  std::vector<std::size_t> order = {5, 2, 0, 4, 1, 3};
  rm::ConfusionMatrix shuffled(4);
  for (std::size_t i : order) rm::accumulate(shuffled, samples[i].first, samples[i].second);

  for (int g = 0; g < 4; ++g)
    for (int p = 0; p < 4; ++p) EXPECT_EQ(forward.at(g, p), shuffled.at(g, p));
}

TEST(Accumulate, MergeEqualsSingleAccumulation) {
  std::mt19937_64 rng(19);
  const GrayImage p1 = random_map(3, 4, 3, rng), g1 = random_map(3, 4, 3, rng);
  const GrayImage p2 = random_map(5, 2, 3, rng), g2 = random_map(5, 2, 3, rng);
  rm::ConfusionMatrix whole(3), part1(3), part2(3);
  rm::accumulate(whole, p1, g1);
  rm::accumulate(whole, p2, g2);
  rm::accumulate(part1, p1, g1);
  rm::accumulate(part2, p2, g2);
  part1 += part2;
  for (int g = 0; g < 3; ++g)
    for (int p = 0; p < 3; ++p) EXPECT_EQ(whole.at(g, p), part1.at(g, p));
}

// --- iou_per_class ----------------------------------------------------------

TEST(IouPerClass, PerfectPredictionGivesOne) {
  std::mt19937_64 rng(3);
  const GrayImage m = random_map(6, 6, 4, rng);
  rm::ConfusionMatrix cm(4);
  rm::accumulate(cm, m, m);
  const auto iou = rm::iou_per_class(cm);
  EXPECT_FALSE(iou.empty());
  for (const auto& [c, v] : iou) EXPECT_DOUBLE_EQ(v, 1.0) << "class " << c;
}

TEST(IouPerClass, DisjointPredictionGivesZero) {
  // gt paints class 1 on the left half, pred paints it on the right half.
  const GrayImage gt = image_of(4, 1, {1, 1, 0, 0});
  const GrayImage pred = image_of(4, 1, {0, 0, 1, 1});
  rm::ConfusionMatrix cm(2);
  rm::accumulate(cm, pred, gt);
  const auto iou = rm::iou_per_class(cm);
  EXPECT_DOUBLE_EQ(iou.at(1), 0.0);
}

TEST(IouPerClass, HandComputedTwoClassCase) {
  // 4x4, gt has 8 pixels of class 1; pred overlaps 4 of them and adds 2
  // false positives -> IoU_1 = TP / (TP + FP + FN) = 4 / (4 + 2 + 4) = 0.4.
  const GrayImage gt = image_of(4, 4,
                                {1, 1, 1, 1,  //
                                 1, 1, 1, 1,  //
                                 0, 0, 0, 0,  //
                                 0, 0, 0, 0});
  const GrayImage pred = image_of(4, 4,
                                  {1, 1, 1, 1,  //
                                   0, 0, 0, 0,  //
                                   1, 1, 0, 0,  //
                                   0, 0, 0, 0});
  rm::ConfusionMatrix cm(2);
  rm::accumulate(cm, pred, gt);
  const auto iou = rm::iou_per_class(cm);
  EXPECT_DOUBLE_EQ(iou.at(1), 0.4);
}

TEST(IouPerClass, AbsentClassesAreOmittedNotZeroFilled) {
  const GrayImage m = image_of(2, 2, {1, 1, 1, 1});
  rm::ConfusionMatrix cm(5);
  rm::accumulate(cm, m, m);
  const auto iou = rm::iou_per_class(cm);
  EXPECT_EQ(iou.size(), 1u);
  EXPECT_TRUE(iou.count(1));
  EXPECT_FALSE(iou.count(0));
  EXPECT_FALSE(iou.count(3));
}

TEST(IouPerClass, BoundsAndExactOneCondition) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const GrayImage pred = random_map(7, 5, 4, rng);
    const GrayImage gt = random_map(7, 5, 4, rng);
    rm::ConfusionMatrix cm(4);
    rm::accumulate(cm, pred, gt);
    for (const auto& [c, v] : rm::iou_per_class(cm)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      const long long tp = cm.at(c, c);
      const long long fp = cm.col_sum(c) - tp;
      const long long fn = cm.row_sum(c) - tp;
      EXPECT_EQ(v == 1.0, fp == 0 && fn == 0 && tp > 0) << "class " << c;
    }
  }
}

// --- miou / macc ------------------------------------------------------------

TEST(Miou, PerfectPredictionGivesOne) {
  std::mt19937_64 rng(5);
  const GrayImage m = random_map(8, 8, 3, rng);
  rm::ConfusionMatrix cm(3);
  rm::accumulate(cm, m, m);
  EXPECT_DOUBLE_EQ(rm::miou(cm), 1.0);
  EXPECT_DOUBLE_EQ(rm::macc(cm), 1.0);
}

TEST(Miou, MeanOfOneAndZeroIsHalf) {
  EXPECT_DOUBLE_EQ(rm::mean_iou({{1, 1.0}, {2, 0.0}}), 0.5);
}

TEST(Miou, IsUnweightedMeanOverPresentClasses) {
  // Class 0 perfect, class 1 always mislabeled as class 2: present classes
  // score {1.0, 0.0, 0.0} so the mean is 1/3.
  const GrayImage gt = image_of(4, 1, {0, 0, 1, 1});
  const GrayImage pred = image_of(4, 1, {0, 0, 2, 2});
  rm::ConfusionMatrix cm(3);
  rm::accumulate(cm, pred, gt);
  const auto iou = rm::iou_per_class(cm);
  EXPECT_DOUBLE_EQ(iou.at(0), 1.0);
  EXPECT_DOUBLE_EQ(iou.at(1), 0.0);
  EXPECT_DOUBLE_EQ(iou.at(2), 0.0);
  EXPECT_NEAR(rm::miou(cm), 1.0 / 3.0, 1e-12);
}

TEST(Miou, EmptyMatrixIsDegenerateEvaluation) {
  rm::ConfusionMatrix cm(4);
  try {
    (void)rm::miou(cm);
    FAIL() << "expected degenerate_evaluation";
  } catch (const radious::Error& e) {
    EXPECT_EQ(e.code(), "degenerate_evaluation");
  }
}

TEST(Macc, FullyMislabeledClassContributesZero) {
  // Class 1 entirely predicted as class 0; class 0 predicted perfectly.
  const GrayImage gt = image_of(4, 1, {0, 0, 1, 1});
  const GrayImage pred = image_of(4, 1, {0, 0, 0, 0});
  rm::ConfusionMatrix cm(2);
  rm::accumulate(cm, pred, gt);
  // acc_0 = 2/2 = 1, acc_1 = 0/2 = 0 -> macc = 0.5
  EXPECT_DOUBLE_EQ(rm::macc(cm), 0.5);
}

TEST(MiouMacc, MatchBruteForceRecomputationOnRandomMaps) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 8; ++trial) {
    const int classes = 5;
    const GrayImage pred = random_map(9, 6, classes, rng);
    const GrayImage gt = random_map(9, 6, classes, rng);
    rm::ConfusionMatrix cm(classes);
    rm::accumulate(cm, pred, gt);

    // Brute force from raw pixels.
    double iou_sum = 0;
    int iou_n = 0;
    double acc_sum = 0;
    int acc_n = 0;
    for (int c = 0; c < classes; ++c) {
      long long inter = 0, uni = 0, gt_count = 0, correct = 0;
      for (std::size_t i = 0; i < gt.pixels.size(); ++i) {
        const bool in_gt = gt.pixels[i] == c, in_pred = pred.pixels[i] == c;
        if (in_gt && in_pred) ++inter;
        if (in_gt || in_pred) ++uni;
        if (in_gt) {
          ++gt_count;
          if (in_pred) ++correct;
        }
      }
      if (uni > 0) {
        iou_sum += static_cast<double>(inter) / static_cast<double>(uni);
        ++iou_n;
      }
      if (gt_count > 0) {
        acc_sum += static_cast<double>(correct) / static_cast<double>(gt_count);
        ++acc_n;
      }
    }
    ASSERT_GT(iou_n, 0);
    ASSERT_GT(acc_n, 0);
    EXPECT_NEAR(rm::miou(cm), iou_sum / iou_n, 1e-12);
    EXPECT_NEAR(rm::macc(cm), acc_sum / acc_n, 1e-12);
  }
}

TEST(MiouMacc, BackgroundExclusionFlag) {
  const GrayImage gt = image_of(4, 1, {0, 0, 1, 1});
  const GrayImage pred = image_of(4, 1, {0, 1, 1, 1});
  rm::ConfusionMatrix cm(2);
  rm::accumulate(cm, pred, gt);
  // With background: IoU_0 = 1/2, IoU_1 = 2/3 -> miou = 7/12.
  EXPECT_NEAR(rm::miou(cm, true), 7.0 / 12.0, 1e-12);
  // Without background only class 1 remains.
  EXPECT_NEAR(rm::miou(cm, false), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(rm::macc(cm, false), 1.0, 1e-12);
}

// --- reports ----------------------------------------------------------------

TEST(Report, RoundTripsThroughJsonFile) {
  std::mt19937_64 rng(77);
  const GrayImage pred = random_map(6, 6, 3, rng);
  const GrayImage gt = random_map(6, 6, 3, rng);
  rm::ConfusionMatrix cm(3);
  rm::accumulate(cm, pred, gt);
  const rm::MetricReport r =
      rm::report_from_confusion(cm, "unit", {"background", "alpha", "beta"});

  testutil::TempDir dir;
  const std::string path = (dir.path() / "report.json").string();
  rm::save_report(path, r);
  const rm::MetricReport back = rm::load_report(path);

  EXPECT_EQ(back.model_name, r.model_name);
  EXPECT_EQ(back.pixel_total, r.pixel_total);
  EXPECT_DOUBLE_EQ(back.miou, r.miou);
  EXPECT_DOUBLE_EQ(back.macc, r.macc);
  ASSERT_EQ(back.per_class.size(), r.per_class.size());
  for (std::size_t i = 0; i < r.per_class.size(); ++i) {
    EXPECT_EQ(back.per_class[i].id, r.per_class[i].id);
    EXPECT_EQ(back.per_class[i].name, r.per_class[i].name);
    EXPECT_DOUBLE_EQ(back.per_class[i].iou, r.per_class[i].iou);
    EXPECT_DOUBLE_EQ(back.per_class[i].acc, r.per_class[i].acc);
  }
}

TEST(Report, MiouEqualsMeanOfPerClassEntries) {
  const std::string dir = std::string(RADIOUS_FIXTURE_DIR) + "/table1";
  for (const char* name : {"radious", "deeplabv3plus", "segformer"}) {
    const rm::MetricReport r = rm::load_report(dir + "/" + name + ".json");
    ASSERT_FALSE(r.per_class.empty()) << name;
    double iou_sum = 0, acc_sum = 0;
    for (const auto& s : r.per_class) {
      iou_sum += s.iou;
      acc_sum += s.acc;
    }
    EXPECT_NEAR(r.miou, iou_sum / r.per_class.size(), 1e-12) << name;
    EXPECT_NEAR(r.macc, acc_sum / r.per_class.size(), 1e-12) << name;
  }
}

// --- compare_reports --------------------------------------------------------

TEST(Compare, ReproducesPublishedRankingAndDeltas) {
  const std::string dir = std::string(RADIOUS_FIXTURE_DIR) + "/table1";
  const std::vector<rm::MetricReport> reports = {
      rm::load_report(dir + "/deeplabv3plus.json"),
      rm::load_report(dir + "/radious.json"),
      rm::load_report(dir + "/segformer.json"),
  };
  const auto rows = rm::compare_reports(reports);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].model_name, "radious");
  EXPECT_EQ(rows[1].model_name, "deeplabv3plus");
  EXPECT_EQ(rows[2].model_name, "segformer");
  EXPECT_NEAR(rows[0].miou, 0.65, 1e-12);
  EXPECT_NEAR(rows[0].macc, 0.90, 1e-12);
  EXPECT_NEAR(rows[1].miou, 0.56, 1e-12);
  EXPECT_NEAR(rows[1].macc, 0.70, 1e-12);
  EXPECT_NEAR(rows[2].miou, 0.32, 1e-12);
  EXPECT_NEAR(rows[2].macc, 0.15, 1e-12);
  EXPECT_NEAR(rows[0].miou_delta, 0.0, 1e-12);
  EXPECT_NEAR(rows[1].miou_delta, -0.09, 1e-12);
  EXPECT_NEAR(rows[2].miou_delta, -0.33, 1e-12);
}

TEST(Compare, EqualScoresGiveZeroDelta) {
  rm::MetricReport a, b;
  a.model_name = "first";
  b.model_name = "second";
  a.miou = b.miou = 0.42;
  a.macc = b.macc = 0.5;
  const auto rows = rm::compare_reports({a, b});
  EXPECT_DOUBLE_EQ(rows[0].miou_delta, 0.0);
  EXPECT_DOUBLE_EQ(rows[1].miou_delta, 0.0);
}

TEST(Compare, DeltaEqualsDirectSubtraction) {
  // Hand-built matrices, then compare the derived reports.
  rm::ConfusionMatrix strong(2), weak(2);
  strong.at(0, 0) = 6;
  strong.at(1, 1) = 3;
  strong.at(1, 0) = 1;  // IoU: 0 -> 6/7, 1 -> 3/4
  weak.at(0, 0) = 4;
  weak.at(0, 1) = 2;
  weak.at(1, 1) = 2;
  weak.at(1, 0) = 2;  // IoU: 0 -> 4/8, 1 -> 2/6
  const rm::MetricReport rs = rm::report_from_confusion(strong, "strong", {"bg", "fg"});
  const rm::MetricReport rw = rm::report_from_confusion(weak, "weak", {"bg", "fg"});
  const auto rows = rm::compare_reports({rw, rs});
  ASSERT_EQ(rows[0].model_name, "strong");
  EXPECT_NEAR(rows[1].miou_delta, rw.miou - rs.miou, 1e-15);
}

TEST(Compare, DuplicateNamesAreNamingError) {
  rm::MetricReport a, b;
  a.model_name = b.model_name = "twin";
  try {
    (void)rm::compare_reports({a, b});
    FAIL() << "expected naming error";
  } catch (const radious::Error& e) {
    EXPECT_EQ(e.code(), "naming");
    EXPECT_NE(std::string(e.what()).find("twin"), std::string::npos);
  }
}

TEST(Compare, FewerThanTwoReportsIsParameterError) {
  rm::MetricReport only;
  only.model_name = "solo";
  try {
    (void)rm::compare_reports({only});
    FAIL() << "expected parameter error";
  } catch (const radious::Error& e) {
    EXPECT_EQ(e.code(), "parameter");
  }
}
