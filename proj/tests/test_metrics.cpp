#include "oracles.hpp"

#include "vlptl/errors.hpp"
#include "vlptl/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace vlptl;
using namespace vlptl::metrics;

namespace {

const Taxonomy& desk() {
    static const Taxonomy t = Taxonomy::desk_default();
    return t;
}

Box shifted(const Box& b, double dx) { return {b.x_min + dx, b.y_min, b.x_max + dx, b.y_max}; }

// Straightforward greedy matcher: stable score order, each detection scans
// every ground truth box and keeps the best unmatched one.
MatchResult naive_match(const std::vector<Detection>& dets, const std::vector<Box>& gts, double thr) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
    std::vector<bool> used(gts.size(), false);
    MatchResult r;
    for (std::size_t i : order) {
        int best = -1;
        double best_iou = thr;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            const double v = iou(dets[i].box, gts[g]);
            if (!used[g] && v >= best_iou && (best < 0 || v > best_iou)) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        r.scores.push_back(dets[i].score);
        r.is_true_positive.push_back(best >= 0);
        if (best >= 0) {
            used[static_cast<std::size_t>(best)] = true;
            ++r.true_positives;
        } else {
            ++r.false_positives;
        }
    }
    r.false_negatives = static_cast<int>(std::count(used.begin(), used.end(), false));
    return r;
}

}  // namespace

// ---- matching --------------------------------------------------------------

TEST(Match, SingleHit) {
    const std::vector<Box> gt = {{0, 0, 10, 10}};
    const std::vector<Detection> d = {{{0, 0, 10, 9}, 0.9, "bird_nest"}};
    const auto r = match_detections(d, gt, 0.5);
    EXPECT_EQ(r.true_positives, 1);
    EXPECT_EQ(r.false_positives, 0);
    EXPECT_EQ(r.false_negatives, 0);
}

TEST(Match, DuplicateIsFalsePositive) {
    const std::vector<Box> gt = {{0, 0, 10, 10}};
    const std::vector<Detection> d = {{{0, 0, 10, 10}, 0.7, "x"}, {{0, 0, 10, 9}, 0.9, "x"}};
    const auto r = match_detections(d, gt, 0.5);
    EXPECT_EQ(r.true_positives, 1);
    EXPECT_EQ(r.false_positives, 1);
    EXPECT_EQ(r.scores, (std::vector<double>{0.9, 0.7}));
    EXPECT_EQ(r.is_true_positive, (std::vector<bool>{true, false}));
}

TEST(Match, RandomSmallInstancesMatchNaiveGreedy) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 30);
    std::uniform_real_distribution<double> s(0, 1);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<Box> gts;
        const int n_gt = std::uniform_int_distribution<int>(0, 5)(rng);
        for (int i = 0; i < n_gt; ++i) {
            const double x = u(rng);
            const double y = u(rng);
            gts.push_back({x, y, x + 5 + u(rng) / 3, y + 5 + u(rng) / 3});
        }
        std::vector<Detection> dets;
        const int n_det = std::uniform_int_distribution<int>(0, 8)(rng);
        for (int i = 0; i < n_det; ++i) {
            Box b;
            if (!gts.empty() && s(rng) < 0.7) {
                b = shifted(gts[std::uniform_int_distribution<std::size_t>(0, gts.size() - 1)(rng)], u(rng) / 10);
            } else {
                const double x = u(rng);
                const double y = u(rng);
                b = {x, y, x + 5 + u(rng) / 3, y + 5 + u(rng) / 3};
            }
            dets.push_back({b, std::round(s(rng) * 10) / 10, "c"});
        }
        const double thr = s(rng) < 0.5 ? 0.5 : 0.75;
        const auto got = match_detections(dets, gts, thr);
        const auto want = naive_match(dets, gts, thr);
        ASSERT_EQ(got.true_positives, want.true_positives);
        ASSERT_EQ(got.false_positives, want.false_positives);
        ASSERT_EQ(got.false_negatives, want.false_negatives);
        ASSERT_EQ(got.is_true_positive, want.is_true_positive);
        ASSERT_EQ(got.true_positives + got.false_negatives, n_gt);
        if (!dets.empty()) {
            ASSERT_DOUBLE_EQ(got.precision(), static_cast<double>(want.true_positives) / n_det);
        }
        if (n_gt > 0) {
            ASSERT_DOUBLE_EQ(got.recall(), static_cast<double>(want.true_positives) / n_gt);
        }
    }
}

// ---- AP --------------------------------------------------------------------

TEST(AveragePrecision, Examples) {
    EXPECT_DOUBLE_EQ(average_precision(std::vector<double>{0.9}, std::vector<bool>{true}, 1), 1.0);
    EXPECT_DOUBLE_EQ(average_precision(std::vector<double>{0.9, 0.8}, std::vector<bool>{false, true}, 1), 0.5);
    EXPECT_DOUBLE_EQ(average_precision(std::vector<double>{}, std::vector<bool>{}, 3), 0.0);
    EXPECT_DOUBLE_EQ(average_precision(std::vector<double>{0.5}, std::vector<bool>{false}, 0), 0.0);
}

TEST(AveragePrecision, EnvelopeTakesBestPrecisionToTheRight) {
    // TP, FP, TP over 2 GT: precision 1 at recall 0.5, 2/3 at recall 1.
    EXPECT_NEAR(average_precision(std::vector<double>{0.9, 0.8, 0.7}, std::vector<bool>{true, false, true}, 2),
                0.5 * 1.0 + 0.5 * (2.0 / 3.0), 1e-12);
    // FP then TP, TP: the envelope lifts recall 0.5 to precision 2/3.
    EXPECT_NEAR(average_precision(std::vector<double>{0.9, 0.8, 0.7}, std::vector<bool>{false, true, true}, 2), 2.0 / 3.0,
                1e-12);
}

TEST(AveragePrecision, BoundedAndAtMostRecall) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const int n = std::uniform_int_distribution<int>(0, 12)(rng);
        std::vector<double> scores;
        std::vector<bool> flags;
        int tp = 0;
        for (int i = 0; i < n; ++i) {
            scores.push_back(1.0 - i * 0.05);
            const bool hit = std::bernoulli_distribution(0.5)(rng);
            flags.push_back(hit);
            tp += hit;
        }
        const int n_gt = tp + std::uniform_int_distribution<int>(0, 3)(rng);
        const double ap = average_precision(scores, flags, n_gt);
        ASSERT_GE(ap, 0.0);
        ASSERT_LE(ap, 1.0);
        if (n_gt > 0) {
            ASSERT_LE(ap, static_cast<double>(tp) / n_gt + 1e-12);
        }
    }
}

// ---- evaluate --------------------------------------------------------------

TEST(Evaluate, PerfectDetectionsScoreOne) {
    GroundTruthByImage gts = {{"a.png", {{{0, 0, 20, 20}, "bird_nest"}, {{30, 30, 60, 50}, "grading_ring_damage"}}},
                              {"b.png", {{{5, 5, 25, 40}, "bird_nest"}, {{50, 0, 70, 30}, "normal_insulator"}}}};
    DetectionsByImage dets;
    for (const auto& [img, list] : gts) {
        for (const auto& g : list) {
            if (desk().category(g.category).status == Status::defect) {
                dets[img].push_back({g.box, 0.9, g.category});
            }
        }
    }
    const APReport r = evaluate(dets, gts, desk());
    EXPECT_DOUBLE_EQ(r.map50, 1.0);
    EXPECT_DOUBLE_EQ(r.map75, 1.0);
    EXPECT_DOUBLE_EQ(r.map50_95, 1.0);
    EXPECT_EQ(r.m, 2);
    EXPECT_EQ(r.thresholds.size(), 10u);
    EXPECT_EQ(r.per_category_ap.count("normal_insulator"), 0u);
}

TEST(Evaluate, EmptyDetectionsScoreZero) {
    const GroundTruthByImage gts = {{"a.png", {{{0, 0, 20, 20}, "bird_nest"}}}};
    const APReport r = evaluate({}, gts, desk());
    EXPECT_EQ(r.map50, 0.0);
    EXPECT_EQ(r.map75, 0.0);
    EXPECT_EQ(r.map50_95, 0.0);
    EXPECT_EQ(r.m, 1);
}

TEST(Evaluate, DetectionsWithoutGroundTruthCountAsZero) {
    const GroundTruthByImage gts = {{"a.png", {{{0, 0, 20, 20}, "bird_nest"}}}};
    const DetectionsByImage dets = {{"a.png", {{{0, 0, 20, 20}, 0.9, "bird_nest"}, {{40, 40, 60, 60}, 0.5, "foreign_body"}}}};
    const APReport r = evaluate(dets, gts, desk());
    EXPECT_EQ(r.m, 2);
    EXPECT_DOUBLE_EQ(r.per_category_ap.at("foreign_body")[0], 0.0);
    EXPECT_DOUBLE_EQ(r.map50, 0.5);
}

TEST(Evaluate, NonDefectDetectionThrows) {
    const DetectionsByImage normal = {{"a.png", {{{0, 0, 5, 5}, 0.9, "normal_insulator"}}}};
    EXPECT_THROW(evaluate(normal, {}, desk()), EvaluationError);
    const DetectionsByImage unknown = {{"a.png", {{{0, 0, 5, 5}, 0.9, "kite"}}}};
    EXPECT_THROW(evaluate(unknown, {}, desk()), EvaluationError);
}

TEST(Evaluate, MatchesReferenceEvaluator) {
    const auto classes = desk().defect_categories();
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        DetectionsByImage dets;
        GroundTruthByImage gts;
        oracle::random_detection_set(rng, classes, 12, dets, gts);
        const APReport got = evaluate(dets, gts, desk());
        const oracle::ReferenceReport want = oracle::evaluate(dets, gts, classes);
        ASSERT_NEAR(got.map50, want.map50, 1e-9);
        ASSERT_NEAR(got.map75, want.map75, 1e-9);
        ASSERT_NEAR(got.map50_95, want.map50_95, 1e-9);
        ASSERT_EQ(got.per_category_ap.size(), want.ap.size());
        for (const auto& [c, aps] : want.ap) {
            for (std::size_t t = 0; t < aps.size(); ++t) {
                ASSERT_NEAR(got.per_category_ap.at(c)[t], aps[t], 1e-9) << c;
            }
        }
    }
}

TEST(Evaluate, PropertiesOnRandomSets) {
    const auto classes = desk().defect_categories();
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        DetectionsByImage dets;
        GroundTruthByImage gts;
        oracle::random_detection_set(rng, classes, 8, dets, gts);
        const APReport r = evaluate(dets, gts, desk());
        ASSERT_LE(r.map50_95, r.map50 + 1e-12);
        double mean50 = 0;
        for (const auto& [c, aps] : r.per_category_ap) {
            mean50 += aps[0];
            for (std::size_t t = 0; t < aps.size(); ++t) {
                ASSERT_GE(aps[t], 0.0);
                ASSERT_LE(aps[t], 1.0);
                if (t > 0) {
                    ASSERT_LE(aps[t], aps[t - 1] + 1e-12) << c;
                }
            }
        }
        if (r.m > 0) {
            ASSERT_NEAR(r.map50, mean50 / r.m, 1e-12);
        }

        // An exact duplicate of any detection never raises an AP.
        DetectionsByImage dup = dets;
        for (auto& [img, list] : dup) {
            if (!list.empty()) {
                list.push_back(list[std::uniform_int_distribution<std::size_t>(0, list.size() - 1)(rng)]);
            }
        }
        const APReport d = evaluate(dup, gts, desk());
        for (const auto& [c, aps] : d.per_category_ap) {
            for (std::size_t t = 0; t < aps.size(); ++t) {
                ASSERT_LE(aps[t], r.per_category_ap.at(c)[t] + 1e-12) << c;
            }
        }
    }
}

TEST(Evaluate, ImageOrderDoesNotMatter) {
    const GroundTruthByImage gts = {{"b.png", {{{0, 0, 10, 10}, "bird_nest"}}}, {"a.png", {{{0, 0, 10, 10}, "bird_nest"}}}};
    const DetectionsByImage dets = {{"a.png", {{{0, 0, 10, 10}, 0.5, "bird_nest"}}}, {"b.png", {{{50, 50, 60, 60}, 0.5, "bird_nest"}}}};
    const APReport r = evaluate(dets, gts, desk());
    // Tied scores pool a.png first: TP then FP at recall 0.5.
    EXPECT_DOUBLE_EQ(r.map50, 0.5);
}

TEST(Report, TextAndJson) {
    const GroundTruthByImage gts = {{"a.png", {{{0, 0, 20, 20}, "bird_nest"}}}};
    const DetectionsByImage dets = {{"a.png", {{{0, 0, 20, 20}, 0.9, "bird_nest"}}}};
    const APReport r = evaluate(dets, gts, desk());
    const std::string text = format_report(r);
    EXPECT_NE(text.find("AP50:95"), std::string::npos);
    EXPECT_NE(text.find("bird_nest"), std::string::npos);
    const auto j = r.to_json();
    EXPECT_DOUBLE_EQ(j.at("mAP50").get<double>(), 1.0);
    const auto path = std::filesystem::temp_directory_path() / "vlptl_test_report.txt";
    write_report(path, r);
    std::ifstream in(path);
    EXPECT_TRUE(in.good());
}

TEST(DetectionsFile, RoundTripAndBadLine) {
    const DetectionsByImage dets = {{"a.png", {{{1.5, 2, 30, 40.25}, 0.75, "bird_nest"}}},
                                    {"b/c.png", {{{0, 0, 1, 1}, 0.1, "foreign_body"}, {{2, 2, 3, 3}, 0.2, "foreign_body"}}}};
    const auto path = std::filesystem::temp_directory_path() / "vlptl_test_dets.jsonl";
    save_detections(path, dets);
    EXPECT_EQ(load_detections(path), dets);
    {
        std::ofstream out(path, std::ios::app);
        out << "{not json\n";
    }
    try {
        (void)load_detections(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
    }
}
