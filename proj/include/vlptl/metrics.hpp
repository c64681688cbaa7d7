#pragma once

#include "vlptl/detection.hpp"
#include "vlptl/taxonomy.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace vlptl::metrics {

struct MatchResult {
    int true_positives = 0;
    int false_positives = 0;
    int false_negatives = 0;
    // Per detection in descending score order (ties keep input order).
    std::vector<double> scores;
    std::vector<bool> is_true_positive;

    [[nodiscard]] double precision() const;
    [[nodiscard]] double recall() const;
};

// Single-category greedy matching: detections in descending score order each
// take the highest-IoU unmatched ground truth with IoU >= iou_threshold.
MatchResult match_detections(std::span<const Detection> detections, std::span<const Box> ground_truth,
                             double iou_threshold);

// All-points interpolated AP over score-ranked flags. Returns 0 when n_gt is 0.
double average_precision(std::span<const double> scores, const std::vector<bool>& is_true_positive, int n_gt);
double average_precision(const MatchResult& match);

// IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_thresholds();

struct APReport {
    // category -> AP per threshold (aligned with `thresholds`); categories
    // with neither ground truth nor detections are absent.
    std::map<std::string, std::vector<double>> per_category_ap;
    std::vector<double> thresholds;
    double map50 = 0.0;
    double map75 = 0.0;
    double map50_95 = 0.0;
    int m = 0;

    [[nodiscard]] nlohmann::json to_json() const;
};

// Scores the taxonomy's defect categories. Ground truth of other categories is
// ignored; a detection naming anything but a defect category raises
// EvaluationError. Images missing from either side count as empty.
APReport evaluate(const DetectionsByImage& detections, const GroundTruthByImage& ground_truth,
                  const Taxonomy& taxonomy);

// Plain-text table: mAP50, mAP75, mAP50:95 then one AP row per category.
std::string format_report(const APReport& report);
void write_report(const std::filesystem::path& path, const APReport& report);

}  // namespace vlptl::metrics
