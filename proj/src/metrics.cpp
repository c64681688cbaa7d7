#include "vlptl/metrics.hpp"

#include "vlptl/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace vlptl::metrics {

double MatchResult::precision() const {
    const int d = true_positives + false_positives;
    return d > 0 ? static_cast<double>(true_positives) / d : 0.0;
}

double MatchResult::recall() const {
    const int d = true_positives + false_negatives;
    return d > 0 ? static_cast<double>(true_positives) / d : 0.0;
}

MatchResult match_detections(std::span<const Detection> detections, std::span<const Box> ground_truth,
                             double iou_threshold) {
    std::vector<int> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return detections[static_cast<std::size_t>(a)].score > detections[static_cast<std::size_t>(b)].score;
    });
    std::vector<bool> taken(ground_truth.size(), false);
    MatchResult r;
    for (const int i : order) {
        const Detection& d = detections[static_cast<std::size_t>(i)];
        int best = -1;
        double best_iou = iou_threshold;
        for (std::size_t g = 0; g < ground_truth.size(); ++g) {
            if (taken[g]) {
                continue;
            }
            const double v = iou(d.box, ground_truth[g]);
            if (v >= best_iou && (best < 0 || v > best_iou)) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        const bool tp = best >= 0;
        if (tp) {
            taken[static_cast<std::size_t>(best)] = true;
        }
        r.scores.push_back(d.score);
        r.is_true_positive.push_back(tp);
        (tp ? r.true_positives : r.false_positives) += 1;
    }
    r.false_negatives = static_cast<int>(ground_truth.size()) - r.true_positives;
    return r;
}

double average_precision(std::span<const double> scores, const std::vector<bool>& is_true_positive, int n_gt) {
    if (scores.size() != is_true_positive.size()) {
        throw EvaluationError("scores and flags disagree in length");
    }
    if (n_gt <= 0) {
        return 0.0;
    }
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)]; });
    std::vector<double> precision;
    std::vector<double> recall;
    int tp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        tp += is_true_positive[static_cast<std::size_t>(order[k])] ? 1 : 0;
        precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
        recall.push_back(static_cast<double>(tp) / n_gt);
    }
    // Envelope: running maximum from the right.
    for (std::size_t k = precision.size(); k-- > 1;) {
        precision[k - 1] = std::max(precision[k - 1], precision[k]);
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t k = 0; k < precision.size(); ++k) {
        ap += (recall[k] - prev_recall) * precision[k];
        prev_recall = recall[k];
    }
    return ap;
}

double average_precision(const MatchResult& match) {
    return average_precision(match.scores, match.is_true_positive, match.true_positives + match.false_negatives);
}

std::vector<double> coco_thresholds() {
    std::vector<double> t;
    for (int i = 0; i < 10; ++i) {
        t.push_back(0.5 + 0.05 * i);
    }
    return t;
}

nlohmann::json APReport::to_json() const {
    return {{"mAP50", map50}, {"mAP75", map75}, {"mAP50_95", map50_95}, {"m", m},
            {"thresholds", thresholds}, {"per_category_ap", per_category_ap}};
}

APReport evaluate(const DetectionsByImage& detections, const GroundTruthByImage& ground_truth,
                  const Taxonomy& taxonomy) {
    const std::vector<std::string> classes = taxonomy.defect_categories();
    const std::set<std::string, std::less<>> known(classes.begin(), classes.end());
    std::set<std::string> images;
    for (const auto& [ref, dets] : detections) {
        images.insert(ref);
        for (const auto& d : dets) {
            if (!known.contains(d.category)) {
                throw EvaluationError("detection on " + ref + " names unknown category '" + d.category + "'");
            }
        }
    }
    for (const auto& [ref, gts] : ground_truth) {
        images.insert(ref);
    }
    APReport report;
    report.thresholds = coco_thresholds();
    std::vector<double> sums(report.thresholds.size(), 0.0);
    for (const auto& cls : classes) {
        int n_gt = 0;
        int n_det = 0;
        for (const auto& ref : images) {
            if (const auto it = ground_truth.find(ref); it != ground_truth.end()) {
                n_gt += static_cast<int>(std::count_if(it->second.begin(), it->second.end(),
                                                       [&](const GroundTruth& g) { return g.category == cls; }));
            }
            if (const auto it = detections.find(ref); it != detections.end()) {
                n_det += static_cast<int>(std::count_if(it->second.begin(), it->second.end(),
                                                        [&](const Detection& d) { return d.category == cls; }));
            }
        }
        if (n_gt == 0 && n_det == 0) {
            continue;
        }
        std::vector<double> aps;
        for (std::size_t t = 0; t < report.thresholds.size(); ++t) {
            // Matching is per image; the ranked list pools every image.
            std::vector<double> scores;
            std::vector<bool> flags;
            for (const auto& ref : images) {
                std::vector<Detection> dets;
                std::vector<Box> gts;
                if (const auto it = detections.find(ref); it != detections.end()) {
                    std::copy_if(it->second.begin(), it->second.end(), std::back_inserter(dets),
                                 [&](const Detection& d) { return d.category == cls; });
                }
                if (const auto it = ground_truth.find(ref); it != ground_truth.end()) {
                    for (const auto& g : it->second) {
                        if (g.category == cls) {
                            gts.push_back(g.box);
                        }
                    }
                }
                const MatchResult m = match_detections(dets, gts, report.thresholds[t]);
                scores.insert(scores.end(), m.scores.begin(), m.scores.end());
                flags.insert(flags.end(), m.is_true_positive.begin(), m.is_true_positive.end());
            }
            aps.push_back(average_precision(scores, flags, n_gt));
            sums[t] += aps.back();
        }
        report.per_category_ap[cls] = std::move(aps);
    }
    report.m = static_cast<int>(report.per_category_ap.size());
    if (report.m > 0) {
        for (double& s : sums) {
            s /= report.m;
        }
        report.map50 = sums[0];
        report.map75 = sums[5];
        report.map50_95 = std::accumulate(sums.begin(), sums.end(), 0.0) / static_cast<double>(sums.size());
    }
    return report;
}

std::string format_report(const APReport& report) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-32s %8s %8s %8s\n", "category", "AP50", "AP75", "AP50:95");
    out << line;
    for (const auto& [cls, aps] : report.per_category_ap) {
        const double mean = std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
        std::snprintf(line, sizeof line, "%-32s %8.4f %8.4f %8.4f\n", cls.c_str(), aps[0], aps[5], mean);
        out << line;
    }
    std::snprintf(line, sizeof line, "%-32s %8.4f %8.4f %8.4f\n", "mAP", report.map50, report.map75, report.map50_95);
    out << line;
    std::snprintf(line, sizeof line, "categories scored: %d\n", report.m);
    out << line;
    return out.str();
}

void write_report(const std::filesystem::path& path, const APReport& report) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw EvaluationError("cannot write report " + path.string());
    }
    out << format_report(report);
}

}  // namespace vlptl::metrics
