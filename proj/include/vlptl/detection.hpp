#pragma once

#include "vlptl/box.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vlptl {

struct Detection {
    Box box;
    double score = 0.0;
    std::string category;

    friend bool operator==(const Detection&, const Detection&) = default;
};

struct GroundTruth {
    Box box;
    std::string category;
};

// Keyed by image reference.
using DetectionsByImage = std::map<std::string, std::vector<Detection>>;
using GroundTruthByImage = std::map<std::string, std::vector<GroundTruth>>;

// One JSON object per line: {image_ref, x_min, y_min, x_max, y_max, score, category}.
void save_detections(const std::filesystem::path& path, const DetectionsByImage& detections);
// Throws FormatError naming the offending line.
DetectionsByImage load_detections(const std::filesystem::path& path);

// Ground truth of a scene directory keyed by its image references.
GroundTruthByImage load_ground_truth(const std::filesystem::path& scene_dir);

}  // namespace vlptl
