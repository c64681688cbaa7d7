#include "vlptl/detection.hpp"

#include "vlptl/errors.hpp"
#include "vlptl/scene.hpp"

#include "json.hpp"

#include <fstream>

namespace vlptl {

void save_detections(const std::filesystem::path& path, const DetectionsByImage& detections) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw FormatError("cannot write detections " + path.string());
    }
    for (const auto& [ref, dets] : detections) {
        for (const auto& d : dets) {
            out << nlohmann::json{{"image_ref", ref},       {"x_min", d.box.x_min}, {"y_min", d.box.y_min},
                                  {"x_max", d.box.x_max},   {"y_max", d.box.y_max}, {"score", d.score},
                                  {"category", d.category}}
                       .dump()
                << '\n';
        }
    }
}

DetectionsByImage load_detections(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw FormatError("cannot read detections " + path.string());
    }
    DetectionsByImage out;
    std::string line;
    long index = 0;
    while (std::getline(in, line)) {
        ++index;
        if (line.empty()) {
            continue;
        }
        try {
            const auto j = nlohmann::json::parse(line);
            Detection d;
            d.box = {j.at("x_min").get<double>(), j.at("y_min").get<double>(), j.at("x_max").get<double>(),
                     j.at("y_max").get<double>()};
            d.score = j.at("score").get<double>();
            d.category = j.at("category").get<std::string>();
            out[j.at("image_ref").get<std::string>()].push_back(std::move(d));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("detections line " + std::to_string(index) + ": " + e.what());
        }
    }
    return out;
}

GroundTruthByImage load_ground_truth(const std::filesystem::path& scene_dir) {
    GroundTruthByImage out;
    for (const auto& r : load_scene_records(scene_dir)) {
        auto& gts = out[r.image_ref];
        for (std::size_t i = 0; i < r.boxes.size(); ++i) {
            gts.push_back({r.boxes[i], r.labels[i]});
        }
    }
    return out;
}

}  // namespace vlptl
