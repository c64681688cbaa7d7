#pragma once

#include "vlptl/box.hpp"
#include "vlptl/image_io.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vlptl {

// A full image with ground-truth boxes; labels are category names.
struct DetectionScene {
    Image image;
    std::vector<Box> boxes;
    std::vector<std::string> labels;
};

// Scene as persisted on disk: PNG plus its annotations.
struct SceneRecord {
    std::string image_ref;  // file name relative to the scene directory
    std::vector<Box> boxes;
    std::vector<std::string> labels;
};

inline constexpr const char* kBoxesFile = "boxes.tsv";

// Writes <dir>/<image_ref> for each scene and <dir>/boxes.tsv with one
// tab-separated line per box: image_ref x_min y_min x_max y_max category.
void save_scene_dir(const std::filesystem::path& dir, const std::vector<DetectionScene>& scenes,
                    const std::string& prefix = "scene");

// Lists every PNG in the directory (sorted) joined with its boxes.
std::vector<SceneRecord> load_scene_records(const std::filesystem::path& dir);
DetectionScene load_scene(const std::filesystem::path& dir, const SceneRecord& record);

std::string scene_file_name(const std::string& prefix, std::size_t index);

}  // namespace vlptl
