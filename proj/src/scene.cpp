#include "vlptl/scene.hpp"

#include "vlptl/errors.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace vlptl {

std::string scene_file_name(const std::string& prefix, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%05zu.png", index);
    return prefix + buf;
}

void save_scene_dir(const std::filesystem::path& dir, const std::vector<DetectionScene>& scenes,
                    const std::string& prefix) {
    std::filesystem::create_directories(dir);
    std::ofstream boxes(dir / kBoxesFile, std::ios::trunc);
    if (!boxes) {
        throw FormatError("cannot write " + (dir / kBoxesFile).string());
    }
    boxes << std::setprecision(10);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& scene = scenes[i];
        const std::string ref = scene_file_name(prefix, i);
        write_png(dir / ref, scene.image);
        for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
            const Box& box = scene.boxes[b];
            boxes << ref << '\t' << box.x_min << '\t' << box.y_min << '\t' << box.x_max << '\t' << box.y_max << '\t'
                  << scene.labels[b] << '\n';
        }
    }
}

std::vector<SceneRecord> load_scene_records(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw FormatError("scene directory not found: " + dir.string());
    }
    std::map<std::string, SceneRecord> by_ref;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            const std::string ref = entry.path().filename().string();
            by_ref[ref].image_ref = ref;
        }
    }
    std::ifstream is(dir / kBoxesFile);
    if (!is) {
        throw FormatError("missing " + (dir / kBoxesFile).string());
    }
    std::string line;
    long line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::istringstream ls(line);
        std::string ref;
        std::string label;
        Box box;
        if (!std::getline(ls, ref, '\t') || !(ls >> box.x_min >> box.y_min >> box.x_max >> box.y_max >> label)) {
            throw FormatError("malformed boxes line " + std::to_string(line_no) + " in " + dir.string());
        }
        auto it = by_ref.find(ref);
        if (it == by_ref.end()) {
            throw FormatError("boxes line " + std::to_string(line_no) + " references missing image " + ref);
        }
        it->second.boxes.push_back(box);
        it->second.labels.push_back(label);
    }
    std::vector<SceneRecord> out;
    out.reserve(by_ref.size());
    for (auto& [ref, rec] : by_ref) {
        out.push_back(std::move(rec));
    }
    return out;
}

DetectionScene load_scene(const std::filesystem::path& dir, const SceneRecord& record) {
    return DetectionScene{read_png(dir / record.image_ref), record.boxes, record.labels};
}

}  // namespace vlptl
