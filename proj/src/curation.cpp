#include "vlptl/curation.hpp"

#include "vlptl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace vlptl {

std::string_view to_string(Split s) { return s == Split::pretrain ? "pretrain" : "transition"; }

Split split_from_string(std::string_view s) {
    if (s == "pretrain") {
        return Split::pretrain;
    }
    if (s == "transition") {
        return Split::transition;
    }
    throw FormatError("unknown split '" + std::string(s) + "'");
}

const std::vector<std::string>& AltTextPool::at(const std::string& category) const {
    const auto it = entries.find(category);
    if (it == entries.end() || it->second.empty()) {
        throw CurationError("alt-text pool has no entry for category '" + category + "'");
    }
    return it->second;
}

std::vector<std::string> AltTextPool::corpus() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& [cat, texts] : entries) {
        for (const auto& t : texts) {
            if (seen.insert(t).second) {
                out.push_back(t);
            }
        }
    }
    return out;
}

const std::vector<std::string>& default_templates() {
    static const std::vector<std::string> templates = {
        "There is a {} in the image.",
        "A photo of a {}.",
        "An aerial inspection image of a {}.",
        "The picture shows a {} on the transmission line.",
        "A close-up view of a {}.",
    };
    return templates;
}

AltTextPool build_alt_text_pool(const Taxonomy& taxonomy, std::span<const std::string> templates,
                                const std::map<std::string, std::vector<std::string>>& refined) {
    for (const auto& t : templates) {
        const auto first = t.find(kTemplatePlaceholder);
        if (first == std::string::npos || t.find(kTemplatePlaceholder, first + 1) != std::string::npos) {
            throw FormatError("template must contain exactly one '{}' placeholder: \"" + t + "\"");
        }
    }
    for (const auto& [cat, texts] : refined) {
        if (!taxonomy.contains(cat)) {
            throw TaxonomyError("refined descriptions reference unknown category '" + cat + "'");
        }
    }
    AltTextPool pool;
    for (const auto& category : taxonomy.categories()) {
        auto& list = pool.entries[category.name];
        std::set<std::string> seen;
        const auto push = [&](std::string text) {
            if (!text.empty() && seen.insert(text).second) {
                list.push_back(std::move(text));
            }
        };
        for (const auto& t : templates) {
            std::string text = t;
            text.replace(text.find(kTemplatePlaceholder), kTemplatePlaceholder.size(), category.display);
            push(std::move(text));
        }
        if (const auto it = refined.find(category.name); it != refined.end()) {
            for (const auto& text : it->second) {
                push(text);
            }
        }
        if (list.empty()) {
            throw CurationError("no alt-text available for category '" + category.name + "'");
        }
    }
    return pool;
}

std::vector<InstanceSample> assign_alt_texts(std::span<const LabeledImage> images, const AltTextPool& pool,
                                             std::mt19937_64& rng, Split split) {
    std::vector<InstanceSample> out;
    out.reserve(images.size());
    for (const auto& img : images) {
        const auto& choices = pool.at(img.category);
        std::uniform_int_distribution<std::size_t> pick(0, choices.size() - 1);
        out.push_back({img.image_ref, img.category, choices[pick(rng)], split});
    }
    return out;
}

std::vector<CroppedInstance> crop_instances(const DetectionScene& scene) {
    if (scene.boxes.size() != scene.labels.size()) {
        throw AnnotationError("scene has mismatched box and label counts");
    }
    std::vector<CroppedInstance> out;
    out.reserve(scene.boxes.size());
    for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
        const Box& b = scene.boxes[i];
        const int x0 = static_cast<int>(std::floor(b.x_min));
        const int y0 = static_cast<int>(std::floor(b.y_min));
        const int x1 = static_cast<int>(std::ceil(b.x_max));
        const int y1 = static_cast<int>(std::ceil(b.y_max));
        if (x1 <= x0 || y1 <= y0) {
            throw AnnotationError("degenerate box " + std::to_string(i) + " (zero area)");
        }
        if (x0 < 0 || y0 < 0 || x1 > scene.image.cols || y1 > scene.image.rows) {
            throw AnnotationError("box " + std::to_string(i) + " lies outside the image");
        }
        out.push_back({scene.image(cv::Rect(x0, y0, x1 - x0, y1 - y0)).clone(), scene.labels[i]});
    }
    return out;
}

}  // namespace vlptl
