#pragma once

#include "vlptl/box.hpp"
#include "vlptl/image_io.hpp"
#include "vlptl/scene.hpp"
#include "vlptl/taxonomy.hpp"

#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace vlptl {

enum class Split { pretrain, transition };

std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

// One image-text pair; the category annotation is kept alongside the text.
struct InstanceSample {
    std::string image_ref;
    std::string category;
    std::string alt_text;
    Split split = Split::pretrain;

    friend bool operator==(const InstanceSample&, const InstanceSample&) = default;
};

struct AltTextPool {
    std::map<std::string, std::vector<std::string>> entries;

    [[nodiscard]] const std::vector<std::string>& at(const std::string& category) const;
    // Every distinct string in the pool, in category then insertion order.
    [[nodiscard]] std::vector<std::string> corpus() const;
};

inline constexpr std::string_view kTemplatePlaceholder = "{}";

const std::vector<std::string>& default_templates();

// Instantiates each template with every category's display phrase and adds the
// refined descriptions. Throws FormatError on a template without a placeholder
// and CurationError if a category ends up with no entry.
AltTextPool build_alt_text_pool(const Taxonomy& taxonomy, std::span<const std::string> templates,
                                const std::map<std::string, std::vector<std::string>>& refined = {});

struct LabeledImage {
    std::string image_ref;
    std::string category;
};

// Draws each sample's alt-text uniformly from pool[category].
std::vector<InstanceSample> assign_alt_texts(std::span<const LabeledImage> images, const AltTextPool& pool,
                                             std::mt19937_64& rng, Split split = Split::pretrain);

struct CroppedInstance {
    Image image;
    std::string category;
};

// One crop per annotated box, exactly the box extent (coordinates rounded to pixels).
std::vector<CroppedInstance> crop_instances(const DetectionScene& scene);

}  // namespace vlptl
