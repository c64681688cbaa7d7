#pragma once

#include "vlptl/curation.hpp"
#include "vlptl/image_io.hpp"
#include "vlptl/manifest.hpp"
#include "vlptl/scene.hpp"
#include "vlptl/taxonomy.hpp"

#include <filesystem>
#include <random>
#include <string_view>

namespace vlptl::synth {

using Rng = std::mt19937_64;

enum class Background { plain, clutter };

enum class ShapeFamily { ring, double_ring, dumbbell, stacked_discs, blob_cluster, streamer };

ShapeFamily shape_family(const ComponentType& type);

struct SceneSpec {
    int height = 256;
    int width = 256;
    int min_objects = 2;
    int max_objects = 4;
    Background background = Background::clutter;
    double clutter_density = 0.3;
    int min_object_size = 28;
    int max_object_size = 72;
    double max_pair_iou = 0.3;
    int max_attempts = 200;

    // Throws ConfigError.
    void validate() const;
};

// Instance-level image: one centred object on a light background.
Image render_instance(const Taxonomy& taxonomy, std::string_view category, int height, int width, Rng& rng);

// Full scene with tight ground-truth boxes; labels cover normal and defect objects.
DetectionScene generate_scene(const Taxonomy& taxonomy, const SceneSpec& spec, Rng& rng);

// Renders n_per_category images per category into <out_dir>/<image_subdir>/
// and returns a manifest whose image refs are relative to out_dir.
Manifest generate_instance_dataset(const Taxonomy& taxonomy, int n_per_category, const AltTextPool& pool, Rng& rng,
                                   const std::filesystem::path& out_dir, int image_size = 64,
                                   const std::string& image_subdir = "instances");

}  // namespace vlptl::synth
