#pragma once

#include "vlptl/curation.hpp"
#include "vlptl/manifest.hpp"
#include "vlptl/pretrain_loop.hpp"
#include "vlptl/scene.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace vlptl::pts {

using Rng = std::mt19937_64;

// Pixel rectangle: top-left plus height and width.
struct PixelRect {
    int x = 0;
    int y = 0;
    int h = 0;
    int w = 0;

    [[nodiscard]] bool contains(const PixelRect& o) const {
        return o.x >= x && o.y >= y && o.x + o.w <= x + w && o.y + o.h <= y + h;
    }
    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

struct DefectRegion {
    PixelRect box;
    std::string category;
};

// Smallest pixel rectangle covering a floating-point box.
PixelRect pixel_rect(const Box& box);

struct SizeBounds {
    double low = 1;
    double high = 3;
};

struct CropSpec {
    int n_sizes = 3;
    std::vector<SizeBounds> bounds = {{1, 3}, {3, 5}, {5, 7}, {7, 9}, {9, 11}};

    // Throws ConfigError unless 1 <= n_sizes <= bounds.size(), every low >= 1
    // and low <= high, and consecutive bounds are contiguous and increasing.
    void validate() const;
};

struct ContextCrop {
    Image image;
    DefectRegion source_region;
    PixelRect rect;
    int size_index = 0;
    std::string alt_text;
};

struct CropGeometry {
    std::vector<PixelRect> rects;  // one per size index
    bool warning = false;          // defect did not fit; a single full-image rect is returned
};

// Placement only; sample_context_crops cuts the pixels.
//
// For size index s with bounds (lo, hi): the search region is
// floor(hi*h) x floor(hi*w) centred on the defect and clipped to the image.
// Crop height is uniform over [ceil(lo*h), floor(hi*h)] intersected with
// [h, search height], falling back to the largest feasible value when that
// is empty; width likewise. The top-left is uniform over positions that keep
// the crop inside the search region and around the defect.
CropGeometry sample_crop_geometry(int image_h, int image_w, const PixelRect& defect, const CropSpec& spec, Rng& rng);

std::vector<ContextCrop> sample_context_crops(const Image& image, const DefectRegion& region, const CropSpec& spec,
                                              Rng& rng, bool* warning = nullptr);

struct TransitionSet {
    Manifest manifest;
    int added = 0;
    std::vector<std::string> warnings;
};

// Crops every defect box of every scene at spec.n_sizes scales, writes the
// crops under <out_dir>/<image_subdir>/ and returns the pretraining samples
// plus the crops (split = transition). Pretraining image refs are rewritten
// relative to out_dir.
TransitionSet build_transition_set(const std::vector<DetectionScene>& scenes, const Manifest& pretrain_manifest,
                                   const std::filesystem::path& pretrain_manifest_dir, const AltTextPool& pool,
                                   const CropSpec& spec, Rng& rng, const std::filesystem::path& out_dir,
                                   const std::string& image_subdir = "context");

// Continues training the session on the mixed set for `epochs` epochs with
// every other setting unchanged.
std::vector<pretrain::EpochLoss> run_transition(pretrain::PretrainSession& session, const pretrain::PairDataset& data,
                                                int epochs, std::ostream* log = nullptr);

}  // namespace vlptl::pts
