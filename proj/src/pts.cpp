#include "vlptl/pts.hpp"

#include "vlptl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace vlptl::pts {

namespace {

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Search interval [start, end) of length `span` centred on [pos, pos + len), clipped to [0, limit).
std::pair<int, int> centred_interval(int pos, int len, int span, int limit) {
    const int start = pos - (span - len) / 2;
    return {std::max(0, start), std::min(limit, start + span)};
}

// Crop length and start along one axis.
std::pair<int, int> sample_axis(int pos, int len, int limit, const SizeBounds& b, Rng& rng) {
    const int span = std::max(len, static_cast<int>(std::floor(b.high * len)));
    const auto [s0, s1] = centred_interval(pos, len, span, limit);
    const int lo = std::max({len, static_cast<int>(std::ceil(b.low * len))});
    const int hi = std::min(static_cast<int>(std::floor(b.high * len)), s1 - s0);
    const int size = lo <= hi ? uniform_int(rng, lo, hi) : s1 - s0;
    const int first = std::max(s0, pos + len - size);
    const int last = std::min(pos, s1 - size);
    return {size, uniform_int(rng, first, last)};
}

}  // namespace

PixelRect pixel_rect(const Box& box) {
    const int x0 = static_cast<int>(std::floor(box.x_min));
    const int y0 = static_cast<int>(std::floor(box.y_min));
    const int x1 = static_cast<int>(std::ceil(box.x_max));
    const int y1 = static_cast<int>(std::ceil(box.y_max));
    return {x0, y0, y1 - y0, x1 - x0};
}

void CropSpec::validate() const {
    if (n_sizes < 1 || n_sizes > static_cast<int>(bounds.size())) {
        throw ConfigError("n_sizes must lie in [1, " + std::to_string(bounds.size()) + "]");
    }
    for (std::size_t i = 0; i < bounds.size(); ++i) {
        const auto& b = bounds[i];
        if (!(b.low >= 1.0) || !(b.low <= b.high)) {
            throw ConfigError("crop bounds " + std::to_string(i) + " must satisfy 1 <= low <= high");
        }
        if (i > 0 && (bounds[i - 1].high != b.low || !(bounds[i - 1].low < b.low))) {
            throw ConfigError("crop bounds must be contiguous and increasing");
        }
    }
}

CropGeometry sample_crop_geometry(int image_h, int image_w, const PixelRect& defect, const CropSpec& spec, Rng& rng) {
    spec.validate();
    CropGeometry g;
    const PixelRect whole{0, 0, image_h, image_w};
    if (defect.h < 1 || defect.w < 1 || !whole.contains(defect)) {
        g.rects.push_back(whole);
        g.warning = true;
        return g;
    }
    for (int s = 0; s < spec.n_sizes; ++s) {
        const auto& b = spec.bounds[static_cast<std::size_t>(s)];
        const auto [h, y] = sample_axis(defect.y, defect.h, image_h, b, rng);
        const auto [w, x] = sample_axis(defect.x, defect.w, image_w, b, rng);
        g.rects.push_back({x, y, h, w});
    }
    return g;
}

std::vector<ContextCrop> sample_context_crops(const Image& image, const DefectRegion& region, const CropSpec& spec,
                                              Rng& rng, bool* warning) {
    const CropGeometry g = sample_crop_geometry(image.rows, image.cols, region.box, spec, rng);
    if (warning != nullptr) {
        *warning = g.warning;
    }
    std::vector<ContextCrop> out;
    for (std::size_t s = 0; s < g.rects.size(); ++s) {
        const PixelRect& r = g.rects[s];
        ContextCrop c;
        c.image = image(cv::Rect(r.x, r.y, r.w, r.h)).clone();
        c.source_region = region;
        c.rect = r;
        c.size_index = static_cast<int>(s);
        out.push_back(std::move(c));
    }
    return out;
}

TransitionSet build_transition_set(const std::vector<DetectionScene>& scenes, const Manifest& pretrain_manifest,
                                   const std::filesystem::path& pretrain_manifest_dir, const AltTextPool& pool,
                                   const CropSpec& spec, Rng& rng, const std::filesystem::path& out_dir,
                                   const std::string& image_subdir) {
    spec.validate();
    TransitionSet set;
    set.manifest.taxonomy = pretrain_manifest.taxonomy;
    std::filesystem::create_directories(out_dir);
    const auto base = std::filesystem::weakly_canonical(out_dir);
    for (InstanceSample s : pretrain_manifest.samples) {
        const std::filesystem::path ref(s.image_ref);
        const auto abs = std::filesystem::weakly_canonical(ref.is_absolute() ? ref : pretrain_manifest_dir / ref);
        s.image_ref = abs.lexically_relative(base).generic_string();
        set.manifest.samples.push_back(std::move(s));
    }
    if (scenes.empty()) {
        set.warnings.push_back("no scenes given; transition set equals the pretraining set");
        return set;
    }
    const Taxonomy& tax = pretrain_manifest.taxonomy;
    std::size_t counter = 0;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const DetectionScene& scene = scenes[i];
        for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
            const std::string& label = scene.labels[b];
            if (tax.category(label).status != Status::defect) {
                continue;
            }
            bool warn = false;
            const DefectRegion region{pixel_rect(scene.boxes[b]), label};
            auto crops = sample_context_crops(scene.image, region, spec, rng, &warn);
            if (warn) {
                set.warnings.push_back("scene " + std::to_string(i) + " box " + std::to_string(b) + ": defect does not fit the image; full-image crop");
            }
            const auto& entries = pool.at(label);
            for (auto& c : crops) {
                char name[32];
                std::snprintf(name, sizeof name, "crop_%06zu.png", counter++);
                const std::string rel = image_subdir + "/" + name;
                write_png(out_dir / rel, c.image);
                c.alt_text = entries[std::uniform_int_distribution<std::size_t>(0, entries.size() - 1)(rng)];
                set.manifest.samples.push_back({rel, label, c.alt_text, Split::transition});
                ++set.added;
            }
        }
    }
    return set;
}

std::vector<pretrain::EpochLoss> run_transition(pretrain::PretrainSession& session, const pretrain::PairDataset& data,
                                                int epochs, std::ostream* log) {
    pretrain::PretrainConfig cfg = session.config();
    cfg.epochs = epochs;
    session.reconfigure(cfg);
    return session.train(data, log);
}

}  // namespace vlptl::pts
