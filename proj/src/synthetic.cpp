#include "vlptl/synthetic.hpp"

#include "vlptl/errors.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vlptl::synth {

namespace {

enum class Perturbation { none, gap, hue_shift, overlap, missing_part, added_blob };

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

cv::Scalar jitter(const cv::Scalar& base, Rng& rng, double amount) {
    cv::Scalar out;
    const double shift = uniform(rng, -amount, amount);
    for (int c = 0; c < 3; ++c) {
        out[c] = std::clamp(base[c] + shift + uniform(rng, -amount / 3, amount / 3), 0.0, 255.0);
    }
    return out;
}

// Draws identical geometry into the colour image and the coverage mask.
struct Painter {
    cv::Mat& img;
    cv::Mat& mask;

    void ellipse_arc(cv::Point2d c, cv::Size2d axes, double angle, double start, double end, const cv::Scalar& color,
                     int thickness) {
        const cv::Point center(cvRound(c.x), cvRound(c.y));
        const cv::Size ax(std::max(1, cvRound(axes.width)), std::max(1, cvRound(axes.height)));
        cv::ellipse(img, center, ax, angle, start, end, color, thickness, cv::LINE_8);
        cv::ellipse(mask, center, ax, angle, start, end, cv::Scalar(255), thickness, cv::LINE_8);
    }
    void filled_ellipse(cv::Point2d c, cv::Size2d axes, double angle, const cv::Scalar& color) {
        ellipse_arc(c, axes, angle, 0, 360, color, cv::FILLED);
    }
    void line(cv::Point2d a, cv::Point2d b, const cv::Scalar& color, int thickness) {
        const cv::Point pa(cvRound(a.x), cvRound(a.y));
        const cv::Point pb(cvRound(b.x), cvRound(b.y));
        cv::line(img, pa, pb, color, thickness, cv::LINE_8);
        cv::line(mask, pa, pb, cv::Scalar(255), thickness, cv::LINE_8);
    }
    void circle(cv::Point2d c, double r, const cv::Scalar& color) {
        const cv::Point pc(cvRound(c.x), cvRound(c.y));
        cv::circle(img, pc, std::max(1, cvRound(r)), color, cv::FILLED, cv::LINE_8);
        cv::circle(mask, pc, std::max(1, cvRound(r)), cv::Scalar(255), cv::FILLED, cv::LINE_8);
    }
    void polyline(const std::vector<cv::Point>& pts, const cv::Scalar& color, int thickness) {
        cv::polylines(img, pts, false, color, thickness, cv::LINE_8);
        cv::polylines(mask, pts, false, cv::Scalar(255), thickness, cv::LINE_8);
    }
};

cv::Point2d rotate(cv::Point2d v, double radians) {
    const double c = std::cos(radians);
    const double s = std::sin(radians);
    return {v.x * c - v.y * s, v.x * s + v.y * c};
}

Perturbation perturbation_for(const Taxonomy& taxonomy, const Category& category, ShapeFamily family) {
    if (category.status == Status::normal) {
        return Perturbation::none;
    }
    if (family == ShapeFamily::blob_cluster || family == ShapeFamily::streamer) {
        return Perturbation::none;
    }
    int ordinal = 0;
    for (const auto& c : taxonomy.categories()) {
        if (c.name == category.name) {
            break;
        }
        if (c.component_type == category.component_type && c.status == Status::defect) {
            ++ordinal;
        }
    }
    Perturbation primary = Perturbation::gap;
    switch (family) {
        case ShapeFamily::ring:
            primary = Perturbation::gap;
            break;
        case ShapeFamily::double_ring:
            primary = Perturbation::hue_shift;
            break;
        case ShapeFamily::dumbbell:
            primary = Perturbation::overlap;
            break;
        case ShapeFamily::stacked_discs:
            primary = Perturbation::missing_part;
            break;
        default:
            break;
    }
    if (ordinal == 0) {
        return primary;
    }
    static const Perturbation extra[] = {Perturbation::added_blob, Perturbation::hue_shift, Perturbation::gap,
                                         Perturbation::missing_part};
    std::vector<Perturbation> options;
    for (const auto p : extra) {
        if (p != primary) {
            options.push_back(p);
        }
    }
    return options[static_cast<std::size_t>(ordinal - 1) % options.size()];
}

const cv::Scalar kRust(40, 85, 165);

cv::Scalar body_color(const cv::Scalar& normal_color, Perturbation p, Rng& rng) {
    return jitter(p == Perturbation::hue_shift ? kRust : normal_color, rng, 22);
}

void draw_ring(Painter& pt, cv::Rect2d area, Perturbation p, Rng& rng) {
    const cv::Point2d c(area.x + area.width / 2, area.y + area.height / 2);
    const double m = std::min(area.width, area.height);
    const int thick = std::max(2, cvRound(m * uniform(rng, 0.08, 0.11)));
    const cv::Size2d axes(area.width * 0.45 - thick / 2.0, area.height * uniform(rng, 0.28, 0.45) - thick / 2.0);
    const double angle = uniform(rng, -25, 25);
    const cv::Scalar color = body_color(cv::Scalar(185, 175, 165), p, rng);
    // Fitting stub towards the ring centre.
    pt.line(c + rotate({0, -axes.height}, angle * std::numbers::pi / 180), c, jitter(cv::Scalar(110, 110, 110), rng, 15),
            std::max(1, thick / 2));
    if (p == Perturbation::gap) {
        // Broken ring: a missing arc with scorched ends and the snapped-off piece hanging below.
        const double start = uniform(rng, 0, 360);
        const double gap = uniform(rng, 80, 120);
        pt.ellipse_arc(c, axes, angle, start, start + 360 - gap, color, thick);
        const double rad = angle * std::numbers::pi / 180;
        const auto on_ring = [&](double deg) {
            const double t = deg * std::numbers::pi / 180;
            return c + rotate({axes.width * std::cos(t), axes.height * std::sin(t)}, rad);
        };
        const cv::Scalar scorch = jitter(cv::Scalar(25, 30, 40), rng, 10);
        pt.circle(on_ring(start), thick * 0.9, scorch);
        pt.circle(on_ring(start - gap), thick * 0.9, scorch);
        const cv::Point2d mid = on_ring(start - gap / 2);
        const cv::Point2d drop = mid + (c - mid) * uniform(rng, 0.25, 0.4);
        pt.line(drop - cv::Point2d(axes.width * 0.18, 0), drop + cv::Point2d(axes.width * 0.18, axes.height * 0.12),
                color, thick);
    } else {
        pt.ellipse_arc(c, axes, angle, 0, 360, color, thick);
    }
}

void draw_double_ring(Painter& pt, cv::Rect2d area, Perturbation p, Rng& rng) {
    const cv::Point2d c(area.x + area.width / 2, area.y + area.height / 2);
    const double m = std::min(area.width, area.height);
    const int thick = std::max(2, cvRound(m * 0.06));
    const double angle = uniform(rng, -20, 20);
    const cv::Scalar color = body_color(cv::Scalar(215, 215, 210), p, rng);
    const double gap_start = uniform(rng, 0, 360);
    const double gap = p == Perturbation::gap ? uniform(rng, 70, 110) : 0.0;
    pt.ellipse_arc(c, {area.width * 0.46 - thick, area.height * 0.42 - thick}, angle, gap_start, gap_start + 360 - gap,
                   color, thick);
    pt.ellipse_arc(c, {area.width * 0.29, area.height * 0.25}, angle, 0, 360, color, thick);
    if (p == Perturbation::hue_shift) {
        const int spots = uniform_int(rng, 3, 6);
        for (int i = 0; i < spots; ++i) {
            const double a = uniform(rng, 0, 2 * std::numbers::pi);
            pt.circle(c + cv::Point2d(std::cos(a) * area.width * 0.42, std::sin(a) * area.height * 0.38), thick * 0.7,
                      jitter(cv::Scalar(20, 45, 90), rng, 10));
        }
    }
}

void draw_single_dumbbell(Painter& pt, cv::Point2d c, double length, double weight, double angle_deg,
                          const cv::Scalar& color, int thick) {
    const double rad = angle_deg * std::numbers::pi / 180;
    const cv::Point2d half = rotate({length / 2, 0}, rad);
    pt.line(c - half, c + half, color, thick);
    pt.filled_ellipse(c - half, {weight, weight * 0.6}, angle_deg, color);
    pt.filled_ellipse(c + half, {weight, weight * 0.6}, angle_deg, color);
    pt.line(c, c + rotate({0, -weight * 1.6}, rad), color, std::max(1, thick));
}

void draw_dumbbell(Painter& pt, cv::Rect2d area, Perturbation p, Rng& rng) {
    const cv::Point2d c(area.x + area.width / 2, area.y + area.height / 2);
    const int thick = std::max(2, cvRound(std::min(area.width, area.height) * 0.06));
    const cv::Scalar color = body_color(cv::Scalar(95, 95, 100), p, rng);
    const double angle = uniform(rng, -20, 20);
    if (p == Perturbation::overlap) {
        const double len = area.width * 0.62;
        const double w = area.width * 0.12;
        const double tilt = uniform(rng, 30, 55) * (uniform(rng, 0, 1) < 0.5 ? -1 : 1);
        draw_single_dumbbell(pt, c + cv::Point2d(-area.width * 0.08, -area.height * 0.06), len, w, angle, color, thick);
        draw_single_dumbbell(pt, c + cv::Point2d(area.width * 0.08, area.height * 0.08), len, w, angle + tilt, color,
                             thick);
    } else {
        draw_single_dumbbell(pt, c, area.width * 0.62, area.width * 0.13, angle, color, thick);
    }
    if (p == Perturbation::added_blob || p == Perturbation::gap) {
        pt.circle(c + cv::Point2d(area.width * 0.1, area.height * 0.2), area.width * 0.1, jitter(kRust, rng, 15));
    }
}

void draw_stacked_discs(Painter& pt, cv::Rect2d area, Perturbation p, Rng& rng) {
    const cv::Point2d c(area.x + area.width / 2, area.y + area.height / 2);
    const bool vertical = area.height >= area.width;
    const double span = (vertical ? area.height : area.width) * 0.86;
    const double across = (vertical ? area.width : area.height) * 0.36;
    const double tilt = uniform(rng, -15, 15) + (vertical ? 90.0 : 0.0);
    const double rad = tilt * std::numbers::pi / 180;
    const int discs = uniform_int(rng, 6, 8);
    const int missing = p == Perturbation::missing_part ? uniform_int(rng, 2, discs - 3) : -1;
    const cv::Scalar color = body_color(cv::Scalar(150, 130, 70), p, rng);
    const cv::Point2d dir = rotate({1, 0}, rad);
    const int rod = std::max(1, cvRound(across * 0.12));
    pt.line(c - dir * (span / 2), c + dir * (span / 2), jitter(cv::Scalar(80, 80, 80), rng, 10), rod);
    for (int i = 0; i < discs; ++i) {
        if (i == missing) {
            continue;
        }
        const double t = (i + 0.5) / discs - 0.5;
        pt.filled_ellipse(c + dir * (t * span), {std::max(1.0, span / discs * 0.32), across}, tilt, color);
    }
    if (p == Perturbation::added_blob) {
        pt.circle(c + dir * (span * 0.2), across * 0.5, jitter(cv::Scalar(30, 30, 30), rng, 10));
    }
}

void draw_blob_cluster(Painter& pt, cv::Rect2d area, Rng& rng) {
    const cv::Point2d c(area.x + area.width / 2, area.y + area.height / 2);
    const double rx = area.width * 0.45;
    const double ry = area.height * 0.4;
    pt.filled_ellipse(c, {rx * 0.8, ry * 0.7}, 0, jitter(cv::Scalar(35, 60, 95), rng, 15));
    const int strokes = 40 + uniform_int(rng, 0, 30);
    for (int i = 0; i < strokes; ++i) {
        const double a = uniform(rng, 0, 2 * std::numbers::pi);
        const double r = std::sqrt(uniform(rng, 0, 1));
        const cv::Point2d p = c + cv::Point2d(std::cos(a) * rx * r * 0.9, std::sin(a) * ry * r * 0.9);
        const double len = uniform(rng, 0.15, 0.35) * rx;
        const double b = uniform(rng, 0, std::numbers::pi);
        cv::Point2d q = p + cv::Point2d(std::cos(b), std::sin(b)) * len;
        q.x = std::clamp(q.x, area.x, area.x + area.width - 1);
        q.y = std::clamp(q.y, area.y, area.y + area.height - 1);
        pt.line(p, q, jitter(cv::Scalar(45, 85, 125), rng, 30), uniform_int(rng, 1, 2));
    }
}

void draw_streamer(Painter& pt, cv::Rect2d area, Rng& rng) {
    static const cv::Scalar palette[] = {{40, 40, 220}, {220, 90, 30}, {40, 210, 230}, {235, 235, 235}};
    const cv::Scalar color = jitter(palette[uniform_int(rng, 0, 3)], rng, 20);
    const double amp = area.height * uniform(rng, 0.18, 0.3);
    const double freq = uniform(rng, 1.5, 2.5) * 2 * std::numbers::pi;
    const double phase = uniform(rng, 0, 2 * std::numbers::pi);
    const double cy = area.y + area.height / 2;
    const int thick = std::max(2, cvRound(std::min(area.width, area.height) * 0.09));
    std::vector<cv::Point> pts;
    for (int i = 0; i <= 24; ++i) {
        const double t = i / 24.0;
        const double x = area.x + thick + t * (area.width - 2 * thick);
        pts.emplace_back(cvRound(x), cvRound(cy + amp * std::sin(freq * t + phase)));
    }
    pt.polyline(pts, color, thick);
    // Knot where the streamer snags the conductor.
    pt.line({area.x + thick, cy - amp}, {area.x + thick, cy + amp}, jitter(cv::Scalar(60, 60, 60), rng, 10),
            std::max(1, thick / 2));
}

void draw_object(Painter& pt, const Taxonomy& taxonomy, const Category& category, cv::Rect2d area, Rng& rng) {
    const ShapeFamily family = shape_family(taxonomy.component_type(category.component_type));
    const Perturbation p = perturbation_for(taxonomy, category, family);
    switch (family) {
        case ShapeFamily::ring:
            draw_ring(pt, area, p, rng);
            break;
        case ShapeFamily::double_ring:
            draw_double_ring(pt, area, p, rng);
            break;
        case ShapeFamily::dumbbell:
            draw_dumbbell(pt, area, p, rng);
            break;
        case ShapeFamily::stacked_discs:
            draw_stacked_discs(pt, area, p, rng);
            break;
        case ShapeFamily::blob_cluster:
            draw_blob_cluster(pt, area, rng);
            break;
        case ShapeFamily::streamer:
            draw_streamer(pt, area, rng);
            break;
    }
}

void fill_background(cv::Mat& img, Background bg, double density, Rng& rng) {
    const cv::Scalar top = jitter(cv::Scalar(215, 195, 165), rng, 25);
    const cv::Scalar bottom = jitter(cv::Scalar(185, 180, 170), rng, 25);
    for (int y = 0; y < img.rows; ++y) {
        const double t = img.rows > 1 ? static_cast<double>(y) / (img.rows - 1) : 0.0;
        img.row(y).setTo(top * (1 - t) + bottom * t);
    }
    if (bg == Background::plain) {
        return;
    }
    const int lines = static_cast<int>(std::round(density * img.rows * img.cols / 800.0));
    for (int i = 0; i < lines; ++i) {
        const cv::Point a(uniform_int(rng, 0, img.cols - 1), uniform_int(rng, 0, img.rows - 1));
        const double ang = uniform(rng, 0, std::numbers::pi);
        const double len = uniform(rng, 0.1, 0.6) * std::max(img.rows, img.cols);
        const cv::Point b(cvRound(a.x + std::cos(ang) * len), cvRound(a.y + std::sin(ang) * len));
        const double shade = uniform(rng, 60, 150);
        cv::line(img, a, b, cv::Scalar(shade, shade, shade + uniform(rng, -10, 10)), uniform_int(rng, 1, 2), cv::LINE_8);
    }
    // Sensor-like noise.
    std::uniform_int_distribution<int> noise(-6, 6);
    for (int y = 0; y < img.rows; ++y) {
        auto* row = img.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.cols; ++x) {
            const int n = noise(rng);
            for (int c = 0; c < 3; ++c) {
                row[x][c] = cv::saturate_cast<uchar>(row[x][c] + n);
            }
        }
    }
}

}  // namespace

ShapeFamily shape_family(const ComponentType& type) {
    static const std::pair<const char*, ShapeFamily> names[] = {
        {"ring", ShapeFamily::ring},
        {"double_ring", ShapeFamily::double_ring},
        {"dumbbell", ShapeFamily::dumbbell},
        {"stacked_discs", ShapeFamily::stacked_discs},
        {"blob_cluster", ShapeFamily::blob_cluster},
        {"streamer", ShapeFamily::streamer},
    };
    for (const auto& [name, family] : names) {
        if (type.shape == name) {
            return family;
        }
    }
    if (!type.shape.empty()) {
        throw TaxonomyError("unknown shape family '" + type.shape + "' for component type '" + type.name + "'");
    }
    // Unhinted types: externals get the external families, others a paired family.
    std::size_t h = 0;
    for (const unsigned char ch : type.name) {
        h = h * 131 + ch;
    }
    return type.is_external_interference ? names[4 + h % 2].second : names[h % 4].second;
}

void SceneSpec::validate() const {
    if (height < 64 || width < 64) {
        throw ConfigError("scene size must be at least 64x64");
    }
    if (min_objects < 0 || max_objects < min_objects) {
        throw ConfigError("objects_per_scene range is empty");
    }
    if (clutter_density < 0 || clutter_density > 1) {
        throw ConfigError("clutter_density must lie in [0,1]");
    }
    if (min_object_size < 8 || max_object_size < min_object_size || max_object_size > std::min(height, width)) {
        throw ConfigError("object size range invalid for the scene size");
    }
}

Image render_instance(const Taxonomy& taxonomy, std::string_view category, int height, int width, Rng& rng) {
    if (height < 16 || width < 16) {
        throw ShapeError("instance images must be at least 16x16");
    }
    const Category& cat = taxonomy.category(category);
    cv::Mat img(height, width, CV_8UC3);
    cv::Mat mask(height, width, CV_8U, cv::Scalar(0));
    fill_background(img, uniform(rng, 0, 1) < 0.5 ? Background::plain : Background::clutter, 0.12, rng);
    const double frac_w = uniform(rng, 0.7, 0.92);
    const double frac_h = uniform(rng, 0.7, 0.92);
    const double w = frac_w * width;
    const double h = frac_h * height;
    const double x = uniform(rng, 0, width - w);
    const double y = uniform(rng, 0, height - h);
    Painter pt{img, mask};
    draw_object(pt, taxonomy, cat, cv::Rect2d(x, y, w, h), rng);
    return img;
}

DetectionScene generate_scene(const Taxonomy& taxonomy, const SceneSpec& spec, Rng& rng) {
    spec.validate();
    if (taxonomy.categories().empty() && spec.max_objects > 0) {
        throw TaxonomyError("cannot populate a scene from an empty taxonomy");
    }
    DetectionScene scene;
    scene.image = cv::Mat(spec.height, spec.width, CV_8UC3);
    fill_background(scene.image, spec.background, spec.clutter_density, rng);
    const int count = uniform_int(rng, spec.min_objects, spec.max_objects);
    const auto n_categories = static_cast<int>(taxonomy.categories().size());
    for (int i = 0; i < count; ++i) {
        const Category& cat = taxonomy.categories()[static_cast<std::size_t>(uniform_int(rng, 0, n_categories - 1))];
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
            const int ow = uniform_int(rng, spec.min_object_size, spec.max_object_size);
            const int oh = std::clamp(static_cast<int>(std::lround(ow * uniform(rng, 0.75, 1.3))), spec.min_object_size,
                                      spec.max_object_size);
            cv::Mat canvas(oh, ow, CV_8UC3, cv::Scalar(0, 0, 0));
            cv::Mat mask(oh, ow, CV_8U, cv::Scalar(0));
            Painter pt{canvas, mask};
            draw_object(pt, taxonomy, cat, cv::Rect2d(0, 0, ow, oh), rng);
            const cv::Rect tight = cv::boundingRect(mask);
            if (tight.area() == 0) {
                continue;
            }
            const int x = uniform_int(rng, 0, spec.width - tight.width);
            const int y = uniform_int(rng, 0, spec.height - tight.height);
            const Box box{static_cast<double>(x), static_cast<double>(y), static_cast<double>(x + tight.width),
                          static_cast<double>(y + tight.height)};
            const bool clash = std::any_of(scene.boxes.begin(), scene.boxes.end(),
                                           [&](const Box& other) { return iou(box, other) > spec.max_pair_iou; });
            if (clash) {
                continue;
            }
            canvas(tight).copyTo(scene.image(cv::Rect(x, y, tight.width, tight.height)), mask(tight));
            scene.boxes.push_back(box);
            scene.labels.push_back(cat.name);
            placed = true;
        }
        if (!placed) {
            throw PlacementError("could not place object " + std::to_string(i + 1) + " of " + std::to_string(count) +
                                 " after " + std::to_string(spec.max_attempts) + " attempts");
        }
    }
    return scene;
}

Manifest generate_instance_dataset(const Taxonomy& taxonomy, int n_per_category, const AltTextPool& pool, Rng& rng,
                                   const std::filesystem::path& out_dir, int image_size,
                                   const std::string& image_subdir) {
    if (n_per_category < 1) {
        throw ConfigError("n_per_category must be at least 1");
    }
    std::vector<LabeledImage> labeled;
    for (const auto& cat : taxonomy.categories()) {
        for (int i = 0; i < n_per_category; ++i) {
            const std::string ref = image_subdir + "/" + cat.name + "_" + std::to_string(i) + ".png";
            write_png(out_dir / ref, render_instance(taxonomy, cat.name, image_size, image_size, rng));
            labeled.push_back({ref, cat.name});
        }
    }
    Manifest m;
    m.taxonomy = taxonomy;
    m.samples = assign_alt_texts(labeled, pool, rng, Split::pretrain);
    return m;
}

}  // namespace vlptl::synth
