#include "vlptl/detector.hpp"

#include "vlptl/checkpoint.hpp"
#include "vlptl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

namespace vlptl::detect {

namespace {

constexpr const char* kDetectorKind = "vlptl-detector";

int power_of_two_ratio(int stride, int patch) {
    for (const int f : {1, 2, 4}) {
        if (stride * f == patch) {
            return f;
        }
        if (stride == patch * f) {
            return -f;
        }
    }
    return 0;
}

int coarsest_multiple(const DetectorConfig& c, int patch_size) {
    return std::max(patch_size, *std::max_element(c.pyramid_strides.begin(), c.pyramid_strides.end()));
}

}  // namespace

// ---- configuration -------------------------------------------------------

std::vector<std::pair<int, int>> snap_sizes(int h, int w, std::span<const double> factors, int multiple) {
    std::vector<std::pair<int, int>> out;
    const auto snap = [multiple](double v) {
        return std::max(multiple, static_cast<int>(std::lround(v / multiple)) * multiple);
    };
    for (const double f : factors) {
        const std::pair<int, int> s{snap(f * h), snap(f * w)};
        if (std::find(out.begin(), out.end(), s) == out.end()) {
            out.push_back(s);
        }
    }
    return out;
}

void DetectorConfig::validate(int patch_size) const {
    if (pyramid_strides.empty()) {
        throw ConfigError("at least one pyramid stride is required");
    }
    for (std::size_t i = 0; i < pyramid_strides.size(); ++i) {
        if (pyramid_strides[i] < 1 || (i > 0 && pyramid_strides[i] <= pyramid_strides[i - 1])) {
            throw ConfigError("pyramid strides must be positive and ascending");
        }
    }
    if (!(score_threshold > 0 && score_threshold < 1) || !(nms_iou > 0 && nms_iou < 1)) {
        throw ConfigError("score and NMS thresholds must lie in (0, 1)");
    }
    if (max_detections < 1 || epochs < 0 || batch_size < 1) {
        throw ConfigError("max_detections and batch_size must be positive, epochs nonnegative");
    }
    if (!(backbone_lr >= 0) || !(decoder_lr >= 0) || !(weight_decay >= 0) || !(cells_per_object > 0)) {
        throw ConfigError("learning rates and weight decay must be nonnegative");
    }
    const int multiple = coarsest_multiple(*this, patch_size);
    auto sizes = train_sizes(patch_size);
    sizes.emplace_back(input_h, input_w);
    for (const auto& [h, w] : sizes) {
        if (h < multiple || w < multiple || h % multiple != 0 || w % multiple != 0) {
            throw ConfigError("detector size " + std::to_string(h) + "x" + std::to_string(w) +
                              " must be a positive multiple of " + std::to_string(multiple));
        }
    }
}

std::vector<std::pair<int, int>> DetectorConfig::train_sizes(int patch_size) const {
    if (!multiscale_train_sizes.empty()) {
        return multiscale_train_sizes;
    }
    const std::array<double, 3> factors = {0.75, 1.0, 1.25};
    return snap_sizes(input_h, input_w, factors, coarsest_multiple(*this, patch_size));
}

nlohmann::json DetectorConfig::to_json() const {
    nlohmann::json sizes = nlohmann::json::array();
    for (const auto& [h, w] : multiscale_train_sizes) {
        sizes.push_back({h, w});
    }
    return {{"input_h", input_h},
            {"input_w", input_w},
            {"pyramid_strides", pyramid_strides},
            {"score_threshold", score_threshold},
            {"nms_iou", nms_iou},
            {"max_detections", max_detections},
            {"multiscale_train_sizes", sizes},
            {"cells_per_object", cells_per_object},
            {"focal_alpha", focal_alpha},
            {"focal_gamma", focal_gamma},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"backbone_lr", backbone_lr},
            {"decoder_lr", decoder_lr},
            {"weight_decay", weight_decay},
            {"seed", seed}};
}

DetectorConfig DetectorConfig::from_json(const nlohmann::json& j) {
    DetectorConfig c;
    c.input_h = j.value("input_h", c.input_h);
    c.input_w = j.value("input_w", c.input_w);
    c.pyramid_strides = j.value("pyramid_strides", c.pyramid_strides);
    c.score_threshold = j.value("score_threshold", c.score_threshold);
    c.nms_iou = j.value("nms_iou", c.nms_iou);
    c.max_detections = j.value("max_detections", c.max_detections);
    if (j.contains("multiscale_train_sizes")) {
        for (const auto& s : j.at("multiscale_train_sizes")) {
            c.multiscale_train_sizes.emplace_back(s.at(0).get<int>(), s.at(1).get<int>());
        }
    }
    c.cells_per_object = j.value("cells_per_object", c.cells_per_object);
    c.focal_alpha = j.value("focal_alpha", c.focal_alpha);
    c.focal_gamma = j.value("focal_gamma", c.focal_gamma);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.backbone_lr = j.value("backbone_lr", c.backbone_lr);
    c.decoder_lr = j.value("decoder_lr", c.decoder_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    return c;
}

// ---- pyramid -------------------------------------------------------------

FeatureMap pixel_shuffle(const FeatureMap& fm, int factor) {
    const Eigen::Index cells = static_cast<Eigen::Index>(fm.batch) * fm.grid_h * fm.grid_w;
    if (fm.tensor.rows() != cells || fm.tensor.cols() % (factor * factor) != 0) {
        throw ShapeError("pixel_shuffle: map does not match its grid or channel count");
    }
    const Eigen::Index dim = fm.tensor.cols() / (factor * factor);
    const ad::Var split = ad::reshape(fm.tensor, cells * factor * factor, dim);
    const int oh = fm.grid_h * factor;
    const int ow = fm.grid_w * factor;
    std::vector<int> index;
    index.reserve(static_cast<std::size_t>(cells * factor * factor));
    for (int b = 0; b < fm.batch; ++b) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const int src = (b * fm.grid_h + y / factor) * fm.grid_w + x / factor;
                index.push_back(src * factor * factor + (y % factor) * factor + x % factor);
            }
        }
    }
    return {ad::gather_rows(split, index), oh, ow, fm.batch};
}

FeatureMap space_to_depth(const FeatureMap& fm, int factor) {
    if (fm.grid_h % factor != 0 || fm.grid_w % factor != 0) {
        throw ConfigError("a " + std::to_string(fm.grid_h) + "x" + std::to_string(fm.grid_w) +
                          " grid cannot be downsampled by " + std::to_string(factor));
    }
    const int oh = fm.grid_h / factor;
    const int ow = fm.grid_w / factor;
    std::vector<int> index;
    index.reserve(static_cast<std::size_t>(fm.tensor.rows()));
    for (int b = 0; b < fm.batch; ++b) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                for (int dy = 0; dy < factor; ++dy) {
                    for (int dx = 0; dx < factor; ++dx) {
                        index.push_back((b * fm.grid_h + y * factor + dy) * fm.grid_w + x * factor + dx);
                    }
                }
            }
        }
    }
    const ad::Var gathered = ad::gather_rows(fm.tensor, index);
    const Eigen::Index rows = static_cast<Eigen::Index>(fm.batch) * oh * ow;
    return {ad::reshape(gathered, rows, fm.tensor.cols() * factor * factor), oh, ow, fm.batch};
}

SimplePyramid::SimplePyramid(int dim, int patch_size, std::vector<int> strides, nn::Rng& rng)
    : patch_size_(patch_size), strides_(std::move(strides)) {
    for (const int s : strides_) {
        Level level;
        level.factor = power_of_two_ratio(s, patch_size);
        if (level.factor == 0) {
            throw ConfigError("stride " + std::to_string(s) + " cannot be produced from patch size " +
                              std::to_string(patch_size));
        }
        const int f = std::abs(level.factor);
        if (level.factor > 1) {
            level.linear = nn::Linear(dim, dim * f * f, rng);
        } else {
            level.linear = nn::Linear(dim * f * f, dim, rng);
        }
        level.norm = nn::LayerNorm(dim);
        levels_.push_back(std::move(level));
    }
}

std::vector<FeatureMap> SimplePyramid::operator()(const FeatureMap& fm) const {
    std::vector<FeatureMap> out;
    for (const Level& level : levels_) {
        FeatureMap m;
        if (level.factor > 1) {
            m = pixel_shuffle({level.linear(fm.tensor), fm.grid_h, fm.grid_w, fm.batch}, level.factor);
        } else if (level.factor < -1) {
            m = space_to_depth(fm, -level.factor);
            m.tensor = level.linear(m.tensor);
        } else {
            m = {level.linear(fm.tensor), fm.grid_h, fm.grid_w, fm.batch};
        }
        m.tensor = level.norm(m.tensor);
        out.push_back(std::move(m));
    }
    return out;
}

void SimplePyramid::collect(const std::string& prefix, nn::ParameterList& out) const {
    for (std::size_t i = 0; i < levels_.size(); ++i) {
        const std::string p = prefix + ".s" + std::to_string(strides_[i]);
        levels_[i].linear.collect(p + ".linear", out);
        levels_[i].norm.collect(p + ".norm", out);
    }
}

// ---- head and targets ----------------------------------------------------

DenseHead::DenseHead(int dim, int classes, nn::Rng& rng)
    : hidden(dim, dim, rng), cls(dim, classes, rng), box(dim, 4, rng) {
    // Low initial foreground prior keeps the focal loss stable at the start.
    cls.bias.mutable_value().setConstant(-std::log(99.0));
}

void DenseHead::collect(const std::string& prefix, nn::ParameterList& out) const {
    hidden.collect(prefix + ".hidden", out);
    cls.collect(prefix + ".cls", out);
    box.collect(prefix + ".box", out);
}

int assign_level(const Box& box, std::span<const int> strides, double cells_per_object) {
    const double side = std::sqrt(box.area());
    for (std::size_t i = 0; i + 1 < strides.size(); ++i) {
        const double boundary = cells_per_object * std::sqrt(static_cast<double>(strides[i]) * strides[i + 1]);
        if (side <= boundary) {
            return static_cast<int>(i);
        }
    }
    return static_cast<int>(strides.size()) - 1;
}

std::vector<LevelTargets> assign_targets(std::span<const BoxTargets> images, std::span<const LevelOutput> levels,
                                         int classes, double cells_per_object) {
    std::vector<int> strides;
    for (const auto& l : levels) {
        strides.push_back(l.stride);
    }
    struct Claim {
        double area;
        const Box* box;
        int cls;
    };
    std::vector<std::map<int, Claim>> claims(levels.size());
    for (std::size_t b = 0; b < images.size(); ++b) {
        const BoxTargets& img = images[b];
        for (std::size_t k = 0; k < img.boxes.size(); ++k) {
            const Box& box = img.boxes[k];
            const auto li = static_cast<std::size_t>(assign_level(box, strides, cells_per_object));
            const LevelOutput& l = levels[li];
            const double cx = 0.5 * (box.x_min + box.x_max);
            const double cy = 0.5 * (box.y_min + box.y_max);
            const int gx = std::clamp(static_cast<int>(std::floor(cx / l.stride)), 0, l.grid_w - 1);
            const int gy = std::clamp(static_cast<int>(std::floor(cy / l.stride)), 0, l.grid_h - 1);
            const int row = (static_cast<int>(b) * l.grid_h + gy) * l.grid_w + gx;
            const Claim c{box.area(), &box, img.classes[k]};
            auto [it, inserted] = claims[li].emplace(row, c);
            if (!inserted && c.area < it->second.area) {
                it->second = c;
            }
        }
    }
    std::vector<LevelTargets> out(levels.size());
    for (std::size_t li = 0; li < levels.size(); ++li) {
        const LevelOutput& l = levels[li];
        LevelTargets& t = out[li];
        t.classes = ad::Matrix::Zero(static_cast<Eigen::Index>(l.batch) * l.grid_h * l.grid_w, classes);
        t.distances.resize(static_cast<Eigen::Index>(claims[li].size()), 4);
        Eigen::Index p = 0;
        for (const auto& [row, c] : claims[li]) {
            t.classes(row, c.cls) = 1.0;
            t.positive_rows.push_back(row);
            const int cell = row % (l.grid_h * l.grid_w);
            const double px = (cell % l.grid_w + 0.5) * l.stride;
            const double py = (cell / l.grid_w + 0.5) * l.stride;
            t.distances(p, 0) = std::max(0.5, px - c.box->x_min);
            t.distances(p, 1) = std::max(0.5, py - c.box->y_min);
            t.distances(p, 2) = std::max(0.5, c.box->x_max - px);
            t.distances(p, 3) = std::max(0.5, c.box->y_max - py);
            ++p;
        }
    }
    return out;
}

DetectionLoss detection_loss(std::span<const LevelOutput> levels, std::span<const LevelTargets> targets,
                             double alpha, double gamma) {
    if (levels.size() != targets.size()) {
        throw ShapeError("detection loss: one target set per level is required");
    }
    std::vector<ad::Var> cls_terms;
    std::vector<ad::Var> box_terms;
    int positives = 0;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        cls_terms.push_back(ad::sigmoid_focal_loss(levels[i].logits, targets[i].classes, alpha, gamma));
        if (!targets[i].positive_rows.empty()) {
            positives += static_cast<int>(targets[i].positive_rows.size());
            box_terms.push_back(
                ad::ltrb_iou_loss(ad::gather_rows(levels[i].distances, targets[i].positive_rows), targets[i].distances));
        }
    }
    DetectionLoss out;
    if (cls_terms.empty()) {
        out.total = ad::Var::scalar(0.0);
        return out;
    }
    const double norm = 1.0 / std::max(1, positives);
    std::vector<ad::Var> terms = cls_terms;
    terms.insert(terms.end(), box_terms.begin(), box_terms.end());
    const std::vector<double> weights(terms.size(), norm);
    out.total = ad::weighted_sum(terms, weights);
    for (const auto& t : cls_terms) {
        out.breakdown.classification += t.item() * norm;
    }
    for (const auto& t : box_terms) {
        out.breakdown.box += t.item() * norm;
    }
    out.breakdown.total = out.total.item();
    out.breakdown.positives = positives;
    return out;
}

std::vector<int> nms(std::span<const Detection> detections, double iou_threshold) {
    std::vector<int> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return detections[static_cast<std::size_t>(a)].score > detections[static_cast<std::size_t>(b)].score;
    });
    std::vector<bool> removed(detections.size(), false);
    std::vector<int> kept;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const auto a = static_cast<std::size_t>(order[i]);
        if (removed[a]) {
            continue;
        }
        kept.push_back(order[i]);
        for (std::size_t j = i + 1; j < order.size(); ++j) {
            const auto b = static_cast<std::size_t>(order[j]);
            if (!removed[b] && detections[b].category == detections[a].category &&
                iou(detections[a].box, detections[b].box) > iou_threshold) {
                removed[b] = true;
            }
        }
    }
    return kept;
}

// ---- detector ------------------------------------------------------------

ImageEncoder clone_encoder(const ImageEncoder& encoder) {
    nn::Rng rng(0);
    ImageEncoder copy(encoder.config(), rng);
    nn::ParameterList src;
    nn::ParameterList dst;
    encoder.collect("image", src);
    copy.collect("image", dst);
    nn::copy_values(src, dst);
    return copy;
}

Detector::Detector(ImageEncoder backbone, std::vector<std::string> classes, DetectorConfig config, std::uint64_t seed)
    : backbone_(std::move(backbone)), classes_(std::move(classes)), config_(std::move(config)) {
    if (classes_.empty()) {
        throw ConfigError("the detector needs at least one class");
    }
    config_.validate(backbone_.config().patch_size);
    nn::Rng rng(seed);
    pyramid_ = SimplePyramid(backbone_.config().embed_dim, backbone_.config().patch_size, config_.pyramid_strides, rng);
    head_ = DenseHead(backbone_.config().embed_dim, static_cast<int>(classes_.size()), rng);
    // Start boxes near the nominal object size of each level.
    head_.box.bias.mutable_value().setConstant(std::log(config_.cells_per_object / 2.0));
}

std::vector<LevelOutput> Detector::forward(const ImageBatch& batch) const {
    const FeatureMap fm = backbone_.features(batch);
    std::vector<LevelOutput> out;
    const auto maps = pyramid_(fm);
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const FeatureMap& m = maps[i];
        const ad::Var h = ad::gelu(head_.hidden(m.tensor));
        LevelOutput l;
        l.logits = head_.cls(h);
        l.distances = ad::scale(ad::exp(head_.box(h)), pyramid_.strides()[i]);
        l.stride = pyramid_.strides()[i];
        l.grid_h = m.grid_h;
        l.grid_w = m.grid_w;
        l.batch = m.batch;
        out.push_back(std::move(l));
    }
    return out;
}

std::vector<Detection> Detector::decode(std::span<const LevelOutput> levels, int index, int height, int width) const {
    std::vector<Detection> candidates;
    for (const LevelOutput& l : levels) {
        const int cells = l.grid_h * l.grid_w;
        const ad::Matrix& logits = l.logits.value();
        const ad::Matrix& dist = l.distances.value();
        for (int c = 0; c < cells; ++c) {
            const Eigen::Index row = static_cast<Eigen::Index>(index) * cells + c;
            const double px = (c % l.grid_w + 0.5) * l.stride;
            const double py = (c / l.grid_w + 0.5) * l.stride;
            for (Eigen::Index k = 0; k < logits.cols(); ++k) {
                const double score = 1.0 / (1.0 + std::exp(-logits(row, k)));
                if (!(score >= config_.score_threshold) || !dist.row(row).allFinite()) {
                    continue;
                }
                Box b{std::clamp(px - dist(row, 0), 0.0, static_cast<double>(width)),
                      std::clamp(py - dist(row, 1), 0.0, static_cast<double>(height)),
                      std::clamp(px + dist(row, 2), 0.0, static_cast<double>(width)),
                      std::clamp(py + dist(row, 3), 0.0, static_cast<double>(height))};
                if (!b.valid()) {
                    continue;
                }
                candidates.push_back({b, score, classes_[static_cast<std::size_t>(k)]});
            }
        }
    }
    std::vector<Detection> out;
    for (const int i : nms(candidates, config_.nms_iou)) {
        if (static_cast<int>(out.size()) >= config_.max_detections) {
            break;
        }
        out.push_back(candidates[static_cast<std::size_t>(i)]);
    }
    return out;
}

std::vector<Detection> Detector::predict(const Image& image) const {
    ad::NoGradGuard no_grad;
    const Image resized = (image.rows == config_.input_h && image.cols == config_.input_w)
                              ? image
                              : resize_image(image, config_.input_h, config_.input_w);
    const std::array<Image, 1> one = {resized};
    const auto levels = forward(make_image_batch(one, backbone_.config().patch_size));
    auto dets = decode(levels, 0, config_.input_h, config_.input_w);
    const double sx = static_cast<double>(image.cols) / config_.input_w;
    const double sy = static_cast<double>(image.rows) / config_.input_h;
    for (auto& d : dets) {
        d.box = {d.box.x_min * sx, d.box.y_min * sy, d.box.x_max * sx, d.box.y_max * sy};
    }
    return dets;
}

nn::ParameterList Detector::backbone_parameters() const {
    nn::ParameterList out;
    backbone_.collect("backbone", out);
    return out;
}

nn::ParameterList Detector::decoder_parameters() const {
    nn::ParameterList out;
    pyramid_.collect("pyramid", out);
    head_.collect("head", out);
    return out;
}

nn::ParameterList Detector::parameters() const {
    nn::ParameterList out = backbone_parameters();
    const auto dec = decoder_parameters();
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
}

void Detector::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
    Checkpoint ckpt;
    ckpt.header = {{"kind", kDetectorKind},
                   {"encoder", backbone_.config().to_json()},
                   {"classes", classes_},
                   {"detector", config_.to_json()},
                   {"extra", extra}};
    store_parameters(parameters(), ckpt);
    save_checkpoint(path, ckpt);
}

Detector Detector::load(const std::filesystem::path& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.header.value("kind", std::string()) != kDetectorKind) {
        throw CheckpointError("not a detector checkpoint: " + path.string());
    }
    nn::Rng rng(0);
    ImageEncoder backbone(EncoderConfig::from_json(ckpt.header.at("encoder")), rng);
    Detector d(std::move(backbone), ckpt.header.at("classes").get<std::vector<std::string>>(),
               DetectorConfig::from_json(ckpt.header.at("detector")), 0);
    restore_parameters(ckpt, d.parameters());
    return d;
}

// ---- training ------------------------------------------------------------

PreparedScene prepare_scene(const DetectionScene& scene, std::span<const std::string> classes, int h, int w) {
    PreparedScene p;
    p.image = (scene.image.rows == h && scene.image.cols == w) ? scene.image : resize_image(scene.image, h, w);
    const double sx = static_cast<double>(w) / scene.image.cols;
    const double sy = static_cast<double>(h) / scene.image.rows;
    for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
        const auto it = std::find(classes.begin(), classes.end(), scene.labels[i]);
        if (it == classes.end()) {
            continue;
        }
        const Box& b = scene.boxes[i];
        p.targets.boxes.push_back({b.x_min * sx, b.y_min * sy, b.x_max * sx, b.y_max * sy});
        p.targets.classes.push_back(static_cast<int>(it - classes.begin()));
    }
    return p;
}

namespace {

struct BatchInputs {
    ImageBatch images;
    std::vector<BoxTargets> targets;
};

BatchInputs gather_batch(const std::vector<PreparedScene>& prepared, std::span<const int> rows, int patch_size) {
    std::vector<Image> imgs;
    BatchInputs in;
    for (const int r : rows) {
        imgs.push_back(prepared[static_cast<std::size_t>(r)].image);
        in.targets.push_back(prepared[static_cast<std::size_t>(r)].targets);
    }
    in.images = make_image_batch(imgs, patch_size);
    return in;
}

void accumulate(LossBreakdown& into, const LossBreakdown& b) {
    into.classification += b.classification;
    into.box += b.box;
    into.total += b.total;
    into.positives += b.positives;
}

void average(LossBreakdown& b, int steps) {
    const double k = std::max(1, steps);
    b.classification /= k;
    b.box /= k;
    b.total /= k;
}

}  // namespace

std::vector<EpochLoss> train_detector(Detector& detector, const std::vector<DetectionScene>& scenes, std::ostream* log) {
    if (scenes.empty()) {
        throw BatchError("detector training needs at least one scene");
    }
    const DetectorConfig& cfg = detector.config();
    const int patch = detector.backbone().config().patch_size;
    cfg.validate(patch);
    const auto sizes = cfg.train_sizes(patch);
    std::vector<std::vector<PreparedScene>> prepared(sizes.size());
    for (std::size_t s = 0; s < sizes.size(); ++s) {
        for (const auto& scene : scenes) {
            prepared[s].push_back(prepare_scene(scene, detector.classes(), sizes[s].first, sizes[s].second));
        }
    }
    optim::Adam optimizer({{detector.backbone_parameters(), cfg.backbone_lr, cfg.weight_decay},
                           {detector.decoder_parameters(), cfg.decoder_lr, cfg.weight_decay}});
    Rng rng(cfg.seed);
    std::vector<int> order(scenes.size());
    std::vector<EpochLoss> history;
    for (int e = 0; e < cfg.epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        EpochLoss epoch;
        epoch.epoch = e + 1;
        for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const int> rows(order.data() + i, end - i);
            const auto s = std::uniform_int_distribution<std::size_t>(0, sizes.size() - 1)(rng);
            const BatchInputs in = gather_batch(prepared[s], rows, patch);
            optimizer.zero_grad();
            const auto levels = detector.forward(in.images);
            const auto targets =
                assign_targets(in.targets, levels, static_cast<int>(detector.classes().size()), cfg.cells_per_object);
            const DetectionLoss loss = detection_loss(levels, targets, cfg.focal_alpha, cfg.focal_gamma);
            const LossBreakdown& b = loss.breakdown;
            if (!std::isfinite(b.total)) {
                const nlohmann::json dump = {{"epoch", epoch.epoch},
                                             {"step", epoch.steps},
                                             {"batch_indices", std::vector<int>(rows.begin(), rows.end())},
                                             {"size", {sizes[s].first, sizes[s].second}},
                                             {"classification", b.classification},
                                             {"box", b.box}};
                throw NumericError("non-finite detection loss", dump.dump());
            }
            ad::backward(loss.total);
            optimizer.step();
            accumulate(epoch.mean, b);
            if (log != nullptr) {
                *log << nlohmann::json{{"epoch", epoch.epoch},     {"step", epoch.steps},
                                       {"size", sizes[s].first},   {"L_cls", b.classification},
                                       {"L_box", b.box},           {"total", b.total},
                                       {"positives", b.positives}}
                            .dump()
                     << '\n';
            }
            ++epoch.steps;
        }
        average(epoch.mean, epoch.steps);
        history.push_back(epoch);
    }
    return history;
}

LossBreakdown evaluate_detector_loss(const Detector& detector, const std::vector<DetectionScene>& scenes) {
    ad::NoGradGuard no_grad;
    const DetectorConfig& cfg = detector.config();
    std::vector<PreparedScene> prepared;
    for (const auto& scene : scenes) {
        prepared.push_back(prepare_scene(scene, detector.classes(), cfg.input_h, cfg.input_w));
    }
    std::vector<int> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);
    LossBreakdown mean;
    int steps = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size));
        const BatchInputs in =
            gather_batch(prepared, std::span<const int>(order.data() + i, end - i), detector.backbone().config().patch_size);
        const auto levels = detector.forward(in.images);
        const auto targets =
            assign_targets(in.targets, levels, static_cast<int>(detector.classes().size()), cfg.cells_per_object);
        accumulate(mean, detection_loss(levels, targets, cfg.focal_alpha, cfg.focal_gamma).breakdown);
        ++steps;
    }
    average(mean, steps);
    return mean;
}

}  // namespace vlptl::detect
