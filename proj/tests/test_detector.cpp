#include "gradcheck.hpp"
#include "oracles.hpp"

#include "vlptl/detector.hpp"
#include "vlptl/errors.hpp"
#include "vlptl/synthetic.hpp"

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace vlptl;
using namespace vlptl::detect;
using vlptl::ad::Var;

namespace {

EncoderConfig tiny_backbone_config() {
    EncoderConfig c;
    c.embed_dim = 16;
    c.image_size = 64;
    c.patch_size = 16;
    c.depth = 1;
    c.heads = 2;
    c.text_depth = 1;
    c.vocab_size = 4;
    return c;
}

ImageEncoder tiny_backbone(std::uint64_t seed) {
    nn::Rng rng(seed);
    return ImageEncoder(tiny_backbone_config(), rng);
}

DetectorConfig tiny_config() {
    DetectorConfig c;
    c.input_h = c.input_w = 64;
    c.multiscale_train_sizes = {{64, 64}};
    c.epochs = 2;
    c.batch_size = 2;
    c.backbone_lr = 1e-4;
    c.decoder_lr = 3e-3;
    c.score_threshold = 0.05;
    return c;
}

const std::vector<std::string>& defect_classes() {
    static const std::vector<std::string> classes = Taxonomy::desk_default().defect_categories();
    return classes;
}

std::vector<DetectionScene> tiny_scenes(int n, std::uint64_t seed, int objects = 2) {
    synth::SceneSpec spec;
    spec.height = spec.width = 64;
    spec.min_objects = spec.max_objects = objects;
    spec.min_object_size = 20;
    spec.max_object_size = 36;
    spec.background = synth::Background::plain;
    synth::Rng rng(seed);
    std::vector<DetectionScene> out;
    const Taxonomy t = Taxonomy::desk_default();
    for (int i = 0; i < n; ++i) {
        out.push_back(synth::generate_scene(t, spec, rng));
    }
    return out;
}

LevelOutput blank_level(int grid_h, int grid_w, int stride, int classes) {
    LevelOutput l;
    l.grid_h = grid_h;
    l.grid_w = grid_w;
    l.stride = stride;
    l.logits = Var(ad::Matrix::Zero(grid_h * grid_w, classes));
    l.distances = Var(ad::Matrix::Ones(grid_h * grid_w, 4));
    return l;
}

std::vector<double> row(const ad::Matrix& m, Eigen::Index r) { return {m(r, 0), m(r, 1), m(r, 2), m(r, 3)}; }

}  // namespace

// ---- IoU -----------------------------------------------------------------

TEST(Iou, Examples) {
    const Box a{0, 0, 2, 2};
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(iou(a, Box{5, 5, 6, 6}), 0.0);
    EXPECT_NEAR(iou(a, Box{1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
}

TEST(Iou, SymmetricBoundedAndOneOnlyWhenEqual) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 50);
    for (int i = 0; i < 2000; ++i) {
        const double x0 = u(rng);
        const double y0 = u(rng);
        const Box a{x0, y0, x0 + 1 + u(rng), y0 + 1 + u(rng)};
        const double x1 = u(rng);
        const double y1 = u(rng);
        const Box b{x1, y1, x1 + 1 + u(rng), y1 + 1 + u(rng)};
        const double v = iou(a, b);
        ASSERT_EQ(v, iou(b, a));
        ASSERT_GE(v, 0.0);
        ASSERT_LT(v, 1.0);
        ASSERT_EQ(iou(a, a), 1.0);
    }
}

// ---- pyramid -------------------------------------------------------------

TEST(Pyramid, ShapesFromFourteenGrid) {
    nn::Rng rng(1);
    const SimplePyramid p(8, 16, {16, 32}, rng);
    FeatureMap fm{Var(ad::Matrix::Ones(196, 8)), 14, 14, 1};
    const auto maps = p(fm);
    ASSERT_EQ(maps.size(), 2u);
    EXPECT_EQ(maps[0].grid_h, 14);
    EXPECT_EQ(maps[0].grid_w, 14);
    EXPECT_EQ(maps[1].grid_h, 7);
    EXPECT_EQ(maps[1].grid_w, 7);
    EXPECT_EQ(maps[1].tensor.rows(), 49);
    EXPECT_EQ(maps[1].tensor.cols(), 8);

    const SimplePyramid up(8, 16, {4, 8, 16}, rng);
    const auto fine = up(fm);
    EXPECT_EQ(fine[0].grid_h, 56);
    EXPECT_EQ(fine[1].grid_h, 28);
}

TEST(Pyramid, ZeroMapGivesZeroPyramid) {
    nn::Rng rng(2);
    const SimplePyramid p(8, 16, {8, 16, 32}, rng);
    const auto maps = p(FeatureMap{Var(ad::Matrix::Zero(2 * 16, 8)), 4, 4, 2});
    for (const auto& m : maps) {
        EXPECT_EQ(m.tensor.value().cwiseAbs().maxCoeff(), 0.0);
        EXPECT_EQ(m.batch, 2);
    }
}

TEST(Pyramid, BadStridesThrow) {
    nn::Rng rng(3);
    EXPECT_THROW(SimplePyramid(8, 16, {24}, rng), ConfigError);
    EXPECT_THROW(SimplePyramid(8, 16, {128}, rng), ConfigError);
    const SimplePyramid p(8, 16, {32}, rng);
    EXPECT_THROW((void)p(FeatureMap{Var(ad::Matrix::Ones(15, 8)), 3, 5, 1}), ConfigError);
}

TEST(Pyramid, ShuffleInvertsSpaceToDepth) {
    std::mt19937_64 rng(4);
    const FeatureMap fm{Var(vlptl::testing::random_matrix(2 * 4 * 6, 3, rng)), 4, 6, 2};
    const FeatureMap packed = space_to_depth(fm, 2);
    EXPECT_EQ(packed.grid_h, 2);
    EXPECT_EQ(packed.grid_w, 3);
    EXPECT_EQ(packed.tensor.cols(), 12);
    const FeatureMap back = pixel_shuffle(packed, 2);
    EXPECT_EQ(back.tensor.value(), fm.tensor.value());
}

TEST(Pyramid, GradientReachesBackbone) {
    const ImageEncoder enc = tiny_backbone(5);
    nn::Rng rng(6);
    const SimplePyramid p(16, 16, {8, 16, 32}, rng);
    std::mt19937_64 px(7);
    Image img(64, 64, CV_8UC3);
    cv::randu(img, 0, 255);
    const std::vector<Image> one = {img};
    const ImageBatch batch = make_image_batch(one, 16);
    nn::ParameterList params;
    enc.collect("backbone", params);
    nn::zero_grad(params);
    Var total = Var::scalar(0.0);
    for (const auto& m : p(enc.features(batch))) {
        total = ad::add(total, ad::sum(ad::mul(m.tensor, m.tensor)));
    }
    ad::backward(total);
    // The final norm and projection only serve the pooled embedding.
    for (const auto& param : params) {
        const bool embedding_only = param.name.rfind("backbone.norm", 0) == 0 || param.name.rfind("backbone.proj", 0) == 0;
        const double g = param.var.grad().size() ? param.var.grad().norm() : 0.0;
        if (embedding_only) {
            EXPECT_EQ(g, 0.0) << param.name;
        } else {
            EXPECT_GT(g, 0.0) << param.name;
        }
    }
}

// ---- assignment ------------------------------------------------------------

TEST(Assignment, LevelBoundariesAreGeometricMeans) {
    const std::vector<int> strides = {8, 16, 32};
    // Nominal sizes 32, 64, 128; boundaries at sqrt(32*64) and sqrt(64*128).
    const double b0 = std::sqrt(32.0 * 64.0);
    EXPECT_EQ(assign_level(Box{0, 0, b0, b0}, strides, 4.0), 0);
    EXPECT_EQ(assign_level(Box{0, 0, b0 + 0.01, b0 + 0.01}, strides, 4.0), 1);
    EXPECT_EQ(assign_level(Box{0, 0, 10, 10}, strides, 4.0), 0);
    EXPECT_EQ(assign_level(Box{0, 0, 200, 200}, strides, 4.0), 2);
}

TEST(Assignment, CentreCellAndSmallerBoxWins) {
    std::vector<LevelOutput> levels = {blank_level(8, 8, 8, 2)};
    BoxTargets img;
    img.boxes = {{8, 8, 40, 40}, {20, 20, 28, 28}};  // same centre cell (3,3)
    img.classes = {0, 1};
    const std::vector<BoxTargets> images = {img};
    const auto t = assign_targets(images, levels, 2, 4.0);
    ASSERT_EQ(t.size(), 1u);
    ASSERT_EQ(t[0].positive_rows, std::vector<int>{3 * 8 + 3});
    EXPECT_EQ(t[0].classes(27, 1), 1.0);
    EXPECT_EQ(t[0].classes(27, 0), 0.0);
    EXPECT_EQ(t[0].classes.sum(), 1.0);
    // Cell centre (28, 28): left 8, top 8, right 0 floored at 0.5.
    EXPECT_DOUBLE_EQ(t[0].distances(0, 0), 8.0);
    EXPECT_DOUBLE_EQ(t[0].distances(0, 2), 0.5);
}

// ---- loss ----------------------------------------------------------------

TEST(Loss, PerfectPredictionsNearZero) {
    std::vector<LevelOutput> levels = {blank_level(8, 8, 8, 3), blank_level(4, 4, 16, 3)};
    BoxTargets img;
    img.boxes = {{4, 6, 30, 28}, {10, 12, 60, 62}};
    img.classes = {2, 0};
    const std::vector<BoxTargets> images = {img};
    const auto t = assign_targets(images, levels, 3, 4.0);
    for (std::size_t i = 0; i < levels.size(); ++i) {
        ad::Matrix logits = (t[i].classes.array() * 40.0 - 20.0).matrix();
        ad::Matrix dist = ad::Matrix::Ones(levels[i].logits.rows(), 4);
        for (std::size_t k = 0; k < t[i].positive_rows.size(); ++k) {
            dist.row(t[i].positive_rows[k]) = t[i].distances.row(static_cast<Eigen::Index>(k));
        }
        levels[i].logits = Var(logits);
        levels[i].distances = Var(dist);
    }
    const auto loss = detection_loss(levels, t);
    EXPECT_EQ(loss.breakdown.positives, 2);
    EXPECT_LT(loss.breakdown.total, 1e-3);
}

TEST(Loss, NoObjectsGivesZeroBoxTerm) {
    std::vector<LevelOutput> levels = {blank_level(4, 4, 16, 2)};
    const std::vector<BoxTargets> images = {BoxTargets{}};
    const auto t = assign_targets(images, levels, 2, 4.0);
    const auto loss = detection_loss(levels, t);
    EXPECT_EQ(loss.breakdown.positives, 0);
    EXPECT_EQ(loss.breakdown.box, 0.0);
    EXPECT_NEAR(loss.breakdown.classification, 32 * oracle::focal(0.0, false, 0.25, 2.0), 1e-12);
}

TEST(Loss, MatchesScalarOracle) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<LevelOutput> levels = {blank_level(8, 8, 8, 3), blank_level(4, 4, 16, 3), blank_level(2, 2, 32, 3)};
        for (auto& l : levels) {
            l.batch = 1;
        }
        BoxTargets img;
        std::uniform_real_distribution<double> pos(0, 40);
        std::uniform_real_distribution<double> side(4, 60);
        std::uniform_int_distribution<int> cls(0, 2);
        for (int k = 0; k < 4; ++k) {
            const double x = pos(rng);
            const double y = pos(rng);
            img.boxes.push_back({x, y, std::min(64.0, x + side(rng)), std::min(64.0, y + side(rng))});
            img.classes.push_back(cls(rng));
        }
        const std::vector<BoxTargets> images = {img};
        const auto t = assign_targets(images, levels, 3, 4.0);
        double focal_sum = 0;
        double box_sum = 0;
        int positives = 0;
        for (std::size_t i = 0; i < levels.size(); ++i) {
            const ad::Matrix logits = vlptl::testing::random_matrix(levels[i].logits.rows(), 3, rng, 2.0);
            const ad::Matrix dist = (vlptl::testing::random_matrix(levels[i].logits.rows(), 4, rng).array().exp() * 8.0).matrix();
            levels[i].logits = Var(logits);
            levels[i].distances = Var(dist);
            for (Eigen::Index r = 0; r < logits.rows(); ++r) {
                for (Eigen::Index c = 0; c < 3; ++c) {
                    focal_sum += oracle::focal(logits(r, c), t[i].classes(r, c) > 0.5, 0.25, 2.0);
                }
            }
            for (std::size_t k = 0; k < t[i].positive_rows.size(); ++k) {
                box_sum += oracle::ltrb_iou_loss(row(dist, t[i].positive_rows[k]), row(t[i].distances, static_cast<Eigen::Index>(k)));
                ++positives;
            }
        }
        const auto loss = detection_loss(levels, t);
        const double n = std::max(1, positives);
        ASSERT_EQ(loss.breakdown.positives, positives);
        ASSERT_NEAR(loss.breakdown.classification, focal_sum / n, 1e-6);
        ASSERT_NEAR(loss.breakdown.box, box_sum / n, 1e-6);
        ASSERT_NEAR(loss.total.item(), (focal_sum + box_sum) / n, 1e-6);
    }
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(9);
    std::vector<LevelOutput> levels = {blank_level(4, 4, 16, 2)};
    BoxTargets img;
    img.boxes = {{5, 7, 40, 33}, {30, 2, 60, 20}};
    img.classes = {0, 1};
    const std::vector<BoxTargets> images = {img};
    const auto t = assign_targets(images, levels, 2, 4.0);
    Var logits(vlptl::testing::random_matrix(16, 2, rng), true);
    Var raw(vlptl::testing::random_matrix(16, 4, rng, 0.3), true);
    const auto f = [&](const std::vector<Var>& x) {
        std::vector<LevelOutput> l = levels;
        l[0].logits = x[0];
        l[0].distances = ad::scale(ad::exp(x[1]), 16.0);
        return detection_loss(l, t).total;
    };
    EXPECT_LT(vlptl::testing::gradient_error(f, {logits, raw}), 1e-5);
}

// ---- NMS ------------------------------------------------------------------

TEST(Nms, DuplicateKeepsHigherScore) {
    const std::vector<Detection> d = {{{0, 0, 10, 10}, 0.8, "a"}, {{0, 0, 10, 10}, 0.9, "a"}, {{0, 0, 10, 10}, 0.7, "b"}};
    EXPECT_EQ(nms(d, 0.5), (std::vector<int>{1, 2}));
}

TEST(Nms, EqualScoresKeepLowerIndex) {
    const std::vector<Detection> d = {{{0, 0, 10, 10}, 0.5, "a"}, {{1, 1, 10, 10}, 0.5, "a"}};
    EXPECT_EQ(nms(d, 0.5), std::vector<int>{0});
}

TEST(Nms, NoSurvivingSameClassOverlap) {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0, 100);
    std::uniform_real_distribution<double> s(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Detection> d;
        for (int i = 0; i < 40; ++i) {
            const double x = u(rng);
            const double y = u(rng);
            d.push_back({{x, y, x + 5 + u(rng) / 4, y + 5 + u(rng) / 4}, s(rng), i % 3 ? "a" : "b"});
        }
        const auto keep = nms(d, 0.4);
        for (std::size_t i = 1; i < keep.size(); ++i) {
            ASSERT_GE(d[static_cast<std::size_t>(keep[i - 1])].score, d[static_cast<std::size_t>(keep[i])].score);
        }
        for (std::size_t i = 0; i < keep.size(); ++i) {
            for (std::size_t j = i + 1; j < keep.size(); ++j) {
                const auto& a = d[static_cast<std::size_t>(keep[i])];
                const auto& b = d[static_cast<std::size_t>(keep[j])];
                if (a.category == b.category) {
                    ASSERT_LE(iou(a.box, b.box), 0.4);
                }
            }
        }
    }
}

// ---- detector --------------------------------------------------------------

TEST(DetectorConfig, ValidationAndDefaultSizes) {
    DetectorConfig c;
    EXPECT_NO_THROW(c.validate(16));
    EXPECT_EQ(c.train_sizes(16), (std::vector<std::pair<int, int>>{{192, 192}, {256, 256}, {320, 320}}));
    c.score_threshold = 1.0;
    EXPECT_THROW(c.validate(16), ConfigError);
    c = DetectorConfig{};
    c.pyramid_strides = {16, 8};
    EXPECT_THROW(c.validate(16), ConfigError);
    c = DetectorConfig{};
    EXPECT_EQ(DetectorConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(Detector, ZeroClassifierScoresOneHalf) {
    DetectorConfig cfg = tiny_config();
    cfg.score_threshold = 0.6;
    Detector det(tiny_backbone(1), defect_classes(), cfg, 2);
    Var w = det.head().cls.weight;
    Var b = det.head().cls.bias;
    w.mutable_value().setZero();
    b.mutable_value().setZero();
    const Image img(64, 64, CV_8UC3, cv::Scalar(100, 150, 200));
    EXPECT_TRUE(det.predict(img).empty());
    const std::vector<Image> one = {img};
    for (const auto& l : det.forward(make_image_batch(one, 16))) {
        EXPECT_EQ(l.logits.value().cwiseAbs().maxCoeff(), 0.0);
    }
    det.mutable_config().score_threshold = 0.4;
    const auto dets = det.predict(img);
    ASSERT_FALSE(dets.empty());
    EXPECT_LE(static_cast<int>(dets.size()), cfg.max_detections);
    EXPECT_DOUBLE_EQ(dets.front().score, 0.5);
}

TEST(Detector, DecodedBoxesValidAndSorted) {
    DetectorConfig cfg = tiny_config();
    cfg.score_threshold = 0.001;
    cfg.max_detections = 500;
    Detector det(tiny_backbone(3), defect_classes(), cfg, 4);
    Var b = det.head().cls.bias;
    b.mutable_value().setZero();
    for (const auto& scene : tiny_scenes(3, 5)) {
        cv::Mat big;
        cv::resize(scene.image, big, cv::Size(96, 80));
        const auto dets = det.predict(big);
        ASSERT_FALSE(dets.empty());
        for (std::size_t i = 0; i < dets.size(); ++i) {
            const auto& d = dets[i];
            ASSERT_TRUE(d.box.valid());
            ASSERT_GE(d.box.x_min, 0);
            ASSERT_GE(d.box.y_min, 0);
            ASSERT_LE(d.box.x_max, 96);
            ASSERT_LE(d.box.y_max, 80);
            ASSERT_TRUE(std::isfinite(d.score));
            ASSERT_NE(std::find(defect_classes().begin(), defect_classes().end(), d.category), defect_classes().end());
            if (i > 0) {
                ASSERT_GE(dets[i - 1].score, d.score);
            }
        }
    }
}

TEST(Detector, TwoEpochsReduceLoss) {
    DetectorConfig cfg = tiny_config();
    cfg.epochs = 2;
    Detector det(tiny_backbone(6), defect_classes(), cfg, 7);
    std::ostringstream log;
    const auto hist = train_detector(det, tiny_scenes(8, 8), &log);
    ASSERT_EQ(hist.size(), 2u);
    EXPECT_LT(hist[1].mean.total, hist[0].mean.total);
    EXPECT_NE(log.str().find("\"epoch\""), std::string::npos);
}

TEST(Detector, FrozenBackboneStillTrainsDecoder) {
    DetectorConfig cfg = tiny_config();
    cfg.epochs = 1;
    cfg.backbone_lr = 0.0;
    Detector det(tiny_backbone(9), defect_classes(), cfg, 10);
    auto snapshot = [](const nn::ParameterList& ps) {
        std::vector<ad::Matrix> out;
        for (const auto& p : ps) {
            out.push_back(p.var.value());
        }
        return out;
    };
    const auto backbone_before = snapshot(det.backbone_parameters());
    const auto decoder_before = snapshot(det.decoder_parameters());
    train_detector(det, tiny_scenes(4, 11));
    EXPECT_EQ(snapshot(det.backbone_parameters()), backbone_before);
    EXPECT_NE(snapshot(det.decoder_parameters()), decoder_before);
}

TEST(Detector, CheckpointReloadReproducesLoss) {
    DetectorConfig cfg = tiny_config();
    cfg.epochs = 1;
    Detector det(tiny_backbone(12), defect_classes(), cfg, 13);
    const auto scenes = tiny_scenes(4, 14);
    train_detector(det, scenes);
    const auto path = std::filesystem::temp_directory_path() / "vlptl_test_detector.ckpt";
    det.save(path);
    const Detector back = Detector::load(path);
    EXPECT_EQ(evaluate_detector_loss(back, scenes).total, evaluate_detector_loss(det, scenes).total);
    EXPECT_EQ(back.classes(), det.classes());
    const Image img = scenes[0].image;
    EXPECT_EQ(back.predict(img), det.predict(img));
}

TEST(Detector, CloneEncoderIsIndependent) {
    const ImageEncoder enc = tiny_backbone(15);
    const ImageEncoder copy = clone_encoder(enc);
    nn::ParameterList a;
    nn::ParameterList b;
    enc.collect("x", a);
    copy.collect("x", b);
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(a[0].var.value(), b[0].var.value());
    Var v = b[0].var;
    v.mutable_value().array() += 1.0;
    EXPECT_NE(a[0].var.value(), b[0].var.value());
}

TEST(Detector, ToySceneOverfitsSingleObject) {
    DetectorConfig cfg = tiny_config();
    cfg.epochs = 300;
    cfg.batch_size = 2;
    // First seeded single-object scene whose object is a defect.
    std::vector<DetectionScene> scenes;
    for (const auto& s : tiny_scenes(20, 16, 1)) {
        if (std::find(defect_classes().begin(), defect_classes().end(), s.labels[0]) != defect_classes().end()) {
            scenes = {s, s};
            break;
        }
    }
    ASSERT_EQ(scenes.size(), 2u);
    Detector det(tiny_backbone(17), defect_classes(), cfg, 18);
    train_detector(det, scenes);
    const auto dets = det.predict(scenes[0].image);
    ASSERT_FALSE(dets.empty());
    EXPECT_GE(iou(dets.front().box, scenes[0].boxes[0]), 0.5);
}
