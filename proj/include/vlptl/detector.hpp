#pragma once

#include "vlptl/detection.hpp"
#include "vlptl/encoders.hpp"
#include "vlptl/optim.hpp"
#include "vlptl/scene.hpp"
#include "vlptl/taxonomy.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vlptl::detect {

using Rng = std::mt19937_64;

struct DetectorConfig {
    int input_h = 256;
    int input_w = 256;
    std::vector<int> pyramid_strides = {8, 16, 32};
    double score_threshold = 0.3;
    double nms_iou = 0.5;
    int max_detections = 50;
    // Empty means 0.75x, 1x and 1.25x of the input size snapped to multiples of
    // the coarsest stride.
    std::vector<std::pair<int, int>> multiscale_train_sizes;
    // Object side (sqrt of area) a level is tuned for, in cells of its stride.
    double cells_per_object = 4.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;

    int epochs = 50;
    int batch_size = 4;
    double backbone_lr = 1e-5;
    double decoder_lr = 1e-4;
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;

    // Throws ConfigError.
    void validate(int patch_size) const;
    [[nodiscard]] std::vector<std::pair<int, int>> train_sizes(int patch_size) const;
    [[nodiscard]] nlohmann::json to_json() const;
    static DetectorConfig from_json(const nlohmann::json& j);
};

// Multiscale sizes: each factor times the base size, rounded to a multiple of `multiple`.
std::vector<std::pair<int, int>> snap_sizes(int h, int w, std::span<const double> factors, int multiple);

// ViTDet-style simple pyramid: every level is derived from the single backbone
// map, by a learned upsampling (linear to f*f channels then pixel shuffle),
// a linear map at the native stride, or space-to-depth then linear for
// downsampling. Each level ends with a layer norm.
class SimplePyramid {
public:
    SimplePyramid() = default;
    // Throws ConfigError when a stride is not the patch size times a power of two in [1/4, 4].
    SimplePyramid(int dim, int patch_size, std::vector<int> strides, nn::Rng& rng);

    // Throws ConfigError when the map cannot be resampled to a stride.
    [[nodiscard]] std::vector<FeatureMap> operator()(const FeatureMap& fm) const;
    void collect(const std::string& prefix, nn::ParameterList& out) const;
    [[nodiscard]] const std::vector<int>& strides() const { return strides_; }

private:
    struct Level {
        int factor = 1;  // > 1 upsample, < -1 downsample by -factor, 1 native
        nn::Linear linear;
        nn::LayerNorm norm;
    };
    int patch_size_ = 16;
    std::vector<int> strides_;
    std::vector<Level> levels_;
};

// Rows reordered so a (B*gh*gw) x (f*f*d) map becomes (B*gh*f*gw*f) x d.
FeatureMap pixel_shuffle(const FeatureMap& fm, int factor);
// Inverse of pixel_shuffle; throws ConfigError when the grid is not divisible.
FeatureMap space_to_depth(const FeatureMap& fm, int factor);

// Shared across levels: one hidden layer, then m class logits and 4 box
// distances (left, top, right, bottom) as exp(raw) * stride.
struct DenseHead {
    nn::Linear hidden;
    nn::Linear cls;
    nn::Linear box;

    DenseHead() = default;
    DenseHead(int dim, int classes, nn::Rng& rng);

    void collect(const std::string& prefix, nn::ParameterList& out) const;
};

struct LevelOutput {
    ad::Var logits;     // cells x m
    ad::Var distances;  // cells x 4, pixels
    int stride = 0;
    int grid_h = 0;
    int grid_w = 0;
    int batch = 1;
};

// Per-level training targets for one batch.
struct LevelTargets {
    ad::Matrix classes;               // cells x m, one-hot at positive cells
    std::vector<int> positive_rows;   // cells carrying a box target
    ad::Matrix distances;             // positives x 4
};

struct LossBreakdown {
    double classification = 0.0;
    double box = 0.0;
    double total = 0.0;
    int positives = 0;
};

struct DetectionLoss {
    ad::Var total;
    LossBreakdown breakdown;
};

// Per-image annotations restricted to the detector's classes.
struct BoxTargets {
    std::vector<Box> boxes;
    std::vector<int> classes;
};

// Level covering an object of side sqrt(area): boundaries sit at the geometric
// mean of neighbouring levels' nominal sizes (cells_per_object * stride); a
// box exactly on a boundary goes to the lower stride.
int assign_level(const Box& box, std::span<const int> strides, double cells_per_object);

// The cell containing each box centre at its assigned level is positive.
// When two boxes claim a cell the smaller box wins. Distance targets are
// measured from the cell centre and floored at half a pixel.
std::vector<LevelTargets> assign_targets(std::span<const BoxTargets> images, std::span<const LevelOutput> levels,
                                         int classes, double cells_per_object);

// Focal classification summed over every cell and class plus (1 - IoU) over
// positives, both divided by max(1, positives).
DetectionLoss detection_loss(std::span<const LevelOutput> levels, std::span<const LevelTargets> targets,
                             double alpha = 0.25, double gamma = 2.0);

// Greedy per-class NMS over score-descending candidates; equal scores keep the
// lower index first. Returns indices of kept detections in output order.
std::vector<int> nms(std::span<const Detection> detections, double iou_threshold);

class Detector {
public:
    Detector(ImageEncoder backbone, std::vector<std::string> classes, DetectorConfig config, std::uint64_t seed);

    [[nodiscard]] std::vector<LevelOutput> forward(const ImageBatch& batch) const;
    // Image resized to the configured input size; boxes reported in the
    // original image's pixel frame.
    [[nodiscard]] std::vector<Detection> predict(const Image& image) const;
    // Decodes raw level outputs of image `index` at the given frame size.
    [[nodiscard]] std::vector<Detection> decode(std::span<const LevelOutput> levels, int index, int height,
                                                int width) const;

    [[nodiscard]] nn::ParameterList backbone_parameters() const;
    [[nodiscard]] nn::ParameterList decoder_parameters() const;
    [[nodiscard]] nn::ParameterList parameters() const;

    [[nodiscard]] const ImageEncoder& backbone() const { return backbone_; }
    [[nodiscard]] const SimplePyramid& pyramid() const { return pyramid_; }
    [[nodiscard]] const DenseHead& head() const { return head_; }
    [[nodiscard]] const std::vector<std::string>& classes() const { return classes_; }
    [[nodiscard]] const DetectorConfig& config() const { return config_; }
    DetectorConfig& mutable_config() { return config_; }

    void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
    static Detector load(const std::filesystem::path& path);

private:
    ImageEncoder backbone_;
    std::vector<std::string> classes_;
    DetectorConfig config_;
    SimplePyramid pyramid_;
    DenseHead head_;
};

// A deep copy of the encoder's weights under a fresh parameter set.
ImageEncoder clone_encoder(const ImageEncoder& encoder);

// Scenes resized to (h, w) with boxes scaled; labels outside `classes` are dropped.
struct PreparedScene {
    Image image;
    BoxTargets targets;
};
PreparedScene prepare_scene(const DetectionScene& scene, std::span<const std::string> classes, int h, int w);

struct EpochLoss {
    int epoch = 0;
    int steps = 0;
    LossBreakdown mean;
};

// AdamW with separate backbone and decoder learning rates. Each batch is
// resized to a random entry of the multiscale sizes. Throws NumericError with
// the batch indices when the loss is not finite.
std::vector<EpochLoss> train_detector(Detector& detector, const std::vector<DetectionScene>& scenes,
                                      std::ostream* log = nullptr);

// Mean loss at the configured input size without gradient tracking.
LossBreakdown evaluate_detector_loss(const Detector& detector, const std::vector<DetectionScene>& scenes);

}  // namespace vlptl::detect
