#pragma once

#include "vlptl/manifest.hpp"
#include "vlptl/optim.hpp"
#include "vlptl/pretrain.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <vector>

namespace vlptl::pretrain {

// Image-text pairs held in memory at the encoder resolution.
struct PairDataset {
    std::vector<Image> images;
    std::vector<std::string> texts;
    std::vector<std::string> categories;

    [[nodiscard]] std::size_t size() const { return images.size(); }
    [[nodiscard]] PairDataset subset(std::span<const int> rows) const;
};

PairDataset load_pair_dataset(const Manifest& manifest, const std::filesystem::path& manifest_path, int image_size);

// Defaults follow the full-scale recipe; the pipeline's desk preset overrides them.
struct PretrainConfig {
    int epochs = 30;
    int batch_size = 120;
    double lr = 1e-6;
    double weight_decay = 0.0;
    // Off: constant learning rate. On: linear warmup over warmup_fraction of
    // the steps, then cosine decay.
    bool cosine_schedule = false;
    double warmup_fraction = 0.1;
    std::uint64_t seed = 0;
    LossWeights weights;

    [[nodiscard]] nlohmann::json to_json() const;
    static PretrainConfig from_json(const nlohmann::json& j);
};

struct EpochLoss {
    int epoch = 0;
    int steps = 0;
    LossBreakdown mean;
};

// Contiguous batches over `order`; a trailing singleton is merged into the previous batch.
std::vector<std::vector<int>> make_batches(std::span<const int> order, int batch_size);

// Model plus optimizer state; survives a save/load round trip.
class PretrainSession {
public:
    PretrainSession(VisionLanguageModel model, Taxonomy taxonomy, PretrainConfig config);

    // Runs config.epochs epochs. Writes one JSON line per step to `log` when given.
    // Throws NumericError naming the batch indices when a loss is not finite.
    std::vector<EpochLoss> train(const PairDataset& data, std::ostream* log = nullptr);

    [[nodiscard]] const VisionLanguageModel& model() const { return model_; }
    [[nodiscard]] const PretrainConfig& config() const { return config_; }
    [[nodiscard]] const Taxonomy& taxonomy() const { return taxonomy_; }
    [[nodiscard]] optim::Adam& optimizer() { return *optimizer_; }
    [[nodiscard]] int epochs_done() const { return epochs_done_; }

    // Replaces the training settings, keeping parameters and optimizer moments.
    void reconfigure(PretrainConfig config);

    void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
    static PretrainSession load(const std::filesystem::path& path);
    // Header of a saved session without touching the arrays.
    static nlohmann::json read_header(const std::filesystem::path& path);

private:
    VisionLanguageModel model_;
    Taxonomy taxonomy_;
    PretrainConfig config_;
    std::unique_ptr<optim::Adam> optimizer_;
    int epochs_done_ = 0;
};

// Mean losses over fixed-order batches without gradient tracking.
LossBreakdown evaluate_losses(const VisionLanguageModel& model, const Taxonomy& taxonomy, const PairDataset& data, int batch_size,
                              const LossWeights& weights, std::uint64_t seed);

ImageBatch image_batch(const PairDataset& data, std::span<const int> rows, int patch_size);

// Unit-norm image embeddings and mean-pooled backbone features for every sample.
ad::Matrix embed_images(const ImageEncoder& encoder, const std::vector<Image>& images, int chunk = 64);
ad::Matrix pooled_features(const ImageEncoder& encoder, const std::vector<Image>& images, int chunk = 64);
ad::Matrix embed_texts(const DualEncoder& encoder, std::span<const std::string> texts, int chunk = 64);

// Each image retrieves the most similar text; a hit when that text's category
// equals the image's category.
double retrieval_top1(const DualEncoder& encoder, const PairDataset& data);

// Ridge-regularised least-squares one-hot probe fit on train, accuracy on test.
double linear_probe_accuracy(const ad::Matrix& train_features, std::span<const int> train_labels,
                             const ad::Matrix& test_features, std::span<const int> test_labels, int classes,
                             double ridge = 1e-3);

}  // namespace vlptl::pretrain
