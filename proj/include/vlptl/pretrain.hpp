#pragma once

#include "vlptl/autodiff.hpp"
#include "vlptl/encoders.hpp"
#include "vlptl/nn.hpp"
#include "vlptl/taxonomy.hpp"

#include <array>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace vlptl::pretrain {

using Rng = std::mt19937_64;

// Rows of a source batch reordered by perm: row i is source row perm[i].
struct ShuffledBatch {
    ad::Var matrix;
    std::vector<int> perm;
};

// Uniform random permutation; throws BatchError when n < 2.
ShuffledBatch shuffle_features(const EmbeddingBatch& m, Rng& rng);
ShuffledBatch permute_features(const EmbeddingBatch& m, std::vector<int> perm);

// target[i] = relate(categories[i], categories[perm[i]]) as a class index.
std::vector<int> srj_targets(const Taxonomy& taxonomy, std::span<const std::string> categories,
                             std::span<const int> perm);

// MLP shared by the four relation subtasks: 2d -> 2d -> 3.
class SRJHead {
public:
    SRJHead() = default;
    SRJHead(int embed_dim, nn::Rng& rng);

    // Logits for concat(first, second) row pairs.
    [[nodiscard]] ad::Var logits(const ad::Var& first, const ad::Var& second) const;
    void collect(const std::string& prefix, nn::ParameterList& out) const;

    nn::Linear hidden;
    nn::Linear output;
};

ad::Var srj_subtask_loss(const EmbeddingBatch& a, const ShuffledBatch& b, std::span<const int> targets,
                         const SRJHead& head);

enum SrjSubtask { kImageText = 0, kTextImage = 1, kImageImage = 2, kTextText = 3 };

struct SrjResult {
    ad::Var loss;
    std::array<ad::Var, 4> subtasks;  // indexed by SrjSubtask
    std::vector<int> image_perm;
    std::vector<int> text_perm;
};

// Mean of the IT (V, L'), TI (L, V'), II (V, V') and TT (L, L') subtask losses.
SrjResult srj_loss(const EmbeddingBatch& images, const EmbeddingBatch& texts, const Taxonomy& taxonomy,
                   std::span<const std::string> categories, const SRJHead& head, Rng& rng);
SrjResult srj_loss(const EmbeddingBatch& images, const EmbeddingBatch& texts, const Taxonomy& taxonomy,
                   std::span<const std::string> categories, const SRJHead& head, std::vector<int> image_perm,
                   std::vector<int> text_perm);

struct DncSplit {
    std::vector<int> defect_rows;
    std::vector<int> normal_rows;
    bool skipped = false;  // no defect or no normal sample, or external-interference type
};

DncSplit dnc_filter(const Taxonomy& taxonomy, std::span<const std::string> categories,
                    const std::string& component_type);

// Block target: 1 where both indices fall among the first k rows or both among the last q.
ad::Matrix dnc_target(int k, int q);

// Mean BCE of sigmoid(scale * V^j V^j^T) against dnc_target(k, q).
ad::Var dnc_component_loss(const ad::Var& defect_rows, const ad::Var& normal_rows, const ad::Var& scale);

struct DncResult {
    ad::Var loss;
    bool any_eligible = false;
    std::map<std::string, double> alpha;  // component type -> weight
};

// Weighted sum over eligible component types; alpha_c is the type's share of eligible samples.
DncResult dnc_loss(const Taxonomy& taxonomy, std::span<const std::string> categories, const EmbeddingBatch& images,
                   const ad::Var& scale);

// Symmetric InfoNCE with logits V L^T * inverse_temperature (a 1x1 variable).
ad::Var itc_loss(const EmbeddingBatch& images, const EmbeddingBatch& texts, const ad::Var& inverse_temperature);
// Fixed temperature; throws ConfigError unless temperature > 0.
ad::Var itc_loss(const EmbeddingBatch& images, const EmbeddingBatch& texts, double temperature);

struct LossWeights {
    double itc = 1.0;
    double srj = 1.0;
    double dnc = 1.0;
};

struct LossBreakdown {
    double itc = 0;
    double srj = 0;
    double dnc = 0;
    double total = 0;
    bool dnc_eligible = false;
};

struct TotalLoss {
    ad::Var total;
    LossBreakdown breakdown;
};

// Dual encoder plus the task-specific parameters trained alongside it.
class VisionLanguageModel {
public:
    static constexpr double kInitTemperature = 0.07;
    static constexpr double kMinTemperature = 1e-3;
    static constexpr double kMaxTemperature = 10.0;
    static constexpr double kInitDncScale = 10.0;

    VisionLanguageModel(EncoderConfig config, Tokenizer tokenizer, std::uint64_t seed);

    [[nodiscard]] const DualEncoder& encoder() const { return encoder_; }
    [[nodiscard]] const SRJHead& srj_head() const { return srj_; }
    [[nodiscard]] const ad::Var& logit_scale() const { return logit_scale_; }
    [[nodiscard]] const ad::Var& dnc_log_scale() const { return dnc_log_scale_; }
    [[nodiscard]] double temperature() const;
    [[nodiscard]] double dnc_scale() const;

    // Keeps the temperature inside [kMinTemperature, kMaxTemperature].
    void clamp_parameters();
    [[nodiscard]] nn::ParameterList parameters() const;

private:
    DualEncoder encoder_;
    SRJHead srj_;
    ad::Var logit_scale_;    // log(1 / temperature)
    ad::Var dnc_log_scale_;  // log(scale)
};

// Weighted sum of the three task losses on one batch. All three are always
// evaluated so the breakdown is complete and the total is linear in the weights.
TotalLoss total_loss(const EmbeddingBatch& images, const EmbeddingBatch& texts, const Taxonomy& taxonomy,
                     std::span<const std::string> categories, const VisionLanguageModel& model,
                     const LossWeights& weights, Rng& rng);

}  // namespace vlptl::pretrain
