#pragma once

#include "vlptl/autodiff.hpp"
#include "vlptl/image_io.hpp"
#include "vlptl/nn.hpp"

#include "json.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vlptl {

struct EncoderConfig {
    int embed_dim = 64;
    int image_size = 224;
    int patch_size = 16;
    int depth = 4;
    int heads = 4;
    int text_depth = 2;
    int mlp_ratio = 4;
    int vocab_size = 0;
    int max_text_len = 32;

    // Throws ConfigError.
    void validate() const;
    [[nodiscard]] int grid() const { return image_size / patch_size; }
    [[nodiscard]] nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& j);
};

// Word-level tokenizer over lower-cased alphanumeric runs.
class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Tokenizer();
    static Tokenizer build(std::span<const std::string> corpus);
    static Tokenizer from_tokens(std::vector<std::string> tokens);

    [[nodiscard]] static std::vector<std::string> split(std::string_view text);
    // Truncated or padded with kPad to exactly max_len ids.
    [[nodiscard]] std::vector<int> encode(std::string_view text, int max_len) const;
    [[nodiscard]] std::string decode(std::span<const int> ids) const;
    [[nodiscard]] int vocab_size() const { return static_cast<int>(tokens_.size()); }
    [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

    // One token per line; the line index is the id.
    void save(const std::filesystem::path& path) const;
    static Tokenizer load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int, std::less<>> ids_;
};

// Unit-norm rows, one per sample.
struct EmbeddingBatch {
    ad::Var matrix;

    [[nodiscard]] Eigen::Index size() const { return matrix.rows(); }
};

// Spatial tokens for `batch` images stacked row-major: row = (b * grid_h + y) * grid_w + x.
struct FeatureMap {
    ad::Var tensor;
    int grid_h = 0;
    int grid_w = 0;
    int batch = 1;
};

// Images flattened into patch rows, ready for the patch embedding.
struct ImageBatch {
    ad::Matrix patches;
    int count = 0;
    int grid_h = 0;
    int grid_w = 0;
};

// All images must share one size divisible by patch_size; throws ShapeError otherwise.
ImageBatch make_image_batch(std::span<const Image> images, int patch_size);
// Per-pixel normalisation applied before patching.
double normalize_intensity(unsigned char v);

class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(const EncoderConfig& config, nn::Rng& rng);

    // Embeddings for images at exactly the configured resolution.
    [[nodiscard]] EmbeddingBatch encode(const ImageBatch& batch) const;
    // Mean-pooled normalised tokens before projection (probe features).
    [[nodiscard]] ad::Var pooled(const ImageBatch& batch) const;
    // Unpooled spatial features; any resolution divisible by the patch size.
    [[nodiscard]] FeatureMap features(const ImageBatch& batch) const;

    void collect(const std::string& prefix, nn::ParameterList& out) const;
    [[nodiscard]] const EncoderConfig& config() const { return config_; }
    [[nodiscard]] const ad::Var& position_embedding() const { return pos_embed_; }

    // Bilinear resampling matrix from the base position grid to (gh, gw).
    [[nodiscard]] const ad::Matrix& interpolation(int grid_h, int grid_w) const;

private:
    [[nodiscard]] ad::Var trunk(const ImageBatch& batch) const;

    EncoderConfig config_;
    nn::Linear patch_embed_;
    ad::Var pos_embed_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm norm_;
    nn::Linear proj_;
    mutable std::map<std::pair<int, int>, ad::Matrix> interp_cache_;
};

class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(const EncoderConfig& config, nn::Rng& rng);

    // Token id rows as produced by Tokenizer::encode; padding is dropped.
    [[nodiscard]] EmbeddingBatch encode(std::span<const std::vector<int>> ids) const;

    void collect(const std::string& prefix, nn::ParameterList& out) const;

private:
    EncoderConfig config_;
    ad::Var token_embed_;
    ad::Var pos_embed_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm norm_;
    nn::Linear proj_;
};

// The two-tower model.
class DualEncoder {
public:
    DualEncoder(EncoderConfig config, Tokenizer tokenizer, nn::Rng& rng);

    [[nodiscard]] EmbeddingBatch encode_images(const ImageBatch& batch) const { return image_.encode(batch); }
    [[nodiscard]] EmbeddingBatch encode_texts(std::span<const std::string> texts) const;

    [[nodiscard]] const EncoderConfig& config() const { return config_; }
    [[nodiscard]] const Tokenizer& tokenizer() const { return tokenizer_; }
    [[nodiscard]] const ImageEncoder& image() const { return image_; }
    [[nodiscard]] const TextEncoder& text() const { return text_; }
    [[nodiscard]] nn::ParameterList parameters() const;

private:
    EncoderConfig config_;
    Tokenizer tokenizer_;
    ImageEncoder image_;
    TextEncoder text_;
};

}  // namespace vlptl
