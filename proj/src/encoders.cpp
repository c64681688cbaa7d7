#include "vlptl/encoders.hpp"

#include "vlptl/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

namespace vlptl {

void EncoderConfig::validate() const {
    if (embed_dim < 8) {
        throw ConfigError("embed_dim must be at least 8");
    }
    if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0) {
        throw ConfigError("image size must be divisible by the patch size");
    }
    if (depth < 1 || text_depth < 1) {
        throw ConfigError("encoder depth must be at least 1");
    }
    if (heads < 1 || embed_dim % heads != 0) {
        throw ConfigError("embed_dim must be divisible by heads");
    }
    if (mlp_ratio < 1 || max_text_len < 1) {
        throw ConfigError("mlp_ratio and max_text_len must be positive");
    }
}

nlohmann::json EncoderConfig::to_json() const {
    return {{"embed_dim", embed_dim}, {"image_size", image_size}, {"patch_size", patch_size},
            {"depth", depth},         {"heads", heads},           {"text_depth", text_depth},
            {"mlp_ratio", mlp_ratio}, {"vocab_size", vocab_size}, {"max_text_len", max_text_len}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.text_depth = j.value("text_depth", c.text_depth);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_text_len = j.value("max_text_len", c.max_text_len);
    return c;
}

// ---- tokenizer -----------------------------------------------------------

Tokenizer::Tokenizer() : tokens_{"<pad>", "<unk>"}, ids_{{"<pad>", kPad}, {"<unk>", kUnk}} {}

Tokenizer Tokenizer::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 2 || tokens[kPad] != "<pad>" || tokens[kUnk] != "<unk>") {
        throw FormatError("vocabulary must start with <pad> and <unk>");
    }
    Tokenizer t;
    t.tokens_ = std::move(tokens);
    t.ids_.clear();
    for (std::size_t i = 0; i < t.tokens_.size(); ++i) {
        if (!t.ids_.emplace(t.tokens_[i], static_cast<int>(i)).second) {
            throw FormatError("duplicate vocabulary token '" + t.tokens_[i] + "'");
        }
    }
    return t;
}

Tokenizer Tokenizer::build(std::span<const std::string> corpus) {
    std::vector<std::string> tokens = {"<pad>", "<unk>"};
    std::map<std::string, int, std::less<>> seen;
    for (const auto& text : corpus) {
        for (auto& word : split(text)) {
            if (!seen.contains(word)) {
                seen.emplace(word, 0);
                tokens.push_back(std::move(word));
            }
        }
    }
    return from_tokens(std::move(tokens));
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    for (const char ch : text) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isalnum(uc) != 0) {
            current.push_back(static_cast<char>(std::tolower(uc)));
        } else if (!current.empty()) {
            words.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        words.push_back(std::move(current));
    }
    return words;
}

std::vector<int> Tokenizer::encode(std::string_view text, int max_len) const {
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(max_len));
    for (const auto& w : split(text)) {
        if (static_cast<int>(ids.size()) == max_len) {
            break;
        }
        const auto it = ids_.find(w);
        ids.push_back(it == ids_.end() ? kUnk : it->second);
    }
    ids.resize(static_cast<std::size_t>(max_len), kPad);
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (const int id : ids) {
        if (id == kPad) {
            continue;
        }
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += (id >= 0 && id < vocab_size()) ? tokens_[static_cast<std::size_t>(id)] : tokens_[kUnk];
    }
    return out;
}

void Tokenizer::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw FormatError("cannot write vocabulary " + path.string());
    }
    for (const auto& t : tokens_) {
        os << t << '\n';
    }
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw FormatError("cannot open vocabulary " + path.string());
    }
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(is, line)) {
        tokens.push_back(line);
    }
    return from_tokens(std::move(tokens));
}

// ---- images --------------------------------------------------------------

double normalize_intensity(unsigned char v) { return (static_cast<double>(v) / 255.0 - 0.7) / 0.15; }

ImageBatch make_image_batch(std::span<const Image> images, int patch_size) {
    if (images.empty()) {
        throw ShapeError("empty image batch");
    }
    const int h = images.front().rows;
    const int w = images.front().cols;
    if (h % patch_size != 0 || w % patch_size != 0) {
        throw ShapeError("image size " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch size " + std::to_string(patch_size));
    }
    ImageBatch batch;
    batch.count = static_cast<int>(images.size());
    batch.grid_h = h / patch_size;
    batch.grid_w = w / patch_size;
    const int per_image = batch.grid_h * batch.grid_w;
    const int patch_dim = patch_size * patch_size * 3;
    batch.patches.resize(static_cast<Eigen::Index>(batch.count) * per_image, patch_dim);
    for (int b = 0; b < batch.count; ++b) {
        const Image& img = images[static_cast<std::size_t>(b)];
        if (img.rows != h || img.cols != w || img.type() != CV_8UC3) {
            throw ShapeError("images in a batch must share size and be 8-bit 3-channel");
        }
        for (int gy = 0; gy < batch.grid_h; ++gy) {
            for (int gx = 0; gx < batch.grid_w; ++gx) {
                const Eigen::Index row = static_cast<Eigen::Index>(b) * per_image + gy * batch.grid_w + gx;
                double* dst = batch.patches.row(row).data();
                for (int y = 0; y < patch_size; ++y) {
                    const auto* src = img.ptr<cv::Vec3b>(gy * patch_size + y) + gx * patch_size;
                    for (int x = 0; x < patch_size; ++x) {
                        for (int c = 0; c < 3; ++c) {
                            *dst++ = normalize_intensity(src[x][c]);
                        }
                    }
                }
            }
        }
    }
    return batch;
}

namespace {

std::vector<int> segment_offsets(int count, int per_item) {
    std::vector<int> off(static_cast<std::size_t>(count) + 1);
    for (int i = 0; i <= count; ++i) {
        off[static_cast<std::size_t>(i)] = i * per_item;
    }
    return off;
}

// 1-D linear interpolation weights, half-pixel centres, edge clamped.
ad::Matrix linear_weights(int out, int in) {
    ad::Matrix w = ad::Matrix::Zero(out, in);
    for (int i = 0; i < out; ++i) {
        double src = (i + 0.5) * static_cast<double>(in) / out - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int lo = static_cast<int>(std::floor(src));
        const int hi = std::min(lo + 1, in - 1);
        const double t = src - lo;
        w(i, lo) += 1.0 - t;
        w(i, hi) += t;
    }
    return w;
}

}  // namespace

// ---- image encoder -------------------------------------------------------

ImageEncoder::ImageEncoder(const EncoderConfig& config, nn::Rng& rng)
    : config_(config),
      patch_embed_(config.patch_size * config.patch_size * 3, config.embed_dim, rng),
      pos_embed_(nn::make_parameter(config.grid() * config.grid(), config.embed_dim, 0.02, rng)),
      norm_(config.embed_dim),
      proj_(config.embed_dim, config.embed_dim, rng) {
    config_.validate();
    for (int i = 0; i < config.depth; ++i) {
        blocks_.emplace_back(config.embed_dim, config.heads, config.mlp_ratio, rng);
    }
}

const ad::Matrix& ImageEncoder::interpolation(int grid_h, int grid_w) const {
    const auto key = std::make_pair(grid_h, grid_w);
    auto it = interp_cache_.find(key);
    if (it != interp_cache_.end()) {
        return it->second;
    }
    const int base = config_.grid();
    const ad::Matrix wy = linear_weights(grid_h, base);
    const ad::Matrix wx = linear_weights(grid_w, base);
    ad::Matrix m = ad::Matrix::Zero(static_cast<Eigen::Index>(grid_h) * grid_w, static_cast<Eigen::Index>(base) * base);
    for (int y = 0; y < grid_h; ++y) {
        for (int x = 0; x < grid_w; ++x) {
            for (int by = 0; by < base; ++by) {
                if (wy(y, by) == 0.0) {
                    continue;
                }
                for (int bx = 0; bx < base; ++bx) {
                    m(y * grid_w + x, by * base + bx) = wy(y, by) * wx(x, bx);
                }
            }
        }
    }
    return interp_cache_.emplace(key, std::move(m)).first->second;
}

ad::Var ImageEncoder::trunk(const ImageBatch& batch) const {
    const int per_image = batch.grid_h * batch.grid_w;
    if (batch.patches.cols() != patch_embed_.in_features()) {
        throw ShapeError("patch dimension does not match the encoder patch size");
    }
    ad::Var x = patch_embed_(ad::Var(batch.patches));
    ad::Var pos = pos_embed_;
    if (batch.grid_h != config_.grid() || batch.grid_w != config_.grid()) {
        pos = ad::matmul(ad::Var(interpolation(batch.grid_h, batch.grid_w)), pos_embed_);
    }
    std::vector<int> tile(static_cast<std::size_t>(batch.count) * per_image);
    for (std::size_t i = 0; i < tile.size(); ++i) {
        tile[i] = static_cast<int>(i % static_cast<std::size_t>(per_image));
    }
    x = ad::add(x, ad::gather_rows(pos, tile));
    const auto offsets = segment_offsets(batch.count, per_image);
    for (const auto& block : blocks_) {
        x = block(x, offsets);
    }
    return x;
}

ad::Var ImageEncoder::pooled(const ImageBatch& batch) const {
    if (batch.grid_h != config_.grid() || batch.grid_w != config_.grid()) {
        throw ShapeError("image resolution must be " + std::to_string(config_.image_size) + "x" +
                         std::to_string(config_.image_size));
    }
    return ad::segment_mean(norm_(trunk(batch)), segment_offsets(batch.count, batch.grid_h * batch.grid_w));
}

EmbeddingBatch ImageEncoder::encode(const ImageBatch& batch) const {
    return {ad::l2_normalize_rows(proj_(pooled(batch)))};
}

FeatureMap ImageEncoder::features(const ImageBatch& batch) const {
    return {trunk(batch), batch.grid_h, batch.grid_w, batch.count};
}

void ImageEncoder::collect(const std::string& prefix, nn::ParameterList& out) const {
    patch_embed_.collect(prefix + ".patch_embed", out);
    out.push_back({prefix + ".pos_embed", pos_embed_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect(prefix + ".blocks." + std::to_string(i), out);
    }
    norm_.collect(prefix + ".norm", out);
    proj_.collect(prefix + ".proj", out);
}

// ---- text encoder --------------------------------------------------------

TextEncoder::TextEncoder(const EncoderConfig& config, nn::Rng& rng)
    : config_(config),
      token_embed_(nn::make_parameter(config.vocab_size, config.embed_dim, 0.02, rng)),
      pos_embed_(nn::make_parameter(config.max_text_len, config.embed_dim, 0.02, rng)),
      norm_(config.embed_dim),
      proj_(config.embed_dim, config.embed_dim, rng) {
    if (config.vocab_size < 2) {
        throw ConfigError("vocab_size must cover <pad> and <unk>");
    }
    for (int i = 0; i < config.text_depth; ++i) {
        blocks_.emplace_back(config.embed_dim, config.heads, config.mlp_ratio, rng);
    }
}

EmbeddingBatch TextEncoder::encode(std::span<const std::vector<int>> ids) const {
    if (ids.empty()) {
        throw ShapeError("empty text batch");
    }
    std::vector<int> tokens;
    std::vector<int> positions;
    std::vector<int> offsets = {0};
    for (const auto& seq : ids) {
        int len = 0;
        for (const int id : seq) {
            if (id == Tokenizer::kPad) {
                continue;
            }
            if (len == config_.max_text_len) {
                break;
            }
            if (id < 0 || id >= config_.vocab_size) {
                throw ShapeError("token id out of vocabulary range");
            }
            tokens.push_back(id);
            positions.push_back(len++);
        }
        if (len == 0) {
            tokens.push_back(Tokenizer::kUnk);
            positions.push_back(0);
            len = 1;
        }
        offsets.push_back(offsets.back() + len);
    }
    ad::Var x = ad::add(ad::gather_rows(token_embed_, tokens), ad::gather_rows(pos_embed_, positions));
    for (const auto& block : blocks_) {
        x = block(x, offsets);
    }
    return {ad::l2_normalize_rows(proj_(ad::segment_mean(norm_(x), offsets)))};
}

void TextEncoder::collect(const std::string& prefix, nn::ParameterList& out) const {
    out.push_back({prefix + ".token_embed", token_embed_});
    out.push_back({prefix + ".pos_embed", pos_embed_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].collect(prefix + ".blocks." + std::to_string(i), out);
    }
    norm_.collect(prefix + ".norm", out);
    proj_.collect(prefix + ".proj", out);
}

// ---- dual encoder --------------------------------------------------------

namespace {
EncoderConfig with_vocab(EncoderConfig c, const Tokenizer& t) {
    c.vocab_size = t.vocab_size();
    c.validate();
    return c;
}
}  // namespace

DualEncoder::DualEncoder(EncoderConfig config, Tokenizer tokenizer, nn::Rng& rng)
    : config_(with_vocab(config, tokenizer)),
      tokenizer_(std::move(tokenizer)),
      image_(config_, rng),
      text_(config_, rng) {}

EmbeddingBatch DualEncoder::encode_texts(std::span<const std::string> texts) const {
    std::vector<std::vector<int>> ids;
    ids.reserve(texts.size());
    for (const auto& t : texts) {
        ids.push_back(tokenizer_.encode(t, config_.max_text_len));
    }
    return text_.encode(ids);
}

nn::ParameterList DualEncoder::parameters() const {
    nn::ParameterList out;
    image_.collect("image", out);
    text_.collect("text", out);
    return out;
}

}  // namespace vlptl
