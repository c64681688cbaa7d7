#include "vlptl/pretrain_loop.hpp"

#include "vlptl/checkpoint.hpp"
#include "vlptl/errors.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace vlptl::pretrain {

namespace {

constexpr const char* kSessionKind = "vlptl-pretrain-session";

std::vector<std::string> pick(const std::vector<std::string>& v, std::span<const int> rows) {
    std::vector<std::string> out;
    out.reserve(rows.size());
    for (const int r : rows) {
        out.push_back(v[static_cast<std::size_t>(r)]);
    }
    return out;
}

}  // namespace

PairDataset PairDataset::subset(std::span<const int> rows) const {
    PairDataset out;
    for (const int r : rows) {
        const auto i = static_cast<std::size_t>(r);
        out.images.push_back(images.at(i));
        out.texts.push_back(texts.at(i));
        out.categories.push_back(categories.at(i));
    }
    return out;
}

PairDataset load_pair_dataset(const Manifest& manifest, const std::filesystem::path& manifest_path, int image_size) {
    PairDataset data;
    for (const auto& s : manifest.samples) {
        Image img = read_png(resolve_image(manifest_path, s.image_ref));
        if (img.rows != image_size || img.cols != image_size) {
            img = resize_image(img, image_size, image_size);
        }
        data.images.push_back(std::move(img));
        data.texts.push_back(s.alt_text);
        data.categories.push_back(s.category);
    }
    return data;
}

nlohmann::json PretrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"cosine_schedule", cosine_schedule},
            {"warmup_fraction", warmup_fraction},
            {"seed", seed},
            {"lambda_itc", weights.itc},
            {"lambda_srj", weights.srj},
            {"lambda_dnc", weights.dnc}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
    PretrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.cosine_schedule = j.value("cosine_schedule", c.cosine_schedule);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.seed = j.value("seed", c.seed);
    c.weights.itc = j.value("lambda_itc", c.weights.itc);
    c.weights.srj = j.value("lambda_srj", c.weights.srj);
    c.weights.dnc = j.value("lambda_dnc", c.weights.dnc);
    return c;
}

std::vector<std::vector<int>> make_batches(std::span<const int> order, int batch_size) {
    if (batch_size < 2) {
        throw ConfigError("batch size must be at least 2");
    }
    std::vector<std::vector<int>> batches;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

ImageBatch image_batch(const PairDataset& data, std::span<const int> rows, int patch_size) {
    std::vector<Image> imgs;
    imgs.reserve(rows.size());
    for (const int r : rows) {
        imgs.push_back(data.images.at(static_cast<std::size_t>(r)));
    }
    return make_image_batch(imgs, patch_size);
}

PretrainSession::PretrainSession(VisionLanguageModel model, Taxonomy taxonomy, PretrainConfig config)
    : model_(std::move(model)), taxonomy_(std::move(taxonomy)), config_(config) {
    reconfigure(config);
}

void PretrainSession::reconfigure(PretrainConfig config) {
    if (config.epochs < 0 || !(config.lr >= 0.0)) {
        throw ConfigError("pretraining epochs and learning rate must be nonnegative");
    }
    std::map<std::string, ad::Matrix> state;
    long long steps = 0;
    if (optimizer_) {
        optimizer_->export_state(state);
        steps = optimizer_->steps();
    }
    config_ = config;
    optimizer_ = std::make_unique<optim::Adam>(
        std::vector<optim::ParamGroup>{{model_.parameters(), config_.lr, config_.weight_decay}});
    if (!state.empty()) {
        optimizer_->import_state(state, steps);
    }
}

std::vector<EpochLoss> PretrainSession::train(const PairDataset& data, std::ostream* log) {
    if (data.size() < 2) {
        throw BatchError("pretraining needs at least two samples");
    }
    const auto& enc = model_.encoder();
    Rng rng(config_.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(epochs_done_ + 1));
    std::vector<EpochLoss> history;
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    const auto steps_per_epoch = static_cast<long long>(make_batches(order, config_.batch_size).size());
    const long long total_steps = steps_per_epoch * config_.epochs;
    const auto warmup = static_cast<long long>(std::llround(std::clamp(config_.warmup_fraction, 0.0, 1.0) * total_steps));
    long long step = 0;
    for (int e = 0; e < config_.epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        EpochLoss epoch;
        epoch.epoch = epochs_done_ + 1;
        for (const auto& rows : make_batches(order, config_.batch_size)) {
            const auto categories = pick(data.categories, rows);
            const auto texts = pick(data.texts, rows);
            optimizer_->zero_grad();
            const EmbeddingBatch v = enc.encode_images(image_batch(data, rows, enc.config().patch_size));
            const EmbeddingBatch l = enc.encode_texts(texts);
            const TotalLoss loss = total_loss(v, l, taxonomy_, categories, model_, config_.weights, rng);
            const LossBreakdown& b = loss.breakdown;
            if (!std::isfinite(b.total)) {
                nlohmann::json dump = {{"epoch", epoch.epoch}, {"step", epoch.steps}, {"batch_indices", rows},
                                       {"itc", b.itc}, {"srj", b.srj}, {"dnc", b.dnc}};
                throw NumericError("non-finite pretraining loss", dump.dump());
            }
            ad::backward(loss.total);
            optimizer_->set_lr_scale(config_.cosine_schedule ? optim::warmup_cosine(step, total_steps, warmup) : 1.0);
            ++step;
            optimizer_->step();
            model_.clamp_parameters();
            epoch.mean.itc += b.itc;
            epoch.mean.srj += b.srj;
            epoch.mean.dnc += b.dnc;
            epoch.mean.total += b.total;
            if (log != nullptr) {
                *log << nlohmann::json{{"epoch", epoch.epoch}, {"step", epoch.steps}, {"L_itc", b.itc},
                                       {"L_srj", b.srj}, {"L_dnc", b.dnc}, {"total", b.total}}
                            .dump()
                     << '\n';
            }
            ++epoch.steps;
        }
        const double k = std::max(1, epoch.steps);
        epoch.mean.itc /= k;
        epoch.mean.srj /= k;
        epoch.mean.dnc /= k;
        epoch.mean.total /= k;
        history.push_back(epoch);
        ++epochs_done_;
    }
    return history;
}

void PretrainSession::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
    Checkpoint ckpt;
    const auto& enc = model_.encoder();
    ckpt.header = {{"kind", kSessionKind},
                   {"encoder", enc.config().to_json()},
                   {"tokens", enc.tokenizer().tokens()},
                   {"taxonomy", taxonomy_.to_json()},
                   {"pretrain", config_.to_json()},
                   {"epochs_done", epochs_done_},
                   {"temperature", model_.temperature()},
                   {"dnc_scale", model_.dnc_scale()},
                   {"optimizer_steps", optimizer_->steps()},
                   {"extra", extra}};
    store_parameters(model_.parameters(), ckpt);
    optimizer_->export_state(ckpt.arrays);
    save_checkpoint(path, ckpt);
}

nlohmann::json PretrainSession::read_header(const std::filesystem::path& path) {
    return load_checkpoint(path).header;
}

PretrainSession PretrainSession::load(const std::filesystem::path& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.header.value("kind", std::string()) != kSessionKind) {
        throw CheckpointError("not a pretraining checkpoint: " + path.string());
    }
    EncoderConfig cfg = EncoderConfig::from_json(ckpt.header.at("encoder"));
    Tokenizer tok = Tokenizer::from_tokens(ckpt.header.at("tokens").get<std::vector<std::string>>());
    VisionLanguageModel model(cfg, std::move(tok), 0);
    restore_parameters(ckpt, model.parameters());
    PretrainSession session(std::move(model), Taxonomy::from_json(ckpt.header.at("taxonomy")),
                            PretrainConfig::from_json(ckpt.header.at("pretrain")));
    session.optimizer_->import_state(ckpt.arrays, ckpt.header.at("optimizer_steps").get<long long>());
    session.epochs_done_ = ckpt.header.at("epochs_done").get<int>();
    return session;
}

LossBreakdown evaluate_losses(const VisionLanguageModel& model, const Taxonomy& taxonomy, const PairDataset& data,
                              int batch_size, const LossWeights& weights, std::uint64_t seed) {
    ad::NoGradGuard no_grad;
    Rng rng(seed);
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    LossBreakdown mean;
    int steps = 0;
    const auto& enc = model.encoder();
    for (const auto& rows : make_batches(order, batch_size)) {
        const auto categories = pick(data.categories, rows);
        const auto texts = pick(data.texts, rows);
        const EmbeddingBatch v = enc.encode_images(image_batch(data, rows, enc.config().patch_size));
        const EmbeddingBatch l = enc.encode_texts(texts);
        const LossBreakdown b = total_loss(v, l, taxonomy, categories, model, weights, rng).breakdown;
        mean.itc += b.itc;
        mean.srj += b.srj;
        mean.dnc += b.dnc;
        mean.total += b.total;
        mean.dnc_eligible = mean.dnc_eligible || b.dnc_eligible;
        ++steps;
    }
    const double k = std::max(1, steps);
    mean.itc /= k;
    mean.srj /= k;
    mean.dnc /= k;
    mean.total /= k;
    return mean;
}

ad::Matrix embed_images(const ImageEncoder& encoder, const std::vector<Image>& images, int chunk) {
    ad::NoGradGuard no_grad;
    ad::Matrix out(static_cast<Eigen::Index>(images.size()), encoder.config().embed_dim);
    for (std::size_t i = 0; i < images.size(); i += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(images.size(), i + static_cast<std::size_t>(chunk));
        const std::span<const Image> part(images.data() + i, end - i);
        out.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(end - i)) =
            encoder.encode(make_image_batch(part, encoder.config().patch_size)).matrix.value();
    }
    return out;
}

ad::Matrix pooled_features(const ImageEncoder& encoder, const std::vector<Image>& images, int chunk) {
    ad::NoGradGuard no_grad;
    ad::Matrix out(static_cast<Eigen::Index>(images.size()), encoder.config().embed_dim);
    for (std::size_t i = 0; i < images.size(); i += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(images.size(), i + static_cast<std::size_t>(chunk));
        const std::span<const Image> part(images.data() + i, end - i);
        out.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(end - i)) =
            encoder.pooled(make_image_batch(part, encoder.config().patch_size)).value();
    }
    return out;
}

ad::Matrix embed_texts(const DualEncoder& encoder, std::span<const std::string> texts, int chunk) {
    ad::NoGradGuard no_grad;
    ad::Matrix out(static_cast<Eigen::Index>(texts.size()), encoder.config().embed_dim);
    for (std::size_t i = 0; i < texts.size(); i += static_cast<std::size_t>(chunk)) {
        const std::size_t end = std::min(texts.size(), i + static_cast<std::size_t>(chunk));
        out.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(end - i)) =
            encoder.encode_texts(texts.subspan(i, end - i)).matrix.value();
    }
    return out;
}

double retrieval_top1(const DualEncoder& encoder, const PairDataset& data) {
    if (data.size() == 0) {
        throw EvaluationError("retrieval needs at least one pair");
    }
    const ad::Matrix v = embed_images(encoder.image(), data.images);
    const ad::Matrix l = embed_texts(encoder, data.texts);
    const ad::Matrix s = v * l.transpose();
    int hits = 0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        Eigen::Index best = 0;
        s.row(i).maxCoeff(&best);
        hits += data.categories[static_cast<std::size_t>(best)] == data.categories[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(hits) / static_cast<double>(s.rows());
}

double linear_probe_accuracy(const ad::Matrix& train_features, std::span<const int> train_labels,
                             const ad::Matrix& test_features, std::span<const int> test_labels, int classes,
                             double ridge) {
    if (train_features.rows() != static_cast<Eigen::Index>(train_labels.size()) ||
        test_features.rows() != static_cast<Eigen::Index>(test_labels.size()) ||
        train_features.cols() != test_features.cols()) {
        throw ShapeError("probe features and labels disagree");
    }
    if (test_labels.empty()) {
        throw EvaluationError("probe needs test samples");
    }
    // Standardise with train statistics, append a bias column.
    const Eigen::RowVectorXd mu = train_features.colwise().mean();
    ad::Matrix centered = train_features.rowwise() - mu;
    Eigen::RowVectorXd sd = (centered.colwise().squaredNorm() / std::max<double>(1.0, static_cast<double>(centered.rows()))).cwiseSqrt();
    sd = sd.cwiseMax(1e-8);
    auto design = [&](const ad::Matrix& f) {
        ad::Matrix x(f.rows(), f.cols() + 1);
        x.leftCols(f.cols()) = (f.rowwise() - mu).array().rowwise() / sd.array();
        x.col(f.cols()).setOnes();
        return x;
    };
    const ad::Matrix x = design(train_features);
    ad::Matrix y = ad::Matrix::Zero(x.rows(), classes);
    for (std::size_t i = 0; i < train_labels.size(); ++i) {
        y(static_cast<Eigen::Index>(i), train_labels[i]) = 1.0;
    }
    ad::Matrix gram = x.transpose() * x;
    gram.diagonal().array() += ridge * static_cast<double>(x.rows());
    const ad::Matrix w = gram.ldlt().solve(x.transpose() * y);
    const ad::Matrix scores = design(test_features) * w;
    int hits = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        scores.row(i).maxCoeff(&best);
        hits += static_cast<int>(best) == test_labels[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(hits) / static_cast<double>(scores.rows());
}

}  // namespace vlptl::pretrain
