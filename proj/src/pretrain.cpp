#include "vlptl/pretrain.hpp"

#include "vlptl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vlptl::pretrain {

ShuffledBatch permute_features(const EmbeddingBatch& m, std::vector<int> perm) {
    if (static_cast<Eigen::Index>(perm.size()) != m.size()) {
        throw BatchError("permutation length does not match the batch");
    }
    std::vector<int> check = perm;
    std::sort(check.begin(), check.end());
    for (std::size_t i = 0; i < check.size(); ++i) {
        if (check[i] != static_cast<int>(i)) {
            throw BatchError("not a permutation");
        }
    }
    ad::Var shuffled = ad::gather_rows(m.matrix, perm);
    return {std::move(shuffled), std::move(perm)};
}

ShuffledBatch shuffle_features(const EmbeddingBatch& m, Rng& rng) {
    if (m.size() < 2) {
        throw BatchError("shuffle needs at least two samples");
    }
    std::vector<int> perm(static_cast<std::size_t>(m.size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    return permute_features(m, std::move(perm));
}

std::vector<int> srj_targets(const Taxonomy& taxonomy, std::span<const std::string> categories,
                             std::span<const int> perm) {
    if (perm.size() != categories.size()) {
        throw BatchError("permutation length does not match the category list");
    }
    std::vector<int> out(categories.size());
    for (std::size_t i = 0; i < categories.size(); ++i) {
        out[i] = static_cast<int>(taxonomy.relate(categories[i], categories[static_cast<std::size_t>(perm[i])]));
    }
    return out;
}

SRJHead::SRJHead(int embed_dim, nn::Rng& rng) : hidden(2 * embed_dim, 2 * embed_dim, rng), output(2 * embed_dim, kRelationCount, rng) {}

ad::Var SRJHead::logits(const ad::Var& first, const ad::Var& second) const {
    return output(ad::gelu(hidden(ad::hconcat(first, second))));
}

void SRJHead::collect(const std::string& prefix, nn::ParameterList& out) const {
    hidden.collect(prefix + ".hidden", out);
    output.collect(prefix + ".output", out);
}

ad::Var srj_subtask_loss(const EmbeddingBatch& a, const ShuffledBatch& b, std::span<const int> targets,
                         const SRJHead& head) {
    if (a.size() != b.matrix.rows() || a.size() != static_cast<Eigen::Index>(targets.size())) {
        throw ShapeError("SRJ subtask inputs disagree in batch size");
    }
    if (a.matrix.cols() * 2 != head.hidden.in_features() || b.matrix.cols() != a.matrix.cols()) {
        throw ShapeError("SRJ head width does not match the embedding dimension");
    }
    return ad::cross_entropy(head.logits(a.matrix, b.matrix), targets);
}

SrjResult srj_loss(const EmbeddingBatch& images, const EmbeddingBatch& texts, const Taxonomy& taxonomy,
                   std::span<const std::string> categories, const SRJHead& head, std::vector<int> image_perm,
                   std::vector<int> text_perm) {
    if (images.size() != texts.size() || images.size() != static_cast<Eigen::Index>(categories.size())) {
        throw BatchError("SRJ batch components disagree in size");
    }
    const ShuffledBatch v_shuffled = permute_features(images, std::move(image_perm));
    const ShuffledBatch l_shuffled = permute_features(texts, std::move(text_perm));
    const auto v_targets = srj_targets(taxonomy, categories, v_shuffled.perm);
    const auto l_targets = srj_targets(taxonomy, categories, l_shuffled.perm);
    SrjResult r;
    r.subtasks[kImageText] = srj_subtask_loss(images, l_shuffled, l_targets, head);
    r.subtasks[kTextImage] = srj_subtask_loss(texts, v_shuffled, v_targets, head);
    r.subtasks[kImageImage] = srj_subtask_loss(images, v_shuffled, v_targets, head);
    r.subtasks[kTextText] = srj_subtask_loss(texts, l_shuffled, l_targets, head);
    const std::array<double, 4> quarter = {0.25, 0.25, 0.25, 0.25};
    r.loss = ad::weighted_sum(r.subtasks, quarter);
    r.image_perm = v_shuffled.perm;
    r.text_perm = l_shuffled.perm;
    return r;
}

SrjResult srj_loss(const EmbeddingBatch& images, const EmbeddingBatch& texts, const Taxonomy& taxonomy,
                   std::span<const std::string> categories, const SRJHead& head, Rng& rng) {
    if (images.size() < 2) {
        throw BatchError("SRJ needs at least two samples");
    }
    const auto n = static_cast<std::size_t>(images.size());
    std::vector<int> image_perm(n);
    std::vector<int> text_perm(n);
    std::iota(image_perm.begin(), image_perm.end(), 0);
    std::iota(text_perm.begin(), text_perm.end(), 0);
    std::shuffle(image_perm.begin(), image_perm.end(), rng);
    std::shuffle(text_perm.begin(), text_perm.end(), rng);
    return srj_loss(images, texts, taxonomy, categories, head, std::move(image_perm), std::move(text_perm));
}

DncSplit dnc_filter(const Taxonomy& taxonomy, std::span<const std::string> categories,
                    const std::string& component_type) {
    DncSplit split;
    if (taxonomy.component_type(component_type).is_external_interference) {
        split.skipped = true;
        return split;
    }
    for (std::size_t i = 0; i < categories.size(); ++i) {
        const Category& c = taxonomy.category(categories[i]);
        if (c.component_type != component_type) {
            continue;
        }
        (c.status == Status::defect ? split.defect_rows : split.normal_rows).push_back(static_cast<int>(i));
    }
    split.skipped = split.defect_rows.empty() || split.normal_rows.empty();
    return split;
}

ad::Matrix dnc_target(int k, int q) {
    if (k < 1 || q < 1) {
        throw std::invalid_argument("dnc_target requires k >= 1 and q >= 1");
    }
    ad::Matrix z = ad::Matrix::Zero(k + q, k + q);
    z.topLeftCorner(k, k).setOnes();
    z.bottomRightCorner(q, q).setOnes();
    return z;
}

ad::Var dnc_component_loss(const ad::Var& defect_rows, const ad::Var& normal_rows, const ad::Var& scale) {
    if (defect_rows.rows() < 1 || normal_rows.rows() < 1) {
        throw std::invalid_argument("dnc_component_loss requires k >= 1 and q >= 1");
    }
    const std::array<ad::Var, 2> parts = {defect_rows, normal_rows};
    const ad::Var joint = ad::vconcat(parts);
    const ad::Var similarity = ad::matmul_bt(joint, joint);
    return ad::bce_with_logits(ad::scale_by(similarity, scale),
                               dnc_target(static_cast<int>(defect_rows.rows()), static_cast<int>(normal_rows.rows())));
}

DncResult dnc_loss(const Taxonomy& taxonomy, std::span<const std::string> categories, const EmbeddingBatch& images,
                   const ad::Var& scale) {
    if (images.size() != static_cast<Eigen::Index>(categories.size())) {
        throw BatchError("DNC batch components disagree in size");
    }
    std::vector<ad::Var> terms;
    std::vector<double> counts;
    std::vector<std::string> names;
    for (const auto& type : taxonomy.component_types()) {
        const DncSplit split = dnc_filter(taxonomy, categories, type.name);
        if (split.skipped) {
            continue;
        }
        terms.push_back(dnc_component_loss(ad::gather_rows(images.matrix, split.defect_rows),
                                           ad::gather_rows(images.matrix, split.normal_rows), scale));
        counts.push_back(static_cast<double>(split.defect_rows.size() + split.normal_rows.size()));
        names.push_back(type.name);
    }
    DncResult r;
    if (terms.empty()) {
        r.loss = ad::Var::scalar(0.0);
        return r;
    }
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    std::vector<double> alpha;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        alpha.push_back(counts[i] / total);
        r.alpha[names[i]] = alpha.back();
    }
    r.loss = ad::weighted_sum(terms, alpha);
    r.any_eligible = true;
    return r;
}

ad::Var itc_loss(const EmbeddingBatch& images, const EmbeddingBatch& texts, const ad::Var& inverse_temperature) {
    if (images.size() != texts.size() || images.size() < 1) {
        throw BatchError("ITC needs equally sized non-empty batches");
    }
    std::vector<int> diag(static_cast<std::size_t>(images.size()));
    std::iota(diag.begin(), diag.end(), 0);
    const ad::Var i2t = ad::scale_by(ad::matmul_bt(images.matrix, texts.matrix), inverse_temperature);
    const ad::Var t2i = ad::scale_by(ad::matmul_bt(texts.matrix, images.matrix), inverse_temperature);
    const std::array<ad::Var, 2> both = {ad::cross_entropy(i2t, diag), ad::cross_entropy(t2i, diag)};
    const std::array<double, 2> half = {0.5, 0.5};
    return ad::weighted_sum(both, half);
}

ad::Var itc_loss(const EmbeddingBatch& images, const EmbeddingBatch& texts, double temperature) {
    if (!(temperature > 0.0)) {
        throw ConfigError("ITC temperature must be positive");
    }
    return itc_loss(images, texts, ad::Var::scalar(1.0 / temperature));
}

VisionLanguageModel::VisionLanguageModel(EncoderConfig config, Tokenizer tokenizer, std::uint64_t seed)
    : encoder_([&] {
          nn::Rng rng(seed);
          return DualEncoder(config, std::move(tokenizer), rng);
      }()),
      logit_scale_(ad::Var::scalar(std::log(1.0 / kInitTemperature), true)),
      dnc_log_scale_(ad::Var::scalar(std::log(kInitDncScale), true)) {
    nn::Rng rng(seed ^ 0x5a5a5a5aULL);
    srj_ = SRJHead(encoder_.config().embed_dim, rng);
}

double VisionLanguageModel::temperature() const { return std::exp(-logit_scale_.item()); }

double VisionLanguageModel::dnc_scale() const { return std::exp(dnc_log_scale_.item()); }

void VisionLanguageModel::clamp_parameters() {
    ad::Var ls = logit_scale_;
    ls.mutable_value()(0, 0) = std::clamp(ls.item(), std::log(1.0 / kMaxTemperature), std::log(1.0 / kMinTemperature));
}

nn::ParameterList VisionLanguageModel::parameters() const {
    nn::ParameterList out = encoder_.parameters();
    srj_.collect("srj", out);
    out.push_back({"itc.logit_scale", logit_scale_});
    out.push_back({"dnc.log_scale", dnc_log_scale_});
    return out;
}

TotalLoss total_loss(const EmbeddingBatch& images, const EmbeddingBatch& texts, const Taxonomy& taxonomy,
                     std::span<const std::string> categories, const VisionLanguageModel& model,
                     const LossWeights& weights, Rng& rng) {
    for (const double w : {weights.itc, weights.srj, weights.dnc}) {
        if (!std::isfinite(w) || w < 0) {
            throw ConfigError("loss weights must be finite and nonnegative");
        }
    }
    const ad::Var itc = itc_loss(images, texts, ad::exp(model.logit_scale()));
    const SrjResult srj = srj_loss(images, texts, taxonomy, categories, model.srj_head(), rng);
    const DncResult dnc = dnc_loss(taxonomy, categories, images, ad::exp(model.dnc_log_scale()));
    const std::array<ad::Var, 3> terms = {itc, srj.loss, dnc.loss};
    const std::array<double, 3> w = {weights.itc, weights.srj, weights.dnc};
    TotalLoss out;
    out.total = ad::weighted_sum(terms, w);
    out.breakdown = {itc.item(), srj.loss.item(), dnc.loss.item(), out.total.item(), dnc.any_eligible};
    return out;
}

}  // namespace vlptl::pretrain
