#include "gradcheck.hpp"

#include "vlptl/encoders.hpp"
#include "vlptl/errors.hpp"
#include "vlptl/pretrain.hpp"

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

using namespace vlptl;
using vlptl::ad::Var;
using vlptl::testing::gradient_error;

namespace {

EncoderConfig tiny_config(int vocab) {
    EncoderConfig c;
    c.embed_dim = 8;
    c.image_size = 32;
    c.patch_size = 16;
    c.depth = 1;
    c.heads = 2;
    c.text_depth = 1;
    c.mlp_ratio = 2;
    c.vocab_size = vocab;
    c.max_text_len = 6;
    return c;
}

Tokenizer tiny_tokenizer() {
    const std::vector<std::string> corpus = {"a damaged grading ring", "a normal insulator string", "bird nest"};
    return Tokenizer::build(corpus);
}

Image noise_image(int h, int w, std::mt19937_64& rng) {
    Image img(h, w, CV_8UC3);
    std::uniform_int_distribution<int> px(0, 255);
    for (int i = 0; i < h * w * 3; ++i) {
        img.data[i] = static_cast<unsigned char>(px(rng));
    }
    return img;
}

}  // namespace

TEST(Tokenizer, RoundTripAndPadding) {
    const Tokenizer tok = tiny_tokenizer();
    const auto ids = tok.encode("A damaged grading ring", 6);
    ASSERT_EQ(ids.size(), 6u);
    EXPECT_EQ(ids[4], Tokenizer::kPad);
    EXPECT_EQ(tok.decode(ids), "a damaged grading ring");
    EXPECT_EQ(tok.encode("zeppelin", 2)[0], Tokenizer::kUnk);
    for (int i = 0; i < tok.vocab_size(); ++i) {
        EXPECT_EQ(tok.encode(tok.tokens()[static_cast<std::size_t>(i)], 1)[0], i < 2 ? Tokenizer::kUnk : i);
    }
}

TEST(EncoderConfig, Validation) {
    EncoderConfig c = tiny_config(10);
    EXPECT_NO_THROW(c.validate());
    c.embed_dim = 4;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config(10);
    c.image_size = 40;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny_config(10);
    c.depth = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ImageEncoder, UnitRowsAndDeterminism) {
    const Tokenizer tok = tiny_tokenizer();
    nn::Rng rng(1);
    const DualEncoder enc(tiny_config(tok.vocab_size()), tok, rng);
    std::mt19937_64 px(2);
    const Image img = noise_image(32, 32, px);
    const std::vector<Image> one = {img};
    const auto e1 = enc.encode_images(make_image_batch(one, 16));
    ASSERT_EQ(e1.matrix.rows(), 1);
    EXPECT_NEAR(e1.matrix.value().row(0).norm(), 1.0, 1e-5);

    const std::vector<Image> twice = {img, img};
    const auto e2 = enc.encode_images(make_image_batch(twice, 16));
    EXPECT_EQ(e2.matrix.value().row(0), e2.matrix.value().row(1));
    EXPECT_EQ(e2.matrix.value().row(0), e1.matrix.value().row(0));
}

TEST(ImageEncoder, WrongResolutionThrows) {
    const Tokenizer tok = tiny_tokenizer();
    nn::Rng rng(1);
    const DualEncoder enc(tiny_config(tok.vocab_size()), tok, rng);
    std::mt19937_64 px(2);
    const std::vector<Image> odd = {noise_image(40, 40, px)};
    EXPECT_THROW(make_image_batch(odd, 16), ShapeError);
    const std::vector<Image> big = {noise_image(64, 64, px)};
    EXPECT_THROW((void)enc.encode_images(make_image_batch(big, 16)), ShapeError);
}

TEST(TextEncoder, UnitRowsAndDeterminism) {
    const Tokenizer tok = tiny_tokenizer();
    nn::Rng rng(1);
    const DualEncoder enc(tiny_config(tok.vocab_size()), tok, rng);
    const std::vector<std::string> texts = {"bird nest", "bird nest", "a normal insulator string"};
    const auto e = enc.encode_texts(texts);
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(e.matrix.value().row(i).norm(), 1.0, 1e-5);
    }
    EXPECT_EQ(e.matrix.value().row(0), e.matrix.value().row(1));
    EXPECT_NE(e.matrix.value().row(0), e.matrix.value().row(2));
}

TEST(Encoders, GradientOfScalarProbe) {
    const Tokenizer tok = tiny_tokenizer();
    nn::Rng rng(3);
    const DualEncoder enc(tiny_config(tok.vocab_size()), tok, rng);
    std::mt19937_64 px(4);
    const std::vector<Image> imgs = {noise_image(32, 32, px), noise_image(32, 32, px)};
    const ImageBatch batch = make_image_batch(imgs, 16);
    const std::vector<std::string> texts = {"a damaged grading ring", "bird nest"};
    const ad::Matrix probe = vlptl::testing::random_matrix(2, 8, px);

    std::vector<Var> leaves;
    for (const auto& p : enc.parameters()) {
        leaves.push_back(p.var);
    }
    const auto f = [&](const std::vector<Var>&) {
        const Var v = enc.encode_images(batch).matrix;
        const Var l = enc.encode_texts(texts).matrix;
        return ad::sum(ad::mul(ad::add(v, ad::scale(l, 0.5)), Var(probe)));
    };
    EXPECT_LT(gradient_error(f, leaves), 1e-4);
}

TEST(Backbone, FeatureGridShape) {
    EncoderConfig c = tiny_config(4);
    c.image_size = 224;
    nn::Rng rng(1);
    const ImageEncoder enc(c, rng);
    const std::vector<Image> one = {Image(224, 224, CV_8UC3, cv::Scalar(200, 200, 200))};
    const FeatureMap fm = enc.features(make_image_batch(one, 16));
    EXPECT_EQ(fm.grid_h, 14);
    EXPECT_EQ(fm.grid_w, 14);
    EXPECT_EQ(fm.tensor.rows(), 196);
    EXPECT_EQ(fm.tensor.cols(), 8);

    // Higher resolution through interpolated positions.
    const std::vector<Image> large = {Image(320, 256, CV_8UC3, cv::Scalar(0, 0, 0))};
    const FeatureMap big = enc.features(make_image_batch(large, 16));
    EXPECT_EQ(big.grid_h, 20);
    EXPECT_EQ(big.grid_w, 16);
    EXPECT_TRUE(big.tensor.value().allFinite());
}

TEST(Backbone, ShiftEquivariantWithoutPositions) {
    // With the position table zeroed the trunk is permutation equivariant, so
    // moving an object by one patch on a plain background moves its features.
    EncoderConfig c = tiny_config(4);
    c.image_size = 64;
    nn::Rng rng(5);
    ImageEncoder enc(c, rng);
    Var pos = enc.position_embedding();
    pos.mutable_value().setZero();
    Image a(64, 64, CV_8UC3, cv::Scalar(180, 180, 180));
    Image b = a.clone();
    cv::circle(a, {24, 24}, 6, cv::Scalar(20, 40, 60), -1);
    cv::circle(b, {40, 24}, 6, cv::Scalar(20, 40, 60), -1);
    const std::vector<Image> pair = {a, b};
    const FeatureMap fm = enc.features(make_image_batch(pair, 16));
    const ad::Matrix& f = fm.tensor.value();
    const int cells = fm.grid_h * fm.grid_w;
    for (int y = 0; y < fm.grid_h; ++y) {
        for (int x = 0; x + 1 < fm.grid_w; ++x) {
            const int ra = y * fm.grid_w + x;
            const int rb = cells + y * fm.grid_w + x + 1;
            EXPECT_LT((f.row(ra) - f.row(rb)).norm(), 1e-9) << y << "," << x;
        }
    }
}

TEST(Encoders, EveryParameterReceivesGradient) {
    const Tokenizer tok = tiny_tokenizer();
    EncoderConfig c = tiny_config(tok.vocab_size());
    pretrain::VisionLanguageModel model(c, tok, 7);
    const Taxonomy t = Taxonomy::desk_default();
    const std::vector<std::string> cats = {"grading_ring_damage", "normal_grading_ring", "bird_nest", "grading_ring_damage"};
    const std::vector<std::string> texts = {"a damaged grading ring", "a normal grading ring", "bird nest", "grading ring"};
    std::mt19937_64 px(8);
    std::vector<Image> imgs;
    for (int i = 0; i < 4; ++i) {
        imgs.push_back(noise_image(32, 32, px));
    }
    const auto params = model.parameters();
    nn::zero_grad(params);
    pretrain::Rng rng(1);
    const auto v = model.encoder().encode_images(make_image_batch(imgs, 16));
    const auto l = model.encoder().encode_texts(texts);
    const auto loss = pretrain::total_loss(v, l, t, cats, model, {}, rng);
    ad::backward(loss.total);
    for (const auto& p : params) {
        EXPECT_GT(p.var.grad().size() ? p.var.grad().norm() : 0.0, 0.0) << p.name;
    }
}
