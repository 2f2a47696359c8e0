#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "helpers.hpp"
#include "melreport/checkpoint.hpp"
#include "melreport/model.hpp"

using namespace melreport;

namespace {

ModelConfig small_config(std::size_t vocab = 40)
{
    ModelConfig c = ModelConfig::desk(12, vocab);
    c.perceiver.latent_dim = 16;
    c.perceiver.n_latents_total = 5;
    c.perceiver.contrastive_dim = 8;
    c.decoder.model_dim = 16;
    c.decoder.image_dim = 16;
    c.decoder.contrastive_dim = 8;
    c.decoder.max_seq_len = 16;
    return c;
}

Tensor<float> rand_tiles(std::size_t m, std::size_t d, std::uint64_t seed)
{
    return testutil::randn(m, d, seed).cast<float>();
}

Tensor<float> permute_rows(const Tensor<float>& t, const std::vector<std::size_t>& perm)
{
    Tensor<float> out(t.rows, t.cols);
    for (std::size_t i = 0; i < perm.size(); ++i) std::copy(t.row(perm[i]).begin(), t.row(perm[i]).end(), out.row(i).begin());
    return out;
}

double embedding_diff(const CaseEmbedding<float>& a, const CaseEmbedding<float>& b)
{
    return std::max(testutil::max_abs_diff(a.image_embeddings, b.image_embeddings),
                    testutil::max_abs_diff(a.contrastive_raw, b.contrastive_raw));
}

}  // namespace

TEST_CASE("perceiver: any tile count, fixed output size")
{
    CocaModel<float> m(small_config(), 1);
    for (std::size_t n : {1u, 3u, 50u}) {
        const auto e = m.embed_image(rand_tiles(n, 12, n));
        CHECK(e.image_embeddings.rows == 4);
        CHECK(e.image_embeddings.cols == 16);
        CHECK(e.contrastive_raw.rows == 1);
    }
    CHECK_THROWS_AS(m.embed_image(Tensor<float>(0, 12)), ContractError);
    CHECK_THROWS_AS(m.embed_image(rand_tiles(3, 11, 1)), ShapeError);
}

TEST_CASE("perceiver: tile order and slide order do not matter")
{
    CocaModel<float> m(small_config(), 2);
    const Tensor<float> a = rand_tiles(7, 12, 3), b = rand_tiles(5, 12, 4);
    Tensor<float> ab(12, 12), ba(12, 12);
    std::copy(a.data.begin(), a.data.end(), ab.data.begin());
    std::copy(b.data.begin(), b.data.end(), ab.data.begin() + 7 * 12);
    std::copy(b.data.begin(), b.data.end(), ba.data.begin());
    std::copy(a.data.begin(), a.data.end(), ba.data.begin() + 5 * 12);
    CHECK(embedding_diff(m.embed_image(ab), m.embed_image(ba)) <= 1e-5);

    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(5);
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(embedding_diff(m.embed_image(ab), m.embed_image(permute_rows(ab, perm))) <= 1e-5);
}

TEST_CASE("tile subsampling")
{
    const auto all = subsample_indices(10, 100, 1);
    CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    CHECK(subsample_indices(100, 10, 3) == subsample_indices(100, 10, 3));
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto idx = subsample_indices(100, 10, s);
        CHECK(idx.size() == 10);
        CHECK(std::set<std::size_t>(idx.begin(), idx.end()).size() == 10);
        CHECK(*std::max_element(idx.begin(), idx.end()) < 100);
    }
    CHECK_THROWS_AS(subsample_indices(10, 0, 1), ConfigError);
}

TEST_CASE("decoder: shapes, causality, pooling")
{
    ModelConfig cfg = small_config();
    CocaModel<float> m(cfg, 3);
    const auto emb = m.embed_image(rand_tiles(6, 12, 7));
    const std::vector<std::int32_t> bos_eos{1, 2};
    const Tensor<float> l = m.logits(emb, bos_eos);
    CHECK(l.rows == 2);
    CHECK(l.cols == 40);
    for (float v : l.data) CHECK(std::isfinite(v));

    const std::vector<std::int32_t> a{1, 5, 9, 11, 30, 7}, b{1, 5, 9, 11, 31, 8};
    const Tensor<float> la = m.logits(emb, a), lb = m.logits(emb, b);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t v = 0; v < la.cols; ++v) CHECK(la(t, v) == lb(t, v));

    CHECK_THROWS_AS(m.logits(emb, std::vector<std::int32_t>{1, 40}), ContractError);
    CHECK_THROWS(m.logits(emb, std::vector<std::int32_t>(17, 5)));
}

TEST_CASE("attention pool: single position, padding extension, sensitivity")
{
    ModelConfig cfg = small_config();
    CocaModel<float> m(cfg, 4);
    const auto& dec = m.decoder();

    Graph<float> g(false);
    auto ctx = m.context(g);
    auto h1 = g.constant(rand_tiles(1, 16, 9));
    const auto pooled = dec.attention_pool(ctx, h1).value();
    auto v = layers::linear(ctx, "decoder.pool.attn.v", layers::layer_norm(ctx, "decoder.pool.ln", h1));
    const auto manual = layers::linear(ctx, "decoder.pool.proj", layers::linear(ctx, "decoder.pool.attn.o", v)).value();
    CHECK(testutil::max_abs_diff(pooled, manual) <= 1e-6);

    const std::vector<std::int32_t> toks{1, 6, 7, 8}, padded{1, 6, 7, 8, 0, 0};
    auto ha = dec.unimodal_forward(ctx, toks);
    auto hb = dec.unimodal_forward(ctx, padded);
    const std::vector<std::uint8_t> valid{1, 1, 1, 1, 0, 0};
    CHECK(testutil::max_abs_diff(dec.attention_pool(ctx, ha).value(), dec.attention_pool(ctx, hb, valid).value()) <= 1e-6);
    CHECK_THROWS_AS(dec.attention_pool(ctx, hb, std::vector<std::uint8_t>(6, 0)), ContractError);

    Tensor<float> h = rand_tiles(4, 16, 10);
    const auto base = dec.attention_pool(ctx, g.constant(h)).value();
    for (std::size_t t = 0; t < 4; ++t) {
        Tensor<float> p = h;
        p(t, 3) += 0.5f;
        CHECK(testutil::max_abs_diff(dec.attention_pool(ctx, g.constant(p)).value(), base) > 0.0);
    }
}

TEST_CASE("multimodal: zeroed cross-attention equals text-only path; image sensitivity")
{
    CocaModel<float> m(small_config(), 5);
    const std::vector<std::int32_t> toks{1, 4, 9, 3};
    const auto e1 = m.embed_image(rand_tiles(5, 12, 11)), e2 = m.embed_image(rand_tiles(5, 12, 12));
    CHECK(testutil::max_abs_diff(m.logits(e1, toks), m.logits(e2, toks)) > 0.0);

    for (std::size_t l = 0; l < 2; ++l) {
        const std::string b = "decoder.mm" + std::to_string(l) + ".cross.o.";
        auto& w = m.params().get(b + "weight").value;
        std::fill(w.data.begin(), w.data.end(), 0.0f);
        auto& bias = m.params().get(b + "bias").value;
        std::fill(bias.data.begin(), bias.data.end(), 0.0f);
    }
    Graph<float> g(false);
    auto ctx = m.context(g);
    auto h = m.decoder().unimodal_forward(ctx, toks);
    const auto text_only = m.decoder().multimodal_forward(ctx, h, g.constant(e1.image_embeddings), false).value();
    CHECK(testutil::max_abs_diff(m.logits(e1, toks), text_only) <= 1e-6);
}

TEST_CASE("output projection is tied to the word embeddings")
{
    CocaModel<float> m(small_config(), 6);
    const auto emb = m.embed_image(rand_tiles(3, 12, 13));
    const std::vector<std::int32_t> toks{1, 4, 9};
    const auto before = m.logits(emb, toks);
    m.params().get("decoder.tok_emb").value(20, 0) += 1.0f;
    const auto after = m.logits(emb, toks);
    bool col20 = false, others = false;
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t v = 0; v < 40; ++v) {
            if (before(t, v) != after(t, v)) (v == 20 ? col20 : others) = true;
        }
    CHECK(col20);
    CHECK_FALSE(others);  // token 20 is not among the inputs

    const auto l2 = m.logits(emb, std::vector<std::int32_t>{1, 20, 9});
    m.params().get("decoder.tok_emb").value(20, 0) -= 1.0f;
    CHECK(testutil::max_abs_diff(l2, m.logits(emb, std::vector<std::int32_t>{1, 20, 9})) > 0.0);
}

TEST_CASE("parameter groups and trainability policy")
{
    CHECK(param_group("perceiver.latents") == ParamGroup::perceiver);
    CHECK(param_group("head.logit_scale") == ParamGroup::contrastive_head);
    CHECK(param_group("decoder.tok_emb") == ParamGroup::word_embeddings);
    CHECK(param_group("decoder.pool.query") == ParamGroup::attention_pool);
    CHECK(param_group("decoder.uni0.attn.q.weight") == ParamGroup::unimodal_body);
    CHECK(param_group("decoder.uni0.attn.q.lora_A") == ParamGroup::lora_adapter);
    CHECK(param_group("decoder.mm1.cross.k.weight") == ParamGroup::cross_attention);
    CHECK(param_group("decoder.mm1.ff.fc1.weight") == ParamGroup::multimodal_body);

    CocaModel<float> m(small_config(), 7);
    CHECK_THROWS_AS(m.apply_policy({BodyMode::lora}), ContractError);
    m.apply_policy({BodyMode::frozen});
    m.params().for_each([](const Parameter<float>& p) {
        const auto g = param_group(p.name);
        CHECK(p.trainable == (g != ParamGroup::unimodal_body && g != ParamGroup::multimodal_body));
    });
}

TEST_CASE("frozen mode: body gradients are exactly zero, trainable groups receive gradient")
{
    CocaModel<float> m(small_config(), 8);
    m.apply_policy({BodyMode::frozen});
    std::vector<CaseExample<float>> ex{{rand_tiles(4, 12, 1), {1, 5, 6, 2}}, {rand_tiles(6, 12, 2), {1, 7, 8, 9, 2}},
                                       {rand_tiles(3, 12, 3), {1, 10, 2}}};
    std::vector<const CaseExample<float>*> batch{&ex[0], &ex[1], &ex[2]};
    Graph<float> g;
    auto losses = m.batch_losses(g, batch);
    m.params().zero_grad();
    g.backward(losses.total);
    std::map<ParamGroup, double> norm;
    m.params().for_each([&](const Parameter<float>& p) {
        for (float v : p.grad.data) norm[param_group(p.name)] += std::abs(v);
    });
    CHECK(norm[ParamGroup::unimodal_body] == 0.0);
    CHECK(norm[ParamGroup::multimodal_body] == 0.0);
    for (auto grp : {ParamGroup::perceiver, ParamGroup::contrastive_head, ParamGroup::word_embeddings,
                     ParamGroup::attention_pool, ParamGroup::cross_attention}) {
        CHECK(norm[grp] > 0.0);
    }
}

TEST_CASE("LoRA: fresh adapters are an identity, merge matches the adapter path")
{
    CocaModel<float> m(small_config(), 9);
    const auto emb = m.embed_image(rand_tiles(5, 12, 14));
    const std::vector<std::int32_t> toks{1, 4, 9, 3, 22};
    const auto base = m.logits(emb, toks);
    CHECK_THROWS_AS(m.apply_lora({0, 16.0}, 1), ConfigError);
    m.apply_lora({4, 8.0}, 1);
    CHECK_THROWS_AS(m.apply_lora({4, 8.0}, 1), ContractError);
    CHECK(testutil::max_abs_diff(base, m.logits(emb, toks)) <= 1e-7);

    m.params().for_each([](Parameter<float>& p) {
        if (p.name.ends_with(".lora_b")) {
            std::mt19937_64 rng(3);
            p.value = normal_tensor<float>(p.value.rows, p.value.cols, 0.1, rng);
        }
    });
    const auto adapted = m.logits(emb, toks);
    const auto adapted_txt = m.text_embedding(toks);
    CHECK(testutil::max_abs_diff(base, adapted) > 1e-4);
    m.merge_lora();
    CHECK_FALSE(m.has_lora());
    m.params().for_each([](const Parameter<float>& p) { CHECK(p.name.find(".lora_") == std::string::npos); });
    CHECK(testutil::max_abs_diff(adapted, m.logits(emb, toks)) <= 1e-5);
    const auto merged_txt = m.text_embedding(toks);
    for (std::size_t i = 0; i < merged_txt.size(); ++i) CHECK(std::abs(merged_txt[i] - adapted_txt[i]) <= 1e-5);
}

TEST_CASE("checkpoint round trip preserves outputs, config and tokenizer")
{
    auto dir = testutil::temp_dir("ckpt");
    const std::vector<std::string> reports{"a small lesion", "a large lesion with atypia"};
    Tokenizer tok = Tokenizer::train(reports, 40);
    ModelConfig cfg = small_config(tok.vocab_size());
    CocaModel<float> m(cfg, 10);
    m.apply_lora({2, 4.0}, 3);
    m.apply_policy({BodyMode::lora});
    save_checkpoint(dir / "c.bin", m, tok, {{"note", "x"}});
    LoadedCheckpoint back = load_checkpoint(dir / "c.bin");
    CHECK(back.tokenizer == tok);
    CHECK(back.model.has_lora());
    CHECK(back.meta.at("note") == "x");
    const auto tiles = rand_tiles(4, 12, 15);
    const auto toks = tok.encode(reports[1]);
    CHECK(testutil::max_abs_diff(m.logits(m.embed_image(tiles), toks), back.model.logits(back.model.embed_image(tiles), toks)) == 0.0);
    for (std::size_t i = 0; i < m.params().size(); ++i) CHECK(m.params()[i].trainable == back.model.params()[i].trainable);

    std::ofstream(dir / "junk.bin") << "NOTATENSORFILE";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin"), DataError);
}
