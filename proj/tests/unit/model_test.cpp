#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "heartbert/checkpoint.hpp"
#include "heartbert/errors.hpp"
#include "heartbert/model.hpp"

using namespace heartbert;

namespace {

// Independent closed-form parameter count (kept deliberately separate from
// the registry arithmetic it checks).
long long encoder_param_formula(long long L, long long H, long long F, long long V, long long P,
                                long long Ty) {
    long long embeddings = V * H + P * H + Ty * H + 2 * H;
    long long attention = 4 * (H * H + H) + 2 * H;
    long long ffn = H * F + F + F * H + H + 2 * H;
    long long mlm_head = H * H + H + 2 * H + V;  // transform + its norm + decoder bias (tied)
    return embeddings + L * (attention + ffn) + mlm_head;
}

long long head_param_formula(long long H, long long L, long long C) {
    long long projection = H * H + H;
    long long one_direction = 4 * L * H + 4 * L * L + 4 * L + 4 * L;
    long long classifier = 2 * L * C + C;
    return projection + 2 * one_direction + classifier;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_model = 8;
    c.d_ff = 32;
    c.vocab_size = 20;
    c.max_positions = 18;
    return c;
}

BatchIds tiny_batch() {
    BatchIds batch;
    batch.batch = 2;
    batch.seq = 5;
    batch.ids = {0, 7, 12, 9, 2, 0, 15, 6, 2, 1};
    batch.attention_mask = {1, 1, 1, 1, 1, 1, 1, 1, 1, 0};
    return batch;
}

std::vector<int> tiny_labels() {
    std::vector<int> labels(10, -100);
    labels[1] = 8;
    labels[3] = 14;
    labels[7] = 5;
    return labels;
}

}  // namespace

TEST_CASE("registry totals match the closed-form parameter formula") {
    for (ModelConfig c : {tiny_config(), ModelConfig{}}) {
        long long expected = encoder_param_formula(c.n_layers, c.d_model, c.d_ff, c.vocab_size,
                                                   c.max_positions, c.n_token_types);
        CHECK(total_parameters(encoder_tensor_specs(c)) == expected);
    }
    ModelConfig odd;
    odd.n_layers = 3;
    odd.n_heads = 4;
    odd.d_model = 16;
    odd.d_ff = 24;
    odd.vocab_size = 111;
    odd.max_positions = 50;
    odd.n_token_types = 2;
    CHECK(total_parameters(encoder_tensor_specs(odd)) ==
          encoder_param_formula(3, 16, 24, 111, 50, 2));

    CHECK(total_parameters(head_tensor_specs(ModelConfig{}, 3)) == head_param_formula(768, 128, 3));
    CHECK(total_parameters(head_tensor_specs(tiny_config(), 4, 5)) == head_param_formula(8, 5, 4));
}

TEST_CASE("default configuration reproduces the published totals") {
    ModelConfig c;
    auto specs = encoder_tensor_specs(c);
    CHECK(total_parameters(specs) == 83'504'416);

    long long embeddings = 0, block0 = 0, mlm = 0;
    for (const auto& s : specs) {
        if (s.name.rfind("embeddings.", 0) == 0) embeddings += static_cast<long long>(s.numel());
        if (s.name.rfind("encoder.layer.0.", 0) == 0) block0 += static_cast<long long>(s.numel());
        if (s.name.rfind("mlm.", 0) == 0) mlm += static_cast<long long>(s.numel());
    }
    CHECK(embeddings == 40'333'056);
    CHECK(block0 == 7'087'872);
    CHECK(mlm == 644'128);
    CHECK(embeddings + c.n_layers * block0 + mlm == 83'504'416);
}

TEST_CASE("trainable counts reproduce every fine-tuning variant") {
    ModelConfig c;
    struct Row {
        FreezePolicy policy;
        long long classes3, classes5, classes4;
    };
    const Row rows[] = {
        {FreezePolicy::all_frozen(), 1'510'915, 1'511'429, 1'511'172},
        {FreezePolicy::last_n(1), 8'598'787, 8'599'301, 8'599'044},
        {FreezePolicy::half(), 22'774'531, 22'775'045, 22'774'788},
        {FreezePolicy::all_unfrozen(), 44'038'147, 44'038'661, 44'038'404},
    };
    for (const auto& row : rows) {
        CHECK(count_trainable(c, row.policy, 3) == row.classes3);
        CHECK(count_trainable(c, row.policy, 5) == row.classes5);
        CHECK(count_trainable(c, row.policy, 4) == row.classes4);
    }
    CHECK(count_trainable(c, FreezePolicy::last_n(1), 3) -
              count_trainable(c, FreezePolicy::all_frozen(), 3) ==
          7'087'872);
    CHECK(count_trainable(c, FreezePolicy::last_n(2), 3) -
              count_trainable(c, FreezePolicy::last_n(1), 3) ==
          7'087'872);
    // half of six layers is the last three
    CHECK(count_trainable(c, FreezePolicy::half(), 3) ==
          count_trainable(c, FreezePolicy::last_n(3), 3));
    CHECK(count_trainable(c, FreezePolicy::all_unfrozen(), 3) ==
          count_trainable(c, FreezePolicy::last_n(6), 3));
}

TEST_CASE("freeze policies parse and gate layers") {
    CHECK(FreezePolicy::parse("all-frozen").first_trainable_block(6) == 6);
    CHECK(FreezePolicy::parse("last-1").first_trainable_block(6) == 5);
    CHECK(FreezePolicy::parse("last-6").first_trainable_block(6) == 0);
    CHECK(FreezePolicy::parse("half-frozen").first_trainable_block(6) == 3);
    CHECK(FreezePolicy::parse("all-unfrozen").first_trainable_block(6) == 0);
    CHECK(FreezePolicy::parse("half-frozen").first_trainable_block(5) == 3);
    CHECK_THROWS_AS(FreezePolicy::parse("last-0").first_trainable_block(6), Error);
    CHECK_THROWS_AS(FreezePolicy::parse("last-7").first_trainable_block(6), Error);
    CHECK_THROWS_AS(FreezePolicy::parse("none"), Error);
    CHECK(FreezePolicy::parse("last-4").name() == "last-4");
}

TEST_CASE("config validation and key-value round trip") {
    ModelConfig c = tiny_config();
    auto kv = c.to_kv();
    ModelConfig back = ModelConfig::from_kv(kv);
    CHECK(back.n_layers == c.n_layers);
    CHECK(back.d_model == c.d_model);
    CHECK(back.vocab_size == c.vocab_size);
    CHECK(back.mask_prob == c.mask_prob);
    CHECK(back.dropout == c.dropout);

    ModelConfig bad = c;
    bad.n_heads = 5;  // 8 % 5 != 0
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = c;
    bad.tie_lm_head = false;
    CHECK_THROWS_AS(bad.validate(), Error);
    kv.erase("d_ff");
    CHECK_THROWS_AS(ModelConfig::from_kv(kv), Error);
}

TEST_CASE("initialization is seed-deterministic with the documented statistics") {
    auto a = EncoderModel<float>::build(tiny_config(), 7);
    auto b = EncoderModel<float>::build(tiny_config(), 7);
    auto c = EncoderModel<float>::build(tiny_config(), 8);
    bool all_equal = true, any_differs = false;
    for (size_t i = 0; i < a.params.size(); ++i) {
        for (size_t j = 0; j < a.params.value(i).numel(); ++j) {
            if (a.params.value(i)[j] != b.params.value(i)[j]) all_equal = false;
            if (a.params.value(i)[j] != c.params.value(i)[j]) any_differs = true;
        }
    }
    CHECK(all_equal);
    CHECK(any_differs);

    ModelConfig big;  // default: enough samples for stable statistics
    auto m = EncoderModel<float>::build(big, 1);
    const auto& word = m.params.get("embeddings.word");
    double sum = 0.0, sq = 0.0;
    size_t out_of_bounds = 0;
    for (size_t i = 0; i < word.numel(); ++i) {
        if (std::abs(word[i]) > 0.04f + 1e-6f) ++out_of_bounds;
        sum += word[i];
        sq += static_cast<double>(word[i]) * word[i];
    }
    CHECK(out_of_bounds == 0);
    double mean = sum / static_cast<double>(word.numel());
    double stddev = std::sqrt(sq / static_cast<double>(word.numel()) - mean * mean);
    CHECK(std::abs(mean) < 1e-3);
    CHECK(stddev > 0.015);
    CHECK(stddev < 0.025);
    size_t norm_violations = 0, bias_violations = 0;
    const auto& gamma = m.params.get("embeddings.layer_norm.gamma");
    const auto& beta = m.params.get("embeddings.layer_norm.beta");
    for (size_t i = 0; i < gamma.numel(); ++i) {
        if (gamma[i] != 1.0f || beta[i] != 0.0f) ++norm_violations;
    }
    const auto& bias = m.params.get("encoder.layer.0.attention.query.bias");
    for (size_t i = 0; i < bias.numel(); ++i) {
        if (bias[i] != 0.0f) ++bias_violations;
    }
    CHECK(norm_violations == 0);
    CHECK(bias_violations == 0);
}

TEST_CASE("forward obeys the shape contract and validates inputs") {
    auto model = EncoderModel<float>::build(tiny_config(), 3);
    auto batch = tiny_batch();
    auto out = model.forward(batch);
    REQUIRE(out.hidden.ndim() == 2);
    CHECK(out.hidden.dim(0) == batch.rows());
    CHECK(out.hidden.dim(1) == 8);
    auto logits = model.mlm_logits(out.hidden);
    CHECK(logits.dim(0) == batch.rows());
    CHECK(logits.dim(1) == 20);

    BatchIds bad = batch;
    bad.ids[2] = 20;
    CHECK_THROWS_AS(model.forward(bad), Error);
    bad = batch;
    bad.attention_mask[2] = 2;
    CHECK_THROWS_AS(model.forward(bad), Error);
    bad = batch;
    bad.seq = 17;  // exceeds max_positions - 2
    bad.ids.assign(2 * 17, 5);
    bad.attention_mask.assign(2 * 17, 1);
    CHECK_THROWS_AS(model.forward(bad), Error);
}

TEST_CASE("attention rows are normalized and padding carries no weight") {
    auto model = EncoderModel<double>::build(tiny_config(), 11);
    auto batch = tiny_batch();
    ForwardOptions opts;
    opts.want_cache = true;
    auto out = model.forward(batch, opts);
    const size_t S = batch.seq;
    for (int layer = 0; layer < 2; ++layer) {
        const auto& probs = EncoderModel<double>::attention_probs(out, layer);
        REQUIRE(probs.dim(0) == batch.batch * 2 * S);
        for (size_t row = 0; row < probs.dim(0); ++row) {
            size_t b = row / (2 * S);
            double sum = 0.0;
            for (size_t j = 0; j < S; ++j) {
                double p = probs.at(row, j);
                if (batch.attention_mask[b * S + j] == 0) {
                    CHECK(p == 0.0);  // exp underflows after the additive mask
                } else {
                    CHECK(p >= 0.0);
                    sum += p;
                }
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("appending padding leaves real positions unchanged") {
    auto model = EncoderModel<double>::build(tiny_config(), 13);
    BatchIds plain;
    plain.batch = 1;
    plain.seq = 5;
    plain.ids = {0, 9, 4, 17, 2};
    plain.attention_mask = {1, 1, 1, 1, 1};
    BatchIds padded = plain;
    padded.seq = 8;
    padded.ids = {0, 9, 4, 17, 2, 1, 1, 1};
    padded.attention_mask = {1, 1, 1, 1, 1, 0, 0, 0};

    auto a = model.forward(plain);
    auto b = model.forward(padded);
    for (size_t r = 0; r < 5; ++r) {
        for (size_t j = 0; j < 8; ++j) {
            CHECK(a.hidden.at(r, j) == doctest::Approx(b.hidden.at(r, j)).epsilon(1e-5));
        }
    }
}

TEST_CASE("ablated MLM head reduces to the tied-embedding product") {
    auto model = EncoderModel<double>::build(tiny_config(), 17);
    const size_t N = 6, H = 8, V = 20;
    Tensor<double> hidden({N, H});
    Rng rng(5);
    for (size_t i = 0; i < hidden.numel(); ++i) hidden[i] = rng.normal();
    auto logits = model.mlm_logits(hidden, /*skip_transform=*/true);
    const auto& word = model.params.get("embeddings.word");
    const auto& dec_bias = model.params.get("mlm.decoder.bias");
    for (size_t r = 0; r < N; ++r) {
        for (size_t v = 0; v < V; ++v) {
            double expected = dec_bias[v];
            for (size_t j = 0; j < H; ++j) expected += hidden.at(r, j) * word.at(v, j);
            CHECK(logits.at(r, v) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("MLM loss at initialization sits near log vocabulary size") {
    auto model = EncoderModel<double>::build(tiny_config(), 23);
    auto batch = tiny_batch();
    auto labels = tiny_labels();
    ForwardOptions opts;
    opts.want_cache = true;
    auto fwd = model.forward(batch, opts);
    auto grads = make_store<double>(encoder_tensor_specs(tiny_config()));
    auto result = model.mlm_loss_and_grads(batch, labels, fwd, grads);
    CHECK(result.masked_positions == 3);
    CHECK_FALSE(result.no_masked_positions);
    CHECK(std::abs(result.loss - std::log(20.0)) < 0.3);

    std::vector<int> no_labels(batch.rows(), -100);
    auto empty = model.mlm_loss_and_grads(batch, no_labels, fwd, grads);
    CHECK(empty.no_masked_positions);
    CHECK(empty.loss == 0.0);
}

TEST_CASE("analytic gradients match central finite differences everywhere") {
    const ModelConfig cfg = tiny_config();
    auto model = EncoderModel<double>::build(cfg, 91);
    const auto batch = tiny_batch();
    const auto labels = tiny_labels();

    auto loss_at = [&]() {
        ForwardOptions opts;
        opts.want_cache = true;
        auto fwd = model.forward(batch, opts);
        auto scratch = make_store<double>(encoder_tensor_specs(cfg));
        return model.mlm_loss_and_grads(batch, labels, fwd, scratch).loss;
    };

    ForwardOptions opts;
    opts.want_cache = true;
    auto fwd = model.forward(batch, opts);
    auto grads = make_store<double>(encoder_tensor_specs(cfg));
    model.mlm_loss_and_grads(batch, labels, fwd, grads);

    const double eps = 1e-4;
    size_t checked = 0, failed = 0;
    for (size_t ti = 0; ti < model.params.size(); ++ti) {
        auto& tensor = model.params.value(ti);
        const auto& gt = grads.get(model.params.names()[ti]);
        for (size_t i = 0; i < tensor.numel(); ++i) {
            const double orig = tensor[i];
            tensor[i] = orig + eps;
            const double lp = loss_at();
            tensor[i] = orig - eps;
            const double lm = loss_at();
            tensor[i] = orig;
            const double fd = (lp - lm) / (2.0 * eps);
            const double an = gt[i];
            const double tol = std::max(1e-7, 1e-4 * std::max(std::abs(fd), std::abs(an)));
            ++checked;
            if (std::abs(fd - an) > tol) {
                ++failed;
                if (failed <= 5) {
                    MESSAGE("tensor " << model.params.names()[ti] << " index " << i << " fd " << fd
                                      << " analytic " << an);
                }
            }
        }
    }
    CHECK(checked == static_cast<size_t>(total_parameters(encoder_tensor_specs(cfg))));
    CHECK(failed == 0);
}

TEST_CASE("frozen layers receive exactly zero gradient") {
    const ModelConfig cfg = tiny_config();
    auto model = EncoderModel<double>::build(cfg, 37);
    const auto batch = tiny_batch();
    const auto labels = tiny_labels();
    ForwardOptions opts;
    opts.want_cache = true;
    auto fwd = model.forward(batch, opts);

    auto full = make_store<double>(encoder_tensor_specs(cfg));
    model.mlm_loss_and_grads(batch, labels, fwd, full, 0, true);
    auto gated = make_store<double>(encoder_tensor_specs(cfg));
    model.mlm_loss_and_grads(batch, labels, fwd, gated, 1, false);

    for (size_t ti = 0; ti < gated.size(); ++ti) {
        const std::string& name = gated.names()[ti];
        const auto& g = gated.value(ti);
        if (name.rfind("embeddings.", 0) == 0 || name.rfind("encoder.layer.0.", 0) == 0) {
            for (size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 0.0);
        } else {
            const auto& f = full.get(name);
            bool identical = true;
            for (size_t i = 0; i < g.numel(); ++i) {
                if (g[i] != f[i]) identical = false;
            }
            CHECK(identical);
        }
    }

    // The full run must reach the non-scatter parts of the embedding table
    // only through used rows: position rows beyond the longest sequence stay
    // zero, used ones do not.
    const auto& dpos = full.get("embeddings.position");
    double used = 0.0, unused = 0.0;
    for (size_t j = 0; j < 8; ++j) {
        used += std::abs(dpos.at(3, j));     // position 3 = third real token
        unused += std::abs(dpos.at(9, j));   // beyond seq 5 + offset 2
    }
    CHECK(used > 0.0);
    CHECK(unused == 0.0);
}

TEST_CASE("checkpoints round-trip bit-identically") {
    const ModelConfig cfg = tiny_config();
    auto model = EncoderModel<float>::build(cfg, 101);
    const std::string path = "model_test_checkpoint.bin";
    save_encoder_checkpoint(model, path, {{"note", "unit"}});
    auto back = load_encoder_checkpoint(path);
    CHECK(back.config.vocab_size == cfg.vocab_size);
    CHECK(back.config.max_positions == cfg.max_positions);

    auto batch = tiny_batch();
    auto a = model.forward(batch);
    auto b = back.forward(batch);
    for (size_t i = 0; i < a.hidden.numel(); ++i) CHECK(a.hidden[i] == b.hidden[i]);

    auto ckpt = load_checkpoint(path);
    CHECK(ckpt.meta.at("note") == "unit");
    CHECK(ckpt.find("embeddings.word") != nullptr);
    CHECK(ckpt.find("nonexistent") == nullptr);

    // Truncated payload must be rejected, missing files must be reported.
    {
        std::FILE* f = std::fopen(path.c_str(), "rb+");
        REQUIRE(f != nullptr);
        std::fseek(f, 0, SEEK_END);
        long size = std::ftell(f);
        std::fclose(f);
        REQUIRE(truncate(path.c_str(), size / 2) == 0);
    }
    CHECK_THROWS_AS(load_checkpoint(path), Error);
    std::remove(path.c_str());
    std::remove((path + ".config").c_str());
    CHECK_THROWS_AS(load_checkpoint(path), Error);
}
