#include <doctest.h>

#include <cmath>
#include <fstream>
#include <future>
#include <random>

#include "steerlab/errors.hpp"
#include "steerlab/model.hpp"
#include "steerlab/safetensors.hpp"
#include "test_models.hpp"

using namespace steerlab;
using steerlab::testing::tiny_model;

namespace {

std::vector<TokenId> some_ids(int n, uint64_t seed = 3) {
    std::mt19937_64 rng(seed);
    std::vector<TokenId> ids;
    for (int i = 0; i < n; ++i) ids.push_back(TokenId(rng() % 50257));
    return ids;
}

CaptureSet every_site(const ModelConfig& cfg) {
    CaptureSet cap;
    for (int l = 0; l < cfg.n_layers; ++l) {
        cap.push_back(ActivationAddress::resid_pre(l));
        cap.push_back(ActivationAddress::mlp_out(l));
        cap.push_back(ActivationAddress::resid_post(l));
        for (int h = 0; h < cfg.n_heads; ++h) cap.push_back(ActivationAddress::head_out(l, h));
    }
    return cap;
}

}  // namespace

TEST_CASE("empty intervention set is bitwise the plain forward") {
    const Model m = tiny_model();
    const auto ids = some_ids(12);
    const auto plain = m.forward(ids);
    const auto hooked = m.forward(ids, InterventionSet{}, every_site(m.config()));
    CHECK(bitwise_equal(plain.logits.flat(), hooked.logits.flat()));
    CHECK(plain.logits.rows() == 12);
    CHECK(plain.logits.cols() == 50257);
}

TEST_CASE("capture shapes follow the site contract") {
    const Model m = tiny_model();
    const auto r = m.forward(some_ids(5), {}, every_site(m.config()));
    CHECK(r.cache.at(ActivationAddress::resid_pre(1)).rows() == 5);
    CHECK(r.cache.at(ActivationAddress::resid_pre(1)).cols() == 32);
    CHECK(r.cache.at(ActivationAddress::head_out(0, 3)).cols() == 8);
    CHECK_THROWS_AS(m.forward(some_ids(5)).cache.at(ActivationAddress::resid_pre(0)), InvalidAddress);
}

TEST_CASE("resid_post decomposes into resid_pre, head outputs and mlp_out") {
    const Model m = tiny_model();
    const auto& cfg = m.config();
    const auto r = m.forward(some_ids(6), {}, every_site(cfg));
    const auto& lw = m.weights().layers[1];
    const Tensor& pre = r.cache.at(ActivationAddress::resid_pre(1));
    const Tensor& post = r.cache.at(ActivationAddress::resid_post(1));
    const Tensor& mlp = r.cache.at(ActivationAddress::mlp_out(1));
    for (int p = 0; p < 6; ++p) {
        for (int j = 0; j < cfg.d_model; ++j) {
            double attn = lw.attn_out_bias.at(0, j);
            for (int h = 0; h < cfg.n_heads; ++h) {
                const Tensor& z = r.cache.at(ActivationAddress::head_out(1, h));
                for (int i = 0; i < cfg.d_head; ++i) attn += double(z.at(p, i)) * lw.attn_out_weight.at(h * cfg.d_head + i, j);
            }
            CHECK(double(post.at(p, j)) == doctest::Approx(pre.at(p, j) + attn + mlp.at(p, j)).epsilon(1e-4));
        }
    }
    // resid_post of block l is resid_pre of block l + 1
    CHECK(bitwise_equal(r.cache.at(ActivationAddress::resid_post(0)).flat(),
                        r.cache.at(ActivationAddress::resid_pre(1)).flat()));
}

TEST_CASE("replacing an activation with itself changes nothing") {
    const Model m = tiny_model();
    const auto ids = some_ids(7);
    const auto a = ActivationAddress::head_out(1, 2);
    const auto base = m.forward(ids, {}, {a});
    const auto again = m.forward(ids, {Intervention::replace(a, base.cache.at(a))});
    CHECK(bitwise_equal(base.logits.flat(), again.logits.flat()));
}

TEST_CASE("captures record values after edits") {
    const Model m = tiny_model();
    const auto a = ActivationAddress::mlp_out(0, Positions::last());
    const auto r = m.forward(some_ids(4), {Intervention::zero(a)}, {a});
    const Tensor& t = r.cache.at(a);
    for (float v : t.row(3)) CHECK(v == 0.0f);
    bool nonzero = false;
    for (float v : t.row(2)) nonzero = nonzero || v != 0.0f;
    CHECK(nonzero);
}

TEST_CASE("add then subtract restores the logits") {
    const Model m = tiny_model();
    const auto ids = some_ids(9);
    std::vector<float> v(32);
    std::mt19937 rng(1);
    for (float& x : v) x = std::normal_distribution<float>(0.0f, 1.0f)(rng);
    const auto a = ActivationAddress::resid_pre(1);
    const auto base = m.forward(ids).logits;
    const auto both = m.forward(ids, {Intervention::add(a, v, 4.0f), Intervention::add(a, v, -4.0f)}).logits;
    float worst = 0.0f;
    for (size_t i = 0; i < base.size(); ++i) worst = std::max(worst, std::abs(base.flat()[i] - both.flat()[i]));
    CHECK(worst < 1e-4f);
    const auto one = m.forward(ids, {Intervention::add(a, v, 4.0f)}).logits;
    CHECK_FALSE(bitwise_equal(base.flat(), one.flat()));
}

TEST_CASE("incremental extension is bitwise the full pass") {
    const Model m = tiny_model();
    const auto ids = some_ids(10);
    const auto full = m.forward(ids).logits;
    DecodeState st = m.new_state();
    const Tensor a = m.extend(st, std::span(ids).first(6), {}, LogitsScope::All);
    Tensor b;
    for (size_t i = 6; i < ids.size(); ++i) b = m.extend(st, std::span(ids).subspan(i, 1));
    CHECK(st.length() == 10);
    CHECK(bitwise_equal(a.flat(), std::span(full.flat()).first(a.size())));
    CHECK(bitwise_equal(b.flat(), full.row(9)));
}

TEST_CASE("step_from_layer reproduces a full pass with final-position edits") {
    const Model m = tiny_model();
    const auto ids = some_ids(8);
    const InterventionSet edits{Intervention::zero(ActivationAddress::head_out(1, 0, Positions::last())),
                                Intervention::add(ActivationAddress::resid_pre(1, Positions::last()),
                                                  std::vector<float>(32, 0.5f), 2.0f)};
    const auto full = m.forward(ids, edits, {ActivationAddress::resid_pre(1)}, LogitsScope::Last);

    DecodeState prefix = m.new_state();
    m.extend(prefix, std::span(ids).first(7));
    ActivationCache cache;
    m.step_from_layer(prefix, 0, m.embed(ids.back(), 7), {}, {ActivationAddress::resid_pre(1)}, &cache);
    // the captured row is pre-edit at block 1 because no edits were passed
    const auto row = cache.at(ActivationAddress::resid_pre(1)).row(0);
    const auto resumed = m.step_from_layer(prefix, 1, row, edits);
    CHECK(bitwise_equal(resumed, full.logits.row(0)));
    CHECK(prefix.length() == 7);
}

TEST_CASE("batched resume rows are independent single steps") {
    const Model m = tiny_model();
    const auto ids = some_ids(6, 11);
    DecodeState prefix = m.new_state();
    m.extend(prefix, std::span(ids).first(5));
    const auto x = m.embed(ids.back(), 5);
    std::vector<InterventionSet> sets{
        {},
        {Intervention::zero(ActivationAddress::head_out(0, 1, Positions::last()))},
        {Intervention::add(ActivationAddress::resid_pre(0), std::vector<float>(32, -0.25f), 3.0f),
         Intervention::zero(ActivationAddress::head_out(1, 3, Positions::at({5})))},
    };
    Tensor rows(3, 32);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 32; ++c) rows.at(r, c) = x[size_t(c)] + float(r) * 0.1f;
    }
    const Tensor batch = m.step_batch_from_layer(prefix, 0, rows, sets);
    REQUIRE(batch.rows() == 3);
    for (int r = 0; r < 3; ++r) {
        CAPTURE(r);
        CHECK(bitwise_equal(batch.row(r), m.step_from_layer(prefix, 0, rows.row(r), sets[size_t(r)])));
    }
    CHECK_THROWS_AS(m.step_batch_from_layer(prefix, 0, rows, std::span(sets).first(2)), InvalidArgument);
}

TEST_CASE("greedy decoding: KV cache and full recompute agree") {
    const Model m = tiny_model();
    const auto prompt = some_ids(5);
    GenerationConfig g;
    g.max_new_tokens = 12;
    const auto cached = m.generate(prompt, g);
    g.use_kv_cache = false;
    const auto recomputed = m.generate(prompt, g);
    CHECK(cached == recomputed);
    CHECK(cached.size() == 12);

    // non-stationary edits force recompute; both settings still agree
    const InterventionSet last{Intervention::add(ActivationAddress::resid_pre(1, Positions::last()),
                                                 std::vector<float>(32, 1.0f), 3.0f)};
    g.use_kv_cache = true;
    const auto a = m.generate(prompt, g, last);
    g.use_kv_cache = false;
    CHECK(a == m.generate(prompt, g, last));
}

TEST_CASE("coefficient zero steering decodes identically") {
    const Model m = tiny_model();
    const auto prompt = some_ids(6);
    GenerationConfig g;
    g.max_new_tokens = 10;
    const InterventionSet zero{Intervention::add(ActivationAddress::resid_pre(1), std::vector<float>(32, 9.0f), 0.0f)};
    CHECK(m.generate(prompt, g) == m.generate(prompt, g, zero));
}

TEST_CASE("sampling is reproducible from the seed") {
    const Model m = tiny_model();
    const auto prompt = some_ids(4);
    GenerationConfig g;
    g.mode = GenerationConfig::Mode::Sample;
    g.max_new_tokens = 8;
    g.seed = 42;
    const auto a = m.generate(prompt, g);
    CHECK(a == m.generate(prompt, g));
    g.use_kv_cache = false;
    CHECK(a == m.generate(prompt, g));
}

TEST_CASE("decoding edge cases") {
    const Model m = tiny_model();
    GenerationConfig g;
    CHECK_THROWS_AS(m.generate(std::vector<TokenId>{}, g), InvalidArgument);
    g.max_new_tokens = 0;
    CHECK(m.generate(some_ids(3), g).empty());
    g.max_new_tokens = 300;
    CHECK_THROWS_AS(m.generate(some_ids(3), g), ContextOverflow);
    CHECK_THROWS_AS(m.forward(some_ids(257)), ContextOverflow);
    CHECK_THROWS_AS(m.forward(std::vector<TokenId>{50257}), OutOfRangeId);
    g.max_new_tokens = 3;
    g.stop_token = m.generate(some_ids(3), g).front();
    CHECK(m.generate(some_ids(3), g).size() == 1);
}

TEST_CASE("concurrent forwards match serial ones") {
    const Model m = tiny_model();
    std::vector<std::vector<TokenId>> inputs;
    std::vector<Tensor> serial;
    for (int i = 0; i < 6; ++i) {
        inputs.push_back(some_ids(5 + i, uint64_t(i)));
        serial.push_back(m.forward(inputs.back()).logits);
    }
    std::vector<std::future<Tensor>> futures;
    for (const auto& ids : inputs) {
        futures.push_back(std::async(std::launch::async, [&m, &ids] { return m.forward(ids).logits; }));
    }
    for (size_t i = 0; i < futures.size(); ++i) CHECK(bitwise_equal(futures[i].get().flat(), serial[i].flat()));
}

TEST_CASE("helpers") {
    CHECK(argmax(std::vector<float>{1.0f, 3.0f, 3.0f, 2.0f}) == 1);
    const auto lp = log_softmax(std::vector<float>{0.0f, 0.0f});
    CHECK(lp[0] == doctest::Approx(std::log(0.5)));
    CHECK_FALSE(bitwise_equal(std::vector<float>{0.0f}, std::vector<float>{-0.0f}));
}

TEST_CASE("weights load from safetensors with GPT-2 names") {
    const auto dir = steerlab::testing::temp_dir("load");
    const Model m = tiny_model(5, 50);
    const auto& w = m.weights();
    std::map<std::string, NamedTensor> t;
    auto put = [&](const std::string& name, const Tensor& x, bool vec) {
        t[name] = {vec ? std::vector<int64_t>{x.cols()} : std::vector<int64_t>{x.rows(), x.cols()}, x.values()};
    };
    put("transformer.wte.weight", w.token_embedding, false);
    put("transformer.wpe.weight", w.position_embedding, false);
    put("transformer.ln_f.weight", w.final_ln_gain, true);
    put("transformer.ln_f.bias", w.final_ln_bias, true);
    for (int l = 0; l < 2; ++l) {
        const auto& lw = w.layers[size_t(l)];
        const std::string p = "transformer.h." + std::to_string(l) + ".";
        put(p + "ln_1.weight", lw.ln1_gain, true);
        put(p + "ln_1.bias", lw.ln1_bias, true);
        put(p + "attn.c_attn.weight", lw.qkv_weight, false);
        put(p + "attn.c_attn.bias", lw.qkv_bias, true);
        put(p + "attn.c_proj.weight", lw.attn_out_weight, false);
        put(p + "attn.c_proj.bias", lw.attn_out_bias, true);
        put(p + "ln_2.weight", lw.ln2_gain, true);
        put(p + "ln_2.bias", lw.ln2_bias, true);
        put(p + "mlp.c_fc.weight", lw.fc_weight, false);
        put(p + "mlp.c_fc.bias", lw.fc_bias, true);
        put(p + "mlp.c_proj.weight", lw.fc_out_weight, false);
        put(p + "mlp.c_proj.bias", lw.fc_out_bias, true);
    }
    write_safetensors(dir / "model.safetensors", t);
    {
        std::ofstream(dir / "config.json") << m.config().to_json().dump();
    }
    const Model loaded = Model::load(dir / "config.json", dir / "model.safetensors");
    const std::vector<TokenId> ids{1, 2, 3, 49};
    CHECK(bitwise_equal(loaded.forward(ids).logits.flat(), m.forward(ids).logits.flat()));
    CHECK(loaded.parameter_count() == m.parameter_count());

    t.erase("transformer.h.1.mlp.c_fc.bias");
    write_safetensors(dir / "model.safetensors", t);
    CHECK_THROWS_AS(Model::load(dir / "config.json", dir / "model.safetensors"), MissingTensor);
}
