#include <doctest.h>

#include <cmath>

#include "steerlab/errors.hpp"
#include "steerlab/steering.hpp"
#include "test_models.hpp"

using namespace steerlab;
using steerlab::testing::gpt2_tokenizer;
using steerlab::testing::tiny_model;

namespace {

std::vector<float> last_resid(const Model& m, const std::string& text, int layer) {
    const auto site = ActivationAddress::resid_pre(layer);
    const auto r = m.forward(gpt2_tokenizer().encode(text), {}, {site});
    const auto row = r.cache.at(site).row(r.cache.at(site).rows() - 1);
    return {row.begin(), row.end()};
}

}  // namespace

TEST_CASE("extraction is the mean last-token difference") {
    const Model m = tiny_model();
    const std::vector<ContrastPair> pairs{{"I love it", "I hate it"}, {"so kind", "so cruel"}};
    const auto v = extract_steering_vector(m, gpt2_tokenizer(), pairs, 1, {"Love", "Hate", 2.5f});
    REQUIRE(v.vector.size() == 32);
    const auto a = last_resid(m, "I love it", 1), b = last_resid(m, "I hate it", 1);
    const auto c = last_resid(m, "so kind", 1), d = last_resid(m, "so cruel", 1);
    double norm = 0.0;
    for (size_t i = 0; i < 32; ++i) {
        const float expect = ((a[i] - b[i]) + (c[i] - d[i])) / 2.0f;
        CHECK(v.vector[i] == doctest::Approx(expect).epsilon(1e-6));
        norm += double(v.vector[i]) * v.vector[i];
    }
    CHECK(v.norm == doctest::Approx(std::sqrt(norm)));
    CHECK(v.layer == 1);
    CHECK(v.name == "Love");
    CHECK(v.negative_name == "Hate");
    CHECK(v.default_coefficient == 2.5f);
    CHECK(v.pairs == pairs);
}

TEST_CASE("extraction rejects bad inputs") {
    const Model m = tiny_model();
    const std::vector<ContrastPair> none;
    CHECK_THROWS_AS(extract_steering_vector(m, gpt2_tokenizer(), none, 0), InvalidArgument);
    const std::vector<ContrastPair> pairs{{"a", "b"}};
    CHECK_THROWS_AS(extract_steering_vector(m, gpt2_tokenizer(), pairs, 2), InvalidAddress);
    const std::vector<ContrastPair> empty{{"", "b"}};
    CHECK_THROWS_AS(extract_steering_vector(m, gpt2_tokenizer(), empty, 0), InvalidArgument);
}

TEST_CASE("steering sets carry signed coefficients") {
    SteeringVector a, b;
    a.name = "A";
    a.layer = 0;
    a.default_coefficient = 3.0f;
    a.vector = std::vector<float>(4, 1.0f);
    b.name = "B";
    b.layer = 1;
    b.default_coefficient = 8.0f;
    b.vector = std::vector<float>(4, 2.0f);
    const std::vector<SteeringChoice> choices{{&a, std::nullopt}, {&b, 0.5f}};

    const auto pos = build_steering_set(choices, +1);
    REQUIRE(pos.size() == 2);
    CHECK(pos[0].coefficient == 3.0f);
    CHECK(pos[0].address == ActivationAddress::resid_pre(0));
    CHECK(pos[0].payload_ref == "A");
    CHECK(pos[1].coefficient == 0.5f);
    CHECK(pos[1].address.layer == 1);
    const auto neg = build_steering_set(choices, -1);
    CHECK(neg[0].coefficient == -3.0f);
    CHECK(neg[1].coefficient == -0.5f);

    CHECK_THROWS_AS(build_steering_set(choices, 2), InvalidArgument);
    b.vector.push_back(0.0f);
    CHECK_THROWS_AS(build_steering_set(choices, 1), DimensionMismatch);
}

TEST_CASE("sweep rows, CSV and JSON") {
    const Model m = tiny_model();
    const auto& tok = gpt2_tokenizer();
    SteeringVector v;
    v.name = "Love";
    v.layer = 1;
    // layer norm removes constant offsets, so the direction must not be uniform
    for (int i = 0; i < 32; ++i) v.vector.push_back(i % 3 == 0 ? 0.9f : -0.4f);
    const std::vector<float> coefs{-1.0f, 0.0f, 1.0f};
    const std::vector<std::string> prompts{"I think that", "The weather is"};
    SweepOptions opts;
    opts.continuation_tokens = 3;
    const auto report = sweep_coefficients(m, tok, v, coefs, prompts, 1842, opts);
    REQUIRE(report.rows.size() == 6);
    CHECK(report.rows[0].prompt_id == 0);
    CHECK(report.rows[3].prompt_id == 1);
    CHECK(report.rows[4].coefficient == 0.0f);
    CHECK(report.rows[2].continuation_ids.size() == 3);

    // the zero-coefficient row equals the unsteered model
    const auto base = next_token_log_probs(m.forward(tok.encode("The weather is")).logits);
    CHECK(report.rows[4].probe_logprob == base[1842]);
    CHECK(report.rows[3].probe_logprob != report.rows[5].probe_logprob);

    const std::string csv = report.to_csv();
    CHECK(csv.rfind("prompt_id,coefficient,probe_logprob,continuation\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') >= 7);
    const auto j = report.to_json();
    CHECK(j["vector"] == "Love");
    CHECK(j["rows"].size() == 6);

    CHECK_THROWS_AS(sweep_coefficients(m, tok, v, coefs, prompts, 60000, opts), OutOfRangeId);
    const std::vector<float> bad{NAN};
    CHECK_THROWS_AS(sweep_coefficients(m, tok, v, bad, prompts, 1842, opts), InvalidArgument);
}

TEST_CASE("layer mapping") {
    CHECK(map_layer(8, 28, 28, LayerMapping::Exact) == 8);
    CHECK_THROWS_AS(map_layer(18, 12, 28, LayerMapping::Exact), InvalidAddress);
    CHECK(map_layer(8, 12, 28, LayerMapping::Proportional) == 3);
    CHECK(map_layer(18, 12, 28, LayerMapping::Proportional) == 8);
    CHECK(map_layer(3, 12, 28, LayerMapping::Proportional) == 1);
    CHECK(map_layer(27, 12, 28, LayerMapping::Proportional) == 11);
}

TEST_CASE("shipped target catalog") {
    const auto cat = TargetCatalog::load(steerlab::testing::data_dir() / "steering_targets.json");
    CHECK(cat.reference.n_layers == 28);
    CHECK(cat.reference.n_heads == 16);
    CHECK(cat.get("Equality").layer == 8);
    CHECK(cat.get("Equality").default_coefficient == 3.0f);
    CHECK(cat.get("Impartial").layer == 18);
    CHECK(cat.get("Impartial").default_coefficient == 11.0f);
    CHECK(cat.get("Non-partisan").layer == 3);
    CHECK(cat.get("Non-partisan").default_coefficient == 8.0f);
    CHECK_FALSE(cat.get("Love").layer.has_value());
    CHECK_THROWS_AS(cat.get("Nope"), MissingVector);
    for (const auto& t : cat.targets) CHECK_FALSE(t.pairs.empty());

    ModelConfig cfg = steerlab::testing::tiny_config();
    cfg.n_layers = 12;
    cfg.n_heads = 12;
    cfg.model_id = "small";
    const auto exact = depth_diagnostics(cfg, cat, LayerMapping::Exact);
    CHECK(exact.find("differs") != std::string::npos);
    CHECK(exact.find("out of range") != std::string::npos);
    const auto prop = depth_diagnostics(cfg, cat, LayerMapping::Proportional);
    CHECK(prop.find("configured layer 18 -> layer 8") != std::string::npos);
}
