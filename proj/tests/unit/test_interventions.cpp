#include <doctest.h>

#include <cmath>

#include "steerlab/errors.hpp"
#include "steerlab/interventions.hpp"
#include "test_models.hpp"

using namespace steerlab;

namespace {

Tensor ramp(int rows, int cols) {
    Tensor t(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) t.at(r, c) = float(r * 10 + c);
    return t;
}

}  // namespace

TEST_CASE("add broadcasts a row over the selected positions") {
    const Tensor a = ramp(3, 2);
    const Tensor out = apply(a, Intervention::add(ActivationAddress::resid_pre(0), {1.0f, -1.0f}, 2.0f));
    CHECK(out.at(0, 0) == 2.0f);
    CHECK(out.at(2, 1) == 19.0f);
}

TEST_CASE("coefficient zero leaves the activation bit-identical") {
    Tensor a = ramp(3, 2);
    a.at(1, 1) = -0.0f;
    const Tensor out = apply(a, Intervention::add(ActivationAddress::resid_pre(0), {INFINITY, 5.0f}, 0.0f));
    CHECK(bitwise_equal(out.flat(), a.flat()));
}

TEST_CASE("position selectors") {
    const Tensor a = ramp(4, 1);
    SUBCASE("last") {
        const Tensor out = apply(a, Intervention::zero(ActivationAddress::resid_pre(0, Positions::last())));
        CHECK(out.at(2, 0) == 20.0f);
        CHECK(out.at(3, 0) == 0.0f);
    }
    SUBCASE("explicit") {
        const Tensor out = apply(a, Intervention::zero(ActivationAddress::resid_pre(0, Positions::at({0, 2}))));
        CHECK(out.at(0, 0) == 0.0f);
        CHECK(out.at(1, 0) == 10.0f);
        CHECK(out.at(2, 0) == 0.0f);
    }
    SUBCASE("explicit index beyond the sequence") {
        CHECK_THROWS_AS(apply(a, Intervention::zero(ActivationAddress::resid_pre(0, Positions::at({4})))),
                        InvalidAddress);
    }
}

TEST_CASE("replace with a per-position matrix uses row p at position p") {
    const Tensor a = ramp(3, 2);
    const Tensor src = ramp(3, 2);
    Tensor patch(3, 2);
    patch.at(1, 0) = 7.0f;
    const Tensor out = apply(a, Intervention::replace(ActivationAddress::resid_pre(0, Positions::at({1})), patch));
    CHECK(out.at(1, 0) == 7.0f);
    CHECK(out.at(1, 1) == 0.0f);
    CHECK(out.at(0, 1) == src.at(0, 1));
}

TEST_CASE("width mismatch is a shape error") {
    CHECK_THROWS_AS(apply(ramp(2, 3), Intervention::add(ActivationAddress::resid_pre(0), {1.0f}, 1.0f)),
                    ShapeMismatch);
}

TEST_CASE("validate reports every problem") {
    const ModelConfig cfg = steerlab::testing::tiny_config(100);
    InterventionSet set{
        Intervention::add(ActivationAddress::resid_pre(5), std::vector<float>(32, 1.0f), 1.0f),
        Intervention::add(ActivationAddress::resid_pre(0), std::vector<float>(31, 1.0f), 1.0f),
        Intervention::zero(ActivationAddress::head_out(0, 9)),
        Intervention::add(ActivationAddress::resid_pre(0), std::vector<float>(32, 1.0f), NAN),
        Intervention::add(ActivationAddress::mlp_out(1), std::vector<float>(32, 1.0f), 1.0f),
    };
    const auto v = validate(set, cfg);
    REQUIRE(v.size() == 4);
    CHECK(v[0].index == 0);
    CHECK(v[1].index == 1);
    CHECK(v[1].message.find("payload width") != std::string::npos);
    CHECK(v[2].index == 2);
    CHECK(v[3].index == 3);
    CHECK_THROWS_AS(require_valid(set, cfg), InvalidAddress);
}

TEST_CASE("head addresses take d_head wide payloads") {
    const ModelConfig cfg = steerlab::testing::tiny_config(100);
    InterventionSet ok{Intervention::add(ActivationAddress::head_out(1, 3), std::vector<float>(8, 1.0f), 1.0f)};
    CHECK(validate(ok, cfg).empty());
    InterventionSet headless{Intervention::zero({0, Site::AttnHeadOut, std::nullopt, Positions::all()})};
    CHECK(validate(headless, cfg).size() == 1);
}

TEST_CASE("compose keeps list order and stationarity is detected") {
    const InterventionSet a{Intervention::zero(ActivationAddress::resid_pre(0))};
    const InterventionSet b{Intervention::zero(ActivationAddress::resid_pre(1, Positions::last()))};
    const InterventionSet c = compose(a, b);
    REQUIRE(c.size() == 2);
    CHECK(c[0].address.layer == 0);
    CHECK(c[1].address.layer == 1);
    CHECK(position_stationary(a));
    CHECK_FALSE(position_stationary(c));
}

TEST_CASE("JSON wire format round-trips by reference") {
    const std::vector<float> vec{1.0f, 2.0f, 3.0f};
    InterventionSet set{
        Intervention::add(ActivationAddress::resid_pre(2, Positions::at({0, 4})), vec, -3.0f, "Equality"),
        Intervention::zero(ActivationAddress::head_out(1, 0, Positions::last())),
    };
    const auto j = to_json(set);
    CHECK(j[0]["payload_ref"] == "Equality");
    CHECK(j[0]["coefficient"] == -3.0);
    CHECK(j[1]["positions"] == "last");
    const auto back = interventions_from_json(j, [&](const std::string& ref) {
        CHECK(ref == "Equality");
        return vec;
    });
    REQUIRE(back.size() == 2);
    CHECK(back[0].address == set[0].address);
    CHECK(back[0].coefficient == -3.0f);
    CHECK(back[0].payload.values() == vec);
    CHECK(back[1].address == set[1].address);
    CHECK(back[1].mode == EditMode::Zero);

    // inline payloads cannot be serialized
    InterventionSet anon{Intervention::add(ActivationAddress::resid_pre(0), vec, 1.0f)};
    CHECK_THROWS(to_json(anon));
    CHECK_THROWS_AS(interventions_from_json(nlohmann::json::parse(R"([{"layer": 0, "site": "nowhere", "mode": "zero"}])"),
                                            nullptr),
                    InvalidArgument);
}
