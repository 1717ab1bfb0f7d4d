#include "steerlab/interventions.hpp"

#include <cmath>

#include "steerlab/errors.hpp"

namespace steerlab {

std::string_view to_string(EditMode mode) {
    switch (mode) {
        case EditMode::Add: return "add";
        case EditMode::Replace: return "replace";
        case EditMode::Zero: return "zero";
    }
    return "?";
}

EditMode edit_mode_from_string(std::string_view name) {
    if (name == "add") return EditMode::Add;
    if (name == "replace") return EditMode::Replace;
    if (name == "zero") return EditMode::Zero;
    throw InvalidArgument("unknown intervention mode '" + std::string(name) + "'");
}

Intervention Intervention::add(ActivationAddress a, std::vector<float> v, float coefficient, std::string ref) {
    Intervention iv;
    iv.address = std::move(a);
    iv.mode = EditMode::Add;
    iv.payload = Tensor::row_vector(std::move(v));
    iv.coefficient = coefficient;
    iv.payload_ref = std::move(ref);
    return iv;
}

Intervention Intervention::replace(ActivationAddress a, Tensor payload, std::string ref) {
    Intervention iv;
    iv.address = std::move(a);
    iv.mode = EditMode::Replace;
    iv.payload = std::move(payload);
    iv.payload_ref = std::move(ref);
    return iv;
}

Intervention Intervention::zero(ActivationAddress a) {
    Intervention iv;
    iv.address = std::move(a);
    iv.mode = EditMode::Zero;
    return iv;
}

void apply(const ActivationView& view, int seq_len, const Intervention& iv) {
    if (iv.mode != EditMode::Zero && iv.payload.cols() != view.cols) {
        throw ShapeMismatch("intervention at " + iv.address.to_string() + ": payload width " +
                            std::to_string(iv.payload.cols()) + " != activation width " + std::to_string(view.cols));
    }
    const Positions& sel = iv.address.positions;
    if (sel.kind == Positions::Kind::Explicit) {
        for (int i : sel.indices) {
            if (i < 0 || i >= seq_len) {
                throw InvalidAddress("intervention at " + iv.address.to_string() + ": position " + std::to_string(i) +
                                     " outside sequence of length " + std::to_string(seq_len));
            }
        }
    }
    // Add with a zero multiplier is an exact no-op.
    if (iv.mode == EditMode::Add && iv.coefficient == 0.0f) return;

    for (int r = 0; r < view.rows; ++r) {
        const int pos = view.first_position + r;
        if (!sel.selects(pos, seq_len)) continue;
        float* a = view.row(r);
        if (iv.mode == EditMode::Zero) {
            for (int j = 0; j < view.cols; ++j) a[j] = 0.0f;
            continue;
        }
        int prow = 0;
        if (iv.payload.rows() > 1) {
            if (pos >= iv.payload.rows()) {
                throw ShapeMismatch("intervention at " + iv.address.to_string() + ": per-position payload has " +
                                    std::to_string(iv.payload.rows()) + " rows, position " + std::to_string(pos) +
                                    " requested");
            }
            prow = pos;
        }
        const auto p = iv.payload.row(prow);
        if (iv.mode == EditMode::Replace) {
            for (int j = 0; j < view.cols; ++j) a[j] = p[size_t(j)];
        } else {
            const float c = iv.coefficient;
            for (int j = 0; j < view.cols; ++j) a[j] = a[j] + c * p[size_t(j)];
        }
    }
}

Tensor apply(const Tensor& a, const Intervention& iv) {
    Tensor out = a;
    ActivationView view{out.data(), out.rows(), out.cols(), size_t(out.cols()), 0};
    apply(view, out.rows(), iv);
    return out;
}

std::vector<Violation> validate(const InterventionSet& set, const ModelConfig& cfg) {
    std::vector<Violation> out;
    for (size_t i = 0; i < set.size(); ++i) {
        const Intervention& iv = set[i];
        for (auto& msg : address_problems(iv.address, cfg)) {
            out.push_back({i, std::move(msg)});
        }
        const int width = site_width(iv.address.site, cfg);
        if (iv.mode == EditMode::Zero) {
            if (!iv.payload.empty()) out.push_back({i, "zero intervention carries a payload"});
        } else if (iv.payload.empty()) {
            out.push_back({i, "missing payload"});
        } else if (iv.payload.cols() != width) {
            out.push_back({i, "payload width: expected " + std::to_string(width) + ", got " +
                                  std::to_string(iv.payload.cols())});
        }
        if (iv.mode == EditMode::Add && !std::isfinite(iv.coefficient)) {
            out.push_back({i, "coefficient is not finite"});
        }
    }
    return out;
}

void require_valid(const InterventionSet& set, const ModelConfig& cfg) {
    const auto problems = validate(set, cfg);
    if (problems.empty()) return;
    std::string msg = "invalid interventions:";
    for (const auto& v : problems) {
        msg += " [" + std::to_string(v.index) + "] " + v.message + ";";
    }
    throw InvalidAddress(msg);
}

InterventionSet compose(const InterventionSet& base, const InterventionSet& extra, const ModelConfig* cfg) {
    std::vector<Intervention> items = base.items();
    items.insert(items.end(), extra.begin(), extra.end());
    InterventionSet out(std::move(items));
    if (cfg != nullptr) require_valid(out, *cfg);
    return out;
}

bool position_stationary(const InterventionSet& set) {
    for (const auto& iv : set) {
        if (iv.address.positions.kind == Positions::Kind::Last) return false;
    }
    return true;
}

nlohmann::json positions_to_json(const Positions& p) {
    switch (p.kind) {
        case Positions::Kind::All: return "all";
        case Positions::Kind::Last: return "last";
        case Positions::Kind::Explicit: return p.indices;
    }
    return "all";
}

Positions positions_from_json(const nlohmann::json& j) {
    if (j.is_null()) return Positions::all();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "all") return Positions::all();
        if (s == "last") return Positions::last();
        throw InvalidArgument("positions must be \"all\", \"last\" or a list of indices");
    }
    if (j.is_array()) return Positions::at(j.get<std::vector<int>>());
    throw InvalidArgument("positions must be \"all\", \"last\" or a list of indices");
}

nlohmann::json to_json(const InterventionSet& set) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& iv : set) {
        nlohmann::json o = {{"layer", iv.address.layer},
                            {"site", to_string(iv.address.site)},
                            {"positions", positions_to_json(iv.address.positions)},
                            {"mode", to_string(iv.mode)}};
        if (iv.address.head) o["head"] = *iv.address.head;
        if (iv.mode == EditMode::Add) o["coefficient"] = iv.coefficient;
        if (iv.mode != EditMode::Zero) {
            if (iv.payload_ref.empty()) {
                throw InvalidArgument("intervention at " + iv.address.to_string() +
                                      " has an inline payload; only stored vectors can be serialized");
            }
            o["payload_ref"] = iv.payload_ref;
        }
        arr.push_back(std::move(o));
    }
    return arr;
}

InterventionSet interventions_from_json(const nlohmann::json& j, const PayloadResolver& resolve) {
    if (!j.is_array()) {
        throw ParseError("interventions: expected a JSON array");
    }
    InterventionSet out;
    for (const auto& o : j) {
        try {
            Intervention iv;
            iv.address.layer = o.at("layer").get<int>();
            iv.address.site = site_from_string(o.at("site").get<std::string>());
            if (o.contains("head") && !o["head"].is_null()) iv.address.head = o["head"].get<int>();
            iv.address.positions = positions_from_json(o.value("positions", nlohmann::json("all")));
            iv.mode = edit_mode_from_string(o.value("mode", std::string("add")));
            iv.coefficient = o.value("coefficient", 1.0f);
            if (iv.mode != EditMode::Zero) {
                iv.payload_ref = o.at("payload_ref").get<std::string>();
                iv.payload = Tensor::row_vector(resolve(iv.payload_ref));
            }
            out.push_back(std::move(iv));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("interventions: ") + e.what());
        }
    }
    return out;
}

}  // namespace steerlab
