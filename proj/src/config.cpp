#include "steerlab/config.hpp"

#include <fstream>

#include "steerlab/errors.hpp"

namespace steerlab {

namespace {

int pick_int(const nlohmann::json& j, std::initializer_list<const char*> names, int fallback) {
    for (const char* n : names) {
        if (j.contains(n) && j[n].is_number_integer()) return j[n].get<int>();
    }
    return fallback;
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_head < 1 || d_mlp < 1 || vocab_size < 1 || ctx_len < 1) {
        throw InvalidConfig("model config: all counts must be >= 1");
    }
    if (d_model != n_heads * d_head) {
        throw InvalidConfig("model config: d_model (" + std::to_string(d_model) + ") != n_heads * d_head (" +
                            std::to_string(n_heads) + " * " + std::to_string(d_head) + ")");
    }
    if (!(layer_norm_eps > 0.0f)) {
        throw InvalidConfig("model config: layer_norm_eps must be positive");
    }
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ParseError("model config: expected a JSON object");
    }
    ModelConfig c;
    c.n_layers = pick_int(j, {"n_layers", "n_layer", "num_hidden_layers"}, 0);
    c.n_heads = pick_int(j, {"n_heads", "n_head", "num_attention_heads"}, 0);
    c.d_model = pick_int(j, {"d_model", "n_embd", "hidden_size"}, 0);
    c.vocab_size = pick_int(j, {"vocab_size"}, 0);
    c.ctx_len = pick_int(j, {"ctx_len", "n_positions", "n_ctx", "max_position_embeddings"}, 0);
    c.d_head = pick_int(j, {"d_head"}, c.n_heads > 0 ? c.d_model / c.n_heads : 0);
    c.d_mlp = pick_int(j, {"d_mlp", "n_inner"}, 4 * c.d_model);
    for (const char* n : {"layer_norm_eps", "layer_norm_epsilon"}) {
        if (j.contains(n) && j[n].is_number()) c.layer_norm_eps = j[n].get<float>();
    }
    for (const char* n : {"model_id", "_name_or_path"}) {
        if (j.contains(n) && j[n].is_string() && !j[n].get<std::string>().empty()) {
            c.model_id = j[n].get<std::string>();
            break;
        }
    }
    c.validate();
    return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    ModelConfig c = from_json(j);
    if (c.model_id.empty()) c.model_id = path.parent_path().filename().string();
    return c;
}

nlohmann::json ModelConfig::to_json() const {
    return {{"n_layers", n_layers},     {"n_heads", n_heads}, {"d_model", d_model},
            {"d_head", d_head},         {"d_mlp", d_mlp},     {"vocab_size", vocab_size},
            {"ctx_len", ctx_len},       {"layer_norm_eps", layer_norm_eps}, {"model_id", model_id}};
}

}  // namespace steerlab
