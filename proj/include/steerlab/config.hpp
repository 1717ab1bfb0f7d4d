#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace steerlab {

// Shape of a GPT-2 family decoder. Layer and head counts always come from the
// checkpoint being loaded.
struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;
    int d_mlp = 0;
    int vocab_size = 0;
    int ctx_len = 0;
    float layer_norm_eps = 1e-5f;
    std::string model_id;

    // Throws InvalidConfig.
    void validate() const;

    // Accepts either the engine's own field names (n_layers, n_heads, d_model,
    // d_head, vocab_size, ctx_len, layer_norm_eps) or the Hugging Face GPT-2
    // config.json names (n_layer, n_head, n_embd, n_positions, ...).
    static ModelConfig from_json(const nlohmann::json& j);
    static ModelConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    bool operator==(const ModelConfig&) const = default;
};

}  // namespace steerlab
