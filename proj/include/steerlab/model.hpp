#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "steerlab/address.hpp"
#include "steerlab/config.hpp"
#include "steerlab/interventions.hpp"
#include "steerlab/tensor.hpp"
#include "steerlab/tokenizer.hpp"

namespace steerlab {

struct LayerWeights {
    Tensor ln1_gain, ln1_bias;      // [1, d]
    Tensor qkv_weight, qkv_bias;    // [d, 3d], [1, 3d]
    Tensor attn_out_weight, attn_out_bias;  // [d, d], [1, d]
    Tensor ln2_gain, ln2_bias;      // [1, d]
    Tensor fc_weight, fc_bias;      // [d, d_mlp], [1, d_mlp]
    Tensor fc_out_weight, fc_out_bias;  // [d_mlp, d], [1, d]
};

struct ModelWeights {
    Tensor token_embedding;     // [vocab, d], tied with the unembedding
    Tensor position_embedding;  // [ctx, d]
    std::vector<LayerWeights> layers;
    Tensor final_ln_gain, final_ln_bias;
};

// Captured activations, keyed by position-free site. Shapes follow the site
// contract: [seq, d_model] for residual/MLP sites, [seq, d_head] per head.
class ActivationCache {
public:
    bool contains(const SiteKey& key) const { return entries_.contains(key); }
    bool contains(const ActivationAddress& a) const { return contains(SiteKey::of(a)); }
    // Throws InvalidAddress when not captured.
    const Tensor& at(const SiteKey& key) const;
    const Tensor& at(const ActivationAddress& a) const { return at(SiteKey::of(a)); }
    size_t size() const noexcept { return entries_.size(); }
    const std::map<SiteKey, Tensor>& entries() const noexcept { return entries_; }

    void put(const SiteKey& key, Tensor t) { entries_[key] = std::move(t); }

private:
    std::map<SiteKey, Tensor> entries_;
};

using CaptureSet = std::vector<ActivationAddress>;

struct ForwardResult {
    Tensor logits;  // [seq, vocab], or [1, vocab] with LogitsScope::Last
    ActivationCache cache;
};

enum class LogitsScope { All, Last };

struct GenerationConfig {
    enum class Mode { Greedy, Sample };

    int max_new_tokens = 32;
    Mode mode = Mode::Greedy;
    float temperature = 1.0f;  // sample mode only
    uint64_t seed = 0;         // sample mode only
    bool use_kv_cache = true;
    std::optional<TokenId> stop_token;

    nlohmann::json to_json() const;
    static GenerationConfig from_json(const nlohmann::json& j);
};

// Per-sequence key/value cache. Owned by one caller; never shared.
class DecodeState {
public:
    int length() const noexcept { return length_; }
    const std::vector<TokenId>& tokens() const noexcept { return tokens_; }

private:
    friend class Model;
    std::vector<Tensor> keys_;    // per layer [capacity, d_model]
    std::vector<Tensor> values_;  // per layer [capacity, d_model]
    std::vector<TokenId> tokens_;
    int length_ = 0;
};

// GPT-2 decoder with hook points. Weights are immutable after construction;
// every method is const and safe to call from many threads at once.
class Model {
public:
    // Throws InvalidConfig / ShapeMismatch / MissingTensor.
    Model(ModelConfig config, ModelWeights weights);

    // `config_path` is a JSON ModelConfig (either naming scheme) and
    // `weights_path` a safetensors file with GPT-2 tensor names.
    static Model load(const std::filesystem::path& config_path, const std::filesystem::path& weights_path);

    const ModelConfig& config() const noexcept { return config_; }
    const ModelWeights& weights() const noexcept { return weights_; }
    size_t parameter_count() const noexcept { return parameter_count_; }

    // Full pass over `ids`. Edits apply in list order at each hook; captures
    // record the value after edits. Throws ContextOverflow / InvalidAddress.
    ForwardResult forward(std::span<const TokenId> ids, const InterventionSet& interventions = {},
                          const CaptureSet& capture = {}, LogitsScope scope = LogitsScope::All) const;

    // Autoregressive decoding; returns only the new tokens.
    std::vector<TokenId> generate(std::span<const TokenId> prompt, const GenerationConfig& gen,
                                  const InterventionSet& interventions = {}) const;

    // --- incremental interface -------------------------------------------------

    DecodeState new_state() const;

    // Appends `ids` to `state` and returns logits for the new positions (or the
    // last one). Edits only touch positions being computed; captures hold the
    // new rows only.
    Tensor extend(DecodeState& state, std::span<const TokenId> ids, const InterventionSet& interventions = {},
                  LogitsScope scope = LogitsScope::Last, const CaptureSet& capture = {},
                  ActivationCache* cache = nullptr) const;

    // Computes one position p == prefix.length() from block `start_layer`
    // onward, given its resid_pre at that block, attending over the prefix's
    // cached keys/values. The prefix is not modified. Produces the same logits
    // row as a full pass whose edits touch only position p at blocks >=
    // start_layer. Captures are single-row.
    std::vector<float> step_from_layer(const DecodeState& prefix, int start_layer, std::span<const float> resid_pre,
                                       const InterventionSet& interventions = {}, const CaptureSet& capture = {},
                                       ActivationCache* cache = nullptr) const;

    // Independent continuations of one prefix: row i of `resid_pre` is position
    // prefix.length() entering block `start_layer`, edited by interventions[i].
    // Rows never see each other. Row i of the result equals
    // step_from_layer(prefix, start_layer, resid_pre.row(i), interventions[i]).
    Tensor step_batch_from_layer(const DecodeState& prefix, int start_layer, const Tensor& resid_pre,
                                 std::span<const InterventionSet> interventions) const;

    // Token embedding plus position embedding: resid_pre of block 0.
    std::vector<float> embed(TokenId token, int position) const;

private:
    struct Hooks;

    // independent: each row is its own continuation at first_position, with
    // hooks[row]; otherwise rows are consecutive positions sharing hooks[0].
    void run_block(int layer, Tensor& x, int first_position, const float* prefix_k, const float* prefix_v,
                   float* new_k, float* new_v, const Hooks* hooks, bool independent) const;
    void check_resume(const DecodeState& prefix, int start_layer) const;
    Tensor resume(const DecodeState& prefix, int start_layer, Tensor x, const Hooks* hooks) const;
    Tensor unembed(const Tensor& x, LogitsScope scope) const;

    ModelConfig config_;
    ModelWeights weights_;
    size_t parameter_count_ = 0;
};

// Log-softmax of the last row of `logits`.
std::vector<float> next_token_log_probs(const Tensor& logits);
std::vector<float> log_softmax(std::span<const float> row);

// Index of the largest entry; ties go to the lowest index.
TokenId argmax(std::span<const float> row);

// Bitwise equality of two float buffers.
bool bitwise_equal(std::span<const float> a, std::span<const float> b);

}  // namespace steerlab
