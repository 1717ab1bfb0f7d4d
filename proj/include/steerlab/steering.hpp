#pragma once

#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerlab/interventions.hpp"
#include "steerlab/model.hpp"
#include "steerlab/tokenizer.hpp"

namespace steerlab {

struct ContrastPair {
    std::string positive_text;
    std::string negative_text;

    bool operator==(const ContrastPair&) const = default;
};

// A residual-stream direction plus where it came from.
struct SteeringVector {
    std::string name;           // positive pole label, e.g. "Equality"
    std::string negative_name;  // e.g. "Inequality"; may be empty
    int layer = 0;
    float default_coefficient = 1.0f;
    std::vector<float> vector;
    double norm = 0.0;
    std::vector<ContrastPair> pairs;
    std::string position_policy = "last";
    std::string model_id;
    // Provenance note; shipped pole prompts are artifact-defined.
    std::string pole_source = "artifact-defined";
    // Set when the layer was mapped from a configured index for another depth.
    std::optional<int> configured_layer;
    std::string layer_mapping = "exact";
    // Content hash, assigned by VectorStore::save.
    std::string id;

    double recompute_norm() const;
    nlohmann::json metadata() const;
    static SteeringVector from_metadata(const nlohmann::json& meta, std::vector<float> payload);
};

struct ExtractOptions {
    std::string name;
    std::string negative_name;
    float default_coefficient = 1.0f;
};

// Mean over pairs of resid_pre(layer) at the last token of the positive prompt
// minus the same for the negative prompt. Throws InvalidArgument (no pairs,
// empty prompt), InvalidAddress (layer), ContextOverflow.
SteeringVector extract_steering_vector(const Model& model, const Tokenizer& tok, std::span<const ContrastPair> pairs,
                                       int layer, const ExtractOptions& opts = {});

struct SteeringChoice {
    const SteeringVector* vector = nullptr;
    std::optional<float> coefficient;  // overrides default_coefficient
};

struct SteeringOptions {
    Positions positions = Positions::all();
    Site site = Site::ResidPre;
    // Scale to unit length before applying the coefficient.
    bool normalize = false;
};

// One Add per vector at its layer with coefficient
// direction * (override or default). direction must be +1 or -1.
// Throws DimensionMismatch when vector widths differ.
InterventionSet build_steering_set(std::span<const SteeringChoice> choices, int direction,
                                   const SteeringOptions& opts = {});

struct SweepRow {
    int prompt_id = 0;
    std::string prompt;
    float coefficient = 0.0f;
    float probe_logprob = 0.0f;
    std::vector<TokenId> continuation_ids;
    std::string continuation;
};

struct SweepReport {
    std::string vector_name;
    TokenId probe_token = 0;
    std::vector<SweepRow> rows;  // prompt-major, coefficients in the given order

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

struct SweepOptions {
    int continuation_tokens = 8;
    SteeringOptions steering;
};

SweepReport sweep_coefficients(const Model& model, const Tokenizer& tok, const SteeringVector& vector,
                               std::span<const float> coefficients, std::span<const std::string> prompts,
                               TokenId probe_token, const SweepOptions& opts = {});

// Directory-backed store: <root>/vectors/<hash>.json + <root>/vectors/<hash>.f32
// (little-endian float32 payload). One writer at a time, any number of readers.
class VectorStore {
public:
    explicit VectorStore(std::filesystem::path root);

    // Returns the content hash. Throws NameCollision when a different vector
    // already uses the name and `overwrite` is false.
    std::string save(SteeringVector v, bool overwrite = false);

    std::vector<SteeringVector> list() const;
    std::optional<SteeringVector> find(const std::string& name_or_id) const;
    // Throws MissingVector.
    SteeringVector get(const std::string& name_or_id) const;
    bool contains(const std::string& name_or_id) const { return find(name_or_id).has_value(); }

    const std::filesystem::path& root() const noexcept { return root_; }

    // Resolver for interventions_from_json.
    PayloadResolver resolver() const;

private:
    std::vector<SteeringVector> list_unlocked() const;

    std::filesystem::path root_;
    mutable std::shared_mutex mu_;
};

// --- shipped value-target fixtures ---------------------------------------------

struct SteeringTarget {
    std::string name;
    std::string negative_name;
    std::optional<int> layer;  // absent: chosen at run time (e.g. from a CIE map)
    float default_coefficient = 1.0f;
    std::vector<ContrastPair> pairs;
};

struct ReferenceDepth {
    int n_layers = 0;
    int n_heads = 0;
    double n_params = 0.0;
};

struct TargetCatalog {
    std::vector<SteeringTarget> targets;
    // Depth the configured layer indices were chosen for.
    ReferenceDepth reference;

    static TargetCatalog load(const std::filesystem::path& path);
    static TargetCatalog from_json(const nlohmann::json& j);
    const SteeringTarget& get(const std::string& name) const;
};

enum class LayerMapping { Exact, Proportional };

// Maps a configured layer index onto a model with `n_layers` blocks. Exact
// throws InvalidAddress when out of range; Proportional rescales by
// n_layers / reference_layers.
int map_layer(int configured, int n_layers, int reference_layers, LayerMapping mapping);

// Human-readable note comparing the loaded model with the catalog's reference
// depth, listing how each configured layer lands.
std::string depth_diagnostics(const ModelConfig& cfg, const TargetCatalog& catalog, LayerMapping mapping);

}  // namespace steerlab
