#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerlab/model.hpp"
#include "steerlab/tasks.hpp"
#include "steerlab/tokenizer.hpp"

namespace steerlab {

// A clean ICL prompt and its corrupted twin. Both have the same length and
// differ only in the shot answers; the query and its answer are shared.
struct PatchExperiment {
    std::vector<TokenId> clean_ids;
    std::vector<TokenId> corrupted_ids;
    TokenId correct_token = 0;
    ICLExample query;
};

struct CorruptionOptions {
    int n_shots = 10;
    // 0 means one experiment per dataset example.
    int n_examples = 0;
};

// Shot answers are replaced through a seeded derangement of the dataset's
// answers within token-length classes, so clean and corrupted prompts align
// token for token. Throws CannotAlign when an answer has no same-length
// partner or the two prompts end up with different lengths.
std::vector<PatchExperiment> build_corrupted_set(std::span<const ICLExample> dataset, const Tokenizer& tok,
                                                 uint64_t seed, const CorruptionOptions& opts = {});

struct PatchScore {
    float logp_corrupted = 0.0f;  // log p(correct) on the corrupted run
    float logp_patched = 0.0f;    // same, with the clean activation patched in
    float delta = 0.0f;           // logp_patched - logp_corrupted
};

// Captures `address` on the clean run and writes it into the corrupted run at
// the positions the address selects. `extra` edits apply to both corrupted runs
// (before the patch) but not to the clean one. Throws CannotAlign on length
// mismatch.
PatchScore patch_and_score(const Model& model, const PatchExperiment& exp, const ActivationAddress& address,
                           const InterventionSet& extra = {});

enum class AblationMode { Zero, Mean };

std::string to_string(AblationMode m);
AblationMode ablation_from_string(const std::string& s);

struct CIEOptions {
    AblationMode ablation = AblationMode::Zero;
    // Patch (and ablate) every position instead of only the final one.
    bool all_positions = false;
    int n_threads = 1;
};

// Mean causal indirect effect per (layer, head).
struct CIEMap {
    Tensor values;  // [n_layers, n_heads]
    int n_examples = 0;
    AblationMode ablation = AblationMode::Zero;
    bool all_positions = false;
    std::string dataset_hash;
    std::string model_id;

    nlohmann::json meta() const;
    // Header "layer,h0,h1,..." then one row per layer.
    std::string to_csv() const;
};

// For every head (l, h): corrupted run with the other heads of layer l ablated,
// with and without head h's clean output patched in; the cell is the mean of
// the difference in log p(correct) over experiments, reduced in experiment
// order. Results do not depend on n_threads.
CIEMap compute_cie_map(const Model& model, std::span<const PatchExperiment> experiments, const CIEOptions& opts = {});

// Same quantity through full forward passes; slow, used as a cross-check.
CIEMap compute_cie_map_reference(const Model& model, std::span<const PatchExperiment> experiments,
                                 const CIEOptions& opts = {});

// Hash of the experiments' token ids and answers.
std::string experiments_hash(std::span<const PatchExperiment> experiments);

// Top-k layers by their strongest head, returned in ascending layer order.
// Ties prefer the lower layer.
std::vector<int> select_layers(const CIEMap& map, int k);

}  // namespace steerlab
