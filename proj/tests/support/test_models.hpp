#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "steerlab/causal.hpp"
#include "steerlab/model.hpp"
#include "steerlab/tokenizer.hpp"

namespace steerlab::testing {

// Random weights of the given shape (normal, std `scale`), seeded.
ModelWeights random_weights(const ModelConfig& cfg, uint64_t seed, float scale = 0.1f);

// 2 layers, 4 heads, d_model 32, GPT-2 vocabulary: small enough for unit tests,
// compatible with the real tokenizer.
ModelConfig tiny_config(int vocab_size = 50257);
Model tiny_model(uint64_t seed = 7, int vocab_size = 50257);

// Two-layer induction circuit with a planted answer-copying head.
//
// Sequences are question/answer pairs followed by a query that repeats one of
// the questions. Layer 0 head 0 writes the previous token into each position;
// planted_head of layer 1 matches the query against that, then copies the
// token that followed the query's earlier occurrence into the unembedding
// direction. All other heads carry small random weights. Layer norms run in a
// (very large epsilon) linear regime so the circuit is exact by construction.
struct PlantedModel {
    static constexpr int kLayer = 1;
    static constexpr int kHead = 2;
    static constexpr int kQuestions = 6;  // tokens 0..5 are questions, 6..11 answers

    Model model;
    static PlantedModel build(uint64_t seed = 11);
};

// Clean: pairs (q_i, a_i) then a repeated question. Corrupted: answers
// deranged, same length. correct_token is the query's true answer.
std::vector<PatchExperiment> planted_experiments(int n, uint64_t seed, int n_pairs = 4);

// Loads the real GPT-2 tokenizer shipped under data/gpt2.
const Tokenizer& gpt2_tokenizer();

std::filesystem::path data_dir();
std::filesystem::path fixtures_dir();
// Checkpoint used for the GPT-2-small-scale tests: STEERLAB_GPT2_DIR if set,
// otherwise the seeded checkpoint generated into the build tree.
std::filesystem::path reference_model_dir();

// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

}  // namespace steerlab::testing
