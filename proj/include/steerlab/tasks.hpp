#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "steerlab/model.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/tokenizer.hpp"

namespace steerlab {

// ---------------------------------------------------------------------------
// Antonym in-context learning

struct ICLExample {
    std::string question;
    std::string answer;

    bool operator==(const ICLExample&) const = default;
};

struct Dataset {
    std::vector<ICLExample> examples;
    std::vector<std::string> warnings;  // e.g. duplicate questions dropped
    std::string content_hash;           // sha256 of the normalized examples
};

// JSONL, one {"q": word, "a": word} per line. Lower-cases and trims; keeps the
// first occurrence of a repeated question. Throws ParseError naming the line.
Dataset parse_dataset(std::string_view jsonl);
Dataset load_dataset(const std::filesystem::path& path);

// "Q: {q}\nA: {a}\n\n" per shot, then "Q: {query}\nA:".
std::string build_icl_prompt(std::span<const ICLExample> shots, std::string_view query);

// k examples from `pool` excluding `query`, chosen by a seeded shuffle.
std::vector<ICLExample> select_shots(std::span<const ICLExample> pool, int k, uint64_t seed, const ICLExample& query);

// First token of " " + answer: the token scored at the answer position.
TokenId answer_token(const Tokenizer& tok, std::string_view answer);

struct AntonymScore {
    bool correct = false;
    float logp_correct = 0.0f;
    TokenId predicted = 0;
    TokenId correct_token = 0;
};

struct ScoreOptions {
    // Require the greedy continuation to reproduce every answer token, not
    // just the first.
    bool full_match = false;
};

// Throws InvalidArgument when the query is among the shots; ContextOverflow.
AntonymScore score_antonym(const Model& model, const Tokenizer& tok, std::span<const ICLExample> shots,
                           const ICLExample& query, const InterventionSet& interventions = {},
                           const ScoreOptions& opts = {});

struct AccuracyReport {
    int n_shots = 0;
    int n_queries = 0;
    int n_correct = 0;
    double accuracy = 0.0;
    double mean_logp = 0.0;
    std::vector<AntonymScore> items;

    nlohmann::json to_json() const;
};

// Scores each query with `n_shots` shots drawn from `pool` (seed mixed with the
// query index).
AccuracyReport evaluate_antonyms(const Model& model, const Tokenizer& tok, std::span<const ICLExample> queries,
                                 std::span<const ICLExample> pool, int n_shots, uint64_t seed,
                                 const InterventionSet& interventions = {}, const ScoreOptions& opts = {});

// ---------------------------------------------------------------------------
// Demographic scenarios

struct Demographic {
    std::string name;
    std::string ethnicity;
    std::string gender;
    std::string religion;
};

std::vector<Demographic> load_demographics(const std::filesystem::path& path);

struct ScenarioPrompt {
    std::string id;
    std::string template_text;
    std::map<std::string, std::string> slots;
    std::string filled_text;
    std::vector<std::string> steering_targets;
    std::vector<std::string> demographics;  // names of the variants used
};

// Replaces every {slot}; throws InvalidArgument if a marker is left unfilled.
std::string fill_template(std::string_view template_text, const std::map<std::string, std::string>& slots);

// JSON: [{id, template, slots, steering_targets, demographics?}] (or an object
// with a "scenarios" array).
std::vector<ScenarioPrompt> scenarios_from_json(const nlohmann::json& j);
std::vector<ScenarioPrompt> load_scenarios(const std::filesystem::path& path);

struct Continuation {
    std::vector<TokenId> tokens;
    std::string text;
};

struct AppliedTarget {
    std::string name;
    int layer = 0;
    float coefficient = 0.0f;
};

struct ComparisonRow {
    std::string scenario_id;
    std::string prompt;
    Continuation unsteered;
    Continuation steered;
    std::vector<AppliedTarget> targets;
};

struct ComparisonReport {
    GenerationConfig gen;
    std::vector<ComparisonRow> rows;

    nlohmann::json to_json() const;
    // Three columns: prompt | unsteered | steered.
    std::string to_markdown() const;
};

struct ScenarioSteering {
    int direction = +1;
    std::map<std::string, float> coefficient_overrides;
    SteeringOptions options;
};

// Throws MissingVector when a target has not been extracted into `store`.
ComparisonReport run_scenarios(const Model& model, const Tokenizer& tok, std::span<const ScenarioPrompt> scenarios,
                               const GenerationConfig& gen, const VectorStore& store,
                               const ScenarioSteering& steering = {});

}  // namespace steerlab
