#include "steerlab/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "steerlab/errors.hpp"
#include "steerlab/hashing.hpp"

namespace steerlab {

namespace {

std::string normalize_word(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace

Dataset parse_dataset(std::string_view jsonl) {
    Dataset ds;
    std::set<std::string> seen;
    Sha256 hash;
    int line_no = 0;
    size_t pos = 0;
    while (pos < jsonl.size()) {
        size_t eol = jsonl.find('\n', pos);
        if (eol == std::string_view::npos) eol = jsonl.size();
        const std::string line(jsonl.substr(pos, eol - pos));
        pos = eol + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        const std::string where = "dataset line " + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw ParseError(where + ": not valid JSON");
        }
        if (!j.is_object() || !j.contains("q") || !j.contains("a") || !j["q"].is_string() || !j["a"].is_string()) {
            throw ParseError(where + ": expected {\"q\": string, \"a\": string}");
        }
        ICLExample ex{normalize_word(j["q"].get<std::string>()), normalize_word(j["a"].get<std::string>())};
        for (const std::string* w : {&ex.question, &ex.answer}) {
            if (w->empty() || std::any_of(w->begin(), w->end(), [](unsigned char c) { return std::isspace(c); })) {
                throw ParseError(where + ": question and answer must be single non-empty words");
            }
        }
        if (!seen.insert(ex.question).second) {
            ds.warnings.push_back(where + ": duplicate question '" + ex.question + "' ignored");
            continue;
        }
        hash.update(ex.question).update("\t").update(ex.answer).update("\n");
        ds.examples.push_back(std::move(ex));
    }
    ds.content_hash = hash.hex();
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_dataset(ss.str());
}

std::string build_icl_prompt(std::span<const ICLExample> shots, std::string_view query) {
    std::string out;
    for (const auto& s : shots) {
        out += "Q: " + s.question + "\nA: " + s.answer + "\n\n";
    }
    out += "Q: ";
    out += query;
    out += "\nA:";
    return out;
}

std::vector<ICLExample> select_shots(std::span<const ICLExample> pool, int k, uint64_t seed, const ICLExample& query) {
    std::vector<ICLExample> candidates;
    for (const auto& ex : pool) {
        if (ex.question != query.question) candidates.push_back(ex);
    }
    SplitRng rng(seed);
    for (size_t i = candidates.size(); i > 1; --i) {
        std::swap(candidates[i - 1], candidates[size_t(rng.below(i))]);
    }
    if (k < static_cast<int>(candidates.size())) candidates.resize(size_t(std::max(k, 0)));
    return candidates;
}

TokenId answer_token(const Tokenizer& tok, std::string_view answer) {
    const auto ids = tok.encode(" " + std::string(answer));
    if (ids.empty()) throw InvalidArgument("empty answer");
    return ids.front();
}

AntonymScore score_antonym(const Model& model, const Tokenizer& tok, std::span<const ICLExample> shots,
                           const ICLExample& query, const InterventionSet& interventions, const ScoreOptions& opts) {
    for (const auto& s : shots) {
        if (s.question == query.question) {
            throw InvalidArgument("query '" + query.question + "' appears among the shots");
        }
    }
    const auto ids = tok.encode(build_icl_prompt(shots, query.question));
    const auto answer_ids = tok.encode(" " + query.answer);

    const ForwardResult r = model.forward(ids, interventions, {}, LogitsScope::Last);
    const auto logp = next_token_log_probs(r.logits);
    AntonymScore s;
    s.correct_token = answer_ids.front();
    s.predicted = argmax(logp);
    s.logp_correct = logp[size_t(s.correct_token)];
    s.correct = s.predicted == s.correct_token;
    if (opts.full_match && s.correct && answer_ids.size() > 1) {
        GenerationConfig gen;
        gen.max_new_tokens = static_cast<int>(answer_ids.size());
        s.correct = model.generate(ids, gen, interventions) == answer_ids;
    }
    return s;
}

AccuracyReport evaluate_antonyms(const Model& model, const Tokenizer& tok, std::span<const ICLExample> queries,
                                 std::span<const ICLExample> pool, int n_shots, uint64_t seed,
                                 const InterventionSet& interventions, const ScoreOptions& opts) {
    AccuracyReport rep;
    rep.n_shots = n_shots;
    double logp_sum = 0.0;
    for (size_t i = 0; i < queries.size(); ++i) {
        const auto shots = select_shots(pool, n_shots, seed + i, queries[i]);
        AntonymScore s = score_antonym(model, tok, shots, queries[i], interventions, opts);
        rep.n_correct += s.correct ? 1 : 0;
        logp_sum += s.logp_correct;
        rep.items.push_back(s);
    }
    rep.n_queries = static_cast<int>(queries.size());
    if (rep.n_queries > 0) {
        rep.accuracy = double(rep.n_correct) / rep.n_queries;
        rep.mean_logp = logp_sum / rep.n_queries;
    }
    return rep;
}

nlohmann::json AccuracyReport::to_json() const {
    nlohmann::json items_json = nlohmann::json::array();
    for (const auto& s : items) {
        items_json.push_back({{"correct", s.correct},
                              {"logp_correct", s.logp_correct},
                              {"predicted", s.predicted},
                              {"correct_token", s.correct_token}});
    }
    return {{"n_shots", n_shots},   {"n_queries", n_queries}, {"n_correct", n_correct},
            {"accuracy", accuracy}, {"mean_logp", mean_logp}, {"items", items_json}};
}

// ---------------------------------------------------------------------------
// Scenarios

std::vector<Demographic> load_demographics(const std::filesystem::path& path) {
    const auto j = read_json_file(path);
    std::vector<Demographic> out;
    try {
        for (const auto& d : j.at("variants")) {
            out.push_back({d.at("name").get<std::string>(), d.value("ethnicity", std::string()),
                           d.value("gender", std::string()), d.value("religion", std::string())});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return out;
}

std::string fill_template(std::string_view template_text, const std::map<std::string, std::string>& slots) {
    std::string out(template_text);
    for (const auto& [key, value] : slots) {
        const std::string marker = "{" + key + "}";
        size_t p = 0;
        while ((p = out.find(marker, p)) != std::string::npos) {
            out.replace(p, marker.size(), value);
            p += value.size();
        }
    }
    static const std::regex unfilled(R"(\{[A-Za-z_][A-Za-z0-9_]*\})");
    std::smatch m;
    if (std::regex_search(out, m, unfilled)) {
        throw InvalidArgument("template slot " + m.str() + " was not filled");
    }
    return out;
}

std::vector<ScenarioPrompt> scenarios_from_json(const nlohmann::json& root) {
    const nlohmann::json& arr = root.is_object() && root.contains("scenarios") ? root["scenarios"] : root;
    if (!arr.is_array()) throw ParseError("scenarios: expected an array");
    std::vector<ScenarioPrompt> out;
    try {
        for (size_t i = 0; i < arr.size(); ++i) {
            const auto& s = arr[i];
            ScenarioPrompt p;
            p.id = s.value("id", "scenario_" + std::to_string(i));
            p.template_text = s.at("template").get<std::string>();
            if (s.contains("slots")) p.slots = s["slots"].get<std::map<std::string, std::string>>();
            p.steering_targets = s.value("steering_targets", std::vector<std::string>{});
            p.demographics = s.value("demographics", std::vector<std::string>{});
            p.filled_text = fill_template(p.template_text, p.slots);
            out.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("scenarios: ") + e.what());
    }
    return out;
}

std::vector<ScenarioPrompt> load_scenarios(const std::filesystem::path& path) {
    return scenarios_from_json(read_json_file(path));
}

ComparisonReport run_scenarios(const Model& model, const Tokenizer& tok, std::span<const ScenarioPrompt> scenarios,
                               const GenerationConfig& gen, const VectorStore& store,
                               const ScenarioSteering& steering) {
    ComparisonReport rep;
    rep.gen = gen;
    for (const auto& sc : scenarios) {
        std::vector<SteeringVector> vectors;
        for (const auto& name : sc.steering_targets) vectors.push_back(store.get(name));

        std::vector<SteeringChoice> choices;
        ComparisonRow row;
        for (const auto& v : vectors) {
            std::optional<float> override_coef;
            if (auto it = steering.coefficient_overrides.find(v.name); it != steering.coefficient_overrides.end()) {
                override_coef = it->second;
            }
            choices.push_back({&v, override_coef});
            row.targets.push_back(
                {v.name, v.layer, float(steering.direction) * override_coef.value_or(v.default_coefficient)});
        }
        const InterventionSet set = build_steering_set(choices, steering.direction, steering.options);

        const auto ids = tok.encode(sc.filled_text);
        row.scenario_id = sc.id;
        row.prompt = sc.filled_text;
        row.unsteered.tokens = model.generate(ids, gen);
        row.unsteered.text = tok.decode(row.unsteered.tokens);
        row.steered.tokens = model.generate(ids, gen, set);
        row.steered.text = tok.decode(row.steered.tokens);
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

nlohmann::json ComparisonReport::to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json targets = nlohmann::json::array();
        for (const auto& t : r.targets) {
            targets.push_back({{"name", t.name}, {"layer", t.layer}, {"coefficient", t.coefficient}});
        }
        rows_json.push_back({{"scenario_id", r.scenario_id},
                             {"prompt", r.prompt},
                             {"unsteered", {{"tokens", r.unsteered.tokens}, {"text", r.unsteered.text}}},
                             {"steered", {{"tokens", r.steered.tokens}, {"text", r.steered.text}}},
                             {"targets", targets}});
    }
    return {{"gen_config", gen.to_json()}, {"rows", rows_json}};
}

namespace {

std::string md_cell(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += "\\|";
        else if (c == '\n') out += "<br>";
        else out.push_back(c);
    }
    return out;
}

}  // namespace

std::string ComparisonReport::to_markdown() const {
    std::string out = "| Initial Prompt | Unsteered Output | Steered Output |\n|---|---|---|\n";
    for (const auto& r : rows) {
        std::string label = "(Steered towards ";
        for (size_t i = 0; i < r.targets.size(); ++i) {
            if (i) label += " and ";
            char coef[32];
            std::snprintf(coef, sizeof(coef), "%+.1f", r.targets[i].coefficient);
            label += r.targets[i].name + " " + coef + " @L" + std::to_string(r.targets[i].layer);
        }
        label += "): ";
        out += "| " + md_cell(r.prompt) + " | " + md_cell(r.unsteered.text) + " | " + md_cell(label + r.steered.text) +
               " |\n";
    }
    return out;
}

}  // namespace steerlab
