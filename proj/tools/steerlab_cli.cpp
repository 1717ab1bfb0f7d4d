// steerlab: command-line front end. Every subcommand builds the same JSON
// request the HTTP service accepts and prints the engine's answer.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "steerlab/service.hpp"

using namespace steerlab;

namespace {

struct Common {
    std::string config_file;
    std::string model_dir, tokenizer_dir, store_dir, data_dir;
    bool json = false;
};

AppConfig make_config(const Common& c) {
    AppConfig cfg = c.config_file.empty() ? AppConfig{} : AppConfig::load(c.config_file);
    if (cfg.data_dir.empty()) cfg.data_dir = STEERLAB_DATA_DIR;
    if (cfg.store_dir.empty()) cfg.store_dir = ".steerlab";
    cfg.apply_env();
    if (!c.model_dir.empty()) cfg.model_dir = c.model_dir;
    if (!c.tokenizer_dir.empty()) cfg.tokenizer_dir = c.tokenizer_dir;
    if (!c.store_dir.empty()) cfg.store_dir = c.store_dir;
    if (!c.data_dir.empty()) cfg.data_dir = c.data_dir;
    if (cfg.tokenizer_dir.empty()) cfg.tokenizer_dir = cfg.data_dir / "gpt2";
    if (cfg.model_dir.empty()) throw InvalidArgument("no model: pass --model DIR or set STEERLAB_MODEL_DIR");
    return cfg;
}

std::string quote(const std::string& s) { return Json(s).dump(); }

void print_table(const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> width;
    for (const auto& r : rows)
        for (size_t i = 0; i < r.size(); ++i) {
            if (width.size() <= i) width.push_back(0);
            width[i] = std::max(width[i], r[i].size());
        }
    for (const auto& r : rows) {
        for (size_t i = 0; i < r.size(); ++i) {
            std::cout << r[i];
            if (i + 1 < r.size()) std::cout << std::string(width[i] - r[i].size() + 2, ' ');
        }
        std::cout << "\n";
    }
}

std::string fmt(double v, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

void print_human(const std::string& cmd, const Json& out) {
    if (cmd == "generate") {
        std::cout << out["text"].get<std::string>() << "\n";
    } else if (cmd == "steer") {
        for (const auto& t : out["targets"]) {
            std::cout << "target " << t["name"].get<std::string>() << " layer " << t["layer"] << " coefficient "
                      << fmt(t["coefficient"].get<double>(), "%+.2f") << "\n";
        }
        std::cout << "unsteered: " << quote(out["unsteered"]["text"]) << "\n";
        std::cout << "steered:   " << quote(out["steered"]["text"]) << "\n";
    } else if (cmd == "trace") {
        const auto& m = out["cie_matrix"];
        std::vector<std::vector<std::string>> rows{{"layer"}};
        for (size_t h = 0; h < m[0].size(); ++h) rows[0].push_back("h" + std::to_string(h));
        for (size_t l = 0; l < m.size(); ++l) {
            rows.push_back({std::to_string(l)});
            for (const auto& v : m[l]) rows.back().push_back(fmt(v.get<double>()));
        }
        print_table(rows);
        std::cout << "selected layers:";
        for (const auto& l : out["selected_layers"]) std::cout << " " << l;
        std::cout << "\n" << out["meta"].dump() << "\n";
        if (out.contains("files")) std::cout << "wrote " << out["files"]["csv"].get<std::string>() << "\n";
    } else if (cmd == "extract") {
        std::cout << "stored " << out["name"].get<std::string>() << " (" << out["id"].get<std::string>() << ") layer "
                  << out["layer"] << " norm " << fmt(out["norm"].get<double>()) << "\n";
    } else if (cmd == "sweep") {
        std::vector<std::vector<std::string>> rows{{"prompt", "coefficient", "probe_logprob", "continuation"}};
        for (const auto& r : out["rows"]) {
            rows.push_back({std::to_string(r["prompt_id"].get<int>()), fmt(r["coefficient"].get<double>(), "%+.2f"),
                            fmt(r["probe_logprob"].get<double>()), quote(r["continuation"])});
        }
        print_table(rows);
    } else if (cmd == "eval") {
        std::cout << out["n_correct"] << "/" << out["n_queries"] << " correct with " << out["n_shots"]
                  << " shots (accuracy " << fmt(out["accuracy"].get<double>()) << ", mean log p "
                  << fmt(out["mean_logp"].get<double>()) << ")\n";
    } else if (cmd == "scenarios") {
        std::cout << out["markdown"].get<std::string>();
    } else {
        std::cout << out.dump(2) << "\n";
    }
}

Json gen_json(int max_new, bool sample, float temperature, uint64_t seed, bool no_cache) {
    return {{"max_new_tokens", max_new},
            {"mode", sample ? "sample" : "greedy"},
            {"temperature", temperature},
            {"seed", seed},
            {"use_kv_cache", !no_cache}};
}

Json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return Json::parse(in);
}

Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Activation steering and causal tracing for GPT-2 style models", "steerlab"};
    app.set_version_flag("--version", engine_version());
    app.require_subcommand(1);
    app.fallthrough();  // global options may follow the subcommand

    Common common;
    app.add_option("--config", common.config_file, "JSON config file");
    app.add_option("--model", common.model_dir, "Model directory (config.json + model.safetensors)");
    app.add_option("--tokenizer", common.tokenizer_dir, "Tokenizer directory (vocab.json + merges.txt)");
    app.add_option("--store", common.store_dir, "Steering vector store directory");
    app.add_option("--data", common.data_dir, "Data directory (datasets, targets, scenarios)");
    app.add_flag("--json", common.json, "Print machine-readable JSON");

    Json req = Json::object();

    // generation flags shared by several subcommands
    int max_new = 32;
    bool sample = false, no_cache = false;
    float temperature = 1.0f;
    uint64_t gen_seed = 0;
    auto add_gen = [&](CLI::App* sub) {
        sub->add_option("--max-new", max_new, "Tokens to generate")->check(CLI::NonNegativeNumber);
        sub->add_flag("--sample", sample, "Sample instead of greedy decoding");
        sub->add_option("--temperature", temperature, "Sampling temperature")->check(CLI::PositiveNumber);
        sub->add_option("--seed", gen_seed, "Sampling seed");
        sub->add_flag("--no-kv-cache", no_cache, "Recompute the full sequence at every step");
    };

    std::string prompt;

    auto* gen = app.add_subcommand("generate", "Greedy or sampled continuation");
    std::string interventions_file;
    gen->add_option("--prompt", prompt, "Prompt text")->required();
    gen->add_option("--interventions", interventions_file, "JSON file with an intervention list");
    add_gen(gen);

    auto* steer = app.add_subcommand("steer", "Compare unsteered and steered continuations");
    std::vector<std::string> vectors;
    std::vector<float> coefs;
    int direction = 1;
    std::string positions = "all";
    steer->add_option("--prompt", prompt, "Prompt text")->required();
    steer->add_option("--vector", vectors, "Stored vector name (repeatable)")->required();
    steer->add_option("--coef", coefs, "Coefficient per --vector, in order (default: the vector's own)");
    steer->add_option("--direction", direction, "+1 or -1")->check(CLI::IsMember({-1, 1}));
    steer->add_option("--positions", positions, "all or last")->check(CLI::IsMember({"all", "last"}));
    add_gen(steer);

    auto* trace = app.add_subcommand("trace", "Per-head causal indirect effect map");
    std::string dataset = "antonyms.jsonl", ablation = "zero", trace_positions = "final", out_prefix;
    int n_examples = 0, shots = -1, threads = 1, top_k = 3;
    uint64_t seed = 0;
    trace->add_option("--dataset", dataset, "Antonym JSONL (name in the data dir or a path)");
    trace->add_option("--n-examples", n_examples, "Number of clean/corrupted experiments")->required()->check(
        CLI::PositiveNumber);
    trace->add_option("--ablation", ablation, "zero or mean")->check(CLI::IsMember({"zero", "mean"}));
    trace->add_option("--shots", shots, "Shots per prompt (default from config)");
    trace->add_option("--seed", seed, "Corruption and shot-selection seed");
    trace->add_option("--positions", trace_positions, "final or all")->check(CLI::IsMember({"final", "all"}));
    trace->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    trace->add_option("--top-k", top_k, "Layers to select")->check(CLI::PositiveNumber);
    trace->add_option("--out", out_prefix, "Write <out>.csv, <out>.png and <out>.json");

    auto* extract = app.add_subcommand("extract", "Extract a steering vector into the store");
    std::string target, name, negative_name, layer_mapping;
    std::vector<std::string> pair_texts;
    std::optional<int> layer;
    std::optional<float> default_coef;
    bool overwrite = false;
    extract->add_option("--target", target, "Shipped value target (e.g. Equality)");
    extract->add_option("--pair", pair_texts, "POSITIVE NEGATIVE prompt pair (repeatable)")->expected(2)->multi_option_policy(
        CLI::MultiOptionPolicy::TakeAll);
    extract->add_option("--layer", layer, "Residual layer");
    extract->add_option("--name", name, "Vector name");
    extract->add_option("--negative-name", negative_name, "Negative pole label");
    extract->add_option("--coef", default_coef, "Default coefficient");
    extract->add_option("--layer-mapping", layer_mapping, "exact or proportional")->check(
        CLI::IsMember({"exact", "proportional"}));
    extract->add_flag("--overwrite", overwrite, "Replace a vector with the same name");

    auto* vectors_cmd = app.add_subcommand("vectors", "List stored vectors");

    auto* sweep = app.add_subcommand("sweep", "Probe log-prob across coefficients");
    std::string sweep_vector, probe, prompts_file, csv_out;
    std::vector<float> sweep_coefs;
    double from = -5, to = 5, step = 1;
    int cont_tokens = 8;
    sweep->add_option("--vector", sweep_vector, "Stored vector name")->required();
    sweep->add_option("--coefs", sweep_coefs, "Explicit coefficient list");
    sweep->add_option("--from", from, "Range start");
    sweep->add_option("--to", to, "Range end");
    sweep->add_option("--step", step, "Range step")->check(CLI::PositiveNumber);
    sweep->add_option("--probe", probe, "Probe text (one token)");
    sweep->add_option("--prompts", prompts_file, "JSON prompt set (default: shipped set)");
    sweep->add_option("--continuation-tokens", cont_tokens, "Greedy tokens per row")->check(CLI::NonNegativeNumber);
    sweep->add_option("--csv", csv_out, "Also write the CSV here");

    auto* eval = app.add_subcommand("eval", "Antonym in-context accuracy");
    int n_queries = 50;
    bool full_match = false;
    eval->add_option("--dataset", dataset, "Antonym JSONL");
    eval->add_option("--queries", n_queries, "Held-out queries")->check(CLI::PositiveNumber);
    eval->add_option("--shots", shots, "Shots per prompt (default from config)");
    eval->add_option("--seed", seed, "Shot-selection seed");
    eval->add_flag("--full-match", full_match, "Require every answer token");

    auto* scen = app.add_subcommand("scenarios", "Steered vs unsteered demographic scenarios");
    std::string scenarios_file = "scenarios.json", markdown_out;
    std::vector<std::string> overrides;
    scen->add_option("--scenarios", scenarios_file, "Scenario JSON (name in the data dir or a path)");
    scen->add_option("--coef-override", overrides, "NAME=VALUE (repeatable)");
    scen->add_option("--direction", direction, "+1 or -1")->check(CLI::IsMember({-1, 1}));
    scen->add_option("--markdown", markdown_out, "Write the comparison table here");
    add_gen(scen);

    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    std::string host;
    int port = -1;
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks one)")->check(CLI::Range(0, 65535));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        if (cmd == "extract" && target.empty() && pair_texts.empty()) {
            std::cerr << "extract: pass --target NAME or at least one --pair POSITIVE NEGATIVE\n";
            return 2;
        }
        if (cmd == "extract" && !pair_texts.empty() && (name.empty() || !layer)) {
            std::cerr << "extract: --pair needs --name and --layer\n";
            return 2;
        }

        const AppConfig cfg = make_config(common);
        Engine engine(cfg);
        const auto t0 = std::chrono::steady_clock::now();
        Json out;
        if (cmd == "generate") {
            req = {{"prompt", prompt}, {"gen_config", gen_json(max_new, sample, temperature, gen_seed, no_cache)}};
            if (!interventions_file.empty()) req["interventions"] = read_json(interventions_file);
            out = engine.generate(req);
        } else if (cmd == "steer") {
            if (!coefs.empty() && coefs.size() != vectors.size()) {
                std::cerr << "steer: --coef must be given once per --vector\n";
                return 2;
            }
            Json targets = Json::array();
            for (size_t i = 0; i < vectors.size(); ++i) {
                Json t = {{"name", vectors[i]}};
                if (!coefs.empty()) t["coefficient"] = coefs[i];
                targets.push_back(t);
            }
            req = {{"prompt", prompt},
                   {"targets", targets},
                   {"direction", direction},
                   {"positions", positions},
                   {"gen_config", gen_json(max_new, sample, temperature, gen_seed, no_cache)}};
            out = engine.steer(req);
        } else if (cmd == "trace") {
            req = {{"dataset_ref", dataset},     {"n_examples", n_examples}, {"ablation_mode", ablation},
                   {"seed", seed},               {"positions", trace_positions}, {"n_threads", threads},
                   {"top_k", top_k}};
            if (shots >= 0) req["n_shots"] = shots;
            if (!out_prefix.empty()) req["export_prefix"] = out_prefix;
            out = engine.trace(req);
        } else if (cmd == "extract") {
            if (!target.empty()) {
                req["target"] = target;
                if (!name.empty()) req["name"] = name;
            } else {
                Json pairs = Json::array();
                for (size_t i = 0; i + 1 < pair_texts.size(); i += 2) {
                    pairs.push_back({{"positive", pair_texts[i]}, {"negative", pair_texts[i + 1]}});
                }
                req = {{"pairs", pairs}, {"name", name}, {"negative_name", negative_name}};
            }
            if (layer) req["layer"] = *layer;
            if (default_coef) req["default_coefficient"] = *default_coef;
            if (!layer_mapping.empty()) req["layer_mapping"] = layer_mapping;
            req["overwrite"] = overwrite;
            out = engine.extract(req);
        } else if (cmd == "vectors") {
            out = {{"vectors", engine.vectors()}};
        } else if (cmd == "sweep") {
            req = {{"vector", sweep_vector}, {"continuation_tokens", cont_tokens}};
            if (!sweep_coefs.empty()) req["coefficients"] = sweep_coefs;
            else req["range"] = {{"from", from}, {"to", to}, {"step", step}};
            if (!prompts_file.empty()) {
                const Json pf = read_json(prompts_file);
                req["prompts"] = pf.at("prompts");
                if (probe.empty() && pf.contains("probe")) probe = pf["probe"].get<std::string>();
            }
            if (!probe.empty()) req["probe"] = probe;
            out = engine.sweep(req);
            if (!csv_out.empty()) std::ofstream(csv_out) << out["csv"].get<std::string>();
        } else if (cmd == "eval") {
            req = {{"dataset_ref", dataset}, {"n_queries", n_queries}, {"seed", seed}, {"full_match", full_match}};
            if (shots >= 0) req["n_shots"] = shots;
            out = engine.eval(req);
        } else if (cmd == "scenarios") {
            req = {{"scenarios_ref", scenarios_file},
                   {"direction", direction},
                   {"gen_config", gen_json(max_new, sample, temperature, gen_seed, no_cache)}};
            Json ov = Json::object();
            for (const auto& o : overrides) {
                const auto eq = o.find('=');
                if (eq == std::string::npos) {
                    std::cerr << "--coef-override: expected NAME=VALUE, got '" << o << "'\n";
                    return 2;
                }
                ov[o.substr(0, eq)] = std::stof(o.substr(eq + 1));
            }
            req["coefficient_overrides"] = ov;
            out = engine.scenarios(req);
            if (!markdown_out.empty()) std::ofstream(markdown_out) << out["markdown"].get<std::string>();
        } else if (cmd == "serve") {
            Server server(engine);
            const int bound = server.bind(host.empty() ? cfg.bind_host : host, port < 0 ? cfg.port : port);
            std::cerr << "listening on " << (host.empty() ? cfg.bind_host : host) << ":" << bound << "\n";
            g_server = &server;
            std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
            std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
            server.listen();
            g_server = nullptr;
            return 0;
        }
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (common.json) {
            std::cout << engine.envelope(out, ms).dump(2) << "\n";
        } else {
            print_human(cmd, out);
        }
        (void)vectors_cmd;
        return 0;
    } catch (...) {
        const ErrorInfo e = classify_error(std::current_exception());
        if (common.json) {
            std::cout << Json{{"error", {{"kind", e.kind}, {"message", e.message}}}}.dump(2) << "\n";
        }
        std::cerr << "error (" << e.kind << "): " << e.message << "\n";
        return 1;
    }
}
