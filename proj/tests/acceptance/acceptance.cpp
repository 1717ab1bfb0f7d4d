// Acceptance checks, one line per criterion:
//   criterion N: PASS|FAIL  <detail>
// Exit status is 0 only when every requested criterion passes.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "steerlab/causal.hpp"
#include "steerlab/errors.hpp"
#include "steerlab/hashing.hpp"
#include "steerlab/heatmap.hpp"
#include "steerlab/service.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/tasks.hpp"
#include "test_models.hpp"

using namespace steerlab;
namespace fs = std::filesystem;
namespace st = steerlab::testing;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

fs::path g_out = "acceptance_out";

const Model& reference_model() {
    static const Model m = [] {
        const fs::path dir = st::reference_model_dir();
        return Model::load(dir / "config.json", dir / "model.safetensors");
    }();
    return m;
}

// The seeded stand-in has the shape of GPT-2 small but untrained weights.
bool stand_in_checkpoint() { return reference_model().config().model_id.starts_with("gpt2-small-seeded"); }

std::string checkpoint_note() {
    return stand_in_checkpoint() ? " [checkpoint: seeded stand-in '" + reference_model().config().model_id + "']"
                                 : " [checkpoint: '" + reference_model().config().model_id + "']";
}

std::string file_sha256(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    Sha256 h;
    std::vector<char> buf(1 << 20);
    while (in) {
        in.read(buf.data(), std::streamsize(buf.size()));
        h.update(std::string_view(buf.data(), size_t(in.gcount())));
    }
    return h.hex();
}

// ---------------------------------------------------------------------------

Outcome criterion_parity() {
    std::ifstream in(st::fixtures_dir() / "parity_reference.json");
    const auto fx = nlohmann::json::parse(in);
    const std::string sha = file_sha256(st::reference_model_dir() / "model.safetensors");
    if (sha != fx["model_sha256"]) {
        return {false, "fixture was generated for a different checkpoint (sha256 " + sha.substr(0, 12) +
                           "); regenerate it with scripts/make_parity_fixture.py"};
    }
    const auto t0 = Clock::now();
    const Model& m = reference_model();
    const auto probes = fx["probe_ids"].get<std::vector<int>>();
    double worst = 0.0;
    int argmax_ok = 0, n = 0;
    for (const auto& c : fx["cases"]) {
        const auto ids = c["ids"].get<std::vector<TokenId>>();
        const Tensor logits = m.forward(ids).logits;
        const auto& rows = c["probe_logits"];
        for (int p = 0; p < logits.rows(); ++p) {
            for (size_t k = 0; k < probes.size(); ++k) {
                worst = std::max(worst, std::abs(double(logits.at(p, probes[k])) - rows[size_t(p)][k].get<double>()));
            }
        }
        const auto last = logits.row(logits.rows() - 1);
        for (const auto& t : c["top5"]) {
            worst = std::max(worst, std::abs(double(last[t["id"].get<size_t>()]) - t["logit"].get<double>()));
        }
        argmax_ok += argmax(last) == c["argmax"].get<TokenId>();
        ++n;
    }
    const double secs = seconds_since(t0);
    const bool pass = worst < 1e-3 && argmax_ok == n && secs < 60.0;
    return {pass, fmt("max |logit diff| %.3g over %d prompts (< 1e-3), argmax %d/%d, %.1f s (< 60 s)", worst, n,
                      argmax_ok, n, secs) +
                      checkpoint_note()};
}

// ---------------------------------------------------------------------------

Outcome criterion_identities() {
    const Model& m = reference_model();
    const auto& cfg = m.config();
    const auto& tok = st::gpt2_tokenizer();
    const auto ids = tok.encode("The committee reviewed every application before the deadline, and then");
    std::vector<std::string> failures;

    // (a)
    CaptureSet everything;
    for (int l = 0; l < cfg.n_layers; ++l) {
        everything.push_back(ActivationAddress::resid_pre(l));
        everything.push_back(ActivationAddress::mlp_out(l));
        everything.push_back(ActivationAddress::resid_post(l));
        for (int h = 0; h < cfg.n_heads; ++h) everything.push_back(ActivationAddress::head_out(l, h));
    }
    const Tensor plain = m.forward(ids).logits;
    const bool a = bitwise_equal(plain.flat(), m.forward(ids, InterventionSet{}, everything).logits.flat());
    if (!a) failures.push_back("(a)");

    // (b)
    const std::vector<ContrastPair> pairs{{"I love this", "I hate this"}, {"Love wins", "Hate wins"}};
    const SteeringVector v = extract_steering_vector(m, tok, pairs, cfg.n_layers / 2, {"Love", "Hate", 1.0f});
    GenerationConfig gen;
    gen.max_new_tokens = 20;
    const std::vector<SteeringChoice> zero{{&v, 0.0f}};
    const auto unsteered = m.generate(ids, gen);
    const bool b = unsteered == m.generate(ids, gen, build_steering_set(zero, +1)) &&
                   unsteered == m.generate(ids, gen, build_steering_set(zero, -1));
    if (!b) failures.push_back("(b)");

    // (c)
    std::mt19937_64 rng(2024);
    PatchExperiment self{ids, ids, tok.encode(" the").front(), {}};
    int exact = 0;
    std::string worst_addr;
    for (int i = 0; i < 20; ++i) {
        const int layer = int(rng() % uint64_t(cfg.n_layers));
        const int kind = int(rng() % 4);
        Positions pos = Positions::all();
        switch (rng() % 3) {
            case 1: pos = Positions::last(); break;
            case 2: pos = Positions::at({int(rng() % ids.size())}); break;
            default: break;
        }
        ActivationAddress addr;
        if (kind == 0) addr = ActivationAddress::resid_pre(layer, pos);
        if (kind == 1) addr = ActivationAddress::head_out(layer, int(rng() % uint64_t(cfg.n_heads)), pos);
        if (kind == 2) addr = ActivationAddress::mlp_out(layer, pos);
        if (kind == 3) addr = ActivationAddress::resid_post(layer, pos);
        const auto s = patch_and_score(m, self, addr);
        if (s.delta == 0.0f) ++exact;
        else worst_addr = addr.to_string();
    }
    const bool c = exact == 20;
    if (!c) failures.push_back("(c) at " + worst_addr);

    // (d)
    std::vector<float> dir(size_t(cfg.d_model));
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (float& x : dir) x = normal(rng);
    double worst = 0.0;
    for (int layer : {0, cfg.n_layers / 2, cfg.n_layers - 1}) {
        const auto site = ActivationAddress::resid_pre(layer);
        const Tensor back =
            m.forward(ids, {Intervention::add(site, dir, 4.0f), Intervention::add(site, dir, -4.0f)}).logits;
        for (size_t i = 0; i < back.size(); ++i) worst = std::max(worst, double(std::abs(back.flat()[i] - plain.flat()[i])));
    }
    const bool d = worst < 1e-4;
    if (!d) failures.push_back("(d)");

    std::string detail = fmt("(a) bitwise %s, (b) 20-token greedy decode %s, (c) %d/20 self-patches exactly 0, "
                             "(d) max |diff| %.3g (< 1e-4)",
                             a ? "equal" : "DIFFERS", b ? "identical" : "DIFFERS", exact, worst);
    if (!failures.empty()) {
        detail += "; failing:";
        for (const auto& f : failures) detail += " " + f;
    }
    return {failures.empty(), detail + checkpoint_note()};
}

// ---------------------------------------------------------------------------

Outcome criterion_planted() {
    const auto t0 = Clock::now();
    const auto planted = st::PlantedModel::build();
    const auto exps = st::planted_experiments(40, 7);
    const CIEMap map = compute_cie_map(planted.model, exps);
    int bl = 0, bh = 0;
    for (int l = 0; l < map.values.rows(); ++l)
        for (int h = 0; h < map.values.cols(); ++h)
            if (map.values.at(l, h) > map.values.at(bl, bh)) bl = l, bh = h;
    float runner_up = -INFINITY;
    for (int l = 0; l < map.values.rows(); ++l)
        for (int h = 0; h < map.values.cols(); ++h)
            if (l != bl || h != bh) runner_up = std::max(runner_up, map.values.at(l, h));
    const auto layers = select_layers(map, 1);
    const double secs = seconds_since(t0);
    const bool pass = bl == st::PlantedModel::kLayer && bh == st::PlantedModel::kHead && layers.size() == 1 &&
                      layers[0] == st::PlantedModel::kLayer && secs < 60.0;
    return {pass, fmt("argmax cell (%d,%d) CIE %.3f vs next %.3f, planted (%d,%d); select_layers(1) = {%d}; "
                      "%zu experiments, %.2f s",
                      bl, bh, double(map.values.at(bl, bh)), double(runner_up), st::PlantedModel::kLayer,
                      st::PlantedModel::kHead, layers.empty() ? -1 : layers[0], exps.size(), secs)};
}

// ---------------------------------------------------------------------------

constexpr int kTraceExamples = 50;
constexpr uint64_t kTraceSeed = 1234;

std::vector<PatchExperiment> antonym_experiments() {
    const Dataset ds = load_dataset(st::data_dir() / "antonyms.jsonl");
    CorruptionOptions o;
    o.n_shots = 10;
    o.n_examples = kTraceExamples;
    return build_corrupted_set(ds.examples, st::gpt2_tokenizer(), kTraceSeed, o);
}

int trace_threads() { return std::max(1, int(std::thread::hardware_concurrency())); }

Outcome criterion_cie_reproduction() {
    const Model& m = reference_model();
    const auto exps = antonym_experiments();
    CIEOptions opts;
    opts.n_threads = trace_threads();

    auto t0 = Clock::now();
    const CIEMap first = compute_cie_map(m, exps, opts);
    const double t_first = seconds_since(t0);
    t0 = Clock::now();
    const CIEMap second = compute_cie_map(m, exps, opts);
    const double t_second = seconds_since(t0);

    fs::create_directories(g_out);
    const auto files = export_heatmap(first, g_out / "cie_gpt2");
    const bool stable = bitwise_equal(first.values.flat(), second.values.flat()) && first.to_csv() == second.to_csv();
    const bool exported = fs::file_size(files.csv) > 0 && fs::file_size(files.png) > 0;
    const auto layers = select_layers(first, 3);

    int bl = 0, bh = 0;
    for (int l = 0; l < first.values.rows(); ++l)
        for (int h = 0; h < first.values.cols(); ++h)
            if (first.values.at(l, h) > first.values.at(bl, bh)) bl = l, bh = h;

    const bool pass = int(exps.size()) >= 50 && t_first < 1800.0 && t_second < 1800.0 && stable && exported;
    return {pass, fmt("%dx%d map over %zu experiments in %.0f s and %.0f s (< 1800 s each, %d thread(s)); "
                      "runs bitwise %s; strongest head (%d,%d); top layers {%d,%d,%d}; wrote ",
                      first.values.rows(), first.values.cols(), exps.size(), t_first, t_second, opts.n_threads,
                      stable ? "identical" : "DIFFERENT", bl, bh, layers.size() > 0 ? layers[0] : -1,
                      layers.size() > 1 ? layers[1] : -1, layers.size() > 2 ? layers[2] : -1) +
                      files.csv.string() + " and " + files.png.string() + checkpoint_note()};
}

// Layer for the love/hate vector: strongest layer of the exported antonym map,
// recomputed when criterion 4 has not run in this build tree.
int layer_from_trace(std::string& source) {
    const fs::path csv = g_out / "cie_gpt2.csv";
    std::ifstream in(csv);
    if (in) {
        std::string line;
        std::getline(in, line);
        CIEMap map;
        std::vector<float> vals;
        int rows = 0, cols = 0;
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::string cell;
            std::getline(ss, cell, ',');
            int c = 0;
            while (std::getline(ss, cell, ',')) {
                vals.push_back(std::stof(cell));
                ++c;
            }
            cols = c;
            ++rows;
        }
        if (rows == reference_model().config().n_layers) {
            map.values = Tensor(rows, cols, vals);
            source = csv.string();
            return select_layers(map, 1).at(0);
        }
    }
    CIEOptions opts;
    opts.n_threads = trace_threads();
    source = "recomputed map";
    return select_layers(compute_cie_map(reference_model(), antonym_experiments(), opts), 1).at(0);
}

Outcome criterion_steering_direction() {
    const Model& m = reference_model();
    const auto& tok = st::gpt2_tokenizer();
    std::string source;
    const int layer = layer_from_trace(source);
    const auto catalog = TargetCatalog::load(st::data_dir() / "steering_targets.json");
    const auto& love = catalog.get("Love");
    const SteeringVector v =
        extract_steering_vector(m, tok, love.pairs, layer, {love.name, love.negative_name, love.default_coefficient});

    std::ifstream in(st::data_dir() / "sweep_prompts.json");
    const auto pj = nlohmann::json::parse(in);
    const auto prompts = pj["prompts"].get<std::vector<std::string>>();
    const auto probe_ids = tok.encode(pj["probe"].get<std::string>());
    std::vector<float> coefs;
    for (int c = -5; c <= 5; ++c) coefs.push_back(float(c));
    SweepOptions so;
    so.continuation_tokens = 0;
    const SweepReport rep = sweep_coefficients(m, tok, v, coefs, prompts, probe_ids.at(0), so);
    fs::create_directories(g_out);
    std::ofstream(g_out / "love_sweep.csv") << rep.to_csv();

    int up = 0;
    for (size_t p = 0; p < prompts.size(); ++p) {
        const float lo = rep.rows[p * coefs.size()].probe_logprob;
        const float hi = rep.rows[p * coefs.size() + coefs.size() - 1].probe_logprob;
        up += hi > lo;
    }
    const int n = int(prompts.size());
    const int need = (8 * n + 9) / 10;
    const bool measured = n == 20 && up >= need;
    std::string detail = fmt("love-vs-hate vector at layer %d (from %s): probe log-prob rises from c=-5 to c=+5 on "
                             "%d/%d prompts (need >= %d)",
                             layer, source.c_str(), up, n, need);
    if (stand_in_checkpoint()) {
        return {false, detail + "; not established: the directional effect is a claim about trained GPT-2 small "
                                "weights, which are not available here" + checkpoint_note()};
    }
    return {measured, detail + checkpoint_note()};
}

Outcome criterion_icl() {
    const Model& m = reference_model();
    const auto& tok = st::gpt2_tokenizer();
    const Dataset ds = load_dataset(st::data_dir() / "antonyms.jsonl");
    const size_t held = 50;
    const std::span<const ICLExample> all(ds.examples);
    const auto pool = all.first(all.size() - held);
    const auto queries = all.last(held);
    const auto ten = evaluate_antonyms(m, tok, queries, pool, 10, 99);
    const auto zero = evaluate_antonyms(m, tok, queries, pool, 0, 99);
    const double chance = 1.0 / m.config().vocab_size;
    fs::create_directories(g_out);
    std::ofstream(g_out / "antonym_icl.json") << nlohmann::json{{"ten_shot", ten.to_json()}, {"zero_shot", zero.to_json()}}.dump(2);
    const bool measured = ten.accuracy > zero.accuracy && ten.accuracy > chance;
    std::string detail = fmt("10-shot accuracy %.2f (%d/%d) vs 0-shot %.2f (%d/%d), chance %.2g", ten.accuracy,
                             ten.n_correct, ten.n_queries, zero.accuracy, zero.n_correct, zero.n_queries, chance);
    if (stand_in_checkpoint()) {
        return {false, detail + "; not established: in-context antonym completion needs trained GPT-2 small "
                                "weights, which are not available here" + checkpoint_note()};
    }
    return {measured, detail + checkpoint_note()};
}

// ---------------------------------------------------------------------------

// 28 blocks of 16 heads: the depth the shipped layer indices refer to, at toy width.
std::shared_ptr<const Model> deep_toy_model() {
    ModelConfig cfg;
    cfg.n_layers = 28;
    cfg.n_heads = 16;
    cfg.d_head = 2;
    cfg.d_model = 32;
    cfg.d_mlp = 64;
    cfg.vocab_size = 50257;
    cfg.ctx_len = 128;
    cfg.model_id = "toy-28x16";
    return std::make_shared<const Model>(cfg, st::random_weights(cfg, 28, 0.1f));
}

Outcome criterion_config_roundtrip() {
    AppConfig app;
    app.store_dir = st::temp_dir("accept-c7");
    app.data_dir = st::data_dir();
    app.layer_mapping = LayerMapping::Exact;
    Engine engine(deep_toy_model(), std::shared_ptr<const Tokenizer>(&st::gpt2_tokenizer(), [](auto*) {}), app);

    struct Expect {
        const char* name;
        int layer;
        float coef;
    };
    const Expect expect[] = {{"Equality", 8, 3.0f}, {"Impartial", 18, 11.0f}, {"Non-partisan", 3, 8.0f}};
    for (const auto& e : expect) engine.extract({{"target", e.name}});

    // Reload from disk through a second store handle.
    const VectorStore store(app.store_dir);
    std::vector<SteeringVector> vecs;
    for (const auto& e : expect) vecs.push_back(store.get(e.name));
    std::vector<SteeringChoice> choices;
    for (const auto& v : vecs) choices.push_back({&v, std::nullopt});

    std::vector<std::string> got;
    bool ok = true;
    for (int dir : {+1, -1}) {
        const InterventionSet built = build_steering_set(choices, dir);
        const std::string wire = to_json(built).dump();
        const InterventionSet back = interventions_from_json(nlohmann::json::parse(wire), store.resolver());
        ok = ok && back.size() == 3;
        for (size_t i = 0; ok && i < 3; ++i) {
            const auto& iv = back[i];
            ok = iv.address.layer == expect[i].layer && iv.address.site == Site::ResidPre &&
                 iv.mode == EditMode::Add && iv.coefficient == float(dir) * expect[i].coef &&
                 iv.payload.values() == vecs[i].vector && iv.payload_ref == expect[i].name;
            got.push_back(fmt("%s@%d:%+.1f", expect[i].name, iv.address.layer, double(iv.coefficient)));
        }
        ok = ok && validate(back, engine.model().config()).empty();
    }
    // The HTTP/CLI echo carries the same values.
    const auto echo = engine.steer({{"prompt", "Hello"},
                                    {"targets", {{{"name", "Equality"}}, {{"name", "Impartial"}}, {{"name", "Non-partisan"}}}},
                                    {"gen_config", {{"max_new_tokens", 1}}}});
    for (size_t i = 0; i < 3; ++i) {
        ok = ok && echo["targets"][i]["layer"] == expect[i].layer && echo["targets"][i]["coefficient"] == expect[i].coef;
    }
    std::string list;
    for (const auto& g : got) list += (list.empty() ? "" : " ") + g;
    return {ok, "round-tripped via vector store and JSON on a 28-layer, 16-head model: " + list};
}

// ---------------------------------------------------------------------------

Outcome criterion_scenarios() {
    const Model& m = reference_model();
    const auto& tok = st::gpt2_tokenizer();
    const auto catalog = TargetCatalog::load(st::data_dir() / "steering_targets.json");
    const fs::path store_dir = st::temp_dir("accept-c8");
    VectorStore store(store_dir);
    std::vector<std::string> mapped;
    for (const char* name : {"Equality", "Impartial", "Non-partisan"}) {
        const auto& t = catalog.get(name);
        const int layer = map_layer(*t.layer, m.config().n_layers, catalog.reference.n_layers,
                                    LayerMapping::Proportional);
        SteeringVector v = extract_steering_vector(m, tok, t.pairs, layer, {t.name, t.negative_name, t.default_coefficient});
        v.configured_layer = *t.layer;
        v.layer_mapping = "proportional";
        store.save(v);
        mapped.push_back(fmt("%s %d->%d", name, *t.layer, layer));
    }
    const auto scenarios = load_scenarios(st::data_dir() / "scenarios.json");
    GenerationConfig gen;
    gen.max_new_tokens = 24;
    const ComparisonReport rep = run_scenarios(m, tok, scenarios, gen, store);
    fs::create_directories(g_out);
    std::ofstream(g_out / "scenarios.md") << rep.to_markdown();
    std::ofstream(g_out / "scenarios.json") << rep.to_json().dump(2);

    int differ = 0;
    for (const auto& r : rep.rows) differ += r.steered.tokens != r.unsteered.tokens;
    const bool pass = rep.rows.size() == 3 && differ == 3;
    std::string layers;
    for (const auto& s : mapped) layers += (layers.empty() ? "" : ", ") + s;
    return {pass, fmt("%zu scenarios, steered differs from unsteered on %d/3 (greedy, %d new tokens); layers mapped "
                      "proportionally: ",
                      rep.rows.size(), differ, gen.max_new_tokens) +
                      layers + "; report " + (g_out / "scenarios.md").string() + checkpoint_note()};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("acceptance checks");
    std::vector<int> which;
    std::string out = g_out.string();
    app.add_option("--criterion", which, "criterion number(s) 1-8; default all")->check(CLI::Range(1, 8));
    app.add_option("--out", out, "directory for exported artefacts");
    CLI11_PARSE(app, argc, argv);
    g_out = out;
    if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8};

    const std::function<Outcome()> checks[] = {criterion_parity,          criterion_identities,
                                               criterion_planted,         criterion_cie_reproduction,
                                               criterion_steering_direction, criterion_icl,
                                               criterion_config_roundtrip, criterion_scenarios};
    bool all = true;
    for (int n : which) {
        Outcome o;
        try {
            o = checks[n - 1]();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
