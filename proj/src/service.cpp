#include "steerlab/service.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdlib>
#include <fstream>

#include "steerlab/causal.hpp"
#include "steerlab/heatmap.hpp"
#include "steerlab/tasks.hpp"

namespace steerlab {

namespace fs = std::filesystem;

std::string engine_version() { return STEERLAB_VERSION; }

// ---------------------------------------------------------------------------
// Config

namespace {

fs::path resolve(const fs::path& base, const fs::path& p) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

LayerMapping layer_mapping_from_string(const std::string& s) {
    if (s == "exact") return LayerMapping::Exact;
    if (s == "proportional") return LayerMapping::Proportional;
    throw InvalidArgument("layer_mapping must be 'exact' or 'proportional', got '" + s + "'");
}

std::string to_string(LayerMapping m) { return m == LayerMapping::Exact ? "exact" : "proportional"; }

}  // namespace

AppConfig AppConfig::from_json(const Json& j, const fs::path& base) {
    if (!j.is_object()) throw ParseError("config: expected an object");
    AppConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "model_dir") c.model_dir = resolve(base, value.get<std::string>());
            else if (key == "tokenizer_dir") c.tokenizer_dir = resolve(base, value.get<std::string>());
            else if (key == "store_dir") c.store_dir = resolve(base, value.get<std::string>());
            else if (key == "data_dir") c.data_dir = resolve(base, value.get<std::string>());
            else if (key == "bind_host") c.bind_host = value.get<std::string>();
            else if (key == "port") c.port = value.get<int>();
            else if (key == "concurrency_limit") c.concurrency_limit = value.get<int>();
            else if (key == "default_shots") c.default_shots = value.get<int>();
            else if (key == "trace_threads") c.trace_threads = value.get<int>();
            else if (key == "job_queue_limit") c.job_queue_limit = value.get<int>();
            else if (key == "layer_mapping") c.layer_mapping = layer_mapping_from_string(value.get<std::string>());
            else throw ParseError("config: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("config: bad value for '" + key + "': " + e.what());
        }
    }
    if (c.concurrency_limit < 1) throw InvalidConfig("concurrency_limit must be at least 1");
    if (c.default_shots < 0) throw InvalidConfig("default_shots must be non-negative");
    return c;
}

AppConfig AppConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

void AppConfig::apply_env() {
    const std::pair<const char*, fs::path*> vars[] = {{"STEERLAB_MODEL_DIR", &model_dir},
                                                       {"STEERLAB_TOKENIZER_DIR", &tokenizer_dir},
                                                       {"STEERLAB_STORE_DIR", &store_dir},
                                                       {"STEERLAB_DATA_DIR", &data_dir}};
    for (const auto& [name, target] : vars) {
        if (const char* v = std::getenv(name); v && *v) *target = v;
    }
}

Json AppConfig::to_json() const {
    return {{"model_dir", model_dir.string()},
            {"tokenizer_dir", tokenizer_dir.string()},
            {"store_dir", store_dir.string()},
            {"data_dir", data_dir.string()},
            {"bind_host", bind_host},
            {"port", port},
            {"concurrency_limit", concurrency_limit},
            {"default_shots", default_shots},
            {"trace_threads", trace_threads},
            {"job_queue_limit", job_queue_limit},
            {"layer_mapping", to_string(layer_mapping)}};
}

ErrorInfo classify_error(std::exception_ptr e) {
    try {
        std::rethrow_exception(e);
    } catch (const MissingVector& x) {
        return {404, x.kind(), x.what()};
    } catch (const NotFound& x) {
        return {404, x.kind(), x.what()};
    } catch (const NameCollision& x) {
        return {409, x.kind(), x.what()};
    } catch (const Busy& x) {
        return {503, x.kind(), x.what()};
    } catch (const IoError& x) {
        return {500, x.kind(), x.what()};
    } catch (const Error& x) {
        // Everything else the library raises is caused by the request.
        return {400, x.kind(), x.what()};
    } catch (const nlohmann::json::exception& x) {
        return {400, "ParseError", x.what()};
    } catch (const std::exception& x) {
        return {500, "InternalError", x.what()};
    } catch (...) {
        return {500, "InternalError", "unknown failure"};
    }
}

// ---------------------------------------------------------------------------
// Engine

namespace {

template <class T>
T field(const Json& j, const char* key, T fallback) {
    if (!j.contains(key) || j[key].is_null()) return fallback;
    try {
        return j[key].get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ParseError(std::string("field '") + key + "' has the wrong type");
    }
}

template <class T>
T required(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ParseError(std::string("missing field '") + key + "'");
    return field<T>(j, key, T{});
}

GenerationConfig gen_config(const Json& req) {
    if (!req.contains("gen_config")) return {};
    try {
        return GenerationConfig::from_json(req["gen_config"]);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("gen_config: ") + e.what());
    }
}

Json continuation(const Tokenizer& tok, const std::vector<TokenId>& ids) {
    return {{"tokens", ids}, {"text", tok.decode(ids)}};
}

std::vector<TokenId> encode_prompt(const Tokenizer& tok, const Json& req) {
    const auto prompt = required<std::string>(req, "prompt");
    if (prompt.empty()) throw InvalidArgument("prompt must not be empty");
    return tok.encode(prompt);
}

}  // namespace

Engine::Engine(const AppConfig& cfg)
    : Engine(std::make_shared<const Model>(
                 Model::load(cfg.model_dir / "config.json", cfg.model_dir / "model.safetensors")),
             std::make_shared<const Tokenizer>(
                 Tokenizer::load(cfg.tokenizer_dir / "vocab.json", cfg.tokenizer_dir / "merges.txt")),
             cfg) {}

Engine::Engine(std::shared_ptr<const Model> model, std::shared_ptr<const Tokenizer> tok, const AppConfig& cfg)
    : model_(std::move(model)), tok_(std::move(tok)), cfg_(cfg), store_(cfg.store_dir) {}

Json Engine::envelope(Json body, double elapsed_ms) const {
    body["model_id"] = model_->config().model_id;
    body["engine_version"] = engine_version();
    body["elapsed_ms"] = elapsed_ms;
    return body;
}

fs::path Engine::data_file(const std::string& ref) const {
    if (ref.empty()) throw InvalidArgument("empty data reference");
    const fs::path in_data = cfg_.data_dir / ref;
    if (!cfg_.data_dir.empty() && fs::is_regular_file(in_data)) return in_data;
    if (fs::is_regular_file(ref)) return ref;
    throw NotFound("unknown data file '" + ref + "'");
}

Json Engine::generate(const Json& req) const {
    const auto ids = encode_prompt(*tok_, req);
    InterventionSet set;
    if (req.contains("interventions")) set = interventions_from_json(req["interventions"], store_.resolver());
    const auto out = model_->generate(ids, gen_config(req), set);
    return continuation(*tok_, out);
}

Json Engine::steer(const Json& req) const {
    const auto ids = encode_prompt(*tok_, req);
    const GenerationConfig gen = gen_config(req);
    const int direction = field<int>(req, "direction", 1);
    SteeringOptions opts;
    if (req.contains("positions")) opts.positions = positions_from_json(req["positions"]);
    opts.normalize = field<bool>(req, "normalize", false);

    const Json targets = field<Json>(req, "targets", Json::array());
    if (!targets.is_array()) throw ParseError("targets must be an array");
    std::vector<SteeringVector> vectors;
    std::vector<std::optional<float>> coefs;
    for (const auto& t : targets) {
        vectors.push_back(store_.get(required<std::string>(t, "name")));
        coefs.push_back(t.contains("coefficient") ? std::optional<float>(t["coefficient"].get<float>())
                                                  : std::nullopt);
    }
    std::vector<SteeringChoice> choices;
    Json echo = Json::array();
    for (size_t i = 0; i < vectors.size(); ++i) {
        choices.push_back({&vectors[i], coefs[i]});
        echo.push_back({{"name", vectors[i].name},
                        {"layer", vectors[i].layer},
                        {"coefficient", float(direction) * coefs[i].value_or(vectors[i].default_coefficient)}});
    }
    const InterventionSet set = build_steering_set(choices, direction, opts);
    return {{"unsteered", continuation(*tok_, model_->generate(ids, gen))},
            {"steered", continuation(*tok_, model_->generate(ids, gen, set))},
            {"targets", echo},
            {"interventions", to_json(set)},
            {"gen_config", gen.to_json()}};
}

Json Engine::trace(const Json& req) const {
    const Dataset ds = load_dataset(data_file(field<std::string>(req, "dataset_ref", "antonyms.jsonl")));
    CorruptionOptions copts;
    copts.n_examples = required<int>(req, "n_examples");
    if (copts.n_examples < 1) throw InvalidArgument("n_examples must be at least 1");
    copts.n_shots = field<int>(req, "n_shots", cfg_.default_shots);
    const auto experiments = build_corrupted_set(ds.examples, *tok_, field<uint64_t>(req, "seed", 0), copts);

    CIEOptions opts;
    opts.ablation = ablation_from_string(field<std::string>(req, "ablation_mode", "zero"));
    const auto positions = field<std::string>(req, "positions", "final");
    if (positions != "final" && positions != "all") throw InvalidArgument("positions must be 'final' or 'all'");
    opts.all_positions = positions == "all";
    opts.n_threads = field<int>(req, "n_threads", cfg_.trace_threads);
    const CIEMap map = compute_cie_map(*model_, experiments, opts);

    Json matrix = Json::array();
    for (int l = 0; l < map.values.rows(); ++l) {
        const auto row = map.values.row(l);
        matrix.push_back(std::vector<float>(row.begin(), row.end()));
    }
    Json out = {{"cie_matrix", matrix},
                {"meta", map.meta()},
                {"selected_layers", select_layers(map, field<int>(req, "top_k", 3))}};
    out["meta"]["n_shots"] = copts.n_shots;
    if (const auto prefix = field<std::string>(req, "export_prefix", ""); !prefix.empty()) {
        const auto files = export_heatmap(map, prefix);
        out["files"] = {{"csv", files.csv.string()}, {"png", files.png.string()}, {"json", files.json.string()}};
    }
    return out;
}

Json Engine::extract(const Json& req) {
    std::vector<ContrastPair> pairs;
    ExtractOptions opts;
    int layer = 0;
    std::optional<int> configured;
    LayerMapping mapping = cfg_.layer_mapping;
    if (req.contains("layer_mapping")) mapping = layer_mapping_from_string(req["layer_mapping"].get<std::string>());

    if (req.contains("target")) {
        const auto catalog = TargetCatalog::load(data_file(field<std::string>(req, "targets_ref", "steering_targets.json")));
        const SteeringTarget* target = nullptr;
        try {
            target = &catalog.get(req["target"].get<std::string>());
        } catch (const MissingVector& e) {
            throw NotFound(e.what());
        }
        pairs = target->pairs;
        opts.name = field<std::string>(req, "name", target->name);
        opts.negative_name = target->negative_name;
        opts.default_coefficient = target->default_coefficient;
        if (req.contains("layer")) {
            layer = req["layer"].get<int>();
        } else if (target->layer) {
            configured = *target->layer;
            layer = map_layer(*target->layer, model_->config().n_layers, catalog.reference.n_layers, mapping);
        } else {
            throw InvalidArgument("target '" + target->name + "' has no configured layer; pass one");
        }
    } else {
        for (const auto& p : required<Json>(req, "pairs")) {
            pairs.push_back({required<std::string>(p, "positive"), required<std::string>(p, "negative")});
        }
        layer = required<int>(req, "layer");
        opts.name = required<std::string>(req, "name");
        opts.negative_name = field<std::string>(req, "negative_name", "");
        opts.default_coefficient = field<float>(req, "default_coefficient", 1.0f);
    }
    if (req.contains("default_coefficient")) opts.default_coefficient = req["default_coefficient"].get<float>();

    SteeringVector v = extract_steering_vector(*model_, *tok_, pairs, layer, opts);
    if (configured) {
        v.configured_layer = configured;
        v.layer_mapping = to_string(mapping);
    }
    v.id = store_.save(v, field<bool>(req, "overwrite", false));
    return v.metadata();
}

Json Engine::vectors() const {
    Json out = Json::array();
    for (const auto& v : store_.list()) out.push_back(v.metadata());
    return out;
}

Json Engine::sweep(const Json& req) const {
    const SteeringVector v = store_.get(required<std::string>(req, "vector"));
    std::vector<float> coefs;
    if (req.contains("coefficients")) {
        coefs = req["coefficients"].get<std::vector<float>>();
    } else {
        const Json r = required<Json>(req, "range");
        const double from = required<double>(r, "from"), to = required<double>(r, "to");
        const double step = field<double>(r, "step", 1.0);
        if (step <= 0.0 || to < from) throw InvalidArgument("range needs from <= to and step > 0");
        const long n = std::lround(std::floor((to - from) / step + 1e-9)) + 1;
        for (long i = 0; i < n; ++i) coefs.push_back(float(from + double(i) * step));
    }
    if (coefs.empty()) throw InvalidArgument("no coefficients to sweep");

    std::vector<std::string> prompts;
    Json prompt_file;
    if (req.contains("prompts")) {
        prompts = req["prompts"].get<std::vector<std::string>>();
    } else {
        std::ifstream in(data_file(field<std::string>(req, "prompts_ref", "sweep_prompts.json")));
        prompt_file = Json::parse(in);
        prompts = prompt_file.at("prompts").get<std::vector<std::string>>();
    }
    TokenId probe = 0;
    if (req.contains("probe_token")) {
        probe = req["probe_token"].get<TokenId>();
    } else {
        const auto text = field<std::string>(req, "probe", prompt_file.is_object() ? prompt_file.value("probe", "") : "");
        const auto ids = tok_->encode(text);
        if (ids.size() != 1) throw InvalidArgument("probe '" + text + "' must encode to exactly one token");
        probe = ids.front();
    }
    SweepOptions opts;
    opts.continuation_tokens = field<int>(req, "continuation_tokens", opts.continuation_tokens);
    const SweepReport rep = sweep_coefficients(*model_, *tok_, v, coefs, prompts, probe, opts);
    Json out = rep.to_json();
    out["csv"] = rep.to_csv();
    return out;
}

Json Engine::eval(const Json& req) const {
    const Dataset ds = load_dataset(data_file(field<std::string>(req, "dataset_ref", "antonyms.jsonl")));
    const int n_queries = field<int>(req, "n_queries", 50);
    const int n_shots = field<int>(req, "n_shots", cfg_.default_shots);
    if (n_queries < 1 || size_t(n_queries) >= ds.examples.size()) {
        throw InvalidArgument("n_queries must be between 1 and " + std::to_string(ds.examples.size() - 1));
    }
    // The last n_queries examples are held out; shots come from the rest.
    const std::span<const ICLExample> all(ds.examples);
    const auto pool = all.first(all.size() - size_t(n_queries));
    const auto queries = all.last(size_t(n_queries));
    ScoreOptions so;
    so.full_match = field<bool>(req, "full_match", false);
    InterventionSet set;
    if (req.contains("interventions")) set = interventions_from_json(req["interventions"], store_.resolver());
    AccuracyReport rep = evaluate_antonyms(*model_, *tok_, queries, pool, n_shots, field<uint64_t>(req, "seed", 0), set, so);
    Json out = rep.to_json();
    out["chance"] = 1.0 / double(model_->config().vocab_size);
    out["dataset_hash"] = ds.content_hash;
    return out;
}

Json Engine::scenarios(const Json& req) const {
    const auto scenarios = load_scenarios(data_file(field<std::string>(req, "scenarios_ref", "scenarios.json")));
    ScenarioSteering st;
    st.direction = field<int>(req, "direction", 1);
    st.coefficient_overrides = field<std::map<std::string, float>>(req, "coefficient_overrides", {});
    const ComparisonReport rep = run_scenarios(*model_, *tok_, scenarios, gen_config(req), store_, st);
    Json out = rep.to_json();
    out["markdown"] = rep.to_markdown();
    return out;
}

// ---------------------------------------------------------------------------
// Jobs

JobQueue::JobQueue(int workers, int capacity) : capacity_(std::max(capacity, 1)) {
    for (int i = 0; i < std::max(workers, 1); ++i) workers_.emplace_back([this] { run(); });
}

JobQueue::~JobQueue() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
}

std::string JobQueue::submit(std::function<Json()> task) {
    std::string id;
    {
        std::lock_guard lock(mu_);
        if (static_cast<int>(pending_.size()) >= capacity_) throw Busy("job queue is full");
        id = "job-" + std::to_string(next_id_++);
        jobs_[id] = Job{};
        pending_.emplace_back(id, std::move(task));
    }
    cv_.notify_all();
    return id;
}

namespace {

const char* status_name(JobQueue::Status s) {
    switch (s) {
        case JobQueue::Status::Queued: return "queued";
        case JobQueue::Status::Running: return "running";
        case JobQueue::Status::Done: return "done";
        case JobQueue::Status::Failed: return "failed";
    }
    return "unknown";
}

}  // namespace

Json JobQueue::status(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = jobs_.find(id);
    if (it == jobs_.end()) throw NotFound("unknown job '" + id + "'");
    Json out = {{"id", id}, {"status", status_name(it->second.status)}};
    if (it->second.status == Status::Done) out["result"] = it->second.result;
    if (it->second.status == Status::Failed) {
        out["error"] = {{"kind", it->second.error.kind}, {"message", it->second.error.message}};
    }
    return out;
}

Json JobQueue::wait(const std::string& id) const {
    {
        std::unique_lock lock(mu_);
        if (!jobs_.contains(id)) throw NotFound("unknown job '" + id + "'");
        cv_.wait(lock, [&] {
            const auto s = jobs_.at(id).status;
            return s == Status::Done || s == Status::Failed;
        });
    }
    return status(id);
}

void JobQueue::run() {
    for (;;) {
        std::pair<std::string, std::function<Json()>> item;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return stopping_ || !pending_.empty(); });
            if (stopping_) return;
            item = std::move(pending_.front());
            pending_.pop_front();
            jobs_[item.first].status = Status::Running;
        }
        Json result;
        ErrorInfo err;
        bool ok = true;
        try {
            result = item.second();
        } catch (...) {
            ok = false;
            err = classify_error(std::current_exception());
        }
        {
            std::lock_guard lock(mu_);
            Job& job = jobs_[item.first];
            job.status = ok ? Status::Done : Status::Failed;
            job.result = std::move(result);
            job.error = std::move(err);
        }
        cv_.notify_all();
    }
}

// ---------------------------------------------------------------------------
// HTTP

struct Server::Impl {
    Engine& engine;
    httplib::Server http;
    JobQueue jobs;
    std::atomic<int> in_flight{0};

    explicit Impl(Engine& e) : engine(e), jobs(1, e.config().job_queue_limit) {}

    // Holds one of the model's concurrency slots for the lifetime of a request.
    struct Slot {
        std::atomic<int>& counter;
        Slot(std::atomic<int>& c, int limit) : counter(c) {
            if (counter.fetch_add(1) >= limit) {
                counter.fetch_sub(1);
                throw Busy("model is at its concurrency limit of " + std::to_string(limit));
            }
        }
        ~Slot() { counter.fetch_sub(1); }
    };

    void reply(httplib::Response& res, int status, const Json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    template <class Fn>
    void handle(const httplib::Request& req, httplib::Response& res, bool uses_model, Fn&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            Json body;
            if (!req.body.empty()) {
                body = Json::parse(req.body, nullptr, false);
                if (body.is_discarded()) throw ParseError("request body is not valid JSON");
            }
            std::optional<Slot> slot;
            if (uses_model) slot.emplace(in_flight, engine.config().concurrency_limit);
            Json out = fn(body);
            const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            if (!out.is_object()) out = Json{{"items", std::move(out)}};
            reply(res, 200, engine.envelope(std::move(out), ms));
        } catch (...) {
            const ErrorInfo e = classify_error(std::current_exception());
            const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            reply(res, e.status, engine.envelope({{"error", {{"kind", e.kind}, {"message", e.message}}}}, ms));
        }
    }

    void routes() {
        auto post = [this](const char* path, bool uses_model, auto fn) {
            http.Post(path, [this, uses_model, fn](const httplib::Request& rq, httplib::Response& rs) {
                handle(rq, rs, uses_model, fn);
            });
        };
        post("/v1/generate", true, [this](const Json& b) { return engine.generate(b); });
        post("/v1/steer", true, [this](const Json& b) { return engine.steer(b); });
        post("/v1/vectors/extract", true, [this](const Json& b) { return engine.extract(b); });
        post("/v1/sweep", true, [this](const Json& b) { return engine.sweep(b); });
        post("/v1/eval", true, [this](const Json& b) { return engine.eval(b); });
        post("/v1/scenarios", true, [this](const Json& b) { return engine.scenarios(b); });
        post("/v1/trace", false, [this](const Json& b) {
            // Reject malformed requests up front rather than as failed jobs.
            if (!b.is_object() || !b.contains("n_examples")) throw ParseError("missing field 'n_examples'");
            const std::string id = jobs.submit([this, b] { return engine.trace(b); });
            return Json{{"job_id", id}, {"status", "queued"}};
        });
        http.Get("/v1/vectors", [this](const httplib::Request& rq, httplib::Response& rs) {
            handle(rq, rs, false, [this](const Json&) { return Json{{"vectors", engine.vectors()}}; });
        });
        http.Get(R"(/v1/jobs/([A-Za-z0-9\-]+))", [this](const httplib::Request& rq, httplib::Response& rs) {
            const std::string id = rq.matches[1];
            handle(rq, rs, false, [this, id](const Json&) { return jobs.status(id); });
        });
        http.Get("/v1/health", [this](const httplib::Request& rq, httplib::Response& rs) {
            handle(rq, rs, false, [](const Json&) { return Json{{"status", "ok"}}; });
        });
        http.set_error_handler([this](const httplib::Request&, httplib::Response& rs) {
            if (rs.body.empty()) {
                reply(rs, rs.status, engine.envelope({{"error", {{"kind", "NotFound"}, {"message", "no such route"}}}}, 0.0));
            }
        });
    }
};

Server::Server(Engine& engine) : impl_(std::make_unique<Impl>(engine)) { impl_->routes(); }

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->http.bind_to_any_port(host);
    } else if (!impl_->http.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound <= 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() {
    if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

}  // namespace steerlab
