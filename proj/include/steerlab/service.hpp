#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <json.hpp>

#include "steerlab/errors.hpp"
#include "steerlab/model.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/tokenizer.hpp"

namespace steerlab {

using Json = nlohmann::json;

std::string engine_version();

struct AppConfig {
    std::filesystem::path model_dir;      // config.json + model.safetensors
    std::filesystem::path tokenizer_dir;  // vocab.json + merges.txt
    std::filesystem::path store_dir;      // steering vectors
    std::filesystem::path data_dir;       // datasets, targets, scenarios, prompts
    std::string bind_host = "127.0.0.1";
    int port = 8080;
    int concurrency_limit = 4;
    int default_shots = 10;
    int trace_threads = 1;
    int job_queue_limit = 8;
    LayerMapping layer_mapping = LayerMapping::Exact;

    // Unknown keys are rejected; relative paths resolve against `base`.
    static AppConfig from_json(const Json& j, const std::filesystem::path& base = {});
    static AppConfig load(const std::filesystem::path& path);
    // STEERLAB_MODEL_DIR, STEERLAB_TOKENIZER_DIR, STEERLAB_STORE_DIR,
    // STEERLAB_DATA_DIR; paths only.
    void apply_env();
    Json to_json() const;
};

// Maps an exception to (HTTP status, error kind, message).
struct ErrorInfo {
    int status = 500;
    std::string kind;
    std::string message;
};
ErrorInfo classify_error(std::exception_ptr e);

// Shared request handlers: the CLI and the HTTP server call the same methods
// with the same JSON bodies, so their outputs agree by construction. The model
// and tokenizer are immutable and shared across threads.
class Engine {
public:
    explicit Engine(const AppConfig& cfg);
    Engine(std::shared_ptr<const Model> model, std::shared_ptr<const Tokenizer> tok, const AppConfig& cfg);

    const Model& model() const { return *model_; }
    const Tokenizer& tokenizer() const { return *tok_; }
    VectorStore& store() { return store_; }
    const AppConfig& config() const { return cfg_; }

    // {prompt, gen_config?, interventions?} -> {tokens, text}
    Json generate(const Json& req) const;
    // {prompt, targets: [{name, coefficient?}], gen_config?, direction?, positions?}
    //   -> {unsteered, steered, targets, gen_config}
    Json steer(const Json& req) const;
    // {dataset_ref?, n_examples, ablation_mode?, n_shots?, seed?, positions?, top_k?, export_prefix?}
    //   -> {cie_matrix, meta, selected_layers}
    Json trace(const Json& req) const;
    // {pairs: [{positive, negative}], layer, name, ...} or {target, layer?, layer_mapping?}
    //   -> vector metadata
    Json extract(const Json& req);
    Json vectors() const;
    // {vector, coefficients | range: {from, to, step}, prompts?, probe, continuation_tokens?}
    Json sweep(const Json& req) const;
    // {dataset_ref?, n_queries?, n_shots?, seed?, full_match?} -> accuracy report
    Json eval(const Json& req) const;
    // {scenarios_ref?, gen_config?, coefficient_overrides?, direction?} -> comparison report
    Json scenarios(const Json& req) const;

    // Adds {model_id, engine_version, elapsed_ms}.
    Json envelope(Json body, double elapsed_ms) const;

    // Resolves a data file name against data_dir (or as a path). NotFound.
    std::filesystem::path data_file(const std::string& ref) const;

private:
    std::shared_ptr<const Model> model_;
    std::shared_ptr<const Tokenizer> tok_;
    AppConfig cfg_;
    VectorStore store_;
};

// Bounded background queue for long-running trace jobs; the job table has a
// single writer at a time.
class JobQueue {
public:
    enum class Status { Queued, Running, Done, Failed };

    JobQueue(int workers, int capacity);
    ~JobQueue();

    // Throws Busy when the queue is full.
    std::string submit(std::function<Json()> task);
    // Throws NotFound.
    Json status(const std::string& id) const;
    // Blocks until the job finishes; returns its status document.
    Json wait(const std::string& id) const;

private:
    struct Job {
        Status status = Status::Queued;
        Json result;
        ErrorInfo error;
    };
    void run();

    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::map<std::string, Job> jobs_;
    std::deque<std::pair<std::string, std::function<Json()>>> pending_;
    int capacity_;
    uint64_t next_id_ = 1;
    bool stopping_ = false;
    std::vector<std::thread> workers_;
};

// HTTP/1.1 front end over an Engine.
class Server {
public:
    explicit Server(Engine& engine);
    ~Server();

    // Port 0 picks a free port; returns the bound port. Throws IoError.
    int bind(const std::string& host, int port);
    // Blocks until stop().
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace steerlab
