#include "steerlab/steering.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <algorithm>
#include <mutex>
#include <sstream>

#include "steerlab/errors.hpp"
#include "steerlab/hashing.hpp"

namespace steerlab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// SteeringVector

double SteeringVector::recompute_norm() const {
    double s = 0.0;
    for (float v : vector) s += double(v) * double(v);
    return std::sqrt(s);
}

nlohmann::json SteeringVector::metadata() const {
    nlohmann::json pairs_json = nlohmann::json::array();
    for (const auto& p : pairs) pairs_json.push_back({{"positive", p.positive_text}, {"negative", p.negative_text}});
    nlohmann::json j = {{"id", id},
                        {"name", name},
                        {"negative_name", negative_name},
                        {"layer", layer},
                        {"default_coefficient", default_coefficient},
                        {"d_model", vector.size()},
                        {"norm", norm},
                        {"model_id", model_id},
                        {"provenance",
                         {{"pairs", pairs_json},
                          {"position_policy", position_policy},
                          {"pole_source", pole_source},
                          {"layer_mapping", layer_mapping}}}};
    if (configured_layer) j["provenance"]["configured_layer"] = *configured_layer;
    return j;
}

SteeringVector SteeringVector::from_metadata(const nlohmann::json& meta, std::vector<float> payload) {
    SteeringVector v;
    try {
        v.id = meta.value("id", std::string());
        v.name = meta.at("name").get<std::string>();
        v.negative_name = meta.value("negative_name", std::string());
        v.layer = meta.at("layer").get<int>();
        v.default_coefficient = meta.value("default_coefficient", 1.0f);
        v.model_id = meta.value("model_id", std::string());
        if (meta.contains("provenance")) {
            const auto& p = meta["provenance"];
            for (const auto& pair : p.value("pairs", nlohmann::json::array())) {
                v.pairs.push_back({pair.at("positive").get<std::string>(), pair.at("negative").get<std::string>()});
            }
            v.position_policy = p.value("position_policy", std::string("last"));
            v.pole_source = p.value("pole_source", std::string("artifact-defined"));
            v.layer_mapping = p.value("layer_mapping", std::string("exact"));
            if (p.contains("configured_layer")) v.configured_layer = p["configured_layer"].get<int>();
        }
        if (meta.contains("d_model") && meta["d_model"].get<size_t>() != payload.size()) {
            throw ShapeMismatch("vector " + v.name + ": payload length disagrees with d_model");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("vector metadata: ") + e.what());
    }
    v.vector = std::move(payload);
    v.norm = v.recompute_norm();
    return v;
}

// ---------------------------------------------------------------------------
// Extraction / set building / sweeps

SteeringVector extract_steering_vector(const Model& model, const Tokenizer& tok, std::span<const ContrastPair> pairs,
                                       int layer, const ExtractOptions& opts) {
    const ModelConfig& cfg = model.config();
    if (pairs.empty()) {
        throw InvalidArgument("extract: at least one contrast pair is required");
    }
    if (layer < 0 || layer >= cfg.n_layers) {
        throw InvalidAddress("extract: layer " + std::to_string(layer) + " not in [0, " + std::to_string(cfg.n_layers) +
                             ")");
    }
    const ActivationAddress site = ActivationAddress::resid_pre(layer);
    auto last_row = [&](const std::string& text) {
        if (text.empty()) throw InvalidArgument("extract: contrast prompts must be non-empty");
        const auto ids = tok.encode(text);
        if (static_cast<int>(ids.size()) > cfg.ctx_len) {
            throw ContextOverflow("extract: prompt of " + std::to_string(ids.size()) + " tokens exceeds context");
        }
        const ForwardResult r = model.forward(ids, {}, {site}, LogitsScope::Last);
        const Tensor& act = r.cache.at(site);
        const auto row = act.row(act.rows() - 1);
        return std::vector<float>(row.begin(), row.end());
    };

    std::vector<float> sum(size_t(cfg.d_model), 0.0f);
    for (const auto& pair : pairs) {
        const auto pos = last_row(pair.positive_text);
        const auto neg = last_row(pair.negative_text);
        for (size_t i = 0; i < sum.size(); ++i) sum[i] = sum[i] + (pos[i] - neg[i]);
    }
    const float n = static_cast<float>(pairs.size());
    for (float& v : sum) v = v / n;

    SteeringVector out;
    out.name = opts.name;
    out.negative_name = opts.negative_name;
    out.layer = layer;
    out.default_coefficient = opts.default_coefficient;
    out.vector = std::move(sum);
    out.norm = out.recompute_norm();
    out.pairs.assign(pairs.begin(), pairs.end());
    out.model_id = cfg.model_id;
    return out;
}

InterventionSet build_steering_set(std::span<const SteeringChoice> choices, int direction,
                                   const SteeringOptions& opts) {
    if (direction != 1 && direction != -1) {
        throw InvalidArgument("direction must be +1 or -1");
    }
    InterventionSet out;
    size_t width = 0;
    for (const auto& c : choices) {
        if (c.vector == nullptr) throw InvalidArgument("steering choice without a vector");
        const SteeringVector& v = *c.vector;
        if (width == 0) width = v.vector.size();
        if (v.vector.size() != width) {
            throw DimensionMismatch("vector " + v.name + " has width " + std::to_string(v.vector.size()) +
                                    ", expected " + std::to_string(width));
        }
        std::vector<float> payload = v.vector;
        if (opts.normalize && v.norm > 0.0) {
            const float inv = static_cast<float>(1.0 / v.norm);
            for (float& x : payload) x *= inv;
        }
        const float coefficient = float(direction) * c.coefficient.value_or(v.default_coefficient);
        ActivationAddress addr{v.layer, opts.site, std::nullopt, opts.positions};
        out.push_back(Intervention::add(std::move(addr), std::move(payload), coefficient, v.name));
    }
    return out;
}

SweepReport sweep_coefficients(const Model& model, const Tokenizer& tok, const SteeringVector& vector,
                               std::span<const float> coefficients, std::span<const std::string> prompts,
                               TokenId probe_token, const SweepOptions& opts) {
    if (probe_token < 0 || probe_token >= model.config().vocab_size) {
        throw OutOfRangeId("probe token " + std::to_string(probe_token) + " outside the vocabulary");
    }
    for (float c : coefficients) {
        if (!std::isfinite(c)) throw InvalidArgument("sweep: coefficients must be finite");
    }
    SweepReport report;
    report.vector_name = vector.name;
    report.probe_token = probe_token;

    GenerationConfig gen;
    gen.max_new_tokens = opts.continuation_tokens;
    for (size_t p = 0; p < prompts.size(); ++p) {
        const auto ids = tok.encode(prompts[p]);
        if (ids.empty()) throw InvalidArgument("sweep: empty prompt");
        if (static_cast<int>(ids.size()) + gen.max_new_tokens > model.config().ctx_len) {
            throw ContextOverflow("sweep: prompt " + std::to_string(p) + " does not fit the context");
        }
        for (float c : coefficients) {
            const SteeringChoice choice{&vector, c};
            const InterventionSet set = build_steering_set(std::span(&choice, 1), +1, opts.steering);
            const ForwardResult r = model.forward(ids, set, {}, LogitsScope::Last);
            SweepRow row;
            row.prompt_id = static_cast<int>(p);
            row.prompt = prompts[p];
            row.coefficient = c;
            row.probe_logprob = next_token_log_probs(r.logits)[size_t(probe_token)];
            if (gen.max_new_tokens > 0) {
                row.continuation_ids = model.generate(ids, gen, set);
                row.continuation = tok.decode(row.continuation_ids);
            }
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

namespace {

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    return out + "\"";
}

std::string format_float(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace

std::string SweepReport::to_csv() const {
    std::string out = "prompt_id,coefficient,probe_logprob,continuation\n";
    for (const auto& r : rows) {
        out += std::to_string(r.prompt_id) + "," + format_float(r.coefficient) + "," + format_float(r.probe_logprob) +
               "," + csv_quote(r.continuation) + "\n";
    }
    return out;
}

nlohmann::json SweepReport::to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) {
        arr.push_back({{"prompt_id", r.prompt_id},
                       {"prompt", r.prompt},
                       {"coefficient", r.coefficient},
                       {"probe_logprob", r.probe_logprob},
                       {"continuation_ids", r.continuation_ids},
                       {"continuation", r.continuation}});
    }
    return {{"vector", vector_name}, {"probe_token", probe_token}, {"rows", arr}};
}

// ---------------------------------------------------------------------------
// VectorStore

VectorStore::VectorStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_ / "vectors", ec);
    if (ec) {
        throw IoError("cannot create vector store at " + root_.string() + ": " + ec.message());
    }
}

namespace {

void write_atomic(const fs::path& path, const char* data, size_t n) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(data, std::streamsize(n));
        if (!out) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::vector<float> read_payload(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<size_t>(in.tellg());
    if (bytes % 4 != 0) throw ParseError(path.string() + ": payload is not a whole number of float32 values");
    in.seekg(0);
    std::vector<float> v(bytes / 4);
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(bytes));
    return v;
}

}  // namespace

std::vector<SteeringVector> VectorStore::list_unlocked() const {
    std::vector<SteeringVector> out;
    const fs::path dir = root_ / "vectors";
    std::vector<fs::path> metas;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".json") metas.push_back(entry.path());
    }
    std::sort(metas.begin(), metas.end());
    for (const auto& meta_path : metas) {
        std::ifstream in(meta_path);
        nlohmann::json meta;
        try {
            meta = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(meta_path.string() + ": " + e.what());
        }
        fs::path payload_path = meta_path;
        payload_path.replace_extension(".f32");
        SteeringVector v = SteeringVector::from_metadata(meta, read_payload(payload_path));
        if (v.id.empty()) v.id = meta_path.stem().string();
        out.push_back(std::move(v));
    }
    return out;
}

std::string VectorStore::save(SteeringVector v, bool overwrite) {
    if (v.name.empty()) throw InvalidArgument("vector store: vectors need a name");
    v.norm = v.recompute_norm();

    std::unique_lock lock(mu_);
    for (const auto& existing : list_unlocked()) {
        if (existing.name != v.name) continue;
        if (!overwrite) throw NameCollision("a vector named '" + v.name + "' already exists (" + existing.id + ")");
        fs::remove(root_ / "vectors" / (existing.id + ".json"));
        fs::remove(root_ / "vectors" / (existing.id + ".f32"));
    }

    v.id.clear();
    const std::string meta_wo_id = v.metadata().dump();
    v.id = Sha256().update(meta_wo_id).update(std::span<const float>(v.vector)).hex().substr(0, 16);

    const std::string meta = v.metadata().dump(2);
    write_atomic(root_ / "vectors" / (v.id + ".f32"), reinterpret_cast<const char*>(v.vector.data()),
                 v.vector.size() * sizeof(float));
    write_atomic(root_ / "vectors" / (v.id + ".json"), meta.data(), meta.size());
    return v.id;
}

std::vector<SteeringVector> VectorStore::list() const {
    std::shared_lock lock(mu_);
    return list_unlocked();
}

std::optional<SteeringVector> VectorStore::find(const std::string& name_or_id) const {
    std::shared_lock lock(mu_);
    for (auto& v : list_unlocked()) {
        if (v.name == name_or_id || v.id == name_or_id) return std::move(v);
    }
    return std::nullopt;
}

SteeringVector VectorStore::get(const std::string& name_or_id) const {
    auto v = find(name_or_id);
    if (!v) throw MissingVector("no stored vector named '" + name_or_id + "'");
    return std::move(*v);
}

PayloadResolver VectorStore::resolver() const {
    return [this](const std::string& ref) { return get(ref).vector; };
}

// ---------------------------------------------------------------------------
// Target catalog

TargetCatalog TargetCatalog::from_json(const nlohmann::json& j) {
    TargetCatalog c;
    try {
        if (j.contains("reference_model")) {
            const auto& r = j["reference_model"];
            c.reference.n_layers = r.value("n_layers", 0);
            c.reference.n_heads = r.value("n_heads", 0);
            c.reference.n_params = r.value("n_params", 0.0);
        }
        for (const auto& t : j.at("targets")) {
            SteeringTarget target;
            target.name = t.at("name").get<std::string>();
            target.negative_name = t.value("negative_name", std::string());
            if (t.contains("layer") && !t["layer"].is_null()) target.layer = t["layer"].get<int>();
            target.default_coefficient = t.value("default_coefficient", 1.0f);
            for (const auto& p : t.at("pairs")) {
                target.pairs.push_back({p.at("positive").get<std::string>(), p.at("negative").get<std::string>()});
            }
            c.targets.push_back(std::move(target));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("steering targets: ") + e.what());
    }
    return c;
}

TargetCatalog TargetCatalog::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

const SteeringTarget& TargetCatalog::get(const std::string& name) const {
    for (const auto& t : targets) {
        if (t.name == name) return t;
    }
    throw MissingVector("no steering target named '" + name + "'");
}

int map_layer(int configured, int n_layers, int reference_layers, LayerMapping mapping) {
    if (mapping == LayerMapping::Exact || reference_layers <= 0) {
        if (configured < 0 || configured >= n_layers) {
            throw InvalidAddress("configured layer " + std::to_string(configured) + " is out of range for a " +
                                 std::to_string(n_layers) + "-layer model (use proportional layer mapping)");
        }
        return configured;
    }
    const long mapped = std::lround(double(configured) * double(n_layers) / double(reference_layers));
    return static_cast<int>(std::clamp<long>(mapped, 0, n_layers - 1));
}

std::string depth_diagnostics(const ModelConfig& cfg, const TargetCatalog& catalog, LayerMapping mapping) {
    std::ostringstream os;
    os << "loaded model '" << cfg.model_id << "': " << cfg.n_layers << " layers, " << cfg.n_heads
       << " heads, d_model " << cfg.d_model << "\n";
    os << "configured layer indices were chosen for a reference model declared as " << catalog.reference.n_layers
       << " layers, " << catalog.reference.n_heads << " heads, " << catalog.reference.n_params << " parameters";
    if (catalog.reference.n_layers != cfg.n_layers || catalog.reference.n_heads != cfg.n_heads) {
        os << " (differs from the loaded model)";
    }
    os << "\n";
    for (const auto& t : catalog.targets) {
        if (!t.layer) continue;
        os << "  " << t.name << ": configured layer " << *t.layer << " -> ";
        try {
            os << "layer " << map_layer(*t.layer, cfg.n_layers, catalog.reference.n_layers, mapping);
        } catch (const InvalidAddress&) {
            os << "out of range";
        }
        os << (mapping == LayerMapping::Exact ? " (exact)" : " (proportional)") << "\n";
    }
    return os.str();
}

}  // namespace steerlab
