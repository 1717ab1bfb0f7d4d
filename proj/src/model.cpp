#include "steerlab/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "kernels.hpp"
#include "steerlab/errors.hpp"
#include "steerlab/safetensors.hpp"

namespace steerlab {

// ---------------------------------------------------------------------------
// Hook dispatch

struct Model::Hooks {
    // edits[layer][site] in list order.
    std::vector<std::array<std::vector<const Intervention*>, 4>> edits;
    std::set<SiteKey> capture;
    ActivationCache* cache = nullptr;
    int seq_len = 0;

    Hooks(const ModelConfig& cfg, const InterventionSet& set, const CaptureSet& cap, ActivationCache* out, int len)
        : edits(size_t(cfg.n_layers)), cache(out), seq_len(len) {
        for (const auto& iv : set) {
            edits[size_t(iv.address.layer)][size_t(iv.address.site)].push_back(&iv);
        }
        for (const auto& a : cap) capture.insert(SiteKey::of(a));
    }

    bool active(int layer, Site site) const {
        return !edits[size_t(layer)][size_t(site)].empty() ||
               (cache != nullptr && !capture.empty() &&
                capture.lower_bound({layer, site, -1}) != capture.upper_bound({layer, site, 1 << 30}));
    }

    void at(int layer, Site site, int head, const ActivationView& view) const {
        for (const Intervention* iv : edits[size_t(layer)][size_t(site)]) {
            if (site == Site::AttnHeadOut && iv->address.head.value_or(-1) != head) continue;
            apply(view, seq_len, *iv);
        }
        if (cache == nullptr) return;
        const SiteKey key{layer, site, head};
        if (!capture.contains(key)) return;
        Tensor t(view.rows, view.cols);
        for (int r = 0; r < view.rows; ++r) {
            std::memcpy(t.row(r).data(), view.row(r), sizeof(float) * size_t(view.cols));
        }
        cache->put(key, std::move(t));
    }
};

// ---------------------------------------------------------------------------
// Construction / loading

namespace {

void expect_shape(const Tensor& t, int rows, int cols, const std::string& name) {
    if (t.empty()) {
        throw MissingTensor("missing tensor " + name);
    }
    if (t.rows() != rows || t.cols() != cols) {
        throw ShapeMismatch("tensor " + name + " has shape [" + std::to_string(t.rows()) + ", " +
                            std::to_string(t.cols()) + "], expected [" + std::to_string(rows) + ", " +
                            std::to_string(cols) + "]");
    }
}

size_t count(const Tensor& t) { return t.size(); }

}  // namespace

Model::Model(ModelConfig config, ModelWeights weights) : config_(std::move(config)), weights_(std::move(weights)) {
    config_.validate();
    const int d = config_.d_model;
    const int f = config_.d_mlp;
    expect_shape(weights_.token_embedding, config_.vocab_size, d, "wte");
    expect_shape(weights_.position_embedding, config_.ctx_len, d, "wpe");
    expect_shape(weights_.final_ln_gain, 1, d, "ln_f.weight");
    expect_shape(weights_.final_ln_bias, 1, d, "ln_f.bias");
    if (static_cast<int>(weights_.layers.size()) != config_.n_layers) {
        throw MissingTensor("expected " + std::to_string(config_.n_layers) + " blocks, got " +
                            std::to_string(weights_.layers.size()));
    }
    parameter_count_ = count(weights_.token_embedding) + count(weights_.position_embedding) +
                       count(weights_.final_ln_gain) + count(weights_.final_ln_bias);
    for (int l = 0; l < config_.n_layers; ++l) {
        const auto& w = weights_.layers[size_t(l)];
        const std::string p = "h." + std::to_string(l) + ".";
        expect_shape(w.ln1_gain, 1, d, p + "ln_1.weight");
        expect_shape(w.ln1_bias, 1, d, p + "ln_1.bias");
        expect_shape(w.qkv_weight, d, 3 * d, p + "attn.c_attn.weight");
        expect_shape(w.qkv_bias, 1, 3 * d, p + "attn.c_attn.bias");
        expect_shape(w.attn_out_weight, d, d, p + "attn.c_proj.weight");
        expect_shape(w.attn_out_bias, 1, d, p + "attn.c_proj.bias");
        expect_shape(w.ln2_gain, 1, d, p + "ln_2.weight");
        expect_shape(w.ln2_bias, 1, d, p + "ln_2.bias");
        expect_shape(w.fc_weight, d, f, p + "mlp.c_fc.weight");
        expect_shape(w.fc_bias, 1, f, p + "mlp.c_fc.bias");
        expect_shape(w.fc_out_weight, f, d, p + "mlp.c_proj.weight");
        expect_shape(w.fc_out_bias, 1, d, p + "mlp.c_proj.bias");
        for (const Tensor* t : {&w.ln1_gain, &w.ln1_bias, &w.qkv_weight, &w.qkv_bias, &w.attn_out_weight,
                                &w.attn_out_bias, &w.ln2_gain, &w.ln2_bias, &w.fc_weight, &w.fc_bias,
                                &w.fc_out_weight, &w.fc_out_bias}) {
            parameter_count_ += count(*t);
        }
    }
}

Model Model::load(const std::filesystem::path& config_path, const std::filesystem::path& weights_path) {
    ModelConfig cfg = ModelConfig::load(config_path);
    auto tensors = read_safetensors(weights_path);

    std::string prefix;
    if (!tensors.contains("wte.weight") && tensors.contains("transformer.wte.weight")) prefix = "transformer.";

    auto take = [&](const std::string& name, int rows, int cols) {
        auto it = tensors.find(prefix + name);
        if (it == tensors.end()) {
            throw MissingTensor("checkpoint lacks tensor " + prefix + name);
        }
        NamedTensor& t = it->second;
        const bool vector_ok = rows == 1 && t.shape.size() == 1 && t.shape[0] == cols;
        const bool matrix_ok = t.shape.size() == 2 && t.shape[0] == rows && t.shape[1] == cols;
        if (!vector_ok && !matrix_ok) {
            std::string got;
            for (auto s : t.shape) got += (got.empty() ? "" : ", ") + std::to_string(s);
            throw ShapeMismatch("tensor " + name + " has shape [" + got + "], config implies [" +
                                (rows == 1 ? "" : std::to_string(rows) + ", ") + std::to_string(cols) + "]");
        }
        Tensor out(rows, cols, std::move(t.data));
        tensors.erase(it);
        return out;
    };

    const int d = cfg.d_model;
    const int f = cfg.d_mlp;
    ModelWeights w;
    w.token_embedding = take("wte.weight", cfg.vocab_size, d);
    w.position_embedding = take("wpe.weight", cfg.ctx_len, d);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "h." + std::to_string(l) + ".";
        LayerWeights lw;
        lw.ln1_gain = take(p + "ln_1.weight", 1, d);
        lw.ln1_bias = take(p + "ln_1.bias", 1, d);
        lw.qkv_weight = take(p + "attn.c_attn.weight", d, 3 * d);
        lw.qkv_bias = take(p + "attn.c_attn.bias", 1, 3 * d);
        lw.attn_out_weight = take(p + "attn.c_proj.weight", d, d);
        lw.attn_out_bias = take(p + "attn.c_proj.bias", 1, d);
        lw.ln2_gain = take(p + "ln_2.weight", 1, d);
        lw.ln2_bias = take(p + "ln_2.bias", 1, d);
        lw.fc_weight = take(p + "mlp.c_fc.weight", d, f);
        lw.fc_bias = take(p + "mlp.c_fc.bias", 1, f);
        lw.fc_out_weight = take(p + "mlp.c_proj.weight", f, d);
        lw.fc_out_bias = take(p + "mlp.c_proj.bias", 1, d);
        w.layers.push_back(std::move(lw));
    }
    w.final_ln_gain = take("ln_f.weight", 1, d);
    w.final_ln_bias = take("ln_f.bias", 1, d);
    return Model(std::move(cfg), std::move(w));
}

// ---------------------------------------------------------------------------
// Forward pass

std::vector<float> Model::embed(TokenId token, int position) const {
    if (token < 0 || token >= config_.vocab_size) {
        throw OutOfRangeId("token id " + std::to_string(token) + " outside [0, " + std::to_string(config_.vocab_size) +
                           ")");
    }
    if (position < 0 || position >= config_.ctx_len) {
        throw ContextOverflow("position " + std::to_string(position) + " beyond context length " +
                              std::to_string(config_.ctx_len));
    }
    const auto te = weights_.token_embedding.row(token);
    const auto pe = weights_.position_embedding.row(position);
    std::vector<float> out(size_t(config_.d_model));
    for (size_t i = 0; i < out.size(); ++i) out[i] = te[i] + pe[i];
    return out;
}

void Model::run_block(int layer, Tensor& x, int first_position, const float* prefix_k, const float* prefix_v,
                      float* new_k, float* new_v, const Hooks* hooks, bool independent) const {
    const auto& w = weights_.layers[size_t(layer)];
    const int m = x.rows();
    const int d = config_.d_model;
    const int dh = config_.d_head;
    const int nh = config_.n_heads;
    const float eps = config_.layer_norm_eps;
    const size_t ds = size_t(d);

    // Sequence mode: one hook set over consecutive positions. Independent mode:
    // every row sits at first_position and has its own hook set.
    auto hook = [&](Site site, int head, Tensor& t, int col0, int cols) {
        if (!independent) {
            if (hooks[0].active(layer, site)) {
                hooks[0].at(layer, site, head, {t.data() + col0, t.rows(), cols, size_t(t.cols()), first_position});
            }
            return;
        }
        for (int r = 0; r < t.rows(); ++r) {
            if (hooks[r].active(layer, site)) {
                hooks[r].at(layer, site, head, {t.row(r).data() + col0, 1, cols, size_t(t.cols()), first_position});
            }
        }
    };

    hook(Site::ResidPre, -1, x, 0, d);

    // Attention.
    Tensor h(m, d);
    for (int r = 0; r < m; ++r) {
        kernels::layer_norm(x.row(r).data(), w.ln1_gain.data(), w.ln1_bias.data(), h.row(r).data(), d, eps);
    }
    Tensor qkv(m, 3 * d);
    kernels::matmul(h.data(), m, d, ds, w.qkv_weight.data(), 3 * d, w.qkv_bias.data(), qkv.data(), size_t(3 * d));
    for (int r = 0; r < m; ++r) {
        std::memcpy(new_k + size_t(r) * ds, qkv.row(r).data() + d, sizeof(float) * ds);
        std::memcpy(new_v + size_t(r) * ds, qkv.row(r).data() + 2 * d, sizeof(float) * ds);
    }

    const float scale_div = std::sqrt(float(dh));
    Tensor z(m, d);
    std::vector<float> scores(size_t(first_position + m));
    std::vector<float> acc(static_cast<size_t>(dh));
    for (int r = 0; r < m; ++r) {
        const int pos = independent ? first_position : first_position + r;
        const int n_keys = pos + 1;
        const size_t own = size_t(independent ? r : 0);
        for (int hh = 0; hh < nh; ++hh) {
            const size_t off = size_t(hh) * size_t(dh);
            const float* q = qkv.row(r).data() + off;
            for (int j = 0; j < n_keys; ++j) {
                const float* kj =
                    j < first_position ? prefix_k + size_t(j) * ds : new_k + (own + size_t(j - first_position)) * ds;
                scores[size_t(j)] = kernels::dot(q, kj + off, dh) / scale_div;
            }
            kernels::softmax(scores.data(), n_keys);
            std::fill(acc.begin(), acc.end(), 0.0f);
            for (int j = 0; j < n_keys; ++j) {
                const float* vj =
                    j < first_position ? prefix_v + size_t(j) * ds : new_v + (own + size_t(j - first_position)) * ds;
                const float p = scores[size_t(j)];
                for (int c = 0; c < dh; ++c) acc[size_t(c)] = acc[size_t(c)] + p * vj[off + size_t(c)];
            }
            std::memcpy(z.row(r).data() + off, acc.data(), sizeof(float) * size_t(dh));
        }
    }
    for (int hh = 0; hh < nh; ++hh) hook(Site::AttnHeadOut, hh, z, hh * dh, dh);

    Tensor attn_out(m, d);
    kernels::matmul(z.data(), m, d, ds, w.attn_out_weight.data(), d, w.attn_out_bias.data(), attn_out.data(), ds);
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] = x.data()[i] + attn_out.data()[i];

    // MLP.
    const int f = config_.d_mlp;
    for (int r = 0; r < m; ++r) {
        kernels::layer_norm(x.row(r).data(), w.ln2_gain.data(), w.ln2_bias.data(), h.row(r).data(), d, eps);
    }
    Tensor hidden(m, f);
    kernels::matmul(h.data(), m, d, ds, w.fc_weight.data(), f, w.fc_bias.data(), hidden.data(), size_t(f));
    kernels::gelu(hidden.data(), hidden.size());
    Tensor mlp(m, d);
    kernels::matmul(hidden.data(), m, f, size_t(f), w.fc_out_weight.data(), d, w.fc_out_bias.data(), mlp.data(), ds);
    hook(Site::MlpOut, -1, mlp, 0, d);
    for (size_t i = 0; i < x.size(); ++i) x.data()[i] = x.data()[i] + mlp.data()[i];

    hook(Site::ResidPost, -1, x, 0, d);
}

Tensor Model::unembed(const Tensor& x, LogitsScope scope) const {
    const int d = config_.d_model;
    const int first = scope == LogitsScope::Last ? x.rows() - 1 : 0;
    const int rows = x.rows() - first;
    Tensor normed(rows, d);
    for (int r = 0; r < rows; ++r) {
        kernels::layer_norm(x.row(first + r).data(), weights_.final_ln_gain.data(), weights_.final_ln_bias.data(),
                            normed.row(r).data(), d, config_.layer_norm_eps);
    }
    Tensor logits(rows, config_.vocab_size);
    kernels::dot_table(normed.data(), rows, size_t(d), weights_.token_embedding.data(), config_.vocab_size, d,
                       logits.data(), size_t(config_.vocab_size));
    return logits;
}

DecodeState Model::new_state() const {
    DecodeState s;
    s.keys_.resize(size_t(config_.n_layers));
    s.values_.resize(size_t(config_.n_layers));
    return s;
}

namespace {

void ensure_rows(Tensor& t, int rows, int cols, int used) {
    if (t.rows() >= rows) return;
    Tensor grown(std::max(rows, t.rows() * 2), cols);
    if (used > 0) std::memcpy(grown.data(), t.data(), sizeof(float) * size_t(used) * size_t(cols));
    t = std::move(grown);
}

}  // namespace

Tensor Model::extend(DecodeState& state, std::span<const TokenId> ids, const InterventionSet& interventions,
                     LogitsScope scope, const CaptureSet& capture, ActivationCache* cache) const {
    const int p0 = state.length_;
    const int m = static_cast<int>(ids.size());
    if (m == 0) {
        throw InvalidArgument("extend: no tokens given");
    }
    const int seq_len = p0 + m;
    if (seq_len > config_.ctx_len) {
        throw ContextOverflow("sequence of " + std::to_string(seq_len) + " tokens exceeds context length " +
                              std::to_string(config_.ctx_len));
    }
    for (const auto& a : capture) {
        const auto problems = address_problems(a, config_);
        if (!problems.empty()) throw InvalidAddress("capture " + a.to_string() + ": " + problems.front());
    }
    require_valid(interventions, config_);

    const int d = config_.d_model;
    Tensor x(m, d);
    for (int r = 0; r < m; ++r) {
        const auto e = embed(ids[size_t(r)], p0 + r);
        std::memcpy(x.row(r).data(), e.data(), sizeof(float) * size_t(d));
    }

    const Hooks hooks(config_, interventions, capture, cache, seq_len);
    for (int l = 0; l < config_.n_layers; ++l) {
        Tensor& k = state.keys_[size_t(l)];
        Tensor& v = state.values_[size_t(l)];
        ensure_rows(k, seq_len, d, p0);
        ensure_rows(v, seq_len, d, p0);
        run_block(l, x, p0, k.data(), v.data(), k.data() + size_t(p0) * size_t(d), v.data() + size_t(p0) * size_t(d),
                  &hooks, false);
    }
    state.length_ = seq_len;
    state.tokens_.insert(state.tokens_.end(), ids.begin(), ids.end());
    return unembed(x, scope);
}

ForwardResult Model::forward(std::span<const TokenId> ids, const InterventionSet& interventions,
                             const CaptureSet& capture, LogitsScope scope) const {
    if (ids.empty()) {
        throw InvalidArgument("forward: empty token sequence");
    }
    ForwardResult result;
    DecodeState state = new_state();
    result.logits = extend(state, ids, interventions, scope, capture, capture.empty() ? nullptr : &result.cache);
    return result;
}

void Model::check_resume(const DecodeState& prefix, int start_layer) const {
    const int p = prefix.length_;
    if (p + 1 > config_.ctx_len) {
        throw ContextOverflow("position " + std::to_string(p) + " beyond context length " +
                              std::to_string(config_.ctx_len));
    }
    if (start_layer < 0 || start_layer >= config_.n_layers) {
        throw InvalidAddress("start layer " + std::to_string(start_layer) + " out of range");
    }
}

Tensor Model::resume(const DecodeState& prefix, int start_layer, Tensor x, const Hooks* hooks) const {
    const int p = prefix.length_;
    const size_t n = size_t(x.rows()) * size_t(config_.d_model);
    std::vector<float> k(n), v(n);
    for (int l = start_layer; l < config_.n_layers; ++l) {
        const float* pk = p > 0 ? prefix.keys_[size_t(l)].data() : nullptr;
        const float* pv = p > 0 ? prefix.values_[size_t(l)].data() : nullptr;
        run_block(l, x, p, pk, pv, k.data(), v.data(), hooks, true);
    }
    return unembed(x, LogitsScope::All);
}

std::vector<float> Model::step_from_layer(const DecodeState& prefix, int start_layer, std::span<const float> resid_pre,
                                          const InterventionSet& interventions, const CaptureSet& capture,
                                          ActivationCache* cache) const {
    check_resume(prefix, start_layer);
    if (static_cast<int>(resid_pre.size()) != config_.d_model) {
        throw ShapeMismatch("resid_pre row has width " + std::to_string(resid_pre.size()));
    }
    require_valid(interventions, config_);
    const Hooks hooks(config_, interventions, capture, cache, prefix.length_ + 1);
    return resume(prefix, start_layer, Tensor(1, config_.d_model, {resid_pre.begin(), resid_pre.end()}), &hooks)
        .values();
}

Tensor Model::step_batch_from_layer(const DecodeState& prefix, int start_layer, const Tensor& resid_pre,
                                    std::span<const InterventionSet> interventions) const {
    check_resume(prefix, start_layer);
    if (resid_pre.cols() != config_.d_model || resid_pre.rows() < 1) {
        throw ShapeMismatch("resid_pre rows must be [n >= 1, d_model]");
    }
    if (interventions.size() != size_t(resid_pre.rows())) {
        throw InvalidArgument("step_batch_from_layer: one intervention set per row is required");
    }
    std::vector<Hooks> hooks;
    hooks.reserve(interventions.size());
    for (const auto& set : interventions) {
        require_valid(set, config_);
        hooks.emplace_back(config_, set, CaptureSet{}, nullptr, prefix.length_ + 1);
    }
    return resume(prefix, start_layer, resid_pre, hooks.data());
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

TokenId sample(std::span<const float> logits, float temperature, std::mt19937_64& rng) {
    std::vector<double> p(logits.size());
    double m = -INFINITY;
    for (float l : logits) m = std::max(m, double(l) / temperature);
    double sum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(double(logits[i]) / temperature - m);
        sum += p[i];
    }
    // 53 random bits -> [0, 1); independent of the standard library's
    // distribution implementations.
    const double u = double(rng() >> 11) * 0x1.0p-53 * sum;
    double c = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        c += p[i];
        if (u < c) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(p.size() - 1);
}

}  // namespace

std::vector<TokenId> Model::generate(std::span<const TokenId> prompt, const GenerationConfig& gen,
                                     const InterventionSet& interventions) const {
    if (prompt.empty()) {
        throw InvalidArgument("generate: empty prompt");
    }
    if (gen.max_new_tokens < 0) {
        throw InvalidArgument("generate: max_new_tokens must be >= 0");
    }
    if (static_cast<int>(prompt.size()) + gen.max_new_tokens > config_.ctx_len) {
        throw ContextOverflow("prompt (" + std::to_string(prompt.size()) + ") + max_new_tokens (" +
                              std::to_string(gen.max_new_tokens) + ") exceeds context length " +
                              std::to_string(config_.ctx_len));
    }
    if (gen.mode == GenerationConfig::Mode::Sample && !(gen.temperature > 0.0f)) {
        throw InvalidArgument("generate: temperature must be positive");
    }
    std::vector<TokenId> out;
    if (gen.max_new_tokens == 0) return out;

    std::mt19937_64 rng(gen.seed);
    auto pick = [&](const Tensor& logits) {
        const auto row = logits.row(logits.rows() - 1);
        return gen.mode == GenerationConfig::Mode::Greedy ? argmax(row) : sample(row, gen.temperature, rng);
    };
    auto done = [&](TokenId t) {
        return static_cast<int>(out.size()) >= gen.max_new_tokens || (gen.stop_token && *gen.stop_token == t);
    };

    if (gen.use_kv_cache && position_stationary(interventions)) {
        DecodeState state = new_state();
        Tensor logits = extend(state, prompt, interventions, LogitsScope::Last);
        while (true) {
            const TokenId t = pick(logits);
            out.push_back(t);
            if (done(t)) break;
            logits = extend(state, std::span<const TokenId>(&t, 1), interventions, LogitsScope::Last);
        }
        return out;
    }

    std::vector<TokenId> seq(prompt.begin(), prompt.end());
    while (true) {
        const ForwardResult r = forward(seq, interventions, {}, LogitsScope::Last);
        const TokenId t = pick(r.logits);
        out.push_back(t);
        seq.push_back(t);
        if (done(t)) break;
    }
    return out;
}

nlohmann::json GenerationConfig::to_json() const {
    nlohmann::json j = {{"max_new_tokens", max_new_tokens},
                        {"mode", mode == Mode::Greedy ? "greedy" : "sample"},
                        {"use_kv_cache", use_kv_cache}};
    if (mode == Mode::Sample) {
        j["temperature"] = temperature;
        j["seed"] = seed;
    }
    if (stop_token) j["stop_token"] = *stop_token;
    return j;
}

GenerationConfig GenerationConfig::from_json(const nlohmann::json& j) {
    GenerationConfig g;
    if (j.is_null()) return g;
    if (!j.is_object()) throw ParseError("gen_config: expected an object");
    g.max_new_tokens = j.value("max_new_tokens", g.max_new_tokens);
    const std::string mode = j.value("mode", std::string("greedy"));
    if (mode == "greedy") {
        g.mode = Mode::Greedy;
    } else if (mode == "sample") {
        g.mode = Mode::Sample;
    } else {
        throw InvalidArgument("gen_config.mode must be \"greedy\" or \"sample\"");
    }
    g.temperature = j.value("temperature", g.temperature);
    g.seed = j.value("seed", g.seed);
    g.use_kv_cache = j.value("use_kv_cache", g.use_kv_cache);
    if (j.contains("stop_token") && !j["stop_token"].is_null()) g.stop_token = j["stop_token"].get<TokenId>();
    return g;
}

// ---------------------------------------------------------------------------
// Helpers

const Tensor& ActivationCache::at(const SiteKey& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        throw InvalidAddress("activation not captured: layer " + std::to_string(key.layer) + " " +
                             std::string(to_string(key.site)) + (key.head >= 0 ? " head " + std::to_string(key.head) : ""));
    }
    return it->second;
}

std::vector<float> log_softmax(std::span<const float> row) {
    float m = row[0];
    for (float v : row) m = std::max(m, v);
    double sum = 0.0;
    for (float v : row) sum += std::exp(double(v) - double(m));
    const float lse = m + static_cast<float>(std::log(sum));
    std::vector<float> out(row.size());
    for (size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
    return out;
}

std::vector<float> next_token_log_probs(const Tensor& logits) {
    if (logits.rows() == 0) throw InvalidArgument("next_token_log_probs: empty logits");
    return log_softmax(logits.row(logits.rows() - 1));
}

TokenId argmax(std::span<const float> row) {
    size_t best = 0;
    for (size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) best = i;
    }
    return static_cast<TokenId>(best);
}

bool bitwise_equal(std::span<const float> a, std::span<const float> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace steerlab
