#include "steerlab/causal.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include "steerlab/errors.hpp"
#include "steerlab/hashing.hpp"

namespace steerlab {

std::vector<PatchExperiment> build_corrupted_set(std::span<const ICLExample> dataset, const Tokenizer& tok,
                                                 uint64_t seed, const CorruptionOptions& opts) {
    if (opts.n_shots < 1) throw InvalidArgument("n_shots must be at least 1");
    if (dataset.size() < size_t(opts.n_shots) + 1) {
        throw InvalidArgument("dataset has " + std::to_string(dataset.size()) + " examples; need more than " +
                              std::to_string(opts.n_shots));
    }

    // Group answers by the token length they occupy after "A:".
    std::map<size_t, std::vector<size_t>> classes;
    for (size_t i = 0; i < dataset.size(); ++i) {
        classes[tok.encode(" " + dataset[i].answer).size()].push_back(i);
    }
    SplitRng rng(seed);
    std::vector<std::string> corrupted_answer(dataset.size());
    for (auto& [len, members] : classes) {
        if (members.size() < 2) {
            throw CannotAlign("answer '" + dataset[members.front()].answer + "' is the only one spanning " +
                              std::to_string(len) + " tokens");
        }
        // Sattolo's shuffle yields a single cycle, so nobody keeps their own slot.
        std::vector<size_t> perm = members;
        for (size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[size_t(rng.below(i))]);
        for (size_t k = 0; k < members.size(); ++k) corrupted_answer[members[k]] = dataset[perm[k]].answer;
    }
    const size_t n = opts.n_examples > 0 ? std::min(dataset.size(), size_t(opts.n_examples)) : dataset.size();
    std::vector<PatchExperiment> out;
    out.reserve(n);
    for (size_t qi = 0; qi < n; ++qi) {
        const ICLExample& query = dataset[qi];
        const auto shots = select_shots(dataset, opts.n_shots, rng.next(), query);
        std::vector<ICLExample> bad = shots;
        for (auto& s : bad) {
            const auto it = std::find(dataset.begin(), dataset.end(), s);
            s.answer = corrupted_answer[size_t(it - dataset.begin())];
        }
        PatchExperiment e;
        e.query = query;
        e.clean_ids = tok.encode(build_icl_prompt(shots, query.question));
        e.corrupted_ids = tok.encode(build_icl_prompt(bad, query.question));
        e.correct_token = answer_token(tok, query.answer);
        if (e.clean_ids.size() != e.corrupted_ids.size()) {
            throw CannotAlign("clean and corrupted prompts for '" + query.question + "' differ in length (" +
                              std::to_string(e.clean_ids.size()) + " vs " + std::to_string(e.corrupted_ids.size()) +
                              ")");
        }
        out.push_back(std::move(e));
    }
    return out;
}

PatchScore patch_and_score(const Model& model, const PatchExperiment& exp, const ActivationAddress& address,
                           const InterventionSet& extra) {
    if (exp.clean_ids.size() != exp.corrupted_ids.size()) {
        throw CannotAlign("clean and corrupted prompts differ in length");
    }
    const ForwardResult clean = model.forward(exp.clean_ids, {}, {address}, LogitsScope::Last);
    const Tensor& act = clean.cache.at(address);

    const auto logp_of = [&](const InterventionSet& set) {
        const Tensor logits = model.forward(exp.corrupted_ids, set, {}, LogitsScope::Last).logits;
        return next_token_log_probs(logits)[size_t(exp.correct_token)];
    };
    InterventionSet patched = extra;
    patched.push_back(Intervention::replace(address, act));

    PatchScore s;
    s.logp_corrupted = logp_of(extra);
    s.logp_patched = logp_of(patched);
    s.delta = s.logp_patched - s.logp_corrupted;
    return s;
}

std::string to_string(AblationMode m) { return m == AblationMode::Zero ? "zero" : "mean"; }

AblationMode ablation_from_string(const std::string& s) {
    if (s == "zero") return AblationMode::Zero;
    if (s == "mean") return AblationMode::Mean;
    throw InvalidArgument("unknown ablation mode '" + s + "' (expected zero or mean)");
}

std::string experiments_hash(std::span<const PatchExperiment> experiments) {
    Sha256 h;
    for (const auto& e : experiments) {
        h.update(std::span<const int32_t>(e.clean_ids));
        h.update("|");
        h.update(std::span<const int32_t>(e.corrupted_ids));
        const int32_t t = e.correct_token;
        h.update(std::span<const int32_t>(&t, 1));
        h.update(";");
    }
    return h.hex();
}

namespace {

// per layer, per head: one d_head row
using HeadRows = std::vector<std::vector<std::vector<float>>>;

CaptureSet all_heads(const ModelConfig& cfg) {
    CaptureSet cap;
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) cap.push_back(ActivationAddress::head_out(l, h));
    }
    return cap;
}

HeadRows final_head_rows(const ModelConfig& cfg, const ActivationCache& cache) {
    HeadRows out(size_t(cfg.n_layers), std::vector<std::vector<float>>(size_t(cfg.n_heads)));
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            const Tensor& t = cache.at(SiteKey{l, Site::AttnHeadOut, h});
            const auto row = t.row(t.rows() - 1);
            out[size_t(l)][size_t(h)].assign(row.begin(), row.end());
        }
    }
    return out;
}

// Dataset mean of the corrupted run's final-position head outputs, summed in
// experiment order.
HeadRows mean_head_outputs(const Model& model, std::span<const PatchExperiment> experiments) {
    const auto& cfg = model.config();
    HeadRows sum(size_t(cfg.n_layers),
                 std::vector<std::vector<float>>(size_t(cfg.n_heads), std::vector<float>(size_t(cfg.d_head), 0.0f)));
    const CaptureSet cap = all_heads(cfg);
    for (const auto& e : experiments) {
        const auto r = model.forward(e.corrupted_ids, {}, cap, LogitsScope::Last);
        const HeadRows rows = final_head_rows(cfg, r.cache);
        for (size_t l = 0; l < sum.size(); ++l)
            for (size_t h = 0; h < sum[l].size(); ++h)
                for (size_t i = 0; i < sum[l][h].size(); ++i) sum[l][h][i] += rows[l][h][i];
    }
    const float n = float(experiments.size());
    for (auto& layer : sum)
        for (auto& head : layer)
            for (float& v : head) v /= n;
    return sum;
}

InterventionSet ablate_others(int layer, int keep, int n_heads, Positions positions, const HeadRows* means) {
    InterventionSet set;
    for (int h = 0; h < n_heads; ++h) {
        if (h == keep) continue;
        const auto a = ActivationAddress::head_out(layer, h, positions);
        if (means) {
            set.push_back(Intervention::replace(a, Tensor::row_vector((*means)[size_t(layer)][size_t(h)])));
        } else {
            set.push_back(Intervention::zero(a));
        }
    }
    return set;
}

// Per-experiment effects through the single-position resume path: everything
// before the final position is shared, so each cell costs two partial steps.
Tensor cie_fast(const Model& model, const PatchExperiment& e, const HeadRows* means) {
    const auto& cfg = model.config();
    const int n = static_cast<int>(e.corrupted_ids.size());
    const auto clean = model.forward(e.clean_ids, {}, all_heads(cfg), LogitsScope::Last);
    const HeadRows clean_rows = final_head_rows(cfg, clean.cache);

    DecodeState prefix = model.new_state();
    if (n > 1) model.extend(prefix, std::span(e.corrupted_ids).first(size_t(n - 1)));
    CaptureSet resid;
    for (int l = 0; l < cfg.n_layers; ++l) resid.push_back(ActivationAddress::resid_pre(l));
    ActivationCache corrupted;
    model.step_from_layer(prefix, 0, model.embed(e.corrupted_ids.back(), n - 1), {}, resid, &corrupted);

    // per layer: rows 2h (others ablated) and 2h+1 (plus the clean patch) in one pass
    const int H = cfg.n_heads;
    Tensor out(cfg.n_layers, H);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto row = corrupted.at(SiteKey{l, Site::ResidPre, -1}).row(0);
        Tensor rows(2 * H, cfg.d_model);
        std::vector<InterventionSet> sets;
        sets.reserve(size_t(2 * H));
        for (int h = 0; h < H; ++h) {
            std::copy(row.begin(), row.end(), rows.row(2 * h).begin());
            std::copy(row.begin(), row.end(), rows.row(2 * h + 1).begin());
            InterventionSet set = ablate_others(l, h, H, Positions::last(), means);
            sets.push_back(set);
            set.push_back(Intervention::replace(ActivationAddress::head_out(l, h, Positions::last()),
                                                Tensor::row_vector(clean_rows[size_t(l)][size_t(h)])));
            sets.push_back(std::move(set));
        }
        const Tensor logits = model.step_batch_from_layer(prefix, l, rows, sets);
        for (int h = 0; h < H; ++h) {
            const float base = log_softmax(logits.row(2 * h))[size_t(e.correct_token)];
            const float patched = log_softmax(logits.row(2 * h + 1))[size_t(e.correct_token)];
            out.at(l, h) = patched - base;
        }
    }
    return out;
}

Tensor cie_reference(const Model& model, const PatchExperiment& e, const HeadRows* means, bool all_positions) {
    const auto& cfg = model.config();
    const Positions pos = all_positions ? Positions::all() : Positions::last();
    Tensor out(cfg.n_layers, cfg.n_heads);
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) {
            const auto extra = ablate_others(l, h, cfg.n_heads, pos, means);
            out.at(l, h) = patch_and_score(model, e, ActivationAddress::head_out(l, h, pos), extra).delta;
        }
    }
    return out;
}

template <class PerExperiment>
CIEMap reduce(const Model& model, std::span<const PatchExperiment> experiments, const CIEOptions& opts,
              PerExperiment&& fn) {
    if (experiments.empty()) throw InvalidArgument("no experiments");
    for (const auto& e : experiments) {
        if (e.clean_ids.size() != e.corrupted_ids.size()) {
            throw CannotAlign("clean and corrupted prompts differ in length");
        }
        if (e.clean_ids.empty()) throw InvalidArgument("empty experiment prompt");
    }
    const auto& cfg = model.config();
    std::optional<HeadRows> means;
    if (opts.ablation == AblationMode::Mean) means = mean_head_outputs(model, experiments);
    const HeadRows* mp = means ? &*means : nullptr;

    std::vector<Tensor> per(experiments.size());
    std::atomic<size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (size_t i; (i = next.fetch_add(1)) < experiments.size();) {
            try {
                per[i] = fn(model, experiments[i], mp);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                next = experiments.size();
            }
        }
    };
    const int n_threads = std::clamp(opts.n_threads, 1, static_cast<int>(experiments.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    CIEMap map;
    map.values = Tensor(cfg.n_layers, cfg.n_heads);
    for (const Tensor& t : per) {
        for (size_t i = 0; i < t.flat().size(); ++i) map.values.flat()[i] += t.flat()[i];
    }
    const float n = float(experiments.size());
    for (float& v : map.values.flat()) v /= n;
    map.n_examples = static_cast<int>(experiments.size());
    map.ablation = opts.ablation;
    map.all_positions = opts.all_positions;
    map.dataset_hash = experiments_hash(experiments);
    map.model_id = cfg.model_id;
    return map;
}

}  // namespace

CIEMap compute_cie_map(const Model& model, std::span<const PatchExperiment> experiments, const CIEOptions& opts) {
    if (opts.all_positions) return compute_cie_map_reference(model, experiments, opts);
    return reduce(model, experiments, opts, [](const Model& m, const PatchExperiment& e, const HeadRows* means) {
        return cie_fast(m, e, means);
    });
}

CIEMap compute_cie_map_reference(const Model& model, std::span<const PatchExperiment> experiments,
                                 const CIEOptions& opts) {
    const bool all = opts.all_positions;
    return reduce(model, experiments, opts, [all](const Model& m, const PatchExperiment& e, const HeadRows* means) {
        return cie_reference(m, e, means, all);
    });
}

nlohmann::json CIEMap::meta() const {
    return {{"n_examples", n_examples},
            {"ablation_mode", to_string(ablation)},
            {"positions", all_positions ? "all" : "final"},
            {"dataset_hash", dataset_hash},
            {"model_id", model_id},
            {"n_layers", values.rows()},
            {"n_heads", values.cols()}};
}

std::string CIEMap::to_csv() const {
    std::string out = "layer";
    for (int h = 0; h < values.cols(); ++h) out += ",h" + std::to_string(h);
    out += "\n";
    char buf[32];
    for (int l = 0; l < values.rows(); ++l) {
        out += std::to_string(l);
        for (int h = 0; h < values.cols(); ++h) {
            std::snprintf(buf, sizeof(buf), ",%.9g", double(values.at(l, h)));
            out += buf;
        }
        out += "\n";
    }
    return out;
}

std::vector<int> select_layers(const CIEMap& map, int k) {
    std::vector<std::pair<float, int>> best;
    for (int l = 0; l < map.values.rows(); ++l) {
        const auto row = map.values.row(l);
        best.emplace_back(*std::max_element(row.begin(), row.end()), l);
    }
    std::stable_sort(best.begin(), best.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> out;
    for (int i = 0; i < std::min<int>(k, static_cast<int>(best.size())); ++i) out.push_back(best[size_t(i)].second);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace steerlab
