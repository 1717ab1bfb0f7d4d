#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/config.hpp"

namespace steerlab {

// Hook sites inside one transformer block.
//   resid_pre     residual stream entering the block       [seq, d_model]
//   attn_head_out one head's mixed values, i.e. the slice of the output
//                 projection's input that belongs to the head [seq, d_head]
//   mlp_out       MLP sublayer output before the residual add [seq, d_model]
//   resid_post    residual stream leaving the block       [seq, d_model]
enum class Site { ResidPre, AttnHeadOut, MlpOut, ResidPost };

std::string_view to_string(Site site);
// Throws InvalidArgument.
Site site_from_string(std::string_view name);

struct Positions {
    enum class Kind { All, Last, Explicit };

    Kind kind = Kind::All;
    std::vector<int> indices;  // Explicit only

    static Positions all() { return {}; }
    static Positions last() { return {Kind::Last, {}}; }
    static Positions at(std::vector<int> idx) { return {Kind::Explicit, std::move(idx)}; }

    bool selects(int position, int seq_len) const;

    bool operator==(const Positions&) const = default;
};

struct ActivationAddress {
    int layer = 0;
    Site site = Site::ResidPre;
    std::optional<int> head;
    Positions positions;

    static ActivationAddress resid_pre(int layer, Positions p = Positions::all()) {
        return {layer, Site::ResidPre, std::nullopt, std::move(p)};
    }
    static ActivationAddress resid_post(int layer, Positions p = Positions::all()) {
        return {layer, Site::ResidPost, std::nullopt, std::move(p)};
    }
    static ActivationAddress mlp_out(int layer, Positions p = Positions::all()) {
        return {layer, Site::MlpOut, std::nullopt, std::move(p)};
    }
    static ActivationAddress head_out(int layer, int head, Positions p = Positions::all()) {
        return {layer, Site::AttnHeadOut, head, std::move(p)};
    }

    std::string to_string() const;

    bool operator==(const ActivationAddress&) const = default;
};

// Position-free identity of a hook point; the key of ActivationCache.
struct SiteKey {
    int layer = 0;
    Site site = Site::ResidPre;
    int head = -1;

    static SiteKey of(const ActivationAddress& a) { return {a.layer, a.site, a.head.value_or(-1)}; }
    auto operator<=>(const SiteKey&) const = default;
};

// Width of one row at a site: d_head for head sites, d_model otherwise.
int site_width(Site site, const ModelConfig& cfg);

// Empty when the address is well formed for `cfg`; otherwise one message per
// problem found. `seq_len` < 0 skips the explicit-position bound check.
std::vector<std::string> address_problems(const ActivationAddress& a, const ModelConfig& cfg, int seq_len = -1);

}  // namespace steerlab
