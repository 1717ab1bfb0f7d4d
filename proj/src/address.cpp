#include "steerlab/address.hpp"

#include "steerlab/errors.hpp"

namespace steerlab {

std::string_view to_string(Site site) {
    switch (site) {
        case Site::ResidPre: return "resid_pre";
        case Site::AttnHeadOut: return "attn_head_out";
        case Site::MlpOut: return "mlp_out";
        case Site::ResidPost: return "resid_post";
    }
    return "?";
}

Site site_from_string(std::string_view name) {
    if (name == "resid_pre") return Site::ResidPre;
    if (name == "attn_head_out") return Site::AttnHeadOut;
    if (name == "mlp_out") return Site::MlpOut;
    if (name == "resid_post") return Site::ResidPost;
    throw InvalidArgument("unknown site '" + std::string(name) + "'");
}

bool Positions::selects(int position, int seq_len) const {
    switch (kind) {
        case Kind::All: return true;
        case Kind::Last: return position == seq_len - 1;
        case Kind::Explicit:
            for (int i : indices) {
                if (i == position) return true;
            }
            return false;
    }
    return false;
}

std::string ActivationAddress::to_string() const {
    std::string s = "L" + std::to_string(layer) + "." + std::string(steerlab::to_string(site));
    if (head) s += ".H" + std::to_string(*head);
    switch (positions.kind) {
        case Positions::Kind::All: break;
        case Positions::Kind::Last: s += "@last"; break;
        case Positions::Kind::Explicit: {
            s += "@[";
            for (size_t i = 0; i < positions.indices.size(); ++i) {
                if (i) s += ",";
                s += std::to_string(positions.indices[i]);
            }
            s += "]";
            break;
        }
    }
    return s;
}

int site_width(Site site, const ModelConfig& cfg) { return site == Site::AttnHeadOut ? cfg.d_head : cfg.d_model; }

std::vector<std::string> address_problems(const ActivationAddress& a, const ModelConfig& cfg, int seq_len) {
    std::vector<std::string> out;
    if (a.layer < 0 || a.layer >= cfg.n_layers) {
        out.push_back("layer out of range: " + std::to_string(a.layer) + " not in [0, " + std::to_string(cfg.n_layers) +
                      ")");
    }
    if (a.site == Site::AttnHeadOut) {
        if (!a.head) {
            out.push_back("attn_head_out requires a head index");
        } else if (*a.head < 0 || *a.head >= cfg.n_heads) {
            out.push_back("head out of range: " + std::to_string(*a.head) + " not in [0, " +
                          std::to_string(cfg.n_heads) + ")");
        }
    } else if (a.head) {
        out.push_back("head index given for non-head site " + std::string(to_string(a.site)));
    }
    if (a.positions.kind == Positions::Kind::Explicit) {
        for (int i : a.positions.indices) {
            if (i < 0 || i >= cfg.ctx_len || (seq_len >= 0 && i >= seq_len)) {
                out.push_back("position out of range: " + std::to_string(i));
                break;
            }
        }
    }
    return out;
}

}  // namespace steerlab
