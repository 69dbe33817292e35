#pragma once

#include <string>

#include "vlpose/attention.hpp"

namespace vlpose {

/// Key/value construction for the matcher's attention, plus the two
/// comparison modes: `none` (no text; R = 0) and `concat_bypass` (text and
/// image tokens concatenated and linearly re-projected to P tokens, no attention).
enum class MatcherVariant { none, T, E_dot_T, E_T, concat_bypass };

inline MatcherVariant matcher_variant_from_string(const std::string& s) {
    if (s == "none") return MatcherVariant::none;
    if (s == "T") return MatcherVariant::T;
    if (s == "E_dot_T") return MatcherVariant::E_dot_T;
    if (s == "E_T") return MatcherVariant::E_T;
    if (s == "concat_bypass") return MatcherVariant::concat_bypass;
    throw ConfigError("unknown matcher variant '" + s + "' (expected none, T, E_dot_T, E_T or concat_bypass)");
}

inline std::string to_string(MatcherVariant v) {
    switch (v) {
        case MatcherVariant::none: return "none";
        case MatcherVariant::T: return "T";
        case MatcherVariant::E_dot_T: return "E_dot_T";
        case MatcherVariant::E_T: return "E_T";
        case MatcherVariant::concat_bypass: return "concat_bypass";
    }
    return "?";
}

struct MatcherConfig {
    MatcherVariant variant = MatcherVariant::E_T;
    std::size_t channels = 64;    // C
    std::size_t text_dim = 64;    // D
    std::size_t text_len = 8;     // L
    std::size_t num_patches = 192;  // P (only the bypass mode depends on it)
    std::size_t heads = 4;
    bool literal = false;  // no q/k/v/o projections: Q = E, K = V = key/value tokens
    AttentionScale scale = AttentionScale::per_head;
};

/// T' = phi_T(T); build keys/values per variant; R' = attention(E, KV);
/// R = layer_norm(phi_R(R') + E). Shapes carry a leading batch axis.
template <typename T>
class RelationMatcher {
public:
    RelationMatcher() = default;

    RelationMatcher(ParamSet<T>& ps, const MatcherConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.variant == MatcherVariant::none) return;
        const std::size_t C = cfg.channels, D = cfg.text_dim;
        const std::string g = "matcher";
        phi_t_w_ = ps.add("matcher.phi_t.weight", init::xavier<T>(D, C, rng), g, true);
        phi_t_b_ = ps.add("matcher.phi_t.bias", Tensor<T>({C}), g, false);
        if (cfg.variant == MatcherVariant::concat_bypass) {
            const std::size_t M = cfg.num_patches + cfg.text_len;
            mix_w_ = ps.add("matcher.mix.weight", init::xavier<T>(M, cfg.num_patches, rng), g, true);
            return;
        }
        attn_ = MultiHeadAttention<T>(ps, "matcher.attn", g, C, cfg.literal ? 1 : cfg.heads, !cfg.literal, cfg.scale, 0, rng);
        phi_r_w_ = ps.add("matcher.phi_r.weight", init::xavier<T>(C, C, rng), g, true);
        phi_r_b_ = ps.add("matcher.phi_r.bias", Tensor<T>({C}), g, false);
        norm_g_ = ps.add("matcher.norm.gamma", Tensor<T>({C}, T(1)), g, false);
        norm_b_ = ps.add("matcher.norm.beta", Tensor<T>({C}), g, false);
    }

    const MatcherConfig& config() const { return cfg_; }
    const MultiHeadAttention<T>& attention() const { return attn_; }

    /// T [N x L x D] -> T' [N x L x C]
    Var<T> project_text(const Var<T>& text) const {
        if (text.shape().size() != 3 || text.shape()[2] != cfg_.text_dim)
            throw DimensionError("project_text: text " + shape_str(text.shape()) + " expected last dim " +
                                 std::to_string(cfg_.text_dim));
        return linear(text, phi_t_w_, phi_t_b_);
    }

    /// Key/value tokens [N x M x C] for the attention-based variants.
    static Var<T> build_key_value(MatcherVariant variant, const Var<T>& E, const Var<T>& Tp) {
        switch (variant) {
            case MatcherVariant::T: return Tp;
            case MatcherVariant::E_T: return concat(E, Tp, 1);
            case MatcherVariant::E_dot_T: {
                // Row-softmaxed cosine similarity S[i,j] = cos(E_i, T'_j); keys/values = [E, S T'].
                auto S = softmax_lastdim(bmm(l2_normalize_lastdim(E), transpose_last2(l2_normalize_lastdim(Tp))));
                return concat(E, bmm(S, Tp), 1);
            }
            default:
                throw ConfigError("build_key_value: variant '" + to_string(variant) + "' has no key/value input");
        }
    }

    /// E [N x P x C], text [N x L x D] -> R [N x P x C]. Variant none yields exact zeros.
    Var<T> forward(const Var<T>& E, const Var<T>& text, Tensor<T>* attn_probs = nullptr) const {
        if (E.shape().size() != 3 || E.shape()[2] != cfg_.channels)
            throw DimensionError("relation matcher: image features " + shape_str(E.shape()) + " expected [N,P," +
                                 std::to_string(cfg_.channels) + "]");
        if (cfg_.variant == MatcherVariant::none) return Var<T>(Tensor<T>(E.shape()));
        if (text.shape()[0] != E.shape()[0]) throw DimensionError("relation matcher: batch mismatch between E and T");
        auto Tp = project_text(text);
        if (cfg_.variant == MatcherVariant::concat_bypass) {
            if (E.shape()[1] != cfg_.num_patches || Tp.shape()[1] != cfg_.text_len)
                throw DimensionError("concat bypass: token counts do not match configuration");
            auto cat = transpose_last2(concat(E, Tp, 1));  // [N x C x (P+L)]
            return transpose_last2(linear(cat, mix_w_));   // [N x P x C]
        }
        auto kv = build_key_value(cfg_.variant, E, Tp);
        auto Rp = attn_.forward(E, kv, attn_probs);
        return layer_norm(add(linear(Rp, phi_r_w_, phi_r_b_), E), norm_g_, norm_b_);
    }

private:
    MatcherConfig cfg_;
    MultiHeadAttention<T> attn_;
    Var<T> phi_t_w_, phi_t_b_, phi_r_w_, phi_r_b_, norm_g_, norm_b_, mix_w_;
};

}  // namespace vlpose
