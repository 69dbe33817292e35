#pragma once

#include <cmath>
#include <string>

#include "vlpose/params.hpp"

namespace vlpose {

/// Repeat a [n x C] tensor along a new leading batch axis -> [N x n x C].
template <typename T>
Var<T> repeat_batch(const Var<T>& x, std::size_t batch) {
    Shape s{batch};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    return add_broadcast(Var<T>(Tensor<T>(s)), x);
}

/// [N x S x C] -> [N*h x S x C/h]
template <typename T>
Var<T> split_heads(const Var<T>& x, std::size_t heads) {
    const std::size_t N = x.shape()[0], S = x.shape()[1], C = x.shape()[2];
    if (heads == 1) return x;
    auto r = reshape(x, {N, S, heads, C / heads});
    return reshape(permute(r, {0, 2, 1, 3}), {N * heads, S, C / heads});
}

/// [N*h x S x dh] -> [N x S x h*dh]
template <typename T>
Var<T> merge_heads(const Var<T>& x, std::size_t batch, std::size_t heads) {
    if (heads == 1) return x;
    const std::size_t S = x.shape()[1], dh = x.shape()[2];
    auto r = reshape(x, {batch, heads, S, dh});
    return reshape(permute(r, {0, 2, 1, 3}), {batch, S, heads * dh});
}

enum class AttentionScale { per_head, literal };

/// Multi-head scaled dot-product attention. With projections disabled the
/// queries, keys and values are the raw inputs and no output map is applied.
template <typename T>
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;

    MultiHeadAttention(ParamSet<T>& ps, const std::string& prefix, const std::string& group, std::size_t channels,
                       std::size_t heads, bool projections, AttentionScale scale, std::size_t depth, Rng& rng)
        : channels_(channels), heads_(heads), projections_(projections) {
        if (heads == 0 || channels % heads != 0)
            throw ConfigError("attention: heads (" + std::to_string(heads) + ") must divide channels (" +
                              std::to_string(channels) + ")");
        const double denom = scale == AttentionScale::literal ? double(channels) : double(channels / heads);
        scale_ = T(1.0 / std::sqrt(denom));
        if (projections_) {
            auto mk = [&](const char* n) {
                Var<T> w = ps.add(prefix + "." + n + ".weight", init::xavier<T>(channels, channels, rng), group, true, depth);
                Var<T> b = ps.add(prefix + "." + n + ".bias", Tensor<T>({channels}), group, false, depth);
                return std::pair{w, b};
            };
            std::tie(wq_, bq_) = mk("q");
            std::tie(wk_, bk_) = mk("k");
            std::tie(wv_, bv_) = mk("v");
            std::tie(wo_, bo_) = mk("o");
        }
    }

    T scale() const { return scale_; }
    std::size_t heads() const { return heads_; }

    /// query [N x P x C], key_value [N x M x C] -> [N x P x C].
    /// If `probs` is given it receives the attention weights [N*h x P x M].
    Var<T> forward(const Var<T>& query, const Var<T>& key_value, Tensor<T>* probs = nullptr) const {
        const std::size_t N = query.shape().at(0);
        if (query.shape().size() != 3 || key_value.shape().size() != 3 || key_value.shape()[0] != N ||
            query.shape()[2] != channels_ || key_value.shape()[2] != channels_)
            throw DimensionError("attention: query " + shape_str(query.shape()) + " / key-value " +
                                 shape_str(key_value.shape()) + " do not match " + std::to_string(channels_) + " channels");
        Var<T> q = query, k = key_value, v = key_value;
        if (projections_) {
            q = linear(query, wq_, bq_);
            k = linear(key_value, wk_, bk_);
            v = linear(key_value, wv_, bv_);
        }
        auto qh = split_heads(q, heads_);
        auto kh = split_heads(k, heads_);
        auto vh = split_heads(v, heads_);
        auto attn = softmax_lastdim(vlpose::scale(bmm(qh, transpose_last2(kh)), scale_));
        if (probs) *probs = attn.value();
        auto out = merge_heads(bmm(attn, vh), N, heads_);
        if (projections_) out = linear(out, wo_, bo_);
        return out;
    }

private:
    std::size_t channels_ = 0;
    std::size_t heads_ = 1;
    bool projections_ = true;
    T scale_ = T(1);
    Var<T> wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
};

}  // namespace vlpose
