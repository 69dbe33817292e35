#pragma once

#include <string>
#include <vector>

#include "vlpose/attention.hpp"

namespace vlpose {

enum class PromptInsertion { shallow, deep };

inline PromptInsertion prompt_insertion_from_string(const std::string& s) {
    if (s == "shallow") return PromptInsertion::shallow;
    if (s == "deep") return PromptInsertion::deep;
    throw ConfigError("unknown prompt insertion '" + s + "' (expected shallow or deep)");
}

inline std::string to_string(PromptInsertion p) { return p == PromptInsertion::shallow ? "shallow" : "deep"; }

struct EncoderConfig {
    std::size_t input_h = 256;
    std::size_t input_w = 192;
    std::size_t patch = 16;
    std::size_t channels = 64;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 4;
    std::size_t prompt_tokens = 0;
    PromptInsertion insertion = PromptInsertion::shallow;
    double drop_path = 0.1;

    std::size_t grid_h() const { return input_h / patch; }
    std::size_t grid_w() const { return input_w / patch; }
    std::size_t num_patches() const { return grid_h() * grid_w(); }

    void validate() const {
        if (patch == 0 || input_h == 0 || input_w == 0 || input_h % patch != 0 || input_w % patch != 0)
            throw ConfigError("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                              " is not divisible by patch size " + std::to_string(patch));
        if (channels == 0 || heads == 0 || channels % heads != 0)
            throw ConfigError("heads (" + std::to_string(heads) + ") must divide channels (" + std::to_string(channels) + ")");
        if (drop_path < 0.0 || drop_path >= 1.0) throw ConfigError("drop_path must lie in [0, 1)");
    }
};

struct EncoderRun {
    bool train = false;
    bool use_prompts = true;
    Rng* rng = nullptr;  // drop-path draws; required when train && drop_path > 0
};

/// Pre-norm transformer over patch tokens with optional learnable prompt tokens.
/// Prompt tokens are prepended and stripped again, so the output is always [N x P x C].
template <typename T>
class VisionEncoder {
public:
    VisionEncoder() = default;

    VisionEncoder(ParamSet<T>& ps, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t C = cfg.channels, P = cfg.num_patches(), pd = 3 * cfg.patch * cfg.patch;
        const std::size_t top = cfg.depth + 1;  // embeddings sit below every layer
        patch_w_ = ps.add("encoder.patch_embed.weight", init::xavier<T>(pd, C, rng), "encoder.patch_embed", true, top);
        patch_b_ = ps.add("encoder.patch_embed.bias", Tensor<T>({C}), "encoder.patch_embed", false, top);
        pos_ = ps.add("encoder.pos_embed", init::normal<T>({P, C}, rng, 0.02), "encoder.pos_embed", false, top);
        for (std::size_t i = 0; i < cfg.depth; ++i) {
            const std::string pre = "encoder.layer." + std::to_string(i);
            const std::size_t d = cfg.depth - i;
            const std::size_t hid = C * cfg.mlp_ratio;
            Layer L;
            L.ln1_g = ps.add(pre + ".ln1.gamma", Tensor<T>({C}, T(1)), pre, false, d);
            L.ln1_b = ps.add(pre + ".ln1.beta", Tensor<T>({C}), pre, false, d);
            L.attn = MultiHeadAttention<T>(ps, pre + ".attn", pre, C, cfg.heads, true, AttentionScale::per_head, d, rng);
            L.ln2_g = ps.add(pre + ".ln2.gamma", Tensor<T>({C}, T(1)), pre, false, d);
            L.ln2_b = ps.add(pre + ".ln2.beta", Tensor<T>({C}), pre, false, d);
            L.fc1_w = ps.add(pre + ".mlp.fc1.weight", init::xavier<T>(C, hid, rng), pre, true, d);
            L.fc1_b = ps.add(pre + ".mlp.fc1.bias", Tensor<T>({hid}), pre, false, d);
            L.fc2_w = ps.add(pre + ".mlp.fc2.weight", init::xavier<T>(hid, C, rng), pre, true, d);
            L.fc2_b = ps.add(pre + ".mlp.fc2.bias", Tensor<T>({C}), pre, false, d);
            layers_.push_back(std::move(L));
        }
        if (cfg.prompt_tokens > 0) {
            // Uniform init with the patch-embedding fan (visual prompt tuning convention).
            const double bound = std::sqrt(6.0 / double(pd + C));
            const std::size_t count = cfg.insertion == PromptInsertion::deep ? std::max<std::size_t>(cfg.depth, 1) : 1;
            for (std::size_t i = 0; i < count; ++i) {
                const std::string name = cfg.insertion == PromptInsertion::deep
                                             ? "encoder.prompt.layer." + std::to_string(i)
                                             : std::string("encoder.prompt.tokens");
                prompts_.push_back(ps.add(name, init::uniform<T>({cfg.prompt_tokens, C}, rng, bound), "encoder.prompt", false, 0));
            }
        }
    }

    const EncoderConfig& config() const { return cfg_; }
    const std::vector<Var<T>>& prompt_tokens() const { return prompts_; }

    /// Linear projection of non-overlapping d x d patches: [N x 3 x H x W] -> [N x P x C].
    Var<T> patch_embed(const Var<T>& images) const {
        const Shape& s = images.shape();
        const std::size_t d = cfg_.patch;
        if (s.size() != 4 || s[1] != 3) throw DimensionError("patch_embed: expected [N,3,H,W], got " + shape_str(s));
        if (s[2] % d != 0 || s[3] % d != 0)
            throw ConfigError("patch_embed: image " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                              " not divisible by patch size " + std::to_string(d));
        if (s[2] != cfg_.input_h || s[3] != cfg_.input_w)
            throw DimensionError("patch_embed: image " + shape_str(s) + " does not match configured input size");
        const std::size_t N = s[0], gh = s[2] / d, gw = s[3] / d;
        auto r = reshape(images, {N, 3, gh, d, gw, d});
        auto p = reshape(permute(r, {0, 2, 4, 1, 3, 5}), {N, gh * gw, 3 * d * d});
        return linear(p, patch_w_, patch_b_);
    }

    /// Patch tokens plus the learned positional embedding.
    Var<T> embed(const Var<T>& images) const { return add_broadcast(patch_embed(images), pos_); }

    /// Transformer stack over [N x P x C] tokens. depth 0 returns the input unchanged.
    Var<T> forward(const Var<T>& tokens, const EncoderRun& run = {}) const {
        const std::size_t N = tokens.shape().at(0), P = cfg_.num_patches();
        if (tokens.shape() != Shape{N, P, cfg_.channels})
            throw DimensionError("encoder: tokens " + shape_str(tokens.shape()) + " expected [N," + std::to_string(P) +
                                 "," + std::to_string(cfg_.channels) + "]");
        const bool prompts = run.use_prompts && !prompts_.empty();
        const std::size_t n = prompts ? cfg_.prompt_tokens : 0;
        Var<T> x = tokens;
        if (prompts) x = concat(repeat_batch(prompts_[0], N), x, 1);
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            if (prompts && cfg_.insertion == PromptInsertion::deep && i > 0)
                x = concat(repeat_batch(prompts_[i], N), slice(x, 1, n, P), 1);
            const Layer& L = layers_[i];
            auto h = layer_norm(x, L.ln1_g, L.ln1_b);
            x = add(x, drop_path(L.attn.forward(h, h), path_multipliers(i, N, run)));
            h = layer_norm(x, L.ln2_g, L.ln2_b);
            auto m = linear(gelu(linear(h, L.fc1_w, L.fc1_b)), L.fc2_w, L.fc2_b);
            x = add(x, drop_path(m, path_multipliers(i, N, run)));
        }
        return prompts ? slice(x, 1, n, P) : x;
    }

private:
    struct Layer {
        Var<T> ln1_g, ln1_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
        MultiHeadAttention<T> attn;
    };

    // Linearly increasing drop rate across layers; empty (identity) outside training.
    std::vector<T> path_multipliers(std::size_t layer, std::size_t batch, const EncoderRun& run) const {
        if (!run.train || cfg_.drop_path <= 0.0) return {};
        if (!run.rng) throw std::invalid_argument("encoder: training with drop_path requires an rng");
        const double rate = cfg_.depth > 1 ? cfg_.drop_path * double(layer) / double(cfg_.depth - 1) : cfg_.drop_path;
        if (rate <= 0.0) return {};
        const double keep = 1.0 - rate;
        std::vector<T> m(batch);
        for (auto& v : m) v = run.rng->uniform() < keep ? T(1.0 / keep) : T(0);
        return m;
    }

    EncoderConfig cfg_;
    Var<T> patch_w_, patch_b_, pos_;
    std::vector<Layer> layers_;
    std::vector<Var<T>> prompts_;
};

}  // namespace vlpose
