#pragma once

#include <charconv>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vlpose/pose_decoders.hpp"
#include "vlpose/relation_matcher.hpp"
#include "vlpose/text_embed.hpp"
#include "vlpose/vision_encoder.hpp"

namespace vlpose {

/// Which prompt each sample's text features come from.
enum class PromptMode { style, fixed, random };

inline PromptMode prompt_mode_from_string(const std::string& s) {
    if (s == "style") return PromptMode::style;
    if (s == "fixed") return PromptMode::fixed;
    if (s == "random") return PromptMode::random;
    throw ConfigError("unknown prompt mode '" + s + "' (expected style, fixed or random)");
}

inline std::string to_string(PromptMode m) {
    return m == PromptMode::style ? "style" : m == PromptMode::fixed ? "fixed" : "random";
}

enum class FinetuneMode { full, visual_prompt, last_layer };

inline FinetuneMode finetune_mode_from_string(const std::string& s) {
    if (s == "full") return FinetuneMode::full;
    if (s == "visual_prompt") return FinetuneMode::visual_prompt;
    if (s == "last_layer") return FinetuneMode::last_layer;
    throw ConfigError("unknown finetune mode '" + s + "' (expected full, visual_prompt or last_layer)");
}

inline std::string to_string(FinetuneMode m) {
    return m == FinetuneMode::full ? "full" : m == FinetuneMode::visual_prompt ? "visual_prompt" : "last_layer";
}

struct ModelConfig {
    EncoderConfig encoder;
    MatcherVariant matcher = MatcherVariant::E_T;
    std::size_t matcher_heads = 4;
    bool matcher_literal = false;
    AttentionScale attention_scale = AttentionScale::per_head;
    std::size_t text_len = 8;
    std::size_t text_dim = 64;
    std::string decoder = "First-AMiddle-Final";
    std::size_t keypoints = 17;
    PromptMode prompt = PromptMode::style;
    std::uint64_t text_seed = 0;
    std::uint64_t init_seed = 0;

    std::size_t heatmap_h() const { return encoder.input_h / 4; }
    std::size_t heatmap_w() const { return encoder.input_w / 4; }

    void validate() const {
        encoder.validate();
        wiring_from_name(decoder);
        if (keypoints == 0) throw ConfigError("keypoints must be positive");
        if (text_len == 0 || text_dim == 0) throw ConfigError("text_len and text_dim must be positive");
        if (encoder.patch != 16)
            throw ConfigError("patch size must be 16 so that two 2x upsampling blocks reach quarter resolution");
        if (encoder.channels % 4 != 0) throw ConfigError("channels must be a multiple of 4");
        if (matcher != MatcherVariant::none && !matcher_literal && (matcher_heads == 0 || encoder.channels % matcher_heads != 0))
            throw ConfigError("matcher heads must divide channels");
    }

    std::map<std::string, std::string> to_map() const {
        return {{"input_h", std::to_string(encoder.input_h)},
                {"input_w", std::to_string(encoder.input_w)},
                {"patch", std::to_string(encoder.patch)},
                {"channels", std::to_string(encoder.channels)},
                {"depth", std::to_string(encoder.depth)},
                {"heads", std::to_string(encoder.heads)},
                {"mlp_ratio", std::to_string(encoder.mlp_ratio)},
                {"prompt_tokens", std::to_string(encoder.prompt_tokens)},
                {"prompt_insertion", to_string(encoder.insertion)},
                {"drop_path", fmt_double(encoder.drop_path)},
                {"matcher", to_string(matcher)},
                {"matcher_heads", std::to_string(matcher_heads)},
                {"matcher_literal", matcher_literal ? "true" : "false"},
                {"attention_scale", attention_scale == AttentionScale::per_head ? "per_head" : "literal"},
                {"text_len", std::to_string(text_len)},
                {"text_dim", std::to_string(text_dim)},
                {"decoder", decoder},
                {"keypoints", std::to_string(keypoints)},
                {"prompt", to_string(prompt)},
                {"text_seed", std::to_string(text_seed)},
                {"init_seed", std::to_string(init_seed)}};
    }

    /// Sets one key; returns false if the key is not a model key.
    bool set(const std::string& key, const std::string& v) {
        auto uint = [&]() -> std::size_t {
            try {
                std::size_t pos = 0;
                const unsigned long long x = std::stoull(v, &pos);
                if (pos != v.size() || (!v.empty() && v[0] == '-')) throw std::invalid_argument(v);
                return static_cast<std::size_t>(x);
            } catch (const std::exception&) {
                throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
            }
        };
        auto boolean = [&] {
            if (v == "true" || v == "1") return true;
            if (v == "false" || v == "0") return false;
            throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
        };
        if (key == "input_h") encoder.input_h = uint();
        else if (key == "input_w") encoder.input_w = uint();
        else if (key == "patch") encoder.patch = uint();
        else if (key == "channels") encoder.channels = uint();
        else if (key == "depth") encoder.depth = uint();
        else if (key == "heads") encoder.heads = uint();
        else if (key == "mlp_ratio") encoder.mlp_ratio = uint();
        else if (key == "prompt_tokens") encoder.prompt_tokens = uint();
        else if (key == "prompt_insertion") encoder.insertion = prompt_insertion_from_string(v);
        else if (key == "drop_path") encoder.drop_path = parse_double(key, v);
        else if (key == "matcher") matcher = matcher_variant_from_string(v);
        else if (key == "matcher_heads") matcher_heads = uint();
        else if (key == "matcher_literal") matcher_literal = boolean();
        else if (key == "attention_scale") {
            if (v == "per_head") attention_scale = AttentionScale::per_head;
            else if (v == "literal") attention_scale = AttentionScale::literal;
            else throw ConfigError("attention_scale must be per_head or literal");
        } else if (key == "text_len") text_len = uint();
        else if (key == "text_dim") text_dim = uint();
        else if (key == "decoder") {
            wiring_from_name(v);
            decoder = v;
        } else if (key == "keypoints") keypoints = uint();
        else if (key == "prompt") prompt = prompt_mode_from_string(v);
        else if (key == "text_seed") text_seed = uint();
        else if (key == "init_seed") init_seed = uint();
        else return false;
        return true;
    }

    static ModelConfig from_map(const std::map<std::string, std::string>& m) {
        ModelConfig c;
        for (const auto& [k, v] : m)
            if (!c.set(k, v)) throw ConfigError("unknown model key '" + k + "'");
        c.validate();
        return c;
    }

    /// The frozen model recovered by removing prompts, matcher and auxiliary branch.
    ModelConfig stripped() const {
        ModelConfig c = *this;
        c.encoder.prompt_tokens = 0;
        c.matcher = MatcherVariant::none;
        c.decoder = "Baseline";
        return c;
    }

    /// Shortest text that parses back to exactly `d`.
    static std::string fmt_double(double d) {
        char buf[32];
        const auto r = std::to_chars(buf, buf + sizeof buf, d);
        return std::string(buf, r.ptr);
    }
    static double parse_double(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
        }
    }
};

struct ModelRun {
    bool train = false;
    Rng* rng = nullptr;
    bool use_prompts = true;
};

/// Encoder + relation matcher + pose decoder over one parameter set.
template <typename T>
class VLPoseModel {
public:
    explicit VLPoseModel(const ModelConfig& cfg, const EmbeddingTable* table = nullptr) : cfg_(cfg), table_(table) {
        cfg_.validate();
        Rng rng(cfg_.init_seed);
        Rng enc_rng = rng.fork(1), match_rng = rng.fork(2), dec_rng = rng.fork(3);
        encoder_ = VisionEncoder<T>(ps_, cfg_.encoder, enc_rng);
        MatcherConfig mc;
        mc.variant = cfg_.matcher;
        mc.channels = cfg_.encoder.channels;
        mc.text_dim = cfg_.text_dim;
        mc.text_len = cfg_.text_len;
        mc.num_patches = cfg_.encoder.num_patches();
        mc.heads = cfg_.matcher_heads;
        mc.literal = cfg_.matcher_literal;
        mc.scale = cfg_.attention_scale;
        matcher_ = RelationMatcher<T>(ps_, mc, match_rng);
        DecoderConfig dc;
        dc.channels = cfg_.encoder.channels;
        dc.keypoints = cfg_.keypoints;
        dc.grid_h = cfg_.encoder.grid_h();
        dc.grid_w = cfg_.encoder.grid_w();
        dc.wiring = cfg_.decoder;
        decoder_ = PoseDecoder<T>(ps_, dc, dec_rng);
        if (table_ && cfg_.matcher != MatcherVariant::none)
            for (const auto& [prompt, t] : table_->entries)
                if (t.shape() != Shape{cfg_.text_len, cfg_.text_dim})
                    throw ConfigError("embedding table entry '" + prompt + "' is " + shape_str(t.shape()) +
                                      " but the model expects " + shape_str({cfg_.text_len, cfg_.text_dim}));
    }

    const ModelConfig& config() const { return cfg_; }
    ParamSet<T>& params() { return ps_; }
    const ParamSet<T>& params() const { return ps_; }
    const VisionEncoder<T>& encoder() const { return encoder_; }
    const RelationMatcher<T>& matcher() const { return matcher_; }
    const PoseDecoder<T>& decoder() const { return decoder_; }

    std::string prompt_text(int category) const {
        switch (cfg_.prompt) {
            case PromptMode::style: return prompt_for_category(category);
            case PromptMode::fixed: return std::string(kFixedPrompt);
            case PromptMode::random: return random_prompt(cfg_.text_seed);
        }
        return {};
    }

    /// Text features for one category, memoized.
    const Tensor<float>& text_features(int category) const {
        auto it = text_cache_.find(category);
        if (it != text_cache_.end()) return it->second;
        const auto src = table_ ? EmbeddingSource::from_table(*table_) : EmbeddingSource::pseudo(cfg_.text_seed);
        auto tf = embed_text(prompt_text(category), cfg_.text_len, cfg_.text_dim, src);
        return text_cache_.emplace(category, std::move(tf.tokens)).first->second;
    }

    Var<T> text_batch(const std::vector<int>& categories) const {
        const std::size_t L = cfg_.text_len, D = cfg_.text_dim;
        Tensor<T> t({categories.size(), L, D});
        for (std::size_t n = 0; n < categories.size(); ++n) {
            const auto& f = text_features(categories[n]);
            for (std::size_t i = 0; i < L * D; ++i) t[n * L * D + i] = T(f[i]);
        }
        return Var<T>(std::move(t));
    }

    /// images [N x 3 x H x W] -> heatmaps [N x K x H/4 x W/4].
    Var<T> forward(const Var<T>& images, const std::vector<int>& categories, const ModelRun& run = {}) const {
        if (images.shape().at(0) != categories.size()) throw DimensionError("forward: one category per image required");
        EncoderRun er{run.train, run.use_prompts, run.rng};
        Var<T> E = encoder_.forward(encoder_.embed(images), er);
        Var<T> R;
        if (cfg_.matcher != MatcherVariant::none) R = matcher_.forward(E, text_batch(categories));
        else if (decoder_.wiring().uses_relation()) R = Var<T>(Tensor<T>(E.shape()));
        DecoderRun dr{run.train && ps_.group_trainable("decoder.main"), run.train && ps_.group_trainable("decoder.aux")};
        return decoder_.forward(E, R, dr);
    }

    /// Freezes everything outside the mode's trainable set.
    void apply_trainable_mask(FinetuneMode mode) {
        const std::string last = cfg_.encoder.depth ? "encoder.layer." + std::to_string(cfg_.encoder.depth - 1) : "";
        for (const auto& [name, e] : ps_.entries()) {
            bool on = true;
            if (mode == FinetuneMode::visual_prompt)
                on = e.group == "encoder.prompt" || e.group == "matcher" || e.group == "decoder.aux";
            else if (mode == FinetuneMode::last_layer)
                on = e.group == last || e.group == "decoder.main" || e.group == "decoder.predictor";
            ps_.set_trainable(name, on);
        }
    }

    Archive to_archive() const {
        Archive ar;
        for (const auto& [k, v] : cfg_.to_map()) ar.config["model." + k] = v;
        ps_.export_to(ar);
        return ar;
    }

    /// Loads weights; with `partial`, parameters absent from the archive keep
    /// their initialization and their names are returned.
    std::vector<std::string> load_weights(const Archive& ar, bool partial = false) {
        return ps_.import_from(ar, !partial);
    }

private:
    ModelConfig cfg_;
    const EmbeddingTable* table_ = nullptr;
    ParamSet<T> ps_;
    VisionEncoder<T> encoder_;
    RelationMatcher<T> matcher_;
    PoseDecoder<T> decoder_;
    mutable std::map<int, Tensor<float>> text_cache_;
};

inline ModelConfig model_config_from_archive(const Archive& ar) {
    std::map<std::string, std::string> m;
    for (const auto& [k, v] : ar.config)
        if (k.rfind("model.", 0) == 0) m[k.substr(6)] = v;
    return ModelConfig::from_map(m);
}

/// Sum of f32 bit patterns over a parameter subset; used as a freeze checksum.
template <typename T>
std::uint64_t param_checksum(const ParamSet<T>& ps, const std::function<bool(const std::string&)>& select) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, e] : ps.entries()) {
        if (!select(name)) continue;
        h = hash_combine(h, fnv1a(name));
        for (T v : e.var.value().values()) {
            const double d = static_cast<double>(v);
            std::uint64_t bits;
            std::memcpy(&bits, &d, sizeof bits);
            h = hash_combine(h, bits);
        }
    }
    return h;
}

}  // namespace vlpose
