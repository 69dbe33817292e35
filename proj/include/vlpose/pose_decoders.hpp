#pragma once

#include <array>
#include <string>
#include <vector>

#include "vlpose/params.hpp"

namespace vlpose {

// ---------------------------------------------------------------------------
// Token <-> grid layout

/// [N x P x C] -> [N x C x gh x gw] (row-major token order).
template <typename T>
Var<T> tokens_to_grid(const Var<T>& tokens, std::size_t gh, std::size_t gw) {
    const Shape& s = tokens.shape();
    if (s.size() != 3 || s[1] != gh * gw)
        throw DimensionError("tokens_to_grid: " + shape_str(s) + " cannot form a " + std::to_string(gh) + "x" +
                             std::to_string(gw) + " grid");
    return permute(reshape(tokens, {s[0], gh, gw, s[2]}), {0, 3, 1, 2});
}

/// [N x C x gh x gw] -> [N x P x C]
template <typename T>
Var<T> grid_to_tokens(const Var<T>& grid) {
    const Shape& s = grid.shape();
    if (s.size() != 4) throw DimensionError("grid_to_tokens: expected [N,C,h,w], got " + shape_str(s));
    return reshape(permute(grid, {0, 2, 3, 1}), {s[0], s[2] * s[3], s[1]});
}

/// Grid dims for P tokens at the given input aspect; P must equal (H/d)(W/d).
inline std::pair<std::size_t, std::size_t> grid_dims(std::size_t tokens, std::size_t input_h, std::size_t input_w,
                                                     std::size_t patch) {
    const std::size_t gh = input_h / patch, gw = input_w / patch;
    if (gh * gw != tokens || tokens == 0)
        throw DimensionError("token count " + std::to_string(tokens) + " does not form the " + std::to_string(gh) + "x" +
                             std::to_string(gw) + " grid of a " + std::to_string(input_h) + "x" +
                             std::to_string(input_w) + " input");
    return {gh, gw};
}

// ---------------------------------------------------------------------------
// Building blocks

/// deconv(4, stride 2, pad 1) -> batch norm -> relu. Doubles spatial dims.
template <typename T>
class DecoderBlock {
public:
    DecoderBlock() = default;

    DecoderBlock(ParamSet<T>& ps, const std::string& prefix, const std::string& group, std::size_t cin, std::size_t cout,
                 Rng& rng) {
        // He-normal over the effective fan-in of a stride-2 4x4 transposed conv.
        weight_ = ps.add(prefix + ".deconv.weight", init::normal<T>({cin, cout, 4, 4}, rng, std::sqrt(2.0 / double(cin * 4))),
                         group, true);
        gamma_ = ps.add(prefix + ".bn.gamma", Tensor<T>({cout}, T(1)), group, false);
        beta_ = ps.add(prefix + ".bn.beta", Tensor<T>({cout}), group, false);
        stats_ = ps.add_buffer(prefix + ".bn", cout, group);
    }

    /// `train_stats` selects batch statistics (and running-stat updates).
    Var<T> forward(const Var<T>& x, bool train_stats) const {
        return relu(batch_norm2d(deconv2d(x, weight_), gamma_, beta_, *stats_, train_stats));
    }

    std::size_t out_channels() const { return gamma_.shape()[0]; }

private:
    Var<T> weight_, gamma_, beta_;
    std::shared_ptr<BatchNormStats<T>> stats_;
};

/// 1x1 convolution to one heatmap per keypoint.
template <typename T>
class Predictor {
public:
    Predictor() = default;
    Predictor(ParamSet<T>& ps, std::size_t cin, std::size_t keypoints, Rng& rng) {
        weight_ = ps.add("decoder.predictor.weight", init::normal<T>({keypoints, cin}, rng, 0.01), "decoder.predictor", true);
        bias_ = ps.add("decoder.predictor.bias", Tensor<T>({keypoints}), "decoder.predictor", false);
    }
    Var<T> forward(const Var<T>& x) const { return conv2d_1x1(x, weight_, bias_); }

private:
    Var<T> weight_, bias_;
};

// ---------------------------------------------------------------------------
// Wiring

enum class FusionPosition { First, Middle, Final };
enum class FusionDirection { into_main, into_aux };

struct FusionPoint {
    FusionPosition position;
    FusionDirection direction;
};

/// Explicit two-branch dataflow. With m/a the main/aux streams:
///   m0 = E (+R if first_main)          a0 = R (+E if first_aux)
///   m1 = f_m(m0)                       a1 = f_a(a0)
///   m2 = f_m(m1 (+a1 if middle_main))  a2 = f_a(a1 (+m1 if middle_aux))
///   out = p(m2 (+a2 if final_sum))
/// Additions at the first position happen in token space.
struct DecoderWiring {
    std::string name;
    bool first_main = false;
    bool first_aux = false;
    bool middle_main = false;
    bool middle_aux = false;
    bool final_sum = false;
    bool anchored = false;  // pinned to a closed-form equation

    /// Number of auxiliary blocks whose output can reach the predictor.
    std::size_t aux_blocks() const {
        if (final_sum || middle_aux) return 2;
        if (middle_main) return 1;
        return 0;
    }
    bool uses_relation() const { return first_main || aux_blocks() > 0; }

    std::vector<FusionPoint> points() const {
        std::vector<FusionPoint> p;
        if (first_main) p.push_back({FusionPosition::First, FusionDirection::into_main});
        if (first_aux) p.push_back({FusionPosition::First, FusionDirection::into_aux});
        if (middle_main) p.push_back({FusionPosition::Middle, FusionDirection::into_main});
        if (middle_aux) p.push_back({FusionPosition::Middle, FusionDirection::into_aux});
        if (final_sum) p.push_back({FusionPosition::Final, FusionDirection::into_main});
        return p;
    }
};

/// Baseline followed by the decoder-table names in table order, then "Middle".
inline const std::vector<std::string>& decoder_names() {
    static const std::vector<std::string> names{
        "Baseline",           "First",        "Final",       "Middle-Final", "First-Final",         "First-Middle",
        "First-Middle-Final", "AFirst-Middle-Final", "AFirst-Final", "AFirst-Middle", "First-AMiddle-Final", "Middle"};
    return names;
}

inline std::string decoder_names_joined() {
    std::string s;
    for (const auto& n : decoder_names()) s += (s.empty() ? "" : ", ") + n;
    return s;
}

/// Resolves a decoder name to its dataflow. "First", "First-Final" and
/// "First-AMiddle-Final" are pinned to the injector, extractor-injector and
/// dual extractor-injector equations; every other name follows the flag rule
/// documented on DecoderWiring (see assets/decoder_wirings.txt).
inline DecoderWiring wiring_from_name(const std::string& name) {
    DecoderWiring w;
    w.name = name;
    if (name == "Baseline") return w;
    if (name == "First") {
        w.first_main = w.anchored = true;
        return w;
    }
    if (name == "First-Final") {
        // K_ei = p(f_m(f_m(E)) + f_a(f_a(E + R))): main input stays E.
        w.first_aux = w.final_sum = w.anchored = true;
        return w;
    }
    if (name == "First-AMiddle-Final") {
        w.first_main = w.middle_aux = w.final_sum = w.anchored = true;
        return w;
    }
    bool ok = false;
    for (const auto& n : decoder_names()) ok = ok || n == name;
    if (!ok) throw ConfigError("unknown decoder '" + name + "'; valid names: " + decoder_names_joined());
    std::string rest = name;
    while (!rest.empty()) {
        const std::size_t dash = rest.find('-');
        const std::string part = rest.substr(0, dash);
        rest = dash == std::string::npos ? "" : rest.substr(dash + 1);
        if (part == "First") w.first_main = true;
        else if (part == "AFirst") w.first_aux = true;
        else if (part == "Middle") w.middle_main = true;
        else if (part == "AMiddle") w.middle_aux = true;
        else if (part == "Final") w.final_sum = true;
        else throw ConfigError("unknown decoder '" + name + "'; valid names: " + decoder_names_joined());
    }
    return w;
}

// ---------------------------------------------------------------------------
// Decoder

struct DecoderConfig {
    std::size_t channels = 64;  // C of the encoder tokens
    std::size_t keypoints = 17;
    std::size_t grid_h = 16;
    std::size_t grid_w = 12;
    std::string wiring = "Baseline";
};

struct DecoderRun {
    bool train_main_stats = false;
    bool train_aux_stats = false;
};

/// Main branch (two blocks), optional auxiliary branch, and the predictor.
/// Channel plan C -> C/2 -> C/4 -> N_k for both branches.
template <typename T>
class PoseDecoder {
public:
    PoseDecoder() = default;

    PoseDecoder(ParamSet<T>& ps, const DecoderConfig& cfg, Rng& rng) : cfg_(cfg), wiring_(wiring_from_name(cfg.wiring)) {
        const std::size_t C = cfg.channels;
        if (C < 4 || C % 4 != 0) throw ConfigError("decoder channels must be a positive multiple of 4");
        main_[0] = DecoderBlock<T>(ps, "decoder.main.0", "decoder.main", C, C / 2, rng);
        main_[1] = DecoderBlock<T>(ps, "decoder.main.1", "decoder.main", C / 2, C / 4, rng);
        const std::size_t na = wiring_.aux_blocks();
        if (na >= 1) aux_.push_back(DecoderBlock<T>(ps, "decoder.aux.0", "decoder.aux", C, C / 2, rng));
        if (na >= 2) aux_.push_back(DecoderBlock<T>(ps, "decoder.aux.1", "decoder.aux", C / 2, C / 4, rng));
        predictor_ = Predictor<T>(ps, C / 4, cfg.keypoints, rng);
    }

    const DecoderWiring& wiring() const { return wiring_; }
    const DecoderConfig& config() const { return cfg_; }

    const DecoderBlock<T>& main_block(std::size_t i) const { return main_.at(i); }
    const DecoderBlock<T>& aux_block(std::size_t i) const { return aux_.at(i); }
    const Predictor<T>& predictor() const { return predictor_; }

    /// E, R: [N x P x C] tokens. R may be undefined when the wiring ignores it.
    /// Returns heatmaps [N x N_k x 4gh x 4gw].
    Var<T> forward(const Var<T>& E, const Var<T>& R, const DecoderRun& run = {}) const {
        check_tokens(E, "E");
        const DecoderWiring& w = wiring_;
        if (w.uses_relation()) check_tokens(R, "R");
        auto grid = [&](const Var<T>& t) { return tokens_to_grid(t, cfg_.grid_h, cfg_.grid_w); };

        Var<T> m0 = w.first_main ? grid(add(E, R)) : grid(E);
        Var<T> m1 = main_[0].forward(m0, run.train_main_stats);
        Var<T> a1;
        if (!aux_.empty()) {
            Var<T> a0 = w.first_aux ? grid(add(R, E)) : grid(R);
            a1 = aux_[0].forward(a0, run.train_aux_stats);
        }
        Var<T> m2 = main_[1].forward(w.middle_main ? add(m1, a1) : m1, run.train_main_stats);
        Var<T> out = m2;
        if (aux_.size() == 2) {
            Var<T> a2 = aux_[1].forward(w.middle_aux ? add(a1, m1) : a1, run.train_aux_stats);
            if (w.final_sum) out = add(m2, a2);
        }
        return predictor_.forward(out);
    }

private:
    void check_tokens(const Var<T>& t, const char* what) const {
        if (!t.defined() || t.shape().size() != 3 || t.shape()[1] != cfg_.grid_h * cfg_.grid_w ||
            t.shape()[2] != cfg_.channels)
            throw DimensionError(std::string("decoder: ") + what + " " + (t.defined() ? shape_str(t.shape()) : "undefined") +
                                 " expected [N," + std::to_string(cfg_.grid_h * cfg_.grid_w) + "," +
                                 std::to_string(cfg_.channels) + "]");
    }

    DecoderConfig cfg_;
    DecoderWiring wiring_;
    std::array<DecoderBlock<T>, 2> main_;
    std::vector<DecoderBlock<T>> aux_;
    Predictor<T> predictor_;
};

// ---------------------------------------------------------------------------
// Closed-form decoders, transcribed directly from their equations. These share
// blocks with a PoseDecoder and exist so the generic engine can be pinned to them.

template <typename T>
struct BranchRefs {
    const DecoderBlock<T>* m[2];
    const DecoderBlock<T>* a[2];
    const Predictor<T>* p;
    std::size_t gh, gw;
    DecoderRun run;

    Var<T> fm(std::size_t i, const Var<T>& x) const { return m[i]->forward(x, run.train_main_stats); }
    Var<T> fa(std::size_t i, const Var<T>& x) const { return a[i]->forward(x, run.train_aux_stats); }
    Var<T> grid(const Var<T>& t) const { return tokens_to_grid(t, gh, gw); }
};

template <typename T>
BranchRefs<T> branch_refs(const PoseDecoder<T>& d, const DecoderRun& run = {}) {
    BranchRefs<T> b{};
    b.m[0] = &d.main_block(0);
    b.m[1] = &d.main_block(1);
    const std::size_t na = d.wiring().aux_blocks();
    b.a[0] = na >= 1 ? &d.aux_block(0) : nullptr;
    b.a[1] = na >= 2 ? &d.aux_block(1) : nullptr;
    b.p = &d.predictor();
    b.gh = d.config().grid_h;
    b.gw = d.config().grid_w;
    b.run = run;
    return b;
}

/// K_b = p(f_m(f_m(E)))
template <typename T>
Var<T> decode_baseline(const BranchRefs<T>& b, const Var<T>& E) {
    return b.p->forward(b.fm(1, b.fm(0, b.grid(E))));
}

/// K_i = p(f_m(f_m(E + R)))
template <typename T>
Var<T> decode_injector(const BranchRefs<T>& b, const Var<T>& E, const Var<T>& R) {
    return b.p->forward(b.fm(1, b.fm(0, b.grid(add(E, R)))));
}

/// K_ei = p(f_m(f_m(E)) + f_a(f_a(E + R)))
template <typename T>
Var<T> decode_extractor_injector(const BranchRefs<T>& b, const Var<T>& E, const Var<T>& R) {
    if (!b.a[1]) throw ConfigError("extractor-injector decoding needs two auxiliary blocks");
    return b.p->forward(add(b.fm(1, b.fm(0, b.grid(E))), b.fa(1, b.fa(0, b.grid(add(E, R))))));
}

/// K'_2ei = f_m(E + R);  K_2ei = p(f_m(K'_2ei) + f_a(K'_2ei + f_a(R)))
template <typename T>
Var<T> decode_dual(const BranchRefs<T>& b, const Var<T>& E, const Var<T>& R) {
    if (!b.a[1]) throw ConfigError("dual decoding needs two auxiliary blocks");
    auto k1 = b.fm(0, b.grid(add(E, R)));
    return b.p->forward(add(b.fm(1, k1), b.fa(1, add(k1, b.fa(0, b.grid(R))))));
}

}  // namespace vlpose
