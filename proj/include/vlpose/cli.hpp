#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlpose/config.hpp"

namespace vlpose::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Where relative paths resolve and where messages go.
struct Context {
    fs::path workdir = ".";
    std::ostream* out = &std::cout;
    std::ostream* err = &std::cerr;

    fs::path resolve(const std::string& p) const {
        if (p.empty()) return {};
        const fs::path q(p);
        return q.is_absolute() ? q : workdir / q;
    }
};

/// Runs `f`, mapping configuration errors to exit code 1 and every other
/// failure to exit code 2.
template <typename F>
int guarded(const Context& ctx, F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        *ctx.err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        *ctx.err << "error: " << e.what() << "\n";
        return kRuntime;
    }
}

inline std::optional<std::uint64_t> env_seed() {
    const char* s = std::getenv("VLPOSE_SEED");
    if (!s || !*s) return std::nullopt;
    RunConfig probe;
    probe.set("seed", s);
    return probe.train.seed;
}

/// File, then VLPOSE_SEED, then `key=value` overrides.
inline RunConfig build_config(const Context& ctx, const std::string& file, const std::vector<std::string>& sets) {
    RunConfig rc;
    if (!file.empty()) rc.load_file(ctx.resolve(file));
    rc.apply_env();
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        std::istringstream is(kv.substr(0, eq) + " = " + kv.substr(eq + 1));
        rc.parse(is, "--set");
    }
    return rc;
}

/// A dataset directory, or an annotations file whose images live in `images/` beside it.
inline SynthSet load_data(const Context& ctx, const std::string& path) {
    const fs::path p = ctx.resolve(path);
    if (fs::is_directory(p)) return load_image_set(p);
    if (!fs::exists(p)) throw std::runtime_error("dataset not found: " + p.string());
    return load_image_set(p.parent_path(), p);
}

inline Dataset load_dataset_annotations(const Context& ctx, const std::string& path) {
    const fs::path p = ctx.resolve(path);
    return load_annotations(fs::is_directory(p) ? p / "annotations.json" : p);
}

/// Owns the optional embedding table a model points into.
struct TextTable {
    std::optional<EmbeddingTable> table;
    const EmbeddingTable* get() const { return table ? &*table : nullptr; }
    static TextTable load(const Context& ctx, const std::string& path) {
        TextTable t;
        if (!path.empty()) t.table = load_embedding_table(ctx.resolve(path));
        return t;
    }
};

/// Keys that define the frozen backbone and therefore come from a base checkpoint.
inline const std::vector<std::string>& backbone_keys() {
    static const std::vector<std::string> k{"input_h", "input_w", "patch", "channels", "depth", "heads", "mlp_ratio", "keypoints"};
    return k;
}

/// The configuration for tuning on top of `base`: backbone keys from the
/// checkpoint, everything else from `rc`. Explicit conflicting keys are errors.
inline ModelConfig merge_backbone(const ModelConfig& base, const RunConfig& rc) {
    auto m = rc.model.to_map();
    const auto b = base.to_map();
    for (const auto& k : backbone_keys()) {
        if (rc.explicit_keys.count(k) && m.at(k) != b.at(k))
            throw ConfigError("key '" + k + "' = " + m.at(k) + " conflicts with the base checkpoint value " + b.at(k));
        m[k] = b.at(k);
    }
    return ModelConfig::from_map(m);
}

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
    std::string domain = "natural";
    std::size_t n = 100;
    std::optional<std::uint64_t> seed;
    std::string out;
};

inline int cmd_gen(const GenArgs& a, const Context& ctx) {
    return guarded(ctx, [&] {
        if (a.out.empty()) throw ConfigError("--out is required");
        const SynthDomain domain = SynthDomain::parse(a.domain);
        const std::uint64_t seed = a.seed ? *a.seed : env_seed().value_or(0);
        const SynthSet set = synth_dataset(domain, a.n, seed);
        const fs::path out = ctx.resolve(a.out);
        save_synth_set(out, set);
        write_text_file(out / "gen_config.txt", "domain = " + domain.str() + "\nn = " + std::to_string(a.n) +
                                                    "\nseed = " + std::to_string(seed) + "\n");
        *ctx.out << "wrote " << a.n << " " << domain.str() << " images to " << out.string() << "\n";
        return int(kOk);
    });
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config;
    std::vector<std::string> sets;
    std::string mode = "scratch";  // scratch | prompt_tune
    std::string decoder;
    std::string matcher;
    std::string base;
    std::string data;
    std::optional<std::uint64_t> seed;
    std::string out;
};

inline int cmd_train(const TrainArgs& a, const Context& ctx) {
    return guarded(ctx, [&] {
        if (a.out.empty()) throw ConfigError("--out is required");
        if (a.mode != "scratch" && a.mode != "prompt_tune")
            throw ConfigError("unknown mode '" + a.mode + "' (expected scratch or prompt_tune)");
        RunConfig rc = build_config(ctx, a.config, a.sets);
        if (a.seed) rc.set("seed", std::to_string(*a.seed));
        if (!a.decoder.empty()) rc.set("decoder", a.decoder);
        if (!a.matcher.empty()) rc.set("matcher", a.matcher);
        if (!a.data.empty()) rc.set("train_data", a.data);
        if (rc.train_data.empty()) throw ConfigError("no training data: pass --data or set train_data");

        const bool tune = a.mode == "prompt_tune";
        std::optional<Archive> base;
        TrainConfig tc = rc.train;
        if (tune) {
            if (a.base.empty()) throw ConfigError("--mode prompt_tune requires --base <checkpoint>");
            base = load_archive(ctx.resolve(a.base));
            rc.model = merge_backbone(model_config_from_archive(*base), rc);
            tc.lr = rc.tune_lr;
            tc.steps = rc.tune_steps;
            if (!rc.explicit_keys.count("finetune")) tc.mode = FinetuneMode::visual_prompt;
        } else if (tc.mode != FinetuneMode::full) {
            throw ConfigError("scratch training updates every parameter; finetune must be full");
        }
        rc.train.mode = tc.mode;
        rc.validate();

        const SynthSet data = load_data(ctx, rc.train_data);
        const PreparedSet prepared = prepare_set(data, rc.model.encoder.input_h, rc.model.encoder.input_w, rc.model.keypoints);
        const TextTable text = TextTable::load(ctx, rc.text_table);
        VLPoseModel<float> model(rc.model, text.get());
        if (tune) {
            const auto fresh = model.load_weights(*base, true);
            *ctx.out << "loaded base checkpoint; " << fresh.size() << " tensors start from initialization\n";
        }
        model.apply_trainable_mask(tc.mode);
        const auto& ps = model.params();
        auto frozen = [&](const std::string& n) { return !ps.trainable(n); };
        const std::uint64_t frozen_before = param_checksum(ps, frozen);
        *ctx.out << "parameters: " << count_params(ps).total << " total, " << count_params(ps, CountFilter::trainable).total
                 << " trainable (" << to_string(tc.mode) << ")\n";

        const fs::path out = ctx.resolve(a.out);
        fs::create_directories(out);
        std::string echo = "# command: train --mode " + a.mode + (tune ? " --base " + a.base : "") + "\n" + rc.render();
        write_text_file(out / "config.txt", echo);

        const std::size_t every = std::max<std::size_t>(1, tc.steps / 10);
        TrainIO io{out / "train_log.jsonl", out / "checkpoint", [&](std::size_t s, double loss) {
                       if (s % every == 0 || s + 1 == tc.steps)
                           *ctx.out << "step " << s << " loss " << fmt("%.6g", loss) << "\n";
                   }};
        const TrainResult res = train_loop(model, prepared, tc, io);
        if (param_checksum(ps, frozen) != frozen_before) throw std::runtime_error("a frozen parameter changed during training");
        if (tune) *ctx.out << "frozen-parameter checksum unchanged: " << frozen_before << "\n";
        if (res.diverged) {
            *ctx.err << "error: training diverged: " << res.message << "\n";
            return int(kRuntime);
        }
        *ctx.out << "wrote " << (out / "checkpoint").string() << "\n";
        return int(kOk);
    });
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string checkpoint;
    std::string annotations;
    std::string results;  // evaluate these predictions instead of running a model
    std::string text_table;
    std::string out;
    bool strip_prompts = false;
    std::size_t batch = 16;
};

/// Loads a checkpoint for inference; `strip` drops prompts, matcher and auxiliary branch.
inline VLPoseModel<float> load_model(const Archive& ar, bool strip, const EmbeddingTable* table) {
    ModelConfig mc = model_config_from_archive(ar);
    if (strip) mc = mc.stripped();
    VLPoseModel<float> model(mc, table);
    model.load_weights(ar);
    return model;
}

inline int cmd_eval(const EvalArgs& a, const Context& ctx) {
    return guarded(ctx, [&] {
        if (a.out.empty()) throw ConfigError("--out is required");
        if (a.annotations.empty()) throw ConfigError("--annotations is required");
        if (a.results.empty() == a.checkpoint.empty()) throw ConfigError("pass exactly one of --checkpoint or --results");
        if (a.batch == 0) throw ConfigError("--batch must be positive");
        Dataset ds;
        std::vector<Prediction> preds;
        if (!a.results.empty()) {
            ds = load_dataset_annotations(ctx, a.annotations);
            preds = load_results(ctx.resolve(a.results));
        } else {
            const Archive ar = load_archive(ctx.resolve(a.checkpoint));
            const TextTable text = TextTable::load(ctx, a.text_table);
            const VLPoseModel<float> model = load_model(ar, a.strip_prompts, text.get());
            const SynthSet data = load_data(ctx, a.annotations);
            const auto& mc = model.config();
            const PreparedSet prepared = prepare_set(data, mc.encoder.input_h, mc.encoder.input_w, mc.keypoints);
            ds = data.dataset;
            preds = predict(model, prepared, a.batch);
        }
        const EvalConfig ec = EvalConfig::coco();
        for (const auto& g : ds.annotations)
            if (g.keypoints.size() != ec.falloff.size())
                throw ConfigError("dataset has " + std::to_string(g.keypoints.size()) + " keypoints per instance, evaluation expects " +
                                  std::to_string(ec.falloff.size()));
        for (const auto& p : preds)
            if (p.keypoints.size() != ec.falloff.size())
                throw ConfigError("prediction has " + std::to_string(p.keypoints.size()) + " keypoints, dataset has " +
                                  std::to_string(ec.falloff.size()));
        const EvalResult r = compute_metrics(ds, preds, ec);
        const fs::path out = ctx.resolve(a.out);
        fs::create_directories(out);
        write_text_file(out / "metrics.csv", metrics_csv(r, ds));
        write_text_file(out / "metrics.json", metrics_json(r, ds).dump(2) + "\n");
        save_results(out / "results.json", preds);
        *ctx.out << "AP " << fmt("%.4f", r.ap) << " AP50 " << fmt("%.4f", r.ap50) << " AP75 " << fmt("%.4f", r.ap75) << " AR "
                 << fmt("%.4f", r.ar) << " AR50 " << fmt("%.4f", r.ar50) << " (" << r.num_instances << " instances)\n";
        return int(kOk);
    });
}

// ---------------------------------------------------------------------------
// dump-heatmaps

/// Min-max normalized 8-bit map; a constant map is written as zeros.
inline Image heatmap_image(const float* v, std::size_t h, std::size_t w) {
    const auto [lo, hi] = std::minmax_element(v, v + h * w);
    Image img(w, h, 1);
    if (*hi > *lo)
        for (std::size_t i = 0; i < h * w; ++i)
            img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * double(v[i] - *lo) / double(*hi - *lo)));
    return img;
}

inline std::string keypoint_label(std::size_t k, std::size_t num) {
    return num == kNumKeypoints ? keypoint_names()[k] : "kp" + std::to_string(k);
}

/// Writes one PGM per channel of `maps` [K x h x w] plus keypoints.json.
inline nlohmann::json dump_heatmaps(const Tensor<float>& maps, const CropTransform& tf, const fs::path& out) {
    if (maps.rank() != 3) throw DimensionError("dump_heatmaps: expected [K x h x w]");
    const std::size_t K = maps.shape()[0], h = maps.shape()[1], w = maps.shape()[2];
    fs::create_directories(out);
    const auto kps = heatmaps_to_keypoints(maps, tf);
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t k = 0; k < K; ++k) {
        char name[64];
        std::snprintf(name, sizeof name, "heatmap_%02zu_%s.pgm", k, keypoint_label(k, K).c_str());
        write_pnm(out / name, heatmap_image(maps.data() + k * h * w, h, w));
        arr.push_back({{"index", k},
                       {"name", keypoint_label(k, K)},
                       {"x", kps[k].x},
                       {"y", kps[k].y},
                       {"score", kps[k].score},
                       {"degenerate", kps[k].degenerate},
                       {"file", name}});
    }
    return {{"keypoints", arr}, {"score", instance_score(kps)}};
}

inline BBox parse_bbox(const std::string& s) {
    BBox b;
    if (std::sscanf(s.c_str(), "%lf,%lf,%lf,%lf", &b.x, &b.y, &b.w, &b.h) != 4 || !(b.w > 0 && b.h > 0))
        throw ConfigError("--bbox expects x,y,w,h with positive w and h, got '" + s + "'");
    return b;
}

struct DumpArgs {
    std::string checkpoint;
    std::string image;
    std::string bbox;  // x,y,w,h; whole image when empty
    int category = 15;
    std::string text_table;
    std::string out;
    bool strip_prompts = false;
};

inline int cmd_dump_heatmaps(const DumpArgs& a, const Context& ctx) {
    return guarded(ctx, [&] {
        if (a.checkpoint.empty() || a.image.empty() || a.out.empty())
            throw ConfigError("--checkpoint, --image and --out are required");
        category_name(a.category);
        const Archive ar = load_archive(ctx.resolve(a.checkpoint));
        const TextTable text = TextTable::load(ctx, a.text_table);
        const VLPoseModel<float> model = load_model(ar, a.strip_prompts, text.get());
        const Image img = read_pnm(ctx.resolve(a.image));
        const BBox box = a.bbox.empty() ? BBox{0, 0, double(img.width), double(img.height)} : parse_bbox(a.bbox);
        const auto& mc = model.config();
        const Crop crop = affine_crop(img, box, mc.encoder.input_h, mc.encoder.input_w);
        Tensor<float> x = crop.input;
        x = x.reshaped({1, 3, mc.encoder.input_h, mc.encoder.input_w});
        Tensor<float> maps;
        {
            NoGradGuard ng;
            maps = model.forward(Var<float>(x), {a.category}).value();
        }
        maps = maps.reshaped({mc.keypoints, mc.heatmap_h(), mc.heatmap_w()});
        const fs::path out = ctx.resolve(a.out);
        nlohmann::json j = dump_heatmaps(maps, crop.transform, out);
        j["image"] = a.image;
        j["bbox"] = {box.x, box.y, box.w, box.h};
        j["category_id"] = a.category;
        write_text_file(out / "keypoints.json", j.dump(2) + "\n");
        *ctx.out << "wrote " << mc.keypoints << " heatmaps to " << out.string() << "\n";
        return int(kOk);
    });
}

// ---------------------------------------------------------------------------
// params

struct ParamsArgs {
    std::string config;
    std::vector<std::string> sets;
};

/// Trainable-parameter counts of the configured model under each finetuning mode.
inline int cmd_params(const ParamsArgs& a, const Context& ctx) {
    return guarded(ctx, [&] {
        RunConfig rc = build_config(ctx, a.config, a.sets);
        rc.model.validate();
        VLPoseModel<float> model(rc.model);
        *ctx.out << "mode,trainable,total\n";
        for (FinetuneMode m : {FinetuneMode::full, FinetuneMode::visual_prompt, FinetuneMode::last_layer}) {
            model.apply_trainable_mask(m);
            *ctx.out << to_string(m) << "," << count_params(model.params(), CountFilter::trainable).total << ","
                     << count_params(model.params()).total << "\n";
        }
        return int(kOk);
    });
}

// ---------------------------------------------------------------------------
// ablate

struct AblateArgs {
    std::string suite = "all";  // matcher | prompt | decoder | tokens | all
    std::string config;
    std::vector<std::string> sets;
    std::string base;  // pretrained baseline for the Small size; trained when empty
    std::string pretrain_data, tune_data, eval_data;
    std::size_t n_pretrain = 400, n_tune = 400, n_eval = 140;
    std::optional<std::uint64_t> seed;
    std::string out;
};

/// One ablation table: a header line and labelled rows of cells.
struct Table {
    std::string name;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    static std::string cell(const std::string& s) {
        return s.find_first_of(",\"") == std::string::npos ? s : "\"" + s + "\"";
    }
    std::string csv() const {
        std::string s;
        auto line = [&](const std::vector<std::string>& v) {
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + cell(v[i]);
            s += "\n";
        };
        line(header);
        for (const auto& r : rows) line(r);
        return s;
    }
};

inline const std::vector<std::string>& ablate_suites() {
    static const std::vector<std::string> s{"matcher", "prompt", "decoder", "tokens", "all"};
    return s;
}

/// Backbone scale presets for the finetuning table.
struct SizePreset {
    const char* name;
    std::size_t channel_mult;
    std::size_t depth_mult;
};

inline const std::vector<SizePreset>& size_presets() {
    static const std::vector<SizePreset> p{{"Small", 1, 1}, {"Base", 2, 1}, {"Large", 3, 2}, {"Huge", 4, 2}};
    return p;
}

namespace detail {

struct RowMetrics {
    double ap = 0, ap50 = 0, ap75 = 0, ar = 0, ar50 = 0;
    std::vector<std::string> cells() const {
        return {fmt("%.2f", 100 * ap), fmt("%.2f", 100 * ap50), fmt("%.2f", 100 * ap75), fmt("%.2f", 100 * ar),
                fmt("%.2f", 100 * ar50)};
    }
};

/// Shared state of one ablation run: data, pretrained baselines and a row cache.
class Ablation {
public:
    Ablation(const AblateArgs& a, const Context& ctx) : args_(a), ctx_(ctx) {
        rc_ = build_config(ctx, a.config, a.sets);
        if (a.seed) rc_.set("seed", std::to_string(*a.seed));
        rc_.validate();
        out_ = ctx.resolve(a.out);
        text_ = TextTable::load(ctx, rc_.text_table);
        const std::uint64_t seed = rc_.train.seed;
        auto data = [&](const std::string& path, const char* domain, std::size_t n, std::uint64_t s) {
            return path.empty() ? synth_dataset(SynthDomain::parse(domain), n, s) : load_data(ctx, path);
        };
        pretrain_set_ = data(a.pretrain_data, "natural", a.n_pretrain, hash_combine(seed, 1));
        tune_set_ = data(a.tune_data, "art", a.n_tune, hash_combine(seed, 2));
        eval_set_ = data(a.eval_data, "art", a.n_eval, hash_combine(seed, 3));
        if (!a.base.empty()) {
            Archive ar = load_archive(ctx.resolve(a.base));
            const ModelConfig bc = model_config_from_archive(ar);
            rc_.model = merge_backbone(bc, rc_);
            bases_.emplace("Small", std::move(ar));
        }
    }

    /// Model configuration of a row: `prompt_tokens`, matcher, decoder and prompt from the config unless overridden.
    ModelConfig row_config(const SizePreset& size) const {
        ModelConfig c = rc_.model;
        c.encoder.channels *= size.channel_mult;
        c.encoder.depth *= size.depth_mult;
        return c;
    }

    /// Tunes `cfg` from the size's baseline and evaluates it on the art split.
    /// `mode` is ignored when `tune` is false (the baseline scored as is).
    RowMetrics run(const std::string& label, const SizePreset& size, const ModelConfig& cfg, FinetuneMode mode, bool tune = true) {
        std::string key = std::string(size.name) + "|" + (tune ? to_string(mode) : "none");
        for (const auto& [k, v] : cfg.to_map()) key += "|" + k + "=" + v;
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        const Archive& base = baseline(size);
        VLPoseModel<float> model(cfg, text_.get());
        model.load_weights(base, true);
        if (tune) {
            model.apply_trainable_mask(mode);
            if (count_params(model.params(), CountFilter::trainable).total > 0) {
                TrainConfig tc = rc_.train;
                tc.lr = rc_.tune_lr;
                tc.steps = rc_.tune_steps;
                tc.mode = mode;
                *ctx_.out << "  tuning " << size.name << " / " << label << "\n";
                const TrainResult r = train_loop(model, prepared(tune_set_, cfg), tc, {out_ / "logs" / (slug(size.name, label) + ".jsonl"), {}, {}});
                if (r.diverged) *ctx_.err << "warning: " << label << " diverged: " << r.message << "\n";
            }
        }
        const EvalResult e = compute_metrics(eval_set_.dataset, predict(model, prepared(eval_set_, cfg)), EvalConfig::coco());
        return cache_[key] = RowMetrics{e.ap, e.ap50, e.ap75, e.ar, e.ar50};
    }

    const RunConfig& config() const { return rc_; }
    const fs::path& out() const { return out_; }

private:
    static std::string slug(const std::string& size, const std::string& label) {
        std::string s = size + "_";
        for (char c : label) s += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
        return s;
    }

    const PreparedSet& prepared(const SynthSet& set, const ModelConfig& cfg) {
        const auto key = std::make_tuple(&set, cfg.encoder.input_h, cfg.encoder.input_w, cfg.keypoints);
        auto it = prepared_.find(key);
        if (it == prepared_.end())
            it = prepared_.emplace(key, prepare_set(set, cfg.encoder.input_h, cfg.encoder.input_w, cfg.keypoints)).first;
        return it->second;
    }

    const Archive& baseline(const SizePreset& size) {
        if (auto it = bases_.find(size.name); it != bases_.end()) return it->second;
        const ModelConfig cfg = row_config(size).stripped();
        VLPoseModel<float> model(cfg, text_.get());
        model.apply_trainable_mask(FinetuneMode::full);
        TrainConfig tc = rc_.train;
        tc.mode = FinetuneMode::full;
        *ctx_.out << "  pretraining " << size.name << " baseline on " << pretrain_set_.dataset.annotations.size() << " instances\n";
        const fs::path dir = out_ / ("base_" + std::string(size.name));
        const TrainResult r = train_loop(model, prepared(pretrain_set_, cfg), tc, {dir / "train_log.jsonl", dir / "checkpoint", {}});
        if (r.diverged) throw DivergenceError("baseline pretraining diverged: " + r.message);
        return bases_.emplace(size.name, model.to_archive()).first->second;
    }

    AblateArgs args_;
    const Context& ctx_;
    RunConfig rc_;
    fs::path out_;
    TextTable text_;
    SynthSet pretrain_set_, tune_set_, eval_set_;
    std::map<std::string, Archive> bases_;
    std::map<std::string, RowMetrics> cache_;
    std::map<std::tuple<const SynthSet*, std::size_t, std::size_t, std::size_t>, PreparedSet> prepared_;
};

inline const std::vector<std::string>& metric_columns() {
    static const std::vector<std::string> c{"AP", "AP50", "AP75", "AR", "AR50"};
    return c;
}

inline Table metric_table(const std::string& name, const std::string& first) {
    Table t{name, {first}, {}};
    for (const auto& c : metric_columns()) t.header.push_back(c);
    return t;
}

inline void add_row(Table& t, const std::string& label, const RowMetrics& m) {
    std::vector<std::string> r{label};
    for (auto& c : m.cells()) r.push_back(c);
    t.rows.push_back(std::move(r));
}

}  // namespace detail

/// Builds the tables of one suite. Every row starts from the baseline
/// pretrained on natural images, is prompt-tuned on art images and is scored
/// on held-out art images.
inline std::vector<Table> ablation_tables(detail::Ablation& ab, const std::string& suite) {
    using detail::add_row;
    using detail::metric_table;
    const SizePreset& small = size_presets().front();
    const ModelConfig cfg = ab.row_config(small);
    const FinetuneMode vp = FinetuneMode::visual_prompt;
    auto with = [&](MatcherVariant m, const std::string& decoder, PromptMode p = PromptMode::style) {
        ModelConfig c = cfg;
        c.matcher = m;
        c.decoder = decoder;
        c.prompt = p;
        return c;
    };
    const ModelConfig no_text = with(MatcherVariant::none, "Baseline");
    const ModelConfig dual = with(MatcherVariant::E_T, "First-AMiddle-Final");
    std::vector<Table> tables;
    const bool all = suite == "all";
    if (all || suite == "matcher") {
        Table a = metric_table("table_a_matcher", "K=V");
        add_row(a, "w/o text", ab.run("w/o text", small, no_text, vp));
        add_row(a, "w/o matcher", ab.run("w/o matcher", small, with(MatcherVariant::concat_bypass, dual.decoder), vp));
        add_row(a, "w matcher", ab.run("w matcher", small, dual, vp));
        tables.push_back(a);
        Table c = metric_table("table_c_attention_input", "K=V");
        add_row(c, "None", ab.run("None", small, no_text, vp));
        add_row(c, "T", ab.run("T", small, with(MatcherVariant::T, dual.decoder), vp));
        add_row(c, "[E, E·T]", ab.run("E_dot_T", small, with(MatcherVariant::E_dot_T, dual.decoder), vp));
        add_row(c, "[E, T]", ab.run("E_T", small, dual, vp));
        tables.push_back(c);
    }
    if (all || suite == "prompt") {
        Table d = metric_table("table_d_prompt", "Prompt");
        add_row(d, "None", ab.run("None", small, no_text, vp));
        add_row(d, "Random", ab.run("Random", small, with(MatcherVariant::E_T, dual.decoder, PromptMode::random), vp));
        add_row(d, "Fixed prompt", ab.run("Fixed prompt", small, with(MatcherVariant::E_T, dual.decoder, PromptMode::fixed), vp));
        add_row(d, "Style prompt", ab.run("Style prompt", small, dual, vp));
        tables.push_back(d);
    }
    if (all || suite == "decoder") {
        Table e = metric_table("table_e_decoder", "Model");
        add_row(e, "None", ab.run("None", small, no_text, vp));
        add_row(e, "in", ab.run("in", small, with(MatcherVariant::E_T, "First"), vp));
        add_row(e, "ex-in", ab.run("ex-in", small, with(MatcherVariant::E_T, "First-Final"), vp));
        add_row(e, "2-ex-in", ab.run("2-ex-in", small, dual, vp));
        tables.push_back(e);
        Table w = metric_table("table_decoder_wirings", "model");
        for (const auto& name : decoder_names()) {
            const ModelConfig c = name == "Baseline" ? no_text : with(MatcherVariant::E_T, name);
            add_row(w, name, ab.run(name, small, c, vp));
        }
        tables.push_back(w);
    }
    if (all || suite == "tokens") {
        Table f{"table_f_finetune", {"Model", "Finetune"}, {}};
        for (const auto& s : size_presets()) f.header.push_back(s.name);
        std::vector<std::pair<std::string, std::string>> labels{{"ViTPose", "-"}};
        for (std::size_t n : {5, 10, 20, 50}) labels.push_back({"ViTPose", std::to_string(n) + " tokens"});
        labels.push_back({"ViTPose", "last layer"});
        labels.push_back({"VLPose", "visual prompt"});
        for (const auto& [model, finetune] : labels) {
            std::vector<std::string> row{model, finetune};
            for (const auto& size : size_presets()) {
                ModelConfig c = ab.row_config(size);
                FinetuneMode mode = FinetuneMode::visual_prompt;
                if (model == "VLPose") {
                    c.matcher = MatcherVariant::E_T;
                    c.decoder = "First-AMiddle-Final";
                } else {
                    c = c.stripped();
                    if (finetune == "last layer") mode = FinetuneMode::last_layer;
                    else if (finetune != "-") c.encoder.prompt_tokens = std::stoul(finetune);
                }
                row.push_back(fmt("%.2f", 100 * ab.run(model + " " + finetune, size, c, mode, finetune != "-").ap));
            }
            f.rows.push_back(std::move(row));
        }
        tables.push_back(f);
    }
    return tables;
}

inline int cmd_ablate(const AblateArgs& a, const Context& ctx) {
    return guarded(ctx, [&] {
        if (a.out.empty()) throw ConfigError("--out is required");
        if (std::find(ablate_suites().begin(), ablate_suites().end(), a.suite) == ablate_suites().end())
            throw ConfigError("unknown suite '" + a.suite + "' (expected matcher, prompt, decoder, tokens or all)");
        detail::Ablation ab(a, ctx);
        fs::create_directories(ab.out());
        write_text_file(ab.out() / "config.txt", "# command: ablate --suite " + a.suite + "\n" + ab.config().render());
        for (const Table& t : ablation_tables(ab, a.suite)) {
            const std::string csv = t.csv();
            write_text_file(ab.out() / (t.name + ".csv"), csv);
            *ctx.out << t.name << "\n" << csv << "\n";
        }
        return int(kOk);
    });
}

}  // namespace vlpose::cli
