#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlpose/model.hpp"
#include "vlpose/synth.hpp"

namespace vlpose {

/// Raised when the loss or a gradient becomes non-finite.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double lr = 5e-4;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double layer_decay = 0.75;
    std::size_t steps = 2000;
    std::size_t batch = 16;
    std::uint64_t seed = 0;
    FinetuneMode mode = FinetuneMode::full;
    std::size_t log_every = 10;

    /// Learning-rate drops at 170/210 and 200/210 of the run.
    std::vector<std::size_t> milestones() const { return {steps * 170 / 210, steps * 200 / 210}; }

    void validate() const {
        if (steps == 0 || batch == 0) throw ConfigError("steps and batch must be positive");
        if (!(lr > 0)) throw ConfigError("learning rate must be positive");
        if (!(layer_decay > 0 && layer_decay <= 1)) throw ConfigError("layer_decay must lie in (0, 1]");
        if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
        const auto m = milestones();
        if (!(m[0] < m[1] && m[1] < steps)) throw ConfigError("steps too small for two distinct milestones");
    }
};

/// base * 0.1^(milestones passed) * layer_decay^depth
inline double lr_at(std::size_t step, const TrainConfig& cfg, std::size_t depth) {
    double lr = cfg.lr;
    for (std::size_t m : cfg.milestones())
        if (step >= m) lr *= 0.1;
    return lr * std::pow(cfg.layer_decay, double(depth));
}

/// AdamW with bias correction and decoupled weight decay on weight matrices only.
/// Moments are kept for trainable parameters only; frozen ones are never touched.
template <typename T>
class AdamW {
public:
    struct Moments {
        Tensor<T> m, v;
    };

    explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

    std::size_t step_count() const { return t_; }
    const std::map<std::string, Moments>& state() const { return state_; }

    /// One update. `lr_for` maps a parameter's depth to its learning rate.
    /// Returns the number of scalar parameters updated.
    std::size_t step(ParamSet<T>& ps, const std::function<double(std::size_t)>& lr_for) {
        for (const auto& [name, e] : ps.entries()) {
            if (!ps.trainable(name)) continue;
            if (const Tensor<T>* g = grad_of(e.var); g && !g->all_finite())
                throw DivergenceError("non-finite gradient for '" + name + "'");
        }
        ++t_;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double c1 = 1 - std::pow(b1, double(t_)), c2 = 1 - std::pow(b2, double(t_));
        std::size_t updated = 0;
        for (const auto& [name, e] : ps.entries()) {
            if (!ps.trainable(name)) continue;
            Var<T> var = e.var;
            Tensor<T>& w = var.mutable_value();
            auto it = state_.find(name);
            if (it == state_.end()) it = state_.emplace(name, Moments{Tensor<T>(w.shape()), Tensor<T>(w.shape())}).first;
            Moments& mo = it->second;
            const Tensor<T>* g = grad_of(e.var);
            const double lr = lr_for(e.depth);
            const double wd = e.decay ? cfg_.weight_decay : 0.0;
            for (std::size_t i = 0; i < w.numel(); ++i) {
                const double gi = g ? double((*g)[i]) : 0.0;
                const double m = b1 * double(mo.m[i]) + (1 - b1) * gi;
                const double v = b2 * double(mo.v[i]) + (1 - b2) * gi * gi;
                mo.m[i] = T(m);
                mo.v[i] = T(v);
                double wi = double(w[i]);
                wi -= lr * wd * wi;
                wi -= lr * (m / c1) / (std::sqrt(v / c2) + cfg_.adam_eps);
                w[i] = T(wi);
            }
            updated += w.numel();
        }
        return updated;
    }

private:
    TrainConfig cfg_;
    std::map<std::string, Moments> state_;
    std::size_t t_ = 0;
};

/// Masked mean squared error over heatmap cells.
template <typename T>
Var<T> heatmap_loss(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
    return masked_mse(pred, target, mask);
}

// ---------------------------------------------------------------------------
// Data

/// Ground-truth-box crops with their targets, ready for batching.
struct PreparedSet {
    std::size_t input_h = 0, input_w = 0, heat_h = 0, heat_w = 0, keypoints = 0;
    std::vector<float> inputs;   // [N x 3 x H x W]
    std::vector<float> targets;  // [N x K x h x w]
    std::vector<float> masks;    // [N x K]
    std::vector<int> categories;
    std::vector<CropTransform> transforms;
    std::vector<std::size_t> annotation;  // index into dataset.annotations
    std::vector<std::int64_t> image_ids;

    std::size_t size() const { return categories.size(); }
};

inline PreparedSet prepare_set(const SynthSet& set, std::size_t input_h, std::size_t input_w, std::size_t keypoints) {
    PreparedSet p;
    p.input_h = input_h;
    p.input_w = input_w;
    p.heat_h = input_h / 4;
    p.heat_w = input_w / 4;
    p.keypoints = keypoints;
    std::map<std::int64_t, std::size_t> image_index;
    for (std::size_t i = 0; i < set.dataset.images.size(); ++i) image_index[set.dataset.images[i].id] = i;
    for (std::size_t a = 0; a < set.dataset.annotations.size(); ++a) {
        const auto& ann = set.dataset.annotations[a];
        if (ann.keypoints.size() != keypoints)
            throw ConfigError("dataset has " + std::to_string(ann.keypoints.size()) + " keypoints per instance, model expects " +
                              std::to_string(keypoints));
        if (ann.num_labeled() == 0) continue;
        const Image& img = set.images.at(image_index.at(ann.image_id));
        Crop c = affine_crop(img, ann.bbox, input_h, input_w);
        std::vector<Keypoint> local = ann.keypoints;
        for (auto& k : local) std::tie(k.x, k.y) = c.transform.to_input(k.x, k.y);
        auto tg = gaussian_targets(local, p.heat_h, p.heat_w);
        p.inputs.insert(p.inputs.end(), c.input.values().begin(), c.input.values().end());
        p.targets.insert(p.targets.end(), tg.maps.values().begin(), tg.maps.values().end());
        p.masks.insert(p.masks.end(), tg.mask.values().begin(), tg.mask.values().end());
        p.categories.push_back(ann.category_id);
        p.transforms.push_back(c.transform);
        p.annotation.push_back(a);
        p.image_ids.push_back(ann.image_id);
    }
    return p;
}

struct Batch {
    Tensor<float> inputs, targets, masks;
    std::vector<int> categories;
};

inline Batch gather_batch(const PreparedSet& p, const std::vector<std::size_t>& idx) {
    const std::size_t N = idx.size(), in = 3 * p.input_h * p.input_w, hm = p.keypoints * p.heat_h * p.heat_w;
    Batch b{Tensor<float>({N, 3, p.input_h, p.input_w}), Tensor<float>({N, p.keypoints, p.heat_h, p.heat_w}),
            Tensor<float>({N, p.keypoints}), {}};
    for (std::size_t n = 0; n < N; ++n) {
        const std::size_t s = idx[n];
        std::copy_n(p.inputs.data() + s * in, in, b.inputs.data() + n * in);
        std::copy_n(p.targets.data() + s * hm, hm, b.targets.data() + n * hm);
        std::copy_n(p.masks.data() + s * p.keypoints, p.keypoints, b.masks.data() + n * p.keypoints);
        b.categories.push_back(p.categories[s]);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Loop

struct TrainResult {
    std::vector<double> losses;
    std::size_t steps_done = 0;
    std::size_t scalar_updates = 0;
    bool diverged = false;
    std::string message;
};

struct TrainIO {
    std::filesystem::path log_path;         // JSONL, optional
    std::filesystem::path checkpoint_dir;   // written at the end (or on divergence), optional
    std::function<void(std::size_t, double)> on_step;  // optional progress callback
};

/// Deterministic single-threaded training. The model's trainable mask must
/// already be applied. On a non-finite loss or gradient the loop stops before
/// updating, writes the last good weights and reports divergence.
template <typename T>
TrainResult train_loop(VLPoseModel<T>& model, const PreparedSet& data, const TrainConfig& cfg, const TrainIO& io = {}) {
    cfg.validate();
    if (data.size() == 0) throw ConfigError("training set is empty");
    TrainResult res;
    AdamW<T> opt(cfg);
    Rng rng(hash_combine(cfg.seed, 0x747261696eULL));
    Rng drop_rng = rng.fork(7);
    std::ofstream log;
    if (!io.log_path.empty()) {
        if (io.log_path.has_parent_path()) std::filesystem::create_directories(io.log_path.parent_path());
        log.open(io.log_path);
        if (!log) throw std::runtime_error("cannot write " + io.log_path.string());
    }
    std::vector<std::size_t> order(data.size());
    std::size_t cursor = order.size();
    auto next_batch = [&] {
        std::vector<std::size_t> idx;
        while (idx.size() < std::min(cfg.batch, data.size())) {
            if (cursor == order.size()) {
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        return idx;
    };
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Batch b = gather_batch(data, next_batch());
        Var<T> x(b.inputs.template cast<T>());
        Var<T> out = model.forward(x, b.categories, ModelRun{true, &drop_rng, true});
        Var<T> loss = heatmap_loss(out, b.targets.template cast<T>(), b.masks.template cast<T>());
        const double lv = double(loss.value()[0]);
        if (!std::isfinite(lv)) {
            res.diverged = true;
            res.message = "loss became non-finite at step " + std::to_string(step);
            break;
        }
        model.params().zero_grad();
        loss.backward();
        try {
            res.scalar_updates += opt.step(model.params(), [&](std::size_t depth) { return lr_at(step, cfg, depth); });
        } catch (const DivergenceError& e) {
            res.diverged = true;
            res.message = std::string(e.what()) + " at step " + std::to_string(step);
            break;
        }
        res.losses.push_back(lv);
        res.steps_done = step + 1;
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
            nlohmann::json j{{"step", step}, {"loss", lv}, {"lr", lr_at(step, cfg, 0)}};
            log << j.dump() << '\n';
        }
        if (io.on_step) io.on_step(step, lv);
    }
    model.params().zero_grad();
    if (!io.checkpoint_dir.empty()) {
        Archive ar = model.to_archive();
        ar.config["train.steps_done"] = std::to_string(res.steps_done);
        ar.config["train.mode"] = to_string(cfg.mode);
        save_archive(io.checkpoint_dir, ar);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Inference

/// Eval-mode heatmaps for samples [begin, end) of a prepared set.
template <typename T>
Tensor<float> predict_heatmaps(const VLPoseModel<T>& model, const PreparedSet& data, std::size_t begin, std::size_t end,
                               bool use_prompts = true) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    Batch b = gather_batch(data, idx);
    NoGradGuard ng;
    Var<T> x(b.inputs.template cast<T>());
    return model.forward(x, b.categories, ModelRun{false, nullptr, use_prompts}).value().template cast<float>();
}

/// Ground-truth-box predictions for every prepared instance.
template <typename T>
std::vector<Prediction> predict(const VLPoseModel<T>& model, const PreparedSet& data, std::size_t batch = 16) {
    std::vector<Prediction> out;
    const std::size_t K = data.keypoints, h = data.heat_h, w = data.heat_w;
    for (std::size_t s = 0; s < data.size(); s += batch) {
        const std::size_t e = std::min(data.size(), s + batch);
        Tensor<float> hm = predict_heatmaps(model, data, s, e);
        for (std::size_t n = s; n < e; ++n) {
            Tensor<float> one({K, h, w});
            std::copy_n(hm.data() + (n - s) * K * h * w, K * h * w, one.data());
            const auto kps = heatmaps_to_keypoints(one, data.transforms[n]);
            Prediction p;
            p.image_id = data.image_ids[n];
            p.category_id = data.categories[n];
            for (const auto& k : kps) p.keypoints.push_back({k.x, k.y, k.score});
            p.score = instance_score(kps);
            out.push_back(std::move(p));
        }
    }
    return out;
}

/// Fraction of labeled keypoints within `frac` of the box diagonal.
inline double pck(const Dataset& ds, const std::vector<Prediction>& preds, const std::vector<std::size_t>& annotation,
                  double frac = 0.1) {
    std::size_t hit = 0, total = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto& gt = ds.annotations.at(annotation.at(i));
        const double diag = std::hypot(gt.bbox.w, gt.bbox.h);
        for (std::size_t k = 0; k < gt.keypoints.size(); ++k) {
            if (gt.keypoints[k].v == 0) continue;
            ++total;
            const double d = std::hypot(preds[i].keypoints[k].x - gt.keypoints[k].x, preds[i].keypoints[k].y - gt.keypoints[k].y);
            hit += d <= frac * diag;
        }
    }
    return total ? double(hit) / double(total) : 0.0;
}

}  // namespace vlpose
