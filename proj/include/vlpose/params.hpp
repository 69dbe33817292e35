#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vlpose/ops.hpp"
#include "vlpose/rng.hpp"
#include "vlpose/serialize.hpp"

namespace vlpose {

template <typename T>
struct ParamEntry {
    Var<T> var;
    std::string group;    // accounting / freezing group, e.g. "encoder.layer.3", "decoder.aux"
    bool decay = true;    // AdamW decoupled weight decay applies
    std::size_t depth = 0;  // layer-wise lr decay exponent (0 = output side)
};

/// Named parameters with a trainable mask, plus batch-norm running statistics.
/// Names follow module.group.index (e.g. "decoder.main.0.bn.gamma").
template <typename T>
class ParamSet {
public:
    Var<T> add(const std::string& name, Tensor<T> init, std::string group, bool decay = true, std::size_t depth = 0) {
        if (params_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        Var<T> v(std::move(init), true);
        params_[name] = ParamEntry<T>{v, std::move(group), decay, depth};
        trainable_[name] = true;
        return v;
    }

    std::shared_ptr<BatchNormStats<T>> add_buffer(const std::string& name, std::size_t channels, std::string group) {
        auto s = std::make_shared<BatchNormStats<T>>(channels);
        buffers_[name] = s;
        buffer_groups_[name] = std::move(group);
        return s;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    const Var<T>& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw LookupError("unknown parameter '" + name + "'");
        return it->second.var;
    }

    const ParamEntry<T>& entry(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw LookupError("unknown parameter '" + name + "'");
        return it->second;
    }

    const std::map<std::string, ParamEntry<T>>& entries() const { return params_; }
    const std::map<std::string, bool>& trainable_map() const { return trainable_; }
    const std::map<std::string, std::shared_ptr<BatchNormStats<T>>>& buffers() const { return buffers_; }
    const std::string& buffer_group(const std::string& name) const { return buffer_groups_.at(name); }

    bool trainable(const std::string& name) const {
        auto it = trainable_.find(name);
        if (it == trainable_.end()) throw LookupError("unknown parameter '" + name + "'");
        return it->second;
    }

    /// Frozen parameters stop requiring grad, so no gradient is ever formed for them.
    void set_trainable(const std::string& name, bool on) {
        auto it = params_.find(name);
        if (it == params_.end()) throw LookupError("unknown parameter '" + name + "'");
        trainable_[name] = on;
        it->second.var.set_requires_grad(on);
    }

    /// True if any parameter of `group` is trainable.
    bool group_trainable(const std::string& group) const {
        for (const auto& [name, e] : params_)
            if (e.group == group && trainable_.at(name)) return true;
        return false;
    }

    void zero_grad() {
        for (auto& [name, e] : params_) e.var.zero_grad();
    }

    std::size_t size() const { return params_.size(); }

    /// Export parameters and running statistics (as f32).
    void export_to(Archive& ar) const {
        for (const auto& [name, e] : params_) ar.tensors[name] = e.var.value().template cast<float>();
        for (const auto& [name, s] : buffers_) {
            ar.tensors[name + ".running_mean"] = s->running_mean.template cast<float>();
            ar.tensors[name + ".running_var"] = s->running_var.template cast<float>();
        }
    }

    /// Load every entry present in the archive whose shape matches; returns the
    /// names of parameters that were not found (left at their initial values).
    std::vector<std::string> import_from(const Archive& ar, bool require_all = true) {
        std::vector<std::string> missing;
        auto load = [&](const std::string& name, Tensor<T>& dst) {
            auto it = ar.tensors.find(name);
            if (it == ar.tensors.end()) {
                missing.push_back(name);
                return;
            }
            if (it->second.shape() != dst.shape())
                throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                                  ", model expects " + shape_str(dst.shape()));
            dst = it->second.template cast<T>();
        };
        for (auto& [name, e] : params_) load(name, e.var.mutable_value());
        for (auto& [name, s] : buffers_) {
            load(name + ".running_mean", s->running_mean);
            load(name + ".running_var", s->running_var);
        }
        if (require_all && !missing.empty()) throw ConfigError("checkpoint is missing tensor '" + missing.front() + "'");
        return missing;
    }

private:
    std::map<std::string, ParamEntry<T>> params_;
    std::map<std::string, bool> trainable_;
    std::map<std::string, std::shared_ptr<BatchNormStats<T>>> buffers_;
    std::map<std::string, std::string> buffer_groups_;
};

enum class CountFilter { all, trainable, frozen };

struct ParamCounts {
    std::map<std::string, std::size_t> by_group;
    std::size_t total = 0;
};

/// Exact scalar counts per group (parameters only; running statistics excluded).
template <typename T>
ParamCounts count_params(const ParamSet<T>& ps, CountFilter filter = CountFilter::all) {
    ParamCounts c;
    for (const auto& [name, e] : ps.entries()) {
        const bool tr = ps.trainable(name);
        if (filter == CountFilter::trainable && !tr) continue;
        if (filter == CountFilter::frozen && tr) continue;
        c.by_group[e.group] += e.var.numel();
        c.total += e.var.numel();
    }
    return c;
}

namespace init {

template <typename T>
Tensor<T> uniform(const Shape& s, Rng& rng, double bound) {
    Tensor<T> t(s);
    for (auto& v : t.values()) v = T(rng.uniform(-bound, bound));
    return t;
}

template <typename T>
Tensor<T> normal(const Shape& s, Rng& rng, double stddev) {
    Tensor<T> t(s);
    for (auto& v : t.values()) v = T(rng.normal() * stddev);
    return t;
}

/// Glorot-uniform for a [fan_in x fan_out] matrix.
template <typename T>
Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    return uniform<T>({fan_in, fan_out}, rng, std::sqrt(6.0 / double(fan_in + fan_out)));
}

}  // namespace init

}  // namespace vlpose
