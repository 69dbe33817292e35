#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "vlpose/training.hpp"

namespace vlpose {

/// Flat `key = value` run configuration: model keys, training keys and paths.
/// `seed` seeds both initialization and the training stream. `tune_lr` and
/// `tune_steps` replace `lr` and `steps` when prompt-tuning a checkpoint.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    double tune_lr = 5e-3;
    std::size_t tune_steps = 1000;
    std::string train_data;
    std::string eval_data;
    std::string text_table;
    std::set<std::string> explicit_keys;  // keys set by a file or flag

    static const std::set<std::string>& train_keys() {
        static const std::set<std::string> k{"lr", "weight_decay", "layer_decay", "steps", "batch", "seed", "finetune", "log_every", "tune_lr", "tune_steps"};
        return k;
    }

    void set(const std::string& key, const std::string& value) {
        auto uint = [&]() -> std::size_t {
            try {
                std::size_t pos = 0;
                const unsigned long long x = std::stoull(value, &pos);
                if (pos != value.size() || value[0] == '-') throw std::invalid_argument(value);
                return static_cast<std::size_t>(x);
            } catch (const std::exception&) {
                throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + value + "'");
            }
        };
        if (key == "lr") train.lr = ModelConfig::parse_double(key, value);
        else if (key == "weight_decay") train.weight_decay = ModelConfig::parse_double(key, value);
        else if (key == "layer_decay") train.layer_decay = ModelConfig::parse_double(key, value);
        else if (key == "steps") train.steps = uint();
        else if (key == "batch") train.batch = uint();
        else if (key == "tune_lr") tune_lr = ModelConfig::parse_double(key, value);
        else if (key == "tune_steps") tune_steps = uint();
        else if (key == "log_every") train.log_every = std::max<std::size_t>(1, uint());
        else if (key == "finetune") train.mode = finetune_mode_from_string(value);
        else if (key == "seed") {
            train.seed = uint();
            if (!explicit_keys.count("init_seed")) model.init_seed = train.seed;
        } else if (key == "train_data") train_data = value;
        else if (key == "eval_data") eval_data = value;
        else if (key == "text_table") text_table = value;
        else if (!model.set(key, value)) throw ConfigError("unknown configuration key '" + key + "'");
        explicit_keys.insert(key);
    }

    std::map<std::string, std::string> to_map() const {
        auto m = model.to_map();
        m["lr"] = ModelConfig::fmt_double(train.lr);
        m["weight_decay"] = ModelConfig::fmt_double(train.weight_decay);
        m["layer_decay"] = ModelConfig::fmt_double(train.layer_decay);
        m["steps"] = std::to_string(train.steps);
        m["batch"] = std::to_string(train.batch);
        m["seed"] = std::to_string(train.seed);
        m["finetune"] = to_string(train.mode);
        m["log_every"] = std::to_string(train.log_every);
        m["tune_lr"] = ModelConfig::fmt_double(tune_lr);
        m["tune_steps"] = std::to_string(tune_steps);
        if (!train_data.empty()) m["train_data"] = train_data;
        if (!eval_data.empty()) m["eval_data"] = eval_data;
        if (!text_table.empty()) m["text_table"] = text_table;
        return m;
    }

    /// Effective configuration in the file format; re-parsing it reproduces this object.
    std::string render() const {
        std::string s = "# effective configuration\n";
        const auto m = to_map();
        // seed first so an explicit init_seed later in the file still wins
        s += "seed = " + m.at("seed") + "\n";
        for (const auto& [k, v] : m)
            if (k != "seed") s += k + " = " + v + "\n";
        return s;
    }

    void parse(std::istream& is, const std::string& what) {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                if (b == std::string::npos) return std::string();
                const auto e = s.find_last_not_of(" \t\r");
                return s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(what + ":" + std::to_string(lineno) + ": expected 'key = value'");
            const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
            if (key.empty() || value.empty()) throw ConfigError(what + ":" + std::to_string(lineno) + ": empty key or value");
            try {
                set(key, value);
            } catch (const ConfigError& e) {
                throw ConfigError(what + ":" + std::to_string(lineno) + ": " + e.what());
            }
        }
    }

    void load_file(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file " + path.string());
        parse(is, path.string());
    }

    /// VLPOSE_SEED, when set, overrides the configured seed.
    void apply_env() {
        if (const char* s = std::getenv("VLPOSE_SEED"); s && *s) set("seed", s);
    }

    void validate() const {
        model.validate();
        train.validate();
        TrainConfig t = train;
        t.lr = tune_lr;
        t.steps = tune_steps;
        t.validate();
    }
};

}  // namespace vlpose
