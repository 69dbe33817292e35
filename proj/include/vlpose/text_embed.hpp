#pragma once

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vlpose/rng.hpp"
#include "vlpose/tensor.hpp"

namespace vlpose {

struct PromptEntry {
    int id;
    std::string_view category;
    std::string_view prompt;
};

/// Category -> text prompt table for the 19 art/photo categories. Ids 1..14 are
/// artistic styles, 15..19 are photo categories.
class PromptRegistry {
public:
    static constexpr int kCount = 19;

    static const std::array<PromptEntry, kCount>& entries() {
        static constexpr std::array<PromptEntry, kCount> table{{
            {1, "cartoon", "a cartoon human"},
            {2, "digital art", "a digital art human"},
            {3, "ink painting", "a ink-painting human"},
            {4, "kids drawing", "a kids-drawing human"},
            {5, "mural", "a mural human"},
            {6, "oil painting", "a oil-painting human"},
            {7, "shadow play", "a shadow-play human"},
            {8, "sketch", "a sketch human"},
            {9, "stained glass", "a stained glass human"},
            {10, "ukiyoe", "a ukiyoe human"},
            {11, "watercolor", "a watercolor human"},
            {12, "garage kits", "a garage-kits human"},
            {13, "relief", "a relief human"},
            {14, "sculpture", "a sculpture human"},
            {15, "acrobatics", "a acrobaticsing human photo"},
            {16, "cosplay", "a cosplaying human photo"},
            {17, "dance", "a dancing human photo"},
            {18, "drama", "a photo of a human in a drama"},
            {19, "movie", "a photo of a human in a movie"},
        }};
        return table;
    }

    static const PromptEntry& lookup(int id) {
        if (id < 1 || id > kCount)
            throw LookupError("unknown category id " + std::to_string(id) + " (valid range 1..19)");
        return entries()[static_cast<std::size_t>(id - 1)];
    }
};

inline std::string prompt_for_category(int id) { return std::string(PromptRegistry::lookup(id).prompt); }
inline std::string category_name(int id) { return std::string(PromptRegistry::lookup(id).category); }

/// Neutral prompt shared by every category in the fixed-prompt setting.
inline constexpr std::string_view kFixedPrompt = "a human";

/// A random lowercase word string derived from a run seed (random-prompt setting).
inline std::string random_prompt(std::uint64_t seed) {
    Rng rng(hash_combine(seed, 0x72616e646f6dULL));
    std::string s;
    for (int w = 0; w < 4; ++w) {
        if (w) s += ' ';
        const std::size_t len = 3 + rng.below(6);
        for (std::size_t i = 0; i < len; ++i) s += static_cast<char>('a' + rng.below(26));
    }
    return s;
}

struct TextFeatures {
    Tensor<float> tokens;  // [L x D]
    std::string prompt;
    std::string provider;
};

/// Externally computed prompt embeddings loaded from the line-oriented table format.
struct EmbeddingTable {
    std::map<std::string, Tensor<float>> entries;
};

/// Parses `prompt<TAB>L<TAB>D<TAB>v1 v2 ... v(L*D)` lines.
inline EmbeddingTable parse_embedding_table(std::istream& is, const std::string& what = "embedding table") {
    EmbeddingTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fail = [&](std::size_t offset, const std::string& msg) {
            throw ParseError(what + ": line " + std::to_string(lineno) + ", offset " + std::to_string(offset) + ": " + msg);
        };
        const std::size_t t1 = line.find('\t');
        if (t1 == std::string::npos) fail(0, "missing tab after prompt");
        const std::size_t t2 = line.find('\t', t1 + 1);
        if (t2 == std::string::npos) fail(t1 + 1, "missing tab after L");
        const std::size_t t3 = line.find('\t', t2 + 1);
        if (t3 == std::string::npos) fail(t2 + 1, "missing tab after D");
        auto parse_dim = [&](std::size_t b, std::size_t e) {
            std::size_t v = 0;
            auto [p, ec] = std::from_chars(line.data() + b, line.data() + e, v);
            if (ec != std::errc() || p != line.data() + e || v == 0) fail(b, "invalid dimension");
            return v;
        };
        const std::string prompt = line.substr(0, t1);
        const std::size_t L = parse_dim(t1 + 1, t2);
        const std::size_t D = parse_dim(t2 + 1, t3);
        std::vector<float> vals;
        vals.reserve(L * D);
        std::size_t pos = t3 + 1;
        while (pos < line.size()) {
            while (pos < line.size() && line[pos] == ' ') ++pos;
            if (pos >= line.size()) break;
            std::size_t end = line.find(' ', pos);
            if (end == std::string::npos) end = line.size();
            const std::string tok = line.substr(pos, end - pos);
            char* stop = nullptr;
            const float v = std::strtof(tok.c_str(), &stop);
            if (stop != tok.c_str() + tok.size() || !std::isfinite(v)) fail(pos, "invalid number '" + tok + "'");
            vals.push_back(v);
            pos = end;
        }
        if (vals.size() != L * D)
            fail(t3 + 1, "expected " + std::to_string(L * D) + " values, found " + std::to_string(vals.size()));
        table.entries[prompt] = Tensor<float>({L, D}, std::move(vals));
    }
    return table;
}

inline EmbeddingTable load_embedding_table(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open embedding table " + path.string());
    return parse_embedding_table(is, path.string());
}

inline void save_embedding_table(const std::filesystem::path& path, const EmbeddingTable& table) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write embedding table " + path.string());
    os << std::setprecision(std::numeric_limits<float>::max_digits10);
    for (const auto& [prompt, t] : table.entries) {
        os << prompt << '\t' << t.dim(0) << '\t' << t.dim(1) << '\t';
        for (std::size_t i = 0; i < t.numel(); ++i) os << (i ? " " : "") << t[i];
        os << '\n';
    }
}

/// Where TextFeatures come from: the deterministic pseudo-embedder or a loaded table.
struct EmbeddingSource {
    enum class Kind { pseudo, table } kind = Kind::pseudo;
    std::uint64_t seed = 0;
    const EmbeddingTable* table = nullptr;

    static EmbeddingSource pseudo(std::uint64_t seed) { return {Kind::pseudo, seed, nullptr}; }
    static EmbeddingSource from_table(const EmbeddingTable& t) { return {Kind::table, 0, &t}; }
};

/// Whitespace tokenization; positions past the last word hold "<pad>".
inline std::vector<std::string> prompt_tokens(const std::string& prompt, std::size_t L) {
    std::vector<std::string> words;
    std::istringstream is(prompt);
    for (std::string w; is >> w;) words.push_back(w);
    std::vector<std::string> out(L, "<pad>");
    for (std::size_t i = 0; i < L && i < words.size(); ++i) out[i] = words[i];
    return out;
}

/// Produces T in R^{L x D}. Pseudo rows are drawn from a generator keyed by
/// (seed, prompt, token text, position) and unit-normalized; only integer
/// hashing, + and * and sqrt are involved, so the output is platform independent.
inline TextFeatures embed_text(const std::string& prompt, std::size_t L, std::size_t D, const EmbeddingSource& src) {
    if (L == 0 || D == 0) throw ConfigError("embed_text: L and D must be positive");
    TextFeatures tf;
    tf.prompt = prompt;
    if (src.kind == EmbeddingSource::Kind::table) {
        if (!src.table) throw ConfigError("embed_text: table mode without a loaded table");
        auto it = src.table->entries.find(prompt);
        if (it == src.table->entries.end()) throw LookupError("embedding table has no entry for prompt '" + prompt + "'");
        if (it->second.shape() != Shape{L, D})
            throw ConfigError("embedding for '" + prompt + "' is " + shape_str(it->second.shape()) + ", expected " +
                              shape_str({L, D}));
        tf.tokens = it->second;
        tf.provider = "table";
        return tf;
    }
    tf.provider = "pseudo:" + std::to_string(src.seed);
    tf.tokens = Tensor<float>({L, D});
    const auto toks = prompt_tokens(prompt, L);
    const std::uint64_t ph = fnv1a(prompt);
    for (std::size_t i = 0; i < L; ++i) {
        Rng rng(hash_combine(hash_combine(src.seed, ph), hash_combine(fnv1a(toks[i]), i)));
        double norm = 0.0;
        std::vector<double> row(D);
        for (auto& v : row) {
            v = rng.uniform() + rng.uniform() + rng.uniform() - 1.5;
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < D; ++j) tf.tokens[i * D + j] = static_cast<float>(row[j] / norm);
    }
    return tf;
}

}  // namespace vlpose
