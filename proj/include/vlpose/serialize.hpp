#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "vlpose/tensor.hpp"

namespace vlpose {

// Binary container: "VLT1", u32 rank, u32 dims[rank], f32 payload; all little-endian.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw ParseError(what + ": truncated at offset " + std::to_string(static_cast<long long>(is.gcount())));
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
    os.write("VLT1", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const float f = static_cast<float>(t[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(os, bits);
    }
}

template <typename T = float>
Tensor<T> read_tensor(std::istream& is, const std::string& what = "tensor") {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "VLT1", 4) != 0) throw ParseError(what + ": bad magic (expected VLT1)");
    const std::uint32_t rank = detail::get_u32(is, what);
    if (rank > 8) throw ParseError(what + ": implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u32(is, what);
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const std::uint32_t bits = detail::get_u32(is, what);
        float f;
        std::memcpy(&f, &bits, 4);
        t[i] = static_cast<T>(f);
    }
    return t;
}

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_tensor(os, t);
}

template <typename T = float>
Tensor<T> load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return read_tensor<T>(is, path.string());
}

/// Named-tensor archive: a directory holding manifest.txt plus one VLT1 file
/// per tensor. Manifest lines are `config <key> = <value>` or
/// `tensor <name> <file> <shape>`.
struct Archive {
    std::map<std::string, std::string> config;
    std::map<std::string, Tensor<float>> tensors;
};

inline void save_archive(const std::filesystem::path& dir, const Archive& ar) {
    std::filesystem::create_directories(dir);
    std::ofstream man(dir / "manifest.txt");
    if (!man) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
    man << "# vlpose checkpoint\n";
    for (const auto& [k, v] : ar.config) man << "config " << k << " = " << v << "\n";
    for (const auto& [name, t] : ar.tensors) {
        const std::string file = name + ".vlt";
        save_tensor(dir / file, t);
        man << "tensor " << name << " " << file << " " << shape_str(t.shape()) << "\n";
    }
}

inline Archive load_archive(const std::filesystem::path& dir) {
    std::ifstream man(dir / "manifest.txt");
    if (!man) throw std::runtime_error("checkpoint manifest not found in " + dir.string());
    Archive ar;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(man, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "config") {
            std::string key, eq;
            ls >> key >> eq;
            std::string value;
            std::getline(ls, value);
            if (eq != "=") throw ParseError("manifest line " + std::to_string(lineno) + ": expected '='");
            if (!value.empty() && value.front() == ' ') value.erase(0, 1);
            ar.config[key] = value;
        } else if (kind == "tensor") {
            std::string name, file;
            ls >> name >> file;
            if (name.empty() || file.empty())
                throw ParseError("manifest line " + std::to_string(lineno) + ": malformed tensor entry");
            ar.tensors[name] = load_tensor<float>(dir / file);
        } else {
            throw ParseError("manifest line " + std::to_string(lineno) + ": unknown entry '" + kind + "'");
        }
    }
    return ar;
}

}  // namespace vlpose
