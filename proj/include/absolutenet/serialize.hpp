#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "absolutenet/model.hpp"
#include "absolutenet/tensor.hpp"

namespace absnet {

/// Model parameter blob: magic "ABSN", version u32, then per named parameter
/// name length u16 + bytes, rank u8, extents u32 each, 32-bit little-endian
/// values. Round trips bit-exactly for 32-bit models.
namespace blob {

inline constexpr char kMagic[4] = {'A', 'B', 'S', 'N'};
inline constexpr std::uint32_t kVersion = 1;

inline void put_u16(std::ostream& os, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

inline std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline float get_f32(std::istream& is) {
    const std::uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace blob

template <typename T>
void save_model(Model<T>& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_model: cannot open '" + path + "'");
    os.write(blob::kMagic, 4);
    blob::put_u32(os, blob::kVersion);
    for (auto* p : model.params()) {
        const auto& name = p->name;
        if (name.size() > 0xffff) throw std::runtime_error("save_model: name too long");
        blob::put_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const auto& shape = p->value.shape();
        os.put(static_cast<char>(shape.size()));
        for (auto e : shape) blob::put_u32(os, static_cast<std::uint32_t>(e));
        for (std::int64_t i = 0; i < p->value.size(); ++i)
            blob::put_f32(os, static_cast<float>(p->value[i]));
    }
    if (!os) throw std::runtime_error("save_model: write failed on '" + path + "'");
}

/// Loads parameters by name into an already-built model; every model
/// parameter must be present with a matching shape.
template <typename T>
void load_model(Model<T>& model, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_model: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, blob::kMagic, 4) != 0)
        throw std::runtime_error("load_model: bad magic in '" + path + "'");
    const std::uint32_t version = blob::get_u32(is);
    if (version != blob::kVersion)
        throw std::runtime_error("load_model: unsupported version " + std::to_string(version));

    std::map<std::string, Tensor<float>> entries;
    while (true) {
        const int peek = is.peek();
        if (peek == std::char_traits<char>::eof()) break;
        const std::uint16_t len = blob::get_u16(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        const int rank = is.get();
        if (rank < 0) throw std::runtime_error("load_model: truncated file '" + path + "'");
        Shape shape(static_cast<std::size_t>(rank));
        for (auto& e : shape) e = blob::get_u32(is);
        Tensor<float> t(shape);
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = blob::get_f32(is);
        if (!is) throw std::runtime_error("load_model: truncated file '" + path + "'");
        entries.emplace(std::move(name), std::move(t));
    }

    for (auto* p : model.params()) {
        auto it = entries.find(p->name);
        if (it == entries.end())
            throw std::runtime_error("load_model: parameter '" + p->name + "' missing from '" +
                                     path + "'");
        if (it->second.shape() != p->value.shape())
            throw std::runtime_error("load_model: shape mismatch for '" + p->name + "': file " +
                                     shape_str(it->second.shape()) + ", model " +
                                     shape_str(p->value.shape()));
        p->value = it->second.template cast<T>();
        entries.erase(it);
    }
    if (!entries.empty())
        throw std::runtime_error("load_model: '" + path + "' holds unknown parameter '" +
                                 entries.begin()->first + "'");
}

}  // namespace absnet
