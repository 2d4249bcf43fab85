#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimood/common.hpp"

namespace mimood {

inline uint32_t crc32(const void* data, size_t n, uint32_t crc = 0) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
    return ~crc;
}

inline void write_bytes(const std::filesystem::path& path, const void* data, size_t n) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw IoError("write failed: " + path.string());
}

inline std::vector<uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open: " + path.string());
    auto n = static_cast<size_t>(f.tellg());
    f.seekg(0);
    std::vector<uint8_t> buf(n);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (!f) throw IoError("read failed: " + path.string());
    return buf;
}

// Raw little-endian float32, C row-major.
inline void write_f32(const std::filesystem::path& path, const Mat& m) {
    write_bytes(path, m.data(), sizeof(float) * static_cast<size_t>(m.size()));
}

inline Mat read_f32(const std::filesystem::path& path, int h, int w) {
    auto buf = read_bytes(path);
    if (buf.size() != sizeof(float) * static_cast<size_t>(h) * w)
        throw IoError("size mismatch in " + path.string());
    Mat m(h, w);
    std::memcpy(m.data(), buf.data(), buf.size());
    return m;
}

inline void write_u8(const std::filesystem::path& path, const MaskGrid& g) {
    write_bytes(path, g.cells.data(), g.cells.size());
}

inline MaskGrid read_u8(const std::filesystem::path& path, int h, int w) {
    auto buf = read_bytes(path);
    if (buf.size() != static_cast<size_t>(h) * w)
        throw IoError("size mismatch in " + path.string());
    MaskGrid g(h, w);
    std::memcpy(g.cells.data(), buf.data(), buf.size());
    return g;
}

/// Self-describing container of named float tensors with a JSON config header.
/// Binary layout: magic "MMCK" | u32 format version | u64 header length |
/// header JSON | concatenated float payloads.
struct Checkpoint {
    static constexpr uint32_t kFormatVersion = 1;

    nlohmann::json config;
    std::map<std::string, std::pair<std::vector<int64_t>, std::vector<float>>> tensors;

    void put(const std::string& name, const Mat& m) {
        std::vector<float> data(m.data(), m.data() + m.size());
        tensors[name] = {{m.rows(), m.cols()}, std::move(data)};
    }

    Mat get(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw IoError("checkpoint missing tensor: " + name);
        const auto& [shape, data] = it->second;
        if (shape.size() != 2) throw IoError("tensor is not 2-D: " + name);
        Mat m(shape[0], shape[1]);
        std::memcpy(m.data(), data.data(), data.size() * sizeof(float));
        return m;
    }

    bool has(const std::string& name) const { return tensors.count(name) != 0; }

    void save(const std::filesystem::path& path) const {
        nlohmann::json header;
        header["version"] = kFormatVersion;
        header["config"] = config;
        auto entries = nlohmann::json::array();
        uint64_t offset = 0;
        for (const auto& [name, t] : tensors) {
            const auto& [shape, data] = t;
            uint64_t nbytes = data.size() * sizeof(float);
            entries.push_back({{"name", name},
                               {"shape", shape},
                               {"offset", offset},
                               {"nbytes", nbytes},
                               {"crc32", crc32(data.data(), nbytes)}});
            offset += nbytes;
        }
        header["tensors"] = entries;
        std::string hs = header.dump();

        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open for writing: " + path.string());
        f.write("MMCK", 4);
        uint32_t ver = kFormatVersion;
        uint64_t hlen = hs.size();
        f.write(reinterpret_cast<const char*>(&ver), sizeof ver);
        f.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (const auto& [name, t] : tensors)
            f.write(reinterpret_cast<const char*>(t.second.data()),
                    static_cast<std::streamsize>(t.second.size() * sizeof(float)));
        if (!f) throw IoError("write failed: " + path.string());
    }

    static Checkpoint load(const std::filesystem::path& path) {
        auto buf = read_bytes(path);
        if (buf.size() < 16 || std::memcmp(buf.data(), "MMCK", 4) != 0)
            throw IoError("not a checkpoint file: " + path.string());
        uint32_t ver;
        uint64_t hlen;
        std::memcpy(&ver, buf.data() + 4, sizeof ver);
        std::memcpy(&hlen, buf.data() + 8, sizeof hlen);
        if (ver != kFormatVersion) throw IoError("unsupported checkpoint version");
        if (buf.size() < 16 + hlen) throw IoError("truncated checkpoint header");
        auto header = nlohmann::json::parse(buf.begin() + 16, buf.begin() + 16 + hlen);

        Checkpoint ck;
        ck.config = header.value("config", nlohmann::json::object());
        size_t payload = 16 + hlen;
        for (const auto& e : header.at("tensors")) {
            std::string name = e.at("name");
            std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
            uint64_t offset = e.at("offset");
            uint64_t nbytes = e.at("nbytes");
            if (payload + offset + nbytes > buf.size())
                throw IoError("truncated tensor payload: " + name);
            std::vector<float> data(nbytes / sizeof(float));
            std::memcpy(data.data(), buf.data() + payload + offset, nbytes);
            if (crc32(data.data(), nbytes) != e.at("crc32").get<uint32_t>())
                throw IoError("checksum mismatch in tensor: " + name);
            ck.tensors[name] = {std::move(shape), std::move(data)};
        }
        return ck;
    }
};

}  // namespace mimood
