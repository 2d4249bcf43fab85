#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mimood/common.hpp"
#include "mimood/rng.hpp"
#include "mimood/serialize.hpp"

namespace mimood::corpus {

/// Percentile with the linear-interpolation convention: rank q/100*(n-1).
inline float percentile(std::vector<float> values, float q) {
    require(!values.empty(), "percentile of empty array");
    std::sort(values.begin(), values.end());
    double rank = q / 100.0 * (values.size() - 1);
    auto lo = static_cast<size_t>(rank);
    if (lo + 1 >= values.size()) return values.back();
    double frac = rank - static_cast<double>(lo);
    return static_cast<float>(values[lo] * (1.0 - frac) + values[lo + 1] * frac);
}

/// Clip at the per-image 98th percentile, then min-max scale to [0,1].
inline Mat normalize(const Mat& raw, float clip_percentile = 98.0f) {
    require(raw.size() > 0, "normalize: empty image");
    if (!raw.allFinite()) throw DataError("normalize: non-finite pixel values");
    float lo = raw.minCoeff();
    float hi = raw.maxCoeff();
    if (lo == hi) throw DataError("normalize: constant image, degenerate dynamic range");

    std::vector<float> flat(raw.data(), raw.data() + raw.size());
    float clip = percentile(std::move(flat), clip_percentile);
    // A clip within 1e-4 of the max (relative to the dynamic range) is a
    // no-op; this makes normalize idempotent on its own output.
    if (hi - clip <= 1e-4f * (hi - lo)) clip = hi;
    Mat out = raw.cwiseMin(clip);
    float omin = out.minCoeff();
    float omax = out.maxCoeff();
    if (omin == omax) throw DataError("normalize: degenerate range after percentile clip");
    out = (out.array() - omin) / (omax - omin);
    return out;
}

namespace detail {

/// Band-limited value noise: coarse uniform grid, bilinear upsample.
inline Mat value_noise(int size, int cell, Rng& rng) {
    int n = size / cell + 2;
    Mat coarse(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) coarse(y, x) = rng.uniformf();
    Mat out(size, size);
    for (int y = 0; y < size; ++y) {
        float fy = static_cast<float>(y) / cell;
        int y0 = static_cast<int>(fy);
        float ty = fy - y0;
        for (int x = 0; x < size; ++x) {
            float fx = static_cast<float>(x) / cell;
            int x0 = static_cast<int>(fx);
            float tx = fx - x0;
            out(y, x) = coarse(y0, x0) * (1 - ty) * (1 - tx) + coarse(y0, x0 + 1) * (1 - ty) * tx +
                        coarse(y0 + 1, x0) * ty * (1 - tx) + coarse(y0 + 1, x0 + 1) * ty * tx;
        }
    }
    return out;
}

}  // namespace detail

/// Ellipse "head" phantom with smooth interior texture on black background.
/// Deterministic in (seed, size).
inline ImageSample generate_healthy(int64_t seed, int size, int f = 4) {
    if (f <= 0 || size <= 0 || size % f != 0)
        throw ConfigError("generate_healthy: size " + std::to_string(size) +
                          " is not a positive multiple of f=" + std::to_string(f));
    Rng rng(static_cast<uint64_t>(seed));

    float cx = size * (0.5f + 0.06f * (rng.uniformf() - 0.5f));
    float cy = size * (0.5f + 0.06f * (rng.uniformf() - 0.5f));
    float a = size * rng.uniform_range(0.34f, 0.42f);
    float b = size * rng.uniform_range(0.34f, 0.42f);

    // 3 octaves of smoothed uniform noise.
    Mat n1 = detail::value_noise(size, std::max(2, size / 8), rng);
    Mat n2 = detail::value_noise(size, std::max(2, size / 16), rng);
    Mat n3 = detail::value_noise(size, std::max(2, size / 32), rng);
    Mat texture = 0.5f * n1 + 0.3f * n2 + 0.2f * n3;

    Mat raw = Mat::Zero(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            float dx = (x - cx) / a;
            float dy = (y - cy) / b;
            float e = dx * dx + dy * dy;
            float edge = std::clamp((1.0f - e) / 0.15f, 0.0f, 1.0f);
            edge = edge * edge * (3.0f - 2.0f * edge);  // smoothstep
            if (edge > 0.0f) raw(y, x) = edge * (0.35f + 0.5f * texture(y, x));
        }
    }

    ImageSample s;
    s.id = "healthy-" + std::to_string(seed);
    s.pixels = normalize(raw);
    s.split = Split::train;
    s.seed = seed;
    return s;
}

struct AnomalyConfig {
    int min_lesions = 1;
    int max_lesions = 2;
    float min_radius_frac = 0.12f;   // lesion radius as fraction of image size
    float max_radius_frac = 0.22f;
    float min_shift = 0.55f;         // intensity shift magnitude
    float max_shift = 0.85f;
    bool allow_hypo = true;
    float max_mask_frac = 0.25f;
};

/// Inject blob-shaped hyper/hypo-intense lesions into a healthy phantom.
/// gt_mask is set to the exact lesion support; pixels re-clipped to [0,1].
inline ImageSample inject_anomaly(const ImageSample& sample, int64_t seed, const AnomalyConfig& cfg = {}) {
    require(!sample.has_anomaly(), "inject_anomaly: sample already anomalous");
    require(cfg.min_lesions >= 1 && cfg.max_lesions >= cfg.min_lesions, "inject_anomaly: bad lesion count range");
    require(cfg.min_radius_frac > 0 && cfg.max_radius_frac >= cfg.min_radius_frac,
            "inject_anomaly: bad radius range");

    const int size = static_cast<int>(sample.pixels.rows());
    require(sample.pixels.cols() == size, "inject_anomaly: image must be square");
    Rng rng(static_cast<uint64_t>(seed) ^ 0xa5a5a5a5ULL);

    // Foreground of the healthy phantom (background is exactly 0 after normalize).
    auto is_fg = [&](int y, int x) {
        return y >= 0 && y < size && x >= 0 && x < size && sample.pixels(y, x) > 0.0f;
    };

    ImageSample out = sample;
    out.id = "anomalous-" + std::to_string(seed);
    out.seed = seed;
    MaskGrid mask(size, size, 0);

    struct Disk {
        float cx, cy, r;
    };

    int n_lesions = rng.uniform_range(cfg.min_lesions, cfg.max_lesions);
    for (int li = 0; li < n_lesions; ++li) {
        float r = size * rng.uniform_range(cfg.min_radius_frac, cfg.max_radius_frac);
        // Blob = union of 3 overlapping disks around a valid center.
        float extent = 1.35f * r;

        int cx = -1, cy = -1;
        for (int attempt = 0; attempt < 400; ++attempt) {
            int tx = rng.uniform_int(size);
            int ty = rng.uniform_int(size);
            bool fits = is_fg(ty, tx);
            int e = static_cast<int>(std::ceil(extent)) + 1;
            for (int dy = -e; fits && dy <= e; ++dy)
                for (int dx = -e; fits && dx <= e; ++dx)
                    if (dx * dx + dy * dy <= e * e && !is_fg(ty + dy, tx + dx)) fits = false;
            if (fits) {
                cx = tx;
                cy = ty;
                break;
            }
        }
        if (cx < 0) throw DataError("inject_anomaly: lesion of radius " + std::to_string(r) +
                                    " cannot fit inside phantom interior");

        std::vector<Disk> disks;
        disks.push_back({static_cast<float>(cx), static_cast<float>(cy), r});
        for (int d = 0; d < 2; ++d) {
            float ang = rng.uniform_range(0.0f, 6.2831853f);
            float off = rng.uniform_range(0.2f, 0.5f) * r;
            disks.push_back({cx + off * std::cos(ang), cy + off * std::sin(ang),
                             rng.uniform_range(0.55f, 0.8f) * r});
        }

        float shift = rng.uniform_range(cfg.min_shift, cfg.max_shift);
        if (cfg.allow_hypo && rng.uniform() < 0.5) shift = -shift;

        int e = static_cast<int>(std::ceil(extent)) + 1;
        for (int y = std::max(0, cy - e); y <= std::min(size - 1, cy + e); ++y) {
            for (int x = std::max(0, cx - e); x <= std::min(size - 1, cx + e); ++x) {
                float profile = 0.0f;
                for (const auto& d : disks) {
                    float dd = (x - d.cx) * (x - d.cx) + (y - d.cy) * (y - d.cy);
                    profile = std::max(profile, 1.0f - dd / (d.r * d.r));
                }
                if (profile > 0.0f) {
                    mask.at(y, x) = 1;
                    out.pixels(y, x) = std::clamp(out.pixels(y, x) + shift * profile, 0.0f, 1.0f);
                }
            }
        }
    }

    size_t set = static_cast<size_t>(std::count(mask.cells.begin(), mask.cells.end(), uint8_t{1}));
    if (set == 0) throw DataError("inject_anomaly: empty lesion mask");
    if (static_cast<float>(set) > cfg.max_mask_frac * mask.size())
        throw DataError("inject_anomaly: lesion mask exceeds " + std::to_string(cfg.max_mask_frac) +
                        " of the image");

    out.gt_mask = std::move(mask);
    out.split = Split::test;
    return out;
}

struct ManifestEntry {
    std::string id;
    Split split = Split::train;
    std::string image_path;          // relative to corpus dir
    std::string mask_path;           // empty when absent
    bool has_anomaly = false;
    int64_t seed = 0;
    int h = 0, w = 0;
    uint32_t image_crc = 0;
    uint32_t mask_crc = 0;
};

struct CorpusManifest {
    int version = 1;
    float clip_percentile = 98.0f;
    std::vector<ManifestEntry> samples;
};

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
    nlohmann::json j;
    j["version"] = m.version;
    j["normalization"] = {{"clip_percentile", m.clip_percentile},
                          {"range", {0.0, 1.0}},
                          {"percentile_convention", "linear-interpolation"}};
    auto arr = nlohmann::json::array();
    for (const auto& e : m.samples) {
        nlohmann::json je = {{"id", e.id},         {"split", split_name(e.split)},
                             {"image", e.image_path}, {"has_anomaly", e.has_anomaly},
                             {"seed", e.seed},      {"shape", {e.h, e.w}},
                             {"image_crc32", e.image_crc}};
        if (!e.mask_path.empty()) {
            je["mask"] = e.mask_path;
            je["mask_crc32"] = e.mask_crc;
        }
        arr.push_back(je);
    }
    j["samples"] = arr;
    return j;
}

inline CorpusManifest manifest_from_json(const nlohmann::json& j) {
    CorpusManifest m;
    m.version = j.at("version");
    m.clip_percentile = j.at("normalization").at("clip_percentile");
    std::set<std::string> ids;
    for (const auto& je : j.at("samples")) {
        ManifestEntry e;
        e.id = je.at("id");
        if (!ids.insert(e.id).second) throw DataError("manifest: duplicate sample id " + e.id);
        e.split = split_from_name(je.at("split"));
        e.image_path = je.at("image");
        e.has_anomaly = je.at("has_anomaly");
        e.seed = je.at("seed");
        e.h = je.at("shape")[0];
        e.w = je.at("shape")[1];
        e.image_crc = je.at("image_crc32");
        if (je.contains("mask")) {
            e.mask_path = je.at("mask");
            e.mask_crc = je.at("mask_crc32");
        }
        m.samples.push_back(std::move(e));
    }
    return m;
}

/// Layout: manifest.json, images/<id>.f32, masks/<id>.u8.
inline CorpusManifest save_corpus(const std::vector<ImageSample>& samples,
                                  const std::filesystem::path& dir,
                                  float clip_percentile = 98.0f) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");

    CorpusManifest m;
    m.clip_percentile = clip_percentile;
    std::set<std::string> ids;
    for (const auto& s : samples) {
        if (!ids.insert(s.id).second) throw DataError("save_corpus: duplicate sample id " + s.id);
        ManifestEntry e;
        e.id = s.id;
        e.split = s.split;
        e.has_anomaly = s.has_anomaly();
        e.seed = s.seed;
        e.h = static_cast<int>(s.pixels.rows());
        e.w = static_cast<int>(s.pixels.cols());
        e.image_path = "images/" + s.id + ".f32";
        write_f32(dir / e.image_path, s.pixels);
        e.image_crc = crc32(s.pixels.data(), sizeof(float) * static_cast<size_t>(s.pixels.size()));
        if (s.gt_mask) {
            e.mask_path = "masks/" + s.id + ".u8";
            write_u8(dir / e.mask_path, *s.gt_mask);
            e.mask_crc = crc32(s.gt_mask->cells.data(), s.gt_mask->cells.size());
        }
        m.samples.push_back(std::move(e));
    }

    std::ofstream f(dir / "manifest.json");
    if (!f) throw IoError("cannot write manifest in " + dir.string());
    f << manifest_to_json(m).dump(2) << "\n";
    return m;
}

inline CorpusManifest load_manifest(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw IoError("no manifest.json in " + dir.string());
    nlohmann::json j;
    f >> j;
    return manifest_from_json(j);
}

/// Manifest validates (existence, shapes, checksums) before any tensor is used.
inline std::vector<ImageSample> load_corpus(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    auto m = load_manifest(dir);
    for (const auto& e : m.samples) {
        if (!fs::exists(dir / e.image_path))
            throw IoError("corpus sample " + e.id + ": missing file " + e.image_path);
        if (!e.mask_path.empty() && !fs::exists(dir / e.mask_path))
            throw IoError("corpus sample " + e.id + ": missing file " + e.mask_path);
    }

    std::vector<ImageSample> out;
    out.reserve(m.samples.size());
    for (const auto& e : m.samples) {
        ImageSample s;
        s.id = e.id;
        s.split = e.split;
        s.seed = e.seed;
        s.pixels = read_f32(dir / e.image_path, e.h, e.w);
        if (crc32(s.pixels.data(), sizeof(float) * static_cast<size_t>(s.pixels.size())) != e.image_crc)
            throw IoError("corpus sample " + e.id + ": image checksum mismatch");
        if (!e.mask_path.empty()) {
            auto g = read_u8(dir / e.mask_path, e.h, e.w);
            if (crc32(g.cells.data(), g.cells.size()) != e.mask_crc)
                throw IoError("corpus sample " + e.id + ": mask checksum mismatch");
            s.gt_mask = std::move(g);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace mimood::corpus
