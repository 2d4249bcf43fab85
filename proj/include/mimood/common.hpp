#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mimood {

// Row-major throughout: images and activations are indexed (row, col).
using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::RowVectorXf;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense 2-D grid of small scalar cells (token indices, binary masks).
template <typename T>
struct Grid {
    int h = 0;
    int w = 0;
    std::vector<T> cells;

    Grid() = default;
    Grid(int h_, int w_, T fill = T{}) : h(h_), w(w_), cells(static_cast<size_t>(h_) * w_, fill) {}

    T& at(int y, int x) { return cells[static_cast<size_t>(y) * w + x]; }
    const T& at(int y, int x) const { return cells[static_cast<size_t>(y) * w + x]; }

    size_t size() const { return cells.size(); }

    bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.h == b.h && a.w == b.w && a.cells == b.cells;
    }
};

using TokenGrid = Grid<int32_t>;
using MaskGrid = Grid<uint8_t>;

enum class Split { train, val, test };

inline std::string split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw ConfigError("unknown split");
}

inline Split split_from_name(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split name: " + s);
}

/// One normalized grayscale image, optionally with a ground-truth anomaly mask.
struct ImageSample {
    std::string id;
    Mat pixels;                          // H×W, values in [0,1]
    std::optional<MaskGrid> gt_mask;     // H×W, present iff an anomaly was injected
    Split split = Split::train;
    int64_t seed = 0;

    bool has_anomaly() const { return gt_mask.has_value(); }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace mimood
