#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mimood/common.hpp"

namespace mimood::plot {

/// 8-bit binary PGM; values expected in [0,1], clamped otherwise.
inline void write_pgm(const std::filesystem::path& path, const Mat& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
    for (Eigen::Index i = 0; i < img.size(); ++i) {
        float v = std::clamp(img.data()[i], 0.0f, 1.0f);
        f.put(static_cast<char>(static_cast<int>(v * 255.0f + 0.5f)));
    }
    if (!f) throw IoError("write failed: " + path.string());
}

/// Panels side by side with a light separator column.
inline Mat hstack(const std::vector<Mat>& panels, int gap = 2) {
    require(!panels.empty(), "hstack: no panels");
    const auto h = panels.front().rows();
    Eigen::Index w = 0;
    for (const auto& p : panels) {
        require(p.rows() == h, "hstack: panel heights differ");
        w += p.cols();
    }
    w += gap * static_cast<Eigen::Index>(panels.size() - 1);
    Mat out = Mat::Constant(h, w, 0.5f);
    Eigen::Index x = 0;
    for (const auto& p : panels) {
        out.block(0, x, h, p.cols()) = p;
        x += p.cols() + gap;
    }
    return out;
}

/// Nearest-neighbour upsample of a token-grid quantity to pixel resolution.
template <typename T>
Mat upsample_grid(const Grid<T>& g, int f) {
    Mat out(g.h * f, g.w * f);
    for (int y = 0; y < g.h * f; ++y)
        for (int x = 0; x < g.w * f; ++x)
            out(y, x) = static_cast<float>(g.at(y / f, x / f));
    return out;
}

/// Rescale to [0,1] for display; constant maps render mid-gray.
inline Mat for_display(const Mat& m) {
    float lo = m.minCoeff(), hi = m.maxCoeff();
    if (hi - lo < 1e-12f) return Mat::Constant(m.rows(), m.cols(), 0.5f);
    return (m.array() - lo) / (hi - lo);
}

/// Minimal static SVG line chart; output is deterministic (no timestamps).
inline void write_svg_line(const std::filesystem::path& path, const std::vector<double>& xs,
                           const std::vector<double>& ys, const std::string& x_label,
                           const std::string& y_label, const std::string& title) {
    require(xs.size() == ys.size() && !xs.empty(), "svg plot: xs and ys must match and be nonempty");
    const int width = 640, height = 440, ml = 70, mr = 20, mt = 40, mb = 50;
    double xmin = *std::min_element(xs.begin(), xs.end());
    double xmax = *std::max_element(xs.begin(), xs.end());
    double ymin = *std::min_element(ys.begin(), ys.end());
    double ymax = *std::max_element(ys.begin(), ys.end());
    if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
    if (ymax - ymin < 1e-12) ymax = ymin + 1.0;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr); };
    auto py = [&](double y) { return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb); };

    std::ostringstream svg;
    svg << std::setprecision(6);
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    svg << "<text x='" << width / 2 << "' y='20' text-anchor='middle' font-size='15'>" << title
        << "</text>\n";
    svg << "<line x1='" << ml << "' y1='" << height - mb << "' x2='" << width - mr << "' y2='"
        << height - mb << "' stroke='black'/>\n";
    svg << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << height - mb
        << "' stroke='black'/>\n";
    svg << "<text x='" << (ml + width - mr) / 2 << "' y='" << height - 12
        << "' text-anchor='middle' font-size='12'>" << x_label << "</text>\n";
    svg << "<text x='18' y='" << (mt + height - mb) / 2
        << "' text-anchor='middle' font-size='12' transform='rotate(-90 18 "
        << (mt + height - mb) / 2 << ")'>" << y_label << "</text>\n";

    for (size_t i = 0; i < xs.size(); ++i) {
        svg << "<text x='" << px(xs[i]) << "' y='" << height - mb + 16
            << "' text-anchor='middle' font-size='10'>" << xs[i] << "</text>\n";
        svg << "<text x='" << ml - 6 << "' y='" << py(ys[i]) + 3
            << "' text-anchor='end' font-size='10'>" << std::setprecision(3) << ys[i]
            << std::setprecision(6) << "</text>\n";
    }

    svg << "<polyline fill='none' stroke='steelblue' stroke-width='2' points='";
    for (size_t i = 0; i < xs.size(); ++i) svg << px(xs[i]) << "," << py(ys[i]) << " ";
    svg << "'/>\n";
    for (size_t i = 0; i < xs.size(); ++i)
        svg << "<circle cx='" << px(xs[i]) << "' cy='" << py(ys[i]) << "' r='4' fill='steelblue'/>\n";
    svg << "</svg>\n";

    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << svg.str();
}

}  // namespace mimood::plot
