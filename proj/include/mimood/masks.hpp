#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "mimood/common.hpp"
#include "mimood/rng.hpp"

namespace mimood::masks {

/// Random-walk brush parameters, all ranges inclusive.
struct BrushParams {
    int min_walks = 1, max_walks = 3;
    int min_steps = 8, max_steps = 24;
    int min_width = 1, max_width = 3;        // brush radius in token cells
    float min_coverage = 0.15f, max_coverage = 0.5f;
    int max_retries = 64;

    void validate() const {
        require(min_walks >= 1 && max_walks >= min_walks, "BrushParams: bad walk range");
        require(min_steps >= 1 && max_steps >= min_steps, "BrushParams: bad step range");
        require(min_width >= 1 && max_width >= min_width, "BrushParams: bad width range");
        require(min_coverage > 0.0f && max_coverage < 1.0f && max_coverage >= min_coverage,
                "BrushParams: coverage range must be a nonempty subset of (0,1)");
    }
};

/// ATD sees smaller occlusions than MVTM by default.
inline BrushParams mvtm_brush_defaults() { return {}; }
inline BrushParams atd_brush_defaults() {
    BrushParams p;
    p.min_coverage = 0.05f;
    p.max_coverage = 0.25f;
    return p;
}

namespace detail {

inline void paint_disk(MaskGrid& m, int cy, int cx, int radius) {
    int r2 = radius * radius;
    for (int y = std::max(0, cy - radius); y <= std::min(m.h - 1, cy + radius); ++y)
        for (int x = std::max(0, cx - radius); x <= std::min(m.w - 1, cx + radius); ++x)
            if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r2) m.at(y, x) = 1;
}

inline float coverage(const MaskGrid& m) {
    size_t set = static_cast<size_t>(std::count(m.cells.begin(), m.cells.end(), uint8_t{1}));
    return static_cast<float>(set) / static_cast<float>(m.size());
}

}  // namespace detail

/// Union of brush disks along random walks, width resampled every step,
/// clipped to bounds. Retries until achieved coverage lands in the target
/// range; deterministic given the rng state.
inline MaskGrid random_walk_mask(int h, int w, const BrushParams& params, Rng& rng) {
    params.validate();
    require(h >= 4 && w >= 4, "random_walk_mask: grid must be at least 4x4");

    // Walk coordinates roam an extended canvas (margin = brush radius) so
    // border cells see the same brush density as interior ones; painting is
    // clipped to bounds.
    const int margin = params.max_width - 1;
    auto walk_from = [&](MaskGrid& m, float target) {
        int y = rng.uniform_int(h + 2 * margin) - margin;
        int x = rng.uniform_int(w + 2 * margin) - margin;
        int steps = rng.uniform_range(params.min_steps, params.max_steps);
        for (int s = 0; s < steps && detail::coverage(m) < target; ++s) {
            int width = rng.uniform_range(params.min_width, params.max_width);
            detail::paint_disk(m, y, x, width - 1);
            y = std::clamp(y + rng.uniform_range(-1, 1), -margin, h - 1 + margin);
            x = std::clamp(x + rng.uniform_range(-1, 1), -margin, w - 1 + margin);
        }
    };

    float best_achieved = -1.0f;
    for (int attempt = 0; attempt < params.max_retries; ++attempt) {
        MaskGrid m(h, w, 0);
        float target = rng.uniform_range(params.min_coverage, params.max_coverage);
        int n_walks = rng.uniform_range(params.min_walks, params.max_walks);

        for (int wi = 0; wi < n_walks && detail::coverage(m) < target; ++wi) walk_from(m, target);
        // Keep walking from fresh starts until the floor is reached.
        while (detail::coverage(m) < params.min_coverage) walk_from(m, target);
        float achieved = detail::coverage(m);
        best_achieved = achieved;
        if (achieved >= params.min_coverage && achieved <= params.max_coverage) return m;
    }
    throw DataError("random_walk_mask: coverage target not reached after " +
                    std::to_string(params.max_retries) +
                    " retries, last achieved " + std::to_string(best_achieved));
}

/// Masked positions carry the reserved MASK id (= K_size, one past the last
/// codebook index).
inline std::vector<int32_t> apply_mask_token(const TokenGrid& tokens, const MaskGrid& m, int k_size) {
    require(tokens.h == m.h && tokens.w == m.w, "apply_mask_token: shape mismatch");
    std::vector<int32_t> out(tokens.cells.begin(), tokens.cells.end());
    for (size_t i = 0; i < out.size(); ++i)
        if (m.cells[i]) out[i] = k_size;
    return out;
}

/// Masked positions replaced by uniform random codebook indices; a draw may
/// coincide with the original token. Unmasked positions are untouched.
inline TokenGrid corrupt_tokens(const TokenGrid& tokens, const MaskGrid& m, int k_size, Rng& rng) {
    require(tokens.h == m.h && tokens.w == m.w, "corrupt_tokens: shape mismatch");
    TokenGrid out = tokens;
    for (size_t i = 0; i < out.cells.size(); ++i)
        if (m.cells[i]) out.cells[i] = rng.uniform_int(k_size);
    return out;
}

}  // namespace mimood::masks
