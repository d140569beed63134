#pragma once

// Token-budget and attention-cost estimate for region tokens versus patch
// tokens. FLOPs count 2 per multiply-add:
//   attention   4·T²·d per layer   (QKᵀ and attention·V)
//   projection  8·T·d² per layer   (Q, K, V, output)
//   mlp        16·T·d² per layer   (d -> 4d -> d)

#include <cstddef>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace rwa {

struct TokenCost {
    std::size_t tokens = 0;
    double attention_flops = 0;
    double projection_flops = 0;
    double mlp_flops = 0;
    [[nodiscard]] double total_flops() const noexcept { return attention_flops + projection_flops + mlp_flops; }
};

struct CostReport {
    std::size_t frames = 0;
    std::size_t regions_per_frame = 0;
    std::size_t patches_per_frame = 0;
    std::size_t d = 0;
    std::size_t layers = 0;
    TokenCost region;
    TokenCost patch;
    [[nodiscard]] double token_ratio() const { return double(patch.tokens) / double(region.tokens); }
    [[nodiscard]] double quadratic_ratio() const { return patch.attention_flops / region.attention_flops; }
    [[nodiscard]] double total_ratio() const { return patch.total_flops() / region.total_flops(); }
};

[[nodiscard]] inline TokenCost token_cost(std::size_t tokens, std::size_t d, std::size_t layers) {
    const double t = double(tokens), dd = double(d), l = double(layers);
    return {tokens, 4.0 * t * t * dd * l, 8.0 * t * dd * dd * l, 16.0 * t * dd * dd * l};
}

/// Region input: M·N + 1 tokens; patch input: M·P + 1 tokens (one CLS each).
[[nodiscard]] inline CostReport estimate_cost(std::size_t frames, std::size_t regions_per_frame, std::size_t patches_per_frame = 196, std::size_t d = 768,
                                              std::size_t layers = 12) {
    if (frames == 0 || regions_per_frame == 0 || patches_per_frame == 0 || d == 0 || layers == 0)
        throw std::invalid_argument("estimate_cost: all arguments must be positive");
    CostReport r{frames, regions_per_frame, patches_per_frame, d, layers, {}, {}};
    r.region = token_cost(frames * regions_per_frame + 1, d, layers);
    r.patch = token_cost(frames * patches_per_frame + 1, d, layers);
    return r;
}

[[nodiscard]] inline nlohmann::ordered_json cost_to_json(const CostReport& r) {
    auto side = [](const TokenCost& c) {
        return nlohmann::ordered_json{{"tokens", c.tokens},
                                      {"attention_flops", c.attention_flops},
                                      {"projection_flops", c.projection_flops},
                                      {"mlp_flops", c.mlp_flops},
                                      {"total_flops", c.total_flops()}};
    };
    return {{"model", "FLOPs = 2 per multiply-add; attention 4*T^2*d*layers, projection 8*T*d^2*layers, mlp 16*T*d^2*layers"},
            {"frames", r.frames},
            {"regions_per_frame", r.regions_per_frame},
            {"patches_per_frame", r.patches_per_frame},
            {"d", r.d},
            {"layers", r.layers},
            {"region", side(r.region)},
            {"patch", side(r.patch)},
            {"token_ratio", r.token_ratio()},
            {"quadratic_ratio", r.quadratic_ratio()},
            {"total_ratio", r.total_ratio()}};
}

}  // namespace rwa
