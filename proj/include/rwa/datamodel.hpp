#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace rwa {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kClsId = 1;
inline constexpr std::int32_t kUnkId = 2;
inline constexpr std::int32_t kFirstContentId = 3;

/// Normalized box geometry: [x1, y1, x2, y2, w, h, w*h].
using Location = std::array<float, 7>;

struct RegionRecord {
    std::vector<float> feature;
    Location location{};
    float confidence = 0.0f;
    std::uint32_t frame_index = 0;

    friend bool operator==(const RegionRecord&, const RegionRecord&) = default;
};

struct VideoSample {
    std::string video_id;
    std::vector<RegionRecord> regions;
    std::uint32_t num_frames_total = 1;
    std::vector<std::uint32_t> sampled_frame_indices;

    friend bool operator==(const VideoSample&, const VideoSample&) = default;
};

struct CaptionSample {
    std::string text;
    std::vector<std::int32_t> token_ids;  // token_ids[0] is CLS

    [[nodiscard]] std::size_t content_length() const noexcept { return token_ids.empty() ? 0 : token_ids.size() - 1; }

    friend bool operator==(const CaptionSample&, const CaptionSample&) = default;
};

/// B paired samples, right-padded. Region rows exclude the video CLS slot;
/// word rows include the caption CLS at position 0.
struct Batch {
    std::vector<VideoSample> videos;
    std::vector<CaptionSample> captions;
    std::vector<std::vector<bool>> region_pad_mask;  // [B × N_max], true on real regions
    std::vector<std::vector<bool>> word_pad_mask;    // [B × (L_max+1)], true on real tokens
    std::vector<std::vector<std::int32_t>> padded_token_ids;

    [[nodiscard]] std::size_t size() const noexcept { return videos.size(); }
    [[nodiscard]] std::size_t max_regions() const noexcept { return region_pad_mask.empty() ? 0 : region_pad_mask.front().size(); }
    [[nodiscard]] std::size_t max_tokens() const noexcept { return word_pad_mask.empty() ? 0 : word_pad_mask.front().size(); }
};

struct ModelConfig {
    std::size_t d = 32;
    std::size_t video_layers = 2;
    std::size_t text_layers = 2;
    std::size_t heads = 4;
    std::size_t vocab_size = 64;
    std::size_t max_frames = 8;   // rows of the temporal table
    std::size_t max_words = 32;   // rows of the word-position table, CLS included
    std::size_t object_num = 30;  // regions kept per frame
    double sigma = 0.05;
    double dropout = 0.0;  // residual-branch dropout while training
    bool use_refinement = true;
    bool use_local_losses = true;

    /// ViT-base / DistilBERT-sized preset.
    static ModelConfig full_scale() {
        ModelConfig c;
        c.d = 768;
        c.video_layers = 12;
        c.text_layers = 6;
        c.heads = 12;
        c.vocab_size = 30522;
        c.max_words = 64;
        return c;
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

[[nodiscard]] inline std::vector<std::string> validate_config(const ModelConfig& c) {
    std::vector<std::string> out;
    if (c.d == 0) out.emplace_back("d must be positive");
    if (c.heads == 0 || c.d % c.heads != 0) out.emplace_back("heads must divide d");
    if (!(c.sigma > 0.0) || !std::isfinite(c.sigma)) out.emplace_back("sigma must be positive");
    if (c.vocab_size <= static_cast<std::size_t>(kFirstContentId)) out.emplace_back("vocab_size too small for reserved ids");
    if (c.max_frames == 0) out.emplace_back("max_frames must be positive");
    if (c.max_words < 2) out.emplace_back("max_words must allow CLS plus one word");
    if (c.object_num == 0) out.emplace_back("object_num must be positive");
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) out.emplace_back("dropout must lie in [0,1)");
    return out;
}

namespace detail {
inline std::string idx(const char* what, std::size_t i) { return std::string(what) + "[" + std::to_string(i) + "]"; }
}  // namespace detail

/// All invariant violations of one region; empty when valid.
[[nodiscard]] inline std::vector<std::string> validate_region(const RegionRecord& r, std::size_t expected_dim = 0) {
    std::vector<std::string> out;
    constexpr double tol = 1e-6;
    const auto& l = r.location;
    for (std::size_t i = 0; i < l.size(); ++i) {
        if (!std::isfinite(l[i])) out.push_back(detail::idx("location", i) + " not finite");
        else if (l[i] < 0.0f || l[i] > 1.0f) out.push_back(detail::idx("location", i) + " outside [0,1]");
    }
    if (l[0] > l[2]) out.emplace_back("x1 > x2");
    if (l[1] > l[3]) out.emplace_back("y1 > y2");
    if (std::abs(double(l[4]) - (double(l[2]) - double(l[0]))) > tol) out.emplace_back("width mismatch");
    if (std::abs(double(l[5]) - (double(l[3]) - double(l[1]))) > tol) out.emplace_back("height mismatch");
    if (std::abs(double(l[6]) - double(l[4]) * double(l[5])) > tol) out.emplace_back("area mismatch");
    if (!std::isfinite(r.confidence) || r.confidence < 0.0f || r.confidence > 1.0f) out.emplace_back("confidence outside [0,1]");
    if (r.feature.empty()) out.emplace_back("empty feature");
    if (expected_dim != 0 && r.feature.size() != expected_dim)
        out.push_back("feature length " + std::to_string(r.feature.size()) + " != " + std::to_string(expected_dim));
    for (std::size_t i = 0; i < r.feature.size(); ++i)
        if (!std::isfinite(r.feature[i])) {
            out.push_back(detail::idx("feature", i) + " not finite");
            break;
        }
    return out;
}

/// Reports every invariant violation; never throws on bad numeric content.
[[nodiscard]] inline std::vector<std::string> validate_sample(const VideoSample& v, std::size_t object_num = 0) {
    std::vector<std::string> out;
    if (v.regions.empty()) out.emplace_back("no regions");
    if (v.num_frames_total == 0) out.emplace_back("num_frames_total must be >= 1");
    const std::size_t dim = v.regions.empty() ? 0 : v.regions.front().feature.size();
    for (std::size_t i = 0; i < v.regions.size(); ++i) {
        for (auto& msg : validate_region(v.regions[i], dim)) out.push_back(detail::idx("region", i) + ": " + msg);
        bool sampled = false;
        for (auto f : v.sampled_frame_indices) sampled = sampled || f == v.regions[i].frame_index;
        if (!sampled) out.push_back(detail::idx("region", i) + ": frame_index " + std::to_string(v.regions[i].frame_index) + " not among sampled frames");
    }
    for (auto f : v.sampled_frame_indices)
        if (f >= v.num_frames_total) out.push_back("sampled frame " + std::to_string(f) + " >= num_frames_total");
    if (object_num != 0 && v.regions.size() > object_num * v.sampled_frame_indices.size())
        out.emplace_back("more regions than object_num x sampled frames");
    return out;
}

[[nodiscard]] inline std::vector<std::string> validate_sample(const CaptionSample& c) {
    std::vector<std::string> out;
    if (c.token_ids.empty() || c.token_ids.front() != kClsId) out.emplace_back("token_ids[0] is not CLS");
    if (c.token_ids.size() < 2) out.emplace_back("empty caption");
    for (std::size_t i = 1; i < c.token_ids.size(); ++i) {
        if (c.token_ids[i] == kPadId) out.push_back("PAD at interior position " + std::to_string(i));
        else if (c.token_ids[i] < 0) out.push_back("negative token id at position " + std::to_string(i));
        else if (c.token_ids[i] == kClsId) out.push_back("CLS at interior position " + std::to_string(i));
    }
    return out;
}

}  // namespace rwa
