#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rwa/alignment.hpp"
#include "rwa/dataset_io.hpp"
#include "rwa/encoders.hpp"

namespace rwa {

enum class Direction { t2v, v2t };

[[nodiscard]] inline Direction parse_direction(std::string_view s) {
    if (s == "t2v") return Direction::t2v;
    if (s == "v2t") return Direction::v2t;
    throw std::invalid_argument("unknown direction '" + std::string(s) + "' (expected t2v|v2t)");
}
[[nodiscard]] inline const char* to_string(Direction d) { return d == Direction::t2v ? "t2v" : "v2t"; }

/// Unweighted sum of the global and the direction-appropriate local similarity; range [−2, 2].
template <class T>
[[nodiscard]] constexpr T final_similarity(T global, T local) noexcept {
    return global + local;
}

/// 1-based rank of the truth; gallery items tied with it count as ranked ahead.
template <class T>
[[nodiscard]] std::size_t rank_of_truth(std::span<const T> scores, std::size_t truth) {
    if (truth >= scores.size()) throw std::out_of_range("rank_of_truth: truth index " + std::to_string(truth) + " outside gallery of " + std::to_string(scores.size()));
    std::size_t rank = 1;
    for (std::size_t g = 0; g < scores.size(); ++g)
        if (g != truth && scores[g] >= scores[truth]) ++rank;
    return rank;
}

/// Percentage of ranks ≤ k.
[[nodiscard]] inline double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
    if (ranks.empty()) throw std::invalid_argument("recall_at_k: no ranks");
    const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
    return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

[[nodiscard]] inline double median_rank(std::span<const std::size_t> ranks) {
    if (ranks.empty()) throw std::invalid_argument("median_rank: no ranks");
    std::vector<std::size_t> s(ranks.begin(), ranks.end());
    std::sort(s.begin(), s.end());
    const std::size_t n = s.size();
    return n % 2 ? double(s[n / 2]) : 0.5 * (double(s[n / 2 - 1]) + double(s[n / 2]));
}

struct RetrievalMetrics {
    Direction direction = Direction::t2v;
    double r1 = 0, r5 = 0, r10 = 0, median_rank = 0;
    std::size_t num_queries = 0;
    std::string checkpoint_id;

    friend bool operator==(const RetrievalMetrics&, const RetrievalMetrics&) = default;
};

[[nodiscard]] inline RetrievalMetrics metrics_from_ranks(const std::vector<std::size_t>& ranks, Direction dir, std::string checkpoint_id = {}) {
    return {dir, recall_at_k(ranks, 1), recall_at_k(ranks, 5), recall_at_k(ranks, 10), median_rank(ranks), ranks.size(), std::move(checkpoint_id)};
}

[[nodiscard]] inline nlohmann::ordered_json metrics_to_json(const RetrievalMetrics& m) {
    return {{"direction", to_string(m.direction)}, {"R1", m.r1},   {"R5", m.r5}, {"R10", m.r10}, {"MedR", m.median_rank},
            {"num_queries", m.num_queries},         {"checkpoint_id", m.checkpoint_id}};
}

/// FNV-1a over the float32 bytes of every parameter, as 16 hex digits.
[[nodiscard]] inline std::string parameter_fingerprint(const ParameterStore<float>& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](std::uint8_t byte) {
        h ^= byte;
        h *= 0x100000001b3ull;
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (char c : params.name(i)) feed(static_cast<std::uint8_t>(c));
        for (float f : params.at(i).data) {
            const auto u = std::bit_cast<std::uint32_t>(f);
            for (int b = 0; b < 4; ++b) feed(static_cast<std::uint8_t>(u >> (8 * b)));
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Encoded split: every video and caption passed through the model once.
template <class T>
struct EncodedSplit {
    std::vector<VideoSample> videos;
    std::vector<CaptionSample> captions;
    std::vector<EncodedVideo<T>> video_features;
    std::vector<EncodedText<T>> text_features;
};

template <class T>
[[nodiscard]] EncodedSplit<T> encode_split(const ParameterStore<T>& params, const ModelConfig& cfg, const Dataset& ds, const SamplingOptions& sampling) {
    if (ds.size() == 0) throw std::invalid_argument("evaluate: empty split");
    EncodedSplit<T> out;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out.videos.push_back(prepare_video(ds, i, sampling, i));
        out.captions.push_back(prepare_caption(ds, i));
        out.video_features.push_back(encode_video_sample(params, cfg, out.videos.back()));
        out.text_features.push_back(encode_text_sample(params, cfg, out.captions.back()));
    }
    return out;
}

/// Final-similarity matrix [query × gallery]; queries are captions for t2v
/// and videos for v2t. Item i of the split is the truth for query i.
template <class T>
[[nodiscard]] Tensor<T> score_matrix(const SimilarityBundle<T>& b, Direction dir) {
    const std::size_t n = b.global.rows;
    Tensor<T> s(b.global.cols, n);
    if (dir == Direction::t2v) {
        for (std::size_t q = 0; q < b.global.cols; ++q)
            for (std::size_t g = 0; g < n; ++g) s(q, g) = final_similarity(b.global(g, q), b.local_l2v(q, g));
    } else {
        s = Tensor<T>(n, b.global.cols);
        for (std::size_t q = 0; q < n; ++q)
            for (std::size_t g = 0; g < b.global.cols; ++g) s(q, g) = final_similarity(b.global(q, g), b.local_v2l(q, g));
    }
    return s;
}

template <class T>
[[nodiscard]] std::vector<std::size_t> ranks_from_scores(const Tensor<T>& scores) {
    std::vector<std::size_t> ranks;
    for (std::size_t q = 0; q < scores.rows; ++q) ranks.push_back(rank_of_truth<T>(scores.row(q), q));
    return ranks;
}

/// Scores every query against the full gallery of one split. Frame sampling
/// is taken from `sampling` (uniform for deterministic evaluation).
template <class T>
[[nodiscard]] RetrievalMetrics evaluate_retrieval(const ParameterStore<T>& params, const ModelConfig& cfg, const Dataset& ds, Direction dir,
                                                  const SamplingOptions& sampling, std::string checkpoint_id = {}) {
    const auto split = encode_split(params, cfg, ds, sampling);
    const auto bundle = compute_bundle(split.video_features, split.text_features, cfg.use_refinement);
    return metrics_from_ranks(ranks_from_scores(score_matrix(bundle, dir)), dir, std::move(checkpoint_id));
}

/// Uniform sampling of `frames` frames: the evaluation regime.
[[nodiscard]] inline SamplingOptions evaluation_sampling(std::uint32_t frames = 8, std::size_t object_num = 30) {
    SamplingOptions s;
    s.num_frames = frames;
    s.mode = SampleMode::uniform;
    s.object_num = object_num;
    return s;
}

}  // namespace rwa
