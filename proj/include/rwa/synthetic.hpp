#pragma once

// Planted-correspondence data and slow reference implementations used as
// test oracles.
//
// A planted video holds N regions, each a noisy copy of one concept vector;
// its caption holds the N matching concept words plus L−N distractor words.
// The (region, word) pairing is known exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwa/alignment.hpp"
#include "rwa/dataset_io.hpp"
#include "rwa/retrieval.hpp"

namespace rwa {

struct PlantedParams {
    std::size_t train_videos = 64;
    std::size_t test_videos = 32;
    std::size_t regions = 8;       // N
    std::size_t words = 10;        // L, content words per caption
    std::size_t dim = 32;
    double noise_sigma = 0.1;
    std::size_t concepts = 32;
    std::size_t distractors = 16;  // size of the distractor vocabulary
    std::uint32_t frames = 8;      // frames per video; region n sits in frame n mod frames
    std::uint64_t seed = 0;
};

struct PlantedPair {
    std::size_t region = 0;  // index into the video's region list
    std::size_t word = 0;    // 0-based content-word position (token index − 1)
    std::size_t concept_id = 0;

    friend bool operator==(const PlantedPair&, const PlantedPair&) = default;
};

using PlantedTruth = std::vector<std::vector<PlantedPair>>;  // per video

struct PlantedData {
    Dataset train;
    Dataset test;
    PlantedTruth train_truth;
    PlantedTruth test_truth;
    Tensor<double> concept_vectors;
};

[[nodiscard]] inline std::string concept_word(std::size_t k) { return "concept" + std::to_string(k); }
[[nodiscard]] inline std::string distractor_word(std::size_t k) { return "filler" + std::to_string(k); }

[[nodiscard]] inline PlantedData generate_planted_dataset(const PlantedParams& p) {
    if (p.regions == 0 || p.words == 0 || p.dim == 0) throw std::invalid_argument("planted: N, L and d must be positive");
    if (p.concepts < p.regions) throw std::invalid_argument("planted: need n_concepts >= N");
    if (p.words < p.regions) throw std::invalid_argument("planted: need L >= N");
    if (p.words > p.regions && p.distractors == 0) throw std::invalid_argument("planted: L > N requires distractor words");
    if (p.frames == 0) throw std::invalid_argument("planted: frames must be positive");
    if (!(p.noise_sigma >= 0.0)) throw std::invalid_argument("planted: noise_sigma must be >= 0");

    std::mt19937_64 rng(p.seed);
    PlantedData out;
    out.concept_vectors = random_unit_rows<double>(p.concepts, p.dim, rng);

    Vocabulary vocab;
    std::int32_t next = kFirstContentId;
    for (std::size_t k = 0; k < p.concepts; ++k) vocab.add(concept_word(k), next++);
    for (std::size_t k = 0; k < p.distractors; ++k) vocab.add(distractor_word(k), next++);

    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    constexpr std::uint32_t frame_w = 640, frame_h = 360;

    auto make_split = [&](std::size_t count, const std::string& prefix, Dataset& ds, PlantedTruth& truth) {
        ds.manifest.dim = static_cast<std::uint32_t>(p.dim);
        ds.manifest.vocab = vocab;
        for (std::size_t v = 0; v < count; ++v) {
            std::vector<std::size_t> pool(p.concepts);
            std::iota(pool.begin(), pool.end(), std::size_t{0});
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(p.regions);

            // Caption slots: concept words and distractors in random order.
            std::vector<std::size_t> slots(p.words);
            std::iota(slots.begin(), slots.end(), std::size_t{0});
            std::shuffle(slots.begin(), slots.end(), rng);
            std::vector<std::string> words(p.words);
            std::vector<PlantedPair> pairs;
            std::vector<RegionRecord> regions;
            for (std::size_t n = 0; n < p.regions; ++n) {
                const std::size_t k = pool[n];
                words[slots[n]] = concept_word(k);
                pairs.push_back({n, slots[n], k});

                RegionRecord r;
                std::vector<double> f(p.dim);
                double nrm = 0;
                for (std::size_t c = 0; c < p.dim; ++c) {
                    f[c] = out.concept_vectors(k, c) + p.noise_sigma * noise(rng);
                    nrm += f[c] * f[c];
                }
                nrm = std::sqrt(nrm);
                r.feature.resize(p.dim);
                for (std::size_t c = 0; c < p.dim; ++c) r.feature[c] = static_cast<float>(f[c] / nrm);
                if (p.noise_sigma == 0.0)
                    for (std::size_t c = 0; c < p.dim; ++c) r.feature[c] = static_cast<float>(out.concept_vectors(k, c));

                const double xa = unit(rng) * frame_w, xb = unit(rng) * frame_w;
                const double ya = unit(rng) * frame_h, yb = unit(rng) * frame_h;
                r.location = normalize_box(std::min(xa, xb), std::min(ya, yb), std::max(xa, xb), std::max(ya, yb), frame_w, frame_h);
                r.confidence = static_cast<float>(0.5 + 0.5 * unit(rng));
                r.frame_index = static_cast<std::uint32_t>(n % p.frames);
                regions.push_back(std::move(r));
            }
            std::uniform_int_distribution<std::size_t> pick_distractor(0, p.distractors == 0 ? 0 : p.distractors - 1);
            for (std::size_t s = p.regions; s < p.words; ++s) words[slots[s]] = distractor_word(pick_distractor(rng));

            std::string caption;
            for (const auto& w : words) caption += (caption.empty() ? "" : " ") + w;
            char id[32];
            std::snprintf(id, sizeof id, "%s%04zu", prefix.c_str(), v);
            ds.manifest.videos.push_back({id, caption, p.frames, frame_w, frame_h, std::string(id) + ".bin", static_cast<std::uint32_t>(regions.size())});
            ds.regions.push_back(std::move(regions));
            truth.push_back(std::move(pairs));
        }
    };
    make_split(p.train_videos, "train", out.train, out.train_truth);
    make_split(p.test_videos, "test", out.test, out.test_truth);
    return out;
}

[[nodiscard]] inline nlohmann::ordered_json truth_to_json(const Dataset& ds, const PlantedTruth& truth) {
    nlohmann::ordered_json videos = nlohmann::ordered_json::array();
    for (std::size_t v = 0; v < truth.size(); ++v) {
        nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
        for (const auto& pr : truth[v]) pairs.push_back({{"region", pr.region}, {"word", pr.word}, {"concept", pr.concept_id}});
        videos.push_back({{"video_id", ds.manifest.videos[v].video_id}, {"pairs", pairs}});
    }
    return {{"videos", videos}};
}

[[nodiscard]] inline PlantedTruth truth_from_json(const nlohmann::json& j) {
    PlantedTruth out;
    for (const auto& v : j.at("videos")) {
        std::vector<PlantedPair> pairs;
        for (const auto& pr : v.at("pairs")) pairs.push_back({pr.at("region").get<std::size_t>(), pr.at("word").get<std::size_t>(), pr.at("concept").get<std::size_t>()});
        out.push_back(std::move(pairs));
    }
    return out;
}

/// Writes <dir>/train and <dir>/test, each a standard dataset with a truth.json sidecar.
inline void write_planted(const std::filesystem::path& dir, const PlantedData& data) {
    auto write_split = [](const std::filesystem::path& d, const Dataset& ds, const PlantedTruth& truth) {
        write_dataset(d, ds);
        std::ofstream out(d / "truth.json");
        if (!out) throw std::runtime_error("cannot write " + (d / "truth.json").string());
        out << truth_to_json(ds, truth).dump(2) << "\n";
    };
    write_split(dir / "train", data.train, data.train_truth);
    write_split(dir / "test", data.test, data.test_truth);
}

[[nodiscard]] inline PlantedTruth read_truth(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return truth_from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------
// Brute-force oracles: per-scalar loops, no shared helpers with alignment.hpp.

namespace oracle {

inline double cos_rows(const Tensor<double>& a, std::size_t i, const Tensor<double>& b, std::size_t j) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t c = 0; c < a.cols; ++c) {
        ab += a(i, c) * b(j, c);
        aa += a(i, c) * a(i, c);
        bb += b(j, c) * b(j, c);
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline double cos_vec(const Tensor<double>& a, std::size_t i, const std::vector<double>& v) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t c = 0; c < a.cols; ++c) {
        ab += a(i, c) * v[c];
        aa += a(i, c) * a(i, c);
        bb += v[c] * v[c];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// Queries attend over keys (rows first..first+nk-1 of `k`); returns the mean
/// cosine between each query and its attended key feature.
inline double directional(const Tensor<double>& q, std::size_t q_first, std::size_t nq, const Tensor<double>& k, std::size_t k_first, std::size_t nk,
                          bool refine) {
    double total = 0;
    for (std::size_t a = 0; a < nq; ++a) {
        std::vector<double> w(nk);
        double denom = 0;
        for (std::size_t b = 0; b < nk; ++b) {
            w[b] = std::exp(cos_rows(q, q_first + a, k, k_first + b));
            denom += w[b];
        }
        for (auto& x : w) x /= denom;
        if (refine && nk > 1) {
            double mean = 0;
            for (double x : w) mean += x;
            mean /= double(nk);
            for (auto& x : w) x = (x - mean > 0.0) ? x : 0.0;
        }
        std::vector<double> att(k.cols, 0.0);
        for (std::size_t b = 0; b < nk; ++b) {
            double len = 0;
            for (std::size_t c = 0; c < k.cols; ++c) len += k(k_first + b, c) * k(k_first + b, c);
            len = std::sqrt(len);
            if (len == 0.0) continue;
            for (std::size_t c = 0; c < k.cols; ++c) att[c] += w[b] * k(k_first + b, c) / len;
        }
        total += cos_vec(q, q_first + a, att);
    }
    return total / double(nq);
}

}  // namespace oracle

/// Loop-based reference for every similarity in the bundle. `videos[i]` is
/// [N_i+1 × d] and `texts[j]` is [L_j+1 × d], CLS first, no padding.
[[nodiscard]] inline SimilarityBundle<double> brute_force_bundle(const std::vector<Tensor<double>>& videos, const std::vector<Tensor<double>>& texts,
                                                                 bool use_refinement = true) {
    const std::size_t nv = videos.size(), nt = texts.size();
    SimilarityBundle<double> b{Tensor<double>(nv, nt), Tensor<double>(nv, nt), Tensor<double>(nt, nv)};
    for (std::size_t i = 0; i < nv; ++i)
        for (std::size_t j = 0; j < nt; ++j) {
            b.global(i, j) = oracle::cos_rows(videos[i], 0, texts[j], 0);
            const std::size_t n = videos[i].rows - 1, l = texts[j].rows - 1;
            b.local_v2l(i, j) = oracle::directional(videos[i], 1, n, texts[j], 1, l, use_refinement);
            b.local_l2v(j, i) = oracle::directional(texts[j], 1, l, videos[i], 1, n, use_refinement);
        }
    return b;
}

/// Loop-based reference for the four InfoNCE terms.
[[nodiscard]] inline LossTerms<double> brute_force_losses(const SimilarityBundle<double>& b, double sigma, bool use_local = true) {
    auto nce = [sigma](const Tensor<double>& s, bool transpose) {
        const std::size_t n = s.rows;
        double loss = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double denom = 0;
            for (std::size_t j = 0; j < n; ++j) denom += std::exp((transpose ? s(j, i) : s(i, j)) / sigma);
            loss += -std::log(std::exp(s(i, i) / sigma) / denom);
        }
        return loss / double(n);
    };
    LossTerms<double> t;
    t.global_v2l = nce(b.global, false);
    t.global_l2v = nce(b.global, true);
    if (use_local) {
        t.local_v2l = nce(b.local_v2l, false);
        t.local_l2v = nce(b.local_l2v, false);
    }
    t.total = t.global_v2l + t.global_l2v + t.local_v2l + t.local_l2v;
    return t;
}

// ---------------------------------------------------------------------------
// Planted alignment accuracy

/// Counts planted pairs whose region attends most strongly (pre-refinement)
/// to its planted word. `regions` and `words` are content rows only.
template <class T>
[[nodiscard]] std::size_t planted_hits(const Tensor<T>& regions, const Tensor<T>& words, const std::vector<PlantedPair>& pairs) {
    const Tensor<T> sims = cosine_matrix(regions, words);
    std::size_t hits = 0;
    for (const auto& pr : pairs) {
        const auto a = attention_weights<T>(sims.row(pr.region));
        const auto best = static_cast<std::size_t>(std::max_element(a.begin(), a.end()) - a.begin());
        hits += best == pr.word ? 1 : 0;
    }
    return hits;
}

/// Percentage of planted pairs recovered by the model on a planted split.
template <class T>
[[nodiscard]] double planted_alignment_accuracy(const ParameterStore<T>& params, const ModelConfig& cfg, const Dataset& ds, const PlantedTruth& truth,
                                                const SamplingOptions& sampling) {
    if (truth.size() != ds.size()) throw std::invalid_argument("planted_alignment_accuracy: truth does not match split");
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const VideoSample video = prepare_video(ds, i, sampling, i);
        const CaptionSample caption = prepare_caption(ds, i);
        const auto ev = encode_video_sample(params, cfg, video);
        const auto et = encode_text_sample(params, cfg, caption);
        Tensor<T> r(video.regions.size(), ev.r.cols), t(caption.content_length(), et.t.cols);
        for (std::size_t n = 0; n < r.rows; ++n) std::copy(ev.r.row(n + 1).begin(), ev.r.row(n + 1).end(), r.row(n).begin());
        for (std::size_t l = 0; l < t.rows; ++l) std::copy(et.t.row(l + 1).begin(), et.t.row(l + 1).end(), t.row(l).begin());

        // Selection may reorder or drop regions; map planted indices onto the kept ones.
        std::vector<PlantedPair> kept;
        for (const auto& pr : truth[i]) {
            const auto& original = ds.regions[i].at(pr.region);
            for (std::size_t n = 0; n < video.regions.size(); ++n)
                if (video.regions[n] == original) {
                    kept.push_back({n, pr.word, pr.concept_id});
                    break;
                }
        }
        hits += planted_hits(r, t, kept);
        total += truth[i].size();
    }
    return total == 0 ? 0.0 : 100.0 * double(hits) / double(total);
}

}  // namespace rwa
