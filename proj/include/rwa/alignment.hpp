#pragma once

// Global video-sentence similarity and bidirectional region-word alignment.
//
// For video i with content regions r_1..r_N and caption j with content words
// t_1..t_L (CLS excluded on both sides):
//
//   a[n,l]   = softmax_l cos(r_n, t_l)
//   a'[n,l]  = a[n,l] if a[n,l] > 1/L else 0          (refinement)
//   alpha_n  = sum_l a'[n,l] t_l / |t_l|
//   S_v2l    = mean_n cos(r_n, alpha_n)
//
// Rows enter the weighted sum at unit length, so every similarity is
// invariant to rescaling any single feature vector.
// and symmetrically over regions for each word (S_l2v). The global term is the
// cosine of the two CLS outputs. Each of the four similarity matrices feeds an
// InfoNCE loss with temperature sigma.
//
// Matrix conventions: S_global and S_local_v2l are indexed [video][caption],
// S_local_l2v is indexed [caption][video].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwa/autograd.hpp"
#include "rwa/encoders.hpp"
#include "rwa/tensor.hpp"

namespace rwa {

struct AlignmentOptions {
    bool use_refinement = true;
    bool use_local_losses = true;
};

// ---------------------------------------------------------------------------
// Scalar building blocks

/// Pairwise cosine; entries touching a masked row or column are 0.
template <class T>
[[nodiscard]] Tensor<T> cosine_matrix(const Tensor<T>& x, const Tensor<T>& y, const std::vector<bool>& x_mask = {}, const std::vector<bool>& y_mask = {}) {
    if (x.cols != y.cols) throw std::invalid_argument("cosine_matrix: dim mismatch " + shape_string(x) + " vs " + shape_string(y));
    Tensor<T> out(x.rows, y.rows);
    for (std::size_t p = 0; p < x.rows; ++p) {
        if (!x_mask.empty() && !x_mask[p]) continue;
        for (std::size_t q = 0; q < y.rows; ++q) {
            if (!y_mask.empty() && !y_mask[q]) continue;
            out(p, q) = cosine(x.row(p), y.row(q));
        }
    }
    return out;
}

/// Softmax of raw cosines over unmasked entries; masked entries are 0.
template <class T>
[[nodiscard]] std::vector<T> attention_weights(std::span<const T> sims, const std::vector<bool>& mask = {}) {
    auto live = [&](std::size_t i) { return mask.empty() || mask[i]; };
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < sims.size(); ++i)
        if (live(i)) mx = std::max(mx, sims[i]);
    if (!std::isfinite(mx)) throw std::invalid_argument("attention_weights: no unmasked entries");
    std::vector<T> out(sims.size(), T(0));
    T z = 0;
    for (std::size_t i = 0; i < sims.size(); ++i)
        if (live(i)) z += (out[i] = std::exp(sims[i] - mx));
    for (auto& v : out) v /= z;
    return out;
}

/// Keeps weights strictly above the row mean 1/L (L = unmasked count).
/// A single-entry row passes through unchanged.
template <class T>
[[nodiscard]] std::vector<T> refine_weights(std::span<const T> a, const std::vector<bool>& mask = {}) {
    std::size_t live = 0;
    for (std::size_t i = 0; i < a.size(); ++i) live += (mask.empty() || mask[i]) ? 1 : 0;
    std::vector<T> out(a.begin(), a.end());
    if (live <= 1) return out;
    const T threshold = T(1) / static_cast<T>(live);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!(mask.empty() || mask[i]) || !(out[i] > threshold)) out[i] = T(0);
    return out;
}

/// sum_l w_l · rows_l, without renormalizing w.
template <class T>
[[nodiscard]] std::vector<T> attended_feature(std::span<const T> weights, const Tensor<T>& rows) {
    if (weights.size() != rows.rows) throw std::invalid_argument("attended_feature: weight count does not match rows");
    std::vector<T> out(rows.cols, T(0));
    for (std::size_t l = 0; l < rows.rows; ++l)
        for (std::size_t c = 0; c < rows.cols; ++c) out[c] += weights[l] * rows(l, c);
    return out;
}

/// Attention of every query row over every key row, before and after refinement.
template <class T>
struct PairAttention {
    Tensor<T> raw;      // a
    Tensor<T> refined;  // a'
};

template <class T>
[[nodiscard]] PairAttention<T> pair_attention(const Tensor<T>& queries, const Tensor<T>& keys, bool use_refinement = true) {
    const Tensor<T> sims = cosine_matrix(queries, keys);
    PairAttention<T> out{Tensor<T>(queries.rows, keys.rows), Tensor<T>(queries.rows, keys.rows)};
    for (std::size_t n = 0; n < queries.rows; ++n) {
        const auto a = attention_weights<T>(sims.row(n));
        const auto ar = use_refinement ? refine_weights<T>(a) : a;
        std::copy(a.begin(), a.end(), out.raw.row(n).begin());
        std::copy(ar.begin(), ar.end(), out.refined.row(n).begin());
    }
    return out;
}

/// mean over query rows of cos(q_n, attended key feature). Serves both
/// directions: (regions, words) gives S_v2l; (words, regions) gives S_l2v.
template <class T>
[[nodiscard]] T local_similarity(const Tensor<T>& queries, const Tensor<T>& keys, bool use_refinement = true) {
    if (queries.rows == 0 || keys.rows == 0) throw std::invalid_argument("local_similarity: need at least one region and one word");
    const auto att = pair_attention(queries, keys, use_refinement);
    const Tensor<T> unit_keys = unit_rows(keys);
    T acc = 0;
    for (std::size_t n = 0; n < queries.rows; ++n) {
        const auto feat = attended_feature<T>(att.refined.row(n), unit_keys);
        acc += cosine<T>(queries.row(n), feat);
    }
    return acc / static_cast<T>(queries.rows);
}

/// S_ij from content regions [N×d] and content words [L×d].
template <class T>
[[nodiscard]] T local_similarity_v2l(const Tensor<T>& regions, const Tensor<T>& words, bool use_refinement = true) {
    return local_similarity(regions, words, use_refinement);
}

/// S_ji from content words [L×d] and content regions [N×d].
template <class T>
[[nodiscard]] T local_similarity_l2v(const Tensor<T>& words, const Tensor<T>& regions, bool use_refinement = true) {
    return local_similarity(words, regions, use_refinement);
}

enum class NceDirection { row, column };

/// −(1/B) Σ_i log softmax_j(S[i,j]/σ) at j = i; `column` applies it to Sᵀ.
template <class T>
[[nodiscard]] T info_nce(const Tensor<T>& s, T sigma, NceDirection dir = NceDirection::row) {
    if (s.rows != s.cols || s.rows < 2) throw std::invalid_argument("info_nce: need a square matrix with B >= 2");
    if (!(sigma > T(0))) throw std::invalid_argument("info_nce: sigma must be positive");
    if (!all_finite(s)) throw std::domain_error("info_nce: non-finite similarity");
    const std::size_t b = s.rows;
    auto at = [&](std::size_t i, std::size_t j) { return dir == NceDirection::row ? s(i, j) : s(j, i); };
    T loss = 0;
    for (std::size_t i = 0; i < b; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < b; ++j) mx = std::max(mx, at(i, j) / sigma);
        T z = 0;
        for (std::size_t j = 0; j < b; ++j) z += std::exp(at(i, j) / sigma - mx);
        loss -= at(i, i) / sigma - mx - std::log(z);
    }
    return loss / static_cast<T>(b);
}

template <class T>
struct SimilarityBundle {
    Tensor<T> global;     // [videos × captions]
    Tensor<T> local_v2l;  // [videos × captions]
    Tensor<T> local_l2v;  // [captions × videos]
};

template <class T>
struct LossTerms {
    T global_v2l = 0;
    T global_l2v = 0;
    T local_v2l = 0;
    T local_l2v = 0;
    T total = 0;
};

/// Sum of the four InfoNCE terms; local terms are reported as 0 when disabled.
template <class T>
[[nodiscard]] LossTerms<T> total_loss(const SimilarityBundle<T>& b, T sigma, const AlignmentOptions& opt = {}) {
    LossTerms<T> out;
    out.global_v2l = info_nce(b.global, sigma, NceDirection::row);
    out.global_l2v = info_nce(b.global, sigma, NceDirection::column);
    if (opt.use_local_losses) {
        out.local_v2l = info_nce(b.local_v2l, sigma, NceDirection::row);
        out.local_l2v = info_nce(b.local_l2v, sigma, NceDirection::row);
    }
    out.total = out.global_v2l + out.global_l2v + out.local_v2l + out.local_l2v;
    return out;
}

// ---------------------------------------------------------------------------
// Differentiable batched path

/// Encoder output on a tape together with its count of real content rows
/// (row 0 is CLS; rows past 1+count are padding).
struct EncodedRows {
    Var rows;
    std::size_t count = 0;
};

struct BundleVars {
    Var global;
    Var local_v2l;
    Var local_l2v;
    bool has_local = false;
};

namespace detail {

/// Zero-one mask of weights strictly above 1/cols, per row; all ones when
/// refinement is off or a row has a single entry.
template <class T>
Tensor<T> refinement_mask(const Tensor<T>& a, bool use_refinement) {
    Tensor<T> m(a.rows, a.cols, T(1));
    if (!use_refinement || a.cols <= 1) return m;
    const T threshold = T(1) / static_cast<T>(a.cols);
    for (std::size_t i = 0; i < a.size(); ++i) m.data[i] = a.data[i] > threshold ? T(1) : T(0);
    return m;
}

/// mean_q cos(q, sum_k a'[q,k] k) for one (query set, key set) pair of unit rows.
template <class T>
Var attended_similarity(Tape<T>& tape, Var cos_qk, Var q_normed, Var k_normed, bool use_refinement) {
    Var a = tape.softmax_rows(cos_qk);
    // The threshold mask is a constant of the graph: gradients flow through
    // the retained weights only.
    Var refined = tape.mul_const(a, refinement_mask(tape.value(a), use_refinement));
    Var attended = tape.matmul(refined, k_normed);
    return tape.mean(tape.row_dot(q_normed, tape.normalize_rows(attended)));
}

}  // namespace detail

/// Builds S_global and (optionally) both local similarity matrices on the tape.
/// Videos and captions may differ in number; losses additionally need them equal.
template <class T>
[[nodiscard]] BundleVars similarity_graph(Tape<T>& tape, const std::vector<EncodedRows>& videos, const std::vector<EncodedRows>& texts,
                                          const AlignmentOptions& opt) {
    if (videos.empty() || texts.empty()) throw std::invalid_argument("similarity_graph: empty batch");
    std::vector<Var> v_cls, t_cls;
    for (const auto& v : videos) v_cls.push_back(tape.slice_rows(v.rows, 0, 1));
    for (const auto& t : texts) t_cls.push_back(tape.slice_rows(t.rows, 0, 1));
    BundleVars out;
    out.global = tape.matmul_nt(tape.normalize_rows(tape.concat_rows(v_cls)), tape.normalize_rows(tape.concat_rows(t_cls)));
    if (!opt.use_local_losses) return out;

    std::vector<Var> r_norm, w_norm;
    std::vector<std::size_t> w_offset;
    std::size_t total_words = 0;
    for (const auto& v : videos) {
        if (v.count == 0) throw std::invalid_argument("similarity_graph: video without regions");
        r_norm.push_back(tape.normalize_rows(tape.slice_rows(v.rows, 1, v.count)));
    }
    for (const auto& t : texts) {
        if (t.count == 0) throw std::invalid_argument("similarity_graph: caption without content words");
        w_norm.push_back(tape.normalize_rows(tape.slice_rows(t.rows, 1, t.count)));
        w_offset.push_back(total_words);
        total_words += t.count;
    }
    Var all_words = tape.concat_rows(w_norm);

    const std::size_t nv = videos.size(), nt = texts.size();
    std::vector<Var> v2l(nv * nt), l2v(nt * nv);
    for (std::size_t i = 0; i < nv; ++i) {
        Var cos_all = tape.matmul_nt(r_norm[i], all_words);
        for (std::size_t j = 0; j < nt; ++j) {
            Var cos_ij = tape.slice_cols(cos_all, w_offset[j], texts[j].count);
            v2l[i * nt + j] = detail::attended_similarity(tape, cos_ij, r_norm[i], w_norm[j], opt.use_refinement);
            l2v[j * nv + i] = detail::attended_similarity(tape, tape.transpose(cos_ij), w_norm[j], r_norm[i], opt.use_refinement);
        }
    }
    out.local_v2l = tape.stack_scalars(v2l, nv, nt);
    out.local_l2v = tape.stack_scalars(l2v, nt, nv);
    out.has_local = true;
    return out;
}

struct LossVars {
    Var global_v2l, global_l2v, local_v2l, local_l2v, total;
    bool has_local = false;
};

template <class T>
[[nodiscard]] LossVars loss_graph(Tape<T>& tape, const BundleVars& s, T sigma) {
    LossVars out;
    out.global_v2l = tape.info_nce_rows(s.global, sigma);
    out.global_l2v = tape.info_nce_rows(tape.transpose(s.global), sigma);
    out.total = tape.add(out.global_v2l, out.global_l2v);
    if (s.has_local) {
        out.local_v2l = tape.info_nce_rows(s.local_v2l, sigma);
        out.local_l2v = tape.info_nce_rows(s.local_l2v, sigma);
        out.total = tape.add(out.total, tape.add(out.local_v2l, out.local_l2v));
        out.has_local = true;
    }
    return out;
}

template <class T>
[[nodiscard]] LossTerms<T> loss_values(const Tape<T>& tape, const LossVars& v) {
    LossTerms<T> out;
    out.global_v2l = tape.scalar(v.global_v2l);
    out.global_l2v = tape.scalar(v.global_l2v);
    if (v.has_local) {
        out.local_v2l = tape.scalar(v.local_v2l);
        out.local_l2v = tape.scalar(v.local_l2v);
    }
    out.total = tape.scalar(v.total);
    return out;
}

/// Batched similarities of already-encoded samples (forward only). Local
/// matrices are always computed here; use_local_losses only affects training.
template <class T>
[[nodiscard]] SimilarityBundle<T> compute_bundle(const std::vector<EncodedVideo<T>>& videos, const std::vector<EncodedText<T>>& texts,
                                                 bool use_refinement = true) {
    Tape<T> tape;
    std::vector<EncodedRows> vr, tr;
    auto real_count = [](const std::vector<bool>& mask) {
        std::size_t n = 0;
        for (std::size_t i = 1; i < mask.size(); ++i) n += mask[i] ? 1 : 0;
        return n;
    };
    for (const auto& v : videos) vr.push_back({tape.constant(v.r), real_count(v.mask)});
    for (const auto& t : texts) tr.push_back({tape.constant(t.t), real_count(t.mask)});
    const auto s = similarity_graph(tape, vr, tr, AlignmentOptions{use_refinement, true});
    return {tape.value(s.global), tape.value(s.local_v2l), tape.value(s.local_l2v)};
}

// ---------------------------------------------------------------------------
// Attention export

/// Writes a, a' for both directions plus region boxes for one (video, caption) pair.
template <class T>
void export_attention(const std::filesystem::path& path, const VideoSample& video, const CaptionSample& caption, const EncodedVideo<T>& ev,
                      const EncodedText<T>& et, const std::vector<std::string>& words, bool use_refinement = true) {
    const std::size_t n = video.regions.size();
    const std::size_t l = caption.content_length();
    Tensor<T> r(n, ev.r.cols), t(l, et.t.cols);
    for (std::size_t i = 0; i < n; ++i) std::copy(ev.r.row(i + 1).begin(), ev.r.row(i + 1).end(), r.row(i).begin());
    for (std::size_t i = 0; i < l; ++i) std::copy(et.t.row(i + 1).begin(), et.t.row(i + 1).end(), t.row(i).begin());
    const auto v2l = pair_attention(r, t, use_refinement);
    const auto l2v = pair_attention(t, r, use_refinement);
    auto to_json = [](const Tensor<T>& m) {
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < m.rows; ++i) rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
        return rows;
    };
    nlohmann::ordered_json regions = nlohmann::ordered_json::array();
    for (const auto& reg : video.regions)
        regions.push_back({{"frame_index", reg.frame_index}, {"confidence", reg.confidence}, {"box", std::vector<float>(reg.location.begin(), reg.location.begin() + 4)}});
    nlohmann::ordered_json j{{"video_id", video.video_id},
                             {"caption", caption.text},
                             {"words", words},
                             {"token_ids", std::vector<std::int32_t>(caption.token_ids.begin() + 1, caption.token_ids.end())},
                             {"regions", regions},
                             {"region_to_word", {{"a", to_json(v2l.raw)}, {"a_refined", to_json(v2l.refined)}}},
                             {"word_to_region", {{"a", to_json(l2v.raw)}, {"a_refined", to_json(l2v.refined)}}}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace rwa
