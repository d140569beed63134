#pragma once

// Region and word encoders. Both are pre-norm transformer stacks sharing one
// implementation; they differ only in their input embeddings:
//
//   video row 0 = learned CLS vector, row n = o_n + FC(l_n) + P[slot(frame_n)]
//   text  row l = word_emb[w_l] + pos_emb[l]

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rwa/autograd.hpp"
#include "rwa/datamodel.hpp"
#include "rwa/tensor.hpp"

namespace rwa {

/// Ordered collection of named tensors. Order is insertion order and is the
/// canonical order for serialization and optimizer state.
template <class T>
class ParameterStore {
public:
    void add(std::string name, Tensor<T> value) {
        if (index_.contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
        index_.emplace(name, entries_.size());
        entries_.emplace_back(std::move(name), std::move(value));
    }

    [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
    [[nodiscard]] bool contains(const std::string& name) const { return index_.contains(name); }
    [[nodiscard]] std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
        return it->second;
    }
    Tensor<T>& at(const std::string& name) { return entries_[index_of(name)].second; }
    const Tensor<T>& at(const std::string& name) const { return entries_[index_of(name)].second; }
    Tensor<T>& at(std::size_t i) { return entries_.at(i).second; }
    const Tensor<T>& at(std::size_t i) const { return entries_.at(i).second; }
    [[nodiscard]] const std::string& name(std::size_t i) const { return entries_.at(i).first; }

    [[nodiscard]] std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : entries_) n += t.size();
        return n;
    }

    template <class U>
    [[nodiscard]] ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& [name, t] : entries_) out.add(name, t.template cast<U>());
        return out;
    }

    friend bool operator==(const ParameterStore& a, const ParameterStore& b) { return a.entries_ == b.entries_; }

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

template <class T, class Rng>
void add_transformer_params(ParameterStore<T>& ps, const std::string& prefix, std::size_t layers, std::size_t d, Rng& rng) {
    auto weight = [&](std::size_t r, std::size_t c) {
        Tensor<T> w(r, c);
        fill_truncated_normal(w, rng, 0.02);
        return w;
    };
    for (std::size_t i = 0; i < layers; ++i) {
        const std::string p = prefix + ".layer" + std::to_string(i) + ".";
        ps.add(p + "ln1.gain", Tensor<T>(1, d, T(1)));
        ps.add(p + "ln1.bias", Tensor<T>(1, d));
        for (const char* proj : {"q", "k", "v", "o"}) {
            ps.add(p + "attn.w" + proj, weight(d, d));
            ps.add(p + "attn.b" + proj, Tensor<T>(1, d));
        }
        ps.add(p + "ln2.gain", Tensor<T>(1, d, T(1)));
        ps.add(p + "ln2.bias", Tensor<T>(1, d));
        ps.add(p + "mlp.w1", weight(d, 4 * d));
        ps.add(p + "mlp.b1", Tensor<T>(1, 4 * d));
        ps.add(p + "mlp.w2", weight(4 * d, d));
        ps.add(p + "mlp.b2", Tensor<T>(1, d));
    }
    ps.add(prefix + ".final_ln.gain", Tensor<T>(1, d, T(1)));
    ps.add(prefix + ".final_ln.bias", Tensor<T>(1, d));
}

}  // namespace detail

/// Fresh parameters: truncated-normal(0.02) weights and embeddings, zero
/// biases, unit layer-norm gains. The temporal table and the location
/// projection start at zero.
template <class T>
[[nodiscard]] ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    if (auto errs = validate_config(cfg); !errs.empty()) throw std::invalid_argument("invalid model config: " + errs.front());
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg.d;
    ParameterStore<T> ps;
    Tensor<T> cls(1, d);
    fill_truncated_normal(cls, rng, 0.02);
    ps.add("video.cls", std::move(cls));
    ps.add("video.loc.weight", Tensor<T>(d, 7));
    ps.add("video.loc.bias", Tensor<T>(1, d));
    ps.add("video.temporal", Tensor<T>(cfg.max_frames, d));
    detail::add_transformer_params(ps, "video", cfg.video_layers, d, rng);
    Tensor<T> words(cfg.vocab_size, d);
    fill_truncated_normal(words, rng, 0.02);
    ps.add("text.word_emb", std::move(words));
    Tensor<T> pos(cfg.max_words, d);
    fill_truncated_normal(pos, rng, 0.02);
    ps.add("text.pos_emb", std::move(pos));
    detail::add_transformer_params(ps, "text", cfg.text_layers, d, rng);
    return ps;
}

/// Parameters placed on a tape, either as trainable leaves or as constants.
template <class T>
class BoundParameters {
public:
    BoundParameters(Tape<T>& tape, const ParameterStore<T>& store, bool trainable) : tape_(tape), store_(store) {
        vars_.reserve(store.size());
        for (std::size_t i = 0; i < store.size(); ++i) {
            if (!all_finite(store.at(i))) throw std::domain_error("parameter '" + store.name(i) + "' contains non-finite values");
            vars_.push_back(trainable ? tape.parameter(store.at(i)) : tape.constant(store.at(i)));
        }
    }
    Var operator[](const std::string& name) const { return vars_[store_.index_of(name)]; }

    /// Enables inverted dropout with rate `p` drawn from `rng`.
    void enable_dropout(double p, std::mt19937_64& rng) {
        drop_p_ = p;
        drop_rng_ = &rng;
    }
    /// Identity unless dropout is enabled.
    Var dropout(Var x) const {
        if (drop_p_ <= 0.0 || !drop_rng_) return x;
        const auto& v = tape_.value(x);
        Tensor<T> mask(v.rows, v.cols);
        std::bernoulli_distribution keep(1.0 - drop_p_);
        const T scale = static_cast<T>(1.0 / (1.0 - drop_p_));
        for (auto& m : mask.data) m = keep(*drop_rng_) ? scale : T(0);
        return tape_.mul_const(x, mask);
    }
    [[nodiscard]] const std::vector<Var>& vars() const noexcept { return vars_; }
    [[nodiscard]] Tape<T>& tape() const noexcept { return tape_; }
    [[nodiscard]] const ParameterStore<T>& store() const noexcept { return store_; }

private:
    Tape<T>& tape_;
    const ParameterStore<T>& store_;
    std::vector<Var> vars_;
    double drop_p_ = 0.0;
    std::mt19937_64* drop_rng_ = nullptr;
};

/// Affine location embedding W·l + b with W of shape [d×7].
template <class T>
[[nodiscard]] std::vector<T> embed_location(const Tensor<T>& weight, const Tensor<T>& bias, std::span<const T> location) {
    if (location.size() != 7 || weight.cols != 7) throw std::invalid_argument("embed_location: expected a 7-d location");
    std::vector<T> out(weight.rows);
    for (std::size_t i = 0; i < weight.rows; ++i) out[i] = dot(weight.row(i), location) + bias.data[i];
    return out;
}

/// Position of `frame_index` within the sampled frames, i.e. its temporal slot.
[[nodiscard]] inline std::size_t temporal_slot(const std::vector<std::uint32_t>& sampled, std::uint32_t frame_index) {
    for (std::size_t i = 0; i < sampled.size(); ++i)
        if (sampled[i] == frame_index) return i;
    throw std::invalid_argument("frame " + std::to_string(frame_index) + " is not among the sampled frames");
}

/// Encoder input rows [pad_to+1 × d]: CLS, then one row per region, then
/// zero rows up to `pad_to` regions.
template <class T>
[[nodiscard]] Var compose_region_input(const BoundParameters<T>& bp, const VideoSample& video, std::size_t pad_to = 0) {
    Tape<T>& tape = bp.tape();
    const Tensor<T>& temporal = bp.store().at("video.temporal");
    const std::size_t d = temporal.cols;
    const std::size_t n = video.regions.size();
    if (n == 0) throw std::invalid_argument("compose_region_input: no regions");
    pad_to = std::max(pad_to, n);

    Tensor<T> feats(n, d), locs(n, 7);
    std::vector<std::size_t> slots(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = video.regions[i];
        if (r.feature.size() != d)
            throw std::invalid_argument("region feature length " + std::to_string(r.feature.size()) + " does not match model width " + std::to_string(d));
        for (std::size_t c = 0; c < d; ++c) feats(i, c) = static_cast<T>(r.feature[c]);
        for (std::size_t c = 0; c < 7; ++c) locs(i, c) = static_cast<T>(r.location[c]);
        slots[i] = temporal_slot(video.sampled_frame_indices, r.frame_index);
        if (slots[i] >= temporal.rows)
            throw std::out_of_range("temporal table overflow: slot " + std::to_string(slots[i]) + " with only " + std::to_string(temporal.rows) + " rows");
    }
    Var loc = tape.add_row(tape.matmul_nt(tape.constant(std::move(locs)), bp["video.loc.weight"]), bp["video.loc.bias"]);
    Var rows = tape.add(tape.add(tape.constant(std::move(feats)), loc), tape.gather_rows(bp["video.temporal"], std::move(slots)));
    std::vector<Var> parts{bp["video.cls"], rows};
    if (pad_to > n) parts.push_back(tape.constant(Tensor<T>(pad_to - n, d)));
    return tape.concat_rows(parts);
}

/// Pre-norm transformer: x += MHA(LN(x)); x += MLP(LN(x)); final LN.
/// Keys where `mask` is false are excluded from every attention row.
/// With zero layers the stack is the identity (no final LN either).
template <class T>
[[nodiscard]] Var transformer_stack(const BoundParameters<T>& bp, const std::string& prefix, std::size_t layers, std::size_t heads, Var x,
                                    const std::vector<bool>& mask) {
    Tape<T>& tape = bp.tape();
    const std::size_t d = tape.value(x).cols;
    if (mask.size() != tape.value(x).rows) throw std::invalid_argument("encoder: mask length does not match sequence length");
    if (mask.empty() || !mask[0]) throw std::invalid_argument("encoder: CLS position must be unmasked");
    if (heads == 0 || d % heads != 0) throw std::invalid_argument("encoder: heads must divide width");
    const std::size_t dh = d / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    if (layers == 0) return x;

    for (std::size_t i = 0; i < layers; ++i) {
        const std::string p = prefix + ".layer" + std::to_string(i) + ".";
        Var h = tape.layer_norm(x, bp[p + "ln1.gain"], bp[p + "ln1.bias"]);
        Var q = tape.add_row(tape.matmul(h, bp[p + "attn.wq"]), bp[p + "attn.bq"]);
        Var k = tape.add_row(tape.matmul(h, bp[p + "attn.wk"]), bp[p + "attn.bk"]);
        Var v = tape.add_row(tape.matmul(h, bp[p + "attn.wv"]), bp[p + "attn.bv"]);
        std::vector<Var> head_out;
        head_out.reserve(heads);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            Var qh = tape.slice_cols(q, hd * dh, dh);
            Var kh = tape.slice_cols(k, hd * dh, dh);
            Var vh = tape.slice_cols(v, hd * dh, dh);
            Var att = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), scale), mask);
            head_out.push_back(tape.matmul(att, vh));
        }
        Var merged = heads == 1 ? head_out.front() : tape.concat_cols(head_out);
        x = tape.add(x, bp.dropout(tape.add_row(tape.matmul(merged, bp[p + "attn.wo"]), bp[p + "attn.bo"])));
        Var h2 = tape.layer_norm(x, bp[p + "ln2.gain"], bp[p + "ln2.bias"]);
        Var mid = tape.gelu(tape.add_row(tape.matmul(h2, bp[p + "mlp.w1"]), bp[p + "mlp.b1"]));
        x = tape.add(x, bp.dropout(tape.add_row(tape.matmul(mid, bp[p + "mlp.w2"]), bp[p + "mlp.b2"])));
    }
    return tape.layer_norm(x, bp[prefix + ".final_ln.gain"], bp[prefix + ".final_ln.bias"]);
}

template <class T>
[[nodiscard]] Var encode_video(const BoundParameters<T>& bp, const ModelConfig& cfg, Var composed, const std::vector<bool>& mask) {
    return transformer_stack(bp, "video", cfg.video_layers, cfg.heads, composed, mask);
}

/// Token ids (CLS first, PAD allowed only where the mask is false) to [T×d].
template <class T>
[[nodiscard]] Var encode_text(const BoundParameters<T>& bp, const ModelConfig& cfg, const std::vector<std::int32_t>& token_ids, const std::vector<bool>& mask) {
    Tape<T>& tape = bp.tape();
    const auto& table = bp.store().at("text.word_emb");
    const auto& pos = bp.store().at("text.pos_emb");
    if (token_ids.size() > pos.rows)
        throw std::out_of_range("caption of " + std::to_string(token_ids.size()) + " tokens exceeds the position table (" + std::to_string(pos.rows) + ")");
    std::vector<std::size_t> ids(token_ids.size()), positions(token_ids.size());
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
        if (token_ids[i] < 0 || static_cast<std::size_t>(token_ids[i]) >= table.rows)
            throw std::out_of_range("token id " + std::to_string(token_ids[i]) + " outside vocabulary of " + std::to_string(table.rows));
        ids[i] = static_cast<std::size_t>(token_ids[i]);
        positions[i] = i;
    }
    Var x = tape.add(tape.gather_rows(bp["text.word_emb"], std::move(ids)), tape.gather_rows(bp["text.pos_emb"], std::move(positions)));
    return transformer_stack(bp, "text", cfg.text_layers, cfg.heads, x, mask);
}

/// r: [N+1 × d] with r[0] the video CLS output.
template <class T>
struct EncodedVideo {
    Tensor<T> r;
    std::vector<bool> mask;
};

/// t: [L+1 × d] with t[0] the caption CLS output.
template <class T>
struct EncodedText {
    Tensor<T> t;
    std::vector<bool> mask;
};

/// Inference-only encoding of one unpadded video.
template <class T>
[[nodiscard]] EncodedVideo<T> encode_video_sample(const ParameterStore<T>& store, const ModelConfig& cfg, const VideoSample& video) {
    Tape<T> tape;
    BoundParameters<T> bp(tape, store, false);
    Var composed = compose_region_input(bp, video);
    std::vector<bool> mask(video.regions.size() + 1, true);
    Var out = encode_video(bp, cfg, composed, mask);
    return {tape.value(out), std::move(mask)};
}

template <class T>
[[nodiscard]] EncodedText<T> encode_text_sample(const ParameterStore<T>& store, const ModelConfig& cfg, const CaptionSample& caption) {
    Tape<T> tape;
    BoundParameters<T> bp(tape, store, false);
    std::vector<bool> mask(caption.token_ids.size(), true);
    Var out = encode_text(bp, cfg, caption.token_ids, mask);
    return {tape.value(out), std::move(mask)};
}

}  // namespace rwa
