#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "rwa/alignment.hpp"
#include "rwa/dataset_io.hpp"
#include "rwa/encoders.hpp"

namespace rwa {

// ---------------------------------------------------------------------------
// Learning-rate schedule

/// Step decay: base_lr · decay_factor^(number of decay epochs ≤ epoch),
/// rounded to 15 significant digits so 1e-5 · 0.1 is exactly 1e-6.
struct Schedule {
    double base_lr = 1e-5;
    std::vector<std::size_t> decay_epochs;
    double decay_factor = 0.1;
    std::size_t total_epochs = 1;

    static Schedule pretrain() { return {1e-5, {30, 40}, 0.1, 50}; }
    static Schedule finetune() { return {1e-5, {2, 4, 8}, 0.1, 10}; }
    static Schedule constant(double lr, std::size_t epochs) { return {lr, {}, 0.1, epochs}; }
};

inline void validate_schedule(const Schedule& s) {
    if (!(s.base_lr > 0.0)) throw std::invalid_argument("schedule: base_lr must be positive");
    if (s.total_epochs == 0) throw std::invalid_argument("schedule: total_epochs must be positive");
    for (std::size_t i = 0; i < s.decay_epochs.size(); ++i) {
        if (s.decay_epochs[i] >= s.total_epochs) throw std::invalid_argument("schedule: decay epoch beyond total_epochs");
        if (i > 0 && s.decay_epochs[i] <= s.decay_epochs[i - 1]) throw std::invalid_argument("schedule: decay epochs must be strictly increasing");
    }
}

[[nodiscard]] inline double lr_at_epoch(const Schedule& s, std::size_t epoch) {
    if (epoch >= s.total_epochs)
        throw std::out_of_range("lr_at_epoch: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(s.total_epochs) + ")");
    double lr = s.base_lr;
    for (std::size_t e : s.decay_epochs)
        if (e <= epoch) lr *= s.decay_factor;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.15g", lr);
    return std::strtod(buf, nullptr);
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::uint64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState zeros_like(const ParameterStore<T>& params) {
        AdamState s;
        for (std::size_t i = 0; i < params.size(); ++i) {
            s.m.emplace_back(params.at(i).rows, params.at(i).cols);
            s.v.emplace_back(params.at(i).rows, params.at(i).cols);
        }
        return s;
    }

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected Adam update over every parameter.
template <class T>
void adam_step(ParameterStore<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("adam_step: lr must be positive");
    if (grads.size() != params.size() || state.m.size() != params.size()) throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!grads[i].same_shape(params.at(i)) || !state.m[i].same_shape(params.at(i)))
            throw std::invalid_argument("adam_step: shape mismatch for '" + params.name(i) + "'");
        if (!all_finite(grads[i])) throw std::domain_error("non-finite gradient for parameter '" + params.name(i) + "'");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, double(state.step));
    const T b1 = T(state.beta1), b2 = T(state.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.at(i).data;
        auto& m = state.m[i].data;
        auto& v = state.v[i].data;
        const auto& g = grads[i].data;
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = b1 * m[k] + (T(1) - b1) * g[k];
            v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
            const double mhat = double(m[k]) / c1;
            const double vhat = double(v[k]) / c2;
            p[k] = static_cast<T>(double(p[k]) - lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Batch forward/backward

template <class T>
struct StepResult {
    LossTerms<T> losses;
    std::vector<Tensor<T>> grads;  // empty unless requested
};

/// Encodes a padded batch, evaluates all loss terms and optionally their
/// gradients with respect to every parameter. Dropout is active only when
/// gradients are requested.
template <class T>
[[nodiscard]] StepResult<T> batch_loss(const ParameterStore<T>& params, const ModelConfig& cfg, const Batch& batch, bool with_grads,
                                       std::uint64_t dropout_seed = 0) {
    Tape<T> tape;
    BoundParameters<T> bp(tape, params, with_grads);
    std::mt19937_64 drop_rng(dropout_seed);
    if (with_grads && cfg.dropout > 0.0) bp.enable_dropout(cfg.dropout, drop_rng);
    std::vector<EncodedRows> videos, texts;
    const std::size_t n_max = batch.max_regions();
    for (std::size_t b = 0; b < batch.size(); ++b) {
        Var composed = compose_region_input(bp, batch.videos[b], n_max);
        std::vector<bool> mask{true};
        mask.insert(mask.end(), batch.region_pad_mask[b].begin(), batch.region_pad_mask[b].end());
        videos.push_back({encode_video(bp, cfg, composed, mask), batch.videos[b].regions.size()});
        texts.push_back({encode_text(bp, cfg, batch.padded_token_ids[b], batch.word_pad_mask[b]), batch.captions[b].content_length()});
    }
    const auto sims = similarity_graph(tape, videos, texts, AlignmentOptions{cfg.use_refinement, cfg.use_local_losses});
    const auto loss = loss_graph(tape, sims, static_cast<T>(cfg.sigma));
    StepResult<T> out{loss_values(tape, loss), {}};
    if (!std::isfinite(out.losses.total)) throw std::domain_error("non-finite loss");
    if (with_grads) {
        tape.backward(loss.total);
        out.grads.reserve(bp.vars().size());
        for (Var v : bp.vars()) out.grads.push_back(tape.grad(v));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct FitOptions {
    ModelConfig model;
    SamplingOptions sampling;
    Schedule schedule = Schedule::pretrain();
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
};

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0;
    LossTerms<double> losses;

    friend bool operator==(const EpochLog& a, const EpochLog& b) {
        return a.epoch == b.epoch && a.lr == b.lr && a.losses.global_v2l == b.losses.global_v2l && a.losses.global_l2v == b.losses.global_l2v &&
               a.losses.local_v2l == b.losses.local_v2l && a.losses.local_l2v == b.losses.local_l2v && a.losses.total == b.losses.total;
    }
};

struct FitResult {
    ParameterStore<float> params;
    AdamState<float> optim;
    std::vector<EpochLog> log;
};

/// Mixes integers into one 64-bit seed (splitmix64 finalizer).
[[nodiscard]] inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    };
    return mix(a ^ mix(b ^ mix(c)));
}

/// Batch composition for one epoch; a pure function of (dataset size, batch size, seed, epoch).
/// A trailing remainder of one sample is dropped.
[[nodiscard]] inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(seed, epoch, 0x5eed));
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(order[i - 1], order[pick(rng)]);
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        if (end - start < 2) break;
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

[[nodiscard]] inline Batch assemble_batch(const Dataset& ds, const std::vector<std::size_t>& indices, const SamplingOptions& sampling, std::uint64_t seed,
                                          std::size_t epoch) {
    std::vector<std::pair<VideoSample, CaptionSample>> pairs;
    for (std::size_t idx : indices) pairs.emplace_back(prepare_video(ds, idx, sampling, mix_seed(seed, epoch, idx + 1)), prepare_caption(ds, idx));
    return make_batch(std::move(pairs));
}

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains from `init` (fresh parameters when empty) for schedule.total_epochs epochs.
[[nodiscard]] inline FitResult fit(const Dataset& ds, const FitOptions& opt, std::optional<ParameterStore<float>> init = std::nullopt,
                                   const EpochCallback& on_epoch = {}) {
    validate_schedule(opt.schedule);
    if (auto errs = validate_config(opt.model); !errs.empty()) throw std::invalid_argument("invalid model config: " + errs.front());
    if (opt.batch_size < 2) throw std::invalid_argument("fit: batch_size must be >= 2");
    if (ds.size() < opt.batch_size) throw std::invalid_argument("fit: dataset smaller than one batch");
    if (ds.manifest.dim != opt.model.d)
        throw std::invalid_argument("fit: dataset features have dim " + std::to_string(ds.manifest.dim) + " but the model width is " + std::to_string(opt.model.d));

    if (opt.model.vocab_size < ds.manifest.vocab.table_size())
        throw std::invalid_argument("fit: vocab_size " + std::to_string(opt.model.vocab_size) + " does not cover the dataset vocabulary (" +
                                    std::to_string(ds.manifest.vocab.table_size()) + ")");

    FitResult res{init ? std::move(*init) : init_parameters<float>(opt.model, opt.seed), {}, {}};
    res.optim = AdamState<float>::zeros_like(res.params);
    for (std::size_t epoch = 0; epoch < opt.schedule.total_epochs; ++epoch) {
        const double lr = lr_at_epoch(opt.schedule, epoch);
        EpochLog log{epoch, lr, {}};
        const auto batches = epoch_batches(ds.size(), opt.batch_size, opt.seed, epoch);
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const Batch batch = assemble_batch(ds, batches[bi], opt.sampling, opt.seed, epoch);
            const auto step = batch_loss(res.params, opt.model, batch, true, mix_seed(opt.seed, epoch, 0xd0 + bi));
            adam_step(res.params, step.grads, res.optim, lr);
            log.losses.global_v2l += step.losses.global_v2l;
            log.losses.global_l2v += step.losses.global_l2v;
            log.losses.local_v2l += step.losses.local_v2l;
            log.losses.local_l2v += step.losses.local_l2v;
        }
        const double nb = static_cast<double>(batches.size());
        log.losses.global_v2l /= nb;
        log.losses.global_l2v /= nb;
        log.losses.local_v2l /= nb;
        log.losses.local_l2v /= nb;
        log.losses.total = log.losses.global_v2l + log.losses.global_l2v + log.losses.local_v2l + log.losses.local_l2v;
        res.log.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// A checkpoint is a directory:
//   config.json  model configuration
//   params.json  ordered [{name, shape, dtype:"f32"}]
//   params.bin   float32-LE tensors concatenated in params.json order
//   optim.json / optim.bin   optional Adam state in the same scheme

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[nodiscard]] inline nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
    return {{"d", c.d},
            {"video_layers", c.video_layers},
            {"text_layers", c.text_layers},
            {"heads", c.heads},
            {"vocab_size", c.vocab_size},
            {"max_frames", c.max_frames},
            {"max_words", c.max_words},
            {"object_num", c.object_num},
            {"sigma", c.sigma},
            {"dropout", c.dropout},
            {"use_refinement", c.use_refinement},
            {"use_local_losses", c.use_local_losses}};
}

/// Reads known keys present in `j` over `base`.
[[nodiscard]] inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
    auto take = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    take("d", base.d);
    take("video_layers", base.video_layers);
    take("text_layers", base.text_layers);
    take("heads", base.heads);
    take("vocab_size", base.vocab_size);
    take("max_frames", base.max_frames);
    take("max_words", base.max_words);
    take("object_num", base.object_num);
    take("sigma", base.sigma);
    take("dropout", base.dropout);
    take("use_refinement", base.use_refinement);
    take("use_local_losses", base.use_local_losses);
    return base;
}

namespace detail {

inline nlohmann::ordered_json tensor_manifest(const std::vector<std::string>& names, const std::vector<const Tensor<float>*>& tensors) {
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < names.size(); ++i)
        list.push_back({{"name", names[i]}, {"shape", {tensors[i]->rows, tensors[i]->cols}}, {"dtype", "f32"}});
    return list;
}

inline std::string tensor_blob(const std::vector<const Tensor<float>*>& tensors) {
    std::string buf;
    for (const auto* t : tensors)
        for (float f : t->data) put_f32(buf, f);
    return buf;
}

inline std::string write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + p.string());
    out << s;
    return s;
}

inline std::vector<Tensor<float>> read_tensors(const std::filesystem::path& json_path, const std::filesystem::path& bin_path, std::vector<std::string>& names) {
    nlohmann::json manifest;
    try {
        std::ifstream in(json_path);
        if (!in) throw CheckpointError("cannot open " + json_path.string());
        manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(json_path.string() + ": " + e.what());
    }
    const nlohmann::json& list = manifest.is_array() ? manifest : manifest.at("tensors");
    std::string bytes;
    try {
        bytes = read_file(bin_path);
    } catch (const DatasetError& e) {
        throw CheckpointError(e.what());
    }
    ByteReader rd(bytes, bin_path.string());
    std::vector<Tensor<float>> out;
    try {
        for (const auto& entry : list) {
            if (entry.at("dtype").get<std::string>() != "f32") throw CheckpointError("unsupported dtype in " + json_path.string());
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            if (shape.size() != 2) throw CheckpointError("expected 2-d shape in " + json_path.string());
            Tensor<float> t(shape[0], shape[1]);
            for (auto& f : t.data) f = rd.f32();
            names.push_back(entry.at("name").get<std::string>());
            out.push_back(std::move(t));
        }
    } catch (const DatasetError& e) {
        throw CheckpointError(e.what());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(json_path.string() + ": " + e.what());
    }
    if (rd.remaining() != 0) throw CheckpointError("trailing bytes in " + bin_path.string());
    return out;
}

}  // namespace detail

struct Checkpoint {
    ModelConfig config;
    ParameterStore<float> params;
    std::optional<AdamState<float>> optim;
};

inline void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg, const ParameterStore<float>& params,
                            const AdamState<float>* optim = nullptr) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> names;
    std::vector<const Tensor<float>*> tensors;
    for (std::size_t i = 0; i < params.size(); ++i) {
        names.push_back(params.name(i));
        tensors.push_back(&params.at(i));
    }
    detail::write_text(dir / "config.json", model_config_to_json(cfg).dump(2) + "\n");
    detail::write_text(dir / "params.json", detail::tensor_manifest(names, tensors).dump(2) + "\n");
    detail::write_text(dir / "params.bin", detail::tensor_blob(tensors));
    if (optim) {
        std::vector<std::string> onames;
        std::vector<const Tensor<float>*> otensors;
        for (std::size_t i = 0; i < params.size(); ++i) {
            onames.push_back("m/" + params.name(i));
            otensors.push_back(&optim->m[i]);
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            onames.push_back("v/" + params.name(i));
            otensors.push_back(&optim->v[i]);
        }
        nlohmann::ordered_json j{{"step", optim->step},
                                 {"beta1", optim->beta1},
                                 {"beta2", optim->beta2},
                                 {"eps", optim->eps},
                                 {"tensors", detail::tensor_manifest(onames, otensors)}};
        detail::write_text(dir / "optim.json", j.dump(2) + "\n");
        detail::write_text(dir / "optim.bin", detail::tensor_blob(otensors));
    }
}

/// Loads a checkpoint directory. When `expected` is given, every tensor must
/// match the names and shapes that configuration produces.
[[nodiscard]] inline Checkpoint load_checkpoint(const std::filesystem::path& dir, const std::optional<ModelConfig>& expected = std::nullopt) {
    Checkpoint ck;
    try {
        std::ifstream in(dir / "config.json");
        if (!in) throw CheckpointError("cannot open " + (dir / "config.json").string());
        ck.config = model_config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("config.json: ") + e.what());
    }
    std::vector<std::string> names;
    auto tensors = detail::read_tensors(dir / "params.json", dir / "params.bin", names);
    for (std::size_t i = 0; i < names.size(); ++i) ck.params.add(names[i], std::move(tensors[i]));

    const ParameterStore<float> reference = init_parameters<float>(expected ? *expected : ck.config, 0);
    if (reference.size() != ck.params.size())
        throw CheckpointError("shape mismatch: checkpoint has " + std::to_string(ck.params.size()) + " tensors, configuration expects " + std::to_string(reference.size()));
    for (std::size_t i = 0; i < reference.size(); ++i) {
        if (reference.name(i) != ck.params.name(i)) throw CheckpointError("shape mismatch: expected tensor '" + reference.name(i) + "', found '" + ck.params.name(i) + "'");
        if (!reference.at(i).same_shape(ck.params.at(i)))
            throw CheckpointError("shape mismatch for '" + reference.name(i) + "': checkpoint " + shape_string(ck.params.at(i)) + ", expected " + shape_string(reference.at(i)));
    }
    if (expected) ck.config = *expected;

    if (std::filesystem::exists(dir / "optim.json")) {
        std::vector<std::string> onames;
        auto ot = detail::read_tensors(dir / "optim.json", dir / "optim.bin", onames);
        if (ot.size() != 2 * ck.params.size()) throw CheckpointError("optimizer state does not match parameters");
        AdamState<float> st;
        std::ifstream in(dir / "optim.json");
        const auto j = nlohmann::json::parse(in);
        st.step = j.at("step").get<std::uint64_t>();
        st.beta1 = j.at("beta1").get<double>();
        st.beta2 = j.at("beta2").get<double>();
        st.eps = j.at("eps").get<double>();
        const std::size_t n = ck.params.size();
        for (std::size_t i = 0; i < n; ++i) {
            if (!ot[i].same_shape(ck.params.at(i)) || !ot[n + i].same_shape(ck.params.at(i)))
                throw CheckpointError("shape mismatch in optimizer state for '" + ck.params.name(i) + "'");
            st.m.push_back(std::move(ot[i]));
        }
        for (std::size_t i = 0; i < n; ++i) st.v.push_back(std::move(ot[n + i]));
        ck.optim = std::move(st);
    }
    return ck;
}

}  // namespace rwa
